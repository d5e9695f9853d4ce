import socket
import struct
import threading

import numpy as np
import pytest

from queuemc.clocks import WallClock
from queuemc.datasets import make_synthetic, write_container
from queuemc.fabric import (Message, MessageKind, QueueFabric, decode_message,
                            encode_message)
from queuemc.kernel import evaluate
from queuemc.payloads import (LikelihoodRequest, pack_request, parse_error,
                              unpack_response)
from queuemc.plane import BackendModel, attach_backend
from queuemc.remote import WorkerServer
from queuemc.store import DirectoryObjectStore

HEADER = struct.Struct(">I")


@pytest.fixture
def worker_env(tmp_path):
    """A running worker server over a disk store holding one 2-cluster bundle."""
    datasets, truths = make_synthetic(2, grid_size=32, seed=17, noise_level=0.05)
    store = DirectoryObjectStore(tmp_path / "objects")
    store.put("bundle", write_container(datasets))
    server = WorkerServer(("127.0.0.1", 0), store)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server.server_address, datasets, truths
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def request_message(msg_id, params, key):
    payload = pack_request(LikelihoodRequest(
        walker_id=0, iteration=0, params=np.asarray(params, dtype=np.float64),
        dataset_key=key))
    return Message(msg_id=msg_id, kind=MessageKind.LIKELIHOOD_REQUEST,
                   walker_id=0, iteration=0, payload=payload)


def send_raw(addr, data: bytes, framed=True) -> bytes:
    with socket.create_connection(addr, timeout=5) as sock:
        if framed:
            sock.sendall(HEADER.pack(len(data)) + data)
        else:
            sock.sendall(data)
        sock.shutdown(socket.SHUT_WR)
        chunks = []
        while chunk := sock.recv(65536):
            chunks.append(chunk)
    return b"".join(chunks)


def parse_frames(raw: bytes):
    frames = []
    off = 0
    while off < len(raw):
        (length,) = HEADER.unpack_from(raw, off)
        off += 4
        frames.append(raw[off:off + length])
        off += length
    return frames


def test_response_echoes_request_id(worker_env):
    addr, datasets, truths = worker_env
    msg = request_message("req-1", truths.ravel(), "bundle")
    raw = send_raw(addr, encode_message(msg).encode())
    (frame,) = parse_frames(raw)
    resp = decode_message(frame)
    assert resp.msg_id == "req-1"
    assert resp.kind is MessageKind.LIKELIHOOD_RESPONSE


def test_truncated_frame_gets_error_and_close(worker_env):
    addr, _, _ = worker_env
    raw = send_raw(addr, HEADER.pack(100) + b"abc", framed=False)
    (frame,) = parse_frames(raw)
    resp = decode_message(frame)
    assert resp.kind is MessageKind.CONTROL
    code, _ = parse_error(resp.payload)
    assert code == "malformed-frame"


def test_garbage_frame_body_rejected(worker_env):
    addr, _, _ = worker_env
    raw = send_raw(addr, b"this is not a wire message")
    (frame,) = parse_frames(raw)
    code, _ = parse_error(decode_message(frame).payload)
    assert code == "malformed-frame"


def test_missing_dataset_error_frame(worker_env):
    addr, _, truths = worker_env
    msg = request_message("req-2", truths.ravel(), "no-such-bundle")
    raw = send_raw(addr, encode_message(msg).encode())
    (frame,) = parse_frames(raw)
    resp = decode_message(frame)
    assert resp.kind is MessageKind.CONTROL
    code, _ = parse_error(resp.payload)
    assert code == "dataset-not-found"
    assert resp.msg_id == "req-2"


def test_remote_matches_local_and_in_process(worker_env, local_setup):
    addr, datasets, truths = worker_env
    rng = np.random.default_rng(5)
    params = truths + 0.02 * rng.standard_normal(truths.shape)

    expected = evaluate(params, datasets)

    # local pool route
    from queuemc.store import MemoryObjectStore
    mem = MemoryObjectStore()
    mem.put("bundle", write_container(datasets))
    fabric, input_q, output_q, plane = local_setup(store=mem)
    input_q.push(request_message("m-local", params.ravel(), "bundle"))
    local_val = unpack_response(output_q.pop(timeout=30.0).payload).log_likelihood
    plane.close()

    # remote route
    fabric2 = QueueFabric(WallClock())
    rin, rout = fabric2.create_queue("in"), fabric2.create_queue("out")
    client = attach_backend(rin, rout, "remote", BackendModel(), remote_addr=addr)
    rin.push(request_message("m-remote", params.ravel(), "bundle"))
    remote_val = unpack_response(rout.pop(timeout=30.0).payload).log_likelihood
    client.close()

    assert local_val == pytest.approx(expected, rel=1e-12)
    assert remote_val == pytest.approx(expected, rel=1e-12)


def test_remote_pipelines_multiple_requests(worker_env):
    addr, datasets, truths = worker_env
    fabric = QueueFabric(WallClock())
    rin, rout = fabric.create_queue("in"), fabric.create_queue("out")
    client = attach_backend(rin, rout, "remote", BackendModel(), remote_addr=addr)
    for i in range(8):
        rin.push(request_message(f"p{i}", truths.ravel(), "bundle"))
    got = {rout.pop(timeout=30.0).msg_id for _ in range(8)}
    assert got == {f"p{i}" for i in range(8)}
    assert len(client.records) == 8
    client.close()


def test_remote_stub_tasks(worker_env):
    addr, _, _ = worker_env
    fabric = QueueFabric(WallClock())
    rin, rout = fabric.create_queue("in"), fabric.create_queue("out")
    client = attach_backend(rin, rout, "remote", BackendModel(), remote_addr=addr)
    from queuemc.plane import make_stub_key
    payload = pack_request(LikelihoodRequest(
        walker_id=0, iteration=0, params=np.empty(0),
        dataset_key=make_stub_key(0.01)))
    rin.push(Message(msg_id="s0", kind=MessageKind.LIKELIHOOD_REQUEST,
                     walker_id=0, iteration=0, payload=payload))
    resp = rout.pop(timeout=10.0)
    assert unpack_response(resp.payload).log_likelihood == 0.0
    client.close()
