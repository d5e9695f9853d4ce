"""Remote worker protocol: framed messages over a byte stream.

Cloud-agnostic stand-in for running likelihood workers on other machines.
Frames are a 4-byte big-endian unsigned length followed by that many
bytes of one serialized message (the queue wire format). Workers answer
each request frame with one response frame; errors are control messages
with payload ``ERR:<code>:<detail>``. A malformed frame draws an error
frame and closes the connection.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
import time
from typing import Callable

from .errors import ConfigurationError, WireFormatError
from .fabric import Message, MessageKind, decode_message, encode_message
from .payloads import LikelihoodResponse, pack_error, pack_response
from .plane import InvocationRecord, TaskRunner, _PlaneBase, parse_task
from .store import DirectoryObjectStore

log = logging.getLogger(__name__)

_HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 16 * 1024 * 1024


def parse_addr(addr: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(addr, tuple):
        return addr
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigurationError(f"listen address must be host:port, got {addr!r}")
    return host, int(port)


def write_frame(wfile, data: bytes) -> None:
    wfile.write(_HEADER.pack(len(data)) + data)
    wfile.flush()


def read_frame(rfile) -> bytes | None:
    """Read one frame; returns None on clean EOF, raises on truncation."""
    head = rfile.read(_HEADER.size)
    if head == b"":
        return None
    if len(head) < _HEADER.size:
        raise WireFormatError("truncated frame header")
    (length,) = _HEADER.unpack(head)
    if length > MAX_FRAME_BYTES:
        raise WireFormatError(f"frame of {length} bytes exceeds limit")
    body = rfile.read(length)
    if len(body) < length:
        raise WireFormatError(f"truncated frame body: {len(body)} of {length} bytes")
    return body


def _error_message(ref: Message | None, code: str, detail: str) -> Message:
    return Message(
        msg_id=ref.msg_id if ref is not None else "error",
        kind=MessageKind.CONTROL,
        walker_id=ref.walker_id if ref is not None else 0,
        iteration=ref.iteration if ref is not None else 0,
        payload=pack_error(code, detail))


class _WorkerHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        while True:
            try:
                frame = read_frame(self.rfile)
            except WireFormatError as exc:
                self._try_send(_error_message(None, "malformed-frame", str(exc)))
                return
            if frame is None:
                return
            try:
                msg = decode_message(frame)
            except WireFormatError as exc:
                self._try_send(_error_message(None, "malformed-frame", str(exc)))
                return
            self._try_send(self.server.process(msg))

    def _try_send(self, msg: Message) -> None:
        try:
            write_frame(self.wfile, encode_message(msg).encode("utf-8"))
        except OSError:
            pass


class WorkerServer(socketserver.ThreadingTCPServer):
    """Serves likelihood requests; connections are handled concurrently,
    each connection serially."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: str | tuple[str, int], store, *,
                 likelihood_fn: Callable | None = None):
        super().__init__(parse_addr(addr), _WorkerHandler)
        self._runner = TaskRunner(store, likelihood_fn)

    def process(self, msg: Message) -> Message:
        start = time.monotonic()
        try:
            task = parse_task(msg)
            if task.task_kind == "stub":
                time.sleep(task.stub_duration_s)
                value, cold = 0.0, False
            else:
                value, cold = self._runner.run(task)
        except Exception as exc:
            from .errors import NotFoundError
            code = "dataset-not-found" if isinstance(exc, NotFoundError) else "worker-crash"
            if code == "worker-crash":
                log.exception("remote worker failed on %s", msg.msg_id)
            return _error_message(msg, code, str(exc))
        end = time.monotonic()
        payload = pack_response(LikelihoodResponse(
            walker_id=msg.walker_id, iteration=msg.iteration,
            log_likelihood=value, cold=cold,
            compute_start_ts=start, compute_end_ts=end))
        return Message(msg_id=msg.msg_id, kind=MessageKind.LIKELIHOOD_RESPONSE,
                       walker_id=msg.walker_id, iteration=msg.iteration,
                       payload=payload)


def serve(listen_addr: str | tuple[str, int], dataset_root, *,
          likelihood_fn: Callable | None = None) -> None:
    """Run a worker server until interrupted (the CLI entry point)."""
    store = DirectoryObjectStore(dataset_root)
    with WorkerServer(listen_addr, store, likelihood_fn=likelihood_fn) as server:
        log.info("worker serving on %s:%d", *server.server_address)
        server.serve_forever()


class RemoteWorkerClient(_PlaneBase):
    """Compute-plane backend that forwards requests to a worker server.

    Requests are pipelined over one connection; a reader thread pushes the
    returned messages onto the output queue as they arrive.
    """

    backend = "remote"

    def __init__(self, input_q, output_q, model, addr: str | tuple[str, int]):
        super().__init__()
        model.validate()
        self.model = model
        self._output_q = output_q
        self._clock = output_q.clock
        self._sock = socket.create_connection(parse_addr(addr))
        self._wfile = self._sock.makefile("wb")
        self._rfile = self._sock.makefile("rb")
        self._send_lock = threading.Lock()
        self._dispatch_ts: dict[str, float] = {}
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="qmc-remote-reader")
        self._reader.start()
        input_q.register_trigger(self._send)

    def _send(self, msg: Message) -> None:
        with self._send_lock:
            self._dispatch_ts[msg.msg_id] = msg.enqueue_ts
            write_frame(self._wfile, encode_message(msg).encode("utf-8"))

    def _read_loop(self) -> None:
        while True:
            try:
                frame = read_frame(self._rfile)
            except (WireFormatError, OSError, ValueError):
                return
            if frame is None:
                return
            try:
                msg = decode_message(frame)
            except WireFormatError:
                log.warning("dropping undecodable response frame")
                continue
            if msg.kind is MessageKind.LIKELIHOOD_RESPONSE:
                from .payloads import unpack_response
                resp = unpack_response(msg.payload)
                dispatch = self._dispatch_ts.pop(msg.msg_id, 0.0)
                self._record(InvocationRecord(
                    msg_id=msg.msg_id, worker_id="remote",
                    dispatch_ts=dispatch, start_ts=resp.compute_start_ts,
                    end_ts=resp.compute_end_ts, cold=resp.cold))
            try:
                self._output_q.push(msg)
            except Exception:
                return

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=5)
