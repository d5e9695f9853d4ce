"""Compute plane: executes likelihood invocations delivered by queue triggers.

Three interchangeable backends sit behind the same queue contract (every
request message on the input queue yields exactly one response message on
the output queue):

* ``sim``    a deterministic discrete-event model of an elastic
             function-as-a-service platform running on a virtual clock;
             task math still runs for real, but all timestamps are modeled.
* ``local``  a fixed-size thread pool on the wall clock, used for
             correctness tests and small fits.
* ``remote`` a socket client that forwards requests to worker processes
             speaking the framed wire protocol (see ``queuemc.remote``).

The simulated platform provisions warm instances along a doubling ramp:
instance n becomes available ``scale_doubling_interval_s * log2(n / c0)``
seconds after the first request arrives (the first ``c0`` are immediate),
so the time to reach N instances grows logarithmically in N. Each
invocation occupies one instance for a cold-start penalty on first use,
plus a warm invocation latency, plus the task duration.
"""

from __future__ import annotations

import heapq
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernel
from .clocks import VirtualClock
from .datasets import read_container
from .errors import ConfigurationError, NotFoundError
from .fabric import Message, MessageKind, Queue
from .payloads import (LikelihoodRequest, LikelihoodResponse, pack_error,
                       pack_response, unpack_request)

log = logging.getLogger(__name__)

STUB_KEY_PREFIX = "stub:"


@dataclass(frozen=True)
class BackendModel:
    """Latency parameters of the simulated elastic platform."""

    cold_start_s: float = 2.0
    warm_invoke_s: float = 0.05
    initial_capacity: int = 3
    scale_doubling_interval_s: float = 7.0
    max_concurrency: int | None = None
    likelihood_duration_s: float = 100.0
    jitter_std_s: float = 0.0

    def validate(self) -> None:
        if self.cold_start_s < 0 or self.warm_invoke_s < 0:
            raise ConfigurationError("latencies must be non-negative")
        if self.initial_capacity < 1:
            raise ConfigurationError("initial_capacity must be at least 1")
        if self.scale_doubling_interval_s <= 0:
            raise ConfigurationError("scale_doubling_interval_s must be positive")
        if self.max_concurrency is not None and self.max_concurrency < 1:
            raise ConfigurationError("max_concurrency must be at least 1 or None")
        if self.likelihood_duration_s <= 0:
            raise ConfigurationError("likelihood_duration_s must be positive")
        if self.jitter_std_s < 0:
            raise ConfigurationError("jitter_std_s must be non-negative")

    def ramp_delay(self, n: int) -> float:
        """Seconds after the ramp origin at which instance ``n`` (1-based)
        becomes available."""
        if n <= self.initial_capacity:
            return 0.0
        return self.scale_doubling_interval_s * math.log2(n / self.initial_capacity)


@dataclass(frozen=True)
class InvocationRecord:
    msg_id: str
    worker_id: str
    dispatch_ts: float
    start_ts: float
    end_ts: float
    cold: bool


@dataclass(frozen=True)
class WorkerTask:
    request: LikelihoodRequest
    dataset_key: str
    task_kind: str  # "kernel" or "stub"
    stub_duration_s: float = 0.0


def make_stub_key(duration_s: float) -> str:
    """Dataset-key spelling that marks a request as a timed stub task."""
    return f"{STUB_KEY_PREFIX}{duration_s!r}"


def parse_task(msg: Message) -> WorkerTask:
    """Decode a request message into an executable task.

    Keys of the form ``stub:<seconds>`` denote stub tasks that occupy a
    worker for the given duration and return a log-likelihood of 0;
    anything else is a kernel task whose key must resolve in the object
    store.
    """
    req = unpack_request(msg.payload)
    if req.dataset_key.startswith(STUB_KEY_PREFIX):
        duration = float(req.dataset_key[len(STUB_KEY_PREFIX):])
        return WorkerTask(req, req.dataset_key, "stub", duration)
    return WorkerTask(req, req.dataset_key, "kernel")


class TaskRunner:
    """Runs tasks against the object store, caching parsed datasets.

    The cache models container reuse on a warm instance: the first kernel
    task touching a key pays the parse (reported as a cold invocation),
    later ones reuse the in-memory datasets.
    """

    def __init__(self, store=None,
                 likelihood_fn: Callable[[np.ndarray, list | None], float] | None = None):
        self._store = store
        self._fn = likelihood_fn
        self._cache: dict[str, list] = {}
        self._lock = threading.Lock()

    def run(self, task: WorkerTask) -> tuple[float, bool]:
        """Return (log_likelihood, cold)."""
        if task.task_kind == "stub":
            return 0.0, False
        datasets = None
        cold = False
        if task.dataset_key:
            datasets, cold = self._load(task.dataset_key)
        if self._fn is not None:
            return float(self._fn(task.request.params, datasets)), cold
        if datasets is None:
            raise ConfigurationError(
                "kernel task carries no dataset key and no likelihood override")
        params = task.request.params
        if params.size % len(datasets) != 0:
            raise ValueError(
                f"{params.size} parameters do not split over {len(datasets)} clusters")
        thetas = params.reshape(len(datasets), -1)
        return kernel.evaluate(thetas, datasets), cold

    def _load(self, key: str) -> tuple[list, bool]:
        with self._lock:
            if key in self._cache:
                return self._cache[key], False
        if self._store is None:
            raise NotFoundError(f"no object store attached; cannot resolve {key!r}")
        datasets = read_container(self._store.get(key))
        with self._lock:
            self._cache.setdefault(key, datasets)
            return self._cache[key], True


class SimScheduler:
    """Assigns invocations to simulated instances.

    Greedy earliest-completion choice between reusing the
    earliest-available existing instance and provisioning the next one on
    the doubling ramp (ties prefer reuse, which skips the cold start).
    Optional Gaussian start jitter, truncated at zero, is drawn per
    invocation from a seeded stream.
    """

    def __init__(self, model: BackendModel, seed: int = 0):
        model.validate()
        self._model = model
        self._rng = np.random.default_rng(seed)
        self._free: list[tuple[float, int]] = []  # (next_free_ts, instance number)
        self._provisioned = 0
        self._origin: float | None = None

    def assign(self, msg_id: str, dispatch_ts: float, duration: float) -> InvocationRecord:
        m = self._model
        if self._origin is None:
            self._origin = dispatch_ts
        jitter = 0.0
        if m.jitter_std_s > 0:
            jitter = max(0.0, m.jitter_std_s * float(self._rng.standard_normal()))

        reuse_ready = math.inf
        if self._free:
            free_at, _ = self._free[0]
            reuse_ready = max(dispatch_ts, free_at) + m.warm_invoke_s
        fresh_ready = math.inf
        if m.max_concurrency is None or self._provisioned < m.max_concurrency:
            n = self._provisioned + 1
            avail = max(dispatch_ts, self._origin + m.ramp_delay(n))
            fresh_ready = avail + m.cold_start_s + m.warm_invoke_s
        if not math.isfinite(reuse_ready) and not math.isfinite(fresh_ready):
            raise ConfigurationError("no instance available and concurrency limit reached")

        if reuse_ready <= fresh_ready:
            _, wid = heapq.heappop(self._free)
            ready, cold = reuse_ready, False
        else:
            self._provisioned += 1
            wid = self._provisioned
            ready, cold = fresh_ready, True

        start = ready + jitter
        end = start + duration
        heapq.heappush(self._free, (end, wid))
        return InvocationRecord(msg_id=msg_id, worker_id=f"sim-{wid:05d}",
                                dispatch_ts=dispatch_ts, start_ts=start,
                                end_ts=end, cold=cold)


def simulate(requests: Iterable[tuple[str, float, float]], model: BackendModel,
             seed: int = 0) -> list[InvocationRecord]:
    """Schedule a set of pending requests on a fresh simulated platform.

    ``requests`` yields ``(msg_id, dispatch_ts, duration_s)`` triples;
    they are processed in dispatch order (stable for ties). Deterministic
    given the model, the request set, and the jitter seed.
    """
    sched = SimScheduler(model, seed=seed)
    ordered = sorted(enumerate(requests), key=lambda kv: (kv[1][1], kv[0]))
    return [sched.assign(msg_id, ts, dur) for _, (msg_id, ts, dur) in ordered]


class _PlaneBase:
    backend = "?"

    def __init__(self):
        self._records: list[InvocationRecord] = []
        self._records_lock = threading.Lock()

    @property
    def records(self) -> list[InvocationRecord]:
        with self._records_lock:
            return list(self._records)

    def _record(self, rec: InvocationRecord) -> None:
        with self._records_lock:
            self._records.append(rec)

    def close(self) -> None:
        pass


class SimulatedPlane(_PlaneBase):
    """Deterministic virtual-time backend.

    Stub results are produced instantly in wall time; kernel tasks run
    their math for real, but all timestamps (including the response's
    arrival on the output queue) come from the virtual clock plus the
    modeled latency.
    """

    backend = "sim"

    def __init__(self, input_q: Queue, output_q: Queue, model: BackendModel, *,
                 store=None, likelihood_fn=None, seed: int = 0):
        super().__init__()
        model.validate()
        clock = input_q.clock
        if not isinstance(clock, VirtualClock):
            raise ConfigurationError("simulated backend requires a VirtualClock fabric")
        self.model = model
        self._clock = clock
        self._output_q = output_q
        self._runner = TaskRunner(store, likelihood_fn)
        self._sched = SimScheduler(model, seed=seed)
        input_q.register_trigger(self._on_message)

    def _on_message(self, msg: Message) -> None:
        task = parse_task(msg)
        duration = (task.stub_duration_s if task.task_kind == "stub"
                    else self.model.likelihood_duration_s)
        rec = self._sched.assign(msg.msg_id, msg.enqueue_ts, duration)
        self._record(rec)
        try:
            value, _ = self._runner.run(task)
            payload = pack_response(LikelihoodResponse(
                walker_id=msg.walker_id, iteration=msg.iteration,
                log_likelihood=value, cold=rec.cold,
                compute_start_ts=rec.start_ts, compute_end_ts=rec.end_ts))
            kind = MessageKind.LIKELIHOOD_RESPONSE
        except NotFoundError as exc:
            payload = pack_error("dataset-not-found", str(exc))
            kind = MessageKind.CONTROL
        except Exception as exc:  # surfaced, never retried
            log.exception("simulated worker failed on %s", msg.msg_id)
            payload = pack_error("worker-crash", repr(exc))
            kind = MessageKind.CONTROL
        resp = Message(msg_id=msg.msg_id, kind=kind, walker_id=msg.walker_id,
                       iteration=msg.iteration, payload=payload)
        self._clock.schedule(rec.end_ts, lambda m=resp: self._output_q.push(m))


class LocalPoolPlane(_PlaneBase):
    """Fixed-size thread pool on the wall clock."""

    backend = "local"

    def __init__(self, input_q: Queue, output_q: Queue, model: BackendModel, *,
                 store=None, likelihood_fn=None, pool_size: int = 4):
        super().__init__()
        model.validate()
        if pool_size < 1:
            raise ConfigurationError("pool_size must be at least 1")
        self.model = model
        self._clock = output_q.clock
        self._output_q = output_q
        self._runner = TaskRunner(store, likelihood_fn)
        self._pool = ThreadPoolExecutor(max_workers=pool_size,
                                        thread_name_prefix="qmc-worker")
        input_q.register_trigger(self._dispatch)

    def _dispatch(self, msg: Message) -> None:
        self._pool.submit(self._work, msg)

    def _work(self, msg: Message) -> None:
        start = self._clock.now()
        cold = False
        try:
            task = parse_task(msg)
            if task.task_kind == "stub":
                time.sleep(task.stub_duration_s)
                value = 0.0
            else:
                value, cold = self._runner.run(task)
            end = self._clock.now()
            payload = pack_response(LikelihoodResponse(
                walker_id=msg.walker_id, iteration=msg.iteration,
                log_likelihood=value, cold=cold,
                compute_start_ts=start, compute_end_ts=end))
            kind = MessageKind.LIKELIHOOD_RESPONSE
        except NotFoundError as exc:
            end = self._clock.now()
            payload = pack_error("dataset-not-found", str(exc))
            kind = MessageKind.CONTROL
        except Exception as exc:
            log.exception("worker failed on %s", msg.msg_id)
            end = self._clock.now()
            payload = pack_error("worker-crash", repr(exc))
            kind = MessageKind.CONTROL
        self._record(InvocationRecord(
            msg_id=msg.msg_id, worker_id=threading.current_thread().name,
            dispatch_ts=msg.enqueue_ts, start_ts=start, end_ts=end, cold=cold))
        self._output_q.push(Message(
            msg_id=msg.msg_id, kind=kind, walker_id=msg.walker_id,
            iteration=msg.iteration, payload=payload))

    def close(self) -> None:
        self._pool.shutdown(wait=True)


def attach_backend(input_q: Queue, output_q: Queue, backend: str,
                   model: BackendModel, *, store=None, likelihood_fn=None,
                   pool_size: int = 4, remote_addr=None, seed: int = 0):
    """Wire a compute backend to a queue pair.

    After this call every message delivered on ``input_q`` produces
    exactly one message on ``output_q``: a likelihood response carrying
    the request's msg_id, or a control message surfacing a worker error.
    """
    model.validate()
    if backend == "sim":
        return SimulatedPlane(input_q, output_q, model, store=store,
                              likelihood_fn=likelihood_fn, seed=seed)
    if backend == "local":
        return LocalPoolPlane(input_q, output_q, model, store=store,
                              likelihood_fn=likelihood_fn, pool_size=pool_size)
    if backend == "remote":
        if remote_addr is None:
            raise ConfigurationError("remote backend requires remote_addr")
        from .remote import RemoteWorkerClient
        return RemoteWorkerClient(input_q, output_q, model, remote_addr)
    raise ConfigurationError(f"unknown backend {backend!r}")
