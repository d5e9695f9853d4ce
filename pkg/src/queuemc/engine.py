"""MCMC coordinator.

Owns every walker's state, proposes symmetric Gaussian random-walk moves,
dispatches one likelihood request per walker per iteration through the
queue fabric, applies Metropolis-Hastings acceptance to the returned
values, and optionally permutes walker states between iterations.

Iterations are lockstep: all walkers' responses are collected (matched by
msg_id, so arrival order is irrelevant) before any acceptance decision,
which keeps the total likelihood budget at exactly n_walkers *
n_iterations and makes the sampler bit-reproducible for a fixed seed on
any backend computing identical likelihood values.

Walker log-posteriors start at -inf, so the first proposal is always
accepted and doubles as the initialization evaluation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (DuplicateResponseError, MissingResponseError,
                     NotFoundError, PendingRequestError, WorkerCrashError)
from .fabric import Message, MessageKind, Queue
from .payloads import (LikelihoodRequest, pack_request, parse_error,
                       unpack_response)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WalkerState:
    """One walker: position, cached log-posterior, progress, RNG stream id."""

    walker_id: int
    position: np.ndarray
    log_post: float
    iteration: int
    rng_stream: int
    pending_msg: str | None = None


@dataclass(frozen=True)
class ChainConfig:
    n_walkers: int
    n_iterations: int
    proposal_scale: float | Sequence[float] = 1.0
    exchange_period: int = 0  # 0 disables exchange
    seed: int = 0

    def validate(self) -> None:
        if self.n_walkers < 1 or self.n_iterations < 1:
            raise ValueError("n_walkers and n_iterations must be at least 1")
        if np.any(np.asarray(self.proposal_scale, dtype=np.float64) <= 0):
            raise ValueError("proposal_scale entries must be positive")
        if self.exchange_period < 0:
            raise ValueError("exchange_period must be >= 0")


@dataclass(frozen=True)
class TimelineRecord:
    walker_id: int
    iteration: int
    dispatch_ts: float
    complete_ts: float
    first_output_flag: bool
    backend: str


@dataclass
class ChainOutput:
    """Everything a run produced: samples, acceptance, and the timeline."""

    samples: np.ndarray          # (n_walkers, n_iterations, dim)
    log_posts: np.ndarray        # (n_walkers, n_iterations)
    accepted: np.ndarray         # (n_walkers, n_iterations) bool
    timeline: list[TimelineRecord]
    exchange_log: list[tuple[int, np.ndarray]] = field(default_factory=list)
    backend: str = "?"
    complete: bool = True

    @property
    def accept_counts(self) -> np.ndarray:
        return self.accepted.sum(axis=1)

    @property
    def n_walkers(self) -> int:
        return self.samples.shape[0]

    @property
    def n_iterations(self) -> int:
        return self.samples.shape[1]


def mh_step(state: WalkerState, proposal: np.ndarray, proposed_log_post: float,
            u: float) -> tuple[WalkerState, bool]:
    """One Metropolis-Hastings decision for a symmetric proposal.

    Accepts iff ln(u) < proposed_log_post - state.log_post; the iteration
    counter advances either way.
    """
    log_u = math.log(u) if u > 0.0 else -math.inf
    accepted = log_u < (proposed_log_post - state.log_post)
    if accepted:
        new = replace(state, position=np.array(proposal, dtype=np.float64),
                      log_post=float(proposed_log_post),
                      iteration=state.iteration + 1)
    else:
        new = replace(state, iteration=state.iteration + 1)
    return new, accepted


def propose(state: WalkerState, proposal_scale: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
    """Symmetric Gaussian random-walk proposal from the walker's own stream."""
    return state.position + rng.normal(0.0, proposal_scale)


def exchange_step(states: Sequence[WalkerState],
                  rng: np.random.Generator) -> tuple[list[WalkerState], np.ndarray]:
    """Swap (position, log_post) between uniformly random walker pairs.

    A pure permutation of identical-target walkers leaves the joint
    posterior invariant, so every sampled pair swaps. Returns the new
    states and the applied permutation p, where slot i now holds the state
    formerly at p[i]. Walkers with an in-flight request cannot exchange.
    """
    for st in states:
        if st.pending_msg is not None:
            raise PendingRequestError(
                f"walker {st.walker_id} has request {st.pending_msg} in flight")
    n = len(states)
    order = rng.permutation(n)
    new_states = list(states)
    perm = np.arange(n)
    for i in range(0, n - 1, 2):
        a, b = int(order[i]), int(order[i + 1])
        sa, sb = new_states[a], new_states[b]
        new_states[a] = replace(sa, position=sb.position, log_post=sb.log_post)
        new_states[b] = replace(sb, position=sa.position, log_post=sa.log_post)
        perm[a], perm[b] = perm[b], perm[a]
    return new_states, perm


def run_chains(config: ChainConfig, plane, input_q: Queue, output_q: Queue, *,
               init_positions: np.ndarray,
               dataset_key: str = "",
               data_param_count: int | None = None,
               log_prior: Callable[[np.ndarray], float] | None = None,
               response_timeout_s: float | None = None) -> ChainOutput:
    """Run the full lockstep sampler against an attached compute plane.

    Parameters
    ----------
    init_positions : (n_walkers, dim) starting points (never emitted as
        samples; the first accepted proposal is the first sample).
    dataset_key : object-store key of the cluster container, or a
        ``stub:<seconds>`` key for timing runs.
    data_param_count : how many leading position coordinates are sent to
        the workers (hierarchical hyperparameters stay coordinator-side);
        defaults to the full position.
    log_prior : coordinator-side log prior over the full position vector
        (default flat).
    response_timeout_s : per-iteration collection timeout; default is ten
        times the backend's modeled likelihood duration.
    """
    config.validate()
    w_count, n_iter = config.n_walkers, config.n_iterations
    init = np.asarray(init_positions, dtype=np.float64)
    if init.ndim == 1:
        init = init[:, None]
    if init.shape[0] != w_count:
        raise ValueError(f"init_positions rows ({init.shape[0]}) != n_walkers ({w_count})")
    dim = init.shape[1]
    scale = np.broadcast_to(
        np.asarray(config.proposal_scale, dtype=np.float64), (dim,)).copy()
    n_send = dim if data_param_count is None else int(data_param_count)
    if not 0 < n_send <= dim:
        raise ValueError("data_param_count must be in [1, dim]")
    prior = log_prior if log_prior is not None else (lambda pos: 0.0)
    timeout = (response_timeout_s if response_timeout_s is not None
               else 10.0 * plane.model.likelihood_duration_s)

    root = np.random.SeedSequence(config.seed)
    streams = root.spawn(w_count + 1)
    rngs = [np.random.default_rng(s) for s in streams[:w_count]]
    exchange_rng = np.random.default_rng(streams[w_count])

    states = [WalkerState(walker_id=w, position=init[w].copy(), log_post=-math.inf,
                          iteration=0, rng_stream=w) for w in range(w_count)]
    samples = np.empty((w_count, n_iter, dim))
    log_posts = np.empty((w_count, n_iter))
    accepted = np.zeros((w_count, n_iter), dtype=bool)
    timeline: list[TimelineRecord] = []
    exchange_log: list[tuple[int, np.ndarray]] = []
    clock = output_q.clock

    def partial(upto: int) -> ChainOutput:
        return ChainOutput(samples=samples[:, :upto].copy(),
                           log_posts=log_posts[:, :upto].copy(),
                           accepted=accepted[:, :upto].copy(),
                           timeline=list(timeline), exchange_log=list(exchange_log),
                           backend=plane.backend, complete=False)

    for it in range(n_iter):
        proposals = [propose(states[w], scale, rngs[w]) for w in range(w_count)]
        expected: dict[str, int] = {}
        dispatch_ts: dict[str, float] = {}
        for w in range(w_count):
            msg_id = f"it{it:06d}-w{w:05d}"
            payload = pack_request(LikelihoodRequest(
                walker_id=w, iteration=it, params=proposals[w][:n_send],
                dataset_key=dataset_key))
            ack = input_q.push(Message(
                msg_id=msg_id, kind=MessageKind.LIKELIHOOD_REQUEST,
                walker_id=w, iteration=it, payload=payload,
                reply_to=output_q.name))
            expected[msg_id] = w
            dispatch_ts[msg_id] = ack.enqueue_ts
            states[w] = replace(states[w], pending_msg=msg_id)

        arrived: dict[str, Message] = {}
        deadline = clock.now() + timeout
        while len(arrived) < w_count:
            remaining = deadline - clock.now()
            msg = output_q.pop(timeout=max(0.0, remaining)) if remaining > 0 else None
            if msg is None:
                missing = set(expected) - set(arrived)
                raise MissingResponseError(missing, partial_output=partial(it))
            if msg.kind is MessageKind.CONTROL:
                err = parse_error(msg.payload)
                code, detail = err if err else ("worker-crash", "unexpected control message")
                if code == "dataset-not-found":
                    raise NotFoundError(detail)
                raise WorkerCrashError(f"{code}: {detail}")
            if msg.msg_id in arrived:
                raise DuplicateResponseError(f"duplicate response {msg.msg_id}")
            if msg.msg_id not in expected:
                raise DuplicateResponseError(f"response {msg.msg_id} matches no request")
            arrived[msg.msg_id] = msg

        iter_records: list[TimelineRecord] = []
        for w in range(w_count):
            msg_id = f"it{it:06d}-w{w:05d}"
            msg = arrived[msg_id]
            resp = unpack_response(msg.payload)
            proposed_lp = resp.log_likelihood + float(prior(proposals[w]))
            u = float(rngs[w].random())
            states[w], acc = mh_step(replace(states[w], pending_msg=None),
                                     proposals[w], proposed_lp, u)
            accepted[w, it] = acc
            samples[w, it] = states[w].position
            log_posts[w, it] = states[w].log_post
            iter_records.append(TimelineRecord(
                walker_id=w, iteration=it, dispatch_ts=dispatch_ts[msg_id],
                complete_ts=msg.enqueue_ts, first_output_flag=False,
                backend=plane.backend))
        first = min(range(w_count), key=lambda i: iter_records[i].complete_ts)
        iter_records[first] = replace(iter_records[first], first_output_flag=True)
        timeline.extend(iter_records)

        if config.exchange_period and (it + 1) % config.exchange_period == 0:
            states, perm = exchange_step(states, exchange_rng)
            exchange_log.append((it, perm))

    return ChainOutput(samples=samples, log_posts=log_posts, accepted=accepted,
                       timeline=timeline, exchange_log=exchange_log,
                       backend=plane.backend)


def write_chain_csv(output: ChainOutput, path) -> None:
    """Chain CSV: one row per (walker, iteration), shortest-roundtrip floats."""
    dim = output.samples.shape[2]
    header = "walker,iteration,accepted,log_post," + ",".join(
        f"param_{d}" for d in range(dim))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for w in range(output.n_walkers):
            for it in range(output.n_iterations):
                cells = [str(w), str(it), str(int(output.accepted[w, it])),
                         repr(float(output.log_posts[w, it]))]
                cells.extend(repr(float(v)) for v in output.samples[w, it])
                fh.write(",".join(cells) + "\n")


def write_timeline_csv(output: ChainOutput, path) -> None:
    """Timeline CSV: dispatch and completion stamps per request."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("walker,iteration,dispatch_ts,complete_ts\n")
        for rec in output.timeline:
            fh.write(f"{rec.walker_id},{rec.iteration},"
                     f"{rec.dispatch_ts!r},{rec.complete_ts!r}\n")
