"""Round loop of the federated switching-gradient method.

One round: sample clients, estimate the constraint on the sampled set, run
``E`` unprojected local steps per sampled client, then either aggregate and
project directly (no compression) or pass every message through
error-feedback compression on both links.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .compression import CompressorSpec, downlink_ef_step, message_bytes, uplink_ef_step
from .numerics import VALUE_BYTES_PER_ENTRY, ordered_mean, ordered_scalar_mean, project
from .problems import ClientProblem, FederatedProblem
from .switching import SwitchMode, blended_subgrad, switch_weight
from . import rng as rngmod

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "g_hat", "g_true", "f_true", "switch_weight", "in_A", "uplink_bytes", "downlink_bytes")


class DivergenceError(FloatingPointError):
    """A local or server iterate became non-finite."""


@dataclass(frozen=True)
class RoundConfig:
    T: int
    E: int
    n: int
    m: int
    eta: float
    switch: SwitchMode
    uplink: CompressorSpec | None = None
    downlink: CompressorSpec | None = None
    compression: bool = False
    seed: int = 0
    workers: int = 1
    snapshot_cadence: int = 1

    def __post_init__(self):
        if self.T < 0 or self.E < 1:
            raise ValueError("need T >= 0 and E >= 1")
        if not 1 <= self.m <= self.n:
            raise ValueError(f"need 1 <= m <= n (m={self.m}, n={self.n})")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be finite and positive, got {self.eta}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.snapshot_cadence < 1:
            raise ValueError("snapshot_cadence must be >= 1")
        if (self.uplink is not None or self.downlink is not None) and not self.compression:
            object.__setattr__(self, "compression", True)

    @property
    def full_participation(self) -> bool:
        return self.m == self.n

    def compressors(self, d: int) -> tuple[CompressorSpec, CompressorSpec]:
        up = self.uplink or CompressorSpec.identity(d)
        down = self.downlink or CompressorSpec.identity(d)
        return up, down


@dataclass
class AlgoState:
    w: np.ndarray
    x: np.ndarray | None = None
    residuals: list[np.ndarray] | None = None
    t: int = 0

    @classmethod
    def initial(cls, w0: np.ndarray, n: int, compression: bool) -> "AlgoState":
        if not compression:
            return cls(w0.copy())
        d = w0.shape[0]
        return cls(w0.copy(), w0.copy(), [np.zeros(d) for _ in range(n)])


@dataclass
class RoundRecord:
    t: int
    sampled: tuple[int, ...]
    g_hat: float
    g_true: float
    f_true: float
    switch_weight: float
    in_A: bool
    uplink_bytes: int
    downlink_bytes: int
    w_snapshot: np.ndarray | None = None
    drift_sq_sums: tuple[float, ...] = ()
    delta_norms: tuple[float, ...] = ()
    max_grad_norm: float = 0.0

    def row(self) -> list[str]:
        return [str(self.t), repr(self.g_hat), repr(self.g_true), repr(self.f_true),
                repr(self.switch_weight), str(int(self.in_A)), str(self.uplink_bytes),
                str(self.downlink_bytes)]


@dataclass
class RunTrace:
    config: RoundConfig
    records: list[RoundRecord]
    final_state: AlgoState
    initial_w: np.ndarray
    thinned: bool = False

    @property
    def snapshots(self) -> dict[int, np.ndarray]:
        return {r.t: r.w_snapshot for r in self.records if r.w_snapshot is not None}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in self.records:
            writer.writerow(rec.row())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class LocalUpdate:
    delta: np.ndarray
    drift_sq_sum: float
    final_iterate: np.ndarray
    max_grad_norm: float

    def __iter__(self):
        # lets callers unpack ``delta, drift = local_update(...)``-style
        return iter((self.delta, self.drift_sq_sum))


def sample_clients(n: int, m: int, rng: np.random.Generator) -> tuple[int, ...]:
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n (m={m}, n={n})")
    if m == n:
        return tuple(range(n))
    return tuple(sorted(int(j) for j in rng.choice(n, size=m, replace=False)))


def constraint_query(problem: FederatedProblem, w: np.ndarray, sampled) -> float:
    if len(sampled) == 0:
        raise ValueError("constraint query needs at least one sampled client")
    return ordered_scalar_mean([problem.clients[j].constraint_value(w) for j in sorted(sampled)])


def local_update(client: ClientProblem, w_t: np.ndarray, weight: float, eta: float, E: int,
                 rng: np.random.Generator | None = None) -> LocalUpdate:
    """Run ``E`` unprojected steps from ``w_t`` along the blended subgradient."""
    if E < 1:
        raise ValueError("E must be >= 1")
    w = w_t.copy()
    delta = np.zeros_like(w_t)
    drift = 0.0
    max_norm = 0.0
    for tau in range(E):
        if tau > 0:
            gap = w_t - w
            drift += float(gap @ gap)
        grad_f = client.objective_subgrad(w, rng) if weight < 1.0 else None
        grad_g = client.constraint_subgrad(w, rng) if weight > 0.0 else None
        if grad_f is None:
            nu = grad_g
        elif grad_g is None:
            nu = grad_f
        else:
            nu = blended_subgrad(weight, grad_f, grad_g)
        max_norm = max(max_norm, float(np.linalg.norm(nu)))
        delta += nu
        w = w - eta * nu
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"client {client.client_id}: non-finite local iterate at step {tau}")
    return LocalUpdate(delta, drift, w, max_norm)


def _bytes_per_message(spec: CompressorSpec | None, d: int) -> int:
    return VALUE_BYTES_PER_ENTRY * d if spec is None else message_bytes(spec, d)


def run_round(state: AlgoState, config: RoundConfig, problem: FederatedProblem,
              pool: ThreadPoolExecutor | None = None) -> tuple[AlgoState, RoundRecord]:
    t, w_t, d = state.t, state.w, problem.dim
    sampled = sample_clients(config.n, config.m, rngmod.stream(config.seed, "sample", t))
    g_hat = constraint_query(problem, w_t, sampled)
    f_true, g_true = problem.global_f(w_t), problem.global_g(w_t)
    if not all(math.isfinite(v) for v in (g_hat, f_true, g_true)):
        raise DivergenceError(f"round {t}: non-finite objective or constraint value")
    weight = switch_weight(config.switch, g_hat)

    def work(j: int) -> LocalUpdate:
        return local_update(problem.clients[j], w_t, weight, config.eta, config.E,
                            rngmod.stream(config.seed, "local", t, j))

    updates = list(pool.map(work, sampled)) if pool is not None else [work(j) for j in sampled]

    if config.compression:
        up, down = config.compressors(d)
        residuals = list(state.residuals)
        sent = []
        for j, upd in zip(sampled, updates):
            v_j, residuals[j] = uplink_ef_step(state.residuals[j], upd.delta, up,
                                               rngmod.stream(config.seed, "compress", t, j))
            sent.append(v_j)
        x_next = project(state.x - config.eta * ordered_mean(sent), problem.domain)
        _, w_next = downlink_ef_step(x_next, w_t, down, rngmod.stream(config.seed, "downlink", t))
        new_state = AlgoState(w_next, x_next, residuals, t + 1)
        up_bytes = config.m * _bytes_per_message(up, d)
        down_bytes = config.n * _bytes_per_message(down, d)
    else:
        w_next = project(w_t - config.eta * ordered_mean([u.delta for u in updates]), problem.domain)
        new_state = AlgoState(w_next, None, None, t + 1)
        up_bytes = config.m * _bytes_per_message(None, d)
        down_bytes = config.n * _bytes_per_message(None, d)
    if not np.all(np.isfinite(new_state.w)):
        raise DivergenceError(f"round {t}: non-finite server model")

    record = RoundRecord(
        t=t,
        sampled=sampled,
        g_hat=g_hat,
        g_true=g_true,
        f_true=f_true,
        switch_weight=weight,
        in_A=config.switch.in_feasible_set(g_hat),
        uplink_bytes=up_bytes,
        downlink_bytes=down_bytes,
        w_snapshot=w_t.copy() if t % config.snapshot_cadence == 0 else None,
        drift_sq_sums=tuple(u.drift_sq_sum for u in updates),
        delta_norms=tuple(float(np.linalg.norm(u.delta)) for u in updates),
        max_grad_norm=max(u.max_grad_norm for u in updates),
    )
    return new_state, record


def initial_model(problem: FederatedProblem, w0=None) -> np.ndarray:
    w = np.zeros(problem.dim) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    return project(w, problem.domain)


RoundHook = Callable[[AlgoState, AlgoState, RoundRecord], None]


def run(config: RoundConfig, problem: FederatedProblem, w0=None, on_round: RoundHook | None = None) -> RunTrace:
    """Execute ``config.T`` rounds. Output depends only on (config, problem, w0)."""
    if config.n != problem.n:
        raise ValueError(f"config has n={config.n} but the problem has {problem.n} clients")
    start = initial_model(problem, w0)
    state = AlgoState.initial(start, config.n, config.compression)
    records = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for _ in range(config.T):
            new_state, record = run_round(state, config, problem, pool)
            if on_round is not None:
                on_round(state, new_state, record)
            records.append(record)
            state = new_state
    finally:
        if pool is not None:
            pool.shutdown()
    return RunTrace(config, records, state, start, thinned=config.snapshot_cadence > 1)


def with_overrides(config: RoundConfig, **changes) -> RoundConfig:
    return replace(config, **changes)
