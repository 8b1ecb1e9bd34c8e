"""Parameter calculators, averaged iterates and post-run diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import RunTrace
from .numerics import Domain, diameter, ordered_mean, ordered_sum
from .problems import FederatedProblem
from .switching import sigma_beta


class AnalysisError(ValueError):
    pass


# ----------------------------------------------------------------------------
# step size / threshold calculators

@dataclass(frozen=True)
class TheoremInputs:
    D: float
    G: float
    E: int
    T: int
    n: int = 1
    m: int = 1
    q: float = 1.0
    q0: float = 1.0
    sigma: float = 0.0
    delta: float | None = None
    compressed: bool | None = None
    regime_override: str | None = None

    def __post_init__(self):
        if not (self.D > 0 and self.G > 0):
            raise AnalysisError("D and G must be positive")
        if self.E < 1 or self.T < 1:
            raise AnalysisError("E and T must be >= 1")
        if not 1 <= self.m <= self.n:
            raise AnalysisError(f"need 1 <= m <= n (m={self.m}, n={self.n})")
        for name in ("q", "q0"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise AnalysisError(f"{name} must lie in (0, 1], got {value}")
        if self.sigma < 0:
            raise AnalysisError("sigma must be >= 0")
        if self.regime_override not in (None, "full", "partial"):
            raise AnalysisError(f"regime must be 'full' or 'partial', got {self.regime_override!r}")
        if self.regime_override == "full" and self.m != self.n:
            raise AnalysisError("the full-participation formulas need m == n")

    @property
    def regime(self) -> str:
        # the partial formulas also apply (conservatively) when m == n
        if self.regime_override is not None:
            return self.regime_override
        return "full" if self.m == self.n else "partial"

    @property
    def uses_compression(self) -> bool:
        if self.compressed is not None:
            return self.compressed
        return self.q < 1.0 or self.q0 < 1.0


@dataclass(frozen=True)
class TheoremOutputs:
    gamma: float
    eta: float
    epsilon: float
    regime: str


def gamma_full(E: int, q: float = 1.0, q0: float = 1.0) -> float:
    return (2.0 * E**2
            + 2.0 * E * math.sqrt(1.0 - q) / q
            + 4.0 * E * math.sqrt(10.0 * (1.0 - q0)) / (q0 * q))


def gamma_partial(E: int, q: float, q0: float, n: int, m: int) -> float:
    if not 1 <= m <= n:
        raise AnalysisError(f"need 1 <= m <= n (m={m}, n={n})")
    ratio = n / m
    return (2.0 * E**2
            + 16.0 * E * ratio * math.sqrt(10.0 * (1.0 - q) * (1.0 - q0)) / (q0 * q**2)
            + 8.0 * E * math.sqrt(10.0 * (1.0 - q0)) / (q0 * q)
            + 20.0 * E / q**2
            + ratio * 4.0 * E * math.sqrt(10.0 * (1.0 - q)) / q**2)


def step_size(D: float, G: float, E: int, T: int, gamma: float) -> float:
    return math.sqrt(D**2 / (2.0 * G**2 * E * T * gamma))


def theorem1_params(inputs: TheoremInputs) -> TheoremOutputs:
    """Threshold and step size for hard switching.

    Full participation uses ``gamma_full``. Partial participation uses
    ``gamma_partial`` plus the compression bias term when compression is on,
    and ``2 E^2`` with no compression term otherwise; both add the sampling
    terms that depend on ``delta`` and ``sigma``.
    """
    p = inputs
    if p.regime == "full":
        gamma = gamma_full(p.E, p.q, p.q0)
    elif p.uses_compression:
        gamma = gamma_partial(p.E, p.q, p.q0, p.n, p.m)
    else:
        gamma = 2.0 * p.E**2
    eta = step_size(p.D, p.G, p.E, p.T, gamma)
    eps = math.sqrt(2.0 * p.D**2 * p.G**2 * gamma / (p.E * p.T))
    if p.regime == "partial":
        if p.delta is None or not 0.0 < p.delta < 1.0:
            raise AnalysisError(f"partial participation needs a confidence delta in (0, 1), got {p.delta}")
        if p.uses_compression:
            eps += (p.n / p.m) * 2.0 * p.D * p.G * math.sqrt(1.0 - p.q) / (p.q * p.T)
        eps += 4.0 * p.G * p.D / math.sqrt(p.m * p.T) * math.sqrt(2.0 * math.log(3.0 / p.delta))
        eps += 2.0 * p.sigma * math.sqrt(2.0 / p.m * math.log(6.0 * p.T / p.delta))
    return TheoremOutputs(gamma, eta, eps, p.regime)


def default_D(domain: Domain, w0: np.ndarray | None = None, w_star: np.ndarray | None = None) -> float:
    """||w0 - w*|| when the optimum is known, else the domain diameter."""
    if w0 is not None and w_star is not None:
        dist = float(np.linalg.norm(w0 - w_star))
        if dist > 0:
            return dist
    return diameter(domain)


def estimate_sigma(problem: FederatedProblem, w: np.ndarray) -> float:
    """Sample std of the per-client constraint values at ``w``.

    A heuristic stand-in for the sub-Gaussian proxy, which is otherwise an
    assumption rather than something one can measure.
    """
    values = np.array([c.constraint_value(w) for c in problem.clients])
    return float(values.std(ddof=1)) if len(values) > 1 else 0.0


# ----------------------------------------------------------------------------
# averaged iterates

def _require_snapshots(trace: RunTrace, rounds: list[int]) -> dict[int, np.ndarray]:
    snaps = trace.snapshots
    missing = [t for t in rounds if t not in snaps]
    if missing:
        raise AnalysisError(f"snapshots missing for {len(missing)} rounds (thinned trace?)")
    return snaps


def averaged_iterate_hard(trace: RunTrace) -> np.ndarray:
    rounds = [r.t for r in trace.records if r.in_A]
    if not rounds:
        raise AnalysisError("empty A: no round satisfied the feasibility test")
    snaps = _require_snapshots(trace, rounds)
    return ordered_mean([snaps[t] for t in rounds])


def averaged_iterate_soft(trace: RunTrace, beta: float, epsilon: float) -> np.ndarray:
    """Weighted mean over rounds with g(w_t) < eps, weights 1 - sigma_beta(g(w_t) - eps)."""
    if not trace.config.full_participation:
        raise AnalysisError("soft-mode averaging needs exact g(w_t), i.e. full participation")
    chosen = [(r.t, 1.0 - sigma_beta(r.g_true - epsilon, beta)) for r in trace.records if r.g_true < epsilon]
    if not chosen:
        raise AnalysisError("empty A: no round had g(w_t) < epsilon")
    total = math.fsum(wt for _, wt in chosen)
    if total <= 0.0:
        raise AnalysisError("all soft-averaging weights are zero")
    snaps = _require_snapshots(trace, [t for t, _ in chosen])
    # with every weight equal to 1 this is bit-identical to the uniform mean
    return ordered_sum([wt * snaps[t] for t, wt in chosen]) / total


def averaged_iterate(trace: RunTrace) -> np.ndarray:
    sw = trace.config.switch
    if sw.mode == "soft" and trace.config.full_participation:
        return averaged_iterate_soft(trace, sw.beta, sw.epsilon)
    return averaged_iterate_hard(trace)


# ----------------------------------------------------------------------------
# skewness diagnostics

@dataclass(frozen=True)
class Skewness:
    K_glob_frob: float
    K_loc_frob: float
    V_f: float
    V_g: float
    diff_frob: float

    @property
    def bound_gap(self) -> float:
        return math.sqrt(2.0 * self.V_f * self.V_g) - self.diff_frob


def _skew_frob(U: np.ndarray, V: np.ndarray) -> float:
    """|| sum_j (u_j v_j^T - v_j u_j^T) ||_F from Gram matrices of the rows."""
    uu, vv, uv = U @ U.T, V @ V.T, U @ V.T
    sq = 2.0 * (float(np.sum(uu * vv)) - float(np.sum(uv * uv.T)))
    return math.sqrt(max(sq, 0.0))


def skewness_diagnostics(problem: FederatedProblem, w: np.ndarray) -> Skewness:
    F = np.array([c.objective_subgrad(w) for c in problem.clients])
    Gm = np.array([c.constraint_subgrad(w) for c in problem.clients])
    n = len(F)
    a, b = F.mean(axis=0), Gm.mean(axis=0)
    Fd, Gd = F - a, Gm - b
    return Skewness(
        K_glob_frob=_skew_frob(a[None, :], b[None, :]),
        K_loc_frob=_skew_frob(F, Gm) / n,
        V_f=float(np.sum(Fd * Fd)) / n,
        V_g=float(np.sum(Gd * Gd)) / n,
        # K_loc - K_glob only involves the deviations from the mean gradients
        diff_frob=_skew_frob(Fd, Gd) / n,
    )


# ----------------------------------------------------------------------------
# optimum oracle and verdicts

def brute_force_optimum(problem: FederatedProblem, grid_step: float,
                        chunk: int = 1 << 20) -> tuple[np.ndarray, float]:
    """Exhaustive grid search for min f subject to g <= 0 (d <= 3).

    Points are scanned in lexicographic order and only a strictly smaller
    value replaces the incumbent, so ties go to the lowest point.
    """
    dom = problem.domain
    if not dom.compact:
        raise AnalysisError("grid search needs a compact domain")
    d = problem.dim
    if d > 3:
        raise AnalysisError(f"grid search supports d <= 3, got d={d}")
    lo, hi = dom.bounding_box()
    axes = []
    for i in range(d):
        count = int(math.floor((hi[i] - lo[i]) / grid_step + 1e-9)) + 1
        axes.append(lo[i] + grid_step * np.arange(count))
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    best_f, best_w = math.inf, None
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(start + chunk, total)), shape)
        W = np.stack([axes[i][idx[i]] for i in range(d)], axis=1)
        if dom.kind == "ball":
            W = W[np.linalg.norm(W - dom.center, axis=1) <= dom.radius]
        f, g = problem.global_values(W)
        f = np.where(g <= 0.0, f, np.inf)
        k = int(np.argmin(f)) if len(f) else 0
        if len(f) and f[k] < best_f:
            best_f, best_w = float(f[k]), W[k].copy()
    if best_w is None:
        raise AnalysisError("no feasible grid point")
    return best_w, best_f


@dataclass(frozen=True)
class Verdict:
    subopt_gap: float | str
    violation: float
    is_eps_solution: bool | str
    f_value: float

    def to_dict(self) -> dict:
        return {"subopt_gap": self.subopt_gap, "violation": self.violation,
                "is_eps_solution": self.is_eps_solution, "f_value": self.f_value}


def verdict(problem: FederatedProblem, w_bar: np.ndarray, epsilon: float,
            f_star: float | None = None) -> Verdict:
    """Check f(w_bar) - f* <= eps and g(w_bar) <= eps (both inclusive)."""
    f_val, violation = problem.global_f(w_bar), problem.global_g(w_bar)
    if f_star is None and problem.optimum_hint is not None:
        f_star = problem.optimum_hint.f
    if f_star is None:
        return Verdict("unknown", violation, "unknown", f_val)
    gap = f_val - f_star
    return Verdict(gap, violation, bool(gap <= epsilon and violation <= epsilon), f_val)
