"""Invariant checks runnable without pytest (``fedsgm verify``).

Each ``check_*`` function takes the object under test as an argument so a
deliberately broken compressor or run can be fed in to confirm the check
notices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import (TheoremInputs, averaged_iterate_hard, averaged_iterate_soft, skewness_diagnostics,
                       theorem1_params)
from .compression import CompressorSpec, compress, uplink_ef_step
from .engine import RoundConfig, RunTrace, run
from .numerics import Domain, project, sample_points
from .problems import (FederatedProblem, build_np_classification, build_synthetic_linear_ball, logistic_loss,
                       make_np_synthetic)
from .switching import SwitchMode, switch_weight
from . import rng as rngmod


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def check_projection(dom: Domain, d: int, samples: int = 1000, seed: int = 0) -> CheckResult:
    gen = rngmod.stream(seed, "calibrate", 1)
    worst = -math.inf
    for _ in range(samples):
        a, b = 3 * gen.standard_normal(d), 3 * gen.standard_normal(d)
        pa, pb = project(a, dom), project(b, dom)
        if not np.array_equal(project(pa, dom), pa) or not dom.contains(pa):
            return CheckResult("projection", False, "not idempotent or left the domain")
        worst = max(worst, np.linalg.norm(pa - pb) - np.linalg.norm(a - b))
    return CheckResult("projection", worst <= 1e-12, f"max expansion {worst:.2e}")


def check_contraction(spec: CompressorSpec, samples: int = 10_000, seed: int = 0) -> CheckResult:
    """Per-vector contraction for deterministic compressors, Monte-Carlo mean for rand_k."""
    gen = rngmod.stream(seed, "calibrate", spec.dim, 7)
    q = spec.contraction_q
    name = f"contraction[{spec.kind}, q={q:.4g}]"
    if spec.deterministic:
        worst = -math.inf
        for _ in range(samples):
            v = gen.standard_normal(spec.dim) * gen.exponential()
            err = compress(spec, v) - v
            worst = max(worst, float(err @ err) - (1.0 - q) * float(v @ v))
        return CheckResult(name, worst <= 1e-12, f"max slack violation {worst:.2e}")
    worst_ratio = 0.0
    for i in range(10):
        v = rngmod.stream(seed, "calibrate", spec.dim, 100 + i).standard_normal(spec.dim)
        total = 0.0
        for _ in range(samples):
            err = compress(spec, v, gen) - v
            total += float(err @ err)
        worst_ratio = max(worst_ratio, total / samples / float(v @ v) / (1.0 - q) if q < 1 else 0.0)
    return CheckResult(name, worst_ratio <= 1.0 + 5.0 / math.sqrt(samples),
                       f"max mean ratio / (1-q) = {worst_ratio:.4f}")


def check_ef_telescoping(spec: CompressorSpec, rounds: int = 200, seed: int = 0) -> CheckResult:
    gen = rngmod.stream(seed, "calibrate", spec.dim, 11)
    e = np.zeros(spec.dim)
    sent_total = np.zeros(spec.dim)
    delta_total = np.zeros(spec.dim)
    step_exact = True
    for _ in range(rounds):
        delta = gen.standard_normal(spec.dim)
        v, e_new = uplink_ef_step(e, delta, spec, gen)
        step_exact &= bool(np.array_equal(v + e_new, e + delta))
        e = e_new
        sent_total += v
        delta_total += delta
    drift = float(np.max(np.abs(e + sent_total - delta_total)))
    ok = drift <= 1e-12 * max(1.0, float(np.max(np.abs(delta_total))))
    if spec.kind in ("identity", "top_k", "rand_k"):
        ok &= step_exact
    return CheckResult(f"ef_telescoping[{spec.kind}]", ok, f"max |e + sum v - sum delta| = {drift:.2e}")


def check_soft_hard_limit(samples: int = 2000, seed: int = 0) -> CheckResult:
    gen = rngmod.stream(seed, "calibrate", 3)
    eps, beta = 0.05, 1e3
    for g in gen.uniform(-1, 1, samples):
        if eps - 1 / beta < g <= eps:
            continue
        if switch_weight(SwitchMode.soft(eps, beta), g) != switch_weight(SwitchMode.hard(eps), g):
            return CheckResult("soft_hard_limit", False, f"mismatch at g={g}")
    return CheckResult("soft_hard_limit", True)


def check_oracles(problem: FederatedProblem, samples: int = 1000, seed: int = 0) -> CheckResult:
    """Convexity, subgradient inequality and Lipschitz certificate on random domain pairs."""
    gen = rngmod.stream(seed, "calibrate", problem.dim, 5)
    W1 = sample_points(problem.domain, samples, gen, problem.dim)
    W2 = sample_points(problem.domain, samples, gen, problem.dim)
    lam = gen.random(samples)
    worst = {"convexity": 0.0, "subgradient": 0.0, "lipschitz": 0.0}
    G = problem.lipschitz_G
    for c in problem.clients:
        for val, grad in ((c.objective_value, c.objective_subgrad), (c.constraint_value, c.constraint_subgrad)):
            for w1, w2, l in zip(W1, W2, lam):
                mid = l * w1 + (1 - l) * w2
                worst["convexity"] = max(worst["convexity"], val(mid) - l * val(w1) - (1 - l) * val(w2))
                g2 = grad(w2)
                worst["subgradient"] = max(worst["subgradient"], val(w2) + g2 @ (w1 - w2) - val(w1))
                worst["lipschitz"] = max(worst["lipschitz"], float(np.linalg.norm(g2)) - G)
    ok = all(v <= 1e-9 for v in worst.values())
    return CheckResult(f"oracles[{problem.name}]", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def check_logistic_fd(samples: int = 200, seed: int = 0) -> CheckResult:
    gen = rngmod.stream(seed, "calibrate", 9)
    data = make_np_synthetic(60, 5, seed=seed)
    problem = build_np_classification(data, 2, seed)
    h = 1e-6
    worst = 0.0
    for _ in range(samples):
        w, u = gen.standard_normal(5), gen.standard_normal(5)
        u /= np.linalg.norm(u)
        c = problem.clients[int(gen.integers(2))]
        for val, grad in ((c.objective_value, c.objective_subgrad), (c.constraint_value, c.constraint_subgrad)):
            fd = (val(w + h * u) - val(w - h * u)) / (2 * h)
            worst = max(worst, abs(fd - grad(w) @ u))
    x = gen.standard_normal(5)
    big = logistic_loss(100.0 * x / (x @ x), x, 1)
    ok = worst <= 1e-5 and math.isfinite(big) and big < 1e-40
    return CheckResult("logistic_finite_difference", ok, f"max |fd - grad| {worst:.1e}")


def check_drift(trace: RunTrace, eta: float, G: float) -> CheckResult:
    """Every client's local drift stays under eta^2 E^3 G^2 / 3 and ||delta|| under E G."""
    E = trace.config.E
    bound = eta * eta * E**3 * G * G / 3.0 + 1e-9
    drift_bad = sum(d > bound for r in trace.records for d in r.drift_sq_sums)
    delta_bad = sum(x > E * G + 1e-9 for r in trace.records for x in r.delta_norms)
    worst = max((max(r.drift_sq_sums) for r in trace.records), default=0.0)
    return CheckResult("local_drift_bound", drift_bad == 0 and delta_bad == 0,
                       f"{drift_bad} drift / {delta_bad} delta violations, worst drift {worst:.3e} vs {bound:.3e}")


def check_virtual_iterate(problem: FederatedProblem, config: RoundConfig) -> CheckResult:
    """x_t - eta * mean(e_t) advances by -eta * mean(delta_t) (full participation, X = R^d)."""
    from .engine import AlgoState, initial_model, local_update, run_round

    state = AlgoState.initial(initial_model(problem), config.n, True)
    worst = 0.0
    n = config.n
    for _ in range(config.T):
        virtual = state.x - config.eta * sum(state.residuals) / n
        new_state, rec = run_round(state, config, problem)
        deltas = [local_update(problem.clients[j], state.w, rec.switch_weight, config.eta, config.E,
                               rngmod.stream(config.seed, "local", state.t, j)).delta for j in range(n)]
        expected = virtual - config.eta * sum(deltas) / n
        got = new_state.x - config.eta * sum(new_state.residuals) / n
        worst = max(worst, float(np.linalg.norm(got - expected)))
        state = new_state
    return CheckResult("virtual_iterate", worst <= 1e-9, f"max residual {worst:.2e}")


def check_frozen_residuals(problem: FederatedProblem, config: RoundConfig) -> CheckResult:
    violations = 0
    checked = 0

    def hook(before, after, rec):
        nonlocal violations, checked
        for j in range(config.n):
            if j not in rec.sampled:
                checked += 1
                violations += not np.array_equal(before.residuals[j], after.residuals[j])

    run(config, problem, on_round=hook)
    return CheckResult("frozen_residuals", violations == 0 and checked > 0,
                       f"{violations} violations over {checked} unsampled pairs")


def check_identity_equivalence(problem: FederatedProblem, config: RoundConfig) -> CheckResult:
    from dataclasses import replace

    d = problem.dim
    off = run(replace(config, uplink=None, downlink=None, compression=False), problem)
    on = run(replace(config, uplink=CompressorSpec.identity(d), downlink=CompressorSpec.identity(d),
                     compression=True), problem)
    same = off.to_csv() == on.to_csv() and np.array_equal(off.final_state.w, on.final_state.w)
    return CheckResult("identity_compressor_equivalence", same)


def check_skewness(problem: FederatedProblem, samples: int = 1000, seed: int = 0) -> CheckResult:
    gen = rngmod.stream(seed, "calibrate", problem.dim, 13)
    pts = sample_points(problem.domain, samples, gen, problem.dim)
    worst = min(skewness_diagnostics(problem, w).bound_gap for w in pts)
    return CheckResult(f"skewness_bound[{problem.name}]", worst >= -1e-9, f"min bound gap {worst:.3e}")


def check_theorem_eta(samples: int = 200, seed: int = 0) -> CheckResult:
    gen = rngmod.stream(seed, "calibrate", 17)
    worst = 0.0
    for _ in range(samples):
        n = int(gen.integers(1, 50))
        inputs = TheoremInputs(D=float(gen.uniform(0.1, 10)), G=float(gen.uniform(0.1, 10)),
                               E=int(gen.integers(1, 20)), T=int(gen.integers(1, 10**5)), n=n,
                               m=int(gen.integers(1, n + 1)), q=float(gen.uniform(0.05, 1)),
                               q0=float(gen.uniform(0.05, 1)), sigma=float(gen.uniform(0, 2)),
                               delta=float(gen.uniform(0.01, 0.99)))
        out = theorem1_params(inputs)
        lhs = 2 * inputs.G**2 * inputs.E * inputs.T * out.gamma * out.eta**2
        worst = max(worst, abs(lhs - inputs.D**2) / inputs.D**2)
    return CheckResult("theorem_eta_relation", worst <= 1e-12, f"max relative error {worst:.1e}")


def run_all(quick: bool = True) -> list[CheckResult]:
    scale = 1 if quick else 10
    samples = 1000 * scale
    results: list[CheckResult] = []

    def add(fn: Callable[[], CheckResult]):
        try:
            results.append(fn())
        except Exception as exc:  # a crashing check is a failing check
            results.append(CheckResult(getattr(fn, "__name__", "check"), False, f"raised {exc!r}"))

    add(lambda: check_projection(Domain.ball(np.zeros(3), 1.0), 3, samples))
    add(lambda: check_projection(Domain.cube(3, 1.0), 3, samples))
    d = 20
    for spec in (CompressorSpec.top_k(d, 5), CompressorSpec.uniform_quant(d, 6), CompressorSpec.identity(d)):
        add(lambda spec=spec: check_contraction(spec, samples))
        add(lambda spec=spec: check_ef_telescoping(spec))
    add(lambda: check_contraction(CompressorSpec.rand_k(d, 5), 200 * scale))
    add(lambda: check_ef_telescoping(CompressorSpec.rand_k(d, 5)))
    add(check_soft_hard_limit)
    add(check_logistic_fd)
    add(check_theorem_eta)

    ball = build_synthetic_linear_ball(2, [1.0, 1.0], 1.0, n=4)
    add(lambda: check_oracles(ball, 200 * scale))
    data = make_np_synthetic(120, 8, seed=0)
    np_prob = build_np_classification(data, 6, 0, Domain.ball(np.zeros(8), 5.0))
    add(lambda: check_oracles(np_prob, 50 * scale))
    hetero = build_np_classification(data, 6, 0, Domain.ball(np.zeros(8), 5.0), heterogeneous=True)
    add(lambda: check_skewness(hetero, 200 * scale))

    cfg = RoundConfig(T=60, E=4, n=6, m=3, eta=0.05, switch=SwitchMode.hard(0.1), seed=1)
    trace = run(cfg, np_prob)
    add(lambda: check_drift(trace, cfg.eta, np_prob.lipschitz_G))
    add(lambda: check_identity_equivalence(np_prob, cfg))
    comp_cfg = RoundConfig(T=60, E=3, n=6, m=3, eta=0.05, switch=SwitchMode.hard(0.1),
                           uplink=CompressorSpec.top_k(8, 2), downlink=CompressorSpec.top_k(8, 4), seed=2)
    add(lambda: check_frozen_residuals(np_prob, comp_cfg))
    free = build_np_classification(data, 6, 0)
    full_cfg = RoundConfig(T=40, E=3, n=6, m=6, eta=0.05, switch=SwitchMode.hard(0.1),
                           uplink=CompressorSpec.top_k(8, 4), downlink=CompressorSpec.top_k(8, 4), seed=3)
    add(lambda: check_virtual_iterate(free, full_cfg))

    soft_trace = run(RoundConfig(T=40, E=2, n=6, m=6, eta=0.01, switch=SwitchMode.soft(10.0, 1.0), seed=4),
                     np_prob)
    def soft_equals_hard():
        ok = np.array_equal(averaged_iterate_soft(soft_trace, 1.0, 10.0), averaged_iterate_hard(soft_trace))
        return CheckResult("soft_average_matches_uniform", ok)
    add(soft_equals_hard)
    return results
