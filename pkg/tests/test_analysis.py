import json
import math
from pathlib import Path

import numpy as np
import pytest

from fedsgm.analysis import (AnalysisError, TheoremInputs, averaged_iterate_hard, averaged_iterate_soft,
                             brute_force_optimum, default_D, estimate_sigma, gamma_full, gamma_partial,
                             skewness_diagnostics, theorem1_params, verdict)
from fedsgm.engine import RoundConfig, RoundRecord, RunTrace, AlgoState
from fedsgm.numerics import Domain
from fedsgm.problems import (CallableClient, FederatedProblem, build_np_classification,
                             build_synthetic_linear_ball, make_np_synthetic)
from fedsgm.switching import SwitchMode

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "theorem_params.json").read_text())


def test_gamma_full_examples():
    assert gamma_full(1, 1, 1) == 2
    assert gamma_full(2, 0.5, 1) == pytest.approx(8 + 4 * math.sqrt(0.5) / 0.5, rel=1e-15)
    assert gamma_full(2, 0.5, 1) == pytest.approx(13.656854249492380, rel=1e-14)
    assert gamma_full(4, 1, 1) == 32


def test_gamma_partial_examples():
    assert gamma_partial(1, 1, 1, 7, 3) == 22
    # E=1, q=0.5, q0=1, n=m: 2 + 80 + 4 sqrt(5) / 0.25, from the oracle fixture table
    assert gamma_partial(1, 0.5, 1, 5, 5) == pytest.approx(float(FIXTURES[9]["gamma_partial"]), rel=1e-12)
    assert gamma_partial(1, 0.5, 1, 5, 5) == pytest.approx(82 + 16 * math.sqrt(5), rel=1e-14)


@pytest.mark.parametrize("E", [1, 2, 3, 7, 50])
def test_gamma_uncompressed_collapse(E):
    assert gamma_full(E, 1.0, 1.0) == 2 * E**2
    assert gamma_partial(E, 1.0, 1.0, 10, 3) == 2 * E**2 + 20 * E


def test_theorem_full_examples():
    out = theorem1_params(TheoremInputs(D=1, G=1, E=1, T=4))
    assert (out.gamma, out.eta, out.epsilon, out.regime) == (2.0, 0.25, 1.0, "full")
    D, G, T = 3.0, 2.0, 900
    out = theorem1_params(TheoremInputs(D=D, G=G, E=1, T=T))
    assert out.epsilon == pytest.approx(2 * D * G / math.sqrt(T), rel=1e-14)


def test_theorem_partial_uncompressed_example():
    D, G, E, T, n = 2.0, 1.5, 3, 100, 4
    out = theorem1_params(TheoremInputs(D=D, G=G, E=E, T=T, n=n, m=n - 1, sigma=0.0, delta=0.5))
    assert out.regime == "partial" and out.gamma == 2 * E**2
    expected = (math.sqrt(2 * D**2 * G**2 * out.gamma / (E * T))
                + 4 * G * D / math.sqrt((n - 1) * T) * math.sqrt(2 * math.log(6)))
    assert out.epsilon == pytest.approx(expected, rel=1e-14)


def test_theorem_partial_with_all_clients():
    D, G, T, n = 1.3, 0.7, 250, 6
    out = theorem1_params(TheoremInputs(D=D, G=G, E=1, T=T, n=n, m=n, delta=0.5, regime_override="partial"))
    expected = math.sqrt(2 * D**2 * G**2 * 2 / T) + 4 * G * D / math.sqrt(n * T) * math.sqrt(2 * math.log(6))
    assert out.regime == "partial" and out.epsilon == pytest.approx(expected, rel=1e-14)


def test_theorem_partial_needs_delta():
    with pytest.raises(AnalysisError):
        theorem1_params(TheoremInputs(D=1, G=1, E=1, T=10, n=4, m=2))
    with pytest.raises(AnalysisError):
        theorem1_params(TheoremInputs(D=1, G=1, E=1, T=10, n=4, m=2, delta=1.0))


def test_theorem_inputs_validation():
    with pytest.raises(AnalysisError):
        TheoremInputs(D=1, G=1, E=1, T=1, q=0.0)
    with pytest.raises(AnalysisError):
        TheoremInputs(D=1, G=1, E=1, T=1, n=2, m=3)


@pytest.mark.parametrize("row", FIXTURES, ids=lambda r: f"{r['regime']}-E{r['E']}-q{r['q']}")
def test_theorem_matches_oracle_fixtures(row):
    inputs = TheoremInputs(D=row["D"], G=row["G"], E=row["E"], T=row["T"], n=row["n"], m=row["m"],
                           q=row["q"], q0=row["q0"], sigma=row["sigma"], delta=row["delta"],
                           regime_override=row["regime"])
    out = theorem1_params(inputs)
    assert out.regime == row["regime"]
    for key in ("gamma", "eta", "epsilon"):
        assert getattr(out, key) == pytest.approx(float(row[key]), rel=1e-12)
    assert gamma_partial(row["E"], row["q"], row["q0"], row["n"], row["m"]) == pytest.approx(
        float(row["gamma_partial"]), rel=1e-12)


def test_fixtures_agree_with_oracle_recomputation():
    import theorem_oracle

    fresh = theorem_oracle.build()
    assert [r["epsilon"] for r in fresh] == [r["epsilon"] for r in FIXTURES]


def test_default_D_and_sigma(np_problem):
    dom = Domain.cube(2, 2.0)
    assert default_D(dom) == pytest.approx(4 * math.sqrt(2))
    assert default_D(dom, np.zeros(2), np.array([3.0, 4.0])) == 5.0
    assert estimate_sigma(np_problem, np.zeros(8)) >= 0.0


def fake_trace(g_values, snapshots, mode=SwitchMode.hard(0.5), m=2):
    cfg = RoundConfig(T=len(g_values), E=1, n=2, m=m, eta=0.1, switch=mode)
    records = [RoundRecord(t=t, sampled=(0, 1), g_hat=g, g_true=g, f_true=0.0, switch_weight=0.0,
                           in_A=mode.in_feasible_set(g), uplink_bytes=0, downlink_bytes=0,
                           w_snapshot=np.asarray(w, dtype=float))
               for t, (g, w) in enumerate(zip(g_values, snapshots))]
    return RunTrace(cfg, records, AlgoState(np.zeros(2)), np.zeros(2))


def test_averaged_hard_examples():
    tr = fake_trace([0.0, 1.0, 0.2], [[1, 1], [9, 9], [3, 3]])
    np.testing.assert_array_equal(averaged_iterate_hard(tr), [2.0, 2.0])
    tr = fake_trace([1.0, 0.1], [[9, 9], [4, 5]])
    np.testing.assert_array_equal(averaged_iterate_hard(tr), [4.0, 5.0])
    with pytest.raises(AnalysisError):
        averaged_iterate_hard(fake_trace([1.0, 2.0], [[0, 0], [1, 1]]))


def test_averaged_hard_needs_snapshots():
    tr = fake_trace([0.0, 0.0], [[1, 1], [3, 3]])
    tr.records[1].w_snapshot = None
    with pytest.raises(AnalysisError):
        averaged_iterate_hard(tr)


def test_averaged_soft_weights():
    beta, eps = 4.0, 0.5
    tr = fake_trace([eps - 1.0, eps - 1 / (2 * beta), 2.0], [[3, 0], [0, 3], [7, 7]],
                    SwitchMode.soft(eps, beta))
    np.testing.assert_allclose(averaged_iterate_soft(tr, beta, eps), [2.0, 1.0], rtol=1e-15)


def test_averaged_soft_deep_feasible_equals_hard():
    beta, eps = 10.0, 0.5
    tr = fake_trace([-1.0, -3.0, 0.1, 4.0], [[0.1, 0.7], [1 / 3, 2.0], [5.5, -1.0], [9, 9]],
                    SwitchMode.soft(eps, beta))
    assert np.array_equal(averaged_iterate_soft(tr, beta, eps), averaged_iterate_hard(tr))


def test_averaged_soft_single_and_errors():
    tr = fake_trace([0.0, 1.0], [[2, 2], [5, 5]], SwitchMode.soft(0.5, 10.0))
    np.testing.assert_array_equal(averaged_iterate_soft(tr, 10.0, 0.5), [2.0, 2.0])
    with pytest.raises(AnalysisError):
        averaged_iterate_soft(fake_trace([1.0], [[0, 0]], SwitchMode.soft(0.5, 10.0)), 10.0, 0.5)
    # all rounds inside the ramp with sigma == 1 is impossible, but sigma at g = eps - 0 gives weight 0
    with pytest.raises(AnalysisError):
        averaged_iterate_soft(fake_trace([0.2], [[0, 0]], SwitchMode.soft(0.2 + 1e-18, 10.0), m=2), 10.0, 0.2 + 1e-18)
    with pytest.raises(AnalysisError):
        averaged_iterate_soft(fake_trace([0.0], [[0, 0]], SwitchMode.soft(0.5, 10.0), m=1), 10.0, 0.5)


def dense_skewness(problem, w):
    """Independent route: build the d x d matrices explicitly."""
    F = np.array([c.objective_subgrad(w) for c in problem.clients])
    Gm = np.array([c.constraint_subgrad(w) for c in problem.clients])
    a, b = F.mean(axis=0), Gm.mean(axis=0)
    K_glob = np.outer(a, b) - np.outer(b, a)
    K_loc = np.mean([np.outer(f, g) - np.outer(g, f) for f, g in zip(F, Gm)], axis=0)
    V_f = np.mean(np.sum((F - a) ** 2, axis=1))
    V_g = np.mean(np.sum((Gm - b) ** 2, axis=1))
    return (np.linalg.norm(K_glob), np.linalg.norm(K_loc), V_f, V_g, np.linalg.norm(K_loc - K_glob))


def const_grad_problem(fs, gs):
    clients = [CallableClient(lambda w: 0.0, (lambda f: lambda w: np.array(f, float))(f),
                              lambda w: 0.0, (lambda g: lambda w: np.array(g, float))(g), 10.0)
               for f, g in zip(fs, gs)]
    return FederatedProblem(clients, Domain.cube(len(fs[0]), 1.0))


def test_skewness_examples():
    s = skewness_diagnostics(const_grad_problem([[1, 0]], [[0, 1]]), np.zeros(2))
    assert s.K_glob_frob == pytest.approx(math.sqrt(2), rel=1e-15)
    assert s.V_f == 0 and s.V_g == 0 and s.diff_frob == 0
    s = skewness_diagnostics(const_grad_problem([[1, 2, 3]], [[-2, -4, -6]]), np.zeros(3))
    assert s.K_glob_frob == 0
    s = skewness_diagnostics(const_grad_problem([[1, 2]] * 4, [[0.3, -1]] * 4), np.zeros(2))
    assert s.V_f <= 1e-30 and s.V_g <= 1e-30 and s.diff_frob <= 1e-9


def test_skewness_matches_dense_route():
    data = make_np_synthetic(100, 6, seed=3)
    prob = build_np_classification(data, 5, 0, heterogeneous=True)
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.standard_normal(6)
        s = skewness_diagnostics(prob, w)
        np.testing.assert_allclose([s.K_glob_frob, s.K_loc_frob, s.V_f, s.V_g, s.diff_frob],
                                   dense_skewness(prob, w), rtol=1e-7, atol=1e-10)
        assert s.bound_gap >= -1e-9


def test_grid_oracle_examples():
    prob = build_synthetic_linear_ball(2, [1.0, 1.0], 1.0, n=3)
    w, f = brute_force_optimum(prob, 1e-2)
    assert np.linalg.norm(w - prob.optimum_hint.w) <= 0.1
    assert prob.optimum_hint.f <= f <= prob.optimum_hint.f + prob.lipschitz_G * 1e-2 * math.sqrt(2)
    quad = CallableClient(lambda w: w @ w, lambda w: 2 * w, lambda w: -1.0, lambda w: np.zeros_like(w), 4.0)
    w, f = brute_force_optimum(FederatedProblem([quad], Domain.cube(2, 1.0)), 0.25)
    assert np.array_equal(w, [0.0, 0.0]) and f == 0.0
    infeasible = CallableClient(lambda w: 0.0, lambda w: w, lambda w: 1.0, lambda w: w, 1.0)
    with pytest.raises(AnalysisError):
        brute_force_optimum(FederatedProblem([infeasible], Domain.cube(2, 1.0)), 0.5)


def test_grid_oracle_ties_lowest_point():
    flat = CallableClient(lambda w: 0.0, lambda w: w, lambda w: -1.0, lambda w: w, 1.0)
    w, f = brute_force_optimum(FederatedProblem([flat], Domain.box([-1, 0], [1, 1])), 0.5)
    assert np.array_equal(w, [-1.0, 0.0])


def test_grid_oracle_refinement_and_chunking():
    prob = build_synthetic_linear_ball(3, [0.3, -1.0, 0.5], 1.0, n=2, half_width=1.5)
    G, h = prob.lipschitz_G, 0.05
    _, f1 = brute_force_optimum(prob, h)
    _, f2 = brute_force_optimum(prob, h / 2)
    assert abs(f1 - f2) <= G * h * math.sqrt(3)
    w_a, f_a = brute_force_optimum(prob, h, chunk=997)
    w_b, f_b = brute_force_optimum(prob, h)
    assert f_a == f_b and np.array_equal(w_a, w_b)


def test_grid_oracle_ball_domain_and_limits():
    prob = build_np_classification(make_np_synthetic(40, 2, seed=0), 2, 0, Domain.ball(np.zeros(2), 1.0))
    with pytest.raises(AnalysisError):
        brute_force_optimum(build_np_classification(make_np_synthetic(40, 4, seed=0), 2), 0.1)
    with pytest.raises(AnalysisError):
        brute_force_optimum(build_np_classification(make_np_synthetic(40, 4, seed=0), 2,
                                                    domain=Domain.cube(4, 1.0)), 0.5)


def test_verdict_examples(ball_problem, np_problem):
    hint = ball_problem.optimum_hint
    v = verdict(ball_problem, hint.w, 1e-12)
    assert abs(v.subopt_gap) <= 1e-14 and abs(v.violation) <= 1e-14
    v = verdict(np_problem, np.zeros(8), 1.0)
    assert v.subopt_gap == "unknown" and v.is_eps_solution == "unknown"
    assert v.violation == pytest.approx(math.log(2))


def test_verdict_boundary_is_inclusive():
    quad = CallableClient(lambda w: 0.0, lambda w: w, lambda w: 0.25, lambda w: w, 1.0)
    prob = FederatedProblem([quad], Domain.cube(1, 1.0))
    assert verdict(prob, np.zeros(1), 0.25, f_star=0.0).is_eps_solution is True
    assert verdict(prob, np.zeros(1), 0.2499, f_star=0.0).is_eps_solution is False
