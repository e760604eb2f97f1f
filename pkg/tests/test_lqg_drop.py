import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are, solve_discrete_lyapunov

from bgwatermark.errors import InvalidModel, Singular, UnboundedCost
from bgwatermark.lqg_drop import (
    BETA_NO_DROP,
    DropModel,
    OperatorL0,
    OperatorL1,
    apply_l0,
    certify_iid,
    certify_markov,
    evaluate_iid_policy,
    evaluate_markov_policy,
    iid_riccati_iterates,
    l0_spectral_radius,
    markov_riccati_iterates,
    solve_iid_lqg,
    solve_l1,
    solve_markov_lqg,
)
from bgwatermark.simkit.closed_loop import NO_ATTACK, ClosedLoop, simulate_trials
from bgwatermark.simkit.experiments import chain_mean
from bgwatermark.sysmodel import SystemModel, random_system, solve_dare
from bgwatermark.wm_design import IidGaussianWatermark


def scalar(a, b=1.0):
    M = lambda x: np.array([[x]])
    return SystemModel(M(a), M(b), M(1.0), M(1.0), M(1.0), M(1.0), M(1.0))


# ----------------------------------------------------------------- DropModel


def test_drop_model_validation():
    with pytest.raises(InvalidModel):
        DropModel.iid(1.5)
    with pytest.raises(InvalidModel):
        DropModel.markov(0.0, 0.5)
    with pytest.raises(InvalidModel):
        DropModel("gilbert")


def test_drop_model_stationary():
    assert DropModel.iid(0.3).prob_drop == 0.3
    assert DropModel.markov(0.69, 0.9).prob_drop == pytest.approx(0.9 / 1.59)


def test_zero_beta_maps_to_small_positive():
    d = DropModel.from_dict({"kind": "markov", "alpha": 1.0, "beta": 0.0})
    assert d.beta == BETA_NO_DROP


def test_natural_drop_bounds():
    assert DropModel.markov(0.5, 0.6, natural_pd=0.4).within_natural_bounds()
    with pytest.raises(InvalidModel):
        DropModel.markov(0.8, 0.6, natural_pd=0.4)
    with pytest.raises(InvalidModel):
        DropModel.iid(0.1, natural_pd=0.2)


# ------------------------------------------------------------------- IID LQG


def test_iid_scalar_quadratic_root():
    # b^2 (1 - p_d a^2) s^2 + (u (1 - a^2) - w b^2) s - w u = 0 with a=0.5, p_d=0.3
    root = np.max(np.roots([1 - 0.3 * 0.25, 0.75 - 1.0, -1.0]))
    assert root == pytest.approx(1.18363053, abs=1e-8)
    sol = solve_iid_lqg(scalar(0.5), 0.3)
    assert sol.S_b[0, 0] == pytest.approx(root, abs=1e-12)
    # scalar value iteration as a second route
    s = 1.0
    for _ in range(500):
        s = 0.25 * s + 1 - 0.7 * 0.25 * s * s / (s + 1)
    assert sol.S_b[0, 0] == pytest.approx(s, abs=1e-12)


def test_no_drop_is_classical_lqr(small_model):
    sol = solve_iid_lqg(small_model, 0.0)
    S = solve_discrete_are(small_model.A, small_model.B, small_model.W, small_model.U)
    np.testing.assert_allclose(sol.S_b, S, atol=1e-9)
    B = small_model.B
    L = -np.linalg.solve(B.T @ S @ B + small_model.U, B.T @ S @ small_model.A)
    np.testing.assert_allclose(sol.L_b, L, atol=1e-9)


def test_always_drop_is_lyapunov(small_model):
    sol = solve_iid_lqg(small_model, 1.0)
    ref = solve_discrete_lyapunov(small_model.A.T, small_model.W)
    np.testing.assert_allclose(sol.S_b, ref, atol=1e-9)
    B = small_model.B
    L = -np.linalg.solve(B.T @ sol.S_b @ B + small_model.U, B.T @ sol.S_b @ small_model.A)
    np.testing.assert_allclose(sol.L_b, L, atol=1e-14)


def test_unstable_plant_high_drop_rate_is_unbounded():
    # scalar a=2: finite cost iff p_d a^2 < 1
    solve_iid_lqg(scalar(2.0), 0.2)
    with pytest.raises(UnboundedCost):
        solve_iid_lqg(scalar(2.0), 0.3)


def test_cost_matches_policy_evaluation(small_model):
    sol = solve_iid_lqg(small_model, 0.4)
    np.testing.assert_allclose(evaluate_iid_policy(small_model, 0.4, sol.L_b), sol.S_b, atol=1e-10)


def test_iterates_are_monotone(small_model):
    it = iid_riccati_iterates(small_model, 0.5)
    prev = next(it)
    for _ in range(60):
        cur = next(it)
        assert np.min(np.linalg.eigvalsh(cur - prev)) >= -1e-10
        prev = cur
    it = markov_riccati_iterates(small_model, 0.6, 0.3)
    prev = next(it)
    for _ in range(60):
        cur = next(it)
        for a, b in zip(cur, prev):
            assert np.min(np.linalg.eigvalsh(a - b)) >= -1e-10
        prev = cur


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]))
def test_markov_reduces_to_iid(seed, p_d):
    m = random_system(3, 2, 2, rng=seed)
    k = solve_dare(m)
    iid = solve_iid_lqg(m, p_d, kalman=k)
    mk = solve_markov_lqg(m, 1 - p_d, p_d, kalman=k)
    np.testing.assert_allclose(mk.L_m, iid.L_b, atol=1e-6)
    assert mk.J_m == pytest.approx(iid.J_b, abs=1e-6)
    np.testing.assert_allclose(mk.S_m, iid.S_b, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.95))
def test_iid_solution_invariants(seed, p_d):
    m = random_system(3, 2, 1, rng=seed)
    sol = solve_iid_lqg(m, p_d)
    assert np.min(np.linalg.eigvalsh(sol.S_b - m.W)) >= -1e-9
    cert = certify_iid(m, sol)
    assert cert["mean_closed_loop"] < 1 and cert["l1"] < 1


def test_markov_no_drop_limit(small_model):
    lqr = solve_iid_lqg(small_model, 0.0)
    mk = solve_markov_lqg(small_model, 1.0, BETA_NO_DROP)
    np.testing.assert_allclose(mk.L_m, lqr.L_b, atol=1e-4)
    assert mk.J_m == pytest.approx(lqr.J_b, rel=1e-4)


def test_markov_policy_evaluation(small_model):
    mk = solve_markov_lqg(small_model, 0.69, 0.9)
    S, R = evaluate_markov_policy(small_model, 0.69, 0.9, mk.L_m)
    np.testing.assert_allclose(S, mk.S_m, atol=1e-9)
    np.testing.assert_allclose(R, mk.R_m, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_markov_certificate(seed, alpha, beta):
    m = random_system(3, 2, 2, rng=seed)
    sol = solve_markov_lqg(m, alpha, beta)
    assert certify_markov(m, sol)["l0"] < 1
    assert np.min(np.linalg.eigvalsh(sol.S_m - m.W)) >= -1e-9
    assert np.min(np.linalg.eigvalsh(sol.R_m - m.W)) >= -1e-9


def test_markov_cost_monte_carlo():
    """J_m vs the empirical average cost of the drop-only closed loop (200 000 steps)."""
    m = random_system(2, 1, 1, rng=21)
    k = solve_dare(m)
    sol = solve_markov_lqg(m, 0.6, 0.4, kalman=k)
    loop = ClosedLoop(m, k, sol, DropModel.markov(0.6, 0.4), IidGaussianWatermark(np.zeros((1, 1))))
    tr = simulate_trials(loop, NO_ATTACK, 2000, 300, 5, range(100))
    mean, se = chain_mean(tr.cost)
    assert abs(mean - sol.J_m) <= 3 * se


# --------------------------------------------------------------- operators


def test_apply_l0_cases(small_model):
    mk = solve_markov_lqg(small_model, 0.69, 0.9)
    op = OperatorL0.from_solution(small_model, mk)
    Z = np.zeros((3, 3))
    X0, X1 = apply_l0(op, Z, Z)
    assert not X0.any() and not X1.any()
    rng = np.random.default_rng(1)
    X, Y = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    z = op.vectorized @ np.concatenate([X.reshape(-1, order="F"), Y.reshape(-1, order="F")])
    P, Q = apply_l0(op, X, Y)
    np.testing.assert_allclose(z[:9], P.reshape(-1, order="F"), atol=1e-12)
    np.testing.assert_allclose(z[9:], Q.reshape(-1, order="F"), atol=1e-12)
    op1 = OperatorL0(1.0, 0.9, op.A, op.F)
    A = op.A
    np.testing.assert_allclose(apply_l0(op1, X, Y)[0], A @ Y @ A.T, atol=1e-14)


def test_l0_radius_zero_dynamics():
    F = np.array([[0.5, 0.1], [0.0, -0.3]])
    op = OperatorL0(0.4, 0.7, np.zeros((2, 2)), F)
    rho_F = np.max(np.abs(np.linalg.eigvals(F)))
    assert l0_spectral_radius(op) == pytest.approx(0.3 * rho_F**2, abs=1e-12)


def test_l0_radius_scalar():
    a, f, al, be = 0.9, 0.4, 0.3, 0.6
    M = np.array([[(1 - al) * a * a, al * a * a], [be * f * f, (1 - be) * f * f]])
    op = OperatorL0(al, be, np.array([[a]]), np.array([[f]]))
    assert l0_spectral_radius(op) == pytest.approx(np.max(np.abs(np.linalg.eigvals(M))), abs=1e-14)


def test_l1_scalar_series():
    m = scalar(0.8)
    L = np.array([[-0.5]])
    p_d, f, a, x = 0.3, 0.8 - 0.5, 0.8, 2.0
    y = solve_l1(p_d, m, L, np.array([[x]]))[0, 0]
    assert y == pytest.approx((1 - p_d) * x / (1 - (1 - p_d) * f * f - p_d * a * a), abs=1e-14)


def test_l1_trivial_cases(small_model):
    sol = solve_iid_lqg(small_model, 0.3)
    assert not solve_l1(0.3, small_model, sol.L_b, np.zeros((3, 3))).any()
    m0 = SystemModel(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.eye(2))
    assert not solve_l1(1.0, m0, np.zeros((2, 2)), np.eye(2)).any()


def test_l1_residual_symmetry_linearity(small_model):
    sol = solve_iid_lqg(small_model, 0.35)
    op = OperatorL1(small_model, 0.35, sol.L_b)
    rng = np.random.default_rng(2)
    G = rng.standard_normal((3, 3))
    X = G + G.T
    Y = op(X)
    assert op.residual(X, Y) <= 1e-10 * max(1.0, np.linalg.norm(Y))
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)
    X2 = rng.standard_normal((3, 3))
    np.testing.assert_allclose(op(2 * X - 3 * X2), 2 * op(X) - 3 * op(X2), atol=1e-10)
    Z = X + 1j * X2
    np.testing.assert_allclose(op(Z), op(X) + 1j * op(X2), atol=1e-10)


def test_l1_singular_raises():
    m = scalar(2.0)
    with pytest.raises(Singular):
        OperatorL1(m, 0.5, np.array([[-1.0]]))
