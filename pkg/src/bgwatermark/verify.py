"""Self-checks pairing each solver with an independent reference computation.

Used by ``bgwatermark verify``. Each check reports the computed value, the
reference, the tolerance and a verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are

from .errors import UnboundedCost
from .lqg_drop import (
    IidLqgSolution,
    MarkovLqgSolution,
    certify_iid,
    certify_markov,
    evaluate_iid_policy,
    solve_iid_lqg,
    solve_markov_lqg,
)
from .simkit.closed_loop import NO_ATTACK, ClosedLoop, simulate_trials
from .simkit.experiments import chain_mean
from .sysmodel import SystemModel, dare_residual
from .wm_design import (
    _rank_one_optimum,
    freq_terms,
    hmm_stationary_moments,
    wm1_correlation,
    wm1_objective_matrix,
)


@dataclass
class Check:
    name: str
    value: float
    reference: float
    tolerance: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict}  {self.name}: value={self.value:.6g} reference={self.reference:.6g} tol={self.tolerance:.3g} {self.note}".rstrip()


def _close(name, value, reference, tol, note=""):
    return Check(name, float(value), float(reference), float(tol), bool(abs(value - reference) <= tol), note)


def _below(name, value, bound, note=""):
    return Check(name, float(value), float(bound), 0.0, bool(value < bound), note)


def classical_lqr(model: SystemModel) -> np.ndarray:
    S = solve_discrete_are(model.A, model.B, model.W, model.U)
    B = model.B
    return -np.linalg.solve(B.T @ S @ B + model.U, B.T @ S @ model.A)


def algebraic_checks(model: SystemModel, kalman, p_d: float = 0.3, rng_seed: int = 0, samples: int = 2000) -> list[Check]:
    out = []
    rel = dare_residual(model, kalman.P) / max(1.0, np.linalg.norm(kalman.P))
    out.append(Check("filter Riccati residual (relative)", rel, 0.0, 1e-8, bool(rel <= 1e-8)))
    P_ref = solve_discrete_are(model.A.T, model.C.T, model.Q, model.R)
    out.append(_close("filter Riccati vs scipy", np.max(np.abs(kalman.P - P_ref)), 0.0, 1e-8 * max(1.0, np.abs(P_ref).max())))

    L0 = solve_iid_lqg(model, 0.0, kalman=kalman).L_b
    out.append(_close("drop-free gain vs classical LQR", np.max(np.abs(L0 - classical_lqr(model))), 0.0, 1e-8))

    try:
        iid = solve_iid_lqg(model, p_d, kalman=kalman)
        mk = solve_markov_lqg(model, 1.0 - p_d, p_d, kalman=kalman)
        out.append(_close(f"Markov reduction gain at p_d={p_d}", np.max(np.abs(iid.L_b - mk.L_m)), 0.0, 1e-6))
        out.append(_close(f"Markov reduction cost at p_d={p_d}", mk.J_m, iid.J_b, 1e-6 * max(1.0, abs(iid.J_b))))
        S_eval = evaluate_iid_policy(model, p_d, iid.L_b)
        out.append(_close("IID cost-to-go vs policy evaluation", np.max(np.abs(S_eval - iid.S_b)), 0.0, 1e-7 * max(1.0, np.abs(iid.S_b).max())))
    except UnboundedCost as exc:
        out.append(Check(f"Markov reduction at p_d={p_d}", np.nan, np.nan, 0.0, True, f"skipped: {exc}"))

    try:
        full = solve_iid_lqg(model, 1.0, kalman=kalman)
        ft = freq_terms(model, full, 0.2, 1.0, 0.8)
        H = np.eye(model.p, dtype=complex)
        out.append(Check("zero functionals at p_d=1", abs(ft.F1(H)) + np.abs(ft.F2(H)).max(), 0.0, 0.0, ft.F1(H) == 0.0 and not ft.F2(H).any()))
    except UnboundedCost:
        out.append(Check("zero functionals at p_d=1", np.nan, 0.0, 0.0, True, "skipped: open-loop unstable"))

    out.extend(rank_one_check(model, kalman, rng_seed=rng_seed, samples=samples))
    return out


def rank_one_check(model, kalman, alpha=0.69, beta=0.9, slack=1.0, rng_seed=0, samples=2000) -> list[Check]:
    """Rank-one designer optimum vs random PSD candidates on the budget boundary."""
    sol = solve_markov_lqg(model, alpha, beta, kalman=kalman)
    M = wm1_objective_matrix(model, alpha, beta, sol)
    N = model.B.T @ sol.R_m @ model.B + model.U
    budget = (alpha + beta) / alpha * slack
    v, best = _rank_one_optimum(M, N, budget)
    rng = np.random.default_rng(rng_seed)
    p = model.p
    top = -np.inf
    for _ in range(samples):
        G = rng.standard_normal((p, rng.integers(1, p + 1)))
        X = G @ G.T
        X *= budget / np.trace(N @ X)
        top = max(top, np.trace(M @ X))
    Q = np.outer(v, v)
    out = [Check("rank-one optimum vs random PSD", best, top, 1e-6 * abs(top), best >= top * (1 - 1e-6) - 1e-12)]
    if best > 0:
        out.append(_close("budget active at optimum", np.trace(N @ Q), budget, 1e-8 * budget))
    corr = wm1_correlation(model, alpha, beta, Q, sol).expected_corr
    out.append(_close("adjoint objective vs direct fixed point", best, corr, 1e-8 * max(1.0, abs(corr))))
    return out


def loop_checks(loop: ClosedLoop, chains: int = 64, steps: int = 4000, burn_in: int = 500, seed: int = 0) -> list[Check]:
    """Stability certificates, and Monte Carlo vs predicted correlation and cost."""
    out = []
    if isinstance(loop.lqg, MarkovLqgSolution):
        cert = certify_markov(loop.model, loop.lqg)
    else:
        cert = certify_iid(loop.model, loop.lqg)
    for k, r in cert.items():
        out.append(_below(f"certificate {k} spectral radius", r, 1.0))
    if isinstance(loop.lqg, IidLqgSolution) and loop.lqg.p_d < 1.0:
        hmm = loop.watermark
        mom = hmm_stationary_moments(loop.model, loop.lqg, hmm)
        atom = hmm.A_w.shape == (2, 2) and np.allclose(hmm.Z0, np.eye(2))
        if atom and hmm.A_w[1, 0] >= 0.0:
            # an atom-built HMM with omega in [0, 0.5]
            h = (hmm.C_h[:, 0] + 1j * hmm.C_h[:, 1]) / np.sqrt(2.0)
            omega = float(np.arctan2(hmm.A_w[1, 0], hmm.A_w[0, 0]) / (2 * np.pi))
            ft = freq_terms(loop.model, loop.lqg, omega, loop.lqg.p_d, hmm.rho_bar)
            H = np.outer(h, h.conj())
            tol = 1e-8 * max(1.0, abs(mom.expected_corr))
            out.append(_close("frequency-domain vs time-domain correlation", ft.correlation(H), mom.expected_corr, tol))
    tr = simulate_trials(loop, NO_ATTACK, steps, burn_in, seed, range(chains))
    m, se = chain_mean(tr.corr)
    ref = loop.expected_correlation()
    out.append(_close("Monte Carlo correlation", m, ref, 3 * se, "(3 SE)"))
    m, se = chain_mean(tr.cost)
    ref = loop.expected_cost()
    out.append(_close("Monte Carlo cost", m, ref, 3 * se, "(3 SE)"))
    return out
