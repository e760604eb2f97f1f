"""Cost and correlation predictions for the two Bernoulli-Gaussian watermarks,
and the grid-search designers built on them.

Watermark 1 applies an IID Gaussian input (covariance ``Qwm``) on top of the
LQG input, and the sum goes through a Markov drop channel. Watermark 2 applies
a stationary HMM-generated Gaussian input through an IID drop channel.

For a fixed drop parameter the objective (expected correlation between the
measured and the defender's virtual output) and the extra cost are both
linear in the watermark's PSD parameter. The best PSD matrix under a linear
budget is therefore rank one: b / (v^T N v) v v^T, where v is the top
generalized eigenvector of (objective, cost). The outer search is a plain grid.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import Infeasible, NonConvergence, NonPositiveCostForm, Singular, UnboundedCost
from .linalg import (
    hermitian_to_real,
    real_to_complex_vector,
    spectral_radius,
    sym,
    top_generalized_eigvec,
    unvec,
    vec,
)
from .lqg_drop import (
    IidLqgSolution,
    MarkovLqgSolution,
    OperatorL0,
    OperatorL1,
    certify_iid,
    markov_within_natural_bounds,
    solve_iid_lqg,
    solve_markov_lqg,
)
from .sysmodel import KalmanSolution, SystemModel, solve_dare

log = logging.getLogger(__name__)

DEFAULT_AB_GRID = tuple(np.round(np.arange(1, 21) / 20.0, 10))
DEFAULT_OMEGA_GRID = tuple(np.linspace(0.0, 0.5, 51))
DEFAULT_PD_GRID = tuple(np.linspace(0.0, 1.0, 21))


def _map_ordered(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- types


@dataclass(frozen=True, eq=False)
class IidGaussianWatermark:
    Qwm: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Qwm, dtype=float))
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(Q), initial=0.0)):
            raise ValueError("watermark covariance must be symmetric")
        if Q.size and np.min(np.linalg.eigvalsh(Q)) < -1e-10 * max(1.0, np.max(np.abs(Q))):
            raise ValueError("watermark covariance must be PSD")
        object.__setattr__(self, "Qwm", sym(Q))


@dataclass(frozen=True, eq=False)
class HmmWatermark:
    """zeta_{k+1} = A_w zeta_k + psi_k, psi ~ N(0, Psi); watermark = C_h zeta_k."""

    A_w: np.ndarray
    C_h: np.ndarray
    Psi: np.ndarray
    rho_bar: float
    Z0: np.ndarray

    def __post_init__(self):
        for name in ("A_w", "C_h", "Psi", "Z0"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        k = self.A_w.shape[0]
        if self.A_w.shape != (k, k) or self.Psi.shape != (k, k) or self.Z0.shape != (k, k) or self.C_h.shape[1] != k:
            raise ValueError("inconsistent HMM dimensions")
        if spectral_radius(self.A_w) > self.rho_bar + 1e-10:
            raise ValueError("A_w exceeds the spectral-radius cap rho_bar")
        resid = self.A_w @ self.Z0 @ self.A_w.T + self.Psi - self.Z0
        if np.max(np.abs(resid)) > 1e-10 * max(1.0, np.max(np.abs(self.Z0))):
            raise ValueError("Z0 is not the stationary covariance of the hidden state")

    def autocovariance(self, d: int) -> np.ndarray:
        """E[du_k du_{k+d}^T] = C_h Z0 (A_w^T)^d C_h^T for d >= 0."""
        if d < 0:
            return self.autocovariance(-d).T
        return self.C_h @ self.Z0 @ np.linalg.matrix_power(self.A_w.T, d) @ self.C_h.T

    @property
    def p(self) -> int:
        return self.C_h.shape[0]

    def to_dict(self) -> dict:
        return {
            "A_w": self.A_w.tolist(),
            "C_h": self.C_h.tolist(),
            "Psi": self.Psi.tolist(),
            "rho_bar": self.rho_bar,
            "Z0": self.Z0.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmWatermark":
        return cls(
            np.asarray(d["A_w"], float),
            np.asarray(d["C_h"], float),
            np.asarray(d["Psi"], float),
            float(d["rho_bar"]),
            np.asarray(d["Z0"], float),
        )


def hmm_from_atom(omega: float, h: np.ndarray, rho_bar: float) -> HmmWatermark:
    """Two-state HMM whose autocovariance is 2 rho^|d| Re(e^{2 pi j d omega} h h^H).

    A_w is rho_bar times a rotation by 2 pi omega, C_h = sqrt(2) [Re h, Im h]
    and Psi = (1 - rho_bar^2) I, so the stationary hidden covariance is I.
    A zero ``h`` gives the zero watermark.
    """
    if not 0.0 < rho_bar <= 1.0:
        raise ValueError("rho_bar must lie in (0, 1]")
    h = np.asarray(h, dtype=complex).reshape(-1)
    c, s = np.cos(2 * np.pi * omega), np.sin(2 * np.pi * omega)
    A_w = rho_bar * np.array([[c, -s], [s, c]])
    C_h = np.sqrt(2.0) * np.column_stack([h.real, h.imag])
    Psi = (1.0 - rho_bar**2) * np.eye(2)
    return HmmWatermark(A_w, C_h, Psi, float(rho_bar), np.eye(2))


def zero_hmm(p: int, rho_bar: float) -> HmmWatermark:
    return hmm_from_atom(0.0, np.zeros(p), rho_bar)


@dataclass(frozen=True, eq=False)
class CorrelationFixedPoint:
    X0: np.ndarray
    X1: np.ndarray
    expected_corr: float


@dataclass(frozen=True)
class GridPoint:
    """One row of a designer's search surface."""

    params: tuple[float, float]
    feasible: bool
    reason: str
    base_cost: float
    objective: float
    cost: float


@dataclass(frozen=True, eq=False)
class Wm1Design:
    alpha: float
    beta: float
    Qwm: np.ndarray
    expected_corr: float
    J_bar: float
    delta: float
    lqg: MarkovLqgSolution
    surface: list[GridPoint] = field(default_factory=list)

    @property
    def watermark(self) -> IidGaussianWatermark:
        return IidGaussianWatermark(self.Qwm)

    def to_dict(self) -> dict:
        return {
            "type": "wm1",
            "alpha": self.alpha,
            "beta": self.beta,
            "Qwm": self.Qwm.tolist(),
            "expected_corr": self.expected_corr,
            "J_bar": self.J_bar,
            "J_m": self.lqg.J_m,
            "delta": self.delta,
        }


@dataclass(frozen=True, eq=False)
class Wm2Design:
    p_d: float
    omega_star: float
    H_star: np.ndarray
    h: np.ndarray
    hmm: HmmWatermark
    expected_corr: float
    J_bar: float
    delta: float
    lqg: IidLqgSolution
    surface: list[GridPoint] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "type": "wm2",
            "p_d": self.p_d,
            "omega_star": self.omega_star,
            "h_re": self.h.real.tolist(),
            "h_im": self.h.imag.tolist(),
            "hmm": self.hmm.to_dict(),
            "expected_corr": self.expected_corr,
            "J_bar": self.J_bar,
            "J_b": self.lqg.J_b,
            "delta": self.delta,
        }


# ------------------------------------------------------------ watermark 1


def wm1_cost(model: SystemModel, alpha: float, beta: float, Qwm: np.ndarray, markov_sol: MarkovLqgSolution) -> float:
    """Average cost with the IID watermark: J_m + alpha/(alpha+beta) tr((B^T R_m B + U) Qwm)."""
    N = model.B.T @ markov_sol.R_m @ model.B + model.U
    return float(markov_sol.J_m + alpha / (alpha + beta) * np.trace(N @ Qwm))


def _l0_system(model: SystemModel, alpha: float, beta: float, markov_sol: MarkovLqgSolution) -> np.ndarray:
    op = OperatorL0(alpha, beta, np.array(model.A), markov_sol.closed_loop)
    T = op.vectorized
    if spectral_radius(T) >= 1.0:
        raise Singular("L0 is not stable for these drop parameters")
    return np.eye(T.shape[0]) - T


def wm1_correlation(
    model: SystemModel, alpha: float, beta: float, Qwm: np.ndarray, markov_sol: MarkovLqgSolution
) -> CorrelationFixedPoint:
    """Stationary conditional cross-covariances E[x' x^T | eta_{k-1}=j] and
    the resulting expected correlation E[y^T y'] under normal operation.

    Raises:
        Singular: L0 is not stable.
    """
    n = model.n
    I_T = _l0_system(model, alpha, beta, markov_sol)
    rhs = np.concatenate([np.zeros(n * n), vec(model.B @ Qwm @ model.B.T)])
    z = np.linalg.solve(I_T, rhs)
    X0, X1 = unvec(z[: n * n], n), unvec(z[n * n :], n)
    C = model.C
    corr = np.trace(C @ (alpha * X1 + beta * X0) @ C.T) / (alpha + beta)
    return CorrelationFixedPoint(X0, X1, float(corr))


def wm1_objective_matrix(
    model: SystemModel, alpha: float, beta: float, markov_sol: MarkovLqgSolution
) -> np.ndarray:
    """Symmetric M with expected_corr(Qwm) = tr(M Qwm), from the adjoint solve."""
    n, B, C = model.n, model.B, model.C
    I_T = _l0_system(model, alpha, beta, markov_sol)
    c = vec(C.T @ C)
    weights = np.concatenate([beta * c, alpha * c]) / (alpha + beta)
    lam = np.linalg.solve(I_T.T, weights)
    Lam1 = unvec(lam[n * n :], n)
    return sym(B.T @ Lam1.T @ B)


def _rank_one_optimum(M: np.ndarray, N: np.ndarray, budget: float) -> tuple[np.ndarray, float]:
    """argmax tr(M X) s.t. tr(N X) <= budget, X PSD; returns (vector, value)."""
    lam, v = top_generalized_eigvec(M, N)
    if lam <= 0.0 or budget <= 0.0:
        return np.zeros_like(v), 0.0
    v = v * np.sqrt(budget / float(v @ N @ v))
    return v, budget * lam


def _wm1_point(model: SystemModel, kalman: KalmanSolution, delta: float, ab: tuple[float, float]):
    alpha, beta = ab
    try:
        sol = solve_markov_lqg(model, alpha, beta, kalman=kalman)
    except (UnboundedCost, NonConvergence) as exc:
        return GridPoint(ab, False, f"unbounded cost: {exc}", np.inf, 0.0, np.inf), None
    if spectral_radius(OperatorL0.from_solution(model, sol).vectorized) >= 1.0:
        return GridPoint(ab, False, "L0 not stable", sol.J_m, 0.0, np.inf), None
    if sol.J_m > delta:
        return GridPoint(ab, False, "base cost exceeds budget", sol.J_m, 0.0, sol.J_m), None
    M = wm1_objective_matrix(model, alpha, beta, sol)
    N = sym(model.B.T @ sol.R_m @ model.B + model.U)
    budget = (alpha + beta) / alpha * (delta - sol.J_m)
    v, value = _rank_one_optimum(M, N, budget)
    Qwm = np.outer(v, v)
    return GridPoint(ab, True, "", sol.J_m, value, wm1_cost(model, alpha, beta, Qwm, sol)), (sol, Qwm)


def design_wm1(
    model: SystemModel,
    delta: float,
    grid: Sequence[tuple[float, float]] | None = None,
    natural_pd: float = 0.0,
    threads: int = 1,
) -> Wm1Design:
    """Search (alpha, beta) and the IID watermark covariance under cost ``delta``.

    ``grid`` defaults to the 20 x 20 uniform grid over (0, 1]^2. Points outside
    the natural-drop bounds are skipped.

    Raises:
        Infeasible: no grid point has finite base cost within the budget.
    """
    if grid is None:
        grid = [(a, b) for a in DEFAULT_AB_GRID for b in DEFAULT_AB_GRID]
    grid = [tuple(map(float, ab)) for ab in grid if markov_within_natural_bounds(ab[0], ab[1], natural_pd)]
    kalman = solve_dare(model)
    results = _map_ordered(lambda ab: _wm1_point(model, kalman, delta, ab), grid, threads)
    surface = [r[0] for r in results]
    best = None
    for i, (pt, extra) in enumerate(results):
        if pt.feasible and (best is None or pt.objective > results[best][0].objective):
            best = i
    if best is None:
        raise Infeasible(f"no (alpha, beta) grid point meets the cost budget {delta:g}")
    pt, (sol, Qwm) = results[best]
    return Wm1Design(pt.params[0], pt.params[1], Qwm, pt.objective, pt.cost, delta, sol, surface)


# ------------------------------------------------------------ watermark 2


def _hermitian_basis(p: int) -> list[tuple[str, int, int, np.ndarray]]:
    basis = []
    for i in range(p):
        E = np.zeros((p, p), complex)
        E[i, i] = 1.0
        basis.append(("d", i, i, E))
    for i in range(p):
        for j in range(i + 1, p):
            S = np.zeros((p, p), complex)
            S[i, j] = S[j, i] = 1.0
            basis.append(("s", i, j, S))
            K = np.zeros((p, p), complex)
            K[i, j], K[j, i] = 1j, -1j
            basis.append(("a", i, j, K))
    return basis


def _functional_to_hermitian(f: Callable[[np.ndarray], float], p: int) -> np.ndarray:
    """Hermitian G with tr(G H) == f(H) for every Hermitian H (f real-linear)."""
    G = np.zeros((p, p), complex)
    for kind, i, j, E in _hermitian_basis(p):
        val = f(E)
        if kind == "d":
            G[i, i] = val
        elif kind == "s":
            G[i, j] += val / 2.0
            G[j, i] += val / 2.0
        else:
            G[i, j] += 1j * val / 2.0
            G[j, i] -= 1j * val / 2.0
    return G


@dataclass(frozen=True, eq=False)
class FreqDesignTerms:
    """Frequency-domain cost and correlation terms for one (omega, p_d).

    ``F2(H)`` is the stationary cross-covariance E[x' x^T] produced by the
    single spectral atom H at omega, ``Theta(H)`` the input-side covariance
    term and ``F1(H)`` the extra LQG cost. ``obj_mat`` and ``cost_mat`` are the
    Hermitian matrices with tr(C F2 C^T) = tr(obj_mat H) and F1 = tr(cost_mat H).
    """

    omega: float
    p_d: float
    rho_bar: float
    s: complex
    M1: np.ndarray
    M2: np.ndarray
    obj_mat: np.ndarray
    cost_mat: np.ndarray
    _model: SystemModel = field(repr=False)
    _lqg: IidLqgSolution = field(repr=False)
    _l1: OperatorL1 | None = field(repr=False)

    def F2(self, H: np.ndarray) -> np.ndarray:
        n = self._model.n
        if self._l1 is None:
            return np.zeros((n, n))
        B = self._model.B
        inner = 2.0 * sym(self._l1(self.M2 @ H @ B.T)) + self._l1(B @ H @ B.T)
        return 2.0 * inner.real

    def Theta(self, H: np.ndarray) -> np.ndarray:
        pbar = 1.0 - self.p_d
        return 2.0 * (2.0 * sym(pbar * self.M1 @ H) + pbar * H).real

    def F1(self, H: np.ndarray) -> float:
        model, L = self._model, self._lqg.L_b
        pbar = 1.0 - self.p_d
        weight = model.W + pbar * L.T @ model.U @ L
        return float(np.trace(model.U @ self.Theta(H)) + np.trace(weight @ self.F2(H)))

    def correlation(self, H: np.ndarray) -> float:
        C = self._model.C
        return float(np.trace(C @ self.F2(H) @ C.T))


def freq_terms(
    model: SystemModel, iid_sol: IidLqgSolution, omega: float, p_d: float, rho_bar: float
) -> FreqDesignTerms:
    """Assemble M1, M2 and the Hermitian objective/cost matrices at (omega, p_d).

    Raises:
        Singular: I - s rho_bar (A + pbar B L_b) or the L1 map is singular.
    """
    if not 0.0 <= omega <= 0.5:
        raise ValueError("omega must lie in [0, 0.5]")
    n, p = model.n, model.p
    A, B, L = model.A, model.B, iid_sol.L_b
    pbar = 1.0 - p_d
    s = complex(np.exp(2j * np.pi * omega))
    if pbar == 0.0:
        Z = np.zeros((p, p), complex)
        return FreqDesignTerms(omega, p_d, rho_bar, s, Z, np.zeros((n, p), complex), Z, Z.copy(), model, iid_sol, None)
    G = A + pbar * B @ L
    lhs = np.eye(n) - s * rho_bar * G
    if np.linalg.cond(lhs) > 1e12:
        raise Singular("I - s rho_bar (A + pbar B L_b) is singular")
    resolvent_B = np.linalg.solve(lhs, B)
    M2 = pbar * rho_bar * s * (A + B @ L) @ resolvent_B
    M1 = pbar * rho_bar * s * L @ resolvent_B
    l1 = OperatorL1(model, p_d, L)
    terms = FreqDesignTerms(omega, p_d, rho_bar, s, M1, M2, np.zeros((p, p)), np.zeros((p, p)), model, iid_sol, l1)
    obj = _functional_to_hermitian(terms.correlation, p)
    cost = _functional_to_hermitian(terms.F1, p)
    object.__setattr__(terms, "obj_mat", obj)
    object.__setattr__(terms, "cost_mat", cost)
    return terms


def _wm2_pd_point(model, kalman, delta, rho_bar, omegas, p_d):
    """All omega rows for one drop probability."""
    rows, extras = [], []
    try:
        sol = solve_iid_lqg(model, p_d, kalman=kalman)
    except (UnboundedCost, NonConvergence) as exc:
        return [GridPoint((p_d, w), False, f"unbounded cost: {exc}", np.inf, 0.0, np.inf) for w in omegas], None
    cert = certify_iid(model, sol)
    if cert["mean_closed_loop"] >= 1.0 or cert["l1"] >= 1.0:
        return [GridPoint((p_d, w), False, "stability certificate failed", sol.J_b, 0.0, np.inf) for w in omegas], None
    if sol.J_b > delta:
        return [GridPoint((p_d, w), False, "base cost exceeds budget", sol.J_b, 0.0, sol.J_b) for w in omegas], None
    budget = delta - sol.J_b
    for w in omegas:
        terms = freq_terms(model, sol, w, p_d, rho_bar)
        if p_d >= 1.0:
            # the watermark is always dropped: zero objective, any input feasible
            rows.append(GridPoint((p_d, w), True, "", sol.J_b, 0.0, sol.J_b))
            extras.append(np.zeros(model.p, complex))
            continue
        Nr = hermitian_to_real(terms.cost_mat)
        if np.min(np.linalg.eigvalsh(Nr)) <= 1e-12 * max(1.0, np.max(np.abs(Nr))):
            log.warning("cost form not positive definite at p_d=%g omega=%g; skipped", p_d, w)
            rows.append(GridPoint((p_d, w), False, NonPositiveCostForm.__name__, sol.J_b, 0.0, np.inf))
            extras.append(None)
            continue
        v, value = _rank_one_optimum(hermitian_to_real(terms.obj_mat), Nr, budget)
        h = real_to_complex_vector(v)
        H = np.outer(h, h.conj())
        rows.append(GridPoint((p_d, w), True, "", sol.J_b, terms.correlation(H), sol.J_b + terms.F1(H)))
        extras.append(h)
    return rows, (sol, extras)


def design_wm2(
    model: SystemModel,
    delta: float,
    rho_bar: float,
    omega_grid: Sequence[float] | None = None,
    pd_grid: Sequence[float] | None = None,
    natural_pd: float = 0.0,
    threads: int = 1,
) -> Wm2Design:
    """Search (p_d, omega) and the rank-one spectral atom under cost ``delta``.

    Raises:
        Infeasible: no grid point has finite base cost within the budget.
    """
    omegas = [float(w) for w in (DEFAULT_OMEGA_GRID if omega_grid is None else omega_grid)]
    pds = [float(p) for p in (DEFAULT_PD_GRID if pd_grid is None else pd_grid) if p >= natural_pd]
    kalman = solve_dare(model)
    results = _map_ordered(lambda pd: _wm2_pd_point(model, kalman, delta, rho_bar, omegas, pd), pds, threads)
    surface, best, best_val = [], None, -np.inf
    for i, (rows, extra) in enumerate(results):
        for j, pt in enumerate(rows):
            surface.append(pt)
            if pt.feasible and pt.objective > best_val:
                best, best_val = (i, j), pt.objective
    if best is None:
        raise Infeasible(f"no (p_d, omega) grid point meets the cost budget {delta:g}")
    i, j = best
    rows, (sol, hs) = results[i]
    pt, h = rows[j], hs[j]
    omega = pt.params[1]
    hmm = hmm_from_atom(omega, h, rho_bar)
    return Wm2Design(
        pt.params[0], omega, np.outer(h, h.conj()), h, hmm, pt.objective, pt.cost, delta, sol, surface
    )


@dataclass(frozen=True, eq=False)
class HmmMoments:
    """Stationary second moments of the virtual state x' driven by an HMM watermark."""

    Sxx: np.ndarray
    Sxz: np.ndarray
    expected_corr: float
    extra_cost: float


def hmm_stationary_moments(model: SystemModel, iid_sol: IidLqgSolution, hmm: HmmWatermark) -> HmmMoments:
    """Time-domain moments for an arbitrary HMM watermark under IID drops.

    Solves E[x' zeta^T] = G E[x' zeta^T] A_w^T + pbar B C_h Z0 A_w^T with
    G = A + pbar B L_b, then E[x' x'^T] through the L1 map. Because x' is
    uncorrelated with the noise-driven part of x, E[x' x^T] = E[x' x'^T].
    """
    n, h_dim = model.n, hmm.A_w.shape[0]
    A, B, L = model.A, model.B, iid_sol.L_b
    pbar = 1.0 - iid_sol.p_d
    G = A + pbar * B @ L
    F = A + B @ L
    BC = B @ hmm.C_h
    rhs = vec(pbar * BC @ hmm.Z0 @ hmm.A_w.T)
    Sxz = np.linalg.solve(np.eye(n * h_dim) - np.kron(hmm.A_w, G), rhs).reshape((n, h_dim), order="F")
    if pbar == 0.0:
        Sxx = np.zeros((n, n))
    else:
        X = F @ Sxz @ BC.T + BC @ Sxz.T @ F.T + BC @ hmm.Z0 @ BC.T
        Sxx = sym(OperatorL1(model, iid_sol.p_d, L)(X))
    C, U = model.C, model.U
    u_cov = L @ Sxx @ L.T + 2.0 * sym(L @ Sxz @ hmm.C_h.T) + hmm.C_h @ hmm.Z0 @ hmm.C_h.T
    extra = np.trace(model.W @ Sxx) + pbar * np.trace(U @ u_cov)
    return HmmMoments(Sxx, Sxz, float(np.trace(C @ Sxx @ C.T)), float(extra))
