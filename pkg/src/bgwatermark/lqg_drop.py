"""Steady-state LQG control when the actuation packet can be lost.

Two loss processes are supported:

* IID: each packet is dropped with probability ``p_d``.
* Markov: a two-state chain on eta in {0 (dropped), 1 (delivered)} with
  P(eta'=1 | eta=0) = alpha and P(eta'=0 | eta=1) = beta.

Both Riccati-type fixed points are found by value iteration started from W.
The policy-evaluation functions solve the same fixed points as linear
equations for a given gain and are kept as an independent cross-check.

The module also builds the two vectorized linear operators used by the
correlation analysis:

* ``OperatorL0`` acts on stacked pairs (X, Y) for Markov drops.
* ``OperatorL1`` is the IID analogue X -> pbar F X F^T + p_d A X A^T.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.linalg as sla

from .errors import InvalidModel, NonConvergence, Singular, UnboundedCost
from .linalg import spectral_radius, sym, unvec, vec
from .sysmodel import KalmanSolution, SystemModel, solve_dare

DIVERGENCE_NORM = 1e12
# Experiments ask for beta = 0 (no drops); irreducibility needs beta > 0.
BETA_NO_DROP = 1e-6


@dataclass(frozen=True)
class DropModel:
    """Bernoulli actuation-loss process.

    ``natural_pd`` is the drop probability of losses already present in the
    network. Artificial drops can only add to it, which bounds the admissible
    parameters: p_d >= natural_pd for IID drops, and alpha <= 1 - natural_pd,
    1 - beta <= 1 - natural_pd for Markov drops.
    """

    kind: str
    p_d: float = 0.0
    alpha: float = 1.0
    beta: float = 0.0
    natural_pd: float = 0.0

    def __post_init__(self):
        if self.kind not in ("iid", "markov"):
            raise InvalidModel(f"unknown drop kind {self.kind!r}")
        if not 0.0 <= self.natural_pd <= 1.0:
            raise InvalidModel("natural_pd must lie in [0, 1]")
        if self.kind == "iid":
            if not 0.0 <= self.p_d <= 1.0:
                raise InvalidModel("p_d must lie in [0, 1]")
        else:
            if not (0.0 < self.alpha <= 1.0 and 0.0 < self.beta <= 1.0):
                raise InvalidModel("Markov drops need 0 < alpha <= 1 and 0 < beta <= 1")
        if not self.within_natural_bounds():
            raise InvalidModel("drop parameters are incompatible with the natural drop rate")

    @classmethod
    def iid(cls, p_d: float, natural_pd: float = 0.0) -> "DropModel":
        return cls("iid", p_d=p_d, natural_pd=natural_pd)

    @classmethod
    def markov(cls, alpha: float, beta: float, natural_pd: float = 0.0) -> "DropModel":
        return cls("markov", alpha=alpha, beta=beta, natural_pd=natural_pd)

    def within_natural_bounds(self) -> bool:
        return markov_within_natural_bounds(self.alpha, self.beta, self.natural_pd) if (
            self.kind == "markov"
        ) else self.p_d >= self.natural_pd

    @property
    def prob_drop(self) -> float:
        """Stationary probability P(eta = 0)."""
        if self.kind == "iid":
            return self.p_d
        return self.beta / (self.alpha + self.beta)

    def to_dict(self) -> dict:
        if self.kind == "iid":
            d = {"kind": "iid", "p_d": self.p_d}
        else:
            d = {"kind": "markov", "alpha": self.alpha, "beta": self.beta}
        if self.natural_pd:
            d["natural_pd"] = self.natural_pd
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DropModel":
        kind = d["kind"]
        if kind == "iid":
            return cls.iid(float(d["p_d"]), float(d.get("natural_pd", 0.0)))
        beta = float(d["beta"])
        if beta == 0.0:
            beta = BETA_NO_DROP
        return cls.markov(float(d["alpha"]), beta, float(d.get("natural_pd", 0.0)))


def markov_within_natural_bounds(alpha: float, beta: float, natural_pd: float) -> bool:
    return alpha <= 1.0 - natural_pd + 1e-12 and (1.0 - beta) <= 1.0 - natural_pd + 1e-12


def _gain(model: SystemModel, S: np.ndarray) -> np.ndarray:
    """L = -(B^T S B + U)^-1 B^T S A."""
    B = model.B
    return -np.linalg.solve(B.T @ S @ B + model.U, B.T @ S @ model.A)


def lqr_gain(model: SystemModel, max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Classical drop-free LQR (gain, Riccati solution)."""
    sol = solve_iid_lqg(model, 0.0, max_iter=max_iter)
    return sol.L_b, sol.S_b


# --------------------------------------------------------------------- IID


@dataclass(frozen=True, eq=False)
class IidLqgSolution:
    p_d: float
    L_b: np.ndarray
    S_b: np.ndarray
    J_b: float
    kalman: KalmanSolution
    closed_loop: np.ndarray  # F = A + B L_b, dynamics when the packet arrives


def iid_riccati_map(model: SystemModel, p_d: float, S: np.ndarray) -> np.ndarray:
    """One step S -> A^T S A + W + (1 - p_d) A^T S B L(S)."""
    A = model.A
    L = _gain(model, S)
    return sym(A.T @ S @ A + model.W + (1.0 - p_d) * (A.T @ S @ model.B @ L))


def iid_riccati_iterates(model: SystemModel, p_d: float) -> Iterator[np.ndarray]:
    """Infinite value-iteration sequence starting at S = W."""
    S = np.array(model.W)
    while True:
        yield S
        S = iid_riccati_map(model, p_d, S)


def _iterate_to_fixed_point(iterates, max_iter: int, tol: float, what: str):
    prev = None
    for k, cur in enumerate(iterates):
        mats = cur if isinstance(cur, tuple) else (cur,)
        size = max(np.linalg.norm(M) for M in mats)
        if not np.isfinite(size) or size > DIVERGENCE_NORM:
            raise UnboundedCost(f"{what}: cost-to-go exceeded {DIVERGENCE_NORM:g}; drop rate too high")
        if prev is not None:
            step = max(np.linalg.norm(a - b) for a, b in zip(mats, prev))
            if step <= tol * (1.0 + size):
                return cur
        if k >= max_iter:
            raise NonConvergence(f"{what}: no convergence after {max_iter} iterations")
        prev = mats
    raise AssertionError("unreachable")


def iid_cost(model: SystemModel, kalman: KalmanSolution, S: np.ndarray) -> float:
    """J_b = tr(S Q + (A^T S A + W - S)(P - K C P))."""
    A = model.A
    return float(np.trace(S @ model.Q + (A.T @ S @ A + model.W - S) @ kalman.P_post))


def solve_iid_lqg(
    model: SystemModel,
    p_d: float,
    kalman: KalmanSolution | None = None,
    max_iter: int = 200_000,
    tol: float = 1e-13,
) -> IidLqgSolution:
    """Steady-state gain, cost-to-go and average cost under IID input drops.

    Raises:
        UnboundedCost: the iteration grows past ``DIVERGENCE_NORM``.
    """
    if not 0.0 <= p_d <= 1.0:
        raise InvalidModel("p_d must lie in [0, 1]")
    kalman = kalman if kalman is not None else solve_dare(model)
    S = _iterate_to_fixed_point(iid_riccati_iterates(model, p_d), max_iter, tol, "IID LQG")
    L = _gain(model, S)
    return IidLqgSolution(p_d, L, S, iid_cost(model, kalman, S), kalman, model.A + model.B @ L)


def evaluate_iid_policy(model: SystemModel, p_d: float, L: np.ndarray) -> np.ndarray:
    """Cost-to-go of a fixed gain: S = W + p_d A^T S A + pbar (F^T S F + L^T U L).

    Solved as one Kronecker-vectorized linear system.
    """
    A, n = model.A, model.n
    F = A + model.B @ L
    pbar = 1.0 - p_d
    T = p_d * np.kron(A.T, A.T) + pbar * np.kron(F.T, F.T)
    rhs = vec(model.W + pbar * L.T @ model.U @ L)
    return sym(unvec(np.linalg.solve(np.eye(n * n) - T, rhs), n))


def iid_mean_closed_loop(sol: IidLqgSolution, model: SystemModel) -> np.ndarray:
    """A + (1 - p_d) B L_b, Schur stable whenever the cost is finite."""
    return model.A + (1.0 - sol.p_d) * model.B @ sol.L_b


# ------------------------------------------------------------------ Markov


@dataclass(frozen=True, eq=False)
class MarkovLqgSolution:
    alpha: float
    beta: float
    L_m: np.ndarray
    R_m: np.ndarray
    S_m: np.ndarray
    J_m: float
    kalman: KalmanSolution
    closed_loop: np.ndarray


def markov_riccati_map(
    model: SystemModel, alpha: float, beta: float, S: np.ndarray, R: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One coupled step (S, R) -> (S', R').

    S is the cost-to-go after a dropped packet, R after a delivered one.
    """
    A, W = model.A, model.W
    L = _gain(model, R)
    ARBL = A.T @ R @ model.B @ L
    R_next = A.T @ (beta * S + (1.0 - beta) * R) @ A + W + (1.0 - beta) * ARBL
    S_next = A.T @ ((1.0 - alpha) * S + alpha * R) @ A + W + alpha * ARBL
    return sym(S_next), sym(R_next)


def markov_riccati_iterates(model: SystemModel, alpha: float, beta: float):
    S, R = np.array(model.W), np.array(model.W)
    while True:
        yield S, R
        S, R = markov_riccati_map(model, alpha, beta, S, R)


def markov_cost(
    model: SystemModel, kalman: KalmanSolution, alpha: float, beta: float, S: np.ndarray, R: np.ndarray
) -> float:
    A, Q = model.A, model.Q
    head = np.trace(beta * S @ Q + alpha * R @ Q)
    tail = np.trace((A.T @ ((1.0 - alpha) * S + alpha * R) @ A + model.W - S) @ kalman.P_post)
    return float((head + tail) / (alpha + beta))


def solve_markov_lqg(
    model: SystemModel,
    alpha: float,
    beta: float,
    kalman: KalmanSolution | None = None,
    max_iter: int = 200_000,
    tol: float = 1e-13,
) -> MarkovLqgSolution:
    """Steady-state gain, coupled cost matrices and average cost under Markov drops.

    Raises:
        UnboundedCost: the coupled iteration diverges.
    """
    if not (0.0 < alpha <= 1.0 and 0.0 < beta <= 1.0):
        raise InvalidModel("Markov drops need 0 < alpha <= 1 and 0 < beta <= 1")
    kalman = kalman if kalman is not None else solve_dare(model)
    S, R = _iterate_to_fixed_point(
        markov_riccati_iterates(model, alpha, beta), max_iter, tol, "Markov LQG"
    )
    L = _gain(model, R)
    J = markov_cost(model, kalman, alpha, beta, S, R)
    return MarkovLqgSolution(alpha, beta, L, R, S, J, kalman, model.A + model.B @ L)


def evaluate_markov_policy(
    model: SystemModel, alpha: float, beta: float, L: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Coupled cost-to-go (S, R) of a fixed gain as one linear solve.

        R = W + beta A^T S A + betabar (F^T R F + L^T U L)
        S = W + alphabar A^T S A + alpha (F^T R F + L^T U L)
    """
    A, n = model.A, model.n
    F = A + model.B @ L
    AA, FF = np.kron(A.T, A.T), np.kron(F.T, F.T)
    ab, bb = 1.0 - alpha, 1.0 - beta
    T = np.block([[ab * AA, alpha * FF], [beta * AA, bb * FF]])
    LUL = L.T @ model.U @ L
    rhs = np.concatenate([vec(model.W + alpha * LUL), vec(model.W + bb * LUL)])
    z = np.linalg.solve(np.eye(2 * n * n) - T, rhs)
    return sym(unvec(z[: n * n], n)), sym(unvec(z[n * n :], n))


# --------------------------------------------------------------- operators


@dataclass(frozen=True, eq=False)
class OperatorL0:
    """(X, Y) -> (A (abar X + alpha Y) A^T, F (beta X + betabar Y) F^T)."""

    alpha: float
    beta: float
    A: np.ndarray
    F: np.ndarray

    @classmethod
    def from_solution(cls, model: SystemModel, sol: MarkovLqgSolution) -> "OperatorL0":
        return cls(sol.alpha, sol.beta, np.array(model.A), sol.closed_loop)

    @property
    def vectorized(self) -> np.ndarray:
        """2n^2 x 2n^2 matrix acting on [vec X; vec Y]."""
        AA, FF = np.kron(self.A, self.A), np.kron(self.F, self.F)
        a, b = self.alpha, self.beta
        return np.block([[(1.0 - a) * AA, a * AA], [b * FF, (1.0 - b) * FF]])


def apply_l0(op: OperatorL0, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b, A, F = op.alpha, op.beta, op.A, op.F
    return A @ ((1.0 - a) * X + a * Y) @ A.T, F @ (b * X + (1.0 - b) * Y) @ F.T


def l0_spectral_radius(op: OperatorL0) -> float:
    return spectral_radius(op.vectorized)


class OperatorL1:
    """Solution map of Y = pbar (F Y F^T + X) + p_d A Y A^T.

    The vectorized system (I - pbar F(x)F - p_d A(x)A) vec Y = pbar vec X is
    LU-factored once, so repeated solves (real or complex X) are cheap.

    Raises:
        Singular: the map X -> pbar F X F^T + p_d A X A^T is not stable.
    """

    def __init__(self, model: SystemModel, p_d: float, L_b: np.ndarray):
        self.p_d = float(p_d)
        self.A = np.array(model.A)
        self.F = self.A + model.B @ L_b
        n = model.n
        self.n = n
        self.step_matrix = (1.0 - p_d) * np.kron(self.F, self.F) + p_d * np.kron(self.A, self.A)
        self.radius = spectral_radius(self.step_matrix)
        if self.radius >= 1.0:
            raise Singular(f"L1 step operator has spectral radius {self.radius:.6g} >= 1")
        self._lu = sla.lu_factor(np.eye(n * n) - self.step_matrix)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        rhs = (1.0 - self.p_d) * vec(X)
        if np.iscomplexobj(rhs):
            y = sla.lu_solve(self._lu, rhs.real) + 1j * sla.lu_solve(self._lu, rhs.imag)
        else:
            y = sla.lu_solve(self._lu, rhs)
        return unvec(y, self.n)

    def residual(self, X: np.ndarray, Y: np.ndarray) -> float:
        pbar = 1.0 - self.p_d
        rhs = pbar * (self.F @ Y @ self.F.T + X) + self.p_d * self.A @ Y @ self.A.T
        return float(np.linalg.norm(Y - rhs))


def solve_l1(p_d: float, model: SystemModel, L_b: np.ndarray, X: np.ndarray) -> np.ndarray:
    return OperatorL1(model, p_d, L_b)(X)


def l1_spectral_radius(model: SystemModel, p_d: float, L_b: np.ndarray) -> float:
    F = model.A + model.B @ L_b
    return spectral_radius((1.0 - p_d) * np.kron(F, F) + p_d * np.kron(model.A, model.A))


def certify_iid(model: SystemModel, sol: IidLqgSolution) -> dict[str, float]:
    """Spectral radii that must all be below one for a finite-cost IID design."""
    return {
        "mean_closed_loop": spectral_radius(iid_mean_closed_loop(sol, model)),
        "l1": l1_spectral_radius(model, sol.p_d, sol.L_b),
    }


def certify_markov(model: SystemModel, sol: MarkovLqgSolution) -> dict[str, float]:
    return {"l0": l0_spectral_radius(OperatorL0.from_solution(model, sol))}
