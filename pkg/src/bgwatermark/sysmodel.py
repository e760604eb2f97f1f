"""Plant model, steady-state Kalman filter and the nominal one-step recursions.

The plant is the discrete LTI system

    x_{k+1} = A x_k + B u_{k,c} + w_k,    y_k = C x_k + v_k

with w ~ N(0, Q), v ~ N(0, R) and quadratic stage cost x^T W x + u_c^T U u_c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidModel, NonConvergence
from .linalg import min_eig_sym, numerical_rank, spectral_radius, sym

_PD_TOL = 1e-10
_SYM_TOL = 1e-10


def _frozen(M, ndim=2) -> np.ndarray:
    arr = np.array(M, dtype=float, copy=True)
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    if arr.ndim != ndim:
        raise InvalidModel(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _check_pd(name: str, M: np.ndarray) -> None:
    if M.shape[0] != M.shape[1]:
        raise InvalidModel(f"{name} must be square, got {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > _SYM_TOL * max(1.0, np.max(np.abs(M))):
        raise InvalidModel(f"{name} is not symmetric")
    if min_eig_sym(M) <= _PD_TOL:
        raise InvalidModel(f"{name} is not positive definite")


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    return controllability_matrix(A.T, C.T).T


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Plant, noise and cost matrices. Arrays are copied and made read-only."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    W: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R", "W", "U"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n, p, m = self.n, self.p, self.m
        if self.A.shape != (n, n):
            raise InvalidModel(f"A must be square, got {self.A.shape}")
        expected = {"B": (n, p), "C": (m, n), "Q": (n, n), "R": (m, m), "W": (n, n), "U": (p, p)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidModel(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in ("Q", "R", "W", "U"):
            _check_pd(name, getattr(self, name))
        if numerical_rank(controllability_matrix(self.A, self.B)) < n:
            raise InvalidModel("(A, B) is not controllable")
        if numerical_rank(observability_matrix(self.A, self.C)) < n:
            raise InvalidModel("(A, C) is not observable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SystemModel):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("A", "B", "C", "Q", "R", "W", "U")
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("A", "B", "C", "Q", "R", "W", "U")}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemModel":
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("A", "B", "C", "Q", "R", "W", "U")})


def random_system(
    n: int,
    p: int,
    m: int,
    spectral_radius_target: float = 0.8,
    rng: np.random.Generator | int | None = None,
) -> SystemModel:
    """Random open-loop stable plant with unit noise and cost weights.

    Entries of A, B, C are i.i.d. standard normal and A is rescaled to the
    requested spectral radius. Redraws on the (measure-zero) event that the
    draw is uncontrollable or unobservable.
    """
    rng = np.random.default_rng(rng)
    for _ in range(100):
        A = rng.standard_normal((n, n))
        A *= spectral_radius_target / spectral_radius(A)
        B = rng.standard_normal((n, p))
        C = rng.standard_normal((m, n))
        try:
            return SystemModel(A, B, C, np.eye(n), np.eye(m), np.eye(n), np.eye(p))
        except InvalidModel:
            continue
    raise InvalidModel("could not draw a controllable and observable system")


@dataclass(frozen=True, eq=False)
class KalmanSolution:
    """Steady-state a-priori error covariance P and Kalman gain K.

    ``P_post`` is the a-posteriori covariance P - K C P and
    ``innovation_cov`` the innovation covariance C P C^T + R.
    """

    P: np.ndarray
    K: np.ndarray
    P_post: np.ndarray
    innovation_cov: np.ndarray

    @classmethod
    def from_P(cls, model: SystemModel, P: np.ndarray) -> "KalmanSolution":
        S = sym(model.C @ P @ model.C.T + model.R)
        K = np.linalg.solve(S, model.C @ P).T
        return cls(_frozen(P), _frozen(K), _frozen(sym(P - K @ model.C @ P)), _frozen(S))


def dare_residual(model: SystemModel, P: np.ndarray) -> float:
    """Frobenius norm of P - (A P A^T + Q - A P C^T (C P C^T + R)^-1 C P A^T)."""
    A, C = model.A, model.C
    S = C @ P @ C.T + model.R
    APC = A @ P @ C.T
    rhs = A @ P @ A.T + model.Q - APC @ np.linalg.solve(S, APC.T)
    return float(np.linalg.norm(P - rhs))


def solve_dare(model: SystemModel, max_iter: int = 10_000, tol: float = 1e-12) -> KalmanSolution:
    """Steady-state filter Riccati equation by value iteration from P = Q.

    Raises:
        NonConvergence: the relative step did not drop below ``tol`` within
            ``max_iter`` iterations.
    """
    A, C, Q, R = model.A, model.C, model.Q, model.R
    P = np.array(Q)
    for _ in range(max_iter):
        S = C @ P @ C.T + R
        APC = A @ P @ C.T
        P_next = sym(A @ P @ A.T + Q - APC @ np.linalg.solve(S, APC.T))
        step = np.linalg.norm(P_next - P)
        P = P_next
        if step < tol * (1.0 + np.linalg.norm(P)):
            return KalmanSolution.from_P(model, P)
    raise NonConvergence(f"DARE iteration did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class StateEstimate:
    """Filter state at one time step.

    ``e`` (true state minus x_filt) is only available inside a simulation.
    """

    x_pred: np.ndarray
    x_filt: np.ndarray
    z: np.ndarray
    e: np.ndarray | None = None

    @classmethod
    def zeros(cls, model: SystemModel) -> "StateEstimate":
        return cls(np.zeros(model.n), np.zeros(model.n), np.zeros(model.m))


def kalman_step(
    sol: KalmanSolution,
    model: SystemModel,
    est: StateEstimate,
    u_applied: np.ndarray,
    y_next: np.ndarray,
) -> StateEstimate:
    """Predict with the actuated input, then correct with the next measurement."""
    x_pred = model.A @ est.x_filt + model.B @ u_applied
    z = y_next - model.C @ x_pred
    return StateEstimate(x_pred, x_pred + sol.K @ z, z)


def plant_step(
    model: SystemModel,
    x: np.ndarray,
    u_applied: np.ndarray,
    w: np.ndarray,
    attack_input: np.ndarray | None = None,
    v: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the plant one step; return (x_next, C x_next + v).

    ``attack_input`` is the attacker term B^a u^a already mapped to state
    space. ``v`` defaults to zero (noise-free output).
    """
    x_next = model.A @ x + model.B @ u_applied + w
    if attack_input is not None:
        x_next = x_next + attack_input
    y = model.C @ x_next
    if v is not None:
        y = y + v
    return x_next, y
