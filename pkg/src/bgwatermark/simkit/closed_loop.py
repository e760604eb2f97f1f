"""Batched closed-loop simulation of the watermarked plant.

One call simulates a batch of independent trials in lock-step. Every trial
draws all of its noise up front from its own streams (see :mod:`.rng`), so a
trial's trajectory depends only on (master seed, trial index) and on the
fixed chunk it is simulated in.

Per step the defender

1. receives y_k (possibly replaced by the attacker) and forms the innovation
   z_k = y_k - C xhat_{k|k-1} and the filtered estimate,
2. computes u_k = L xhat_{k|k}, adds the watermark and sends it through the
   drop channel: u_{k,c} = eta_k (u_k + du_k),
3. propagates its virtual state x'_{k+1} = (A + eta_k B L) x'_k + eta_k B du_k.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigMismatch
from ..lqg_drop import DropModel, IidLqgSolution, MarkovLqgSolution
from ..sysmodel import KalmanSolution, SystemModel
from ..wm_design import (
    HmmWatermark,
    IidGaussianWatermark,
    hmm_stationary_moments,
    wm1_correlation,
    wm1_cost,
)
from .rng import stream


def _sqrt_psd(M: np.ndarray) -> np.ndarray:
    """S with S S^T = M for PSD (possibly singular) M."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """A designed operating point: plant, filter, controller, drops, watermark.

    Markov drops pair with the IID Gaussian watermark and the Markov LQG
    gain; IID drops pair with the HMM watermark and the IID LQG gain.
    """

    model: SystemModel
    kalman: KalmanSolution
    lqg: IidLqgSolution | MarkovLqgSolution
    drop: DropModel
    watermark: IidGaussianWatermark | HmmWatermark

    def __post_init__(self):
        d = self.drop
        if d.kind == "markov":
            if not isinstance(self.lqg, MarkovLqgSolution) or not isinstance(self.watermark, IidGaussianWatermark):
                raise ConfigMismatch("Markov drops require a Markov LQG solution and an IID Gaussian watermark")
            if (self.lqg.alpha, self.lqg.beta) != (d.alpha, d.beta):
                raise ConfigMismatch("LQG solution was computed for different (alpha, beta)")
            if self.watermark.Qwm.shape != (self.model.p, self.model.p):
                raise ConfigMismatch("watermark covariance has the wrong size")
        else:
            if not isinstance(self.lqg, IidLqgSolution) or not isinstance(self.watermark, HmmWatermark):
                raise ConfigMismatch("IID drops require an IID LQG solution and an HMM watermark")
            if self.lqg.p_d != d.p_d:
                raise ConfigMismatch("LQG solution was computed for a different p_d")
            if self.watermark.p != self.model.p:
                raise ConfigMismatch("HMM output dimension does not match the input dimension")

    @property
    def gain(self) -> np.ndarray:
        return self.lqg.L_m if isinstance(self.lqg, MarkovLqgSolution) else self.lqg.L_b

    def expected_correlation(self) -> float:
        """Analytic lim E[y_k^T y'_k] under normal operation."""
        if self.drop.kind == "markov":
            d = self.drop
            return wm1_correlation(self.model, d.alpha, d.beta, self.watermark.Qwm, self.lqg).expected_corr
        return hmm_stationary_moments(self.model, self.lqg, self.watermark).expected_corr

    def expected_cost(self) -> float:
        """Analytic average LQG cost including the watermark."""
        if self.drop.kind == "markov":
            d = self.drop
            return wm1_cost(self.model, d.alpha, d.beta, self.watermark.Qwm, self.lqg)
        return self.lqg.J_b + hmm_stationary_moments(self.model, self.lqg, self.watermark).extra_cost


@dataclass(frozen=True, eq=False)
class AttackScenario:
    """What happens to the measurement stream from ``start_time`` on.

    kind:
        ``none``     no attack.
        ``replay``   y_k <- y_{k - offset}, looping over a recorded segment of
                     ``record_len`` steps (offset defaults to record_len).
        ``virtual``  y_k <- output of an attacker-run copy of the closed loop
                     driven by independent noise, drops and watermark.
        ``copy``     y_k <- y_k (the attacker forwards true outputs).
        ``fault``    y_k <- y_k + bias on the sensors in ``sensors``.

    ``B_a`` and ``u_a`` add a constant attacker input B_a u_a to the plant.
    """

    kind: str = "none"
    start_time: int = 0
    record_len: int = 0
    offset: int | None = None
    bias: np.ndarray | None = None
    sensors: tuple[int, ...] | None = None
    B_a: np.ndarray | None = None
    u_a: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "replay", "virtual", "copy", "fault"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "replay" and self.record_len < 1:
            raise ValueError("replay needs record_len >= 1")
        if self.kind == "fault" and self.bias is None:
            raise ValueError("fault needs a bias vector")

    @property
    def replay_offset(self) -> int:
        return self.record_len if self.offset is None else self.offset

    def fault_vector(self, m: int) -> np.ndarray:
        b = np.zeros(m) if self.bias is None else np.broadcast_to(np.asarray(self.bias, float), (m,)).copy()
        if self.sensors is not None:
            mask = np.zeros(m, bool)
            mask[list(self.sensors)] = True
            b[~mask] = 0.0
        return b

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "start_time": self.start_time}
        if self.kind == "replay":
            d["record_len"] = self.record_len
            if self.offset is not None:
                d["offset"] = self.offset
        if self.bias is not None:
            d["bias"] = np.asarray(self.bias, float).tolist()
        if self.sensors is not None:
            d["sensors"] = list(self.sensors)
        if self.B_a is not None:
            d["B_a"] = np.asarray(self.B_a).tolist()
            d["u_a"] = np.asarray(self.u_a).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackScenario":
        return cls(
            kind=d.get("kind", "none"),
            start_time=int(d.get("start_time", 0)),
            record_len=int(d.get("record_len", 0)),
            offset=d.get("offset"),
            bias=None if d.get("bias") is None else np.asarray(d["bias"], float),
            sensors=None if d.get("sensors") is None else tuple(d["sensors"]),
            B_a=None if d.get("B_a") is None else np.asarray(d["B_a"], float),
            u_a=None if d.get("u_a") is None else np.asarray(d["u_a"], float),
        )


NO_ATTACK = AttackScenario()


@dataclass
class BatchTraces:
    """Per-trial, per-step records after burn-in, each of shape (trials, horizon).

    ``corr`` is y_k^T y'_k, ``energy`` is ||y'_k||^2, ``chi2`` is
    -z_k^T (C P C^T + R)^-1 z_k, ``cost`` the stage cost and ``eta`` the drop
    indicator. ``y``, ``y_virt`` and ``z`` are kept only on request.
    """

    trials: np.ndarray
    corr: np.ndarray
    energy: np.ndarray
    chi2: np.ndarray
    cost: np.ndarray
    eta: np.ndarray
    y: np.ndarray | None = None
    y_true: np.ndarray | None = None
    y_virt: np.ndarray | None = None
    z: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def concat(cls, parts: list["BatchTraces"]) -> "BatchTraces":
        def cat(name):
            vals = [getattr(p, name) for p in parts]
            return None if vals[0] is None else np.concatenate(vals, axis=0)

        names = ("trials", "corr", "energy", "chi2", "cost", "eta", "y", "y_true", "y_virt", "z")
        return cls(**{k: cat(k) for k in names})


class _Channel:
    """Drop process and watermark generator for one side (defender or attacker)."""

    def __init__(self, loop: ClosedLoop, trials, seed, total, prefix: str):
        model, drop, wm = loop.model, loop.drop, loop.watermark
        self.drop = drop
        B = len(trials)
        self.u = np.stack([stream(seed, t, prefix + "eta").random(total + 1) for t in trials], axis=1)
        gens = [stream(seed, t, prefix + "wm") for t in trials]
        if isinstance(wm, IidGaussianWatermark):
            self.hmm = None
            root = _sqrt_psd(wm.Qwm)
            self.du = np.stack([g.standard_normal((total, model.p)) for g in gens], axis=1) @ root.T
        else:
            self.hmm = wm
            hdim = wm.A_w.shape[0]
            draws = np.stack([g.standard_normal((total + 1, hdim)) for g in gens], axis=1)
            self.zeta = draws[0] @ _sqrt_psd(wm.Z0).T
            self.psi = draws[1:] @ _sqrt_psd(wm.Psi).T
            self.A_wT = wm.A_w.T
            self.C_hT = wm.C_h.T
        if drop.kind == "markov":
            p0 = drop.beta / (drop.alpha + drop.beta)
            self.eta = (self.u[0] >= p0).astype(float)
        else:
            self.eta = np.ones(B)

    def draw(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """(eta_t, du_t) for all trials."""
        u = self.u[t + 1]
        d = self.drop
        if d.kind == "iid":
            self.eta = (u >= d.p_d).astype(float)
        else:
            prev = self.eta
            self.eta = np.where(prev == 0.0, u < d.alpha, u >= d.beta).astype(float)
        if self.hmm is None:
            du = self.du[t]
        else:
            du = self.zeta @ self.C_hT
            self.zeta = self.zeta @ self.A_wT + self.psi[t]
        return self.eta, du


def simulate_batch(
    loop: ClosedLoop,
    attack: AttackScenario,
    horizon: int,
    burn_in: int,
    master_seed: int,
    trials,
    keep_signals: bool = False,
) -> BatchTraces:
    """Simulate ``trials`` (an iterable of trial indices) in lock-step."""
    trials = np.asarray(list(trials), dtype=np.int64)
    model, kal = loop.model, loop.kalman
    n, p, m = model.n, model.p, model.m
    B = trials.size
    total = burn_in + horizon
    start = burn_in + attack.start_time
    if attack.kind == "replay" and start - attack.replay_offset < 0:
        raise ValueError("replay recording would start before the simulation")

    AT, BT, CT, KT = model.A.T, model.B.T, model.C.T, kal.K.T
    LT = loop.gain.T
    W, U = model.W, model.U
    Sinv = np.linalg.inv(kal.innovation_cov)
    rootQ, rootR = _sqrt_psd(model.Q).T, _sqrt_psd(model.R).T

    w = np.stack([stream(master_seed, t, "w").standard_normal((total, n)) for t in trials], axis=1) @ rootQ
    v = np.stack([stream(master_seed, t, "v").standard_normal((total, m)) for t in trials], axis=1) @ rootR
    chan = _Channel(loop, trials, master_seed, total, "")

    virtual = attack.kind == "virtual"
    if virtual:
        wa = np.stack([stream(master_seed, t, "attacker_w").standard_normal((total, n)) for t in trials], axis=1) @ rootQ
        va = np.stack([stream(master_seed, t, "attacker_v").standard_normal((total, m)) for t in trials], axis=1) @ rootR
        chan_a = _Channel(loop, trials, master_seed, total, "attacker_")
        xa = np.zeros((B, n))
        ya = va[0]
        xa_filt = ya @ KT
    fault = attack.fault_vector(m) if attack.kind == "fault" else None
    attack_input = None
    if attack.B_a is not None and attack.u_a is not None:
        attack_input = np.asarray(attack.B_a, float) @ np.asarray(attack.u_a, float)
    replay = attack.kind == "replay"
    history = np.empty((total, B, m)) if replay else None

    H = horizon
    out = {k: np.empty((H, B)) for k in ("corr", "energy", "chi2", "cost", "eta")}
    sig = {k: np.empty((H, B, m)) for k in ("y", "y_true", "y_virt", "z")} if keep_signals else None

    def received(t, y_true):
        if t < start or attack.kind in ("none", "copy"):
            return y_true
        if replay:
            return history[start - attack.replay_offset + ((t - start) % attack.record_len)].copy()
        if virtual:
            return ya
        return y_true + fault

    x = np.zeros((B, n))
    xv = np.zeros((B, n))
    y_true = v[0].copy()
    if replay:
        history[0] = y_true
    y = received(0, y_true)
    z = y.copy()
    x_filt = z @ KT

    for t in range(total):
        k = t - burn_in
        yv = xv @ CT
        eta, du = chan.draw(t)
        uc = eta[:, None] * (x_filt @ LT + du)
        if k >= 0:
            out["corr"][k] = np.einsum("ij,ij->i", y, yv)
            out["energy"][k] = np.einsum("ij,ij->i", yv, yv)
            out["chi2"][k] = -np.einsum("ij,jk,ik->i", z, Sinv, z)
            out["cost"][k] = np.einsum("ij,jk,ik->i", x, W, x) + np.einsum("ij,jk,ik->i", uc, U, uc)
            out["eta"][k] = eta
            if keep_signals:
                sig["y"][k], sig["y_true"][k], sig["y_virt"][k], sig["z"][k] = y, y_true, yv, z
        if t == total - 1:
            break

        x = x @ AT + uc @ BT + w[t]
        if attack_input is not None and t + 1 > start:
            x = x + attack_input
        xv = xv @ AT + eta[:, None] * ((xv @ LT + du) @ BT)
        y_true = x @ CT + v[t + 1]

        if virtual:
            eta_a, du_a = chan_a.draw(t)
            uc_a = eta_a[:, None] * (xa_filt @ LT + du_a)
            xa = xa @ AT + uc_a @ BT + wa[t]
            ya = xa @ CT + va[t + 1]
            xa_pred = xa_filt @ AT + uc_a @ BT
            xa_filt = xa_pred + (ya - xa_pred @ CT) @ KT

        if replay:
            history[t + 1] = y_true
        y = received(t + 1, y_true)

        x_pred = x_filt @ AT + uc @ BT
        z = y - x_pred @ CT
        x_filt = x_pred + z @ KT

    res = BatchTraces(trials, **{k: a.T.copy() for k, a in out.items()})
    if keep_signals:
        for k, a in sig.items():
            setattr(res, k, np.transpose(a, (1, 0, 2)).copy())
    return res


def simulate_trials(
    loop: ClosedLoop,
    attack: AttackScenario,
    horizon: int,
    burn_in: int,
    master_seed: int,
    trials,
    threads: int = 1,
    chunk: int = 128,
    keep_signals: bool = False,
) -> BatchTraces:
    """Chunked :func:`simulate_batch`.

    Trials are split into consecutive fixed-size chunks, so results are
    independent of ``threads``.
    """
    trials = list(trials)
    chunks = [trials[i : i + chunk] for i in range(0, len(trials), chunk)]

    def run(c):
        return simulate_batch(loop, attack, horizon, burn_in, master_seed, c, keep_signals)

    if threads <= 1 or len(chunks) == 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    return BatchTraces.concat(parts)
