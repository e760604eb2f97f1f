"""Monte-Carlo harnesses: single traces, ROC curves, time to detection, fault demo.

All harnesses share one protocol. Trial ``i`` of an experiment draws its
noise from streams keyed by (master seed, i). Attack-free trials use indices
0..N-1 and attacked trials N..2N-1, so the two populations never share noise.
A detector alarms at a trigger time when the window sum of its last
``window`` statistics falls below ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..lqg_drop import IidLqgSolution
from ..sysmodel import KalmanSolution, SystemModel
from .closed_loop import NO_ATTACK, AttackScenario, BatchTraces, ClosedLoop, simulate_trials
from .detectors import DetectorConfig, TrialRecord, hold_last, windowed_event_sums

DEFAULT_DETECTORS = (DetectorConfig("correlation"), DetectorConfig("chi2"))


@dataclass(frozen=True, eq=False)
class Experiment:
    """A closed loop, an attack and the detectors watching it.

    ``eval_window`` is the number of steps after the attack start in which an
    alarm counts as a detection (ROC) or a false alarm; ``None`` means until
    the end of the horizon.
    """

    loop: ClosedLoop
    attack: AttackScenario = NO_ATTACK
    detectors: tuple[DetectorConfig, ...] = DEFAULT_DETECTORS
    horizon: int = 1000
    burn_in: int = 500
    master_seed: int = 0
    eval_window: int | None = None
    threads: int = 1

    def __post_init__(self):
        if self.burn_in < 0 or self.horizon < 1:
            raise ValueError("need burn_in >= 0 and horizon >= 1")
        if not 0 <= self.attack.start_time < self.horizon:
            raise ValueError("attack start must lie within the horizon")
        mu = self.loop.expected_correlation()
        object.__setattr__(self, "detectors", tuple(d.resolve_mu(mu) for d in self.detectors))

    @property
    def eval_slice(self) -> slice:
        start = self.attack.start_time
        stop = self.horizon if self.eval_window is None else min(self.horizon, start + self.eval_window)
        return slice(start, stop)

    def run(self, trials, attack: AttackScenario | None = None, keep_signals=False) -> BatchTraces:
        return simulate_trials(
            self.loop,
            self.attack if attack is None else attack,
            self.horizon,
            self.burn_in,
            self.master_seed,
            trials,
            threads=self.threads,
            keep_signals=keep_signals,
        )


def detector_decisions(cfg: DetectorConfig, traces: BatchTraces) -> tuple[np.ndarray, np.ndarray]:
    """(window sums at decision times, NaN elsewhere; trigger mask) for a detector."""
    triggered = traces.energy >= cfg.mu
    stat = traces.corr if cfg.kind == "correlation" else traces.chi2
    return windowed_event_sums(stat, triggered, cfg.window), triggered


def simulate(exp: Experiment, trial: int = 0) -> tuple[dict[str, TrialRecord], BatchTraces]:
    """One trial: a TrialRecord per detector plus the full per-step traces."""
    tr = exp.run([trial], keep_signals=True)
    start = None if exp.attack.kind == "none" else exp.attack.start_time
    records = {}
    for cfg in exp.detectors:
        dec, trig = detector_decisions(cfg, tr)
        records[cfg.kind] = TrialRecord.from_decisions(cfg.kind, dec[0], cfg.tau, start, int(trig[0].sum()))
    return records, tr


# ----------------------------------------------------------------- ROC


@dataclass
class RocCurve:
    detector: str
    tau: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    null_scores: np.ndarray = field(repr=False)
    attack_scores: np.ndarray = field(repr=False)


def min_decision(decisions: np.ndarray, window: slice) -> np.ndarray:
    """Per-trial smallest window sum in ``window``, +inf when no decision was made.

    A trial raises an alarm at threshold tau iff this score is below tau.
    """
    d = decisions[:, window]
    out = np.full(d.shape[0], np.inf)
    has = ~np.all(np.isnan(d), axis=1)
    out[has] = np.nanmin(d[has], axis=1)
    return out


def alarm_rate(scores: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Fraction of trials alarming at each tau; tau = +inf counts every trial."""
    s = np.sort(scores)
    rate = np.searchsorted(s, tau, side="left") / s.size
    return np.where(np.isposinf(tau), 1.0, rate)


def auc_from_scores(null_scores: np.ndarray, attack_scores: np.ndarray) -> float:
    """P(attacked score < null score) + P(tie)/2 (Mann-Whitney)."""
    a = np.asarray(attack_scores)[:, None]
    n = np.asarray(null_scores)[None, :]
    return float(np.mean((a < n) + 0.5 * (a == n)))


def roc_from_scores(detector: str, null_scores, attack_scores, tau=None) -> RocCurve:
    null_scores = np.asarray(null_scores, float)
    attack_scores = np.asarray(attack_scores, float)
    if tau is None:
        finite = np.concatenate([null_scores, attack_scores])
        finite = np.unique(finite[np.isfinite(finite)])
        # thresholds just above each score so that score < tau fires
        tau = np.concatenate([[-np.inf], np.nextafter(finite, np.inf), [np.inf]])
    tau = np.sort(np.asarray(tau, float))
    return RocCurve(
        detector,
        tau,
        alarm_rate(null_scores, tau),
        alarm_rate(attack_scores, tau),
        auc_from_scores(null_scores, attack_scores),
        null_scores,
        attack_scores,
    )


def run_roc(exp: Experiment, trials: int, tau=None) -> dict[str, RocCurve]:
    """ROC per detector, pooling per-trial alarms over the evaluation window."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    null = exp.run(range(trials), attack=NO_ATTACK)
    att = exp.run(range(trials, 2 * trials))
    out = {}
    for cfg in exp.detectors:
        s0 = min_decision(detector_decisions(cfg, null)[0], exp.eval_slice)
        s1 = min_decision(detector_decisions(cfg, att)[0], exp.eval_slice)
        out[cfg.kind] = roc_from_scores(cfg.kind, s0, s1, tau)
    return out


# ---------------------------------------------------------- detection delay


@dataclass
class DelayStats:
    detector: str
    tau: float
    trials: np.ndarray
    delays: np.ndarray
    detected: np.ndarray
    mean_delay: float
    quantiles: dict[float, float]

    @property
    def detection_rate(self) -> float:
        return float(self.detected.mean()) if self.detected.size else 0.0


def first_alarm_delay(decisions: np.ndarray, tau: float, start: int) -> np.ndarray:
    """Steps from ``start`` to the first alarm at or after it; NaN if none."""
    d = decisions[:, start:]
    alarm = np.ones(d.shape, bool) if np.isposinf(tau) else d < tau
    hit = alarm.any(axis=1)
    out = np.full(d.shape[0], np.nan)
    out[hit] = np.argmax(alarm[hit], axis=1)
    return out


def run_time_to_detection(
    exp: Experiment, tau: float | dict[str, float], trials: int, quantiles=(0.1, 0.5, 0.9)
) -> dict[str, DelayStats]:
    """Detection-delay distribution under the experiment's attack.

    ``tau`` is either one threshold for all detectors or one per detector kind.
    Undetected trials carry NaN delays and are excluded from the mean.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ids = np.arange(trials, 2 * trials)
    att = exp.run(ids)
    out = {}
    for cfg in exp.detectors:
        t = tau[cfg.kind] if isinstance(tau, dict) else tau
        delays = first_alarm_delay(detector_decisions(cfg, att)[0], t, exp.attack.start_time)
        det = ~np.isnan(delays)
        mean = float(delays[det].mean()) if det.any() else np.nan
        qs = {q: (float(np.quantile(delays[det], q)) if det.any() else np.nan) for q in quantiles}
        out[cfg.kind] = DelayStats(cfg.kind, float(t), ids, delays, det, mean, qs)
    return out


# ------------------------------------------------------------ fault demo


@dataclass
class ShiftEstimate:
    """Post-minus-pre change of a per-trial average, with standard errors."""

    pre_mean: float
    post_mean: float
    shift: float
    se_pre: float
    se_shift: float


@dataclass
class FaultTraces:
    k: np.ndarray
    corr: np.ndarray
    chi2: np.ndarray
    triggered: np.ndarray
    shifts: dict[str, ShiftEstimate]


def _shift(held: np.ndarray, pre: slice, post: slice) -> ShiftEstimate:
    a = np.nanmean(held[:, pre], axis=1)
    b = np.nanmean(held[:, post], axis=1)
    ok = ~(np.isnan(a) | np.isnan(b))
    a, b = a[ok], b[ok]
    d = b - a
    n = d.size
    se = lambda x: float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else np.nan
    return ShiftEstimate(float(a.mean()), float(b.mean()), float(d.mean()), se(a), se(d))


def run_fault_demo(
    exp: Experiment, trials: int = 500, pre_steps: int | None = None, settle: int = 100
) -> FaultTraces:
    """Trial-averaged windowed statistics of both detectors around a sensor fault.

    Between decisions each trial holds its last window sum. Shifts compare
    per-trial averages over ``pre_steps`` steps before the fault with those
    from ``settle`` steps after it to the end of the horizon.
    """
    if exp.attack.kind != "fault":
        raise ValueError("fault demo needs a fault attack scenario")
    start = exp.attack.start_time
    pre = slice(max(0, start - (start if pre_steps is None else pre_steps)), start)
    post = slice(min(exp.horizon, start + settle), exp.horizon)
    tr = exp.run(range(trials))
    held, shifts, trig = {}, {}, None
    for cfg in exp.detectors:
        dec, trig = detector_decisions(cfg, tr)
        held[cfg.kind] = hold_last(dec)
        shifts[cfg.kind] = _shift(held[cfg.kind], pre, post)

    def avg(kind):
        h = held.get(kind)
        if h is None:
            return np.full(exp.horizon, np.nan)
        with np.errstate(invalid="ignore"):
            cnt = (~np.isnan(h)).sum(axis=0)
            return np.where(cnt > 0, np.nansum(h, axis=0) / np.maximum(cnt, 1), np.nan)

    return FaultTraces(np.arange(exp.horizon), avg("correlation"), avg("chi2"), trig.mean(axis=0), shifts)


def steady_fault_innovation(
    model: SystemModel, kalman: KalmanSolution, lqg: IidLqgSolution, bias: np.ndarray
) -> np.ndarray:
    """Steady-state mean innovation after a constant sensor bias under IID drops.

    Because eta_k is independent of the estimate, the means follow
    x = A x + pbar B L xf, xp = (A + pbar B L) xf, z = C x + b - C xp,
    xf = xp + K z; this solves that linear system.
    """
    n = model.n
    A, B, C, K, L = model.A, model.B, model.C, kalman.K, lqg.L_b
    pbl = (1.0 - lqg.p_d) * B @ L
    G = A + pbl
    I = np.eye(n)
    x_of_xf = np.linalg.solve(I - A, pbl)
    lhs = I - G + K @ C @ G - K @ C @ x_of_xf
    xf = np.linalg.solve(lhs, K @ bias)
    return C @ x_of_xf @ xf + bias - C @ G @ xf


def predicted_chi2_shift(
    model: SystemModel, kalman: KalmanSolution, lqg: IidLqgSolution, bias: np.ndarray, window: int
) -> float:
    """Asymptotic change of the chi-square window sum caused by the bias."""
    z = steady_fault_innovation(model, kalman, lqg, np.asarray(bias, float))
    return -window * float(z @ np.linalg.solve(kalman.innovation_cov, z))


# ------------------------------------------------------------ MC helpers


def chain_mean(samples: np.ndarray) -> tuple[float, float]:
    """Mean and standard error from independent chains (rows)."""
    m = np.asarray(samples, float).mean(axis=1)
    return float(m.mean()), float(m.std(ddof=1) / np.sqrt(m.size))


def with_detectors(exp: Experiment, **changes) -> Experiment:
    """Copy of ``exp`` with every detector config updated by ``changes``."""
    if "mu_factor" in changes:
        changes.setdefault("mu", None)
    dets = tuple(replace(d, **changes) for d in exp.detectors)
    return replace(exp, detectors=dets)
