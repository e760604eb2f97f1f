"""Event-triggered correlation detector and the chi-square baseline.

Both detectors only act at trigger times, i.e. steps where the virtual output
energy ||y'||^2 reaches ``mu``. At the kappa-th trigger a statistic g_kappa is
pushed into a window of the last ``window`` statistics; once the window is
full the sum is compared with ``tau`` and an alarm is raised when it falls
below. Correlation: g = y^T y'. Chi-square: g = -z^T (C P C^T + R)^-1 z.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "correlation"
    mu: float | None = None
    mu_factor: float = 0.5
    window: int = 10
    tau: float = 0.0
    per_sensor: bool = False

    def __post_init__(self):
        if self.kind not in ("correlation", "chi2"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be >= 0")

    def resolve_mu(self, expected_corr: float) -> "DetectorConfig":
        """Fix mu as mu_factor times the predicted E[y^T y'] when unset."""
        if self.mu is not None:
            return self
        return replace(self, mu=self.mu_factor * float(expected_corr))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mu": self.mu,
            "mu_factor": self.mu_factor,
            "window": self.window,
            "tau": self.tau,
            "per_sensor": self.per_sensor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        return cls(**{k: d[k] for k in ("kind", "mu", "mu_factor", "window", "tau", "per_sensor") if k in d})


@dataclass(frozen=True)
class DetectorState:
    """``k`` counts processed steps; ``t_kappa`` is the time of the last trigger."""

    k: int = 0
    kappa: int = 0
    t_kappa: int | None = None
    g_window: tuple[float, ...] = ()
    per_sensor: tuple[tuple[float, ...], ...] | None = None
    last_sum: float | None = None


def _mu(cfg: DetectorConfig) -> float:
    if cfg.mu is None:
        raise ValueError("detector mu is unresolved; call DetectorConfig.resolve_mu first")
    return cfg.mu


def _push(cfg: DetectorConfig, state: DetectorState, g: float, per_sensor=None):
    window = (state.g_window + (float(g),))[-cfg.window :]
    ps = state.per_sensor
    if per_sensor is not None:
        old = ps if ps is not None else tuple(() for _ in per_sensor)
        ps = tuple((old[i] + (float(per_sensor[i]),))[-cfg.window :] for i in range(len(per_sensor)))
    new = replace(
        state,
        k=state.k + 1,
        kappa=state.kappa + 1,
        t_kappa=state.k,
        g_window=window,
        per_sensor=ps,
    )
    if len(window) < cfg.window:
        return new, None
    total = float(sum(window))
    new = replace(new, last_sum=total)
    return new, (state.k if total < cfg.tau else None)


def correlation_detector_step(
    cfg: DetectorConfig, state: DetectorState, y: np.ndarray, y_virt: np.ndarray
) -> tuple[DetectorState, int | None]:
    """Process one step; returns the new state and the alarm time, if any."""
    if float(y_virt @ y_virt) < _mu(cfg):
        return replace(state, k=state.k + 1), None
    per_sensor = y * y_virt if cfg.per_sensor else None
    return _push(cfg, state, float(y @ y_virt), per_sensor)


def chi2_detector_step(
    cfg: DetectorConfig,
    state: DetectorState,
    z: np.ndarray,
    Sigma_inv: np.ndarray,
    y_virt: np.ndarray,
) -> tuple[DetectorState, int | None]:
    """Chi-square statistic evaluated at the correlation detector's trigger times."""
    if float(y_virt @ y_virt) < _mu(cfg):
        return replace(state, k=state.k + 1), None
    return _push(cfg, state, -float(z @ Sigma_inv @ z))


def windowed_event_sums(stat: np.ndarray, triggered: np.ndarray, window: int) -> np.ndarray:
    """Batch version of the detectors' decision statistic.

    ``stat`` and ``triggered`` have shape (trials, steps). The result has the
    same shape and holds the window sum at every trigger time where at least
    ``window`` statistics exist, NaN elsewhere.
    """
    out = np.full(stat.shape, np.nan)
    for i in range(stat.shape[0]):
        idx = np.flatnonzero(triggered[i])
        if idx.size < window:
            continue
        cs = np.concatenate([[0.0], np.cumsum(stat[i, idx])])
        sums = cs[window:] - cs[:-window]
        out[i, idx[window - 1 :]] = sums
    return out


def hold_last(decisions: np.ndarray) -> np.ndarray:
    """Zero-order hold of the most recent decision statistic along time."""
    out = np.array(decisions, dtype=float)
    for i in range(out.shape[0]):
        row = out[i]
        valid = ~np.isnan(row)
        if not valid.any():
            continue
        idx = np.where(valid, np.arange(row.size), 0)
        np.maximum.accumulate(idx, out=idx)
        held = row[idx]
        held[: np.argmax(valid)] = np.nan
        out[i] = held
    return out


@dataclass
class TrialRecord:
    """Outcome of one detector over one trial (times are post-burn-in steps)."""

    detector: str
    alarms: np.ndarray
    decision_times: np.ndarray
    decision_stats: np.ndarray
    attack_start: int | None
    n_events: int
    detection_delay: int | None = field(default=None)

    @classmethod
    def from_decisions(
        cls,
        detector: str,
        decisions: np.ndarray,
        tau: float,
        attack_start: int | None,
        n_events: int = 0,
    ) -> "TrialRecord":
        times = np.flatnonzero(~np.isnan(decisions))
        stats = decisions[times]
        alarms = times[stats < tau]
        delay = None
        if attack_start is not None:
            after = alarms[alarms >= attack_start]
            if after.size:
                delay = int(after[0] - attack_start)
        return cls(detector, alarms, times, stats, attack_start, int(n_events), delay)
