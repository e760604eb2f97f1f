"""JSON experiment configuration and its translation into runnable objects.

A config has five sections::

    {
      "system":     {"generator": {"n": 5, "p": 4, "m": 2, "spectral_radius": 0.8, "seed": 1}}
                    or {"matrices": {"A": [[...]], "B": ..., "C": ..., "Q": ..., "R": ..., "W": ..., "U": ...}},
      "drop":       {"kind": "markov", "alpha": 0.69, "beta": 0.9} or {"kind": "iid", "p_d": 0.6} or null,
      "watermark":  {"type": "wm1" | "wm2", "delta_factor": 1.45, ...}
                    or {"type": "iid_gaussian", "Qwm": [[...]]} or {"type": "hmm", ...},
      "detector":   {"window": 5, "mu_factor": 0.5, "tau": 0.0, "tau_sweep": null},
      "experiment": {"trials": 200, "horizon": 120, "burn_in": 500, "master_seed": 0,
                     "eval_window": 20, "attack": {"kind": "replay", ...}}
    }

Matrices are row-major nested lists. ``delta_factor`` is a multiple of J*,
the optimal cost without drops or watermark; ``delta`` gives the budget
directly. When a designer watermark is combined with an explicit ``drop``
section, the design is done at that drop parameter only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigMismatch
from .lqg_drop import DropModel, solve_iid_lqg, solve_markov_lqg
from .simkit.closed_loop import AttackScenario, ClosedLoop
from .simkit.detectors import DetectorConfig
from .simkit.experiments import Experiment
from .sysmodel import KalmanSolution, SystemModel, random_system, solve_dare
from .wm_design import (
    DEFAULT_AB_GRID,
    DEFAULT_OMEGA_GRID,
    DEFAULT_PD_GRID,
    HmmWatermark,
    IidGaussianWatermark,
    Wm1Design,
    Wm2Design,
    design_wm1,
    design_wm2,
    hmm_from_atom,
)

SECTIONS = ("system", "drop", "watermark", "detector", "experiment")


@dataclass
class ExperimentConfig:
    system: dict = field(default_factory=lambda: {"generator": {"n": 2, "p": 1, "m": 1, "seed": 0}})
    drop: dict | None = None
    watermark: dict = field(default_factory=lambda: {"type": "wm1", "delta_factor": 1.45})
    detector: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigMismatch(f"unknown config sections: {sorted(unknown)}")
        base = cls()
        kw = {k: d.get(k, getattr(base, k)) for k in SECTIONS}
        for k in ("system", "watermark", "detector", "experiment"):
            if not isinstance(kw[k], dict):
                raise ConfigMismatch(f"config section {k!r} must be an object")
        return cls(**kw)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.loads(f.read())


def build_system(spec: dict) -> SystemModel:
    if "matrices" in spec:
        return SystemModel.from_dict(spec["matrices"])
    g = spec.get("generator")
    if g is None:
        raise ConfigMismatch("system needs either 'matrices' or 'generator'")
    return random_system(
        int(g["n"]),
        int(g["p"]),
        int(g["m"]),
        spectral_radius_target=float(g.get("spectral_radius", 0.8)),
        rng=np.random.default_rng(int(g.get("seed", 0))),
    )


def optimal_cost(model: SystemModel, kalman: KalmanSolution | None = None) -> float:
    """J*: the LQG cost without drops or watermark."""
    return solve_iid_lqg(model, 0.0, kalman=kalman).J_b


@dataclass(eq=False)
class Setup:
    """Everything derived from a config before any Monte Carlo runs."""

    config: ExperimentConfig
    model: SystemModel
    kalman: KalmanSolution
    J_star: float
    design: Wm1Design | Wm2Design | None
    loop: ClosedLoop

    def experiment(self, seed: int | None = None, threads: int = 1) -> Experiment:
        e = self.config.experiment
        d = self.config.detector
        det = {k: d[k] for k in ("window", "mu", "mu_factor", "tau", "per_sensor") if k in d}
        dets = (DetectorConfig("correlation", **det), DetectorConfig("chi2", **det))
        return Experiment(
            self.loop,
            attack=AttackScenario.from_dict(e.get("attack", {"kind": "none"})),
            detectors=dets,
            horizon=int(e.get("horizon", 1000)),
            burn_in=int(e.get("burn_in", 500)),
            master_seed=int(e.get("master_seed", 0) if seed is None else seed),
            eval_window=e.get("eval_window"),
            threads=threads,
        )


def _budget(wm: dict, J_star: float) -> float:
    if "delta" in wm:
        return float(wm["delta"])
    return float(wm.get("delta_factor", 1.45)) * J_star


def build(cfg: ExperimentConfig, threads: int = 1) -> Setup:
    """Resolve the config into a model, a designed or explicit watermark, and a closed loop.

    Raises:
        ConfigMismatch: incompatible sections.
        Infeasible: the designer found no point within budget.
    """
    model = build_system(cfg.system)
    kalman = solve_dare(model)
    J_star = optimal_cost(model, kalman)
    wm = cfg.watermark
    drop = None if cfg.drop is None else DropModel.from_dict(cfg.drop)
    kind = wm.get("type")
    design = None
    if kind == "wm1":
        if drop is not None and drop.kind != "markov":
            raise ConfigMismatch("watermark 1 needs Markov drops")
        grid = [(drop.alpha, drop.beta)] if drop is not None else wm.get("grid")
        if grid is None:
            ab = wm.get("ab_values", DEFAULT_AB_GRID)
            grid = [(a, b) for a in ab for b in ab]
        design = design_wm1(model, _budget(wm, J_star), grid, wm.get("natural_pd", 0.0), threads)
        drop = DropModel.markov(design.alpha, design.beta)
        lqg, watermark = design.lqg, design.watermark
    elif kind == "wm2":
        if drop is not None and drop.kind != "iid":
            raise ConfigMismatch("watermark 2 needs IID drops")
        pd_grid = [drop.p_d] if drop is not None else wm.get("pd_grid", DEFAULT_PD_GRID)
        design = design_wm2(
            model,
            _budget(wm, J_star),
            float(wm.get("rho_bar", 0.8)),
            wm.get("omega_grid", DEFAULT_OMEGA_GRID),
            pd_grid,
            wm.get("natural_pd", 0.0),
            threads,
        )
        drop = DropModel.iid(design.p_d)
        lqg, watermark = design.lqg, design.hmm
    else:
        if drop is None:
            raise ConfigMismatch("an explicit watermark needs a drop section")
        if kind == "iid_gaussian":
            watermark = IidGaussianWatermark(np.asarray(wm["Qwm"], float))
        elif kind == "hmm":
            watermark = HmmWatermark.from_dict(wm)
        elif kind == "atom":
            h = np.asarray(wm["h_re"], float) + 1j * np.asarray(wm.get("h_im", np.zeros(len(wm["h_re"]))), float)
            watermark = hmm_from_atom(float(wm["omega"]), h, float(wm.get("rho_bar", 0.8)))
        else:
            raise ConfigMismatch(f"unknown watermark type {kind!r}")
        if drop.kind == "markov":
            lqg = solve_markov_lqg(model, drop.alpha, drop.beta, kalman=kalman)
        else:
            lqg = solve_iid_lqg(model, drop.p_d, kalman=kalman)
    loop = ClosedLoop(model, kalman, lqg, drop, watermark)
    return Setup(cfg, model, kalman, J_star, design, loop)
