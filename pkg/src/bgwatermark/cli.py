"""Command-line entry point: ``bgwatermark <command> --config cfg.json --out dir``.

Commands: design, simulate, roc, ttd, fault, verify. Exit status is 0 on
success, 1 on an infeasible design or a bad config, 2 when a verification
check fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, Setup, build
from .errors import ConfigMismatch, Infeasible, InvalidModel, WatermarkError
from .simkit.experiments import run_fault_demo, run_roc, run_time_to_detection, simulate
from .verify import algebraic_checks, loop_checks

log = logging.getLogger("bgwatermark")


def _num(x) -> str:
    """Stable text form of a number for CSV output."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else _num(c) for c in r])


def _write_json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        raise TypeError(type(o).__name__)

    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=default)
        f.write("\n")


def _design_summary(setup: Setup) -> dict:
    out = {"J_star": setup.J_star, "drop": setup.loop.drop.to_dict()}
    if setup.design is not None:
        out["design"] = setup.design.to_dict()
    out["expected_corr"] = setup.loop.expected_correlation()
    out["J_bar"] = setup.loop.expected_cost()
    return out


def cmd_design(setup: Setup, args) -> int:
    out = Path(args.out)
    _write_json(out / "design.json", _design_summary(setup))
    if setup.design is not None:
        names = ["alpha", "beta"] if setup.loop.drop.kind == "markov" else ["p_d", "omega"]
        rows = [
            (*pt.params, int(pt.feasible), pt.reason, pt.base_cost, pt.objective, pt.cost)
            for pt in setup.design.surface
        ]
        _write_csv(out / "design.csv", names + ["feasible", "reason", "base_cost", "objective", "cost"], rows)
    print(json.dumps({k: v for k, v in _design_summary(setup).items() if k != "design"}, sort_keys=True))
    return 0


def cmd_simulate(setup: Setup, args) -> int:
    exp = setup.experiment(args.seed, args.threads)
    records, tr = simulate(exp, trial=0)
    corr_cfg = next(d for d in exp.detectors if d.kind == "correlation")
    triggered = tr.energy[0] >= corr_cfg.mu
    rows = zip(range(exp.horizon), tr.corr[0], tr.chi2[0], triggered.astype(int))
    out = Path(args.out)
    _write_csv(out / "trace.csv", ["k", "stat_corr", "stat_chi2", "triggered"], rows)
    summary = {
        kind: {
            "alarms": r.alarms.tolist(),
            "n_events": r.n_events,
            "attack_start": r.attack_start,
            "detection_delay": r.detection_delay,
        }
        for kind, r in records.items()
    }
    _write_json(out / "simulate.json", summary)
    return 0


def cmd_roc(setup: Setup, args) -> int:
    exp = setup.experiment(args.seed, args.threads)
    trials = int(setup.config.experiment.get("trials", 200))
    tau = setup.config.detector.get("tau_sweep")
    curves = run_roc(exp, trials, tau)
    rows = [(k, t, f, p) for k, c in curves.items() for t, f, p in zip(c.tau, c.fpr, c.tpr)]
    out = Path(args.out)
    _write_csv(out / "roc.csv", ["detector", "tau", "fpr", "tpr"], rows)
    _write_json(out / "roc.json", {k: {"auc": c.auc} for k, c in curves.items()})
    for k, c in curves.items():
        print(f"{k}: AUC={c.auc:.4f}")
    return 0


def cmd_ttd(setup: Setup, args) -> int:
    exp = setup.experiment(args.seed, args.threads)
    trials = int(setup.config.experiment.get("trials", 200))
    tau = setup.config.detector.get("tau_ttd", setup.config.detector.get("tau", 0.0))
    stats = run_time_to_detection(exp, tau, trials)
    rows = [
        (k, s.tau, int(i), s.delays[j], int(s.detected[j]))
        for k, s in stats.items()
        for j, i in enumerate(s.trials)
    ]
    out = Path(args.out)
    _write_csv(out / "ttd.csv", ["detector", "tau", "trial", "delay", "detected"], rows)
    summary = {
        k: {"mean_delay": s.mean_delay, "detection_rate": s.detection_rate, "quantiles": {str(q): v for q, v in s.quantiles.items()}}
        for k, s in stats.items()
    }
    _write_json(out / "ttd.json", summary)
    return 0


def cmd_fault(setup: Setup, args) -> int:
    exp = setup.experiment(args.seed, args.threads)
    if exp.attack.kind != "fault":
        raise ConfigMismatch("the fault command needs experiment.attack.kind = 'fault'")
    e = setup.config.experiment
    res = run_fault_demo(exp, int(e.get("trials", 500)), e.get("pre_steps"), int(e.get("settle", 100)))
    out = Path(args.out)
    _write_csv(out / "trace.csv", ["k", "stat_corr", "stat_chi2", "triggered"], zip(res.k, res.corr, res.chi2, res.triggered))
    _write_json(out / "fault.json", {k: vars(s) for k, s in res.shifts.items()})
    for k, s in res.shifts.items():
        print(f"{k}: shift={s.shift:.4g} se_shift={s.se_shift:.3g} se_pre={s.se_pre:.3g}")
    return 0


def cmd_verify(setup: Setup, args) -> int:
    seed = int(setup.config.experiment.get("master_seed", 0) if args.seed is None else args.seed)
    checks = algebraic_checks(setup.model, setup.kalman, rng_seed=seed)
    v = setup.config.experiment.get("verify", {})
    checks += loop_checks(setup.loop, int(v.get("chains", 64)), int(v.get("steps", 4000)), seed=seed)
    for c in checks:
        print(c.line())
    _write_json(Path(args.out) / "verify.json", [vars(c) for c in checks])
    return 0 if all(c.passed for c in checks) else 2


COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "roc": cmd_roc,
    "ttd": cmd_ttd,
    "fault": cmd_fault,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgwatermark", description="Bernoulli-Gaussian watermark design and detection experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="override experiment.master_seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for trials and grid search")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        setup = build(cfg, threads=args.threads)
        return COMMANDS[args.command](setup, args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except (ConfigMismatch, InvalidModel, KeyError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except WatermarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
