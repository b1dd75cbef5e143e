"""Command-line entry point: run a scenario, sweep one parameter, list presets.

    pmqkd run lab_50km --out runs/lab
    pmqkd sweep urban_30km --param pulse.pmd_compensation --values true false
    pmqkd presets list

Every output file is a pure function of the scenario and its seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .protocol import SessionStats, run_session
from .scenario import Scenario, ScenarioError, field_names, preset_names, resolve

log = logging.getLogger(__name__)

SERIES_HEADER = ("t_seconds", "qber", "window_sifted_bits")
SWEEP_HEADER = (
    "value",
    "sifted_rate_bps",
    "qber",
    "mean_window_qber",
    "duty_cycle_data",
    "recalibrations",
    "intrinsic_error",
    "calibrated_qber",
)


class OutputError(RuntimeError):
    pass


def simulate(scenario: Scenario, duration_s: float | None = None) -> SessionStats:
    duration = scenario.duration_s if duration_s is None else duration_s
    return run_session(scenario, duration, np.random.default_rng(scenario.seed))


def summary(scenario: Scenario, stats: SessionStats) -> dict:
    return {
        "version": __version__,
        "scenario": scenario.to_dict(),
        "intrinsic_error": scenario.intrinsic_error(),
        "fitted_parameters": ["detector.efficiency", "detector.dark_prob", "drift_rate"],
        "session": stats.to_dict(),
        "calibrations": [r.to_dict() for r in stats.calibrations],
    }


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err.strerror or err}") from None


def write_series(path: Path, stats: SessionStats) -> None:
    try:
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(SERIES_HEADER)
            for p in stats.qber_series:
                w.writerow([repr(round(p.t_seconds, 6)), repr(p.qber), p.window_sifted_bits])
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err.strerror or err}") from None


def write_plot(path: Path, stats: SessionStats, threshold: float) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "pmqkd"
    t = np.array([p.t_seconds for p in stats.qber_series]) / 3600.0
    q = np.array([p.qber for p in stats.qber_series]) * 100.0
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, q, lw=0.8)
    ax.axhline(threshold * 100.0, color="k", ls="--", lw=0.8, label="recalibration threshold")
    ax.set_xlabel("time (h)")
    ax.set_ylabel("QBER (%)")
    ax.legend(loc="upper right")
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err.strerror or err}") from None
    finally:
        plt.close(fig)


def run(scenario: Scenario, out_dir: Path, duration_s: float | None = None, plot: bool = False) -> dict:
    """Simulate ``scenario`` and write summary.json, qber_series.csv and optionally qber.svg."""
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OutputError(f"cannot create {out_dir}: {err.strerror or err}") from None
    stats = simulate(scenario, duration_s)
    doc = summary(scenario, stats)
    _write(out_dir / "summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_series(out_dir / "qber_series.csv", stats)
    if plot:
        write_plot(out_dir / "qber.svg", stats, scenario.qber_threshold)
    return doc


def sweep(scenario: Scenario, parameter: str, values: list, duration_s: float | None = None) -> list[dict]:
    """One run per value of ``parameter`` (dotted for nested fields), all with the same seed."""
    if not values:
        raise ScenarioError("sweep needs at least one value")
    if parameter not in field_names():
        raise ScenarioError(f"unknown scenario field {parameter!r}")
    rows = []
    for value in values:
        sc = scenario.with_value(parameter, value)
        stats = simulate(sc, duration_s)
        d = stats.to_dict()
        rows.append(
            {
                "value": value,
                "sifted_rate_bps": d["sifted_rate_bps"],
                "qber": d["qber"],
                "mean_window_qber": d["mean_window_qber"],
                "duty_cycle_data": d["duty_cycle_data"],
                "recalibrations": d["recalibrations"],
                "intrinsic_error": sc.intrinsic_error(),
                "calibrated_qber": stats.calibrations[-1].final_qber if stats.calibrations else None,
            }
        )
    return rows


def _scenario(args) -> Scenario:
    sc = resolve(args.config)
    if args.seed is not None:
        sc = sc.with_value("seed", args.seed)
    return sc


def _cmd_run(args) -> int:
    sc = _scenario(args)
    doc = run(sc, Path(args.out), args.duration, args.plot)
    s = doc["session"]
    print(
        f"{sc.name}: sifted {s['sifted']} bits, rate {s['sifted_rate_bps']:.1f} bit/s, "
        f"QBER {100 * s['qber']:.2f}%, data duty {s['duty_cycle_data']:.2f}, "
        f"{s['recalibrations']} recalibrations -> {args.out}"
    )
    return 0


def _cmd_sweep(args) -> int:
    sc = _scenario(args)
    values = [yaml.safe_load(v) for v in args.values]
    rows = sweep(sc, args.param, values, args.duration)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sweep.csv").open("w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=SWEEP_HEADER)
            w.writeheader()
            w.writerows(rows)
    except OSError as err:
        raise OutputError(f"cannot write {out / 'sweep.csv'}: {err.strerror or err}") from None
    print(f"{args.param:>24}  rate(bit/s)  QBER(%)  duty")
    for r in rows:
        print(f"{str(r['value']):>24}  {r['sifted_rate_bps']:11.1f}  {100 * r['qber']:7.2f}  {r['duty_cycle_data']:.2f}")
    return 0


def _cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmqkd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="preset name or path to a scenario YAML file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", default="pmqkd_out", help="output directory")
        p.add_argument("--duration", type=float, help="override duration_s (seconds)")

    p_run = sub.add_parser("run", help="simulate one scenario")
    common(p_run)
    p_run.add_argument("--plot", action="store_true", help="also write qber.svg")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="rerun a scenario for several values of one field")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="field name, dotted for nested fields")
    p_sweep.add_argument("--values", nargs="*", default=[], help="values, parsed as YAML scalars")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_presets = sub.add_parser("presets", help="bundled scenarios")
    p_presets.add_argument("action", choices=["list"])
    p_presets.set_defaults(func=_cmd_presets)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OutputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
