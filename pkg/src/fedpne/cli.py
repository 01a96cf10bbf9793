"""Command-line entry point: ``fedpne run | plot | oracle``.

Every failure ends in exactly one line on stderr of the form
``fedpne: error: <kind>: <detail>`` and a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import csvio
from .harness import (HarnessError, RunAggregate, aggregate_runs, communication_check,
                      cumulative_regret, estimate_fstar, run_experiment, run_grid_baseline)
from .objectives import ObjectiveError
from .oracle import OracleError
from .plotting import PlotError, render_regret_plot
from .privacy import PrivacyError
from .protocol import ConfigError, ProtocolError
from .seir import SeirError, SeirParams, seir_objective

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUN = 4
EXIT_IO = 5


class CliFailure(Exception):
    def __init__(self, kind: str, detail: str, code: int):
        super().__init__(detail)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliFailure("usage", message, EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedpne", description="Federated phased node elimination experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run all seeds of one experiment config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--seed-override", type=int, default=None, metavar="N",
                     help="run only seed N instead of the configured list")
    run.add_argument("--out", type=Path, default=None, help="output directory")
    run.add_argument("--algo", choices=("fedpne", "dp-fedpne", "grid"), default=None)
    run.add_argument("--preset", choices=cfgmod.PRESETS, default=None)

    plot = sub.add_parser("plot", help="plot summary.csv of one or more run directories")
    plot.add_argument("--in", dest="inputs", required=True, type=Path, action="append",
                      help="run output directory (repeatable)")
    plot.add_argument("--out", required=True, type=Path, help="image file (.svg, .pdf or .png)")

    orc = sub.add_parser("oracle", help="dense-grid f* and argmax of a global objective")
    orc.add_argument("--objective", required=True, choices=("garland", "double_sine", "seir"))
    orc.add_argument("--resolution", type=int, default=None,
                     help="grid points per axis (default 1e6, 2000 for seir)")
    orc.add_argument("--rho1", type=float, default=0.8)
    orc.add_argument("--rho2", type=float, default=0.3)
    return p


def resolve_config(args) -> cfgmod.ExperimentConfig:
    raw = cfgmod.load_raw(args.config)
    if args.algo is not None:
        raw["algorithm"] = cfgmod.ALGO_ALIASES.get(args.algo, args.algo)
        if args.algo == "dp-fedpne":
            raw.setdefault("dp", {}).setdefault("enabled", True)
        elif isinstance(raw.get("dp"), dict):
            raw["dp"]["enabled"] = False
    if args.preset is not None:
        raw["preset"] = args.preset
    if args.seed_override is not None:
        raw["seeds"] = [args.seed_override]
    return cfgmod.from_dict(raw)


def single_run_summary(series: np.ndarray) -> RunAggregate:
    return RunAggregate(np.arange(1, len(series) + 1), series, np.zeros_like(series), 1)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = args.out if args.out is not None else Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True)
                                         + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliFailure("io", f"{out}: {exc.strerror or exc}", EXIT_IO) from None

    setup = cfg.run_setup()
    traces = []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        if cfg.algorithm == "grid-baseline":
            trace = run_grid_baseline(setup, cfg.arms_per_axis, seed)
        else:
            trace = run_experiment(setup, seed)
        elapsed = time.perf_counter() - t0
        csvio.emit_trace(trace, out / f"trace_seed{seed}.csv")
        csvio.emit_communication(trace, out / f"communication_seed{seed}.csv")
        summ = cumulative_regret(trace)
        final = float(summ.average[-1]) if summ.average.size else 0.0
        line = (f"seed={seed} algorithm={trace.algorithm} phases={summ.phases} "
                f"events={summ.events} fstar={trace.fstar:.6f} final_avg_regret={final:.6f}")
        if cfg.algorithm != "grid-baseline":
            chk = communication_check(trace, setup.effective_server())
            bound = "n/a" if chk.bound is None else f"{math.ceil(chk.bound)}"
            line += f" phase_bound={bound}"
        print(f"{line} time={elapsed:.2f}s", flush=True)
        traces.append(trace)

    if len(traces) > 1:
        agg = aggregate_runs(traces)
    else:
        agg = single_run_summary(cumulative_regret(traces[0]).average)
    csvio.emit_summary(agg, out / "summary.csv")
    render_regret_plot([agg], out / "regret.svg", labels=[f"M={cfg.server.M}"],
                       title=f"{cfg.algorithm} on {cfg.objective.name}")
    print(f"wrote {out}", flush=True)
    return 0


def _label_for(run_dir: Path) -> str:
    try:
        resolved = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        return f"M={resolved['server']['M']}"
    except (OSError, ValueError, KeyError, TypeError):
        return run_dir.name


def cmd_plot(args) -> int:
    summaries, labels = [], []
    for d in args.inputs:
        summaries.append(csvio.read_summary(d / "summary.csv"))
        labels.append(_label_for(d))
    render_regret_plot(summaries, args.out, labels=labels)
    print(f"wrote {args.out}")
    return 0


def oracle_objective(name: str, rho1: float, rho2: float):
    if name == "seir":
        return seir_objective(SeirParams())
    from .harness import _normalized_base

    return _normalized_base(name, rho1, rho2, 100_000)


def cmd_oracle(args) -> int:
    obj = oracle_objective(args.objective, args.rho1, args.rho2)
    res = args.resolution
    if res is None:
        res = cfgmod.SEIR_FSTAR_RESOLUTION if args.objective == "seir" else 1_000_000
    fstar, arg = estimate_fstar(obj, res)
    print(f"fstar={fstar:.17g} argmax={','.join(format(float(v), '.17g') for v in arg)}")
    return 0


_COMMANDS = {"run": cmd_run, "plot": cmd_plot, "oracle": cmd_oracle}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliFailure as exc:
        err = exc
    except cfgmod.ConfigParseError as exc:
        err = CliFailure("config", str(exc), EXIT_CONFIG)
    except ConfigError as exc:
        err = CliFailure("config", str(exc), EXIT_CONFIG)
    except (csvio.CsvError, PlotError) as exc:
        err = CliFailure("io", str(exc), EXIT_IO)
    except (HarnessError, ProtocolError, ObjectiveError, OracleError, PrivacyError,
            SeirError) as exc:
        err = CliFailure("run", str(exc), EXIT_RUN)
    except OSError as exc:
        err = CliFailure("io", f"{exc.filename or ''}: {exc.strerror or exc}", EXIT_IO)
    detail = " ".join(str(err).split())
    print(f"fedpne: error: {err.kind}: {detail}", file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
