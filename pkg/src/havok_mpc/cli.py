"""``havok-mpc`` command line.

Subcommands: simulate, identify, predict, closed-loop, bench-delay.
Exit codes: 0 ok, 2 config, 3 data, 4 numeric or failed assertion.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dataset import TimeSeriesDataset, load_csv, split, write_csv
from .embedding import build_delay_matrix
from .errors import ConfigError, HavokMpcError, IllPosedRegressionWarning
from .havok import HavokModel, evaluate, fit, load_model, save_model
from .mpc import MpcController, bench_complexity
from .plant import generate_excitation, run_closed_loop, run_experiment

log = logging.getLogger("havok_mpc")

EXIT_CODES = {"config": 2, "data": 3, "numeric": 4}

MODEL_FILE = "model.json"
DATASET_FILE = "dataset.csv"
FIT_REPORT_FILE = "fit_report.csv"
SPECTRUM_FILE = "spectrum.csv"
PREDICTIONS_FILE = "predictions.csv"
TELEMETRY_FILE = "telemetry.csv"
BENCH_FILE = "bench.csv"
SUMMARY_FILE = "summary.txt"


def _g(x) -> str:
    return f"{float(x):.17g}"


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_g(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_summary(out: Path, title: str, items) -> str:
    lines = [title] + [f"{k}: {_g(v) if isinstance(v, (float, np.floating)) else v}" for k, v in items]
    text = "\n".join(lines) + "\n"
    (out / SUMMARY_FILE).write_text(text, encoding="utf-8")
    return text


def _clock(cfg: RunConfig):
    if cfg.run.timing == "off":
        return lambda: 0.0
    return time.perf_counter


def _dataset(cfg: RunConfig) -> TimeSeriesDataset:
    if cfg.dataset is not None:
        return load_csv(cfg.resolve(cfg.dataset.path), cfg.dataset.schema_mapping())
    plant = cfg.make_plant()
    u = generate_excitation(cfg.excitation_spec(), plant.sample_period)
    return run_experiment(plant, np.repeat(u[:, None], plant.n_channels, axis=1))


def _model(args) -> HavokModel:
    if args.model is None:
        raise ConfigError("this command needs --model")
    return load_model(args.model)


# -- subcommands --------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args, out: Path) -> str:
    ds = _dataset(cfg)
    write_csv(ds, out / DATASET_FILE)
    return _write_summary(out, "simulate", [
        ("n_samples", ds.n_samples), ("n_u", ds.n_u), ("n_y", ds.n_y),
        ("sample_period", ds.sample_period), ("seed", cfg.run.seed),
    ])


def cmd_identify(cfg: RunConfig, args, out: Path) -> str:
    ds = _dataset(cfg)
    train, test = split(ds, cfg.run.train_fraction)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllPosedRegressionWarning)
        model, report = fit(train, cfg.hankel(), cfg.rank_policy(), cfg.embedding.normalization, holdout=test)
    save_model(model, out / MODEL_FILE)
    _write_rows(out / FIT_REPORT_FILE, ["metric", "horizon", "channel", "value"], report.rows())
    S = model.embedding.full_singular_values
    energy = np.cumsum(S**2) / np.sum(S**2) if np.any(S > 0) else np.zeros_like(S)
    _write_rows(
        out / SPECTRUM_FILE,
        ["index", "singular_value", "cumulative_energy", "retained"],
        [(i + 1, float(s), float(e), int(i < model.r)) for i, (s, e) in enumerate(zip(S, energy))],
    )
    items = [
        ("m", model.depth), ("include_inputs", cfg.embedding.include_inputs), ("r", model.r),
        ("train_samples", train.n_samples), ("test_samples", test.n_samples),
        ("gram_condition", report.gram_condition),
    ]
    items += [(f"one_step_rmse_y{i + 1}", v) for i, v in enumerate(report.one_step_rmse)]
    for h, vals in sorted(report.multi_step_rmse.items()):
        items += [(f"rmse_h{h}_y{i + 1}", v) for i, v in enumerate(vals)]
    items += [("warning", w) for w in report.warnings]
    return _write_summary(out, "identify", items)


def cmd_predict(cfg: RunConfig, args, out: Path) -> str:
    model = _model(args)
    ds = _dataset(cfg)
    if ds.n_u != model.n_u or ds.n_y != model.n_y:
        raise ConfigError(
            f"model expects n_u={model.n_u}, n_y={model.n_y}; data has n_u={ds.n_u}, n_y={ds.n_y}"
        )
    report = evaluate(model, ds)
    _write_rows(out / FIT_REPORT_FILE, ["metric", "horizon", "channel", "value"], report.rows())

    # one-step-ahead predictions over the whole record
    m = model.depth
    yn = model.norm.normalize_outputs(ds.outputs)
    un = model.norm.normalize_inputs(ds.inputs)
    Z = model.embedding.U.T @ build_delay_matrix(yn, un, model.embedding.config)
    Z1 = model.A @ Z[:, :-1] + model.B @ un[m - 1 : -1].T
    pred = model.norm.denormalize_outputs((model.C @ Z1).T)
    times = ds.times[m:]
    rows = [(float(t), *map(float, p), *map(float, y)) for t, p, y in zip(times, pred, ds.outputs[m:])]
    header = ["t", *[f"yhat{i + 1}" for i in range(ds.n_y)], *[f"y{i + 1}" for i in range(ds.n_y)]]
    _write_rows(out / PREDICTIONS_FILE, header, rows)
    items = [("n_samples", ds.n_samples), ("m", m), ("r", model.r)]
    for h, vals in sorted(report.multi_step_rmse.items()):
        items += [(f"rmse_h{h}_y{i + 1}", v) for i, v in enumerate(vals)]
    return _write_summary(out, "predict", items)


def cmd_closed_loop(cfg: RunConfig, args, out: Path) -> str:
    model = _model(args)
    plant = cfg.make_plant(seed_offset=2)
    if plant.n_channels != model.n_u or model.n_u != model.n_y:
        raise ConfigError(
            f"model (n_u={model.n_u}, n_y={model.n_y}) is incompatible with a "
            f"{plant.n_channels}-channel plant"
        )
    if abs(plant.sample_period - model.sample_period) > 1e-12 * model.sample_period:
        raise ConfigError(
            f"model sample period {model.sample_period} differs from plant {plant.sample_period}"
        )
    mcfg = cfg.mpc_config(model.n_u, model.n_y)
    ctrl = MpcController(model, mcfg, clock=_clock(cfg))
    T = cfg.run.steps
    ref = cfg.reference(T, model.n_y)
    res = run_closed_loop(plant, ctrl, ref, T, warmup=cfg.run.warmup)
    n_u, n_y = model.n_u, model.n_y
    header = ["k", "t", *[f"u{i + 1}" for i in range(n_u)], *[f"y{i + 1}" for i in range(n_y)],
              *[f"r{i + 1}" for i in range(n_y)], "cost", "qp_iterations", "solve_time_s"]
    _write_rows(out / TELEMETRY_FILE, header,
                [tuple(float(v) if isinstance(v, (float, np.floating)) else v for v in row)
                 for row in res.telemetry_rows()])
    met = res.metrics
    items = [
        ("steps", T), ("horizon", mcfg.horizon), ("qp_dims", ctrl.qp_dims),
        ("tracking_rmse", met["tracking_rmse"]), ("max_overshoot", met["max_overshoot"]),
        ("settle_time", met["settle_time"]),
        ("mean_solve_time_s", met["mean_solve_time_s"]), ("max_solve_time_s", met["max_solve_time_s"]),
        ("mean_qp_iterations", met["mean_qp_iterations"]), ("warnings", met["fallback_count"]),
    ]
    if met["fallback_count"]:
        log.warning("solver fell back to the previous input in %d step(s)", met["fallback_count"])
    return _write_summary(out, "closed-loop", items)


def cmd_bench(cfg: RunConfig, args, out: Path) -> str:
    ds = _dataset(cfg)
    bench = cfg.bench
    mpc = cfg.mpc
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllPosedRegressionWarning)
        rows = bench_complexity(
            ds, bench.m_values, horizon=bench.N, rank=bench.rank,
            include_inputs=cfg.embedding.include_inputs,
            mpc_kwargs=dict(Q=mpc.Q, R=mpc.R, R_delta=mpc.R_delta, u_min=mpc.u_min,
                            u_max=mpc.u_max, max_iter=mpc.max_iter),
            n_solves=bench.n_solves, clock=_clock(cfg),
        )
    _write_rows(out / BENCH_FILE, ["m", "r", "qp_dims", "median_solve_time_s"],
                [(r["m"], r["r"], r["qp_dims"], r["median_solve_time_s"]) for r in rows])
    dims = {r["qp_dims"] for r in rows}
    expected = bench.N * ds.n_u
    text = _write_summary(out, "bench-delay", [
        ("horizon", bench.N), ("n_u", ds.n_u), ("qp_dims", sorted(dims)),
        ("median_solve_time_ratio", max(r["median_solve_time_s"] for r in rows)
         / max(min(r["median_solve_time_s"] for r in rows), 1e-300)),
    ])
    if dims != {expected}:
        raise AssertionError(f"QP dimension varies with embedding depth: {sorted(dims)} != {expected}")
    return text


COMMANDS = {
    "simulate": (cmd_simulate, {"data"}),
    "identify": (cmd_identify, {"data"}),
    "predict": (cmd_predict, {"data"}),
    "closed-loop": (cmd_closed_loop, {"plant", "reference"}),
    "bench-delay": (cmd_bench, {"data"}),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="havok-mpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--model", type=Path, default=None)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, needs = COMMANDS[args.command]
    try:
        cfg = load_config(args.config, needs)
        if args.model is not None and not args.model.exists():
            raise ConfigError(f"model file {args.model} does not exist")
        args.out.mkdir(parents=True, exist_ok=True)
        summary = func(cfg, args, args.out)
    except HavokMpcError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except (AssertionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error [numeric]: {exc}", file=sys.stderr)
        return EXIT_CODES["numeric"]
    except ValueError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    sys.stdout.write(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
