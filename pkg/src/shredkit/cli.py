"""Command-line entry point.

Every command reads an experiment config (JSON) whose keys mirror
:class:`shredkit.harness.ExperimentConfig`; flags override config values.
Failures print one line, ``error: <category>: <message>``, to stderr and
exit nonzero.
"""

import argparse
import dataclasses
import json
import os
import sys

from . import harness as H
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import load_field_file, save_field_file
from .errors import ConfigError, InvalidArgumentError, ShredkitError
from .plotting import plot_forecast, plot_summaries, write_svg
from .pod import placement_objective

EXIT_CODES = {"usage": 2, "config": 2, "io": 3}


class UsageError(ShredkitError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, needs_config=True):
    p.add_argument("--config", required=needs_config, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="base seed (overrides config)")
    p.add_argument("--workers", type=int, help="parallel trial workers (default: available CPUs)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--sensors", type=int, nargs="+", help="sensor count(s)")
    p.add_argument("--alpha", type=float, nargs="+", help="noise level(s)")
    p.add_argument("--lag", type=int, help="lag k")
    p.add_argument("--method", nargs="+", choices=H.METHODS, help="method(s)")
    p.add_argument("--placement", nargs="+", choices=H.PLACEMENTS, help="placement(s)")
    p.add_argument("--trials", type=int, help="trials per cell")


def build_parser():
    parser = _Parser(prog="shredkit", description="Sparse-sensor reconstruction and forecasting experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write the configured dataset as a field file")
    _common(p)
    p = sub.add_parser("place", help="place sensors and report the placement objective")
    _common(p)
    p.add_argument("--trial", type=int, default=0, help="trial index (seed = base seed + trial)")
    p = sub.add_parser("train", help="train one SHRED or SDN model and save a checkpoint")
    _common(p)
    p.add_argument("--trial", type=int, default=0)
    p = sub.add_parser("evaluate", help="test error of a checkpoint (or of QR/POD) on its trial's test split")
    _common(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--model", help="checkpoint written by train (not needed for qr_pod)")
    p = sub.add_parser("sweep", help="ensemble over the config cells")
    _common(p)
    p = sub.add_parser("noise-sweep", help="ensemble over noise levels")
    _common(p)
    p = sub.add_parser("forecast", help="forecast experiment with ensembling")
    _common(p)
    p.add_argument("--horizon", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--oracle", action="store_true", help="feed true measurements instead of forecasts")
    p = sub.add_parser("plot", help="render a summary or forecast document as SVG")
    p.add_argument("document", help="summary.json or forecast.json")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--log", action="store_true", help="logarithmic error axis")
    p.add_argument("--x", choices=("n_sensors", "alpha"), help="x axis for summary plots")
    return parser


# ---------------------------------------------------------------------------
# config handling


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_config(args):
    """Config file plus flag overrides, validated before any work starts."""
    doc = read_json(args.config)
    if not isinstance(doc, dict):
        raise ConfigError(f"{args.config}: top level must be a JSON object")
    overrides = {"base_seed": args.seed, "lag": args.lag, "trials": args.trials,
                 "sensor_counts": args.sensors, "alphas": args.alpha,
                 "methods": args.method, "placements": args.placement}
    cell_keys = ("sensor_counts", "alphas", "methods", "placements")
    for key, value in overrides.items():
        if value is None:
            continue
        if key in cell_keys and doc.get("cells") is not None:
            raise ConfigError(f"--{key} cannot override an explicit 'cells' list")
        doc[key] = value
    dataset = doc.get("dataset")
    if isinstance(dataset, dict) and dataset.get("path") and not os.path.isabs(dataset["path"]):
        base = os.path.dirname(os.path.abspath(args.config))
        dataset["path"] = os.path.join(base, dataset["path"])
    config = H.ExperimentConfig.from_dict(doc)
    if config.dataset.kind == "file" and not os.path.exists(config.dataset.path):
        raise FileNotFoundError(2, "No such file or directory", config.dataset.path)
    return config


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _dump_config(out, config):
    H.write_json(os.path.join(out, "config.json"), config.to_dict())


def _first_cell(config):
    return config.all_cells()[0]


def _say(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    config = load_config(args)
    out = _outdir(args)
    field = H.build_field(config.dataset)
    path = os.path.join(out, "field.flds")
    save_field_file(path, field)
    load_field_file(path)  # read back so a bad write fails here
    _dump_config(out, config)
    _say(f"wrote {path} ({field.n_times} snapshots, grid {field.grid_shape})")


def cmd_place(args):
    config = load_config(args)
    out = _outdir(args)
    cell = _first_cell(config)
    seed = config.base_seed + args.trial
    data = H._prepare(config, seed, cell.placement, cell.n_sensors, cell.alpha)
    doc = {"indices": list(data.sensors.indices), "placement_method": data.sensors.placement_method,
           "seed": seed, "grid_shape": list(data.clean.grid_shape)}
    if cell.n_sensors <= len(data.split.train):
        if data.basis is not None and data.basis.rank != cell.n_sensors:
            data.basis = None
        basis = H._pod_basis(dataclasses.replace(config, pod_rank=cell.n_sensors), data, cell.n_sensors)
        obj = placement_objective(basis, data.sensors)
        doc["log_abs_det"] = None if obj.singular else obj.log_abs_det
    H.write_json(os.path.join(out, "sensors.json"), doc)
    _dump_config(out, config)
    _say(f"sensors {doc['indices']} ({doc['placement_method']})")


def cmd_train(args):
    config = load_config(args)
    out = _outdir(args)
    cell = _first_cell(config)
    if cell.method == "qr_pod":
        raise InvalidArgumentError("qr_pod has no trainable parameters; run evaluate directly")
    seed = config.base_seed + args.trial
    data = H._prepare(config, seed, cell.placement, cell.n_sensors, cell.alpha)
    model, _, epochs = H._fit_network(config, data, cell.method, seed, f"train {cell.label()} seed {seed}")
    path = os.path.join(out, "model.shrd")
    save_checkpoint(path, model, seed=seed, extra={"cell": list(cell), "trial": args.trial, "epochs": epochs})
    _dump_config(out, config)
    _say(f"trained {cell.method} for {epochs} epochs; wrote {path}")


def cmd_evaluate(args):
    config = load_config(args)
    out = _outdir(args)
    cell = _first_cell(config)
    seed = config.base_seed + args.trial
    if cell.method == "qr_pod":
        result = H.run_trial(config, cell, args.trial)
        error = result.error
    else:
        if not args.model:
            raise InvalidArgumentError(f"--model is required to evaluate {cell.method}")
        model, meta = load_checkpoint(args.model)
        if model.kind != cell.method:
            raise InvalidArgumentError(f"checkpoint holds a {model.kind} model, config asks for {cell.method}")
        data = H._prepare(config, seed, cell.placement, cell.n_sensors, cell.alpha)
        if tuple(model.sensors) != data.sensors.indices:
            raise InvalidArgumentError("checkpoint sensors differ from this config's placement; check --seed/--trial")
        test = data.split.test
        inputs = model.sensor_scaler.transform(data.windows.inputs[test])
        if cell.method == "sdn":
            inputs = inputs[:, -1, :]
        error = H.reconstruction_error(model.predict(inputs), data.clean.snapshots[config.lag + test])
    doc = {"cell": list(cell), "trial": args.trial, "seed": seed, "error": error}
    H.write_json(os.path.join(out, "evaluation.json"), doc)
    _say(f"test error {error:.6g}")


def _run_sweep(args, noise):
    config = load_config(args)
    out = _outdir(args)
    runner = H.run_noise_sweep if noise else H.run_ensemble
    summaries, results = runner(config, workers=args.workers, with_trials=True)
    H.write_trial_rows(os.path.join(out, "trials.csv"), results)
    doc = H.summary_document(config, summaries, "noise" if noise else "sensors")
    H.write_json(os.path.join(out, "summary.json"), doc)
    _dump_config(out, config)
    for s in summaries:
        _say(f"{s.cell.label()}: median {s.median:.4g} [q25 {s.q25:.4g}, q75 {s.q75:.4g}] over {s.n_trials} trials")


def cmd_sweep(args):
    _run_sweep(args, noise=False)


def cmd_noise_sweep(args):
    _run_sweep(args, noise=True)


def cmd_forecast(args):
    config = load_config(args)
    out = _outdir(args)
    result = H.run_forecast_experiment(config, args.horizon, args.runs, args.workers, oracle=args.oracle)
    doc = {"kind": "forecast", "config": config.to_dict(), "oracle": args.oracle, **result.to_dict()}
    H.write_json(os.path.join(out, "forecast.json"), doc)
    _dump_config(out, config)
    med_s, med_p = result.shred_median, result.pod_median
    for i, t in enumerate(result.target_times):
        _say(f"step {i + 1} (t={t}): shred {med_s[i]:.4g}  pod {med_p[i]:.4g}  ensemble {result.ensemble_errors[i]:.4g}")


def cmd_plot(args):
    doc = read_json(args.document)
    out = _outdir(args)
    kind = doc.get("kind") if isinstance(doc, dict) else None
    stem = os.path.splitext(os.path.basename(args.document))[0]
    if kind == "forecast":
        svg = plot_forecast(H.ForecastResult.from_dict(doc), log_y=args.log)
    elif kind in ("sensors", "noise"):
        x = args.x or ("alpha" if kind == "noise" else "n_sensors")
        svg = plot_summaries(H.summaries_from_document(doc), x=x, log_y=args.log)
    else:
        raise ConfigError(f"{args.document}: unknown document kind {kind!r}")
    path = os.path.join(out, stem + ".svg")
    write_svg(path, svg)
    _say(f"wrote {path}")


COMMANDS = {"generate": cmd_generate, "place": cmd_place, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "noise-sweep": cmd_noise_sweep, "forecast": cmd_forecast, "plot": cmd_plot}


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except ShredkitError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        where = f" ({exc.filename})" if exc.filename else ""
        print(f"error: io: {_one_line(exc.strerror or exc)}{where}", file=sys.stderr)
        return EXIT_CODES["io"]
    except KeyboardInterrupt:
        print("error: interrupted: stopped by user", file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
