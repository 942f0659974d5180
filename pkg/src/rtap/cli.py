"""Command-line entry point: ``rtap simulate | preprocess | train | predict | evaluate``.

Every :class:`~rtap.config.RunConfig` field is also a flag (underscores become
dashes, e.g. ``--n-trees``); ``--config FILE`` loads a key-value file first.

Exit status: 0 success, 1 usage error, 2 data error, 3 model error.

Prediction output columns (CSV; JSON uses the same keys with ``forecast`` as an
object)::

    server_id, timestamp, <kpi>_forecast..., probability, is_anomaly, severity

``timestamp`` is the predicted hour ``t + 1``; ``severity`` is empty unless the
row is flagged and the model has a severity grader.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from collections.abc import Sequence
from dataclasses import fields

from . import synthgen
from .bundle import load_model, save_model
from .config import ConfigError, RunConfig, build_config, coerce, read_config_file
from .datamodel import chronological_split, kpi_names
from .errors import DataError, ModelError
from .pipeline import PipelineModel, Prediction, evaluate, fit_pipeline, predict_at, prepare
from .preprocess import parse_alarm_csv, parse_kpi_csv, preprocess, write_alarm_csv, write_kpi_csv

logger = logging.getLogger("rtap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3
COMMANDS = ("simulate", "preprocess", "train", "predict", "evaluate")
_REQUIRED = {
    "simulate": ("kpi", "alarms"),
    "preprocess": ("kpi",),
    "train": ("kpi", "alarms", "model"),
    "predict": ("model", "kpi"),
    "evaluate": ("model", "kpi", "alarms"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=argparse.SUPPRESS, help="key = value configuration file")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            p.add_argument(flag, dest=f.name, default=argparse.SUPPRESS, metavar=f.name.upper(),
                           type=lambda s, k=f.name: coerce(k, s))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rtap", description="Hourly KPI forecasting, anomaly prediction and severity grading.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "simulate": "write a synthetic fleet to --kpi and --alarms",
        "preprocess": "clean and gap-fill --kpi; write to --out (stdout if unset)",
        "train": "fit a pipeline on --kpi/--alarms and save it to --model",
        "predict": "predict hour t+1 per server from --kpi up to --at",
        "evaluate": "score --model on rows of --kpi/--alarms after --boundary",
    }
    for name in COMMANDS:
        _add_config_flags(sub.add_parser(name, help=helps[name], description=helps[name]))
    return parser


def resolve_config(ns: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """Merge file and flags; also return the keys the user set explicitly."""
    args = vars(ns)
    file_values = read_config_file(args["config"]) if "config" in args else {}
    overrides = {k: v for k, v in args.items() if k in {f.name for f in fields(RunConfig)}}
    cfg = build_config(file_values, overrides)
    return cfg, set(file_values) | set(overrides)


def _emit(text: str, cfg: RunConfig) -> None:
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_kpis(path: str):
    try:
        records, _ = parse_kpi_csv(path)
    except OSError as e:
        raise DataError(f"cannot read KPI file {path}: {e}") from e
    if not records:
        raise DataError(f"no usable KPI rows in {path}")
    return records


def _load_alarms(path: str):
    try:
        alarms, _ = parse_alarm_csv(path)
    except OSError as e:
        raise DataError(f"cannot read alarm file {path}: {e}") from e
    return alarms


def _load_for(cfg: RunConfig, explicit: set[str]) -> PipelineModel:
    model = load_model(cfg.model)
    if "business" in explicit and cfg.business != model.business:
        raise ModelError(f"model bundle was trained for business {model.business!r}, not {cfg.business!r}")
    return model


def cmd_simulate(cfg: RunConfig) -> dict:
    ratio = synthgen.BUSINESS_IMBALANCE[cfg.business] if cfg.imbalance is None else cfg.imbalance
    try:
        campaign = synthgen.AnomalyCampaign(imbalance_ratio=ratio)
        profiles = synthgen.business_profiles(cfg.business, cfg.servers, cfg.n_disks)
        fleet = synthgen.generate_fleet(profiles, cfg.servers, cfg.hours, campaign, cfg.seed, cfg.start)
    except (KeyError, ValueError) as e:
        raise DataError(f"simulate: {e}") from e
    records = fleet.records
    summary = {"business": cfg.business, "records": len(records), "alarms": len(fleet.alarms),
               "realized_ratio": synthgen.realized_ratio(len(records), fleet.alarms)}
    if cfg.missing_rate > 0 or cfg.noise_rate > 0:
        records, corruption = synthgen.corrupt(records, cfg.missing_rate, cfg.noise_rate, cfg.seed)
        summary["corruption"] = corruption.__dict__
    write_kpi_csv(records, cfg.kpi)
    write_alarm_csv(fleet.alarms, cfg.alarms)
    return summary


def cmd_preprocess(cfg: RunConfig) -> dict:
    segments, report = preprocess(_load_kpis(cfg.kpi), cfg.max_gap)
    buf = io.StringIO()
    write_kpi_csv([r for seg in segments for r in seg], buf)
    _emit(buf.getvalue(), cfg)
    return {"segments": len(segments), "cleaning": report.as_dict()}


def cmd_train(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    params = cfg.to_params()
    data = prepare(_load_kpis(cfg.kpi), _load_alarms(cfg.alarms), params.lag, params.max_gap)
    train = data.dataset
    if cfg.boundary is not None:
        train, _ = chronological_split(train, cfg.boundary)
    model = fit_pipeline(train, params, cfg.business, cfg.seed)
    digest = save_model(model, cfg.model)
    return {
        **model.metadata,
        "business": cfg.business,
        "severity_skipped": model.severity is None,
        "cleaning": data.report.as_dict(),
        "bundle": cfg.model,
        "sha256": digest,
        "seconds": round(time.perf_counter() - t0, 3),
    }


def _prediction_row(p: Prediction, names: Sequence[str]) -> dict:
    return {
        "server_id": p.server_id,
        "timestamp": p.timestamp.isoformat(timespec="minutes"),
        "forecast": dict(zip(names, p.forecast)),
        "probability": p.probability,
        "is_anomaly": p.is_anomaly,
        "severity": None if p.severity is None else p.severity.token,
    }


def format_predictions(preds: Sequence[Prediction], n_disks: int, fmt: str) -> str:
    names = kpi_names(n_disks)
    rows = [_prediction_row(p, names) for p in preds]
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["server_id", "timestamp", *(f"{n}_forecast" for n in names), "probability", "is_anomaly",
                "severity"])
    for r in rows:
        w.writerow([r["server_id"], r["timestamp"], *(repr(r["forecast"][n]) for n in names),
                    repr(r["probability"]), str(r["is_anomaly"]).lower(), r["severity"] or ""])
    return buf.getvalue()


def cmd_predict(cfg: RunConfig, explicit: set[str]) -> dict:
    model = _load_for(cfg, explicit)
    t0 = time.perf_counter()
    preds, diags = predict_at(model, _load_kpis(cfg.kpi), cfg.at)
    seconds = time.perf_counter() - t0
    _emit(format_predictions(preds, model.layout.n_disks, cfg.format), cfg)
    return {"predicted": len(preds), "skipped": len(diags), "seconds": round(seconds, 4)}


def cmd_evaluate(cfg: RunConfig, explicit: set[str]) -> dict:
    model = _load_for(cfg, explicit)
    report = evaluate(model, _load_kpis(cfg.kpi), _load_alarms(cfg.alarms), cfg.boundary, cfg.allow_overlap,
                      cfg.ma_window, cfg.es_alpha)
    _emit(report.to_json() + "\n", cfg)
    return {"n_instances": report.n_instances, "macro_f": report.macro_f}


def _run(command: str, cfg: RunConfig, explicit: set[str]) -> dict:
    missing = [k for k in _REQUIRED[command] if getattr(cfg, k) is None]
    if missing:
        raise UsageError(f"{command} needs " + ", ".join("--" + k for k in missing))
    if command == "simulate":
        return cmd_simulate(cfg)
    if command == "preprocess":
        return cmd_preprocess(cfg)
    if command == "train":
        return cmd_train(cfg)
    if command == "predict":
        return cmd_predict(cfg, explicit)
    return cmd_evaluate(cfg, explicit)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a command is required: " + " | ".join(COMMANDS))
        logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg, explicit = resolve_config(ns)
        summary = _run(ns.command, cfg, explicit)
    except (UsageError, ConfigError) as e:
        print(f"rtap: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"rtap: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as e:
        print(f"rtap: model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as e:
        print(f"rtap: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(summary, default=str), file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
