"""Command-line front end.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import evaluation, model as gdmodel, preclassification as pre, sar_data
from .config import FIELD_TYPES, PipelineConfig, parse_config
from .errors import ConfigurationError, GDNetError
from .patches import PatchSource
from .training import train_model

log = logging.getLogger("gdnet")

SUBCOMMANDS = ("preclassify", "train", "predict", "eval", "pipeline", "synth", "summary", "dump-features")


class Workspace:
    """Resolved paths of every artifact inside the output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = cfg.output

    def path(self, name):
        return os.path.join(self.root, name)

    @property
    def checkpoint(self):
        return self.cfg.checkpoint or self.path("model.gdnt")

    @property
    def prediction(self):
        return self.cfg.prediction or self.path("change_map.pgm")


def _require(cfg: PipelineConfig, *keys):
    for key in keys:
        value = getattr(cfg, key)
        if value is None:
            raise ConfigurationError(f"missing required setting {key!r}")
        if not os.path.exists(value):
            raise FileNotFoundError(f"input file not found: {value}")


def _load_inputs(cfg):
    _require(cfg, "t1", "t2")
    pair = sar_data.load_pair(cfg.t1, cfg.t2)
    return pair, sar_data.log_ratio_di(pair)


def run_synth(cfg: PipelineConfig, ws: Workspace) -> int:
    pair, gt = sar_data.synth_scene(cfg.seed, cfg.width, cfg.height, cfg.change_fraction, cfg.looks)
    paths = sar_data.save_scene(ws.root, pair, gt)
    for name, path in paths.items():
        setattr(cfg, name, path)
        print(f"{name}: {path}")
    return 0


def run_preclassify(cfg, ws):
    pair, di = _load_inputs(cfg)
    labels, fcm = pre.preclassify(di)
    sar_data.save_image(ws.path("difference.pgm"), di)
    pre.write_label_map(ws.path("pseudo_labels.pgm"), labels)
    counts = {k.name.lower(): v for k, v in labels.counts.items()}
    log.info("FCM centers %s after %d iterations; counts %s", np.round(fcm.centers, 5).tolist(),
             fcm.iterations, counts)
    return pair, di, labels


def run_train(cfg, ws):
    pair, di, labels = run_preclassify(cfg, ws)
    samples = pre.select_samples(labels, cfg.per_class_cap, cfg.seed)
    net = gdmodel.init_model(cfg.model_config(), cfg.seed)
    log.info("training on %d samples (%d changed)", len(samples), int(samples.labels.sum()))
    record = train_model(net, samples, PatchSource(pair, di, cfg.r), cfg.train_config())
    gdmodel.save_checkpoint(net, ws.checkpoint)
    record.write_csv(ws.path("loss.csv"))
    return net, pair, di


def run_predict(cfg, ws, net=None, pair=None, di=None):
    if net is None:
        _require(cfg, "t1", "t2")
        if not os.path.exists(ws.checkpoint):
            raise FileNotFoundError(f"checkpoint not found: {ws.checkpoint}")
        net = gdmodel.load_checkpoint(ws.checkpoint)
        pair, di = _load_inputs(cfg)
    change_map = evaluation.predict_map(net, pair, di)
    sar_data.write_change_map(ws.prediction, change_map)
    return change_map


def run_eval(cfg, ws):
    _require(cfg, "ground_truth")
    if not os.path.exists(ws.prediction):
        raise FileNotFoundError(f"prediction not found: {ws.prediction}")
    report = evaluation.evaluate(sar_data.read_change_map(ws.prediction),
                                 sar_data.read_change_map(cfg.ground_truth))
    evaluation.write_report(report, ws.path("report.txt"))
    sys.stdout.write(evaluation.format_report(report))
    return report


def run_pipeline(cfg, ws):
    net, pair, di = run_train(cfg, ws)
    run_predict(cfg, ws, net, pair, di)
    if cfg.ground_truth is not None:
        run_eval(cfg, ws)


def run_summary(cfg, ws):
    summary = gdmodel.model_summary(gdmodel.GDNetModel(cfg.model_config()))
    print(summary.table())
    print(f"feature width: {cfg.model_config().feature_width}")


def run_dump_features(cfg, ws):
    pair, di, labels = run_preclassify(cfg, ws)
    if os.path.exists(ws.checkpoint):
        net = gdmodel.load_checkpoint(ws.checkpoint)
    else:
        log.warning("no checkpoint at %s; exporting features of a freshly initialized model", ws.checkpoint)
        net = gdmodel.init_model(cfg.model_config(), cfg.seed)
    samples = pre.select_samples(labels, cfg.per_class_cap, cfg.seed)
    path = ws.path("features.csv")
    gdmodel.dump_features(net, samples, PatchSource(pair, di, net.config.r), path, cfg.feature_stage)
    print(f"features: {path}")


DISPATCH = {
    "synth": run_synth,
    "preclassify": run_preclassify,
    "train": run_train,
    "predict": run_predict,
    "eval": run_eval,
    "pipeline": run_pipeline,
    "summary": run_summary,
    "dump-features": run_dump_features,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdnet", description="Self-supervised SAR change detection with GDNet.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value configuration file")
        for key in FIELD_TYPES:
            flags = [f"--{key}"]
            if "_" in key:
                flags.append(f"--{key.replace('_', '-')}")
            p.add_argument(*flags, dest=key, default=None, metavar="VALUE")
    return parser


def dispatch(command: str, cfg: PipelineConfig) -> int:
    if command not in DISPATCH:
        raise ConfigurationError(f"unknown subcommand {command!r}")
    os.makedirs(cfg.output, exist_ok=True)
    with open(os.path.join(cfg.output, f"{command}.config.toml"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    log.info("resolved configuration:\n%s", cfg.to_text().rstrip())
    start = time.perf_counter()
    DISPATCH[command](cfg, Workspace(cfg))
    log.info("%s finished in %.1f s", command, time.perf_counter() - start)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items() if k in FIELD_TYPES and v is not None}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"gdnet: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gdnet: cannot read config {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        return dispatch(args.command, cfg)
    except ConfigurationError as exc:
        print(f"gdnet: configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"gdnet: {exc}", file=sys.stderr)
        return 1
    except (GDNetError, OSError, ArithmeticError) as exc:
        print(f"gdnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
