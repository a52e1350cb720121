"""Command-line entry point: ``caaf <command> [flags]``.

Exit codes: 0 success, 2 configuration or usage error, 3 data or numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from dataclasses import field as _field
from pathlib import Path

from . import experiments as ex
from .attribution import IGConfig, PipelineConfig, aggregate_attribution, caaf_run, naive_fa_select
from .baselines import BayesConfig, bayes_select, ei_select, ke_select, pod_qr_select, uniform_select
from .clustering import APConfig, cluster
from .datamodel import SelectionResult, apply_scaling, dumps, load_dataset, save_dataset
from .errors import CAAFError, ConfigError, DataError
from .generators import BeamModel, ModeShapeMatrix, SyntheticSpec, gen_beam_dataset, gen_synthetic
from .metrics import metric_report
from .surrogate import MLPConfig, SurrogateModel, TrainConfig, fit

log = logging.getLogger("caaf")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
METHODS = ("caaf", "naive_fa", "ei", "ke", "pod_qr", "bayes", "uniform")


@dataclass(frozen=True)
class DataSection:
    target_columns: tuple = ("Y",)
    group_column: str = "group"


@dataclass(frozen=True)
class BeamSection:
    model: BeamModel = _field(default_factory=BeamModel)
    n_profiles: int = 50_000


@dataclass(frozen=True)
class SelectSection:
    method: str = "caaf"
    k: int = 2
    uniform_anchors: str = "both_ends"


@dataclass(frozen=True)
class EvaluateSection:
    n_seeds: int = 10
    test_fraction: float = 0.2


@dataclass(frozen=True)
class ReproSection:
    table1: ex.Table1Config = _field(default_factory=ex.Table1Config)
    fig2: ex.Fig2Config = _field(default_factory=ex.Fig2Config)
    beam_fig4: ex.BeamConfig = _field(default_factory=ex.BeamConfig)
    field: ex.FieldConfig = _field(default_factory=ex.FieldConfig)


@dataclass(frozen=True)
class RunConfig:
    """Every setting a command can use; loaded from one JSON document."""

    seed: int = 0
    data: DataSection = _field(default_factory=DataSection)
    synthetic: SyntheticSpec = _field(default_factory=SyntheticSpec)
    beam: BeamSection = _field(default_factory=BeamSection)
    field: ex.FieldConfig = _field(default_factory=ex.FieldConfig)
    metric: str = "pearson"
    scaling: str = "none"
    ap: APConfig = _field(default_factory=APConfig)
    mlp: MLPConfig = _field(default_factory=MLPConfig)
    train: TrainConfig = _field(default_factory=TrainConfig)
    ig: IGConfig = _field(default_factory=IGConfig)
    n_points: int = 10_000
    bayes: BayesConfig = _field(default_factory=BayesConfig)
    select: SelectSection = _field(default_factory=SelectSection)
    evaluate: EvaluateSection = _field(default_factory=EvaluateSection)
    repro: ReproSection = _field(default_factory=ReproSection)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(ap=self.ap, metric=self.metric, mlp=self.mlp, train=self.train, ig=self.ig,
                              n_points=self.n_points, attribution_seed=ex.stage_seed(self.seed, "points"),
                              scaling=self.scaling)


def merge(obj, values, path="config"):
    """Copy of dataclass ``obj`` with ``values`` applied; unknown keys raise ``ConfigError``."""
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must be a JSON object")
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, val in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {path}.{key}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            updates[key] = merge(cur, val, f"{path}.{key}")
        elif isinstance(cur, tuple) and isinstance(val, list):
            updates[key] = tuple(val)
        else:
            updates[key] = val
    try:
        return dataclasses.replace(obj, **updates)
    except CAAFError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return merge(RunConfig(), doc)


# ------------------------------------------------------------------ helpers


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
        return
    p = Path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, newline="\n")


def _snapshot(cfg: RunConfig, out):
    """Write the effective configuration next to a file output."""
    if out is not None:
        _emit(dumps(dataclasses.asdict(cfg)), str(out) + ".config.json")


def _require(args, name):
    val = getattr(args, name)
    if val is None:
        raise ConfigError(f"--{name} is required for this command")
    return val


def _dataset(cfg, args):
    path = _require(args, "data")
    targets = tuple(args.targets.split(",")) if args.targets else cfg.data.target_columns
    return load_dataset(path, targets, cfg.data.group_column)


def _modes(path):
    try:
        return ModeShapeMatrix.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"{path} is not a mode shape JSON file: {e}") from None


def _selection(path):
    try:
        return SelectionResult.from_json(Path(path).read_text())
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"{path} is not a selection JSON file: {e}") from None


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    sel = cfg.select
    if args.k is not None:
        sel = dataclasses.replace(sel, k=args.k)
    if args.method is not None:
        sel = dataclasses.replace(sel, method=args.method)
    return dataclasses.replace(cfg, select=sel)


# ------------------------------------------------------------------ commands


def cmd_generate(cfg: RunConfig, args):
    out = _require(args, "out")
    if args.kind == "synthetic":
        spec = dataclasses.replace(cfg.synthetic, seed=ex.stage_seed(cfg.seed, "generate", "synthetic"))
        save_dataset(gen_synthetic(spec), out)
    elif args.kind == "beam":
        ds, modes = gen_beam_dataset(cfg.beam.model, cfg.beam.n_profiles, ex.stage_seed(cfg.seed, "generate", "beam"))
        save_dataset(ds, out)
        _emit(dumps(modes.to_dict()), str(out) + ".modes.json")
    else:
        ds, _, _ = ex.field_dataset(cfg.field, cfg.seed)
        save_dataset(ds, out)
    _snapshot(cfg, out)
    log.info("wrote %s", out)


def cmd_cluster(cfg: RunConfig, args):
    ds = _dataset(cfg, args)
    _, ca = cluster(ds, cfg.metric, cfg.ap)
    log.info("%d exemplars, converged=%s after %d sweeps", len(ca.exemplars), ca.converged, ca.iterations)
    payload = {**ca.to_dict(), "exemplar_ids": [ds.sensor_ids[e] for e in ca.exemplars]}
    _emit(dumps(payload), args.out)
    _snapshot(cfg, args.out)


def _prepared(cfg, args):
    ds = _dataset(cfg, args)
    return ds if cfg.scaling == "none" else apply_scaling(ds, cfg.scaling)


def cmd_train(cfg: RunConfig, args):
    ds = _prepared(cfg, args)
    mlp = dataclasses.replace(cfg.mlp, seed=ex.stage_seed(cfg.seed, "init"))
    tc = dataclasses.replace(cfg.train, shuffle_seed=ex.stage_seed(cfg.seed, "shuffle"))
    model, hist = fit(ds, mlp, tc)
    payload = {"model": model.to_dict(), "train_loss": hist.train, "validation_loss": hist.validation,
               "sensor_ids": list(ds.sensor_ids)}
    _emit(dumps(payload), args.out)
    _snapshot(cfg, args.out)


def cmd_attribute(cfg: RunConfig, args):
    ds = _prepared(cfg, args)
    if args.model:
        doc = json.loads(Path(args.model).read_text())
        model = SurrogateModel.from_dict(doc.get("model", doc))
    else:
        mlp = dataclasses.replace(cfg.mlp, seed=ex.stage_seed(cfg.seed, "init"))
        tc = dataclasses.replace(cfg.train, shuffle_seed=ex.stage_seed(cfg.seed, "shuffle"))
        model, _ = fit(ds, mlp, tc)
    res = aggregate_attribution(model, ds, cfg.ig, cfg.n_points, ex.stage_seed(cfg.seed, "points"))
    _emit(dumps({**res.to_dict(), "sensor_ids": list(ds.sensor_ids)}), args.out)
    _snapshot(cfg, args.out)


def _select(cfg: RunConfig, args) -> SelectionResult:
    method, k = cfg.select.method, cfg.select.k
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    path = _require(args, "data")
    if method in ("ei", "ke") or (method == "uniform" and str(path).endswith(".json")):
        modes = _modes(path)
        if method == "ei":
            return ei_select(modes, k)
        if method == "ke":
            return ke_select(modes.phi, modes.mass, k)
        return uniform_select(modes.phi.shape[0], k, cfg.select.uniform_anchors)
    ds = _dataset(cfg, args)
    pc = dataclasses.replace(
        cfg.pipeline(),
        mlp=dataclasses.replace(cfg.mlp, seed=ex.stage_seed(cfg.seed, "init")),
        train=dataclasses.replace(cfg.train, shuffle_seed=ex.stage_seed(cfg.seed, "shuffle")),
    )
    if method == "caaf":
        run = caaf_run(ds, k, pc)
        log.info("caaf: %d exemplars %s", len(run.exemplars), [ds.sensor_ids[e] for e in run.exemplars])
        return run.selection
    if method == "naive_fa":
        return naive_fa_select(ds, k, pc)
    if method == "pod_qr":
        return pod_qr_select(ds, k)
    if method == "bayes":
        return bayes_select(ds, dataclasses.replace(cfg.bayes, seed=ex.stage_seed(cfg.seed, "bayes")), k)
    return uniform_select(ds.n_candidates, k, cfg.select.uniform_anchors)


def cmd_select(cfg: RunConfig, args):
    _emit(_select(cfg, args).to_json(), args.out)
    _snapshot(cfg, args.out)


def cmd_evaluate(cfg: RunConfig, args):
    sel = _selection(_require(args, "selection"))
    path = _require(args, "data")
    if str(path).endswith(".json"):
        modes = _modes(path)
        if sel.n_candidates != modes.phi.shape[0]:
            raise DataError("selection does not match the mode shape candidate count")
        payload = {"method": sel.method, **metric_report(modes.phi, modes.mass, sel.selected).to_dict()}
    else:
        ds = _prepared(cfg, args)
        if sel.n_candidates != ds.n_candidates:
            raise DataError("selection does not match the dataset candidate count")
        payload = ex.prediction_error(ds, sel.selected, cfg.mlp, cfg.train, cfg.evaluate.n_seeds,
                                      cfg.evaluate.test_fraction, cfg.seed)
        payload["method"] = sel.method
        payload["selected"] = list(sel.selected)
    _emit(dumps(payload), args.out)
    _snapshot(cfg, args.out)


def cmd_metrics(cfg: RunConfig, args):
    modes = _modes(_require(args, "data"))
    if args.selection:
        rep = metric_report(modes.phi, modes.mass, _selection(args.selection).selected)
        _emit(dumps(rep.to_dict()), args.out)
    else:
        method = cfg.select.method if args.method else "ei"
        if method not in ("ei", "ke"):
            raise ConfigError("metric sweeps support --method ei or ke")
        lo, hi = args.k_range
        n = modes.phi.shape[1]
        if not n <= lo <= hi <= modes.phi.shape[0]:
            raise ConfigError(f"--k-range must satisfy {n} <= lo <= hi <= {modes.phi.shape[0]}")
        rows = []
        for k in range(lo, hi + 1):
            sel = ei_select(modes, k) if method == "ei" else ke_select(modes.phi, modes.mass, k)
            r = metric_report(modes.phi, modes.mass, sel.selected)
            rows.append([method, k, r.rms_mmac, r.cn, r.det_fisher])
        _emit(ex._csv(["method", "k", "rms_mmac", "cn", "det_fisher"], rows), args.out)
    _snapshot(cfg, args.out)


def cmd_repro(cfg: RunConfig, args):
    out = Path(_require(args, "out"))
    exp_cfg = getattr(cfg.repro, args.experiment)
    _, runner = ex.EXPERIMENTS[args.experiment]
    try:
        payloads, summary = runner(exp_cfg, cfg.seed)
    except CAAFError as e:
        raise type(e)(f"{args.experiment} failed: {e}") from e
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dumps({"seed": cfg.seed, args.experiment: dataclasses.asdict(exp_cfg)}))
    for name, text in payloads.items():
        (out / name).write_text(text, newline="\n")
    (out / "summary.json").write_text(dumps(summary))
    for c in summary["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {args.experiment}.{c['name']}")


COMMANDS = {
    "generate": cmd_generate,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "select": cmd_select,
    "evaluate": cmd_evaluate,
    "metrics": cmd_metrics,
    "repro": cmd_repro,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(2)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--data", help="dataset CSV, or mode shape JSON for ei/ke/metrics")
    common.add_argument("--out", help="output path (stdout when omitted)")
    common.add_argument("--k", type=int, help="number of sensors")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--method", choices=METHODS, help="selection method")
    common.add_argument("--targets", help="comma-separated target column names")

    p = _Parser(prog="caaf", description="Correlation-aware sensor selection toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("generate", parents=[common], help="write a synthetic, beam or field dataset")
    g.add_argument("kind", choices=("synthetic", "beam", "field"))
    sub.add_parser("cluster", parents=[common], help="affinity propagation over candidates")
    sub.add_parser("train", parents=[common], help="fit a surrogate on all candidates")
    a = sub.add_parser("attribute", parents=[common], help="integrated-gradient scores per candidate")
    a.add_argument("--model", help="trained model JSON from 'train'")
    sub.add_parser("select", parents=[common], help="choose k sensors")
    e = sub.add_parser("evaluate", parents=[common], help="score a selection")
    e.add_argument("--selection", help="selection JSON from 'select'")
    m = sub.add_parser("metrics", parents=[common], help="MMAC/CN/DET report or sweep")
    m.add_argument("--selection", help="selection JSON; omit for a sweep")
    m.add_argument("--k-range", type=int, nargs=2, default=(4, 20), metavar=("LO", "HI"))
    r = sub.add_parser("repro", parents=[common], help="rerun a scripted experiment")
    r.add_argument("experiment", choices=tuple(ex.EXPERIMENTS))
    return p


def _setup_logging():
    level = os.environ.get("CAAF_LOG", "warn").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"CAAF_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        force=True)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _setup_logging()
        cfg = _apply_flags(load_config(args.config), args)
        COMMANDS[args.command](cfg, args)
    except CAAFError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: no such file: {e.filename}", file=sys.stderr)
        return 2
    except (ArithmeticError, OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
