"""Scripted experiments with pinned seeds, shared by the CLI and scripts/.

Each ``run_*`` function returns ``(payloads, summary)`` where ``payloads``
maps file names to deterministic text and ``summary`` holds the pass/fail
checks against the acceptance bands.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attribution import IGConfig, PipelineConfig, caaf_run, naive_fa_select
from .baselines import ei_select, ke_select, uniform_grid_select
from .clustering import APConfig, cluster
from .datamodel import SensorDataset, dumps
from .errors import ConfigError
from .generators import BeamModel, SyntheticSpec, candidate_gram, gen_beam_dataset, gen_correlated_field, gen_synthetic
from .metrics import crosscorr_map, l2_error, metric_report, pearson
from .surrogate import MLPConfig, TrainConfig, fit, split_indices

log = logging.getLogger(__name__)


def stage_seed(seed: int, *keys) -> int:
    """Independent 32-bit seed for a named stage, derived from the global seed."""
    spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    return int(np.random.SeedSequence(int(seed), spawn_key=spawn).generate_state(1)[0])


def _csv(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    return "\n".join(lines) + "\n"


def _check(name, ok, **detail):
    return {"name": name, "pass": bool(ok), **detail}


def _seeded_pipeline(base: PipelineConfig, seed, *keys) -> PipelineConfig:
    return replace(
        base,
        mlp=replace(base.mlp, seed=stage_seed(seed, *keys, "init")),
        train=replace(base.train, shuffle_seed=stage_seed(seed, *keys, "shuffle")),
        attribution_seed=stage_seed(seed, *keys, "points"),
    )


# ------------------------------------------------------------ prediction


def prediction_error(ds: SensorDataset, selected, mlp: MLPConfig, tc: TrainConfig,
                     n_seeds: int = 10, test_fraction: float = 0.2, seed: int = 0):
    """Held-out relative L2 error and correlation of surrogates trained on ``selected`` columns.

    The train/test split is fixed by ``seed``; each repetition reseeds the
    initialization and shuffling only. Returns per-seed lists plus means and
    population standard deviations.
    """
    if n_seeds < 1:
        raise ConfigError("n_seeds must be at least 1")
    sub = ds.select_columns(list(selected))
    train_rows, test_rows = split_indices(
        ds.n_snapshots, TrainConfig(validation_fraction=test_fraction, shuffle_seed=stage_seed(seed, "split")))
    if len(test_rows) < 2:
        raise ConfigError("test split too small")
    tr = sub.select_rows(np.sort(train_rows))
    te = sub.select_rows(np.sort(test_rows))
    eps, corr = [], []
    for r in range(n_seeds):
        model, _ = fit(tr, replace(mlp, seed=stage_seed(seed, "eval", r, "init")),
                       replace(tc, shuffle_seed=stage_seed(seed, "eval", r, "shuffle")))
        pred = model.forward(te.values)
        eps.append(l2_error(pred, te.targets))
        corr.append(pearson(pred, te.targets))
    return {
        "epsilon": eps,
        "correlation": corr,
        "epsilon_mean": float(np.mean(eps)),
        "epsilon_std": float(np.std(eps)),
        "correlation_mean": float(np.mean(corr)),
        "correlation_std": float(np.std(corr)),
        "n_seeds": n_seeds,
        "n_train": len(train_rows),
        "n_test": len(test_rows),
    }


# --------------------------------------------------------------- table 1


@dataclass(frozen=True)
class Table1Config:
    spec: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(n=20_000))
    # X1 and X2 are exactly interchangeable; this jitter seed makes X2 the center
    ap: APConfig = field(default_factory=lambda: APConfig(preference=0.7, damping=0.5, jitter_seed=1))
    mlp: MLPConfig = field(default_factory=MLPConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15))
    ig: IGConfig = field(default_factory=IGConfig)
    n_points: int = 10_000
    n_seeds: int = 10
    naive_expected: tuple = (0.29, 0.59, 0.12)
    clustered_expected: tuple = (0.76, 0.24)
    fraction_tol: float = 0.10
    corr_tol: float = 0.02


def _pipeline(cfg, metric="pearson", scaling="none"):
    return PipelineConfig(ap=cfg.ap, metric=metric, mlp=cfg.mlp, train=cfg.train, ig=cfg.ig,
                          n_points=cfg.n_points, scaling=scaling)


def run_table1(cfg: Table1Config = Table1Config(), seed: int = 0):
    spec = replace(cfg.spec, seed=stage_seed(seed, "table1", "data"))
    ds = gen_synthetic(spec)
    full = np.column_stack([ds.values, ds.targets])
    c = np.corrcoef(full, rowvar=False)
    realized_ref = c[0, :3]
    realized_tgt = c[:3, 3]
    corr_ok = (np.all(np.abs(realized_ref - spec.corr_to_ref) <= cfg.corr_tol)
               and np.all(np.abs(realized_tgt - spec.corr_to_target) <= cfg.corr_tol))

    _, ca = cluster(ds, "pearson", cfg.ap)
    groups = sorted(sorted(v) for v in ca.clusters().values())
    cluster_ok = ca.converged and groups == [[0, 1], [2]] and ca.labels[0] == 1

    base = _pipeline(cfg)
    naive_rows, clustered_rows = [], []
    naive_hits = 0
    for r in range(cfg.n_seeds):
        pc = _seeded_pipeline(base, seed, "table1", r)
        nv = naive_fa_select(ds, 3, pc)
        frac = nv.metadata["attribution"]["fractions"]
        rank_ok = list(nv.selected) == [1, 0, 2]
        frac_ok = all(abs(f - e) <= cfg.fraction_tol for f, e in zip(frac, cfg.naive_expected))
        naive_hits += rank_ok and frac_ok
        naive_rows.append([r, *[i + 1 for i in nv.selected], *frac])
        run = caaf_run(ds, 2, pc)
        cf = run.attribution.fractions
        clustered_rows.append([r, *[e + 1 for e in run.exemplars], *cf])
    cf_mean = np.mean([row[3:] for row in clustered_rows], axis=0)
    clustered_ok = all(abs(f - e) <= cfg.fraction_tol for f, e in zip(cf_mean, cfg.clustered_expected))

    checks = [
        _check("correlations", corr_ok, corr_to_ref=realized_ref, corr_to_target=realized_tgt),
        _check("clusters", cluster_ok, clusters_one_based=[[i + 1 for i in g] for g in groups],
               exemplars_one_based=[e + 1 for e in ca.exemplars]),
        _check("naive_ranking_and_fractions", naive_hits >= 9 * cfg.n_seeds / 10,
               hits=naive_hits, n_seeds=cfg.n_seeds),
        _check("clustered_fractions", clustered_ok, mean_fractions=cf_mean),
    ]
    payloads = {
        "naive.csv": _csv(["seed", "rank1", "rank2", "rank3", "frac_x1", "frac_x2", "frac_x3"], naive_rows),
        "clustered.csv": _csv(["seed", "center_a", "center_b", "frac_a", "frac_b"], clustered_rows),
        "clusters.json": dumps(ca.to_dict()),
    }
    return payloads, {"experiment": "table1", "checks": checks}


# ----------------------------------------------------------------- fig 2


@dataclass(frozen=True)
class Fig2Config:
    c3_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    base_targets: tuple = (0.65, 0.89)
    corr_to_ref: tuple = (1.0, 0.9, 0.0)
    # explained variance kept when (c1, c2) must shrink to fit a larger c3
    max_r2: float = 0.99
    n: int = 20_000
    ap: APConfig = field(default_factory=lambda: APConfig(preference=0.7, damping=0.5, jitter_seed=1))
    mlp: MLPConfig = field(default_factory=MLPConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15))
    ig: IGConfig = field(default_factory=IGConfig)
    n_points: int = 10_000
    n_seeds: int = 3


def feasible_targets(c12, c3, corr_to_ref, max_r2):
    """Scale ``c12`` so that the full target vector explains at most ``max_r2`` of Y.

    X3 is uncorrelated with X1 and X2, so its share ``c3**2`` is untouched.
    """
    gram = candidate_gram(corr_to_ref)[:2, :2]
    c12 = np.asarray(c12, dtype=float)
    r2_12 = float(c12 @ np.linalg.solve(gram, c12))
    room = max_r2 - c3 * c3
    if room <= 0:
        raise ConfigError(f"Corr(X3, Y)={c3} leaves no room below explained variance {max_r2}")
    scale = min(1.0, np.sqrt(room / r2_12))
    return (float(c12[0] * scale), float(c12[1] * scale), float(c3)), scale


def run_fig2(cfg: Fig2Config = Fig2Config(), seed: int = 0):
    base = _pipeline(cfg)
    rows = []
    for gi, c3 in enumerate(cfg.c3_grid):
        target, scale = feasible_targets(cfg.base_targets, c3, cfg.corr_to_ref, cfg.max_r2)
        spec = SyntheticSpec(cfg.corr_to_ref, target, cfg.n, stage_seed(seed, "fig2", gi, "data"))
        ds = gen_synthetic(spec)
        naive, clustered = [], []
        for r in range(cfg.n_seeds):
            pc = _seeded_pipeline(base, seed, "fig2", gi, r)
            nv = naive_fa_select(ds, 3, pc)
            naive.append(nv.metadata["attribution"]["fractions"][2])
            run = caaf_run(ds, 2, pc)
            if 2 not in run.exemplars:
                raise ConfigError(f"X3 is not a cluster center at Corr(X3,Y)={c3}")
            clustered.append(float(run.attribution.fractions[run.exemplars.index(2)]))
        rows.append([c3, scale, float(np.mean(naive)), float(np.std(naive)),
                     float(np.mean(clustered)), float(np.std(clustered))])
    nmean = [r[2] for r in rows]
    cmean = [r[4] for r in rows]
    checks = [
        _check("clustered_exceeds_naive", all(c > n for c, n in zip(cmean, nmean))),
        _check("naive_non_decreasing", all(np.diff(nmean) >= 0), naive=nmean),
        _check("clustered_non_decreasing", all(np.diff(cmean) >= 0), clustered=cmean),
    ]
    payloads = {"fig2.csv": _csv(["corr_x3_y", "c12_scale", "naive_mean", "naive_std",
                                  "clustered_mean", "clustered_std"], rows)}
    return payloads, {"experiment": "fig2", "checks": checks}


# ------------------------------------------------------------- beam fig 4


@dataclass(frozen=True)
class BeamConfig:
    beam: BeamModel = field(default_factory=BeamModel)
    n_profiles: int = 50_000
    ap: APConfig = field(default_factory=lambda: APConfig(preference=0.991))
    mlp: MLPConfig = field(default_factory=lambda: MLPConfig(hidden_layers=(12, 12, 12), activation="relu"))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=40))
    ig: IGConfig = field(default_factory=IGConfig)
    n_points: int = 10_000
    scaling: str = "zscore"
    n_seeds: int = 5
    k_min: int = 4
    k_max: int = 20
    k_check: int = 15


def run_beam_fig4(cfg: BeamConfig = BeamConfig(), seed: int = 0):
    ds, modes = gen_beam_dataset(cfg.beam, cfg.n_profiles, stage_seed(seed, "beam", "data"))
    phi, mass = modes.phi, modes.mass
    base = _pipeline(cfg, scaling=cfg.scaling)
    ks = range(cfg.k_min, cfg.k_max + 1)
    rows = []
    for k in ks:
        for name, sel in (("ei", ei_select(modes, k).selected), ("ke", ke_select(phi, mass, k).selected)):
            rep = metric_report(phi, mass, sel)
            rows.append([name, 0, k, rep.rms_mmac, rep.cn, rep.det_fisher])
    ei_check = metric_report(phi, mass, ei_select(modes, cfg.k_check).selected)
    wins = 0
    selections = {}
    for r in range(cfg.n_seeds):
        pc = _seeded_pipeline(base, seed, "beam", r)
        run = caaf_run(ds, cfg.k_check, pc)
        ranking = [run.exemplars[i] for i in run.attribution.ranking]
        if len(ranking) < cfg.k_max:
            raise ConfigError(f"only {len(ranking)} cluster centers; raise the AP preference to reach k={cfg.k_max}")
        selections[str(r)] = ranking
        for k in ks:
            rep = metric_report(phi, mass, ranking[:k])
            rows.append(["caaf", r, k, rep.rms_mmac, rep.cn, rep.det_fisher])
            if k == cfg.k_check:
                wins += rep.rms_mmac <= ei_check.rms_mmac and rep.cn <= ei_check.cn
    checks = [_check("caaf_beats_ei_at_k", wins > cfg.n_seeds / 2, k=cfg.k_check, wins=wins,
                     n_seeds=cfg.n_seeds, ei_rms=ei_check.rms_mmac, ei_cn=ei_check.cn)]
    payloads = {
        "sweep.csv": _csv(["method", "seed", "k", "rms_mmac", "cn", "det_fisher"], rows),
        "caaf_rankings.json": dumps(selections),
        "modes.json": dumps(modes.to_dict()),
    }
    return payloads, {"experiment": "beam_fig4", "checks": checks}


# ---------------------------------------------------------- field surrogate


@dataclass(frozen=True)
class FieldConfig:
    nx: int = 19
    nz: int = 19
    nt: int = 4000
    correlation_length: float = 2.0
    shift: tuple = (3, 2)
    noise: float = 0.3
    k: int = 10
    max_offset: int = 6
    ap: APConfig = field(default_factory=lambda: APConfig(preference="median", damping=0.9))
    mlp: MLPConfig = field(default_factory=lambda: MLPConfig(hidden_layers=(16, 16)))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    ig: IGConfig = field(default_factory=lambda: IGConfig(steps=64))
    n_points: int = 2000
    n_eval_seeds: int = 10


def field_dataset(cfg: FieldConfig, seed: int):
    """Candidates are the first field on the grid; the target is the second field at the center."""
    base, other = gen_correlated_field(cfg.nx, cfg.nz, cfg.nt, cfg.correlation_length,
                                       stage_seed(seed, "field", "data"), cfg.shift, cfg.noise)
    cx, cz = cfg.nx // 2, cfg.nz // 2
    ids = [f"p{i}_{j}" for i in range(cfg.nx) for j in range(cfg.nz)]
    ds = SensorDataset(base.reshape(cfg.nt, -1), other[:, cx, cz][:, None], ids, ["target"])
    return ds, base, other


def run_field(cfg: FieldConfig = FieldConfig(), seed: int = 0):
    ds, base, other = field_dataset(cfg, seed)
    offs = range(-cfg.max_offset, cfg.max_offset + 1)
    cm = crosscorr_map(base, other, offs, offs)
    peak = cm.argmax()
    pc = _seeded_pipeline(_pipeline(cfg), seed, "field")
    run = caaf_run(ds, cfg.k, pc)
    caaf_sel = list(run.selection.selected)
    uni_sel = list(uniform_grid_select((cfg.nx, cfg.nz), cfg.k).selected)
    ev_caaf = prediction_error(ds, caaf_sel, cfg.mlp, cfg.train, cfg.n_eval_seeds, seed=stage_seed(seed, "field", "eval"))
    ev_uni = prediction_error(ds, uni_sel, cfg.mlp, cfg.train, cfg.n_eval_seeds, seed=stage_seed(seed, "field", "eval"))
    n_ex = len(run.exemplars)
    checks = [
        _check("crosscorr_peak_at_shift", peak == tuple(cfg.shift), peak=peak, shift=cfg.shift),
        _check("caaf_completes", n_ex < ds.n_candidates and len(set(caaf_sel)) == cfg.k,
               exemplars=n_ex, candidates=ds.n_candidates),
        _check("caaf_beats_uniform", ev_caaf["epsilon_mean"] < ev_uni["epsilon_mean"],
               caaf_epsilon=ev_caaf["epsilon_mean"], uniform_epsilon=ev_uni["epsilon_mean"]),
    ]
    payloads = {
        "crosscorr.json": dumps(cm.to_dict()),
        "selection.json": dumps({"caaf": caaf_sel, "uniform": uni_sel, "exemplars": list(run.exemplars)}),
        "prediction.json": dumps({"caaf": ev_caaf, "uniform": ev_uni}),
    }
    return payloads, {"experiment": "field", "checks": checks}


EXPERIMENTS = {
    "table1": (Table1Config, run_table1),
    "fig2": (Fig2Config, run_fig2),
    "beam_fig4": (BeamConfig, run_beam_fig4),
    "field": (FieldConfig, run_field),
}


def config_snapshot(cfg) -> dict:
    return asdict(cfg)
