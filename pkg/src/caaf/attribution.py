"""Integrated Gradients, dataset-level aggregation, and the clustering + attribution selection pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import APConfig, ClusterAssignment, affinity_propagation, compute_affinity, reduce_to_centers
from .datamodel import SelectionResult, SensorDataset, apply_scaling, rank_descending
from .errors import ConfigError, DataError, PipelineError, ShapeError
from .surrogate import MLPConfig, SurrogateModel, TrainConfig, fit

log = logging.getLogger(__name__)

QUADRATURES = ("midpoint", "trapezoid")
# rows per jacobian evaluation when integrating many points at once
_CHUNK_ROWS = 1 << 17


@dataclass(frozen=True)
class IGConfig:
    steps: int = 256
    baseline: object = "zeros"
    quadrature: str = "midpoint"

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ConfigError("IG steps must be at least 1")
        if self.quadrature not in QUADRATURES:
            raise ConfigError(f"quadrature must be one of {QUADRATURES}")
        if isinstance(self.baseline, str):
            if self.baseline != "zeros":
                raise ConfigError("baseline must be 'zeros' or a vector")
        else:
            object.__setattr__(self, "baseline", tuple(float(b) for b in self.baseline))

    def baseline_vector(self, n_inputs):
        if isinstance(self.baseline, str):
            return np.zeros(n_inputs)
        b = np.asarray(self.baseline, dtype=float)
        if b.shape != (n_inputs,):
            raise ShapeError(f"baseline has length {b.size}, model expects {n_inputs}")
        return b

    def nodes(self):
        """Quadrature nodes on [0, 1] and their weights."""
        n = int(self.steps)
        if self.quadrature == "midpoint":
            return (np.arange(n) + 0.5) / n, np.full(n, 1.0 / n)
        alphas = np.arange(n + 1) / n
        w = np.full(n + 1, 1.0 / n)
        w[0] = w[-1] = 0.5 / n
        return alphas, w


@dataclass(frozen=True)
class AttributionResult:
    scores: np.ndarray
    fractions: np.ndarray
    ranking: tuple
    n_points_used: int

    def __post_init__(self):
        for name in ("scores", "fractions"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "ranking", tuple(int(i) for i in self.ranking))

    @classmethod
    def from_scores(cls, scores, n_points_used):
        scores = np.asarray(scores, dtype=float)
        if np.any(scores < 0):
            raise DataError("attribution scores must be non-negative")
        total = scores.sum()
        fractions = scores / total if total > 0 else np.full(len(scores), 1.0 / len(scores))
        return cls(scores, fractions, tuple(rank_descending(scores)), n_points_used)

    def to_dict(self):
        return {
            "scores": self.scores.tolist(),
            "fractions": self.fractions.tolist(),
            "ranking": list(self.ranking),
            "n_points_used": int(self.n_points_used),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["scores"], d["fractions"], d["ranking"], d["n_points_used"])


def integrated_gradients(model: SurrogateModel, x, cfg: IGConfig = IGConfig()):
    """Path-integrated input gradients from the baseline to ``x``.

    Returns ``(n_outputs, n_inputs)`` for a single point or
    ``(n, n_outputs, n_inputs)`` for a batch.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    d = model.config.n_inputs
    if x2.ndim != 2 or x2.shape[1] != d:
        raise ShapeError(f"expected input width {d}, got shape {x.shape}")
    base = cfg.baseline_vector(d)
    alphas, weights = cfg.nodes()
    delta = x2 - base
    out = np.empty((len(x2), model.config.n_outputs, d))
    per_chunk = max(1, _CHUNK_ROWS // len(alphas))
    for start in range(0, len(x2), per_chunk):
        dx = delta[start:start + per_chunk]
        path = base + alphas[None, :, None] * dx[:, None, :]
        jac = model.jacobian(path.reshape(-1, d)).reshape(len(dx), len(alphas), -1, d)
        avg = np.einsum("a,naod->nod", weights, jac)
        out[start:start + per_chunk] = avg * dx[:, None, :]
    return out[0] if single else out


def sample_points(n_snapshots, n_points, seed):
    """Sorted row indices, drawn without replacement; all rows if fewer than requested."""
    if n_snapshots == 0:
        raise DataError("cannot attribute over an empty dataset")
    if n_points >= n_snapshots:
        return np.arange(n_snapshots)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_snapshots, size=n_points, replace=False))


def aggregate_attribution(model: SurrogateModel, ds: SensorDataset, cfg: IGConfig = IGConfig(),
                          n_points: int = 10_000, seed: int = 0) -> AttributionResult:
    """Mean |IG| over sampled snapshots and over model outputs, per candidate."""
    if ds.n_snapshots == 0:
        raise DataError("cannot attribute over an empty dataset")
    rows = sample_points(ds.n_snapshots, n_points, seed)
    ig = integrated_gradients(model, ds.values[rows], cfg)
    scores = np.abs(ig).mean(axis=(0, 1))
    return AttributionResult.from_scores(scores, len(rows))


def _top_k(result: AttributionResult, k):
    return list(result.ranking[:k])


@dataclass(frozen=True)
class PipelineConfig:
    """Settings shared by the attribution-based selectors."""

    ap: APConfig = field(default_factory=APConfig)
    metric: str = "pearson"
    mlp: MLPConfig = field(default_factory=MLPConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ig: IGConfig = field(default_factory=IGConfig)
    n_points: int = 10_000
    attribution_seed: int = 0
    scaling: str = "none"


def _prepare(ds, scaling):
    if scaling == "none" or (ds.value_scaling is not None and ds.value_scaling.kind != "none"):
        return ds
    return apply_scaling(ds, scaling)


def _informative_columns(ds):
    spread = np.ptp(ds.values, axis=0)
    keep = np.flatnonzero(spread > 0)
    dropped = np.flatnonzero(spread == 0)
    return keep, dropped


def attribute(ds: SensorDataset, cfg: PipelineConfig):
    """Train a surrogate on every candidate of ``ds`` and attribute over it."""
    model, history = fit(ds, cfg.mlp, cfg.train)
    result = aggregate_attribution(model, ds, cfg.ig, cfg.n_points, cfg.attribution_seed)
    return model, history, result


def naive_fa_select(ds: SensorDataset, k: int, cfg: PipelineConfig = PipelineConfig()) -> SelectionResult:
    """Attribution ranking of a surrogate trained on all candidates, no clustering."""
    if not 1 <= k <= ds.n_candidates:
        raise ConfigError(f"k={k} must lie in [1, {ds.n_candidates}]")
    ds = _prepare(ds, cfg.scaling)
    model, history, result = attribute(ds, cfg)
    return SelectionResult(
        method="naive_fa",
        selected=_top_k(result, k),
        k=k,
        n_candidates=ds.n_candidates,
        ordered=True,
        scores=result.scores,
        metadata={
            "attribution": result.to_dict(),
            "final_train_loss": history.train[-1],
            "final_validation_loss": history.validation[-1] if history.validation else None,
        },
    )


@dataclass
class CAAFRun:
    """Intermediate products of one clustering + attribution run."""

    selection: SelectionResult
    exemplars: tuple
    labels: tuple
    attribution: AttributionResult
    model: SurrogateModel
    history: object
    dropped: tuple = ()


def caaf_run(ds: SensorDataset, k: int, cfg: PipelineConfig = PipelineConfig()) -> CAAFRun:
    """Cluster candidates, train on exemplars, attribute, keep the top ``k`` exemplars.

    Constant candidates carry no information; they are excluded before
    clustering and labelled ``-1``.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    ds = _prepare(ds, cfg.scaling)
    keep, dropped = _informative_columns(ds)
    if dropped.size:
        log.warning("excluding constant candidates %s", [ds.sensor_ids[i] for i in dropped])
    work = ds.select_columns(keep)
    if work.n_candidates >= 2:
        aff = compute_affinity(work, cfg.metric).with_preference(cfg.ap.preference)
        ca = affinity_propagation(aff, cfg.ap)
    else:
        ca = ClusterAssignment((0,), (0,), True, 0)
    if not ca.converged:
        raise PipelineError(
            f"affinity propagation did not converge after {ca.iterations} sweeps "
            f"({len(ca.exemplars)} provisional exemplars)"
        )
    n_ex = len(ca.exemplars)
    log.info("affinity propagation: %d exemplars from %d candidates in %d sweeps",
             n_ex, work.n_candidates, ca.iterations)
    if k > n_ex:
        raise ConfigError(
            f"k={k} exceeds the {n_ex} cluster centers found; raise the AP preference "
            f"(currently {cfg.ap.preference}) to obtain more clusters"
        )
    centers = reduce_to_centers(work, ca)
    model, history, result = attribute(centers, cfg)
    top_local = _top_k(result, k)
    to_original = [int(keep[e]) for e in ca.exemplars]
    selected = [to_original[i] for i in top_local]

    scores = np.zeros(ds.n_candidates)
    scores[to_original] = result.scores
    exemplars = tuple(to_original)
    labels = [-1] * ds.n_candidates
    for local, lab in enumerate(ca.labels):
        labels[int(keep[local])] = int(keep[lab])
    sel = SelectionResult(
        method="caaf",
        selected=selected,
        k=k,
        n_candidates=ds.n_candidates,
        ordered=True,
        scores=scores,
        metadata={
            "exemplars": list(exemplars),
            "labels": labels,
            "ap_iterations": ca.iterations,
            "excluded_constant": [int(i) for i in dropped],
            "attribution": result.to_dict(),
            "final_train_loss": history.train[-1],
            "final_validation_loss": history.validation[-1] if history.validation else None,
        },
    )
    return CAAFRun(sel, exemplars, tuple(labels), result, model, history, tuple(int(i) for i in dropped))


def caaf_select(ds: SensorDataset, k: int, cfg: PipelineConfig = PipelineConfig()) -> SelectionResult:
    return caaf_run(ds, k, cfg).selection
