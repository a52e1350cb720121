"""Affinity Propagation over candidate sensors."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .datamodel import SensorDataset
from .errors import ConfigError, DataError, MetricError

log = logging.getLogger(__name__)

METRICS = ("pearson", "neg_euclidean", "pixel")


@dataclass(frozen=True)
class AffinityMatrix:
    s: np.ndarray
    metric: str
    preference: float | None = None

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DataError(f"affinity matrix must be square, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DataError("affinity matrix has non-finite entries")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    def with_preference(self, preference) -> "AffinityMatrix":
        """Copy with ``preference`` on the diagonal (``"median"`` uses the off-diagonal median)."""
        n = self.s.shape[0]
        if isinstance(preference, str):
            if preference != "median":
                raise ConfigError(f"preference must be a number or 'median', got {preference!r}")
            off = self.s[~np.eye(n, dtype=bool)]
            preference = float(np.median(off)) if off.size else 0.0
        s = self.s.copy()
        np.fill_diagonal(s, float(preference))
        return AffinityMatrix(s, self.metric, float(preference))


@dataclass(frozen=True)
class APConfig:
    damping: float = 0.5
    max_iter: int = 10_000
    convergence_iter: int = 10
    preference: float | str = 0.7
    # seeded perturbation that separates exactly symmetric candidates; None disables it
    jitter_seed: int | None = 0

    def __post_init__(self):
        if not 0.5 <= self.damping < 1.0:
            raise ConfigError(f"damping must lie in [0.5, 1), got {self.damping}")
        if self.max_iter < 1 or self.convergence_iter < 1:
            raise ConfigError("max_iter and convergence_iter must be positive")
        if self.convergence_iter > self.max_iter:
            raise ConfigError("convergence_iter must not exceed max_iter")
        if isinstance(self.preference, str) and self.preference != "median":
            raise ConfigError(f"preference must be a number or 'median', got {self.preference!r}")


@dataclass(frozen=True)
class ClusterAssignment:
    exemplars: tuple
    labels: tuple
    converged: bool
    iterations: int

    def __post_init__(self):
        object.__setattr__(self, "exemplars", tuple(sorted(int(e) for e in self.exemplars)))
        object.__setattr__(self, "labels", tuple(int(l) for l in self.labels))

    def clusters(self):
        """Mapping exemplar -> member indices."""
        out = {e: [] for e in self.exemplars}
        for i, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(i)
        return out

    def to_dict(self):
        return {
            "exemplars": list(self.exemplars),
            "labels": list(self.labels),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["exemplars"], d["labels"], d["converged"], d["iterations"])


def pearson_affinity(x):
    """Column-wise Pearson correlation matrix of ``x`` (snapshots x candidates)."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=0)
    norm = np.sqrt(np.einsum("ij,ij->j", xc, xc))
    if np.any(norm == 0):
        raise MetricError(f"constant candidate column(s) {np.flatnonzero(norm == 0).tolist()} under pearson")
    z = xc / norm
    c = z.T @ z
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    return c


def neg_euclidean_affinity(x):
    x = np.asarray(x, dtype=float)
    sq = np.einsum("ij,ij->j", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x.T @ x)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return -np.sqrt(d2)


def pixel_affinity(image):
    """Negated distance over (R, G, B, row, col), each channel min-max scaled to [0, 1].

    ``image`` is an ``(H, W, 3)`` array; returns an ``(H*W, H*W)`` matrix in
    row-major pixel order.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w, _ = img.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    feats = np.column_stack([img.reshape(-1, 3), rows.ravel(), cols.ravel()]).T
    return neg_euclidean_affinity(_unit_range_rows(feats))


def _unit_range_rows(f):
    lo = f.min(axis=1, keepdims=True)
    span = f.max(axis=1, keepdims=True) - lo
    span[span == 0] = 1.0
    return (f - lo) / span


def compute_affinity(ds: SensorDataset, metric: str = "pearson") -> AffinityMatrix:
    """Similarity between candidate columns of ``ds``.

    For ``pixel`` each column is one pixel and each snapshot row one feature
    channel (R, G, B, x, y); rows are scaled to [0, 1] before the distance.
    """
    if metric not in METRICS:
        raise ConfigError(f"unknown affinity metric {metric!r}; expected one of {METRICS}")
    if ds.n_candidates < 2:
        raise DataError("affinity needs at least two candidates")
    x = ds.values
    if metric == "pearson":
        try:
            s = pearson_affinity(x)
        except MetricError:
            bad = np.flatnonzero(np.ptp(x, axis=0) == 0)
            raise MetricError(
                f"constant candidate column(s) {[ds.sensor_ids[i] for i in bad]} under pearson"
            ) from None
    elif metric == "neg_euclidean":
        s = neg_euclidean_affinity(x)
    else:
        s = neg_euclidean_affinity(_unit_range_rows(x))
    return AffinityMatrix(s, metric)


def _jitter(s, seed):
    rng = np.random.default_rng(seed)
    eps = np.finfo(np.float64).eps
    tiny = np.finfo(np.float64).tiny
    return s + (eps * np.abs(s) + tiny * 100.0) * rng.standard_normal(s.shape)


def _assign(s, exemplars):
    labels = exemplars[np.argmax(s[:, exemplars], axis=1)]
    labels[exemplars] = exemplars
    return labels


def affinity_propagation(a: AffinityMatrix, cfg: APConfig) -> ClusterAssignment:
    """Cluster by exchanging responsibility and availability messages.

    ``a`` should already carry its preference on the diagonal; if
    ``a.preference`` is None, ``cfg.preference`` is applied first.
    """
    if a.preference is None:
        a = a.with_preference(cfg.preference)
    s_raw = a.s
    n = s_raw.shape[0]
    if n == 1:
        return ClusterAssignment((0,), (0,), True, 0)
    if np.all(s_raw == s_raw.flat[0]):
        return ClusterAssignment((0,), (0,) * n, True, 0)

    s = s_raw if cfg.jitter_seed is None else _jitter(s_raw, cfg.jitter_seed)
    lam = cfg.damping
    rows = np.arange(n)
    R = np.zeros((n, n))
    A = np.zeros((n, n))
    history = None
    stable = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # responsibilities
        AS = A + s
        first = np.argmax(AS, axis=1)
        best = AS[rows, first]
        AS[rows, first] = -np.inf
        second = AS.max(axis=1)
        Rnew = s - best[:, None]
        Rnew[rows, first] = s[rows, first] - second
        R = lam * R + (1.0 - lam) * Rnew
        # availabilities
        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        Anew = Rp.sum(axis=0)[None, :] - Rp
        self_avail = Anew[rows, rows].copy()
        np.minimum(Anew, 0.0, out=Anew)
        Anew[rows, rows] = self_avail
        A = lam * A + (1.0 - lam) * Anew
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(A))):
            raise ArithmeticError(f"non-finite AP messages at sweep {it}")

        current = (np.diag(A) + np.diag(R)) > 0
        if history is not None and np.array_equal(current, history):
            stable += 1
        else:
            stable = 0
        history = current
        if stable >= cfg.convergence_iter - 1 and current.any():
            converged = True
            break

    exemplars = np.flatnonzero(history)
    if exemplars.size == 0:
        log.warning("affinity propagation produced no exemplars after %d sweeps", it)
        return ClusterAssignment((), tuple(-1 for _ in range(n)), False, it)
    if not converged:
        log.warning("affinity propagation did not converge in %d sweeps", cfg.max_iter)
    labels = _assign(s, exemplars)
    # move each exemplar to the member with the largest within-cluster similarity
    refined = []
    for e in exemplars:
        members = np.flatnonzero(labels == e)
        refined.append(members[np.argmax(s[np.ix_(members, members)].sum(axis=0))])
    exemplars = np.unique(refined)
    labels = _assign(s, exemplars)
    return ClusterAssignment(tuple(exemplars), tuple(labels), converged, it)


def cluster(ds: SensorDataset, metric: str, cfg: APConfig) -> tuple[AffinityMatrix, ClusterAssignment]:
    a = compute_affinity(ds, metric).with_preference(cfg.preference)
    return a, affinity_propagation(a, cfg)


def reduce_to_centers(ds: SensorDataset, ca: ClusterAssignment) -> SensorDataset:
    """Keep only the exemplar columns, ascending by original index."""
    if not ca.converged or not ca.exemplars:
        raise DataError("cluster assignment did not converge; no centers to reduce to")
    if len(ca.labels) != ds.n_candidates:
        raise DataError("cluster assignment does not match dataset candidate count")
    return ds.select_columns(sorted(ca.exemplars))

