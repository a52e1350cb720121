"""Quality metrics for sensor sets and predictions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MetricError, ShapeError


@dataclass(frozen=True)
class MetricReport:
    rms_mmac: float
    cn: float
    det_fisher: float
    k: int | None = None

    def to_dict(self):
        return {"k": self.k, "rms_mmac": self.rms_mmac, "cn": self.cn, "det_fisher": self.det_fisher}


@dataclass(frozen=True)
class CrossCorrMap:
    values: np.ndarray
    dx: np.ndarray
    dz: np.ndarray
    units: str = "grid points"
    metadata: dict = field(default_factory=dict)

    def argmax(self):
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return int(self.dx[i]), int(self.dz[j])

    def to_dict(self):
        return {"values": self.values.tolist(), "dx": self.dx.tolist(), "dz": self.dz.tolist(),
                "units": self.units}


def mmac(phi_s, mass_s=None):
    """Mass-weighted modal assurance matrix of the columns of ``phi_s``."""
    phi_s = np.asarray(phi_s, dtype=float)
    k = phi_s.shape[0]
    mass_s = np.eye(k) if mass_s is None else np.asarray(mass_s, dtype=float)
    if mass_s.shape != (k, k):
        raise ShapeError(f"mass matrix must be {k}x{k}, got {mass_s.shape}")
    g = phi_s.T @ mass_s @ phi_s
    d = np.diag(g)
    if np.any(d == 0):
        raise MetricError(f"mode(s) {np.flatnonzero(d == 0).tolist()} have zero mass norm")
    out = g**2 / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return out


def rms_offdiag(m):
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if n < 2:
        return 0.0
    off = m[~np.eye(n, dtype=bool)]
    return float(np.sqrt(np.mean(off**2)))


def condition_number(phi_s):
    """Ratio of extreme singular values; ``inf`` when the smallest is zero."""
    s = np.linalg.svd(np.asarray(phi_s, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return float("inf")
    if s[-1] <= s[0] * np.finfo(float).eps * max(np.shape(phi_s)):
        return float("inf")
    return float(s[0] / s[-1])


def fisher_det(phi_s):
    phi_s = np.asarray(phi_s, dtype=float)
    return float(np.linalg.det(phi_s.T @ phi_s))


def metric_report(phi, mass, selected) -> MetricReport:
    """RMS of off-diagonal MMAC, CN and Fisher determinant for rows ``selected``."""
    phi = np.asarray(phi, dtype=float)
    sel = list(selected)
    mass = np.asarray(mass, dtype=float)
    phi_s = phi[sel]
    mass_s = mass[np.ix_(sel, sel)]
    return MetricReport(rms_offdiag(mmac(phi_s, mass_s)), condition_number(phi_s),
                        fisher_det(phi_s), len(sel))


def l2_error(pred, truth):
    """||pred - truth|| / ||truth - mean(truth)||."""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError("pred and truth must have equal length")
    denom = np.linalg.norm(truth - truth.mean())
    if denom == 0:
        raise MetricError("relative L2 error undefined for constant truth")
    return float(np.linalg.norm(pred - truth) / denom)


def pearson(x, y):
    """Sample correlation coefficient."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ShapeError("pearson needs two vectors of equal length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc) / (x.size - 1))
    sy = np.sqrt(np.sum(yc * yc) / (y.size - 1))
    if sx == 0 or sy == 0:
        raise MetricError("pearson correlation undefined for zero variance")
    r = np.sum(xc * yc) / (x.size - 1) / (sx * sy)
    return float(np.clip(r, -1.0, 1.0))


def crosscorr_map(field_a, field_b, dx_range, dz_range, periodic=False) -> CrossCorrMap:
    """Two-point correlation <a'(x, z) b'(x + dx, z + dz)> / (sigma_a sigma_b).

    Fields are ``(nt, nx, nz)``. Fluctuations and deviations are time
    statistics (1/n convention) at each point; the coefficient is averaged
    over all origins for which the shifted point lies inside the grid (or all
    origins when ``periodic``).
    """
    a = np.asarray(field_a, dtype=float)
    b = np.asarray(field_b, dtype=float)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError("fields must share an (nt, nx, nz) shape")
    nt, nx, nz = a.shape
    ap = a - a.mean(axis=0)
    bp = b - b.mean(axis=0)
    sa = ap.std(axis=0)
    sb = bp.std(axis=0)
    if np.any(sa == 0) or np.any(sb == 0):
        raise MetricError("field has a point with zero temporal variance")
    an = ap / sa
    bn = bp / sb
    dxs = np.asarray(list(dx_range), dtype=int)
    dzs = np.asarray(list(dz_range), dtype=int)
    out = np.empty((len(dxs), len(dzs)))
    for i, ddx in enumerate(dxs):
        for j, ddz in enumerate(dzs):
            if periodic:
                shifted = np.roll(bn, shift=(-ddx, -ddz), axis=(1, 2))
                out[i, j] = np.mean(an * shifted)
                continue
            x0, x1 = max(0, -ddx), min(nx, nx - ddx)
            z0, z1 = max(0, -ddz), min(nz, nz - ddz)
            if x0 >= x1 or z0 >= z1:
                raise DataError(f"offset ({ddx}, {ddz}) leaves no valid origins")
            pa = an[:, x0:x1, z0:z1]
            pb = bn[:, x0 + ddx:x1 + ddx, z0 + ddz:z1 + ddz]
            out[i, j] = np.mean(pa * pb)
    np.clip(out, -1.0, 1.0, out=out)
    return CrossCorrMap(out, dxs, dzs, metadata={"periodic": periodic, "nt": nt})
