"""Comparison placement methods: EI, KE, POD + QR pivoting, Bayesian utility, uniform."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .datamodel import SelectionResult, SensorDataset, rank_descending
from .errors import ConfigError, DataError, RankError, ShapeError
from .generators import ModeShapeMatrix

log = logging.getLogger(__name__)

# relative tolerance under which two scores count as tied (lowest index wins)
TIE_RTOL = 1e-12


def _as_phi(phi):
    if isinstance(phi, ModeShapeMatrix):
        return phi.phi
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2:
        raise ShapeError("mode shape matrix must be 2-D")
    return phi


def _argmin_tied(values):
    values = np.asarray(values)
    lo = values.min()
    return int(np.flatnonzero(values <= lo + TIE_RTOL * max(1.0, abs(lo)))[0])


def effective_independence(phi_s):
    """Diagonal of ``Phi (Phi^T Phi)^-1 Phi^T``, one entry per row."""
    a = phi_s.T @ phi_s
    x = np.linalg.solve(a, phi_s.T)
    return np.einsum("ij,ji->i", phi_s, x)


def ei_select(phi, k: int) -> SelectionResult:
    """Drop the row with the smallest effective independence until ``k`` remain."""
    phi = _as_phi(phi)
    m, n = phi.shape
    if not n <= k <= m:
        raise ConfigError(f"k={k} must satisfy N={n} <= k <= M={m}")
    alive = list(range(m))
    removed = []
    history = []
    step = 0
    while len(alive) > k:
        step += 1
        phi_s = phi[alive]
        a = phi_s.T @ phi_s
        if np.linalg.matrix_rank(a) < n:
            raise RankError("Fisher information matrix became singular", step=step)
        ef = effective_independence(phi_s)
        history.append(float(ef.sum()))
        drop = _argmin_tied(ef)
        removed.append(alive.pop(drop))
    return SelectionResult(
        method="ei",
        selected=alive,
        k=k,
        n_candidates=m,
        ordered=False,
        metadata={"elimination_order": removed, "ef_trace": history},
    )


def ke_scores(phi, mass):
    phi = _as_phi(phi)
    mass = np.asarray(mass, dtype=float)
    if mass.shape != (phi.shape[0], phi.shape[0]):
        raise ShapeError(f"mass matrix must be {phi.shape[0]}x{phi.shape[0]}, got {mass.shape}")
    return (phi * (mass @ phi)).sum(axis=1)


def ke_select(phi, mass, k: int) -> SelectionResult:
    """Top ``k`` nodes by row-summed modal kinetic energy."""
    scores = ke_scores(phi, mass)
    m = len(scores)
    if not 1 <= k <= m:
        raise ConfigError(f"k={k} must lie in [1, {m}]")
    order = rank_descending(scores)
    return SelectionResult("ke", order[:k], k, m, ordered=True, scores=scores)


def qr_pivots(a, k=None, rtol=1e-12):
    """Householder QR with column pivoting on ``a``; returns ``(pivots, r_diag)``.

    Columns whose remaining norms tie within ``rtol`` go to the lowest index.
    Stops early when the remaining columns are numerically zero.
    """
    a = np.array(a, dtype=float)
    m, n = a.shape
    k = min(m, n) if k is None else min(k, m, n)
    perm = np.arange(n)
    r_diag = []
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for j in range(k):
        norms = np.sum(a[j:, j:] ** 2, axis=0)
        top = norms.max()
        if math.sqrt(top) <= rtol * scale * max(m, n):
            break
        p = j + int(np.flatnonzero(norms >= top * (1 - rtol))[0])
        if p != j:
            a[:, [j, p]] = a[:, [p, j]]
            perm[[j, p]] = perm[[p, j]]
        x = a[j:, j]
        alpha = -math.copysign(np.linalg.norm(x), x[0] if x[0] != 0 else 1.0)
        v = x.copy()
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm > 0:
            v /= vnorm
            a[j:, j:] -= 2.0 * np.outer(v, v @ a[j:, j:])
        r_diag.append(abs(alpha))
    return perm[: len(r_diag)], np.array(r_diag)


def pod_qr_select(ds: SensorDataset, k: int) -> SelectionResult:
    """Pivot locations of the leading ``k`` POD modes of the snapshot matrix.

    The snapshot matrix is arranged sensors-as-rows and is not centered.
    """
    m = ds.n_candidates
    if not 1 <= k <= min(m, ds.n_snapshots):
        raise ConfigError(f"k={k} must lie in [1, min(M, n_snapshots)={min(m, ds.n_snapshots)}]")
    u, s, _ = np.linalg.svd(ds.values.T, full_matrices=False)
    # modes with numerically zero energy carry no spatial information
    rank = int(np.sum(s > s[0] * max(ds.values.shape) * np.finfo(float).eps)) if s[0] > 0 else 0
    psi = u[:, :min(k, rank)]
    pivots, rdiag = qr_pivots(psi.T, k)
    meta = {"singular_values": s[:k].tolist(), "r_diag": rdiag.tolist()}
    if len(pivots) < k:
        log.warning("POD basis has rank %d < k=%d; returning fewer pivots", len(pivots), k)
        meta["requested_k"] = k
    return SelectionResult("pod_qr", pivots, len(pivots), m, ordered=False, metadata=meta)


# ------------------------------------------------------------------ Bayes


@dataclass(frozen=True)
class BayesConfig:
    n_bins: int = 15
    n_mc: int = 20_000
    seed: int = 0
    # relative to the candidate's overall variance
    var_floor: float = 1e-12

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigError("n_bins must be at least 2")
        if self.n_mc < 1:
            raise ConfigError("n_mc must be at least 1")


@dataclass(frozen=True)
class UtilityEstimate:
    utilities: np.ndarray
    n_mc: int
    empty_bins: tuple = ()

    def __post_init__(self):
        u = np.array(self.utilities, dtype=float)
        if not np.all(np.isfinite(u)):
            raise DataError("utility estimate has non-finite entries")
        u.setflags(write=False)
        object.__setattr__(self, "utilities", u)


def bin_targets(y, n_bins):
    """Uniform bins over the range of ``y``; empty bins are folded into the nearest occupied one."""
    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        raise DataError("target is constant; cannot bin")
    idx = np.floor((y - lo) / (hi - lo) * n_bins).astype(int)
    np.clip(idx, 0, n_bins - 1, out=idx)
    counts = np.bincount(idx, minlength=n_bins)
    empty = tuple(int(b) for b in np.flatnonzero(counts == 0))
    if empty:
        log.warning("empty target bins %s merged into neighbours", list(empty))
        occupied = np.flatnonzero(counts)
        remap = occupied[np.abs(occupied[None, :] - np.arange(n_bins)[:, None]).argmin(axis=1)]
        idx = remap[idx]
    return idx, empty


def _gauss_logpdf(x, mu, var):
    return -0.5 * (np.log(2 * np.pi * var) + (x - mu) ** 2 / var)


def _mixture_logpdf(x, weights, mus, vars_):
    """log sum_c w_c N(x; mu_c, var_c); components along the last axis."""
    comps = np.log(weights) + _gauss_logpdf(x[..., None], mus, vars_)
    top = comps.max(axis=-1)
    return top + np.log(np.exp(comps - top[..., None]).sum(axis=-1))


def bayes_utility(ds: SensorDataset, cfg: BayesConfig = BayesConfig()) -> UtilityEstimate:
    """Monte-Carlo estimate of mean log[p(x_i | bin(y)) / p(x_i)] for every candidate.

    Densities are Gaussian per (bin, group) for the conditional and a mixture
    with one component per group for the marginal. Samples (x_i, bin) are
    drawn from the data rows.
    """
    if ds.n_targets != 1:
        raise DataError("bayesian utility needs exactly one target")
    if ds.n_snapshots < cfg.n_bins:
        raise DataError(f"need at least n_bins={cfg.n_bins} snapshots")
    y = ds.targets[:, 0]
    bins, empty = bin_targets(y, cfg.n_bins)
    groups = np.zeros(ds.n_snapshots, dtype=int) if ds.groups is None else \
        np.unique(np.asarray(ds.groups), return_inverse=True)[1]
    n_groups = int(groups.max()) + 1
    x = ds.values

    rng = np.random.default_rng(cfg.seed)
    n = ds.n_snapshots
    rows = rng.choice(n, size=cfg.n_mc, replace=cfg.n_mc > n)
    rows.sort()

    # marginal: one component per group
    g_weight = np.bincount(groups, minlength=n_groups) / n
    g_mu = np.stack([x[groups == g].mean(axis=0) for g in range(n_groups)], axis=-1)
    g_var = np.stack([x[groups == g].var(axis=0) for g in range(n_groups)], axis=-1)
    # floors scale with each column so the estimate is invariant to affine rescaling
    floor = (cfg.var_floor * np.maximum(x.var(axis=0), np.finfo(float).tiny))[:, None]
    np.maximum(g_var, floor, out=g_var)
    xs = x[rows]
    log_marg = _mixture_logpdf(xs, g_weight, g_mu[None], g_var[None])

    # conditional: per bin, a mixture over groups present in that bin
    log_cond = np.empty_like(xs)
    sb = bins[rows]
    for b in np.unique(sb):
        in_bin = bins == b
        gb = groups[in_bin]
        xb = x[in_bin]
        present = np.unique(gb)
        w = np.array([np.mean(gb == g) for g in present])
        mu = np.stack([xb[gb == g].mean(axis=0) for g in present], axis=-1)
        var = np.stack([xb[gb == g].var(axis=0) for g in present], axis=-1)
        np.maximum(var, floor, out=var)
        sel = sb == b
        log_cond[sel] = _mixture_logpdf(xs[sel], w, mu[None], var[None])
    util = (log_cond - log_marg).mean(axis=0)
    return UtilityEstimate(util, cfg.n_mc, empty)


def bayes_select(ds: SensorDataset, cfg: BayesConfig, k: int) -> SelectionResult:
    """Top ``k`` candidates by individual utility (not conditioned on earlier picks)."""
    est = bayes_utility(ds, cfg)
    m = ds.n_candidates
    if not 1 <= k <= m:
        raise ConfigError(f"k={k} must lie in [1, {m}]")
    order = rank_descending(est.utilities)
    return SelectionResult("bayes", order[:k], k, m, ordered=True, scores=est.utilities,
                           metadata={"n_mc": est.n_mc, "empty_bins": list(est.empty_bins)})


# ---------------------------------------------------------------- uniform


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _dedupe(indices, m):
    used = set()
    out = []
    for i in indices:
        if i in used:
            for d in range(1, m):
                for c in (i - d, i + d):
                    if 0 <= c < m and c not in used:
                        i = c
                        break
                else:
                    continue
                break
        used.add(i)
        out.append(i)
    return out


def uniform_select(m: int, k: int, anchors: str = "both_ends") -> SelectionResult:
    """Evenly spaced indices ``round(j (M-1) / (k-1))``.

    With ``both_ends`` the first and last candidates are pinned explicitly
    (the spacing rule already lands on them); ``none`` also allows ``k=1``,
    which picks the middle candidate.
    """
    if anchors not in ("none", "both_ends"):
        raise ConfigError("anchors must be 'none' or 'both_ends'")
    if not 1 <= k <= m:
        raise ConfigError(f"k={k} must lie in [1, {m}]")
    if anchors == "both_ends" and k < 2:
        raise ConfigError("both_ends needs k >= 2")
    if k == 1:
        idx = [_round_half_up((m - 1) / 2)]
    else:
        idx = [_round_half_up(j * (m - 1) / (k - 1)) for j in range(k)]
        if anchors == "both_ends":
            idx[0], idx[-1] = 0, m - 1
    idx = _dedupe(idx, m)
    return SelectionResult("uniform", idx, k, m, ordered=False, metadata={"anchors": anchors})


def uniform_grid_select(shape, k: int) -> SelectionResult:
    """``k`` sensors on an even ``rows x cols`` lattice over a 2-D candidate grid.

    The lattice uses the factor pair of ``k`` closest to the grid aspect
    ratio; candidates are indexed row-major.
    """
    nr, nc = (int(s) for s in shape)
    if not 1 <= k <= nr * nc:
        raise ConfigError(f"k={k} must lie in [1, {nr * nc}]")
    pairs = [(r, k // r) for r in range(1, k + 1) if k % r == 0 and r <= nr and k // r <= nc]
    if not pairs:
        raise ConfigError(f"cannot arrange {k} sensors on a {nr}x{nc} lattice")
    aspect = nr / nc
    r, c = min(pairs, key=lambda p: (abs(math.log((p[0] / p[1]) / aspect)), p[0]))
    rows = [_round_half_up((i + 0.5) * nr / r - 0.5) for i in range(r)]
    cols = [_round_half_up((j + 0.5) * nc / c - 0.5) for j in range(c)]
    idx = [ri * nc + cj for ri in rows for cj in cols]
    return SelectionResult("uniform", idx, k, nr * nc, ordered=False,
                           metadata={"lattice": [r, c], "grid": [nr, nc]})
