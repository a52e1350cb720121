"""Synthetic correlated data, the analytical cantilever beam, and smooth random fields."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .datamodel import SensorDataset
from .errors import ConfigError, GenerationError

log = logging.getLogger(__name__)

# largest per-entry change to target correlations accepted when shrinking an
# infeasible target vector onto the feasible set
FEASIBILITY_TOL = 0.02
ZERO_SNAP = 1e-10


@dataclass(frozen=True)
class SyntheticSpec:
    corr_to_ref: tuple = (1.0, 0.9, 0.0)
    corr_to_target: tuple = (0.65, 0.89, 0.32)
    n: int = 100_000
    seed: int = 0
    shrink_tol: float = FEASIBILITY_TOL

    def __post_init__(self):
        ref = tuple(float(c) for c in self.corr_to_ref)
        tgt = tuple(float(c) for c in self.corr_to_target)
        object.__setattr__(self, "corr_to_ref", ref)
        object.__setattr__(self, "corr_to_target", tgt)
        if len(ref) != len(tgt) or not ref:
            raise ConfigError("corr_to_ref and corr_to_target must have equal, nonzero length")
        if ref[0] != 1.0:
            raise ConfigError("corr_to_ref[0] must be 1 (candidate 1 is the reference)")
        for c in ref + tgt:
            if not -1.0 < c <= 1.0:
                raise ConfigError(f"correlation {c} outside (-1, 1]")
        if self.n < len(ref) + 3:
            raise ConfigError(f"n={self.n} too small for {len(ref)} candidates")

    @property
    def M(self):
        return len(self.corr_to_ref)


def _orthonormal_sample(rng, n, m):
    """``m`` zero-mean columns with exactly unit population variance, mutually uncorrelated."""
    g = rng.standard_normal((n, m))
    g -= g.mean(axis=0)
    q, r = np.linalg.qr(g)
    q *= np.sign(np.diag(r))
    return q * np.sqrt(n)


def candidate_gram(corr_to_ref):
    rho = np.asarray(corr_to_ref, dtype=float)
    c = np.outer(rho, rho)
    np.fill_diagonal(c, 1.0)
    return c


def gen_synthetic(spec: SyntheticSpec) -> SensorDataset:
    """Standardized candidates with prescribed correlations to candidate 1 and to Y.

    Candidate i is ``rho_i * X1 + sqrt(1 - rho_i^2) * E_i`` with independent
    ``E_i``; Y is the least-squares combination of the candidates matching
    ``corr_to_target``, topped up with an orthogonal component to unit
    variance. All sample correlations are exact by construction.

    When the requested target correlations need more than unit variance the
    vector is scaled down onto the feasible boundary, provided no entry moves
    by more than ``spec.shrink_tol``; otherwise ``GenerationError``.
    """
    rng = np.random.default_rng(spec.seed)
    m = spec.M
    rho = np.asarray(spec.corr_to_ref)
    c = np.asarray(spec.corr_to_target)
    gram = candidate_gram(rho)

    w, *_ = np.linalg.lstsq(gram, c, rcond=None)
    if not np.allclose(gram @ w, c, atol=1e-10):
        full = np.block([[gram, c[:, None]], [c[None, :], np.ones((1, 1))]])
        lam = float(np.linalg.eigvalsh(full)[0])
        raise GenerationError(
            f"target correlations inconsistent with candidate correlations; "
            f"smallest Gram eigenvalue {lam:.4g}"
        )
    r2 = float(c @ w)
    shrink = 1.0
    if r2 > 1.0:
        shrink = 1.0 / np.sqrt(r2)
        moved = float(np.max(np.abs(c - shrink * c)))
        if moved > spec.shrink_tol:
            full = np.block([[gram, c[:, None]], [c[None, :], np.ones((1, 1))]])
            lam = float(np.linalg.eigvalsh(full)[0])
            raise GenerationError(
                f"infeasible correlation targets (explained variance {r2:.4f} > 1); "
                f"smallest Gram eigenvalue {lam:.4g}"
            )
        log.info("target correlations scaled by %.5f to stay feasible", shrink)
        w = w * shrink
        r2 = 1.0

    z = _orthonormal_sample(rng, spec.n, m + 1)
    x = np.empty((spec.n, m))
    x[:, 0] = z[:, 0]
    for i in range(1, m):
        x[:, i] = rho[i] * z[:, 0] + np.sqrt(1.0 - rho[i] ** 2) * z[:, i]
    y = x @ w + np.sqrt(max(0.0, 1.0 - r2)) * z[:, m]
    return SensorDataset(
        values=x,
        targets=y[:, None],
        sensor_ids=[f"X{i + 1}" for i in range(m)],
        target_ids=["Y"],
    )


# ------------------------------------------------------------------- beam


@dataclass(frozen=True)
class ModeShapeMatrix:
    """Mode shapes sampled at the candidate nodes.

    ``phi`` is mass weighted (unit 2-norm columns divided by sqrt of the
    lumped nodal mass); ``unit_phi`` has the unit 2-norm columns.
    """

    phi: np.ndarray
    coords: np.ndarray
    nodal_mass: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[1] > phi.shape[0]:
            raise ConfigError(f"mode shape matrix must be M x N with N <= M, got {phi.shape}")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        coords = np.array(self.coords, dtype=float)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def unit_phi(self):
        return self.phi * np.sqrt(self.nodal_mass)

    @property
    def mass(self):
        return np.eye(self.phi.shape[0]) * self.nodal_mass

    def to_dict(self):
        return {
            "phi": self.phi.tolist(),
            "coords": self.coords.tolist(),
            "nodal_mass": self.nodal_mass,
            "mass_diagonal": [self.nodal_mass] * self.phi.shape[0],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["phi"]), np.asarray(d["coords"]), float(d["nodal_mass"]),
                   d.get("metadata", {}))


@dataclass(frozen=True)
class BeamModel:
    length: float = 0.45
    width: float = 0.02
    thickness: float = 0.002
    elastic_modulus: float = 32e9
    density: float = 5219.0
    n_nodes: int = 30
    n_modes: int = 3
    classical_roots: bool = False

    def __post_init__(self):
        if not self.n_nodes >= self.n_modes >= 1:
            raise ConfigError("need n_nodes >= n_modes >= 1")
        for name in ("length", "width", "thickness", "elastic_modulus", "density"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def nodal_mass(self):
        return self.density * self.width * self.thickness * self.length / self.n_nodes

    def natural_frequencies(self):
        """Angular frequencies sqrt(EI / (rho A)) * beta^2 of the used roots (rad/s)."""
        area = self.width * self.thickness
        inertia = self.width * self.thickness**3 / 12.0
        beta = beta_roots(self.n_modes, self.classical_roots) / self.length
        return np.sqrt(self.elastic_modulus * inertia / (self.density * area)) * beta**2


def beta_roots(n_modes, classical=False):
    """Products beta_n * L: ``n * pi`` by default, else roots of cos(x) cosh(x) = -1."""
    n = np.arange(1, n_modes + 1)
    if not classical:
        return n * np.pi
    f = lambda x: np.cos(x) * np.cosh(x) + 1.0
    return np.array([brentq(f, (k - 0.5) * np.pi - 1.0, (k - 0.5) * np.pi + 1.0) for k in n])


def cantilever_shape(x, beta, length):
    bl = beta * length
    sigma = (np.sinh(bl) - np.sin(bl)) / (np.cosh(bl) + np.cos(bl))
    return (np.cosh(beta * x) - np.cos(beta * x)) - sigma * (np.sinh(beta * x) - np.sin(beta * x))


def beam_mode_shapes(beam: BeamModel) -> ModeShapeMatrix:
    m, n = beam.n_nodes, beam.n_modes
    x = beam.length * np.arange(1, m + 1) / m
    roots = beta_roots(n, beam.classical_roots)
    phi = np.column_stack([cantilever_shape(x, r / beam.length, beam.length) for r in roots])
    # analytic zeros (the free tip under n*pi roots) come out as cancellation residue
    phi[np.abs(phi) < ZERO_SNAP * np.abs(phi).max(axis=0)] = 0.0
    phi /= np.linalg.norm(phi, axis=0)
    phi /= np.sqrt(beam.nodal_mass)
    meta = {
        "normalization": "2-norm then divide by sqrt(nodal mass)",
        "roots": "classical" if beam.classical_roots else "n*pi",
        "beta_L": roots.tolist(),
    }
    return ModeShapeMatrix(phi, x, beam.nodal_mass, meta)


def gen_beam_dataset(beam: BeamModel, n_profiles: int = 50_000, seed: int = 0):
    """Random beam profiles ``u = Phi q`` with ``q ~ U[-1, 1]^N``.

    Returns ``(dataset, modes)``; deflections are the candidates and the
    modal coefficients the targets.
    """
    modes = beam_mode_shapes(beam)
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1.0, 1.0, size=(n_profiles, beam.n_modes))
    u = q @ modes.phi.T
    ds = SensorDataset(
        values=u,
        targets=q,
        sensor_ids=[f"node{j + 1}" for j in range(beam.n_nodes)],
        target_ids=[f"q{i + 1}" for i in range(beam.n_modes)],
    )
    return ds, modes


# ----------------------------------------------------------- random fields


def _smooth_periodic(noise, length, axes):
    if length <= 0:
        return noise
    out = noise
    for ax in axes:
        n = noise.shape[ax]
        k = np.fft.fftfreq(n) * n
        kernel = np.exp(-0.5 * (2 * np.pi * k * length / n) ** 2)
        shape = [1] * noise.ndim
        shape[ax] = n
        out = np.fft.ifft(np.fft.fft(out, axis=ax) * kernel.reshape(shape), axis=ax).real
    return out


def gen_correlated_field(nx: int, nz: int, nt: int, correlation_length: float,
                         seed: int = 0, shift=(0, 0), noise: float = 0.1):
    """Pair of periodic ``(nt, nx, nz)`` fields.

    The first is Gaussian noise smoothed by a separable Gaussian kernel of
    standard deviation ``correlation_length`` grid units, normalized to unit
    variance. The second is the first rolled by ``shift`` plus independent
    white noise of standard deviation ``noise``, so that
    ``second(x + shift) ~ first(x)``.
    """
    if min(nx, nz, nt) < 2:
        raise ConfigError("field dimensions must be at least 2")
    if correlation_length < 0:
        raise ConfigError("correlation_length must be non-negative")
    rng = np.random.default_rng(seed)
    base = _smooth_periodic(rng.standard_normal((nt, nx, nz)), correlation_length, (1, 2))
    base /= base.std()
    other = np.roll(base, shift=tuple(int(s) for s in shift), axis=(1, 2))
    other = other + noise * rng.standard_normal(base.shape)
    return base, other
