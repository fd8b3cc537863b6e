"""Periodic spectral grid, Littlewood-Paley blocks and hybrid Besov norms.

Fields live on the torus ``[0, L)^d`` sampled on an ``N^d`` grid.  Spectral
coefficients use numpy's real-FFT layout (last axis halved), unnormalised, so
the Fourier-series coefficient of a mode is ``coeffs / N^d``.

L² norms are domain integrals, ``‖f‖₂² = ∫ |f|² dx``, evaluated by Parseval.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

# ψ ≡ 1 below this radius and ψ ≡ 0 above the next one
PSI_INNER = 3.0 / 4.0
PSI_OUTER = 4.0 / 3.0


@dataclass(frozen=True)
class Grid:
    dim: int = 2
    n_modes: int = 64
    box_length: float = 2 * math.pi

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        n = self.n_modes
        if n < 8 or n % 2 or n & (n - 1):
            raise ValueError(f"n_modes must be a power of two >= 8, got {n}")
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")

    @property
    def shape(self):
        return (self.n_modes,) * self.dim

    @property
    def spectral_shape(self):
        return (self.n_modes,) * (self.dim - 1) + (self.n_modes // 2 + 1,)

    @property
    def dx(self):
        return self.box_length / self.n_modes

    @property
    def volume(self):
        return self.box_length**self.dim

    @property
    def fundamental(self):
        """Smallest nonzero lattice frequency 2π/L."""
        return 2 * math.pi / self.box_length

    @property
    def dealias_cutoff(self):
        """Largest integer wavenumber kept by the 2/3 rule (3·kmax < N)."""
        return (self.n_modes - 1) // 3

    def coordinates(self):
        x = np.arange(self.n_modes) * self.dx
        return np.meshgrid(*([x] * self.dim), indexing="ij")


class _SpectralOps:
    """Wavenumber tables and masks for one grid (built once, see ``ops``)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        n, d = grid.n_modes, grid.dim
        full = np.fft.fftfreq(n, 1.0 / n)
        half = np.fft.rfftfreq(n, 1.0 / n)
        axes_int = [full] * (d - 1) + [half]
        ints = np.meshgrid(*axes_int, indexing="ij")
        self.kint = np.stack(ints)
        self.k = self.kint * grid.fundamental
        # odd derivatives drop the Nyquist plane of their own axis
        k_odd = self.k.copy()
        for i in range(d):
            k_odd[i][np.abs(self.kint[i]) == n // 2] = 0.0
        self.k_odd = k_odd
        self.k2 = np.sum(self.k**2, axis=0)
        self.kabs = np.sqrt(self.k2)
        kmax = grid.dealias_cutoff
        self.dealias_mask = np.all(np.abs(self.kint) <= kmax, axis=0)

        w = np.full(grid.spectral_shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        self.parseval = w * grid.volume / float(n) ** (2 * d)

        self.block_ks = _active_blocks(self.kabs)
        self.block_weights = np.stack([phi_cutoff(self.kabs / 2.0**k) for k in self.block_ks])
        self.block_weights[:, self.kabs == 0] = 0.0

    def forward(self, values):
        d = self.grid.dim
        return np.fft.rfftn(values, axes=tuple(range(-d, 0)))

    def inverse(self, coeffs):
        d = self.grid.dim
        return np.fft.irfftn(coeffs, s=self.grid.shape, axes=tuple(range(-d, 0)))

    def block_index(self, k):
        hits = np.nonzero(self.block_ks == k)[0]
        return int(hits[0]) if hits.size else None

    def block_norms(self, coeffs):
        """‖Δ_k f‖₂ for every active block; component axis (if any) summed."""
        power = np.abs(coeffs) ** 2 * self.parseval
        if power.ndim > self.grid.dim:
            power = power.reshape(-1, *self.grid.spectral_shape).sum(axis=0)
        sq = np.tensordot(self.block_weights**2, power, axes=self.grid.dim)
        return np.sqrt(np.maximum(sq, 0.0))


@lru_cache(maxsize=32)
def ops(grid: Grid) -> _SpectralOps:
    return _SpectralOps(grid)


def _active_blocks(kabs):
    nz = kabs[kabs > 0]
    lo = math.floor(math.log2(nz.min() / (8.0 / 3.0))) - 1
    hi = math.ceil(math.log2(nz.max() / PSI_INNER)) + 1
    ks = [k for k in range(lo, hi + 1) if np.any(phi_cutoff(nz / 2.0**k) > 0)]
    return np.array(ks, dtype=int)


# ---------------------------------------------------------------- cutoffs


def _smooth_step(t):
    # h(t)/(h(t)+h(1-t)) with h(t) = exp(-1/t) for t > 0
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        h0 = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        s = 1.0 - t
        h1 = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    return h0 / (h0 + h1)


def psi_cutoff(r):
    """Radial low-pass profile: 1 for r ≤ 3/4, 0 for r ≥ 4/3, C^∞ in between."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("psi_cutoff expects r >= 0")
    out = _smooth_step((PSI_OUTER - r) / (PSI_OUTER - PSI_INNER))
    return float(out) if out.ndim == 0 else out


def phi_cutoff(r):
    """Annulus profile φ(r) = ψ(r/2) − ψ(r), supported in [3/4, 8/3]."""
    r = np.asarray(r, dtype=float)
    out = np.asarray(psi_cutoff(r / 2.0)) - np.asarray(psi_cutoff(r))
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------ fields


class SpectralField:
    """Real scalar or vector field on a periodic grid.

    Physical samples are the primary storage (shape ``(ncomp, *grid.shape)``);
    the real-FFT coefficients are computed on first access and cached.  Both
    arrays are read-only.
    """

    __slots__ = ("grid", "values", "_coeffs")

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.shape == grid.shape:
            values = values[None]
        if values.shape[1:] != grid.shape or values.shape[0] not in (1, grid.dim):
            raise ValueError(f"values of shape {values.shape} do not fit grid {grid.shape}")
        values.flags.writeable = False
        self.grid = grid
        self.values = values
        self._coeffs = None

    @classmethod
    def from_coeffs(cls, grid: Grid, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.shape == grid.spectral_shape:
            coeffs = coeffs[None]
        field = cls(grid, ops(grid).inverse(coeffs))
        return field

    @classmethod
    def from_function(cls, grid: Grid, fn):
        """Sample ``fn(*coords)``; a tuple/list result is read as a vector field."""
        out = fn(*grid.coordinates())
        if isinstance(out, (tuple, list)):
            out = np.stack([np.broadcast_to(o, grid.shape) for o in out])
        return cls(grid, np.broadcast_to(out, grid.shape) if np.ndim(out) == 0 else out)

    @classmethod
    def zeros(cls, grid: Grid, vector=False):
        n = grid.dim if vector else 1
        return cls(grid, np.zeros((n,) + grid.shape))

    @property
    def coeffs(self):
        if self._coeffs is None:
            c = ops(self.grid).forward(self.values)
            c.flags.writeable = False
            self._coeffs = c
        return self._coeffs

    @property
    def n_components(self):
        return self.values.shape[0]

    @property
    def is_vector(self):
        return self.n_components > 1

    @property
    def data(self):
        """Physical samples without the component axis for scalars."""
        return self.values if self.is_vector else self.values[0]

    def component(self, i):
        return SpectralField(self.grid, self.values[i])

    def mean(self):
        m = self.values.reshape(self.n_components, -1).mean(axis=1)
        return m if self.is_vector else float(m[0])

    def integral(self):
        return self.mean() * self.grid.volume

    def l2_norm(self):
        return math.sqrt(float(np.sum(np.abs(self.coeffs) ** 2 * ops(self.grid).parseval)))

    def inner(self, other: "SpectralField"):
        """Domain L² inner product ∫ f·g dx (exact on the grid)."""
        _check_same_grid(self, other)
        return float(np.sum(self.values * other.values)) * self.grid.dx**self.grid.dim

    def sup_norm(self):
        if self.is_vector:
            return float(np.sqrt(np.sum(self.values**2, axis=0)).max())
        return float(np.abs(self.values).max())

    def _binary(self, other, op):
        if isinstance(other, SpectralField):
            _check_same_grid(self, other)
            other = other.values
        return SpectralField(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return SpectralField(self.grid, -self.values)

    def __repr__(self):
        kind = "vector" if self.is_vector else "scalar"
        return f"SpectralField({kind}, dim={self.grid.dim}, N={self.grid.n_modes})"


def _check_same_grid(f, g):
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")


@dataclass(frozen=True)
class BesovSpec:
    """Exponent pair of the hybrid norm: ``s`` on blocks k ≤ 0, ``t`` on k > 0."""

    s: float
    t: float

    def __post_init__(self):
        if not (math.isfinite(self.s) and math.isfinite(self.t)):
            raise ValueError("Besov exponents must be finite")

    def weights(self, ks):
        ks = np.asarray(ks, dtype=float)
        return np.where(ks <= 0, 2.0 ** (ks * self.s), 2.0 ** (ks * self.t))

    @property
    def label(self):
        return f"{self.s:g}_{self.t:g}"


def as_spec(spec) -> BesovSpec:
    return spec if isinstance(spec, BesovSpec) else BesovSpec(*spec)


# -------------------------------------------------------- LP decomposition


def block_range(grid: Grid):
    """Integers k whose annulus meets the grid's nonzero frequency lattice."""
    return ops(grid).block_ks.copy()


def lp_block(f: SpectralField, k: int) -> SpectralField:
    o = ops(f.grid)
    idx = o.block_index(k)
    if idx is None:
        return SpectralField.zeros(f.grid, f.is_vector)
    return SpectralField.from_coeffs(f.grid, f.coeffs * o.block_weights[idx])


def block_l2_norms(f: SpectralField):
    """Return ``(ks, norms)`` with ``norms[i] = ‖Δ_{ks[i]} f‖₂``."""
    o = ops(f.grid)
    return o.block_ks.copy(), o.block_norms(f.coeffs)


def hybrid_besov_norm(f: SpectralField, spec) -> float:
    spec = as_spec(spec)
    ks, norms = block_l2_norms(f)
    return float(np.sum(spec.weights(ks) * norms))


def besov_norm(f: SpectralField, s: float) -> float:
    """Homogeneous B^s norm, i.e. the hybrid norm with equal exponents."""
    return hybrid_besov_norm(f, BesovSpec(s, s))


def friedrichs_project(f: SpectralField, ell=None, keep_mean=True) -> SpectralField:
    """Sharp Fourier truncation to the annulus 1/ℓ ≤ |ξ| ≤ ℓ.

    ``ell=None`` means the full grid.  The ξ = 0 coefficient is kept iff
    ``keep_mean``.
    """
    mask = friedrichs_mask(f.grid, ell, keep_mean)
    return SpectralField.from_coeffs(f.grid, f.coeffs * mask)


def friedrichs_mask(grid: Grid, ell=None, keep_mean=True):
    kabs = ops(grid).kabs
    if ell is None:
        mask = kabs > 0
    else:
        if ell < 1:
            raise ValueError("Friedrichs radius must be >= 1")
        mask = (kabs <= ell) & (kabs >= 1.0 / ell)
    if keep_mean:
        mask = mask | (kabs == 0)
    return mask.astype(float)


def dealias(f: SpectralField) -> SpectralField:
    """2/3-rule truncation."""
    return SpectralField.from_coeffs(f.grid, f.coeffs * ops(f.grid).dealias_mask)


def spectral_derivative(f: SpectralField, op: str) -> SpectralField:
    o = ops(f.grid)
    if op == "gradient":
        if f.is_vector:
            raise ValueError("gradient expects a scalar field")
        return SpectralField.from_coeffs(f.grid, 1j * o.k_odd * f.coeffs[0])
    if op == "divergence":
        if not f.is_vector:
            raise ValueError("divergence expects a vector field")
        return SpectralField.from_coeffs(f.grid, np.sum(1j * o.k_odd * f.coeffs, axis=0))
    if op == "laplacian":
        return SpectralField.from_coeffs(f.grid, -o.k2 * f.coeffs)
    raise ValueError(f"unknown derivative operator {op!r}")


# ------------------------------------------------------ time-space norms


def time_lp(values, times, p):
    """Discrete L^p([0,T]) norm of sampled values: trapezoid for p ∈ {1,2}, max for ∞."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if p == math.inf or p == "inf":
        return np.max(np.abs(values), axis=0)
    if p == 1:
        return integrate.trapezoid(np.abs(values), times, axis=0)
    if p == 2:
        return np.sqrt(integrate.trapezoid(values**2, times, axis=0))
    # general finite p; only 1, 2, ∞ are part of the public contract
    return integrate.trapezoid(np.abs(values) ** p, times, axis=0) ** (1.0 / p)


def _unpack_history(history):
    if len(history) == 0:
        raise ValueError("empty history")
    times = np.array([t for t, _ in history], dtype=float)
    if len(times) < 2:
        raise ValueError("a time history needs at least two samples")
    if np.any(np.diff(times) <= 0):
        raise ValueError("history times must be strictly increasing")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-14):
        raise ValueError("history samples must be uniformly spaced in time")
    return times, [f for _, f in history]


def block_history(history):
    """Return ``(times, ks, norms)`` with ``norms[j, i] = ‖Δ_{ks[i]} f(t_j)‖₂``."""
    times, fields = _unpack_history(history)
    ks = block_range(fields[0].grid)
    norms = np.stack([block_l2_norms(f)[1] for f in fields])
    return times, ks, norms


def chemin_lerner_norm(history: Sequence, p, spec) -> float:
    """Chemin-Lerner norm of a sampled history ``[(t, field), ...]``.

    Each block is measured in L^p in time first, then the hybrid weights are
    applied.
    """
    spec = as_spec(spec)
    times, ks, norms = block_history(history)
    return float(np.sum(spec.weights(ks) * time_lp(norms, times, p)))


def lp_time_besov_norm(history: Sequence, p, spec) -> float:
    """Plain L^p([0,T]; B^{s,t}) norm: Besov norm first, then time."""
    spec = as_spec(spec)
    times, ks, norms = block_history(history)
    return float(time_lp(norms @ spec.weights(ks), times, p))


# ----------------------------------------------------------- extrema


def upsample(f: SpectralField, factor: int = 4):
    """Trigonometric interpolation of ``f`` onto a grid ``factor`` times finer.

    Returns the physical samples (component axis kept).
    """
    g = f.grid
    n, m = g.n_modes, g.n_modes * factor
    axes = tuple(range(-g.dim, 0))
    full = np.fft.fftn(f.values, axes=axes)
    for ax in axes:
        full = _pad_axis(full, ax, n, m)
    return np.fft.ifftn(full, axes=axes).real * float(factor) ** g.dim


def _pad_axis(a, axis, n, m):
    shape = list(a.shape)
    shape[axis] = m
    out = np.zeros(shape, dtype=complex)
    h = n // 2
    src = np.moveaxis(a, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[:h] = src[:h]
    dst[m - h + 1:] = src[h + 1:]
    dst[h] = 0.5 * src[h]
    dst[m - h] = 0.5 * src[h]
    return out


def refined_extrema(f: SpectralField, factor: int = 4, newton_steps: int = 6):
    """(min, max) of the trigonometric interpolant of a scalar field.

    Starts from a ``factor``-times upsampled grid and polishes both extrema
    with Newton steps on the exact Fourier series.
    """
    if f.is_vector:
        raise ValueError("refined_extrema expects a scalar field")
    fine = upsample(f, factor)[0]
    g = f.grid
    full = np.fft.fftn(f.values[0]) / g.n_modes**g.dim
    kint = np.meshgrid(*([np.fft.fftfreq(g.n_modes, 1.0 / g.n_modes)] * g.dim), indexing="ij")
    k = [ki.ravel() * g.fundamental for ki in kint]
    c = full.ravel()
    h = g.dx / factor

    def polish(idx, sign):
        x = np.array(np.unravel_index(idx, fine.shape), dtype=float) * h
        best = fine.flat[idx]
        for _ in range(newton_steps):
            phase = np.exp(1j * sum(ki * xi for ki, xi in zip(k, x)))
            terms = c * phase
            grad = np.array([np.real(np.sum(1j * ki * terms)) for ki in k])
            hess = np.array([[np.real(-np.sum(ki * kj * terms)) for kj in k] for ki in k])
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                break
            if np.linalg.norm(step) > h:
                break
            x = x - step
            val = float(np.real(np.sum(c * np.exp(1j * sum(ki * xi for ki, xi in zip(k, x))))))
            if sign * val < sign * best:
                break
            best = val
        return best

    lo = polish(int(np.argmin(fine)), -1)
    hi = polish(int(np.argmax(fine)), 1)
    return float(lo), float(hi)


# ------------------------------------------------------- snapshot format

SNAPSHOT_MAGIC = b"DFSF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdI")


def write_snapshot(path, field: SpectralField):
    """Write ``field`` in the DFSF binary format (little-endian, row-major)."""
    g = field.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.dim, g.n_modes,
                          float(g.box_length), field.n_components)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))
    return path


def read_snapshot(path) -> SpectralField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, dim, n_modes, box_length, ncomp = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    grid = Grid(dim, n_modes, box_length)
    count = ncomp * n_modes**dim
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != count:
        raise ValueError(f"{path}: expected {count} samples, found {body.size}")
    return SpectralField(grid, body.reshape((ncomp,) + grid.shape).astype(float))
