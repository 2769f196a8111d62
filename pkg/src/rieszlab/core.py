"""Kernels, cube domains, point configurations and dimensional constants.

Everything in this module is an immutable value object; all operations are
pure functions, safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import betainc, gamma


class SingularPairError(ValueError):
    """Two charges coincide where the interaction is infinite."""


class ParameterError(ValueError):
    """An argument lies outside the domain an operation supports."""


class UnsupportedRegimeError(ValueError):
    """The (s, d) combination is outside the implemented regime."""


class AccuracyError(RuntimeError):
    """A numerical routine could not reach the requested tolerance."""


class ConstraintError(ValueError):
    """A feasibility constraint of an optimization problem is violated."""


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / gamma(d / 2.0)


def ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    return sphere_area(d) / d


def as_points(points, d: int | None = None) -> np.ndarray:
    """Normalize point input to a float array of shape (N, d)."""
    arr = np.atleast_2d(np.asarray(points, dtype=float))
    if arr.size == 0:
        return arr.reshape(0, d if d else 0)
    if d is not None and arr.shape[1] != d:
        raise ParameterError(f"expected points in R^{d}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class RieszKernel:
    """Inverse power-law pair interaction 1/|x-y|^s in R^d."""

    s: float
    d: int

    def __post_init__(self):
        if not (0 < self.s < self.d):
            raise ParameterError(f"need 0 < s < d, got s={self.s}, d={self.d}")
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"dimension must be a positive integer, got {self.d}")

    def at_distance(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise SingularPairError("kernel evaluated at zero separation")
        return r ** (-self.s)

    def __call__(self, x, y):
        return kernel_eval(self, x, y)


def kernel_eval(k: RieszKernel, x, y) -> float:
    """Pair interaction between two distinct points."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    r = float(np.linalg.norm(x - y))
    if r == 0.0:
        raise SingularPairError(f"coincident points {x.tolist()}")
    return r ** (-k.s)


@dataclass(frozen=True)
class TruncatedKernel:
    """Pointwise-capped kernel c_eta = min(c, c(eta)) and its remainder."""

    base: RieszKernel
    eta: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ParameterError(f"truncation radius must be positive, got {self.eta}")

    @property
    def cap(self) -> float:
        return self.eta ** (-self.base.s)

    def capped(self, r):
        """min(c(r), c(eta)); finite at r = 0."""
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape, self.cap)
        far = r > self.eta
        out[far] = r[far] ** (-self.base.s)
        return out

    def remainder(self, r):
        """f_eta = c - c_eta; vanishes for r >= eta."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise SingularPairError("remainder evaluated at zero separation")
        out = np.zeros(r.shape)
        near = r < self.eta
        out[near] = r[near] ** (-self.base.s) - self.cap
        return out


def kernel_truncate(k: RieszKernel, eta: float) -> TruncatedKernel:
    return TruncatedKernel(k, eta)


@dataclass(frozen=True)
class CubeDomain:
    """Half-open axis-aligned cube: [center - side/2, center + side/2)^d.

    Membership ties at upper faces resolve to the neighboring cell, so
    periodic tilings by translated cubes partition space exactly.
    """

    center: tuple
    side: float
    dimension: int

    def __post_init__(self):
        if self.side <= 0:
            raise ParameterError(f"cube side must be positive, got {self.side}")
        c = tuple(float(v) for v in np.asarray(self.center, dtype=float).reshape(-1))
        if len(c) != self.dimension:
            raise ParameterError("center/dimension mismatch")
        object.__setattr__(self, "center", c)

    @classmethod
    def centered(cls, side: float, d: int) -> "CubeDomain":
        return cls(center=(0.0,) * d, side=float(side), dimension=d)

    @property
    def volume(self) -> float:
        return self.side ** self.dimension

    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - self.side / 2.0

    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + self.side / 2.0

    def contains(self, points) -> np.ndarray:
        pts = as_points(points, self.dimension)
        return np.all((pts >= self.lo()) & (pts < self.hi()), axis=1)

    def translate(self, a) -> "CubeDomain":
        a = np.asarray(a, dtype=float).reshape(-1)
        return CubeDomain(tuple(np.asarray(self.center) + a), self.side, self.dimension)

    def second_moment(self) -> float:
        """Integral of |y|^2 over the cube."""
        c = np.asarray(self.center)
        return self.volume * (float(c @ c) + self.dimension * self.side ** 2 / 12.0)


@dataclass(frozen=True)
class UniformMeasure:
    """Uniform charge intensity * 1_K(x) dx on a cube K."""

    domain: CubeDomain
    intensity: float = 1.0

    def __post_init__(self):
        if self.intensity < 0:
            raise ParameterError("intensity must be nonnegative; carry signs separately")

    @property
    def mass(self) -> float:
        return self.intensity * self.domain.volume


@dataclass(frozen=True)
class PointConfiguration:
    """Finite multiset of points, stored as an (N, d) array."""

    points: np.ndarray
    dimension: int

    @classmethod
    def from_array(cls, points, d: int | None = None) -> "PointConfiguration":
        pts = as_points(points, d)
        dim = d if d is not None else (pts.shape[1] if pts.size else 0)
        pts = pts.reshape(-1, dim)
        pts.setflags(write=False)
        return cls(points=pts, dimension=dim)

    def __len__(self) -> int:
        return self.points.shape[0]

    def min_separation(self) -> float:
        """Smallest pairwise distance; inf for fewer than two points."""
        n = len(self)
        if n < 2:
            return math.inf
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        dist[np.diag_indices(n)] = np.inf
        return float(dist.min())

    def require_distinct(self):
        if len(self) >= 2 and self.min_separation() == 0.0:
            raise SingularPairError("configuration contains coincident points")

    def translate(self, a) -> "PointConfiguration":
        return PointConfiguration.from_array(self.points + np.asarray(a, dtype=float), self.dimension)


BARYCENTER_RTOL = 1e-12


@dataclass(frozen=True)
class PeriodicConfiguration:
    """Base points of a cube-cell periodic configuration.

    Unit-density use requires len(base_points) == cell.side**d up to integer
    rounding.  The zero_barycenter flag asserts that the base points sum to
    the cell center within ``BARYCENTER_RTOL * side``.
    """

    cell: CubeDomain
    base_points: PointConfiguration
    zero_barycenter: bool = False

    def __post_init__(self):
        pts = self.base_points.points
        if pts.size and not np.all(self.cell.contains(pts)):
            raise ParameterError("base points must lie inside the half-open cell")
        if self.zero_barycenter and len(self.base_points):
            drift = np.abs(pts.mean(axis=0) - np.asarray(self.cell.center)).max()
            if drift > BARYCENTER_RTOL * self.cell.side * max(1.0, len(self.base_points)):
                raise ParameterError(f"barycenter off cell center by {drift:g}")

    @property
    def points_per_cell(self) -> int:
        return len(self.base_points)

    def unit_density_consistent(self, tol: float = 1e-9) -> bool:
        return abs(self.cell.volume - self.points_per_cell) <= tol * max(1.0, self.cell.volume)

    def restrict_to(self, window: CubeDomain) -> PointConfiguration:
        """All periodic copies of the base points inside a half-open window."""
        d = self.cell.dimension
        r1 = self.cell.side
        base = self.base_points.points
        lo, hi = window.lo(), window.hi()
        out = []
        for p in base:
            klo = np.ceil((lo - p) / r1 - 1e-12).astype(int)
            khi = np.floor((hi - p) / r1 + 1e-12).astype(int)
            ranges = [np.arange(klo[i], khi[i] + 1) for i in range(d)]
            if any(len(r) == 0 for r in ranges):
                continue
            mesh = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
            cand = p + r1 * mesh
            keep = np.all((cand >= lo - 1e-12) & (cand < hi - 1e-12), axis=1)
            # resolve the half-open faces exactly
            keep = np.all((cand >= lo) & (cand < hi), axis=1)
            out.append(cand[keep])
        pts = np.concatenate(out, axis=0) if out else np.zeros((0, d))
        return PointConfiguration.from_array(pts, d)


# ----------------------------------------------------------------------
# Dimensional constants
# ----------------------------------------------------------------------

def extension_constant(s: float, d: int) -> float:
    """Normalization constant of the degenerate-elliptic extension of 1/|x|^s.

    Case split over the admissible regime d-2 <= s < d (plus the planar
    endpoint s=0, d=2).
    """
    if d == 2 and abs(s) < 1e-12:
        return 2.0 * math.pi
    if s >= d or s < d - 2 - 1e-12:
        raise UnsupportedRegimeError(f"need d-2 <= s < d, got s={s}, d={d}")
    if abs(s - (d - 2)) < 1e-12:
        if d - 2 <= 0:
            raise UnsupportedRegimeError("s = d-2 branch requires d > 2")
        return (d - 2) * 2.0 * math.pi ** (d / 2.0) / gamma(d / 2.0)
    return 2.0 * s * 2.0 * math.pi ** (d / 2.0) * gamma((s + 2 - d) / 2.0) / gamma((s + 2) / 2.0)


def fourier_constant(s: float, d: int) -> float:
    """Constant in the distributional Fourier transform of |x|^{-s}.

    With the non-unitary convention F[f](xi) = int f(x) e^{-i xi.x} dx,
    F[|x|^{-s}](xi) = fourier_constant(s, d) * |xi|^{s-d}.  For s=1, d=3
    this is the familiar 4*pi.
    """
    if not (0 < s < d):
        raise UnsupportedRegimeError(f"need 0 < s < d, got s={s}, d={d}")
    return 2.0 ** (d - s) * math.pi ** (d / 2.0) * gamma((d - s) / 2.0) / gamma(s / 2.0)


# ----------------------------------------------------------------------
# Ball-overlap regularization of the kernel
# ----------------------------------------------------------------------
#
# The kernel admits a superposition over overlap ("lens") kernels
#   c(x) = \int_0^\infty h_r(|x|) f(r) dr,     h_r = 1_{B_{r/2}} * 1_{B_{r/2}},
# with a nonnegative radial weight f(r) = kappa(s,d) r^{-s-d-1}.  Cutting the
# superposition below r = alpha yields a regularization that agrees with the
# kernel exactly at separations >= alpha and is monotone in alpha.


def _lens_kernel(r, t, d: int):
    """Overlap volume of two balls of radius r/2 whose centers are t apart."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    pref = (math.pi / 4.0) ** ((d - 1) / 2.0) / gamma((d + 1) / 2.0)
    # \int_t^r (r^2-y^2)^{(d-1)/2} dy via the regularized incomplete beta
    p, q = 0.5, (d + 1) / 2.0
    full = gamma(p) * gamma(q) / gamma(p + q)
    with np.errstate(invalid="ignore"):
        a = np.clip((t / np.maximum(r, 1e-300)) ** 2, 0.0, 1.0)
        inner = 0.5 * r ** d * full * (1.0 - betainc(p, q, a))
    return np.where(t < r, pref * inner, 0.0)


@lru_cache(maxsize=64)
def _lens_weight_norm(s: float, d: int) -> float:
    """kappa(s,d) such that int_r^inf h_t(r) kappa t^{-s-d-1} dt = r^{-s}."""
    val, err = quad(lambda t: _lens_kernel(t, 1.0, d) * t ** (-s - d - 1.0), 1.0, np.inf, limit=200)
    if val <= 0 or err > 1e-7 * val:
        raise AccuracyError(f"lens weight normalization failed: {val} +- {err}")
    return 1.0 / val


@lru_cache(maxsize=64)
def lens_weight_formula_ratio(s: float, d: int) -> float:
    """Ratio of the normalized lens weight to the raw derivative-formula weight.

    The raw weight is built from the symbolic (d+1)-th derivative of r^{-s}
    (rising-factorial coefficient) fed through the representation's density
    formula; the implementation rescales it so the superposition reproduces
    the kernel exactly.  The measured ratio is exposed for auditing.
    """
    if d == 1:
        raw = s * (s + 1.0)  # f(r) = V''(r) = s(s+1) r^{-s-2}
    else:
        rising = 1.0
        for k in range(d + 1):
            rising *= s + k
        # \int_r^inf v^{-s-d} (v^2-r^2)^{(d-3)/2} dv = r^{-s-2} * (1/2) B(s/2+1,(d-1)/2)
        beta_val, beta_err = quad(
            lambda w: w ** (s / 2.0) * (1.0 - w) ** ((d - 3) / 2.0), 0.0, 1.0, limit=200
        )
        if beta_err > 1e-7 * max(beta_val, 1e-30):
            raise AccuracyError("weight quadrature did not converge")
        raw = (2.0 / gamma(d // 2 + 2)) * math.pi ** (-(d - 1) / 2.0) * rising * 0.5 * beta_val
    return _lens_weight_norm(s, d) / raw


def kernel_regularize(k: RieszKernel, alpha: float, x, y, tol: float = 1e-7) -> float:
    """Kernel smeared below scale alpha through the ball-overlap superposition.

    Agrees with kernel_eval whenever |x-y| >= alpha; below alpha it is finite,
    bounded by the kernel, and monotone nonincreasing in alpha.
    """
    if alpha < 0:
        raise ParameterError("alpha must be nonnegative")
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    t = float(np.linalg.norm(x - y))
    if t >= alpha:
        if t == 0.0:
            raise SingularPairError("coincident points with alpha = 0")
        return t ** (-k.s)
    kappa = _lens_weight_norm(k.s, k.d)
    corr, err = quad(
        lambda r: _lens_kernel(r, t, k.d) * kappa * r ** (-k.s - k.d - 1.0),
        max(t, 1e-300),
        alpha,
        limit=200,
    )
    base = 0.0 if t == 0.0 else t ** (-k.s)
    if t == 0.0:
        # the full superposition from t=0 diverges only through the cut part;
        # c_alpha(0) = int_alpha^inf h_r(0) f(r) dr, computed directly
        val, err2 = quad(
            lambda r: _lens_kernel(r, 0.0, k.d) * kappa * r ** (-k.s - k.d - 1.0),
            alpha,
            np.inf,
            limit=200,
        )
        if err2 > max(tol * abs(val), 3e-8):
            raise AccuracyError(f"regularized kernel quadrature error {err2:g}")
        return float(val)
    if err > max(tol * abs(base), 3e-8):
        raise AccuracyError(f"regularized kernel quadrature error {err:g}")
    return float(base - corr)
