"""Singular integrals against cube backgrounds, bilinear pairings, multipole
tails, and the vanishing net potential of neutral balanced cells."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AccuracyError,
    CubeDomain,
    ParameterError,
    PointConfiguration,
    RieszKernel,
    SingularPairError,
    UniformMeasure,
    as_points,
    fourier_constant,
    sphere_area,
)
from .quadrature import (
    attraction_many,
    ball_cube_difference,
    ball_point_difference,
    box_box_integral,
    point_box_integral,
)


def point_cube_integral(k: RieszKernel, K: CubeDomain, p, tol: float = 1e-9) -> float:
    """int_K |p - y|^{-s} dy, accurate for p inside, near, or far from K."""
    return point_box_integral(k.s, K.lo(), K.hi(), p, tol=tol)


def cube_cube_integral(k: RieszKernel, K1: CubeDomain, K2: CubeDomain, tol: float = 1e-9) -> float:
    """Double integral of the kernel over a pair of cubes."""
    return box_box_integral(k.s, K1.lo(), K1.hi(), K2.lo(), K2.hi(), tol=tol)


@dataclass(frozen=True)
class SignedChargeSystem:
    """Weighted atoms plus a signed uniform cube background.

    The background enters with background_sign * intensity; total_charge may
    be zero ("neutral system").
    """

    atoms: PointConfiguration
    weights: np.ndarray
    background: UniformMeasure | None = None
    background_sign: float = -1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(self.atoms):
            raise ParameterError("one weight per atom required")
        if self.background_sign not in (-1.0, 1.0):
            raise ParameterError("background_sign must be +1 or -1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, d: int) -> "SignedChargeSystem":
        return cls(PointConfiguration.from_array(np.zeros((0, d)), d), np.zeros(0))

    @property
    def dimension(self) -> int:
        return self.atoms.dimension

    @property
    def total_charge(self) -> float:
        bg = self.background_sign * self.background.mass if self.background else 0.0
        return float(self.weights.sum() + bg)

    def dipole(self) -> np.ndarray:
        d = self.dimension
        mom = (self.weights[:, None] * self.atoms.points).sum(axis=0) if len(self.atoms) else np.zeros(d)
        if self.background:
            K = self.background.domain
            mom = mom + self.background_sign * self.background.intensity * K.volume * np.asarray(K.center)
        return mom

    def absolute_second_moment(self) -> float:
        """Integral of |y|^2 against the total variation |charge|."""
        q = float(np.abs(self.weights) @ np.sum(self.atoms.points ** 2, axis=1)) if len(self.atoms) else 0.0
        if self.background:
            q += self.background.intensity * self.background.domain.second_moment()
        return q

    def cube_components(self) -> list[tuple[CubeDomain, float]]:
        if self.background is None:
            return []
        return [(self.background.domain, self.background_sign * self.background.intensity)]


@dataclass(frozen=True)
class CompositeChargeSystem:
    """Weighted atoms plus an arbitrary list of signed uniform cubes.

    Generalization of SignedChargeSystem used where comparisons produce
    several background pieces (e.g. translated-cell convolutions).
    """

    atoms: PointConfiguration
    weights: np.ndarray
    cubes: list  # of (CubeDomain, signed coefficient)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(self.atoms):
            raise ParameterError("one weight per atom required")
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.atoms.dimension

    @property
    def total_charge(self) -> float:
        return float(self.weights.sum() + sum(c * K.volume for K, c in self.cubes))

    def dipole(self) -> np.ndarray:
        d = self.dimension
        mom = (self.weights[:, None] * self.atoms.points).sum(axis=0) if len(self.atoms) else np.zeros(d)
        for K, c in self.cubes:
            mom = mom + c * K.volume * np.asarray(K.center)
        return mom

    def absolute_second_moment(self) -> float:
        q = float(np.abs(self.weights) @ np.sum(self.atoms.points ** 2, axis=1)) if len(self.atoms) else 0.0
        for K, c in self.cubes:
            q += abs(c) * K.second_moment()
        return q

    def cube_components(self) -> list:
        return list(self.cubes)


def _components(measure):
    """Normalize a measure-like argument to (atoms, weights, cube_list)."""
    if isinstance(measure, (SignedChargeSystem, CompositeChargeSystem)):
        return measure.atoms.points, measure.weights, measure.cube_components()
    if isinstance(measure, UniformMeasure):
        return np.zeros((0, measure.domain.dimension)), np.zeros(0), [(measure.domain, measure.intensity)]
    if isinstance(measure, PointConfiguration):
        return measure.points, np.ones(len(measure)), []
    raise ParameterError(f"unsupported measure type {type(measure).__name__}")


def pairing(k: RieszKernel, mu, nu, off_diagonal: bool = True, tol: float = 1e-9) -> float:
    """Kernel-weighted scalar product of two charge systems.

    With off_diagonal=True coincident atom pairs are excluded (the starred
    product); the two modes agree whenever either side is purely absolutely
    continuous.  off_diagonal=False raises on any atomic coincidence.
    """
    pa, wa, ca = _components(mu)
    pb, wb, cb = _components(nu)
    total = 0.0
    if len(pa) and len(pb):
        diff = pa[:, None, :] - pb[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        coincident = dist == 0.0
        if np.any(coincident):
            if not off_diagonal:
                raise SingularPairError("coincident atoms in diagonal-inclusive pairing")
            dist[coincident] = np.inf
        total += float((wa[:, None] * wb[None, :] * dist ** (-k.s)).sum())
    for K, coef in cb:
        if len(pa):
            vals = attraction_many(k.s, K.lo(), K.hi(), pa, tol=tol)
            total += coef * float(wa @ vals)
    for K, coef in ca:
        if len(pb):
            vals = attraction_many(k.s, K.lo(), K.hi(), pb, tol=tol)
            total += coef * float(wb @ vals)
        for K2, coef2 in cb:
            total += coef * coef2 * box_box_integral(k.s, K.lo(), K.hi(), K2.lo(), K2.hi(), tol=tol)
    return total


def potential_h(k: RieszKernel, system: SignedChargeSystem, x, tol: float = 1e-9) -> float:
    """Potential of a signed charge system at a point off its atoms."""
    x = np.asarray(x, dtype=float).reshape(-1)
    total = 0.0
    if len(system.atoms):
        d = np.linalg.norm(system.atoms.points - x, axis=1)
        if np.any(d == 0.0):
            raise SingularPairError(f"evaluation point coincides with an atom: {x.tolist()}")
        total += float(system.weights @ d ** (-k.s))
    for K, coef in system.cube_components():
        total += coef * point_box_integral(k.s, K.lo(), K.hi(), x, tol=tol)
    return total


@dataclass(frozen=True)
class MultipoleCell:
    """Monopole/dipole data of a compact charge system with a certified
    quadratic remainder bound."""

    support_radius: float
    monopole: float
    dipole: np.ndarray
    second_moment: float  # integral of |y|^2 against |charge|
    remainder_factor: float  # s(s+2)+1 from the quadratic Taylor bound

    @classmethod
    def from_system(cls, system: SignedChargeSystem, k: RieszKernel,
                    support_radius: float | None = None) -> "MultipoleCell":
        if support_radius is None:
            # covers the diameter of the background cell: 2 sqrt(d) R1
            if system.background is None:
                raise ParameterError("support radius required for background-free systems")
            support_radius = 2.0 * math.sqrt(k.d) * system.background.domain.side
        return cls(
            support_radius=float(support_radius),
            monopole=system.total_charge,
            dipole=system.dipole(),
            second_moment=system.absolute_second_moment(),
            remainder_factor=k.s * (k.s + 2.0) + 1.0,
        )


def multipole_tail(cell: MultipoleCell, k: RieszKernel, x) -> tuple[float, float]:
    """Far-field potential estimate with its guaranteed remainder bound.

    Returns (estimate, bound) where |estimate - exact potential| <= bound
    for |x| beyond the support radius.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    r = float(np.linalg.norm(x))
    if r <= cell.support_radius:
        raise ParameterError(f"|x|={r:g} inside the support radius {cell.support_radius:g}")
    # expanding c(x - p) in p gives a positive dipole coupling +s <x, p>
    est = cell.monopole * r ** (-k.s) + k.s * float(x @ cell.dipole) * r ** (-(k.s + 2.0))
    bound = cell.remainder_factor * cell.second_moment * r ** (-(k.s + 2.0))
    return est, bound


@dataclass(frozen=True)
class NetPotentialResult:
    value: float
    tail_bound: float
    ball_values: np.ndarray
    radii: np.ndarray


def _cell_integral_at(k, system, radius, order=24):
    """int over B_radius of the cell potential, via stable ball differences.

    Valid for neutral systems: the common leading pieces cancel exactly
    against the uniform reference point at the origin.
    """
    s, d = k.s, k.d
    total = 0.0
    if len(system.atoms):
        t = np.linalg.norm(system.atoms.points, axis=1)
        total += float(system.weights @ ball_point_difference(s, d, t, radius))
    for K, coef in system.cube_components():
        total += coef * ball_cube_difference(s, d, K.lo(), K.hi(), radius, order=order)
    return total


def net_potential_integral(k: RieszKernel, cell,
                           base_radius: float | None = None,
                           tol: float = 1e-8) -> NetPotentialResult:
    """Improper integral over R^d of the cell potential (ball exhaustion).

    Near field: semianalytic ball integrals of every component.  Far field:
    ball values at geometrically growing radii extrapolated with the even
    multipole decay exponents; at the Coulomb exponent s = d-2 the shell
    averages vanish identically beyond the support and the ball value is
    already exact.
    """
    s, d = k.s, k.d
    if abs(cell.total_charge) > 1e-9 * max(1.0, cell.absolute_second_moment()):
        raise ParameterError(f"cell is not neutral: total charge {cell.total_charge:g}")
    dip = np.linalg.norm(cell.dipole())
    scale = max(1.0, cell.absolute_second_moment())
    if dip > 1e-8 * scale:
        raise ParameterError(f"cell has a nonzero dipole moment ({dip:g}); balance it first")
    if s < d - 2 - 1e-12:
        warnings.warn("s < d-2: the net potential integral is not absolutely controlled",
                      RuntimeWarning, stacklevel=2)

    support = 0.0
    if len(cell.atoms):
        support = float(np.linalg.norm(cell.atoms.points, axis=1).max())
    for K, _ in cell.cube_components():
        support = max(support, float(np.linalg.norm(np.abs(np.asarray(K.center)) + K.side / 2.0)))
    if base_radius is None:
        base_radius = 2.0 * support + 1e-9
    if base_radius <= support:
        raise ParameterError("base radius must exceed the support radius")

    radii = base_radius * 2.0 ** np.arange(5)
    vals = np.array([_cell_integral_at(k, cell, R) for R in radii])

    q2 = cell.absolute_second_moment()
    if abs(s - (d - 2)) < 1e-12:
        # Newton regime: shells beyond the support contribute exactly zero
        value = float(vals[-1])
        tail_bound = float(np.ptp(vals)) + 1e-12 * max(1.0, abs(value))
        return NetPotentialResult(value, tail_bound, vals, radii)

    exps = d - s - 2.0 - 2.0 * np.arange(4)
    design = np.hstack([np.ones((len(radii), 1)), radii[:, None] ** exps[None, :]])
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    value = float(coef[0])
    fit_resid = float(np.abs(design @ coef - vals).max())
    # rigorous bound on the tail omitted beyond the largest computed ball
    crude = (s * (s + 2.0) + 1.0) * q2 * sphere_area(d) * radii[-1] ** (d - s - 2.0) / (s + 2.0 - d)
    tail_bound = float(crude + fit_resid)
    if fit_resid > max(tol, 1e-6 * max(1.0, abs(value))):
        raise AccuracyError(f"tail extrapolation residual {fit_resid:g} too large")
    return NetPotentialResult(value, tail_bound, vals, radii)


@dataclass(frozen=True)
class FourierLimitResult:
    value: float
    diverged: bool
    samples: np.ndarray
    xi_norms: np.ndarray


def _cos_minus_one(x):
    return -2.0 * np.sin(0.5 * x) ** 2


def _prod_minus_one(factors_minus_one):
    """prod(1 + f_i) - 1 without cancellation, via log1p/expm1."""
    acc = np.zeros_like(factors_minus_one[0])
    ok = np.ones_like(acc, dtype=bool)
    for f in factors_minus_one:
        ok &= f > -1.0
    for f in factors_minus_one:
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = acc + np.where(ok, np.log1p(np.where(ok, f, 0.0)), 0.0)
    out = np.where(ok, np.expm1(acc), np.nan)
    if np.any(~ok):
        # fall back to the direct product where a factor hit -1 or below
        direct = np.ones_like(acc)
        for f in factors_minus_one:
            direct = direct * (1.0 + f)
        out = np.where(ok, out, direct - 1.0)
    return out


def _sinc_minus_one(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    out = np.empty_like(x)
    xs = x[small]
    out[small] = -xs ** 2 / 6.0 + xs ** 4 / 120.0
    xl = x[~small]
    out[~small] = np.sin(xl) / xl - 1.0
    return out


def _cell_transform_minus_charge(cell: SignedChargeSystem, xi):
    """F[cell](xi) split as (real deviation from charge, imaginary part).

    The real part is assembled from (cos - 1)-type deviations so the exact
    cancellation of the total charge is structural and tiny |xi| stay stable.
    """
    re = 0.0
    im = 0.0
    if len(cell.atoms):
        phases = cell.atoms.points @ xi
        re += float(cell.weights @ _cos_minus_one(phases))
        im -= float(cell.weights @ np.sin(phases))
    for K, coef in cell.cube_components():
        z = np.asarray(K.center)
        args = 0.5 * K.side * xi
        csm1 = [_sinc_minus_one(np.atleast_1d(a))[0] for a in args]
        sinc_prod_m1 = _prod_minus_one([np.atleast_1d(v) for v in csm1])[0]
        phase = float(z @ xi)
        full_m1 = _prod_minus_one([np.atleast_1d(sinc_prod_m1),
                                   _cos_minus_one(np.atleast_1d(phase))])[0]
        re += coef * K.volume * full_m1
        im -= coef * K.volume * (1.0 + sinc_prod_m1) * math.sin(phase)
    return re, im


def fourier_zero_limit(k: RieszKernel, cell: SignedChargeSystem,
                       xi_sequence=None, directions=None) -> FourierLimitResult:
    """Zero-frequency limit of the kernel-weighted cell transform.

    Evaluates fourier_constant * |xi|^{s-d} * Re F[cell](xi) along a sequence
    decreasing to zero (default |xi| = 2^-j, j = 4..20), averaged over the
    coordinate axes, and extrapolates with the known even expansion; a cell
    with an uncancelled dipole is reported as divergent.
    """
    s, d = k.s, k.d
    if xi_sequence is None:
        xi_sequence = 2.0 ** (-np.arange(4, 21, dtype=float))
    xi_sequence = np.asarray(xi_sequence, dtype=float)
    if directions is None:
        directions = np.eye(d)
    cf = fourier_constant(s, d)
    samples = np.empty(len(xi_sequence))
    imag = np.empty(len(xi_sequence))
    for j, xin in enumerate(xi_sequence):
        acc_re = 0.0
        acc_im = 0.0
        for u in directions:
            re, im = _cell_transform_minus_charge(cell, xin * np.asarray(u, dtype=float))
            acc_re += re
            acc_im += abs(im)
        samples[j] = cf * xin ** (s - d) * acc_re / len(directions)
        imag[j] = cf * xin ** (s - d) * acc_im / len(directions)

    # an uncancelled dipole shows up as |xi|^{s-d+1} growth of the odd part
    tail_im = imag[-6:]
    if tail_im[-1] > 4.0 * tail_im[0] + 1e-30 and tail_im[-1] > 1e-8:
        return FourierLimitResult(float("nan"), True, samples, xi_sequence)
    tail = samples[-6:]
    if np.abs(tail[-1]) > 4.0 * np.abs(tail[0]) + 1e-30 and np.abs(tail[-1]) > 1e-8:
        return FourierLimitResult(float("nan"), True, samples, xi_sequence)

    e0 = s - d + 2.0
    if abs(e0) < 1e-12:
        design = np.vstack([np.ones_like(xi_sequence), xi_sequence ** 2, xi_sequence ** 4]).T
    else:
        design = np.vstack([np.ones_like(xi_sequence), xi_sequence ** e0, xi_sequence ** (e0 + 2.0)]).T
    # weight the small-|xi| end, where the model is accurate
    w = (1.0 / np.maximum(xi_sequence, 1e-300)) ** 0.5
    coef, *_ = np.linalg.lstsq(design * w[:, None], samples * w, rcond=None)
    return FourierLimitResult(float(coef[0]), False, samples, xi_sequence)
