"""Jellium and uniform-electron-gas energies on cubes, their gap identity,
constrained minimization, and separation / lower-bound certificates."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from .core import (
    CubeDomain,
    ParameterError,
    PointConfiguration,
    RieszKernel,
    SingularPairError,
    UniformMeasure,
    UnsupportedRegimeError,
    ball_volume,
    sphere_area,
)
from .quadrature import attraction_many, box_box_integral


@dataclass(frozen=True)
class EnergyBreakdown:
    """Pair/attraction/background split of a cube energy.

    Jellium mode: total = pair_sum - 2*attraction + background_self, which
    equals the doubled off-diagonal self-product of (points - background).
    UEG mode: total = pair_sum - background_self.
    """

    pair_sum: float
    attraction: float
    background_self: float
    total: float
    mode: str


def pair_energy(k: RieszKernel, config: PointConfiguration) -> float:
    """Sum of the kernel over ordered distinct pairs."""
    n = len(config)
    if n < 2:
        return 0.0
    diff = config.points[:, None, :] - config.points[None, :, :]
    dist2 = np.sum(diff * diff, axis=-1)
    iu = np.triu_indices(n, k=1)
    vals = dist2[iu]
    if np.any(vals == 0.0):
        raise SingularPairError("coincident points in pair energy")
    return 2.0 * float(np.sum(vals ** (-k.s / 2.0)))


def _self_energy(k: RieszKernel, mu) -> float:
    """<mu, mu>_s for a uniform cube measure or an averaged marginal."""
    if isinstance(mu, UniformMeasure):
        K = mu.domain
        return mu.intensity ** 2 * box_box_integral(k.s, K.lo(), K.hi(), K.lo(), K.hi())
    # duck-typed: lattice.AveragedMarginal provides self_energy(k)
    if hasattr(mu, "self_energy"):
        return mu.self_energy(k)
    raise ParameterError(f"unsupported background measure {type(mu).__name__}")


def _cross_energy(k: RieszKernel, mu, config: PointConfiguration) -> float:
    """<mu, nu>_s for the background against the atomic configuration."""
    if len(config) == 0:
        return 0.0
    if isinstance(mu, UniformMeasure):
        K = mu.domain
        return mu.intensity * float(np.sum(attraction_many(k.s, K.lo(), K.hi(), config.points)))
    if hasattr(mu, "cross_energy"):
        return mu.cross_energy(k, config)
    raise ParameterError(f"unsupported background measure {type(mu).__name__}")


def e_jel(k: RieszKernel, K: CubeDomain, config: PointConfiguration) -> EnergyBreakdown:
    """Jellium energy of points against the unit background on K."""
    config.require_distinct()
    pair = pair_energy(k, config)
    mu = UniformMeasure(K, 1.0)
    attr = _cross_energy(k, mu, config)
    back = _self_energy(k, mu)
    return EnergyBreakdown(pair, attr, back, pair - 2.0 * attr + back, "jellium")


def e_ueg(k: RieszKernel, mu, config: PointConfiguration) -> EnergyBreakdown:
    """Uniform-electron-gas energy: pair sum minus the background self-energy."""
    config.require_distinct()
    pair = pair_energy(k, config)
    back = _self_energy(k, mu)
    return EnergyBreakdown(pair, _cross_energy(k, mu, config), back, pair - back, "ueg")


def jel_ueg_gap(k: RieszKernel, mu, config: PointConfiguration) -> float:
    """2 <mu, nu - mu>_s, the exact difference e_ueg - e_jel."""
    return 2.0 * (_cross_energy(k, mu, config) - _self_energy(k, mu))


def jellium_gradient(k: RieszKernel, K: CubeDomain, config: PointConfiguration,
                     fast: bool = False) -> np.ndarray:
    """Analytic gradient of e_jel with respect to the point coordinates."""
    pts = config.points
    n, d = pts.shape
    if n == 0:
        return np.zeros((0, d))
    g = np.zeros((n, d))
    if n >= 2:
        diff = pts[:, None, :] - pts[None, :, :]
        dist2 = np.sum(diff * diff, axis=-1)
        np.fill_diagonal(dist2, np.inf)
        w = dist2 ** (-(k.s + 2.0) / 2.0)
        g += -2.0 * k.s * np.sum(w[:, :, None] * diff, axis=1)
    kwargs = dict(order=8, check=5, theta=0.9, tol=1e-6) if fast else {}
    _, grads = attraction_many(k.s, K.lo(), K.hi(), pts, grad=True, **kwargs)
    return g - 2.0 * grads


@dataclass(frozen=True)
class MinimizationResult:
    configuration: PointConfiguration
    energy: EnergyBreakdown
    separation: float
    restarts_used: int
    converged: bool
    grad_norm: float


def _lattice_init(N, K: CubeDomain, rng) -> np.ndarray:
    """N points from a jittered integer-lattice restriction of the cube."""
    d = K.dimension
    m = max(1, math.ceil(N ** (1.0 / d)))
    axes = [np.arange(m) for _ in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    order = rng.permutation(len(grid))
    sel = grid[order[:N]].astype(float)
    spacing = K.side / m
    pts = K.lo() + (sel + 0.5) * spacing
    pts += rng.uniform(-0.1, 0.1, size=pts.shape) * spacing
    return np.clip(pts, K.lo() + 1e-9 * K.side, K.hi() - 1e-9 * K.side)


def _stage_energy_grad(x, k, K, N, eta, fast):
    """Energy and gradient with the pair kernel truncated at eta (eta=0: exact)."""
    pts = x.reshape(N, K.dimension)
    d = K.dimension
    pair = 0.0
    gpair = np.zeros((N, d))
    if N >= 2:
        diff = pts[:, None, :] - pts[None, :, :]
        dist2 = np.sum(diff * diff, axis=-1)
        np.fill_diagonal(dist2, np.inf)
        dist = np.sqrt(dist2)
        if eta > 0.0:
            # c_eta = min(c, c(eta)): evaluate the kernel at max(dist, eta)
            vals = np.maximum(dist, eta) ** (-k.s)
            np.fill_diagonal(vals, 0.0)
            pair = float(np.sum(vals))
            active = (dist > eta).astype(float)
        else:
            vals = dist ** (-k.s)
            np.fill_diagonal(vals, 0.0)
            pair = float(np.sum(vals))
            active = 1.0
        w = active * dist2 ** (-(k.s + 2.0) / 2.0)
        if isinstance(active, np.ndarray):
            np.fill_diagonal(w, 0.0)
        gpair = -2.0 * k.s * np.sum(w[:, :, None] * diff, axis=1)
    kwargs = dict(order=8, check=5, theta=0.9, tol=1e-6) if fast else {}
    attr, gattr = attraction_many(k.s, K.lo(), K.hi(), pts, grad=True, **kwargs)
    e = pair - 2.0 * float(np.sum(attr))
    return e, (gpair - 2.0 * gattr).reshape(-1)


def _projected_grad_norm(x, g, lo, hi):
    gp = g.copy()
    at_lo = (x <= lo + 1e-12) & (g > 0)
    at_hi = (x >= hi - 1e-12) & (g < 0)
    gp[at_lo | at_hi] = 0.0
    return float(np.abs(gp).max()) if len(gp) else 0.0


def minimize_jellium(k: RieszKernel, K: CubeDomain, N: int, *,
                     seed: int, restarts: int = 8, maxiter: int = 300,
                     gtol: float = 1e-7, threads: int = 1) -> MinimizationResult:
    """Locally optimal jellium configuration under box projection.

    Multi-start L-BFGS-B from jittered lattice initializations with the pair
    kernel annealed through truncation stages (cap radius halved down to the
    exact kernel) to escape coincidence singularities.  Deterministic for a
    fixed seed, independent of the thread count.
    """
    if N < 1:
        raise ParameterError("N must be at least 1")
    d = K.dimension
    margin = 1e-9 * K.side  # keeps boundary-face gradients finite
    lo = np.repeat(K.lo() + margin, N)
    hi = np.repeat(K.hi() - margin, N)
    bounds = np.stack([K.lo() + margin, K.hi() - margin], axis=1)
    bounds = [tuple(b) for b in np.tile(bounds, (N, 1, 1)).reshape(-1, 2)]
    eta0 = 0.1 * K.side * N ** (-1.0 / d)
    stages = [eta0, 0.5 * eta0, 0.0]

    seeds = np.random.SeedSequence(seed).spawn(restarts)

    def run_restart(i):
        rng = np.random.default_rng(seeds[i])
        x = _lattice_init(N, K, rng).reshape(-1)
        res = None
        for eta in stages:
            res = scipy_minimize(
                _stage_energy_grad, x, args=(k, K, N, eta, True), jac=True,
                method="L-BFGS-B", bounds=bounds,
                options={"maxiter": maxiter, "ftol": 1e-14, "gtol": gtol * 0.1},
            )
            x = res.x
        e, g = _stage_energy_grad(x, k, K, N, 0.0, False)
        return e, x, _projected_grad_norm(x, g, lo, hi)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(run_restart, range(restarts)))
    else:
        outs = [run_restart(i) for i in range(restarts)]

    best_idx = min(range(restarts), key=lambda i: (outs[i][0], i))
    e_best, x_best, gnorm = outs[best_idx]
    config = PointConfiguration.from_array(x_best.reshape(N, d), d)
    breakdown = e_jel(k, K, config)
    return MinimizationResult(
        configuration=config,
        energy=breakdown,
        separation=config.min_separation(),
        restarts_used=restarts,
        converged=bool(gnorm <= gtol * max(1.0, abs(e_best))),
        grad_norm=gnorm,
    )


def separation_radius(d: int, epsilon: float) -> float:
    """Uniform-in-s minimum separation certificate radius for minimizers."""
    if d < 3:
        raise UnsupportedRegimeError("separation certificate is proved for d >= 3 only")
    if not (0 < epsilon <= 2):
        raise ParameterError("epsilon must lie in (0, 2]")
    r_b = (d / sphere_area(d)) ** (1.0 / d)
    return r_b * (4.0 * d / epsilon + 1.0) ** (-1.0 / (d - 2.0))


@dataclass(frozen=True)
class SeparationCertificate:
    passed: bool
    min_distance: float
    threshold: float
    epsilon: float


def check_separation(result: MinimizationResult, k: RieszKernel,
                     epsilon: float) -> SeparationCertificate:
    """Certify the minimizer's pairwise separation against the formula radius."""
    if k.d < 3:
        raise UnsupportedRegimeError("separation certificate is proved for d >= 3 only")
    if not (k.d - 2 <= k.s <= k.d - epsilon + 1e-12):
        raise UnsupportedRegimeError(f"need d-2 <= s <= d-eps, got s={k.s}, eps={epsilon}")
    thr = separation_radius(k.d, epsilon)
    md = result.configuration.min_separation()
    return SeparationCertificate(bool(md >= thr), md, thr, epsilon)


def jellium_lower_bound(k: RieszKernel, N: int) -> float:
    """Certified lower bound -4 N |S^{d-1}| / (d - s) for any configuration."""
    return -4.0 * N * sphere_area(k.d) / (k.d - k.s)


def mean_field_upper_bound(k: RieszKernel, K: CubeDomain) -> float:
    """Averaged-competitor upper bound: minimum <= -(1/N) int int_{KxK} c."""
    return box_box_integral(k.s, K.lo(), K.hi(), K.lo(), K.hi())
