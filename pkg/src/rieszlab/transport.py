"""Small-N multi-marginal optimal transport with power-law repulsive costs.

Plans are stored on sorted support tuples only; symmetry is recovered from
the permutation invariance of the cost.  Tuples with repeated sites carry
infinite cost and are pruned before any linear program is formed.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .core import (
    ConstraintError,
    CubeDomain,
    ParameterError,
    RieszKernel,
    UniformMeasure,
    as_points,
    ball_volume,
)
from .quadrature import box_box_integral

_WEIGHT_TOL = 1e-12
_CERT_TOL = 1e-9


@dataclass(frozen=True)
class GridMarginal:
    """Discrete one-body density: m sites with nonnegative weights summing to 1."""

    sites: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        sites = as_points(self.sites)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(sites):
            raise ParameterError("one weight per site required")
        if np.any(w < -_WEIGHT_TOL):
            raise ParameterError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL * max(1.0, len(w)):
            raise ParameterError(f"weights sum to {w.sum():.15g}, expected 1")
        sites.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform_grid(cls, d: int, m_per_axis: int, side: float = 1.0, center=None) -> "GridMarginal":
        """Midpoint quantization of the uniform density on a cube."""
        c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        axis = (np.arange(m_per_axis) + 0.5) / m_per_axis * side - side / 2.0
        mesh = np.stack(np.meshgrid(*[axis] * d, indexing="ij"), axis=-1).reshape(-1, d) + c
        m = m_per_axis ** d
        return cls(mesh, np.full(m, 1.0 / m))

    @classmethod
    def from_csv(cls, text_or_path) -> "GridMarginal":
        """Rows of site coordinates followed by the weight."""
        if hasattr(text_or_path, "read"):
            rows = list(csv.reader(text_or_path))
        elif "\n" in str(text_or_path) or "," in str(text_or_path):
            rows = list(csv.reader(io.StringIO(str(text_or_path))))
        else:
            with open(text_or_path, newline="") as fh:
                rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in row] for row in rows if row])
        return cls(data[:, :-1], data[:, -1])

    @property
    def m(self) -> int:
        return len(self.weights)

    def pair_cost_matrix(self, k: RieszKernel) -> np.ndarray:
        diff = self.sites[:, None, :] - self.sites[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        with np.errstate(divide="ignore"):
            M = dist ** (-k.s)
        np.fill_diagonal(M, np.inf)
        return M

    def self_energy_offdiagonal(self, k: RieszKernel) -> float:
        """<mu, mu>*_s excluding the atomic diagonal."""
        M = self.pair_cost_matrix(k).copy()
        np.fill_diagonal(M, 0.0)
        return float(self.weights @ M @ self.weights)

    def dilate(self, factor: float) -> "GridMarginal":
        return GridMarginal(self.sites * factor, self.weights)


@dataclass(frozen=True)
class DiscretePlan:
    """Symmetric N-point plan supported on sorted site tuples."""

    support: list
    weights: np.ndarray
    n_points: int
    marginal: GridMarginal
    certificate_residual: float = 0.0

    def one_body_marginal(self) -> np.ndarray:
        """Site masses of the one-body marginal (should equal the grid weights)."""
        out = np.zeros(self.marginal.m)
        for T, w in zip(self.support, self.weights):
            for a in T:
                out[a] += w / self.n_points
        return out

    def marginal_residual(self) -> float:
        return float(np.abs(self.one_body_marginal() - self.marginal.weights).max())

    def min_support_separation(self) -> float:
        best = math.inf
        sites = self.marginal.sites
        for T in self.support:
            pts = sites[list(T)]
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt(np.sum(diff * diff, axis=-1))
            np.fill_diagonal(dist, np.inf)
            best = min(best, float(dist.min()))
        return best


def _tuple_costs(M: np.ndarray, combos: list) -> np.ndarray:
    out = np.empty(len(combos))
    for i, T in enumerate(combos):
        c = 0.0
        for a, b in itertools.combinations(T, 2):
            c += M[a, b]
        out[i] = 2.0 * c  # ordered pairs
    return out


def mmot_bruteforce(k: RieszKernel, marginal: GridMarginal, N: int,
                    enumeration_guard: float = 1e7) -> tuple[DiscretePlan, float]:
    """Exact symmetric N-marginal optimal transport on a finite grid.

    Linear program over repeat-free sorted support tuples; optimality is
    certified through the dual with complementary-slackness residual below
    1e-9.  Guarded by m^N <= enumeration_guard.
    """
    m = marginal.m
    if N < 2:
        raise ParameterError("mmot needs N >= 2")
    if float(m) ** N > enumeration_guard:
        raise ParameterError(f"enumeration guard exceeded: {m}^{N} > {enumeration_guard:g}")
    if np.any(N * marginal.weights > 1.0 + 1e-9):
        raise ConstraintError("infeasible: some site carries mass above 1/N")
    combos = list(itertools.combinations(range(m), N))
    M = marginal.pair_cost_matrix(k)
    costs = _tuple_costs(M, combos)
    rows = []
    cols = []
    for j, T in enumerate(combos):
        for a in T:
            rows.append(a)
            cols.append(j)
    A = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, len(combos))).tocsc()
    b = N * marginal.weights
    res = linprog(costs, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if not res.success:
        raise ConstraintError(f"transport LP failed: {res.message}")
    w = res.x
    # dual certificate
    y = res.eqlin.marginals
    reduced = costs - A.T @ y
    primal_resid = float(np.abs(A @ w - b).max())
    dual_resid = float(max(0.0, -(reduced.min())))
    slack_resid = float(np.abs(w * reduced).max())
    cert = max(primal_resid, dual_resid, slack_resid)
    if cert > _CERT_TOL:
        raise ConstraintError(f"optimality certificate residual {cert:g} above 1e-9")
    keep = w > 1e-12
    plan = DiscretePlan(
        support=[combos[j] for j in np.nonzero(keep)[0]],
        weights=w[keep],
        n_points=N,
        marginal=marginal,
        certificate_residual=cert,
    )
    return plan, float(res.fun)


@dataclass(frozen=True)
class Density1D:
    """Piecewise-constant probability density on an interval."""

    breaks: np.ndarray  # length k+1, increasing
    values: np.ndarray  # length k, nonnegative

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if len(b) != len(v) + 1 or np.any(np.diff(b) <= 0) or np.any(v < 0):
            raise ParameterError("breaks must increase and values be nonnegative")
        mass = float(np.sum(v * np.diff(b)))
        if abs(mass - 1.0) > 1e-12:
            raise ParameterError(f"density mass {mass:.15g}, expected 1")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0) -> "Density1D":
        return cls(np.array([lo, hi]), np.array([1.0 / (hi - lo)]))

    def cdf_at_breaks(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.values * np.diff(self.breaks))])

    def quantile(self, u):
        """Piecewise-linear inverse CDF."""
        u = np.asarray(u, dtype=float)
        F = self.cdf_at_breaks()
        idx = np.clip(np.searchsorted(F, u, side="right") - 1, 0, len(self.values) - 1)
        v = self.values[idx]
        return self.breaks[idx] + (u - F[idx]) / np.where(v > 0, v, np.inf)

    def self_energy(self, k: RieszKernel) -> float:
        """<mu, mu>_s by closed-form interval-interval integrals."""
        total = 0.0
        for i in range(len(self.values)):
            for j in range(len(self.values)):
                if self.values[i] == 0 or self.values[j] == 0:
                    continue
                total += self.values[i] * self.values[j] * box_box_integral(
                    k.s, [self.breaks[i]], [self.breaks[i + 1]],
                    [self.breaks[j]], [self.breaks[j + 1]])
        return total


def monotone_1d(k: RieszKernel, density: Density1D, N: int, panels_order: int = 32) -> float:
    """Exact N-marginal transport cost in d = 1 via the quantile construction.

    The optimal symmetric plan rides the quantile curve: for v in [0, 1) the
    support tuple is (F^{-1}((v+j)/N))_j, and the cost is the v-average of the
    ordered pair sum, integrated per smooth panel.
    """
    if k.d != 1:
        raise ParameterError("monotone construction is one-dimensional")
    if k.s >= 1.0:
        raise ParameterError("integrability requires s < 1 in d = 1")
    if N < 2:
        return 0.0
    F = density.cdf_at_breaks()
    # panel boundaries: v where some quantile (v+j)/N crosses a density break
    cuts = {0.0, 1.0}
    for j in range(N):
        for Fb in F:
            v = N * Fb - j
            if 0.0 < v < 1.0:
                cuts.add(float(v))
    cuts = sorted(cuts)
    x01, w01 = np.polynomial.legendre.leggauss(panels_order)
    x01 = 0.5 * (x01 + 1.0)
    w01 = 0.5 * w01
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo < 1e-15:
            continue
        v = lo + (hi - lo) * x01
        q = np.stack([density.quantile((v + j) / N) for j in range(N)], axis=1)
        diff = q[:, :, None] - q[:, None, :]
        dist = np.abs(diff)
        iu = np.triu_indices(N, k=1)
        pair = 2.0 * np.sum(dist[:, iu[0], iu[1]] ** (-k.s), axis=1)
        total += float(np.sum(pair * w01)) * (hi - lo)
    return total


def exc(k: RieszKernel, marginal, N: int, cost: float) -> float:
    """Exchange-correlation energy: transport cost minus N^2 <mu, mu>_s.

    For grid marginals the mean-field term is the off-diagonal product (the
    diagonal is infinite for atoms); continuum marginals use the full product.
    """
    if isinstance(marginal, GridMarginal):
        self_e = marginal.self_energy_offdiagonal(k)
    elif isinstance(marginal, Density1D):
        self_e = marginal.self_energy(k)
    elif isinstance(marginal, UniformMeasure):
        K = marginal.domain
        self_e = box_box_integral(k.s, K.lo(), K.hi(), K.lo(), K.hi()) / K.volume ** 2
    else:
        raise ParameterError(f"unsupported marginal type {type(marginal).__name__}")
    return cost - N * N * self_e


@dataclass(frozen=True)
class GrandCanonicalState:
    lambdas: np.ndarray            # mixture weight per particle number
    marginals: list                # per-n GridMarginal or None
    plans: list                    # per-n DiscretePlan or None
    constraint_residual: float


def gc_ot(k: RieszKernel, marginal: GridMarginal, N: float, n_max: int,
          enumeration_guard: float = 2e6) -> tuple[GrandCanonicalState, float]:
    """Grand-canonical relaxation: one exact linear program over all particle
    numbers n = 0..n_max with mixture and mean-density constraints."""
    if N < 0:
        raise ParameterError("N must be nonnegative")
    if n_max < math.ceil(N) + 2:
        raise ParameterError("n_max must be at least ceil(N) + 2")
    m = marginal.m
    total_cols = sum(math.comb(m, n) for n in range(0, min(n_max, m) + 1))
    if total_cols > enumeration_guard:
        raise ParameterError(f"enumeration guard exceeded: {total_cols} tuples")
    M = marginal.pair_cost_matrix(k)
    combos = []
    sizes = []
    for n in range(0, min(n_max, m) + 1):
        for T in itertools.combinations(range(m), n):
            combos.append(T)
            sizes.append(n)
    costs = np.array([2.0 * sum(M[a, b] for a, b in itertools.combinations(T, 2)) for T in combos])
    rows, cols, vals = [], [], []
    for j, T in enumerate(combos):
        rows.append(m)  # mixture normalization row
        cols.append(j)
        vals.append(1.0)
        for a in T:
            rows.append(a)
            cols.append(j)
            vals.append(1.0)
    A = coo_matrix((vals, (rows, cols)), shape=(m + 1, len(combos))).tocsc()
    b = np.concatenate([N * marginal.weights, [1.0]])
    res = linprog(costs, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if not res.success:
        raise ConstraintError(f"grand-canonical LP infeasible: {res.message}")
    w = res.x
    resid = float(np.abs(A @ w - b).max())
    if resid > _CERT_TOL:
        raise ConstraintError(f"constraint residual {resid:g} above 1e-9")
    lambdas = np.zeros(n_max + 1)
    per_n_support = {n: ([], []) for n in range(n_max + 1)}
    for j, (T, n) in enumerate(zip(combos, sizes)):
        if w[j] > 1e-12:
            lambdas[n] += w[j]
            per_n_support[n][0].append(T)
            per_n_support[n][1].append(w[j])
    marginals = [None] * (n_max + 1)
    plans = [None] * (n_max + 1)
    for n in range(1, n_max + 1):
        sup, ws = per_n_support[n]
        if not sup or lambdas[n] <= 1e-12:
            continue
        mass = np.zeros(m)
        for T, wt in zip(sup, ws):
            for a in T:
                mass[a] += wt
        mu_n = mass / (n * lambdas[n])
        marginals[n] = GridMarginal(marginal.sites, mu_n)
        plans[n] = DiscretePlan(sup, np.asarray(ws) / lambdas[n], n, marginals[n])
    state = GrandCanonicalState(lambdas, marginals, plans, resid)
    return state, float(res.fun)


@dataclass(frozen=True)
class SubadditivityReport:
    mixture_exc: float
    component_excs: list
    slack: float
    satisfied: bool


def subadditivity_check(k: RieszKernel, components: list,
                        slack: float = 1e-9) -> SubadditivityReport:
    """Verify that the mixture exchange-correlation energy is dominated by the
    sum of the component values (with the F_1 = 0 convention for M_i = 1)."""
    parts = []
    total_M = 0
    site_map: dict = {}
    mixture_sites = []
    mixture_mass = None
    for M_i, mu_i in components:
        if M_i < 1:
            raise ParameterError("component sizes must be >= 1")
        total_M += M_i
        if M_i == 1:
            cost_i = 0.0
        else:
            _, cost_i = mmot_bruteforce(k, mu_i, M_i)
        parts.append(exc(k, mu_i, M_i, cost_i))
    # mixture marginal: merge exactly-duplicate sites
    for M_i, mu_i in components:
        for site, wgt in zip(mu_i.sites, mu_i.weights):
            key = tuple(np.round(site, 12))
            if key not in site_map:
                site_map[key] = len(mixture_sites)
                mixture_sites.append(site)
            if mixture_mass is None:
                mixture_mass = {}
            mixture_mass[site_map[key]] = mixture_mass.get(site_map[key], 0.0) + M_i * wgt
    sites = np.array(mixture_sites)
    w = np.zeros(len(sites))
    for idx, mass in mixture_mass.items():
        w[idx] = mass / total_M
    mixture = GridMarginal(sites, w)
    if total_M == 1:
        mix_cost = 0.0
    else:
        _, mix_cost = mmot_bruteforce(k, mixture, total_M)
    lhs = exc(k, mixture, total_M, mix_cost)
    rhs = float(sum(parts))
    return SubadditivityReport(lhs, parts, slack, bool(lhs <= rhs + slack))


@dataclass(frozen=True)
class SeparationBound:
    value: float
    vacuous: bool
    mass_scale: float


def uniform_concentration_modulus(domain_volume: float, d: int):
    """Analytic concentration modulus of a uniform probability density."""

    def omega(t: float) -> float:
        return (t * domain_volume / ball_volume(d)) ** (1.0 / d)

    return omega


def plan_separation_bound(k: RieszKernel, marginal_descr, N: int,
                          domain_diameter: float | None = None) -> SeparationBound:
    """Support-separation certificate radius for optimal N-point plans.

    Every support tuple of an optimal plan is pairwise separated by at least
    the returned radius; the bound is flagged vacuous when it exceeds the
    domain diameter.
    """
    if callable(marginal_descr):
        omega = marginal_descr
    elif isinstance(marginal_descr, UniformMeasure):
        omega = uniform_concentration_modulus(marginal_descr.domain.volume, k.d)
        if domain_diameter is None:
            domain_diameter = marginal_descr.domain.side * math.sqrt(k.d)
    else:
        raise ParameterError("marginal must be a uniform measure or a modulus callable")
    t = 1.0 / (N * N * (N - 1.0))
    r = (N * N * (N - 1.0) / 2.0 * omega(t)) ** (-1.0 / k.s)
    vac = bool(domain_diameter is not None and r >= domain_diameter)
    return SeparationBound(r, vac, t)
