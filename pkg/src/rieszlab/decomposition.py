"""Multi-scale disjoint ball packings of cubes with density certificates,
the localized/residual kernel split they induce, and the almost-subadditivity
experiment for minimum jellium energies."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    CubeDomain,
    ParameterError,
    PointConfiguration,
    RieszKernel,
    ball_volume,
)


class PackingError(RuntimeError):
    """Packing construction could not reach the density window."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


def dimension_constant(d: int) -> float:
    """C_d = 2^{d+1} / |B_1|, the slack constant of the packing lemma."""
    return 2.0 ** (d + 1) / ball_volume(d)


def ladder_growth_factor(d: int) -> float:
    """Required ratio between consecutive packing radii: 1 + 4 sqrt(d) |B_1|."""
    return 1.0 + 4.0 * math.sqrt(d) * ball_volume(d)


def minimum_cube_side(d: int, M: int, r_max: float) -> float:
    """Smallest admissible cube side: 8 sqrt(d) |B_1| (M + C_d) r_max."""
    return 8.0 * math.sqrt(d) * ball_volume(d) * (M + dimension_constant(d)) * r_max


def density_window(d: int, M: int) -> tuple[float, float]:
    """Open interval the per-family covered-volume fraction must land in."""
    cd = dimension_constant(d)
    return 1.0 / (M + cd + 1.0), 1.0 / (M + cd)


def split_constant(d: int) -> float:
    """C = max{1 + 4 sqrt(d)|B_1|, 8 sqrt(d)|B_1|, C_d} from the parameter regime."""
    return max(ladder_growth_factor(d), 8.0 * math.sqrt(d) * ball_volume(d), dimension_constant(d))


@dataclass(frozen=True)
class BallPacking:
    """Disjoint balls inside a cube, grouped into radius families with
    per-family covered-volume certificates."""

    centers: np.ndarray
    radii: np.ndarray
    family: np.ndarray
    cube: CubeDomain
    ladder: np.ndarray

    @property
    def n_families(self) -> int:
        return len(self.ladder)

    def densities(self) -> np.ndarray:
        """Covered fraction per family (exact: balls are disjoint, inside Q)."""
        d = self.cube.dimension
        out = np.zeros(self.n_families)
        for i in range(self.n_families):
            rr = self.radii[self.family == i]
            out[i] = ball_volume(d) * float(np.sum(rr ** d)) / self.cube.volume
        return out

    def check_disjoint(self) -> bool:
        """Exact pairwise disjointness: center distance > sum of radii."""
        r_max = float(self.ladder.max())
        tree = cKDTree(self.centers)
        pairs = tree.query_pairs(r=2.0 * r_max, output_type="ndarray")
        if len(pairs) == 0:
            return True
        dist = np.linalg.norm(self.centers[pairs[:, 0]] - self.centers[pairs[:, 1]], axis=1)
        need = self.radii[pairs[:, 0]] + self.radii[pairs[:, 1]]
        return bool(np.all(dist > need))

    def check_inside(self) -> bool:
        lo = self.cube.lo()
        hi = self.cube.hi()
        return bool(
            np.all(self.centers - self.radii[:, None] >= lo - 1e-12)
            and np.all(self.centers + self.radii[:, None] <= hi + 1e-12)
        )

    def check_density_window(self) -> bool:
        lo, hi = density_window(self.cube.dimension, self.n_families)
        dens = self.densities()
        return bool(np.all((dens > lo) & (dens < hi)))

    def to_json(self) -> dict:
        return {
            "cube": {"center": list(self.cube.center), "side": self.cube.side,
                     "dimension": self.cube.dimension},
            "ladder": self.ladder.tolist(),
            "centers": self.centers.tolist(),
            "radii": self.radii.tolist(),
            "family": self.family.tolist(),
            "densities": self.densities().tolist(),
        }

    @classmethod
    def from_json(cls, doc) -> "BallPacking":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        cube = CubeDomain(tuple(doc["cube"]["center"]), doc["cube"]["side"],
                          doc["cube"]["dimension"])
        return cls(
            centers=np.asarray(doc["centers"], dtype=float),
            radii=np.asarray(doc["radii"], dtype=float),
            family=np.asarray(doc["family"], dtype=int),
            cube=cube,
            ladder=np.asarray(doc["ladder"], dtype=float),
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.centers, self.radii, self.family.astype(np.int64),
                    self.ladder, np.asarray(self.cube.center), np.asarray([self.cube.side])):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def validate_ladder(Q: CubeDomain, ladder) -> np.ndarray:
    ladder = np.asarray(ladder, dtype=float)
    d = Q.dimension
    if np.any(ladder <= 0) or np.any(np.diff(ladder) <= 0):
        raise ParameterError("radii ladder must be positive and strictly increasing")
    growth = ladder_growth_factor(d)
    for r_lo, r_hi in zip(ladder[:-1], ladder[1:]):
        if r_hi <= growth * r_lo:
            raise ParameterError(
                f"ladder step {r_lo:g} -> {r_hi:g} below the required factor {growth:g}")
    min_side = minimum_cube_side(d, len(ladder), float(ladder[-1]))
    if Q.side <= min_side:
        raise ParameterError(f"cube side {Q.side:g} must exceed {min_side:g}")
    return ladder


def swiss_cheese(Q: CubeDomain, ladder, seed: int, max_tries: int = 8) -> BallPacking:
    """Deterministic greedy multi-scale packing with density certificates.

    Largest radius first on a jittered grid; candidates blocked by previously
    accepted balls are removed; per-family counts target the middle of the
    density window.  Jitter seeds are retried until every family lands in its
    window.
    """
    ladder = validate_ladder(Q, ladder)
    d = Q.dimension
    M = len(ladder)
    win_lo, win_hi = density_window(d, M)
    target = 0.5 * (win_lo + win_hi)
    vol_b1 = ball_volume(d)
    last_achieved = None

    for attempt in range(max_tries):
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt)))
        centers, radii, family = [], [], []
        ok = True
        for i in reversed(range(M)):
            r = float(ladder[i])
            n_target = int(round(target * Q.volume / (vol_b1 * r ** d)))
            pitch = 2.1 * r
            jitter = 0.04 * r
            axes = []
            for lo, hi in zip(Q.lo(), Q.hi()):
                start = lo + r + jitter
                stop = hi - r - jitter
                n_ax = int(math.floor((stop - start) / pitch)) + 1
                axes.append(start + pitch * np.arange(max(n_ax, 0)))
            if any(len(ax) == 0 for ax in axes):
                ok = False
                break
            cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            cand = cand + rng.uniform(-jitter, jitter, size=cand.shape)
            if centers:
                placed = np.vstack(centers)
                placed_r = np.concatenate(radii)
                tree = cKDTree(placed)
                # blocked if within r + r_big of any accepted larger ball
                near = tree.query_ball_point(cand, r=float(placed_r.max()) + r + 1e-9)
                keep = np.ones(len(cand), dtype=bool)
                for idx, neigh in enumerate(near):
                    if not neigh:
                        continue
                    dd = np.linalg.norm(placed[neigh] - cand[idx], axis=1)
                    if np.any(dd <= placed_r[neigh] + r + 1e-9):
                        keep[idx] = False
                cand = cand[keep]
            if len(cand) < n_target:
                ok = False
                break
            order = rng.permutation(len(cand))
            chosen = cand[order[:n_target]]
            centers.append(chosen)
            radii.append(np.full(n_target, r))
            family.append(np.full(n_target, i, dtype=int))
        if not ok:
            continue
        packing = BallPacking(
            centers=np.vstack(centers),
            radii=np.concatenate(radii),
            family=np.concatenate(family),
            cube=Q,
            ladder=ladder,
        )
        last_achieved = packing.densities()
        if packing.check_density_window() and packing.check_inside() and packing.check_disjoint():
            return packing
    raise PackingError(
        f"no admissible packing after {max_tries} jitter seeds", achieved=last_achieved)


@dataclass(frozen=True)
class DecompositionParams:
    """Scale parameters of the localized kernel split, with the desk-scale
    clamping of the asymptotic choices made explicit."""

    M: int
    l: float
    R1: float
    ladder: np.ndarray
    kappa: float
    C: float
    clamped: bool
    regime_satisfied: bool


def fg_parameters(N1: int, N2: int, d: int, kappa: float = 0.5) -> DecompositionParams:
    """Asymptotic parameter choices for the kernel split, clamped to be usable
    at desk scale (the proof regime needs astronomically large N)."""
    if N1 < 1 or N2 < 1:
        raise ParameterError("component sizes must be positive")
    if not (0 < kappa <= 0.5):
        raise ParameterError("kappa must lie in (0, 1/2]")
    m = min(N1, N2)
    C = split_constant(d)
    R1 = m ** (1.0 / (3.0 * d * (d + 1.0)))
    l = m ** (1.0 / (2.0 * d * (d + 1.0)))
    M_raw = math.floor(math.log(m) / (18.0 * d * (d + 1.0) * math.log(C))) - 1
    clamped = M_raw < 1
    M = max(M_raw, 1)
    ladder = R1 * C ** np.arange(M)
    regime = M < math.log(l / R1) / (3.0 * math.log(C)) if l > R1 else False
    return DecompositionParams(M=M, l=l, R1=R1, ladder=ladder, kappa=kappa, C=C,
                               clamped=clamped, regime_satisfied=bool(regime))


def _sample_bump(rng, kappa: float) -> float:
    """Rejection sample from the normalized smooth bump on [1-kappa, 1+kappa]."""
    while True:
        u = rng.uniform(-1.0, 1.0)
        if rng.uniform(0.0, 1.0) < math.exp(1.0 - 1.0 / (1.0 - u * u)):
            return 1.0 + kappa * u


class _PeriodicPackingIndex:
    """Membership queries against the periodic extension of a base packing,
    with ghost copies of boundary balls for minimum-image correctness."""

    def __init__(self, packing: BallPacking):
        self.l = packing.cube.side
        self.center = np.asarray(packing.cube.center)
        base = packing.centers - self.center  # coordinates in [-l/2, l/2]
        radii = packing.radii
        d = packing.cube.dimension
        shifts = [np.zeros(d)]
        ghosts_c = [base]
        ghosts_r = [radii]
        ghosts_id = [np.arange(len(base))]
        r_max = float(radii.max())
        offsets = np.stack(np.meshgrid(*[[-1.0, 0.0, 1.0]] * d, indexing="ij"),
                           axis=-1).reshape(-1, d)
        for off in offsets:
            if np.all(off == 0):
                continue
            shifted = base + off * self.l
            keep = np.all(np.abs(shifted) <= self.l / 2.0 + r_max + 1e-9, axis=1)
            if np.any(keep):
                ghosts_c.append(shifted[keep])
                ghosts_r.append(radii[keep])
                ghosts_id.append(np.nonzero(keep)[0])
        self.centers = np.vstack(ghosts_c)
        self.radii = np.concatenate(ghosts_r)
        self.ids = np.concatenate(ghosts_id)
        self.tree = cKDTree(self.centers)
        self.r_max = r_max

    def ball_ids(self, pts: np.ndarray) -> np.ndarray:
        """Id of the (unique) ball containing each point, -1 if none."""
        dist, idx = self.tree.query(pts, k=1)
        out = np.where(dist < self.radii[idx], self.ids[idx], -1)
        # nearest center is not always the container when radii differ
        unresolved = (out == -1) & (dist < self.r_max)
        for i in np.nonzero(unresolved)[0]:
            for j in self.tree.query_ball_point(pts[i], r=self.r_max):
                if np.linalg.norm(pts[i] - self.centers[j]) < self.radii[j]:
                    out[i] = self.ids[j]
                    break
        return out


@dataclass(frozen=True)
class EnergySplitResult:
    localized: float
    localized_se: float
    residual: float
    pair_total: float
    same_ball_probability: np.ndarray  # per ordered-pair estimate
    m_over_mc: float
    n_samples: int


def fg_energy_split(k: RieszKernel, config: PointConfiguration, packing: BallPacking,
                    *, kappa: float = 0.5, mc_samples: int = 2000, seed: int = 0,
                    threads: int = 1) -> EnergySplitResult:
    """Monte-Carlo estimate of the ball-localized part of the pair energy.

    The full pair energy splits into M/(M+C) times (localized + residual
    kernel); the localized part for a pair is its kernel value times the
    probability, over random dilation t and translation y of the periodized
    packing, that both points fall in one common ball.  The residual is the
    measured difference to the full pair energy.
    """
    pts = config.points
    n = len(pts)
    if n < 2:
        raise ParameterError("need at least two points to split a pair energy")
    d = k.d
    M = packing.n_families
    C = split_constant(d)
    index = _PeriodicPackingIndex(packing)
    l = packing.cube.side

    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(n, k=1)
    pair_costs = dist[iu] ** (-k.s)
    pair_total = 2.0 * float(pair_costs.sum())

    n_chunks = max(threads * 4, 8)
    chunk_sizes = [mc_samples // n_chunks + (1 if i < mc_samples % n_chunks else 0)
                   for i in range(n_chunks)]
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)

    def run_chunk(ci):
        rng = np.random.default_rng(seeds[ci])
        hits = np.zeros(len(iu[0]))
        per_sample = np.zeros(chunk_sizes[ci])
        for j in range(chunk_sizes[ci]):
            t = _sample_bump(rng, kappa)
            y = rng.uniform(-l * t / 2.0, l * t / 2.0, size=d)
            u = (pts - y) / t
            u = (u + l / 2.0) % l - l / 2.0
            # consistent wrap: recompute pair membership via per-point ids and
            # the periodic minimum image of the pair separation
            ids = index.ball_ids(u)
            same = (ids[iu[0]] >= 0) & (ids[iu[0]] == ids[iu[1]])
            # guard against wrap artifacts: both points must be in the same
            # image of the ball, i.e. their original separation must fit
            fits = dist[iu] <= 2.0 * (1.0 + kappa) * index.r_max * t
            same = same & fits
            hits += same
            per_sample[j] = float(pair_costs[same].sum())
        return hits, per_sample

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(run_chunk, range(n_chunks)))
    else:
        outs = [run_chunk(ci) for ci in range(n_chunks)]
    hits = sum(o[0] for o in outs)
    per_sample = np.concatenate([o[1] for o in outs])

    factor = M / (M + C)
    prob = hits / mc_samples
    localized = 2.0 * factor * float(per_sample.mean())
    se = 2.0 * factor * float(per_sample.std(ddof=1) / math.sqrt(mc_samples))
    residual = pair_total - localized
    return EnergySplitResult(
        localized=localized,
        localized_se=se,
        residual=residual,
        pair_total=pair_total,
        same_ball_probability=prob,
        m_over_mc=factor,
        n_samples=mc_samples,
    )


@dataclass(frozen=True)
class SubadditiveJelliumReport:
    combined: float
    part_one: float
    part_two: float
    excess: float
    fitted_budget_constant: float
    sizes: tuple


def almost_subadditive_check(k: RieszKernel, N1: int, N2: int, *, seed: int,
                             restarts: int = 4, maxiter: int = 250) -> SubadditiveJelliumReport:
    """Compare the minimum jellium energy of a merged cube with the sum over
    two volume-matched pieces; report the excess against the 1/log budget."""
    from .jellium import minimize_jellium

    d = k.d
    if N2 == 0:
        K = CubeDomain.centered(N1 ** (1.0 / d), d)
        e1 = minimize_jellium(k, K, N1, seed=seed, restarts=restarts, maxiter=maxiter)
        return SubadditiveJelliumReport(e1.energy.total, e1.energy.total, 0.0, 0.0, 0.0, (N1, 0))
    K_full = CubeDomain.centered((N1 + N2) ** (1.0 / d), d)
    K1 = CubeDomain.centered(N1 ** (1.0 / d), d)
    K2 = CubeDomain.centered(N2 ** (1.0 / d), d)  # disjoint volume-N2 box, translation invariant
    full = minimize_jellium(k, K_full, N1 + N2, seed=seed, restarts=restarts, maxiter=maxiter)
    one = minimize_jellium(k, K1, N1, seed=seed + 1, restarts=restarts, maxiter=maxiter)
    two = minimize_jellium(k, K2, N2, seed=seed + 2, restarts=restarts, maxiter=maxiter)
    excess = full.energy.total - one.energy.total - two.energy.total
    budget = excess * math.log(min(N1, N2)) / (N1 + N2)
    return SubadditiveJelliumReport(
        combined=full.energy.total,
        part_one=one.energy.total,
        part_two=two.energy.total,
        excess=excess,
        fitted_budget_constant=budget,
        sizes=(N1, N2),
    )
