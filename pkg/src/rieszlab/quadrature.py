"""Singular box integrals for power-law kernels.

The central object is

    G(h, [a, b], m) = int over the box prod y_i^{m_i} (h^2 + |y|^2)^{-s/2} dy

on boxes in the closed positive orthant.  Boxes with a corner at the origin
and h = 0 are reduced by the Duffy pyramid substitution, which integrates the
radial power exactly and leaves one smooth integral per pyramid; all other
boxes are handled by distance-graded bisection with tensor Gauss-Legendre
leaves.  Everything user-facing (point-cube, cube-cube, face integrals) is
assembled from G by orthant splitting around the singular point.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .core import AccuracyError, ParameterError

_LEAF_ORDER = 10
_CHECK_ORDER = 6
_THETA = 0.55  # leaf acceptance: diameter <= THETA * distance-to-singularity
_MAX_DEPTH = 200_000


@lru_cache(maxsize=32)
def gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w  # on [0, 1]


def _leaf_batch(s, h, A, B, m, order):
    """Tensor Gauss-Legendre over a stack of boxes (n, k) of a smooth integrand."""
    n, k = A.shape
    x01, w01 = gauss_legendre(order)
    # nodes[i]: (n, order) per coordinate
    nodes = [A[:, i, None] + (B[:, i] - A[:, i])[:, None] * x01 for i in range(k)]
    wts = [(B[:, i] - A[:, i])[:, None] * w01 for i in range(k)]
    shape = lambda arr, i: arr.reshape((n,) + tuple(order if j == i else 1 for j in range(k)))
    r2 = np.full((n,) + (1,) * k, h * h)
    mono = None
    wt = None
    for i in range(k):
        g = shape(nodes[i], i)
        r2 = r2 + g * g
        if m[i]:
            mono = g ** m[i] if mono is None else mono * g ** m[i]
        w = shape(wts[i], i)
        wt = w if wt is None else wt * w
    vals = r2 ** (-s / 2.0)
    if mono is not None:
        vals = vals * mono
    return (vals * wt).reshape(n, -1).sum(axis=1)


def _smooth_box(s, h, a, b, m, acc):
    """Adaptive integral over a box at positive distance from the singularity."""
    stack = [(np.asarray(a, float), np.asarray(b, float))]
    leaves_a, leaves_b = [], []
    count = 0
    while stack:
        a_, b_ = stack.pop()
        count += 1
        if count > _MAX_DEPTH:
            raise AccuracyError("quadrature subdivision budget exhausted")
        edge = b_ - a_
        diam = math.sqrt(float(edge @ edge))
        dist = math.sqrt(h * h + float(a_ @ a_))
        if diam <= _THETA * dist or diam < 1e-14:
            leaves_a.append(a_)
            leaves_b.append(b_)
            continue
        j = int(np.argmax(edge))
        mid = 0.5 * (a_[j] + b_[j])
        a2 = a_.copy()
        a2[j] = mid
        b2 = b_.copy()
        b2[j] = mid
        stack.append((a_, b2))
        stack.append((a2, b_))
    A = np.vstack(leaves_a)
    B = np.vstack(leaves_b)
    hi = _leaf_batch(s, h, A, B, m, _LEAF_ORDER)
    lo = _leaf_batch(s, h, A, B, m, _CHECK_ORDER)
    acc[0] += float(np.abs(hi - lo).sum())
    return float(hi.sum())


def _duffy_corner(s, b, m, acc):
    """G(0, [0, b], m) via pyramid substitution; radial power integrated exactly."""
    k = len(b)
    total_m = int(sum(m))
    if k + total_m - s <= 0:
        raise ParameterError(f"corner integral diverges: k+|m| <= s ({k}+{total_m} <= {s})")
    if k == 1:
        return b[0] ** (1 + m[0] - s) / (1 + m[0] - s)
    total = 0.0
    for j in range(k):
        if b[j] == 0.0:
            continue
        rest_b = np.delete(b, j)
        rest_m = tuple(np.delete(np.asarray(m, dtype=int), j))
        inner = riesz_box_integral(s, np.zeros(k - 1), rest_b, h=b[j], m=rest_m, _acc=acc)
        total += b[j] ** (m[j] + 1) / (k + total_m - s) * inner
    return total


def riesz_box_integral(s, a, b, h=0.0, m=None, tol=1e-9, _acc=None):
    """G(h, [a, b], m) over a box in the closed positive orthant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    k = len(a)
    if m is None:
        m = (0,) * k
    if np.any(a < -1e-15) or np.any(b < a - 1e-15):
        raise ParameterError("box must satisfy 0 <= a <= b componentwise")
    if np.any(b - a <= 0):
        return 0.0
    top = _acc is None
    acc = [0.0] if top else _acc
    if h == 0.0 and np.all(a == 0.0):
        val = _duffy_corner(s, b, m, acc)
    else:
        val = _smooth_box(s, h, a, b, m, acc)
    if top and acc[0] > max(tol * max(abs(val), 1e-30), 1e-13):
        raise AccuracyError(f"quadrature error estimate {acc[0]:g} exceeds tolerance")
    return val


def _orthant_boxes(lo, hi):
    """Split a box (coordinates relative to the singular point) at 0 and
    reflect every piece into the positive orthant."""
    d = len(lo)
    pieces = [(np.array([], dtype=float), np.array([], dtype=float))]
    for i in range(d):
        new = []
        segs = []
        if hi[i] <= 0.0:
            segs.append((-hi[i], -lo[i]))
        elif lo[i] >= 0.0:
            segs.append((lo[i], hi[i]))
        else:
            segs.append((0.0, -lo[i]))
            segs.append((0.0, hi[i]))
        for a, b in pieces:
            for sa, sb in segs:
                if sb - sa <= 0:
                    continue
                new.append((np.append(a, sa), np.append(b, sb)))
        pieces = new
    return pieces


def point_box_integral(s, lo, hi, p, tol=1e-9):
    """int over the box [lo, hi] of |p - y|^{-s} dy (p anywhere in R^d)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    d = len(lo)
    if d == 1:
        return _interval_integral(s, lo[0], hi[0], p[0])
    total = 0.0
    for a, b in _orthant_boxes(lo - p, hi - p):
        total += riesz_box_integral(s, a, b, h=0.0, tol=tol)
    return total


def _signed_power(t, a):
    """Antiderivative of |t|^{-s} on the line: sign(t) |t|^{a} / a, a = 1-s."""
    return math.copysign(abs(t) ** a, t) / a


def _interval_integral(s, lo, hi, p):
    """Closed form of int_lo^hi |p - y|^{-s} dy for s < 1... any 0<s<1."""
    a = 1.0 - s
    return _signed_power(hi - p, a) - _signed_power(lo - p, a)


def _interval_integral_diff(s, lo, hi, p):
    """d/dp int_lo^hi |p-y|^{-s} dy = |p-lo|^{-s} - |p-hi|^{-s} (p interior ok)."""
    return abs(p - lo) ** (-s) - abs(p - hi) ** (-s)


def face_integral(s, lo, hi, p, axis, side, tol=1e-9):
    """Surface integral of |p - y|^{-s} over one face of the box [lo, hi].

    axis/side select the face {y_axis = lo_axis} (side=0) or {y_axis = hi_axis}
    (side=1).  Used for gradients of attraction terms via the divergence
    theorem; requires p off the face plane unless s < d - 1.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    d = len(lo)
    plane = lo[axis] if side == 0 else hi[axis]
    h = abs(p[axis] - plane)
    keep = [i for i in range(d) if i != axis]
    if not keep:
        if h == 0.0:
            raise SingularZero("face evaluation at the singular point")
        return h ** (-s)
    flo = lo[keep] - p[keep]
    fhi = hi[keep] - p[keep]
    total = 0.0
    for a, b in _orthant_boxes(flo, fhi):
        total += riesz_box_integral(s, a, b, h=h, tol=tol)
    return total


class SingularZero(ZeroDivisionError):
    pass


def attraction(s, lo, hi, p, tol=1e-9):
    """int_K |p - y|^{-s} dy for the box K = [lo, hi]."""
    return point_box_integral(s, lo, hi, p, tol=tol)


def attraction_gradient(s, lo, hi, p, tol=1e-9):
    """Gradient in p of the attraction integral, as a boundary-flux sum."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    d = len(lo)
    if d == 1:
        return np.array([_interval_integral_diff(s, lo[0], hi[0], p[0])])
    g = np.zeros(d)
    for axis in range(d):
        # outward normals: -e_axis on the lower face, +e_axis on the upper
        low_face = face_integral(s, lo, hi, p, axis, 0, tol=tol)
        high_face = face_integral(s, lo, hi, p, axis, 1, tol=tol)
        g[axis] = low_face - high_face
    return g


def _linear_pieces(a1, b1, a2, b2):
    """Overlap length of [a1,b1] and [a2+t, b2+t] as t varies: the kinked
    trapezoid; returns breakpoints and (slope, intercept) per linear piece."""
    kinks = sorted({a1 - b2, a1 - a2, b1 - b2, b1 - a2})
    pieces = []
    for lo, hi in zip(kinks[:-1], kinks[1:]):
        if hi - lo <= 1e-15:
            continue
        mid = 0.5 * (lo + hi)
        val = min(b1, b2 + mid) - max(a1, a2 + mid)
        if val <= 0:
            continue
        v_lo = min(b1, b2 + lo) - max(a1, a2 + lo)
        v_hi = min(b1, b2 + hi) - max(a1, a2 + hi)
        slope = (v_hi - v_lo) / (hi - lo)
        pieces.append((lo, hi, slope, v_lo - slope * lo))
    return pieces


def box_box_integral(s, lo1, hi1, lo2, hi2, tol=1e-9):
    """int_{K1} int_{K2} |x - y|^{-s} dy dx for two axis-aligned boxes.

    Reduced to a single integral of |t|^{-s} against the per-coordinate
    overlap profile, then split into boxes where the profile is linear and
    expanded into monomial-weighted corner integrals.  Results are memoized
    (the integrand is a pure function of the geometry).
    """
    key = (float(s), tuple(np.asarray(lo1, float)), tuple(np.asarray(hi1, float)),
           tuple(np.asarray(lo2, float)), tuple(np.asarray(hi2, float)), float(tol))
    hit = _BOX_BOX_CACHE.get(key)
    if hit is not None:
        return hit
    val = _box_box_integral_impl(s, lo1, hi1, lo2, hi2, tol)
    if len(_BOX_BOX_CACHE) > 4096:
        _BOX_BOX_CACHE.clear()
    _BOX_BOX_CACHE[key] = val
    return val


_BOX_BOX_CACHE: dict = {}


def _box_box_integral_impl(s, lo1, hi1, lo2, hi2, tol=1e-9):
    lo1 = np.asarray(lo1, dtype=float)
    hi1 = np.asarray(hi1, dtype=float)
    lo2 = np.asarray(lo2, dtype=float)
    hi2 = np.asarray(hi2, dtype=float)
    d = len(lo1)
    per_coord = []
    for i in range(d):
        segs = []
        for tlo, thi, alpha, beta in _linear_pieces(lo1[i], hi1[i], lo2[i], hi2[i]):
            cuts = [tlo, thi] if (tlo >= 0 or thi <= 0) else [tlo, 0.0, thi]
            for c0, c1 in zip(cuts[:-1], cuts[1:]):
                if c1 - c0 <= 1e-15:
                    continue
                sign = 1.0 if c0 >= 0 else -1.0
                # reflected coordinate u = |t|: lambda = alpha*sign*u + beta
                segs.append((abs(c0) if sign > 0 else abs(c1),
                             abs(c1) if sign > 0 else abs(c0),
                             alpha * sign, beta))
        per_coord.append(segs)
    total = 0.0
    idx = [0] * d

    def rec(i, a, b, slopes, inters):
        nonlocal total
        if i == d:
            # expand prod (slope_i u_i + inter_i) into monomials
            for mask in range(1 << d):
                coef = 1.0
                m = [0] * d
                for j in range(d):
                    if mask >> j & 1:
                        coef *= slopes[j]
                        m[j] = 1
                    else:
                        coef *= inters[j]
                if coef == 0.0:
                    continue
                total += coef * riesz_box_integral(s, np.array(a), np.array(b), m=tuple(m), tol=tol)
            return
        for (sa, sb, alpha, beta) in per_coord[i]:
            rec(i + 1, a + [sa], b + [sb], slopes + [alpha], inters + [beta])

    rec(0, [], [], [], [])
    return total


# ----------------------------------------------------------------------
# Ball-difference integrals for far-field accounting
# ----------------------------------------------------------------------

def _pw(r, a):
    """Antiderivative of r^{a-1}: r^a / a, with the log branch at a = 0."""
    if abs(a) < 1e-13:
        return math.log(r)
    return r ** a / a


def ball_point_difference(s, d, t, radius):
    """int over the ball B_radius(0) of |x - p|^{-s} - |x|^{-s} dx, t = |p|.

    Requires radius > t.  The integrand difference is supported on the shell
    radius-t < r < radius+t, which keeps the evaluation free of large-term
    cancellation.  Closed form for d = 1, 3; smoothed fixed-order quadrature
    for d = 2 (vectorized over t).
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t).astype(float)
    if np.any(t >= radius):
        raise ParameterError("ball difference needs |p| < radius")
    out = np.zeros_like(t)
    pos = t > 1e-300
    tp = t[pos]
    if d == 1:
        a = 1.0 - s
        out[pos] = ((radius - tp) ** a + (radius + tp) ** a - 2.0 * radius ** a) / a
    elif d == 3:
        vals = np.empty_like(tp)
        for i, ti in enumerate(tp):
            lo, hi = radius - ti, radius + ti
            # (pi/t) int (R^2 - (r-t)^2) r^{1-s} dr over the cap window
            c0 = radius * radius - ti * ti
            term = (
                c0 * (_pw(hi, 2.0 - s) - _pw(lo, 2.0 - s))
                + 2.0 * ti * (_pw(hi, 3.0 - s) - _pw(lo, 3.0 - s))
                - (_pw(hi, 4.0 - s) - _pw(lo, 4.0 - s))
            )
            full = 4.0 * math.pi * (_pw(radius, 3.0 - s) - _pw(lo, 3.0 - s))
            vals[i] = math.pi / ti * term - full
        out[pos] = vals
    elif d == 2:
        out[pos] = _ball_point_difference_2d(s, tp, radius)
    else:
        raise ParameterError(f"ball difference implemented for d in 1..3, got {d}")
    return float(out[0]) if scalar else out


def _ball_point_difference_2d(s, t, radius):
    """Two-piece angular-overlap integral; sin^2 substitution removes the
    square-root endpoint behavior of the arc angle."""
    n = 64
    x01, w01 = gauss_legendre(n)
    phi = np.sin(0.5 * math.pi * x01) ** 2
    dphi = 0.5 * math.pi * np.sin(math.pi * x01) * w01  # d(phi-param)/dx weight

    t = t[:, None]
    lo = radius - t
    hi = radius + t

    def alpha(r):
        c = (t * t + r * r - radius * radius) / (2.0 * t * r)
        return np.arccos(np.clip(c, -1.0, 1.0))

    # piece 1: r in [R-t, R], integrand 2 r^{1-s} (alpha - pi)
    r1 = lo + (radius - lo) * phi
    f1 = 2.0 * r1 ** (1.0 - s) * (alpha(r1) - math.pi)
    v1 = np.sum(f1 * ((radius - lo) * dphi), axis=1)
    # piece 2: r in [R, R+t], integrand 2 r^{1-s} alpha
    r2 = radius + (hi - radius) * phi
    f2 = 2.0 * r2 ** (1.0 - s) * alpha(r2)
    v2 = np.sum(f2 * ((hi - radius) * dphi), axis=1)
    return v1 + v2


# ----------------------------------------------------------------------
# Pooled multi-point evaluation
# ----------------------------------------------------------------------
#
# Energy and gradient evaluations inside optimizers need the attraction
# integral and its gradient at many points against one fixed box.  The
# decomposition tasks (Duffy pyramids and face panels) are pooled across
# points and dimensions and driven through one vectorized subdivision pass
# per dimension, with the offset h carried per task.


class _SmoothPool:
    def __init__(self, n_out):
        self.values = np.zeros(n_out)
        self.errors = np.zeros(n_out)
        self.tasks = {}  # k -> list of (h, a, b, coeff, owner)

    def add_task(self, h, a, b, coeff, owner):
        if np.any(b - a <= 0):
            return
        self.tasks.setdefault(len(a), []).append((h, a, b, coeff, owner))

    def add_value(self, owner, v):
        self.values[owner] += v

    def duffy(self, s, b, coeff, owner):
        """Expand a corner box [0, b] (h = 0) into smooth tasks."""
        k = len(b)
        if k - s <= 0:
            raise ParameterError(f"corner integral diverges: k <= s ({k} <= {s})")
        if k == 1:
            self.add_value(owner, coeff * b[0] ** (1.0 - s) / (1.0 - s))
            return
        for j in range(k):
            if b[j] <= 0.0:
                continue
            rest = np.delete(b, j)
            self.add_task(b[j], np.zeros(k - 1), rest, coeff * b[j] / (k - s), owner)

    def solve(self, s, order=_LEAF_ORDER, check=_CHECK_ORDER, theta=_THETA):
        for k, tasks in self.tasks.items():
            H = np.array([t[0] for t in tasks])
            A = np.array([t[1] for t in tasks]).reshape(len(tasks), k)
            B = np.array([t[2] for t in tasks]).reshape(len(tasks), k)
            C = np.array([t[3] for t in tasks])
            O = np.array([t[4] for t in tasks], dtype=int)
            self._solve_k(s, k, H, A, B, C, O, order, check, theta)
        return self.values, self.errors

    def _solve_k(self, s, k, H, A, B, C, O, order, check, theta):
        rounds = 0
        while len(A):
            rounds += 1
            if rounds > 120 or len(A) > _MAX_DEPTH:
                raise AccuracyError("quadrature subdivision budget exhausted")
            edge = B - A
            diam = np.sqrt(np.sum(edge * edge, axis=1))
            dist = np.sqrt(H * H + np.sum(A * A, axis=1))
            leaf = (diam <= theta * dist) | (diam < 1e-14)
            if np.any(leaf):
                hi = _leaf_batch_h(s, H[leaf], A[leaf], B[leaf], order)
                lo = _leaf_batch_h(s, H[leaf], A[leaf], B[leaf], check)
                np.add.at(self.values, O[leaf], C[leaf] * hi)
                np.add.at(self.errors, O[leaf], np.abs(C[leaf]) * np.abs(hi - lo))
            keep = ~leaf
            if not np.any(keep):
                break
            H, A, B, C, O = H[keep], A[keep].copy(), B[keep].copy(), C[keep], O[keep]
            j = np.argmax(B - A, axis=1)
            rows = np.arange(len(A))
            mid = 0.5 * (A[rows, j] + B[rows, j])
            A2 = A.copy()
            A2[rows, j] = mid
            B1 = B.copy()
            B1[rows, j] = mid
            H = np.concatenate([H, H])
            A = np.vstack([A, A2])
            B = np.vstack([B1, B])
            C = np.concatenate([C, C])
            O = np.concatenate([O, O])


def _leaf_batch_h(s, H, A, B, order):
    """Like _leaf_batch but with a per-leaf offset h."""
    n, k = A.shape
    x01, w01 = gauss_legendre(order)
    r2 = (H * H).reshape((n,) + (1,) * k)
    wt = None
    for i in range(k):
        g = (A[:, i, None] + (B[:, i] - A[:, i])[:, None] * x01).reshape(
            (n,) + tuple(order if j == i else 1 for j in range(k))
        )
        r2 = r2 + g * g
        w = ((B[:, i] - A[:, i])[:, None] * w01).reshape(
            (n,) + tuple(order if j == i else 1 for j in range(k))
        )
        wt = w if wt is None else wt * w
    return (r2 ** (-s / 2.0) * wt).reshape(n, -1).sum(axis=1)


def attraction_many(s, lo, hi, points, grad=False, order=_LEAF_ORDER, check=_CHECK_ORDER,
                    theta=_THETA, tol=1e-8):
    """Attraction integrals (and optionally gradients) of one box at many points.

    Returns vals (N,) or (vals, grads (N, d)).  Equivalent to looping
    point_box_integral / attraction_gradient but pools all decomposition
    tasks into vectorized passes.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    P = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = P.shape
    if d == 1:
        vals = np.array([_interval_integral(s, lo[0], hi[0], p[0]) for p in P])
        if not grad:
            return vals
        gr = np.array([[_interval_integral_diff(s, lo[0], hi[0], p[0])] for p in P])
        return vals, gr

    pool = _SmoothPool(n)
    for i, p in enumerate(P):
        for a, b in _orthant_boxes(lo - p, hi - p):
            if np.all(a == 0.0):
                pool.duffy(s, b, 1.0, i)
            else:
                pool.add_task(0.0, a, b, 1.0, i)
    vals, errs = pool.solve(s, order, check, theta)
    if np.any(errs > np.maximum(tol * np.maximum(np.abs(vals), 1e-30), 1e-12)):
        raise AccuracyError("pooled attraction quadrature above tolerance")
    if not grad:
        return vals

    gpool = _SmoothPool(n * 2 * d)
    for i, p in enumerate(P):
        for axis in range(d):
            keep = [j for j in range(d) if j != axis]
            flo = lo[keep] - p[keep]
            fhi = hi[keep] - p[keep]
            for side, plane in ((0, lo[axis]), (1, hi[axis])):
                h = abs(p[axis] - plane)
                owner = (i * d + axis) * 2 + side
                for a, b in _orthant_boxes(flo, fhi):
                    gpool.add_task(h, a, b, 1.0, owner)
    gvals, gerrs = gpool.solve(s, order, check, theta)
    if np.any(gerrs > np.maximum(tol * np.maximum(np.abs(gvals), 1e-30), 1e-12)):
        raise AccuracyError("pooled gradient quadrature above tolerance")
    gvals = gvals.reshape(n, d, 2)
    grads = gvals[:, :, 0] - gvals[:, :, 1]  # outward normals: -lower +upper
    return vals, grads


def ball_cube_difference(s, d, lo, hi, radius, order=24):
    """int_K ball_point_difference(|y|) dy over the box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x01, w01 = gauss_legendre(order)
    nodes = [lo[i] + (hi[i] - lo[i]) * x01 for i in range(d)]
    wts = [(hi[i] - lo[i]) * w01 for i in range(d)]
    grids = np.meshgrid(*nodes, indexing="ij")
    r = np.sqrt(sum(g ** 2 for g in grids)).reshape(-1)
    vals = ball_point_difference(s, d, r, radius).reshape([order] * d)
    wt = wts[0]
    for i in range(1, d):
        wt = np.multiply.outer(wt, wts[i])
    return float(np.sum(vals * wt))
