import math

import numpy as np
import pytest
from scipy import integrate

from rieszlab.core import (
    CubeDomain,
    ParameterError,
    PointConfiguration,
    RieszKernel,
    SingularPairError,
    UniformMeasure,
)
from rieszlab.potentials import (
    MultipoleCell,
    SignedChargeSystem,
    cube_cube_integral,
    fourier_zero_limit,
    multipole_tail,
    net_potential_integral,
    pairing,
    point_cube_integral,
    potential_h,
)


def unit_interval():
    return CubeDomain(center=(0.5,), side=1.0, dimension=1)


def bcc_probe_cell():
    """Two-point zero-barycenter cell of the body-centered cubic packing."""
    a = 2.0 ** (1.0 / 3.0)
    pts = np.array([[a / 4, a / 4, a / 4], [-a / 4, -a / 4, -a / 4]])
    return SignedChargeSystem(
        PointConfiguration.from_array(pts), np.ones(2),
        UniformMeasure(CubeDomain.centered(a, 3), 1.0)), a, pts


# --- point-cube ---------------------------------------------------------

def test_point_cube_corner_d1():
    k = RieszKernel(0.5, 1)
    assert point_cube_integral(k, unit_interval(), [0.0]) == pytest.approx(2.0, rel=1e-12)


def test_point_cube_center_d1():
    k = RieszKernel(0.5, 1)
    assert point_cube_integral(k, unit_interval(), [0.5]) == pytest.approx(
        2.0 * math.sqrt(2.0), rel=1e-12)


def test_point_cube_center_d2_analytic_and_mc():
    k = RieszKernel(1.0, 2)
    K = CubeDomain(center=(0.5, 0.5), side=1.0, dimension=2)
    val = point_cube_integral(k, K, [0.5, 0.5])
    # polar closed form for the centered unit square
    assert val == pytest.approx(4.0 * math.log(1.0 + math.sqrt(2.0)), rel=1e-10)
    # stratified Monte-Carlo oracle within 3 standard errors
    rng = np.random.default_rng(42)
    n_side = 1000  # 10^6 strata, one sample each, repeated 10 times
    total = []
    for _ in range(10):
        u = (np.indices((n_side, n_side)).reshape(2, -1).T + rng.random((n_side * n_side, 2))) / n_side
        r = np.linalg.norm(u - 0.5, axis=1)
        total.append((r ** -1.0).mean())
    mc = float(np.mean(total))
    se = float(np.std(total, ddof=1) / math.sqrt(len(total)))
    assert abs(val - mc) <= 3.0 * se


def test_cube_cube_d1_exact_reduction():
    k = RieszKernel(0.5, 1)
    K = unit_interval()
    # 2/((1-s)(2-s))
    assert cube_cube_integral(k, K, K) == pytest.approx(8.0 / 3.0, rel=1e-12)


def test_cube_cube_disjoint_vs_adaptive_oracle():
    k = RieszKernel(0.5, 1)
    K1 = unit_interval()
    K2 = CubeDomain(center=(2.5,), side=1.0, dimension=1)
    ref, err = integrate.dblquad(lambda y, x: abs(x - y) ** -0.5, 0, 1, 2, 3, epsabs=1e-12)
    assert cube_cube_integral(k, K1, K2) == pytest.approx(ref, abs=1e-9)


def test_cube_cube_d3_self_vs_mc():
    k = RieszKernel(1.0, 3)
    K = CubeDomain(center=(0.5,) * 3, side=1.0, dimension=3)
    val = cube_cube_integral(k, K, K)
    rng = np.random.default_rng(7)
    chunks = []
    for _ in range(10):
        x = rng.random((300_000, 3))
        y = rng.random((300_000, 3))
        chunks.append(float((np.linalg.norm(x - y, axis=1) ** -1.0).mean()))
    mc = float(np.mean(chunks))
    se = float(np.std(chunks, ddof=1) / math.sqrt(len(chunks)))
    assert abs(val - mc) <= 3.0 * se
    # the unit-cube Coulomb self-energy is a known constant
    assert val == pytest.approx(1.88231264438966, rel=1e-10)


# --- pairing ------------------------------------------------------------

def test_pairing_cube_cube_both_modes():
    k = RieszKernel(0.5, 1)
    mu = UniformMeasure(unit_interval(), 1.0)
    assert pairing(k, mu, mu, off_diagonal=True) == pytest.approx(8.0 / 3.0, rel=1e-10)
    assert pairing(k, mu, mu, off_diagonal=False) == pytest.approx(8.0 / 3.0, rel=1e-10)


def test_pairing_atom_cube():
    k = RieszKernel(0.5, 1)
    atom = PointConfiguration.from_array([[0.5]])
    mu = UniformMeasure(unit_interval(), 1.0)
    assert pairing(k, atom, mu) == pytest.approx(2.0 * math.sqrt(2.0), rel=1e-10)


def test_pairing_atom_atom_modes():
    k = RieszKernel(0.5, 1)
    atom = PointConfiguration.from_array([[0.0]])
    assert pairing(k, atom, atom, off_diagonal=True) == 0.0
    with pytest.raises(SingularPairError):
        pairing(k, atom, atom, off_diagonal=False)


def test_pairing_bilinear_and_symmetric():
    from rieszlab.potentials import CompositeChargeSystem

    rng = np.random.default_rng(3)
    k = RieszKernel(1.1, 2)
    K1 = CubeDomain(center=(0.2, -0.1), side=1.3, dimension=2)
    K2 = CubeDomain(center=(1.5, 0.4), side=0.8, dimension=2)
    nu = SignedChargeSystem(
        PointConfiguration.from_array(rng.uniform(-1, 1, (4, 2))), rng.normal(size=4),
        UniformMeasure(K2, 0.7))
    pts2 = rng.uniform(-1, 1, (3, 2))
    w2 = rng.normal(size=3)
    mu1 = CompositeChargeSystem(
        PointConfiguration.from_array(np.zeros((0, 2)), 2), np.zeros(0), [(K1, 1.0)])
    mu2 = CompositeChargeSystem(
        PointConfiguration.from_array(pts2), w2, [(K1, 0.5)])
    a, b = 0.7, -1.3
    combo = CompositeChargeSystem(
        PointConfiguration.from_array(pts2), b * w2, [(K1, a * 1.0 + b * 0.5)])
    lhs = pairing(k, combo, nu)
    rhs = a * pairing(k, mu1, nu) + b * pairing(k, mu2, nu)
    assert lhs == pytest.approx(rhs, rel=1e-10)
    assert pairing(k, mu1, nu) == pytest.approx(pairing(k, nu, mu1), rel=1e-12)


# --- potential ----------------------------------------------------------

def test_potential_neutral_system_value():
    k = RieszKernel(0.5, 1)
    sys = SignedChargeSystem(
        PointConfiguration.from_array([[0.5]]), np.array([1.0]),
        UniformMeasure(unit_interval(), 1.0))
    expected = math.sqrt(2.0 / 3.0) - (2.0 * math.sqrt(2.0) - 2.0)
    assert potential_h(k, sys, [2.0]) == pytest.approx(expected, rel=1e-12)


def test_potential_pure_background():
    k = RieszKernel(0.5, 1)
    sys = SignedChargeSystem(
        PointConfiguration.from_array(np.zeros((0, 1)), 1), np.zeros(0),
        UniformMeasure(unit_interval(), 1.0))
    assert potential_h(k, sys, [0.0]) == pytest.approx(-2.0, rel=1e-12)


def test_potential_empty_system():
    k = RieszKernel(1.0, 3)
    sys = SignedChargeSystem.empty(3)
    assert potential_h(k, sys, [1.0, 2.0, 3.0]) == 0.0


def test_potential_coincident_raises():
    k = RieszKernel(0.5, 1)
    sys = SignedChargeSystem(PointConfiguration.from_array([[0.5]]), np.array([1.0]))
    with pytest.raises(SingularPairError):
        potential_h(k, sys, [0.5])


# --- multipole tail -----------------------------------------------------

def test_multipole_single_atom_exact():
    k = RieszKernel(1.0, 3)
    cell = MultipoleCell(support_radius=1.0, monopole=1.0, dipole=np.zeros(3),
                         second_moment=0.0, remainder_factor=k.s * (k.s + 2) + 1)
    est, bound = multipole_tail(cell, k, [10.0, 0.0, 0.0])
    assert est == pytest.approx(0.1)
    assert bound == 0.0


def test_multipole_neutral_zero_dipole():
    k = RieszKernel(1.5, 3)
    cell = MultipoleCell(support_radius=2.0, monopole=0.0, dipole=np.zeros(3),
                         second_moment=1.0, remainder_factor=k.s * (k.s + 2) + 1)
    est, bound = multipole_tail(cell, k, [4.0, 0.0, 0.0])
    assert est == 0.0
    assert bound == pytest.approx((1.5 * 3.5 + 1.0) * 4.0 ** (-3.5))


def test_multipole_inside_support_raises():
    k = RieszKernel(1.0, 3)
    cell = MultipoleCell(2.0, 0.0, np.zeros(3), 1.0, 4.0)
    with pytest.raises(ParameterError):
        multipole_tail(cell, k, [1.0, 0.0, 0.0])


def test_multipole_bound_sound_on_random_cells():
    rng = np.random.default_rng(11)
    failures = 0
    for _ in range(100):
        d = int(rng.integers(2, 4))
        s = float(rng.uniform(max(0.2, d - 2) + 0.05, d - 0.1))
        k = RieszKernel(s, d)
        r1 = float(rng.uniform(0.5, 1.5))
        n = int(rng.integers(1, 5))
        pts = rng.uniform(-r1 / 2, r1 / 2, size=(n, d))
        w = rng.normal(size=n)
        bg = UniformMeasure(CubeDomain.centered(r1, d), float(rng.uniform(0.1, 1.0)))
        sys = SignedChargeSystem(PointConfiguration.from_array(pts, d), w, bg,
                                 background_sign=float(rng.choice([-1.0, 1.0])))
        cell = MultipoleCell.from_system(sys, k)
        x = rng.normal(size=d)
        x *= float(rng.uniform(1.05, 5.0)) * cell.support_radius / np.linalg.norm(x)
        est, bound = multipole_tail(cell, k, x)
        exact = potential_h(k, sys, x)
        if abs(est - exact) > bound + 1e-12:
            failures += 1
    assert failures == 0


def test_bcc_cell_tail_within_bound_of_potential():
    k = RieszKernel(1.0, 3)
    sys, a, _ = bcc_probe_cell()
    # make it a proper multipole cell: neutral, zero dipole
    cell = MultipoleCell.from_system(sys, k)
    x = np.array([8.0 * a, 3.0, -2.0])
    est, bound = multipole_tail(cell, k, x)
    exact = potential_h(k, sys, x)
    assert abs(est - exact) <= bound


# --- net potential integral & Fourier limit -----------------------------

def test_net_integral_d1_point_background():
    k = RieszKernel(0.5, 1)
    cell = SignedChargeSystem(
        PointConfiguration.from_array([[0.0]]), np.array([1.0]),
        UniformMeasure(CubeDomain.centered(1.0, 1), 1.0))
    res = net_potential_integral(k, cell)
    assert abs(res.value) < 1e-6


def test_net_integral_symmetrized_8point_d3():
    rng = np.random.default_rng(5)
    k = RieszKernel(1.5, 3)
    r1 = 1.0
    p = rng.uniform(0.05, r1 / 2 - 0.05, size=3)
    signs = np.stack(np.meshgrid(*[[-1, 1]] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = signs * p
    cell = SignedChargeSystem(
        PointConfiguration.from_array(pts), np.ones(8),
        UniformMeasure(CubeDomain.centered(r1, 3), 8.0 / r1 ** 3))
    res = net_potential_integral(k, cell)
    assert abs(res.value) < 1e-4


def test_net_integral_coulomb_gap_matches_newton_closed_form():
    # at s = d-2 the ball values are radius-independent and the integral has
    # the closed form -(2 pi / 3) (sum |p|^2 - int_K |y|^2)
    k = RieszKernel(1.0, 3)
    sys, a, pts = bcc_probe_cell()
    res = net_potential_integral(k, sys)
    q2_atoms = float((pts ** 2).sum())
    q2_cube = a ** 3 * (a * a / 4.0)
    exact = -(2.0 * math.pi / 3.0) * (q2_atoms - q2_cube)
    assert res.value == pytest.approx(exact, rel=1e-9)
    assert float(np.ptp(res.ball_values)) < 1e-9


def test_net_integral_dipole_cell_rejected():
    k = RieszKernel(1.0, 3)
    cell = SignedChargeSystem(
        PointConfiguration.from_array([[0.3, 0, 0], [0.4, 0, 0]]), np.ones(2),
        UniformMeasure(CubeDomain.centered(2.0 ** (1 / 3), 3), 1.0))
    with pytest.raises(ParameterError):
        net_potential_integral(k, cell)


def test_fourier_limit_d1_zero():
    k = RieszKernel(0.5, 1)
    cell = SignedChargeSystem(
        PointConfiguration.from_array([[0.0]]), np.array([1.0]),
        UniformMeasure(CubeDomain.centered(1.0, 1), 1.0))
    res = fourier_zero_limit(k, cell)
    assert not res.diverged
    assert abs(res.value) < 1e-8


def test_fourier_limit_bcc_probe_matches_spatial():
    k = RieszKernel(1.0, 3)
    sys, _, _ = bcc_probe_cell()
    fl = fourier_zero_limit(k, sys)
    sp = net_potential_integral(k, sys)
    assert not fl.diverged
    assert math.copysign(1.0, fl.value) == math.copysign(1.0, sp.value)
    assert abs(fl.value - sp.value) <= 0.1 * abs(sp.value)


def test_fourier_limit_dipole_flagged():
    k = RieszKernel(1.0, 3)
    a = 2.0 ** (1 / 3)
    cell = SignedChargeSystem(
        PointConfiguration.from_array([[0.3, 0, 0], [0.35, 0, 0]]), np.ones(2),
        UniformMeasure(CubeDomain.centered(a, 3), 1.0))
    res = fourier_zero_limit(k, cell)
    assert res.diverged
