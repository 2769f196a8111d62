import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma

from rieszlab.core import (
    CubeDomain,
    ParameterError,
    PeriodicConfiguration,
    PointConfiguration,
    RieszKernel,
    SingularPairError,
    UnsupportedRegimeError,
    extension_constant,
    kernel_eval,
    kernel_regularize,
    kernel_truncate,
)
from rieszlab.core import _lens_kernel, _lens_weight_norm, lens_weight_formula_ratio


def test_kernel_eval_unit_separation():
    k = RieszKernel(2.0, 3)
    assert kernel_eval(k, (0, 0, 0), (1, 0, 0)) == 1.0


def test_kernel_eval_half():
    k = RieszKernel(1.0, 3)
    assert kernel_eval(k, (0, 0, 0), (2, 0, 0)) == 0.5


def test_kernel_eval_singular_pair():
    k = RieszKernel(0.5, 1)
    with pytest.raises(SingularPairError):
        kernel_eval(k, (0.0,), (0.0,))


def test_kernel_symmetry():
    rng = np.random.default_rng(0)
    k = RieszKernel(1.3, 3)
    for _ in range(50):
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert kernel_eval(k, x, y) == kernel_eval(k, y, x)


def test_kernel_invariants():
    with pytest.raises(ParameterError):
        RieszKernel(0.0, 2)
    with pytest.raises(ParameterError):
        RieszKernel(3.0, 3)


def test_truncation_cap_value():
    k = RieszKernel(1.0, 2)
    tk = kernel_truncate(k, 0.5)
    assert tk.capped(np.array([0.25]))[0] == pytest.approx(2.0)
    assert tk.capped(np.array([1.0]))[0] == pytest.approx(1.0)
    assert tk.remainder(np.array([1.0]))[0] == 0.0


def test_truncation_splits_kernel():
    # c_eta + f_eta = c pointwise on a random sample
    rng = np.random.default_rng(1)
    k = RieszKernel(1.4, 2)
    tk = kernel_truncate(k, 0.3)
    r = rng.uniform(1e-3, 2.0, size=10_000)
    total = tk.capped(r) + tk.remainder(r)
    assert np.allclose(total, r ** (-k.s), rtol=1e-15, atol=0)


def test_truncation_parameter_error():
    with pytest.raises(ParameterError):
        kernel_truncate(RieszKernel(1.0, 2), 0.0)


def test_cube_half_open_membership():
    K = CubeDomain(center=(0.5, 0.5), side=1.0, dimension=2)
    assert K.contains([[0.0, 0.0]])[0]
    assert not K.contains([[1.0, 0.5]])[0]  # upper face goes to the neighbor
    assert K.volume == 1.0


def test_periodic_configuration_barycenter_flag():
    cell = CubeDomain.centered(2.0, 2)
    pts = PointConfiguration.from_array([[0.3, 0.1], [-0.3, -0.1]])
    cfg = PeriodicConfiguration(cell, pts, zero_barycenter=True)
    assert cfg.points_per_cell == 2
    bad = PointConfiguration.from_array([[0.3, 0.1], [-0.2, -0.1]])
    with pytest.raises(ParameterError):
        PeriodicConfiguration(cell, bad, zero_barycenter=True)


def test_extension_constant_planar_endpoint():
    assert extension_constant(0.0, 2) == pytest.approx(2 * math.pi)


def test_extension_constant_coulomb_d3():
    # (d-2) * 2 pi^{d/2} / Gamma(d/2) with Gamma(3/2) = sqrt(pi)/2
    assert extension_constant(1.0, 3) == pytest.approx(4 * math.pi)


def test_extension_constant_generic_branch():
    s, d = 2.0, 3
    expected = 2 * s * 2 * math.pi ** (d / 2) * gamma((s + 2 - d) / 2) / gamma((s + 2) / 2)
    assert extension_constant(s, d) == pytest.approx(expected)
    assert expected == pytest.approx(8 * math.pi ** 2)


def test_extension_constant_regime_error():
    with pytest.raises(UnsupportedRegimeError):
        extension_constant(0.5, 3)


# --- ball-overlap regularization ---------------------------------------

@pytest.mark.parametrize("d", [1, 2, 3])
def test_regularize_exact_beyond_alpha(d):
    # direct numerical integration of the superposition vs the closed kernel
    s = 0.4 * d
    k = RieszKernel(s, d)
    alpha = 0.3
    x = np.zeros(d)
    y = np.zeros(d)
    y[0] = 1.0
    val = kernel_regularize(k, alpha, x, y)
    assert val == pytest.approx(1.0, rel=1e-10)
    # oracle: integrate the representation from alpha directly
    kappa = _lens_weight_norm(s, d)
    direct, err = quad(lambda r: _lens_kernel(r, 1.0, d) * kappa * r ** (-s - d - 1.0),
                       alpha, np.inf, limit=200)
    assert direct == pytest.approx(1.0, rel=1e-8)


def test_regularize_alpha_zero_recovers_kernel():
    k = RieszKernel(1.0, 3)
    x, y = np.zeros(3), np.array([1.0, 0, 0])
    assert kernel_regularize(k, 0.0, x, y) == pytest.approx(kernel_eval(k, x, y), rel=1e-8)


@pytest.mark.parametrize("d,s", [(1, 0.5), (2, 1.2), (3, 1.0)])
def test_regularize_monotone_in_alpha(d, s):
    k = RieszKernel(s, d)
    x = np.zeros(d)
    y = np.zeros(d)
    y[0] = 0.2
    alphas = [0.25, 0.4, 0.8, 1.6]
    vals = [kernel_regularize(k, a, x, y) for a in alphas]
    kernel = kernel_eval(k, x, y)
    assert all(v <= kernel + 1e-12 for v in vals)
    assert all(v1 >= v2 - 1e-12 for v1, v2 in zip(vals[:-1], vals[1:]))


def test_regularize_monotone_at_half_alpha():
    # c_{a1}(x) >= c_{a2}(x) for a1 < a2 at |x| = a2/2
    k = RieszKernel(1.0, 2)
    a1, a2 = 0.3, 0.6
    x, y = np.zeros(2), np.array([a2 / 2, 0.0])
    assert kernel_regularize(k, a1, x, y) >= kernel_regularize(k, a2, x, y)


@pytest.mark.parametrize("d,expected", [(2, 2.0 / math.sqrt(math.pi)), (3, 2.0)])
def test_lens_weight_formula_ratio_measured(d, expected):
    # the raw derivative-formula weight needs a dimension-dependent rescale to
    # satisfy the defining superposition identity; the implementation
    # normalizes through the identity and these measured ratios document the
    # correction applied to the literal density formula
    ratio = lens_weight_formula_ratio(1.1 if d == 3 else 0.7, d)
    assert ratio == pytest.approx(expected, rel=1e-6)
