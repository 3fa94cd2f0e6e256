import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chcontrol.exceptions import DomainMismatchError, DomainViolationError
from chcontrol.potential import check_compatibility, from_spec, logarithmic, polynomial, regular


def test_regular_values():
    f = regular()
    assert f.eval(0.0, 0) == pytest.approx(0.25)
    assert f.eval(1.0, 1) == 0.0
    assert f.eval(0.3, 1) == pytest.approx(-0.273)


def test_logarithmic_values():
    f = logarithmic(1.0)
    assert f.eval(0.0, 1) == 0.0
    assert f.eval(0.0, 2) == pytest.approx(0.0, abs=1e-15)
    assert logarithmic(0.5).eval(0.0, 2) == pytest.approx(2 - 2 * 0.5)


@pytest.mark.parametrize("r", [1.0, -1.0, 1.5, np.nan])
def test_log_domain_violation(r):
    with pytest.raises(DomainViolationError):
        logarithmic().eval(r, 1)


def test_bad_order():
    with pytest.raises(ValueError):
        regular().eval(0.0, 4)


@pytest.mark.parametrize("pot", [regular(), logarithmic(1.0), logarithmic(1.5), polynomial([0.25, 0, -0.5, 0, 0.25])])
def test_split_recomposition_and_monotone(pot):
    lo = max(pot.r_minus, -3.0) + 1e-6
    hi = min(pot.r_plus, 3.0) - 1e-6
    r = np.linspace(lo, hi, 10_000)
    beta, pi, lip = pot.split()
    np.testing.assert_allclose(beta(r) + pi(r), pot.df(r), rtol=0, atol=1e-12 * max(1, np.abs(pot.df(r)).max()))
    assert np.all(np.diff(beta(r)) >= 0)
    assert np.all(np.abs(pot.pi_prime(r)) <= lip + 1e-15)


def test_split_constants():
    assert regular().lipschitz_const == 1.0
    assert regular().beta(2.0) == pytest.approx(8.0)
    assert logarithmic(0.7).lipschitz_const == pytest.approx(1.4)
    assert logarithmic(1.0).beta(0.5) == pytest.approx(np.log(3.0))


@pytest.mark.parametrize("pot", [regular(), logarithmic(1.0), polynomial([0.0, 0.1, -1.0, 0.0, 1.0])])
def test_derivatives_match_finite_differences(pot):
    rng = np.random.default_rng(0)
    lo = max(pot.r_minus, -2.0) + 1e-3
    hi = min(pot.r_plus, 2.0) - 1e-3
    r = rng.uniform(lo + 1e-5, hi - 1e-5, 100)
    h = 1e-5
    # central differences lose ~ (h / d)^2 relatively at distance d from a singular end
    dist = np.minimum(r - pot.r_minus, pot.r_plus - r)
    allowance = 1e-6 + 10 * (h / dist) ** 2
    for k in (1, 2, 3):
        fd = (pot.eval(r + h, k - 1) - pot.eval(r - h, k - 1)) / (2 * h)
        exact = pot.eval(r, k)
        assert np.all(np.abs(fd - exact) <= allowance * np.maximum(1.0, np.abs(exact)))


def test_log_derivative_diverges():
    f = logarithmic(1.0)
    vals = [abs(f.df(1 - 10.0**-k)) for k in range(2, 9)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    vals = [abs(f.df(-1 + 10.0**-k)) for k in range(2, 9)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("c", [0.5, 1.0, 1.3, 2.0])
def test_log_shift_makes_f_nonnegative(c):
    f = logarithmic(c)
    r = np.linspace(-1 + 1e-6, 1 - 1e-6, 20001)
    assert f.f(r).min() >= -1e-12


def test_polynomial_validation():
    with pytest.raises(ValueError):
        polynomial([0.0, 1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        polynomial([0.0, 0.0, -1.0])


def test_from_spec():
    assert from_spec("regular").kind == "regular"
    assert from_spec("logarithmic", c=0.8).c == 0.8
    assert from_spec("custom-polynomial", coefficients=[0, 0, 1]).kind == "polynomial"
    with pytest.raises(ValueError):
        from_spec("obstacle")


def test_compat_identical():
    rep = check_compatibility(regular(), regular())
    assert rep.holds and rep.eta == 1.0 and rep.C == 0.0


def test_compat_regular_bulk_log_boundary():
    f = regular().with_domain(-1.0, 1.0)
    assert check_compatibility(f, logarithmic(1.0)).holds


def test_compat_log_bulk_regular_boundary_fails():
    g = regular().with_domain(-1.0, 1.0)
    rep = check_compatibility(logarithmic(1.0), g)
    assert not rep.holds
    assert abs(rep.worst_ratio_location) > 0.99


def test_compat_domain_mismatch():
    with pytest.raises(DomainMismatchError):
        check_compatibility(regular(), logarithmic())


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-0.999, max_value=0.999), st.floats(min_value=0.1, max_value=3.0))
def test_log_odd_symmetry(r, c):
    f = logarithmic(c)
    assert f.df(-r) == pytest.approx(-f.df(r), abs=1e-12)
    assert f.f(-r) == pytest.approx(f.f(r), abs=1e-12)


def test_compat_report_bound_holds_on_samples():
    f = regular().with_domain(-1.0, 1.0)
    g = logarithmic(1.0)
    rep = check_compatibility(f, g, samples=2001)
    r = np.linspace(-1 + 1e-6, 1 - 1e-6, 2001)
    assert np.all(np.abs(f.df(r)) <= rep.eta * np.abs(g.df(r)) + rep.C + 1e-12)
