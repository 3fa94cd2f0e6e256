"""Double-well potentials, their derivatives and the convex/Lipschitz split.

Every potential carries a monotone part ``beta`` and a Lipschitz part ``pi``
with ``f' = beta + pi``.  The time stepper treats ``beta`` implicitly and
``pi`` explicitly, so the split is part of the numerical scheme, not only a
bookkeeping device.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

from .exceptions import DomainMismatchError, DomainViolationError

KINDS = ("regular", "logarithmic", "polynomial")


@dataclass(frozen=True)
class Potential:
    """A C^3 double-well potential on the open interval ``(r_minus, r_plus)``.

    Use the :func:`regular`, :func:`logarithmic` and :func:`polynomial`
    constructors rather than instantiating directly.  ``shift`` is added to
    the raw formula so that the stored ``f`` is nonnegative; derivatives are
    unaffected.
    """

    kind: str
    r_minus: float = -np.inf
    r_plus: float = np.inf
    c: float = 1.0
    coefficients: tuple = ()
    shift: float = 0.0
    lipschitz_const: float = field(default=0.0)

    # -- evaluation -----------------------------------------------------
    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if not np.all((r > self.r_minus) & (r < self.r_plus)):
            bad = r[~((r > self.r_minus) & (r < self.r_plus))]
            raise DomainViolationError(
                f"{self.kind} potential evaluated at {bad.ravel()[:3]} outside "
                f"({self.r_minus}, {self.r_plus})"
            )
        return r

    def eval(self, r, order: int = 0):
        """Value of ``f`` or one of its first three derivatives at ``r``."""
        if order not in (0, 1, 2, 3):
            raise ValueError(f"order must be 0..3, got {order}")
        r = self._check(r)
        out = self._raw(r, order)
        if order == 0:
            out = out + self.shift
        return out if out.ndim else float(out)

    def _raw(self, r, order):
        if self.kind == "regular":
            return (
                0.25 * (r**2 - 1.0) ** 2,
                r**3 - r,
                3.0 * r**2 - 1.0,
                6.0 * r,
            )[order]
        if self.kind == "logarithmic":
            c = self.c
            if order == 0:
                return (1 + r) * np.log1p(r) + (1 - r) * np.log1p(-r) - c * r**2
            if order == 1:
                return np.log1p(r) - np.log1p(-r) - 2.0 * c * r
            if order == 2:
                return 2.0 / (1.0 - r**2) - 2.0 * c
            return 4.0 * r / (1.0 - r**2) ** 2
        coef = np.asarray(self.coefficients, dtype=float)
        return P.polyval(r, P.polyder(coef, order) if order else coef)

    def f(self, r):
        return self.eval(r, 0)

    def df(self, r):
        return self.eval(r, 1)

    def d2f(self, r):
        return self.eval(r, 2)

    # -- split ------------------------------------------------------------
    def beta(self, r):
        r = self._check(r)
        if self.kind == "logarithmic":
            out = np.log1p(r) - np.log1p(-r)
        else:
            out = self._raw(r, 1) + self.lipschitz_const * r
        return out if out.ndim else float(out)

    def beta_prime(self, r):
        r = self._check(r)
        if self.kind == "logarithmic":
            out = 2.0 / (1.0 - r**2)
        else:
            out = self._raw(r, 2) + self.lipschitz_const
        return out if out.ndim else float(out)

    def pi(self, r):
        r = np.asarray(r, dtype=float)
        out = -self.lipschitz_const * r
        return out if out.ndim else float(out)

    def pi_prime(self, r):
        r = np.asarray(r, dtype=float)
        out = np.full_like(r, -self.lipschitz_const)
        return out if out.ndim else float(out)

    def split(self) -> tuple[Callable, Callable, float]:
        """Return ``(beta, pi, lipschitz_const)`` with ``beta + pi = f'``."""
        return self.beta, self.pi, self.lipschitz_const

    @property
    def is_singular(self) -> bool:
        return bool(np.isfinite(self.r_minus) or np.isfinite(self.r_plus))

    def with_domain(self, r_minus: float, r_plus: float) -> "Potential":
        """Same formula restricted to a smaller open interval."""
        if r_minus < self.r_minus or r_plus > self.r_plus or not r_minus < 0 < r_plus:
            raise DomainMismatchError(f"({r_minus}, {r_plus}) is not a subdomain containing 0")
        return Potential(
            kind=self.kind,
            r_minus=r_minus,
            r_plus=r_plus,
            c=self.c,
            coefficients=self.coefficients,
            shift=self.shift,
            lipschitz_const=self.lipschitz_const,
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "r_minus": self.r_minus, "r_plus": self.r_plus}
        if self.kind == "logarithmic":
            out["c"] = self.c
        if self.kind == "polynomial":
            out["coefficients"] = list(self.coefficients)
        return out


def regular() -> Potential:
    """``f(r) = (r^2 - 1)^2 / 4`` on the real line; ``beta = r^3``, ``pi = -r``."""
    return Potential(kind="regular", lipschitz_const=1.0)


def logarithmic(c: float = 1.0) -> Potential:
    """Flory-Huggins potential on ``(-1, 1)`` with ``pi(r) = -2 c r``."""
    if c <= 0:
        raise ValueError("logarithmic potential needs c > 0")
    pot = Potential(kind="logarithmic", r_minus=-1.0, r_plus=1.0, c=float(c), lipschitz_const=2.0 * c)
    if c <= 1.0:
        return pot
    # f' has a unique positive root for c > 1; the minimum is symmetric
    root = brentq(lambda r: np.log1p(r) - np.log1p(-r) - 2.0 * c * r, 1e-12, 1.0 - 1e-15)
    fmin = float(pot._raw(np.asarray(root), 0))
    return Potential(
        kind="logarithmic", r_minus=-1.0, r_plus=1.0, c=float(c), shift=-fmin, lipschitz_const=2.0 * c
    )


def polynomial(coefficients) -> Potential:
    """Polynomial potential from ascending coefficients ``f = sum a_k r^k``.

    The degree must be even with a positive leading coefficient so that
    ``f''`` is bounded from below.
    """
    coef = np.trim_zeros(np.asarray(coefficients, dtype=float), "b")
    deg = coef.size - 1
    if deg < 2 or deg % 2 or coef[-1] <= 0:
        raise ValueError("polynomial potential needs even degree >= 2 and positive leading coefficient")
    d2 = P.polyder(coef, 2)
    crit = [r.real for r in P.polyroots(P.polyder(d2)) if abs(r.imag) < 1e-12] if d2.size > 1 else []
    d2min = min([P.polyval(r, d2) for r in crit] + [P.polyval(0.0, d2) if d2.size == 1 else np.inf])
    lip = max(0.0, -float(d2min))
    crit_f = [r.real for r in P.polyroots(P.polyder(coef)) if abs(r.imag) < 1e-12]
    fmin = min(P.polyval(r, coef) for r in crit_f)
    return Potential(
        kind="polynomial",
        coefficients=tuple(coef.tolist()),
        shift=max(0.0, -float(fmin)),
        lipschitz_const=lip,
    )


def from_spec(kind: str, **params) -> Potential:
    """Construct a potential from a kind name and keyword parameters."""
    if kind == "regular":
        pot = regular()
    elif kind == "logarithmic":
        pot = logarithmic(params.get("c", 1.0))
    elif kind in ("polynomial", "custom-polynomial"):
        pot = polynomial(params["coefficients"])
    else:
        raise ValueError(f"unknown potential kind {kind!r}; expected one of {KINDS}")
    if "r_minus" in params or "r_plus" in params:
        pot = pot.with_domain(params.get("r_minus", pot.r_minus), params.get("r_plus", pot.r_plus))
    return pot


@dataclass(frozen=True)
class CompatReport:
    """Sampled certificate for ``|f'(r)| <= eta |f_Gamma'(r)| + C``."""

    eta: float
    C: float
    holds: bool
    worst_ratio_location: float


def _sample_points(pot: Potential, samples: int, margin: float, window: float) -> np.ndarray:
    lo = pot.r_minus + margin if np.isfinite(pot.r_minus) else -window
    hi = pot.r_plus - margin if np.isfinite(pot.r_plus) else window
    return np.linspace(lo, hi, samples)


def check_compatibility(
    f: Potential,
    f_gamma: Potential,
    samples: int = 10_001,
    cap: float = 10.0,
    margin: float = 1e-6,
    window: float = 10.0,
) -> CompatReport:
    """Grid search for the smallest sampled constant ``C`` over ``eta = 2^-6 .. 2^6``.

    Among the ``eta`` values attaining the minimal ``C`` the smallest is
    reported.  Infinite domain ends are sampled on ``[-window, window]``.
    """
    if (f.r_minus, f.r_plus) != (f_gamma.r_minus, f_gamma.r_plus):
        raise DomainMismatchError(
            f"potentials must share their domain: ({f.r_minus}, {f.r_plus}) vs "
            f"({f_gamma.r_minus}, {f_gamma.r_plus})"
        )
    r = _sample_points(f, samples, margin, window)
    a = np.abs(f.df(r))
    b = np.abs(f_gamma.df(r))
    best = None
    for eta in 2.0 ** np.arange(-6, 7):
        gap = a - eta * b
        c_val = max(0.0, float(gap.max()))
        if best is None or c_val < best[1] - 1e-15:
            best = (float(eta), c_val, float(r[int(np.argmax(gap))]))
    eta, c_val, loc = best
    return CompatReport(eta=eta, C=c_val, holds=c_val <= cap, worst_ratio_location=loc)
