"""Coefficient families c_k, mu_k, lambda_k and their asymptotic algebra.

A family is either an explicit list (with a constant tail value beyond the
list), a polynomial ``amp * k**a * (log k)**p`` or an exponential
``base**k * amp * k**a * (log k)**p``.  At k = 0 the polynomial part equals
``amp`` and the log factor is taken as 1 for k <= 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

KINDS = ("explicit", "polynomial", "exponential")


class Asym(NamedTuple):
    """Leading behaviour ``amp * base**k * k**a * (log k)**p``."""
    base: float
    a: float
    p: float
    amp: float = 1.0


def _cmp(x, y, tol=1e-12):
    if abs(x - y) <= tol * max(1.0, abs(x), abs(y)):
        return 0
    return 1 if x > y else -1


def asym_ratio(x: Asym, y: Asym) -> Asym:
    return Asym(x.base / y.base, x.a - y.a, x.p - y.p, x.amp / y.amp)


def asym_product(x: Asym, y: Asym) -> Asym:
    return Asym(x.base * y.base, x.a + y.a, x.p + y.p, x.amp * y.amp)


def asym_limit(x: Asym) -> float:
    """lim_k of the asymptotic form (0, a positive constant, or inf)."""
    for s in (_cmp(x.base, 1.0), _cmp(x.a, 0.0), _cmp(x.p, 0.0)):
        if s > 0:
            return math.inf
        if s < 0:
            return 0.0
    return x.amp


def series_diverges(x: Asym) -> bool:
    """Whether sum_k amp * base**k * k**a * (log k)**p diverges."""
    sb = _cmp(x.base, 1.0)
    if sb != 0:
        return sb > 0
    sa = _cmp(x.a, -1.0)
    if sa != 0:
        return sa > 0
    return _cmp(x.p, -1.0) >= 0


def asym_cumsum(x: Asym) -> tuple[Asym, bool]:
    """Asymptotic form of the partial sums and whether they diverge.

    A convergent series is represented by a positive constant.  The log-log
    boundary (a = -1, p = -1) is reported as divergent with a constant form,
    which is adequate for the regime tests that consume it.
    """
    if not series_diverges(x):
        return Asym(1.0, 0.0, 0.0, 1.0), False
    sb = _cmp(x.base, 1.0)
    if sb > 0:
        return Asym(x.base, x.a, x.p, x.amp * x.base / (x.base - 1.0)), True
    if _cmp(x.a, -1.0) > 0:
        return Asym(1.0, x.a + 1.0, x.p, x.amp / (x.a + 1.0)), True
    if _cmp(x.p, -1.0) > 0:
        return Asym(1.0, 0.0, x.p + 1.0, x.amp / (x.p + 1.0)), True
    return Asym(1.0, 0.0, 0.0, x.amp), True


def _poly_part(k, amp, a, p):
    k = np.asarray(k, dtype=float)
    out = np.full(k.shape, float(amp))
    big = k >= 1
    if a != 0.0:
        out[big] *= k[big] ** a
    if p != 0.0:
        lg = k > 1
        out[lg] *= np.log(k[lg]) ** p
    return out


def _log_poly_part(k, amp, a, p):
    k = np.asarray(k, dtype=float)
    out = np.full(k.shape, math.log(amp))
    big = k >= 1
    if a != 0.0:
        out[big] += a * np.log(k[big])
    if p != 0.0:
        lg = k > 1
        out[lg] += p * np.log(np.log(k[lg]))
    return out


@dataclass(frozen=True)
class CoefficientFamily:
    kind: str = "polynomial"
    amplitude: float = 1.0
    index: float = 0.0
    log_power: float = 0.0
    base: float = 1.0
    values: tuple = ()
    tail: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == "explicit":
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            if any(v < 0 for v in self.values) or self.tail < 0:
                raise ValueError("explicit coefficients must be non-negative")
        else:
            if not self.amplitude > 0:
                raise ValueError("family amplitude must be positive")
            if self.kind == "exponential" and not self.base > 0:
                raise ValueError("exponential base must be positive")

    # constructors
    @classmethod
    def poly(cls, a=0.0, amplitude=1.0, p=0.0):
        return cls("polynomial", float(amplitude), float(a), float(p))

    @classmethod
    def exp(cls, base, a=0.0, amplitude=1.0, p=0.0):
        return cls("exponential", float(amplitude), float(a), float(p), float(base))

    @classmethod
    def explicit(cls, values, tail=0.0):
        return cls("explicit", values=tuple(values), tail=float(tail))

    @classmethod
    def zero(cls):
        return cls("explicit")

    # evaluation
    def __call__(self, k):
        k = np.asarray(k)
        if self.kind == "explicit":
            vals = np.asarray(self.values + (self.tail,), dtype=float)
            idx = np.minimum(k.astype(np.int64), len(self.values))
            return vals[idx]
        out = _poly_part(k, self.amplitude, self.index, self.log_power)
        if self.kind == "exponential":
            with np.errstate(over="ignore"):
                out = out * np.power(self.base, np.asarray(k, dtype=float))
        return out

    def log_value(self, k):
        k = np.asarray(k)
        if self.kind == "explicit":
            with np.errstate(divide="ignore"):
                return np.log(self(k))
        out = _log_poly_part(k, self.amplitude, self.index, self.log_power)
        if self.kind == "exponential":
            out = out + np.asarray(k, dtype=float) * math.log(self.base)
        return out

    def head(self, n):
        return self(np.arange(int(n)))

    @property
    def is_zero(self):
        return self.kind == "explicit" and self.tail == 0 and not any(self.values)

    @property
    def finite_support(self):
        return self.kind == "explicit" and self.tail == 0

    def support_length(self):
        """Number of leading levels up to the last nonzero entry (explicit only)."""
        nz = [i for i, v in enumerate(self.values) if v > 0]
        return nz[-1] + 1 if nz else 0

    def growth(self):
        """limsup (1/k) log value_k."""
        if self.kind == "explicit":
            return 0.0 if self.tail > 0 else -math.inf
        if self.kind == "exponential":
            return math.log(self.base)
        return 0.0

    def asymptotic(self):
        """Leading asymptotic form, or None for an eventually-zero sequence."""
        if self.kind == "explicit":
            return Asym(1.0, 0.0, 0.0, self.tail) if self.tail > 0 else None
        base = self.base if self.kind == "exponential" else 1.0
        return Asym(base, self.index, self.log_power, self.amplitude)

    def reciprocal_summable(self):
        """Whether sum_k 1/value_k < inf."""
        asym = self.asymptotic()
        if asym is None:
            return False
        return not series_diverges(Asym(1.0 / asym.base, -asym.a, -asym.p, 1.0 / asym.amp))

    def reciprocal_tail(self, k0):
        """Estimate of sum_{k >= k0} 1/value_k via the integral from k0 - 1/2."""
        return _reciprocal_tail(self, k0)

    def describe(self):
        if self.kind == "explicit":
            return f"explicit{list(self.values)} tail={self.tail:g}"
        s = f"{self.amplitude:g}*k^{self.index:g}*log(k)^{self.log_power:g}"
        if self.kind == "exponential":
            s = f"{self.base:g}^k*" + s
        return s


@dataclass(frozen=True)
class FamilySum:
    """value_k = sum_i weight_i * family_i(k + shift_i); used for effective coefficients."""
    parts: tuple = field(default_factory=tuple)

    def __call__(self, k):
        k = np.asarray(k)
        out = np.zeros(k.shape, dtype=float)
        for fam, w, s in self.parts:
            out = out + w * fam(k + s)
        return out

    def log_value(self, k):
        k = np.asarray(k)
        terms = [fam.log_value(k + s) + math.log(w) for fam, w, s in self.parts if w > 0]
        if not terms:
            return np.full(k.shape, -np.inf)
        with np.errstate(invalid="ignore"):
            return special.logsumexp(np.stack(terms), axis=0)

    def head(self, n):
        return self(np.arange(int(n)))

    @property
    def finite_support(self):
        return all(f.finite_support or w == 0 for f, w, _ in self.parts)

    @property
    def is_zero(self):
        return all(f.is_zero or w == 0 for f, w, _ in self.parts)

    def support_length(self):
        n = 0
        for f, w, s in self.parts:
            if w != 0:
                n = max(n, f.support_length() - s)
        return max(n, 0)

    def growth(self):
        return max((f.growth() for f, w, _ in self.parts if w != 0), default=-math.inf)

    def asymptotic(self):
        forms = [f.asymptotic() for f, w, _ in self.parts if w != 0]
        forms = [a for a in forms if a is not None]
        if not forms:
            return None
        best = forms[0]
        for a in forms[1:]:
            if asym_limit(asym_ratio(a, best)) == math.inf:
                best = a
        return best

    def reciprocal_summable(self):
        return any(f.reciprocal_summable() for f, w, _ in self.parts if w != 0)

    def reciprocal_tail(self, k0):
        return _reciprocal_tail(self, k0)


def _reciprocal_tail(fam, k0):
    if not fam.reciprocal_summable():
        return math.inf
    lo = max(float(k0) - 0.5, 2.0)

    def g(x):
        with np.errstate(over="ignore"):
            return float(1.0 / fam(np.array([x]))[0])

    if fam.growth() > 0:
        val, _ = integrate.quad(g, lo, np.inf, limit=400)
        return val
    # x = e^u tames slowly decaying log factors; past e^700 use the leading form
    asym = fam.asymptotic()

    def h(u):
        if u < 700:
            return math.exp(u) * g(math.exp(u))
        return math.exp(u * (1 - asym.a) - asym.p * math.log(u)) / asym.amp

    val, _ = integrate.quad(h, math.log(lo), np.inf, limit=400)
    return val


def effective_family(c, lam, N):
    """c-bar_k = c_k + lam_{k+1} / N."""
    c = as_family(c)
    lam = as_family(lam)
    return FamilySum(((c, 1.0, 0), (lam, 1.0 / N, 1)))


def as_family(x):
    """Families pass through; a scalar is the constant family; sequences are explicit lists."""
    if isinstance(x, (CoefficientFamily, FamilySum)):
        return x
    if np.ndim(x) == 0:
        x = float(x)
        return CoefficientFamily.poly(0.0, amplitude=x) if x > 0 else CoefficientFamily.zero()
    return CoefficientFamily.explicit(list(np.asarray(x, dtype=float).ravel()))
