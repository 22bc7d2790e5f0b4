"""Resampling measures Lambda = d*delta_0 + continuous part on (0, 1].

The continuous part is a finite list of atoms plus an optional density.
Densities are either Beta-shaped, ``scale * r**(a-1) * (1-r)**(b-1)``, for
which every integral has a closed form, or arbitrary non-negative callables
handled by quadrature over dyadic pieces.

Convention: a Kingman mass d gives every pair of lineages coalescence rate 2d.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

QUAD_ABS_TOL = 1e-10
_DYADIC_LEVELS = 200


@dataclass(frozen=True)
class BetaDensity:
    """Density ``scale * r**(a-1) * (1-r)**(b-1)`` on (0, 1]."""
    a: float
    b: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta density needs a > 0 and b > 0")
        if self.scale < 0:
            raise ValueError("malformed density: negative scale")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.scale * r ** (self.a - 1) * (1 - r) ** (self.b - 1)

    def moment(self, p, q=0.0):
        """int r**p (1-r)**q density(dr); inf when it diverges at 0."""
        if self.scale == 0:
            return 0.0
        aa = self.a + p
        if aa <= 0:
            return math.inf
        return self.scale * math.exp(special.betaln(aa, self.b + q))


def uniform_density(scale=1.0):
    return BetaDensity(1.0, 1.0, scale)


def _gl_nodes(n=40):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


_GX, _GW = _gl_nodes()


def _dyadic_pieces(f, levels=_DYADIC_LEVELS):
    """Integrals of f over [2^-(m+1), 2^-m] for m = 0..levels-1 (Gauss-Legendre)."""
    lo = 2.0 ** -np.arange(1, levels + 1)
    hi = 2.0 * lo
    r = lo[:, None] + (hi - lo)[:, None] * _GX[None, :]
    vals = f(r)
    return (vals * _GW[None, :]).sum(axis=1) * (hi - lo)


def _integral_near_zero(f):
    """(value, diverges) for int_0^1 f(r) dr, detecting divergence at 0.

    The integral is split dyadically toward 0.  A non-integrable singularity
    shows up as pieces that stop decaying geometrically.
    """
    pieces = _dyadic_pieces(f)
    if not np.all(np.isfinite(pieces)):
        return math.inf, True
    tail = pieces[-20:]
    if tail[0] > 0:
        ratio = (tail[-1] / tail[0]) ** (1.0 / 19) if tail[-1] > 0 else 0.0
        if ratio >= 0.99 and tail[-1] > 1e-300:
            return math.inf, True
    # refine the top piece with adaptive quadrature, which copes with (1-r) singularities
    top, _ = integrate.quad(lambda x: float(f(np.array([x]))[0]), 0.5, 1.0,
                            epsabs=QUAD_ABS_TOL, limit=200)
    return float(top + pieces[1:].sum()), False


@dataclass(frozen=True)
class LambdaMeasure:
    kingman: float = 0.0
    atoms: tuple = ()
    density: object = None  # BetaDensity, callable, or None

    def __post_init__(self):
        if self.kingman < 0:
            raise ValueError("kingman mass must be non-negative")
        atoms = tuple((float(r), float(m)) for r, m in self.atoms)
        for r, m in atoms:
            if not 0 < r <= 1:
                raise ValueError(f"atom location {r} outside (0, 1]")
            if m < 0:
                raise ValueError("atom masses must be non-negative")
        object.__setattr__(self, "atoms", tuple((r, m) for r, m in atoms if m > 0))
        if self.density is not None and not isinstance(self.density, BetaDensity):
            if not callable(self.density):
                raise ValueError("density must be a BetaDensity or a callable")
            probe = np.asarray(self.density(np.linspace(1e-6, 1 - 1e-6, 257)), dtype=float)
            if np.any(probe < 0) or not np.all(np.isfinite(probe)):
                raise ValueError("malformed density: negative or non-finite values")

    # constructors
    @classmethod
    def point(cls, r, m=1.0, kingman=0.0):
        return cls(kingman, ((r, m),))

    @classmethod
    def beta(cls, a, b, scale=1.0, kingman=0.0):
        return cls(kingman, (), BetaDensity(a, b, scale))

    @classmethod
    def zero(cls):
        return cls()

    def __add__(self, other):
        if not isinstance(other, LambdaMeasure):
            return NotImplemented
        if self.density is not None and other.density is not None:
            f, g = self.density, other.density
            dens = lambda r: np.asarray(f(r), float) + np.asarray(g(r), float)  # noqa: E731
        else:
            dens = self.density if self.density is not None else other.density
        return LambdaMeasure(self.kingman + other.kingman, self.atoms + other.atoms, dens)

    # integrals of the continuous part
    def _atom_moment(self, p, q=0.0):
        return float(sum(m * r ** p * (1 - r) ** q for r, m in self.atoms))

    def _density_moment(self, p, q=0.0):
        """(value, diverges) for int r**p (1-r)**q density(dr)."""
        dens = self.density
        if dens is None:
            return 0.0, False
        if isinstance(dens, BetaDensity):
            v = dens.moment(p, q)
            return v, math.isinf(v)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return _integral_near_zero(lambda r: np.asarray(dens(r), float) * r ** p * (1 - r) ** q)

    def moment(self, p, q=0.0):
        """int_(0,1] r**p (1-r)**q Lambda(dr); may be inf."""
        v, div = self._density_moment(p, q)
        return math.inf if div else v + self._atom_moment(p, q)

    @cached_property
    def lam(self):
        return self.moment(0.0)

    @cached_property
    def lam_star(self):
        return self.moment(-2.0)

    @cached_property
    def dust_free(self):
        return math.isinf(self.moment(-1.0))

    @property
    def is_zero(self):
        return self.kingman == 0 and self.lam == 0

    @property
    def pair_rate(self):
        """Total coalescence rate of a pair: lambda + 2d."""
        return self.lam + 2.0 * self.kingman

    def merger_rates(self, b):
        """Array R[i], i = 0..b: rate of events marking exactly i of b lineages.

        R[i] = C(b, i) * lambda_{b,i} for i >= 2 from the continuous part; the
        Kingman part is not included.  Entries 0 and 1 are left at zero.
        """
        b = int(b)
        out = np.zeros(b + 1)
        if b < 2:
            return out
        i = np.arange(2, b + 1)
        logc = special.gammaln(b + 1) - special.gammaln(i + 1) - special.gammaln(b - i + 1)
        for r, m in self.atoms:
            if r == 1.0:
                out[b] += m
                continue
            lp = i * math.log(r) + (b - i) * math.log1p(-r)
            out[2:] += m / r ** 2 * np.exp(logc + lp)
        dens = self.density
        if isinstance(dens, BetaDensity) and dens.scale > 0:
            lb = special.betaln(dens.a + i - 2, dens.b + b - i)
            out[2:] += dens.scale * np.exp(logc + lb)
        elif dens is not None:
            # Gauss-Legendre on dyadic pieces below 1/2 (the integrand is bounded near 0
            # for i >= 2); adaptive quadrature on [1/2, 1] copes with endpoint singularities
            lo = 2.0 ** -np.arange(2, 60)
            hi = 2.0 * lo
            r = (lo[:, None] + (hi - lo)[:, None] * _GX[None, :]).ravel()
            w = ((hi - lo)[:, None] * _GW[None, :]).ravel()
            with np.errstate(divide="ignore", invalid="ignore"):
                base = np.asarray(dens(r), float) * w / r ** 2
                pmf = np.exp(logc[:, None] + i[:, None] * np.log(r) + (b - i)[:, None] * np.log1p(-r))
            out[2:] += np.nan_to_num(pmf @ base)
            for ii in range(2, b + 1):
                top, _ = integrate.quad(
                    lambda x: float(dens(np.array([x]))[0]) * x ** (ii - 2) * (1 - x) ** (b - ii),
                    0.5, 1.0, epsabs=QUAD_ABS_TOL, limit=200)
                out[ii] += math.comb(b, ii) * top
        return out

    def event_rate(self, b):
        """Total rate of events that merge at least two of b lineages (continuous part)."""
        return float(self.merger_rates(b).sum())

    def sample_r(self, rng, size=None):
        """Draw r from Lambda*(dr) / lambda* (continuous part; requires lambda* < inf)."""
        lstar = self.lam_star
        if not (0 < lstar < math.inf):
            raise ValueError("sampling r requires 0 < lambda* < inf")
        n = 1 if size is None else int(np.prod(size))
        w_atoms = np.array([m / r ** 2 for r, m in self.atoms])
        w_dens = lstar - w_atoms.sum()
        probs = np.append(w_atoms, max(w_dens, 0.0)) / lstar
        which = rng.choice(probs.size, size=n, p=probs / probs.sum())
        out = np.empty(n)
        locs = np.array([r for r, _ in self.atoms] + [np.nan])
        out[:] = locs[which]
        from_dens = which == len(self.atoms)
        if np.any(from_dens):
            out[from_dens] = self._sample_density_star(rng, int(from_dens.sum()))
        return out[0] if size is None else out.reshape(size)

    def _sample_density_star(self, rng, n):
        dens = self.density
        if isinstance(dens, BetaDensity):
            return rng.beta(dens.a - 2.0, dens.b, size=n)
        grid = np.concatenate([np.geomspace(1e-12, 0.5, 2048, endpoint=False), np.linspace(0.5, 1, 2049)])
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.nan_to_num(np.asarray(dens(grid), float) / grid ** 2)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(grid))])
        return np.interp(rng.random(n) * cdf[-1], cdf, grid)

    def to_dict(self):
        d = {"kingman": self.kingman, "atoms": [list(a) for a in self.atoms]}
        if isinstance(self.density, BetaDensity):
            dd = self.density
            d["density"] = {"kind": "beta", "a": dd.a, "b": dd.b, "scale": dd.scale}
        elif self.density is not None:
            raise ValueError("callable densities are not serialisable")
        return d

    @classmethod
    def from_dict(cls, d):
        dens = d.get("density")
        if dens is not None:
            kind = dens.get("kind", "beta")
            if kind == "uniform":
                dens = uniform_density(dens.get("scale", 1.0))
            elif kind == "beta":
                dens = BetaDensity(dens["a"], dens["b"], dens.get("scale", 1.0))
            else:
                raise ValueError(f"unknown density kind {kind!r}")
        return cls(float(d.get("kingman", 0.0)), tuple(tuple(a) for a in d.get("atoms", ())), dens)


def total_masses(lam: LambdaMeasure):
    """(d, lambda, lambda*) with lambda* possibly inf."""
    return lam.kingman, lam.lam, lam.lam_star


def coalescence_rate(lam: LambdaMeasure, b, i):
    """lambda_{b,i} = int Lambda*(dr) r**i (1-r)**(b-i) over the continuous part.

    The Kingman supplement 2d for i = 2 is not included.
    """
    b, i = int(b), int(i)
    if not 2 <= i <= b:
        raise ValueError("need 2 <= i <= b")
    return lam.moment(i - 2.0, b - i)


def is_dust_free(lam: LambdaMeasure):
    return lam.dust_free


def as_measure(x):
    if isinstance(x, LambdaMeasure):
        return x
    if x is None:
        return LambdaMeasure()
    if isinstance(x, dict):
        return LambdaMeasure.from_dict(x)
    raise TypeError(f"cannot interpret {x!r} as a Lambda measure")
