"""Single-colony McKean-Vlasov dynamics with immigration toward theta.

The colony z follows drift c(theta - z), Fleming-Viot noise with covariance
2 d_eff (diag z - z z^T) and jumps z <- (1-r) z + r e_a (a ~ z) at intensity
Lambda*(dr).  Equilibrium moments come from the dual {0,*} coalescent.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .coalescent import EXACT_CAP
from .forward import _split_measure, colony_jumps, fv_noise, project_simplex
from .lambda_measure import LambdaMeasure, as_measure
from .rng import as_generator

BURN_IN_FACTOR = 10.0
STICK_TOL = 1e-12
# a row this many noise variances away from every face cannot leave the
# simplex in one Gaussian step unless the draw exceeds 8 sigma
GAUSS_SAFE = 64.0


@dataclass(frozen=True)
class MkvParams:
    c: float
    d: float
    lam: LambdaMeasure
    theta: tuple

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.d < 0 or not math.isfinite(self.d):
            raise ValueError("d must be finite and non-negative")
        th = np.asarray(self.theta, dtype=float)
        if np.any(th < 0) or abs(th.sum() - 1) > 1e-12:
            raise ValueError("theta must be a probability vector")
        object.__setattr__(self, "theta", tuple(th))
        object.__setattr__(self, "lam", as_measure(self.lam))

    @property
    def q(self):
        return len(self.theta)

    @property
    def pair_rate(self):
        """Coalescence rate of two lineages at 0: lambda + 2d."""
        return self.lam.lam + 2.0 * self.d

    def variance_factor(self):
        """E[var_Z(psi)] / var_theta(psi) at equilibrium: 2c / (2c + lambda + 2d)."""
        return 2.0 * self.c / (2.0 * self.c + self.pair_rate)


@dataclass
class MkvPath:
    times: np.ndarray
    states: np.ndarray  # (reps, len(times), q)
    projections: int = 0


class _MkvStepper:
    def __init__(self, c, d, lam, eps):
        self.c = float(c)
        small, big = _split_measure(as_measure(lam), eps)
        self.d_eff = float(d) + 0.5 * small
        self.big = big
        self.rate = big.lam_star if big.lam_star > 0 else 0.0
        self.projections = 0

    def step(self, Z, theta, dt, rng):
        e = math.exp(-self.c * dt)
        Z *= e
        Z += (1 - e) * theta
        if self.d_eff > 0:
            fv_step(Z, 2.0 * self.d_eff * dt, rng)
        if self.rate > 0:
            colony_jumps(Z, self.rate * dt, self.big, rng)
        if self.d_eff > 0:
            self.projections += project_simplex(Z)


def fv_step(Z, var_dt, rng):
    """Fleming-Viot step with conditional covariance var_dt (diag z - z z^T), in place.

    Interior rows take the Gaussian Euler step.  Rows near a face are
    resampled from Dirichlet(alpha z) with alpha + 1 = 1/var_dt: same
    conditional mean and covariance, but it never leaves the simplex, so
    no clipping bias builds up when theta sits close to a face.
    """
    if not 0 < var_dt < 1:
        raise ValueError("2 d dt must lie in (0, 1); reduce dt")
    zmin = np.minimum(Z[:, 0], Z[:, 1]) if Z.shape[-1] == 2 else Z.min(axis=-1)
    near = np.flatnonzero(zmin < GAUSS_SAFE * var_dt)
    Zn = Z[near]
    fv_noise(Z, math.sqrt(var_dt), rng)
    if near.size:
        G = rng.standard_gamma((1.0 / var_dt - 1.0) * Zn)
        Z[near] = G / G.sum(axis=-1, keepdims=True)


def _check_eps(dt, eps):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")


def simulate_mkv(p, z0, horizon, dt=1e-3, eps=1e-3, reps=1, times=None, rng=None):
    """Run ``reps`` independent colonies from z0, recording at ``times``."""
    _check_eps(dt, eps)
    z0 = np.asarray(z0, dtype=float)
    if np.any(z0 < 0) or abs(z0.sum() - 1) > 1e-9:
        raise ValueError("z0 must lie on the simplex")
    times = np.array([horizon] if times is None else times, dtype=float)
    rng = as_generator(rng)
    st = _MkvStepper(p.c, p.d, p.lam, eps)
    theta = np.asarray(p.theta)
    Z = np.tile(z0, (reps, 1))
    out = np.empty((reps, times.size, z0.size))
    t = 0.0
    for g, tg in enumerate(times):
        for _ in range(int(round((tg - t) / dt))):
            st.step(Z, theta, dt, rng)
        t = tg
        out[:, g] = Z
    return MkvPath(times, out, st.projections)


# equilibrium moments through the dual

def _merger_table(lam, d, n):
    """rates[b][i] = lambda_{b,i} + 2d 1{i=2} for a *given* i-subset of b families."""
    out = {}
    for b in range(2, n + 1):
        R = lam.merger_rates(b)
        per = np.array([R[i] / math.comb(b, i) if i >= 2 else 0.0 for i in range(b + 1)])
        per[2] += 2.0 * d
        out[b] = per
    return out


def equilibrium_moment(p, phi, n, cap=EXACT_CAP):
    """E_nu[prod_i <Z, phi_i>] for the equilibrium nu of the colony.

    ``phi`` is one vector over types (the n-th moment of <Z, phi>) or a list
    of n vectors (mixed moment).  The n dual lineages start at 0; families
    leave for * at rate c each and merge at rates lambda_{b,i} + 2d 1{i=2};
    a family holding the individuals S contributes <theta, prod_{i in S} phi_i>.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if n > cap:
        raise ValueError(f"n = {n} exceeds the exact cap {cap}")
    theta = np.asarray(p.theta)
    phis = np.asarray(phi, dtype=float)
    phis = np.tile(phis, (n, 1)) if phis.ndim == 1 else phis
    if phis.shape != (n, p.q):
        raise ValueError("need n test functions over the type space")
    rates = _merger_table(p.lam, p.d, n)
    c = p.c

    def payoff(S):
        return float(theta @ np.prod(phis[list(S)], axis=0))

    @lru_cache(maxsize=None)
    def V(state):
        # state: sorted tuple of families (each a sorted tuple of individuals)
        b = len(state)
        if b == 0:
            return 1.0
        total = b * c
        acc = 0.0
        for j, fam in enumerate(state):
            acc += c * payoff(fam) * V(state[:j] + state[j + 1:])
        if b >= 2:
            per = rates[b]
            for i in range(2, b + 1):
                if per[i] == 0:
                    continue
                for J in itertools.combinations(range(b), i):
                    merged = tuple(sorted(x for j in J for x in state[j]))
                    rest = tuple(f for j, f in enumerate(state) if j not in J)
                    acc += per[i] * V(tuple(sorted(rest + (merged,))))
                    total += per[i]
        return acc / total

    return V(tuple((i,) for i in range(n)))


# equilibrium sampling

def sample_equilibrium(p, mode="long-run", reps=1, rng=None, dt=1e-3, eps=1e-3,
                       burn_in=None, samples_per_path=1, spacing=None, z0=None):
    """Samples from the equilibrium of the colony.

    long-run: start at z0 (default theta), run for ``burn_in`` (default 10/c),
    then take ``samples_per_path`` states ``spacing`` apart; returns an array
    (reps, samples_per_path, q) or (reps, q) when one sample is taken.
    stick-breaking (Lambda = 0 only): sum_i W_i prod_{j<i}(1 - W_j) delta_{U_i}
    with W_i ~ Beta(1, c/d) and U_i ~ theta; about (c/d) log(1/STICK_TOL)
    sticks are drawn, so this mode is slow when d << c.
    """
    rng = as_generator(rng)
    if mode == "stick-breaking":
        if not p.lam.is_zero:
            raise ValueError("stick-breaking needs Lambda = 0; the weight law for Lambda != 0 is not known")
        return _stick_breaking(p, reps, rng)
    if mode != "long-run":
        raise ValueError(f"unknown mode {mode!r}")
    _check_eps(dt, eps)
    burn = BURN_IN_FACTOR / p.c if burn_in is None else float(burn_in)
    spacing = burn if spacing is None else float(spacing)
    theta = np.asarray(p.theta)
    start = theta if z0 is None else np.asarray(z0, dtype=float)
    times = burn + spacing * np.arange(samples_per_path)
    path = simulate_mkv(p, start, times[-1], dt, eps, reps, times, rng)
    return path.states[:, 0] if samples_per_path == 1 else path.states


def _stick_breaking(p, reps, rng):
    theta = np.asarray(p.theta)
    q = theta.size
    out = np.zeros((reps, q))
    if p.d == 0:
        out[:] = theta
        return out
    alpha = p.c / p.d
    resid = np.ones(reps)
    live = np.arange(reps)
    while live.size:
        W = rng.beta(1.0, alpha, size=live.size)
        U = rng.choice(q, size=live.size, p=theta)
        out[live, U] += resid[live] * W
        resid[live] *= 1 - W
        live = live[resid[live] >= STICK_TOL]
    # the leftover stick (< STICK_TOL) goes to theta in expectation
    out += resid[:, None] * theta[None, :]
    return out


# interaction chain

@dataclass
class InteractionChainSample:
    j: int
    states: np.ndarray  # (reps, j + 2, q): M_{-(j+1)}, ..., M_0
    params: list = field(default_factory=list)  # (c_k, d_k, Lambda_k) for k = j..0

    def mean(self, psi):
        """E<M_{-k}, psi> for the recorded levels, with standard errors."""
        v = self.states @ np.asarray(psi, dtype=float)
        return v.mean(axis=0), v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])

    def expected_variance(self, psi):
        """E var_{M_{-k}}(psi) for the recorded levels, with standard errors."""
        psi = np.asarray(psi, dtype=float)
        v = self.states @ psi ** 2 - (self.states @ psi) ** 2
        return v.mean(axis=0), v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])


def sample_interaction_chain(j, c, lams, d, theta, reps, rng=None, dt=1e-3, eps=1e-3, burn_in=None):
    """Sample M_{-(j+1)} = theta, ..., M_0 with M_{-k} ~ equilibrium(c_k, d_k, Lambda_k; M_{-(k+1)}).

    ``c``, ``lams`` and ``d`` are indexed by level and need at least j + 1
    entries; ``d`` is typically the d-flow of renorm.dk_flow.
    """
    j = int(j)
    if j < 0:
        raise ValueError("j must be non-negative")
    if min(len(c), len(lams), len(d)) < j + 1:
        raise ValueError("parameter lists are shorter than the chain")
    rng = as_generator(rng)
    theta = np.asarray(theta, dtype=float)
    states = np.empty((reps, j + 2, theta.size))
    states[:, 0] = theta
    Z = np.tile(theta, (reps, 1))
    params = []
    for pos, k in enumerate(range(j, -1, -1), start=1):
        ck, dk, lk = float(c[k]), float(d[k]), as_measure(lams[k])
        params.append((ck, dk, lk))
        centre = Z.copy()
        st = _MkvStepper(ck, dk, lk, eps)
        burn = BURN_IN_FACTOR / ck if burn_in is None else float(burn_in)
        for _ in range(int(round(burn / dt))):
            st.step(Z, centre, dt, rng)
        states[:, pos] = Z
    return InteractionChainSample(j, states, params)
