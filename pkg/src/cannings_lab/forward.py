"""Forward population models on a finite hierarchical group and the duality harness.

Fields are arrays of shape ``(..., n_sites, q)``; a leading replicate axis
is used throughout so that many independent copies advance together.

ibm mode keeps M individuals per colony.  Events:

* migration: each individual, per level k, at rate a_k = c_{k-1} N^{1-k}
  is replaced by a copy of a uniform individual from a uniform site of its
  k-block (this keeps colony sizes fixed);
* Moran: each unordered pair of a colony at rate 2 d_0, one member copies
  the other;
* level 0: a given i-subset of a colony is marked at rate lambda_{M,i} and
  takes the type of a uniform marked individual;
* level k >= 1: a k-block fires at rate N^-k lambda*_k; its individuals are
  randomly permuted over the block's colonies, each is marked with
  probability r ~ Lambda*_k/lambda*_k, and marked individuals copy one
  uniform marked individual.

All rates are state independent, so the ibm is run by uniformisation.

continuum mode advances z by the exact migration flow, an Euler-Maruyama
step of the Fleming-Viot noise and Poisson jumps with r > eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .coalescent import CoalescentConfig, LabelledPartition, simulate_many
from .hiergeo import HierGeometry, MigrationSpec
from .lambda_measure import LambdaMeasure, as_measure
from .rng import as_generator

MODES = ("ibm", "continuum")


@dataclass
class PopulationField:
    mode: str
    data: np.ndarray  # (n_sites, q) counts or frequencies; may carry leading replicate axes
    geom: HierGeometry
    M: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.data.shape[-2] != self.geom.n_sites:
            raise ValueError("field does not match the geometry")
        if self.mode == "ibm":
            self.data = np.asarray(self.data, dtype=np.int64)
            if self.M is None:
                self.M = int(self.data[..., 0, :].sum())
            if np.any(self.data < 0) or np.any(self.data.sum(axis=-1) != self.M):
                raise ValueError("counts mismatch: every colony must hold M individuals")
        else:
            self.data = np.asarray(self.data, dtype=float)
            if np.any(self.data < -1e-12) or np.any(np.abs(self.data.sum(axis=-1) - 1) > 1e-9):
                raise ValueError("continuum colonies must be probability vectors")

    @property
    def q(self):
        return self.data.shape[-1]

    def frequencies(self):
        return self.data / self.M if self.mode == "ibm" else self.data

    @classmethod
    def uniform(cls, geom, theta, mode="continuum", M=None):
        theta = np.asarray(theta, dtype=float)
        if mode == "continuum":
            return cls(mode, np.tile(theta, (geom.n_sites, 1)), geom)
        counts = _round_counts(theta, M)
        return cls(mode, np.tile(counts, (geom.n_sites, 1)), geom, M)


def _round_counts(p, M):
    """Counts summing to M that are closest to M*p (largest remainders)."""
    raw = np.asarray(p, dtype=float) * M
    base = np.floor(raw).astype(np.int64)
    short = M - base.sum()
    base[np.argsort(raw - base)[::-1][:short]] += 1
    return base


@dataclass(frozen=True)
class ForwardConfig:
    geometry: HierGeometry
    mig: object  # MigrationSpec or coefficient list
    lambdas: tuple = ()  # Lambda_0, Lambda_1, ... (Kingman mass of Lambda_0 is ignored; use d0)
    d0: float = 0.0
    M: int | None = None
    dt: float = 1e-3
    eps: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.geometry.finite:
            raise ValueError("forward models need a finite geometry")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.d0 < 0:
            raise ValueError("d0 must be non-negative")
        object.__setattr__(self, "lambdas", tuple(as_measure(x) for x in self.lambdas))
        for k, lam in enumerate(self.lambdas[1:], start=1):
            if lam.kingman > 0 or math.isinf(lam.lam_star):
                raise ValueError(f"level {k} measure needs finite lambda*")

    def level_measure(self, k):
        return self.lambdas[k] if k < len(self.lambdas) else LambdaMeasure()

    @property
    def N(self):
        return self.geometry.order_N

    @property
    def K(self):
        return self.geometry.trunc_K

    def level_rates(self):
        """a_k = c_{k-1} N^{1-k}, k = 1..K."""
        mig = self.mig if isinstance(self.mig, MigrationSpec) else MigrationSpec(self.mig)
        c = mig.family(self.N).head(self.K)
        return c * float(self.N) ** (1 - np.arange(1, self.K + 1))

    def coalescent_config(self, n):
        """Matching dual configuration: Lambda_0 gets Kingman mass d0."""
        lam0 = self.level_measure(0)
        lam0 = LambdaMeasure(self.d0, lam0.atoms, lam0.density)
        return CoalescentConfig(self.geometry, self.mig, (lam0,) + tuple(self.lambdas[1:]), n, self.seed)


@dataclass
class ForwardPath:
    times: np.ndarray
    states: np.ndarray  # (reps, len(times), n_sites, q)
    mode: str
    projections: int = 0


# shared helpers

def _block_means(Z, N, k):
    """Block averages at level k, shape (..., n_sites / N^k, q)."""
    size = N ** k
    shp = Z.shape
    Zr = Z.reshape(shp[:-2] + (shp[-2] // size, size, shp[-1]))
    if size > 32:
        return Zr.mean(axis=-2)
    # numpy reduces slowly over a short middle axis; add the slices instead
    acc = Zr[..., 0, :].copy()
    for s in range(1, size):
        acc += Zr[..., s, :]
    acc /= size
    return acc


def block_mean(Z, N, k):
    """Block averages at level k, broadcast back to every site: shape as Z."""
    if k == 0:
        return Z
    size = N ** k
    shp = Z.shape
    Y = _block_means(Z, N, k)[..., None, :]
    return np.broadcast_to(Y, shp[:-2] + (shp[-2] // size, size, shp[-1])).reshape(shp)


def block_average(x, eta, k):
    """y_{eta,k}: mean of the colony frequency vectors over the k-block of ``eta``."""
    geom = x.geom
    if not 0 <= k <= geom.trunc_K:
        raise ValueError("level out of range")
    idx = geom.index(eta) if isinstance(eta, tuple) else int(eta)
    F = x.frequencies()
    blk = geom.block_of(idx, k)
    return F[..., blk.start:blk.stop, :].mean(axis=-2)


def _categorical(rng, P):
    """One draw per row of the (n, q) probability (or weight) matrix P."""
    cum = np.cumsum(P, axis=-1)
    u = rng.random(P.shape[0]) * cum[:, -1]
    return np.minimum((cum <= u[:, None]).sum(axis=-1), P.shape[1] - 1)


def _mv_hypergeometric(rng, colors, nsample):
    """Vectorised multivariate hypergeometric: rows of ``colors`` (n, q)."""
    colors = np.asarray(colors, dtype=np.int64)
    out = np.zeros_like(colors)
    left = np.asarray(nsample, dtype=np.int64).copy()
    rest = colors.sum(axis=1)
    for a in range(colors.shape[1] - 1):
        rest = rest - colors[:, a]
        draw = rng.hypergeometric(colors[:, a], rest, left) if left.size else left
        draw = np.where(left > 0, draw, 0)
        out[:, a] = draw
        left = left - draw
    out[:, -1] = left
    return out


def _poisson_positions(rng, mean, ncell):
    """Cells hit by independent Poisson(mean) counts, one entry per event.

    The total is drawn first and scattered uniformly, which has the same law.
    """
    return rng.integers(ncell, size=rng.poisson(mean * ncell))


def colony_jumps(flat, mean, measure, rng):
    """Apply z <- (1-r) z + r e_a, a ~ z, at Poisson(mean) events per row of ``flat``."""
    cells = _poisson_positions(rng, mean, flat.shape[0])
    # a row hit twice is updated in successive rounds
    while cells.size:
        uniq, first = np.unique(cells, return_index=True)
        z = flat[uniq]
        r = np.asarray(measure.sample_r(rng, size=uniq.size))
        a = _categorical(rng, np.clip(z, 0.0, None))
        z *= (1 - r)[:, None]
        z[np.arange(a.size), a] += r
        flat[uniq] = z
        cells = np.delete(cells, first)


def _rowsum(Z):
    """Sum over the last (short) axis, keeping it; faster than Z.sum(axis=-1) for small q."""
    acc = Z[..., 0].copy()
    for a in range(1, Z.shape[-1]):
        acc += Z[..., a]
    return acc[..., None]


def fv_noise(Z, scale, rng):
    """Euler-Maruyama increment with covariance scale^2 (diag(z) - z z^T), added in place."""
    if Z.shape[-1] == 2:
        # one Gaussian per row suffices for two types
        z0 = Z[..., 0]
        xi = z0 * Z[..., 1]
        np.maximum(xi, 0.0, out=xi)
        np.sqrt(xi, out=xi)
        xi *= rng.standard_normal(xi.shape)
        xi *= scale
        Z[..., 0] += xi
        Z[..., 1] -= xi
        return
    xi = np.sqrt(np.maximum(Z, 0.0))
    xi *= rng.standard_normal(Z.shape)
    tot = _rowsum(xi)
    xi -= Z * tot
    xi *= scale
    Z += xi


def project_simplex(Z):
    """Clip negatives and renormalise rows; returns the number of rows clipped."""
    if Z.shape[-1] == 2:
        z0 = Z[..., 0]
        nbad = 0
        if z0.min() < 0 or z0.max() > 1:
            nbad = int(np.count_nonzero((z0 < 0) | (z0 > 1)))
            np.clip(z0, 0.0, 1.0, out=z0)
        np.subtract(1.0, z0, out=Z[..., 1])
        return nbad
    nbad = 0
    if Z.min() < 0:
        nbad = int(np.any(Z < 0, axis=-1).sum())
        np.maximum(Z, 0.0, out=Z)
    Z /= _rowsum(Z)
    return nbad


# ibm

class _Ibm:
    def __init__(self, cfg):
        if cfg.M is None or cfg.M < 2:
            raise ValueError("ibm mode needs M >= 2")
        self.cfg = cfg
        N, K, M = cfg.N, cfg.K, cfg.M
        self.n_sites = N ** K
        self.a = cfg.level_rates()
        lam0 = cfg.level_measure(0)
        R0 = lam0.merger_rates(M)
        self.lam0_sizes = R0[2:] / R0[2:].sum() if R0[2:].sum() > 0 else None
        per_colony = {
            "mig": M * self.a.sum(),
            "moran": math.comb(M, 2) * 2.0 * cfg.d0,
            "lam0": R0[2:].sum(),
        }
        self.channels = [(name, self.n_sites * r) for name, r in per_colony.items() if r > 0]
        self.block_measures = {}
        for k in range(1, K + 1):
            lam = cfg.level_measure(k)
            if lam.lam_star > 0:
                self.block_measures[k] = lam
                self.channels.append((("block", k), (self.n_sites // N ** k) * N ** -k * lam.lam_star))
        self.total = sum(r for _, r in self.channels)
        self.probs = np.array([r for _, r in self.channels]) / self.total if self.total > 0 else None

    def step(self, X, idx, rng):
        """Apply one event to each replicate in ``idx``."""
        ch = rng.choice(len(self.channels), size=idx.size, p=self.probs)
        for c, (name, _) in enumerate(self.channels):
            sel = idx[ch == c]
            if sel.size == 0:
                continue
            if name == "mig":
                self._migrate(X, sel, rng)
            elif name == "moran":
                self._moran(X, sel, rng)
            elif name == "lam0":
                self._lam0(X, sel, rng)
            else:
                self._block(X, sel, name[1], rng)

    def _migrate(self, X, sel, rng):
        N, M = self.cfg.N, self.cfg.M
        n = sel.size
        i = rng.integers(self.n_sites, size=n)
        k = 1 + _categorical(rng, np.broadcast_to(self.a, (n, self.a.size)))
        size = N ** k
        zeta = (i // size) * size + rng.integers(0, size)
        U = _categorical(rng, X[sel, i].astype(float))
        V = _categorical(rng, X[sel, zeta].astype(float))
        np.subtract.at(X, (sel, i, U), 1)
        np.add.at(X, (sel, i, V), 1)

    def _moran(self, X, sel, rng):
        i = rng.integers(self.n_sites, size=sel.size)
        x = X[sel, i].astype(float)
        U = _categorical(rng, x)
        x[np.arange(sel.size), U] -= 1
        V = _categorical(rng, x)
        np.subtract.at(X, (sel, i, U), 1)
        np.add.at(X, (sel, i, V), 1)

    def _lam0(self, X, sel, rng):
        n = sel.size
        i = rng.integers(self.n_sites, size=n)
        I = 2 + rng.choice(self.lam0_sizes.size, size=n, p=self.lam0_sizes)
        J = _mv_hypergeometric(rng, X[sel, i], I)
        a = _categorical(rng, J.astype(float))
        X[sel, i] -= J
        np.add.at(X, (sel, i, a), I)

    def _block(self, X, sel, k, rng):
        N, M = self.cfg.N, self.cfg.M
        size = N ** k
        n = sel.size
        q = X.shape[-1]
        b = rng.integers(self.n_sites // size, size=n)
        sites = b[:, None] * size + np.arange(size)[None, :]
        rows = np.repeat(sel[:, None], size, axis=1)
        blk = X[rows, sites]  # (n, size, q)
        pool = blk.sum(axis=1)
        new = np.empty_like(blk)
        for s in range(size - 1):
            take = _mv_hypergeometric(rng, pool, np.full(n, M))
            new[:, s] = take
            pool = pool - take
        new[:, -1] = pool
        r = np.asarray(self.block_measures[k].sample_r(rng, size=n))
        J = rng.binomial(new, r[:, None, None])
        tot = J.sum(axis=(1, 2))
        has = tot > 0
        a = np.zeros(n, dtype=np.int64)
        if np.any(has):
            a[has] = _categorical(rng, J[has].sum(axis=1).astype(float))
        new -= J
        add = J.sum(axis=2)  # marked per colony
        new[np.arange(n)[:, None], np.arange(size)[None, :], a[:, None]] += add
        X[rows, sites] = new


def _run_ibm(cfg, X0, times, rng, integrand=None):
    sim = _Ibm(cfg)
    reps = X0.shape[0]
    X = X0.copy()
    out = np.empty((reps, len(times)) + X.shape[1:], dtype=np.int64)
    vals = None if integrand is None else np.empty((reps, len(times)))
    t_prev = 0.0
    for g, t in enumerate(times):
        if t > t_prev and sim.total > 0:
            counts = rng.poisson(sim.total * (t - t_prev), size=reps)
            while True:
                idx = np.nonzero(counts > 0)[0]
                if idx.size == 0:
                    break
                sim.step(X, idx, rng)
                counts[idx] -= 1
        out[:, g] = X
        if integrand is not None:
            vals[:, g] = integrand(t, X)
        t_prev = t
    return out, vals


# continuum

class _Continuum:
    def __init__(self, cfg):
        self.cfg = cfg
        N, K = cfg.N, cfg.K
        self.n_sites = N ** K
        a = cfg.level_rates()
        self.rho = np.array([a[j:].sum() for j in range(K)])  # rho_j = sum_{k > j} a_k
        lam0 = cfg.level_measure(0)
        small, big = _split_measure(lam0, cfg.eps)
        self.d_eff = cfg.d0 + 0.5 * small
        self.lam0_big = big
        self.lam0_rate = big.lam_star if big.lam_star > 0 else 0.0
        self.block = {}
        for k in range(1, K + 1):
            lam = cfg.level_measure(k)
            if lam.lam_star > 0:
                self.block[k] = (lam, float(N) ** -k * lam.lam_star)
        self.projections = 0

    def step(self, Z, dt, rng):
        cfg = self.cfg
        N, K = cfg.N, cfg.K
        # exact migration flow sum_j exp(-rho_j dt)(A_j - A_{j+1}) z + A_K z, regrouped by A_j
        e = np.append(np.exp(-self.rho * dt), 1.0)
        means = [_block_means(Z, N, k) for k in range(1, K + 1)]
        Z *= e[0]
        for k in range(1, K + 1):
            size = N ** k
            Zr = Z.reshape(Z.shape[:-2] + (Z.shape[-2] // size, size, Z.shape[-1]))
            Zr += (e[k] - e[k - 1]) * means[k - 1][..., None, :]
        if self.d_eff > 0:
            fv_noise(Z, math.sqrt(2.0 * self.d_eff * dt), rng)
        if self.lam0_rate > 0:
            self._colony_jumps(Z, dt, rng)
        for k, (lam, rate) in self.block.items():
            self._block_jumps(Z, k, lam, rate, dt, rng)
        if self.d_eff > 0:
            self.projections += project_simplex(Z)

    def _colony_jumps(self, Z, dt, rng):
        colony_jumps(Z.reshape(-1, Z.shape[-1]), self.lam0_rate * dt, self.lam0_big, rng)

    def _block_jumps(self, Z, k, lam, rate, dt, rng):
        N = self.cfg.N
        size = N ** k
        q = Z.shape[-1]
        Zb = Z.reshape(-1, size, q)
        cells = _poisson_positions(rng, rate * dt, Zb.shape[0])
        while cells.size:
            uniq, first = np.unique(cells, return_index=True)
            y = _block_means(Zb[uniq], N, k)[:, 0]
            r = np.asarray(lam.sample_r(rng, size=uniq.size))
            a = _categorical(rng, np.clip(y, 0.0, None))
            y *= (1 - r)[:, None]
            y[np.arange(a.size), a] += r
            Zb[uniq] = y[:, None, :]
            cells = np.delete(cells, first)


def _split_measure(lam, eps):
    """(Lambda((0, eps]), Lambda restricted to (eps, 1]) for the continuous part."""
    small_atoms = sum(m for r, m in lam.atoms if r <= eps)
    big_atoms = tuple((r, m) for r, m in lam.atoms if r > eps)
    dens = lam.density
    small_dens = 0.0
    big_dens = None
    if dens is not None:
        big_dens = lambda r, f=dens: np.asarray(f(r), float) * (np.asarray(r) > eps)  # noqa: E731
        small_dens = LambdaMeasure(0.0, (), dens).lam - LambdaMeasure(0.0, (), big_dens).lam
    return small_atoms + small_dens, LambdaMeasure(0.0, big_atoms, big_dens)


def _run_continuum(cfg, Z0, times, rng, integrand=None):
    sim = _Continuum(cfg)
    reps = Z0.shape[0]
    Z = Z0.astype(float).copy()
    out = np.empty((reps, len(times)) + Z.shape[1:])
    vals = None if integrand is None else np.empty((reps, len(times)))
    t = 0.0
    for g, tg in enumerate(times):
        nsteps = int(round((tg - t) / cfg.dt))
        for s in range(nsteps):
            sim.step(Z, cfg.dt, rng)
        t = tg
        out[:, g] = Z
        if integrand is not None:
            vals[:, g] = integrand(tg, Z)
    return out, vals, sim.projections


def simulate_forward(cfg, x0, horizon, times=None, reps=1, rng=None):
    """Simulate ``reps`` independent copies from x0; states recorded at ``times``.

    In continuum mode the recording times must be multiples of dt.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    times = np.array([horizon] if times is None else times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > horizon + 1e-12:
        raise ValueError("times must be sorted and inside [0, horizon]")
    rng = as_generator(rng, cfg.seed)
    X0 = np.broadcast_to(x0.data, (reps,) + x0.data.shape)
    if x0.mode == "ibm":
        if cfg.M is not None and cfg.M != x0.M:
            raise ValueError("counts mismatch: field M differs from config M")
        cfg_m = cfg if cfg.M == x0.M else _with_M(cfg, x0.M)
        states, _ = _run_ibm(cfg_m, np.array(X0), times, rng)
        return ForwardPath(times, states, "ibm")
    steps = times / cfg.dt
    if np.any(np.abs(steps - np.round(steps)) > 1e-9):
        raise ValueError("continuum recording times must be multiples of dt")
    states, _, proj = _run_continuum(cfg, np.array(X0), times, rng)
    return ForwardPath(times, states, "continuum", proj)


def _with_M(cfg, M):
    return ForwardConfig(cfg.geometry, cfg.mig, cfg.lambdas, cfg.d0, M, cfg.dt, cfg.eps, cfg.seed)


# duality functions

def eval_duality_fn(x, pi, phi):
    """H_phi(x, pi) = sum over types of the families of prod_i x_{g_i}(u_i) phi(u_pi(1..n)).

    ``x`` is a PopulationField or an array (..., n_sites, q); ``phi`` a q^n
    table indexed by the types of individuals 1..n.
    """
    if isinstance(x, PopulationField):
        geom = x.geom
        F = x.frequencies()
    else:
        geom = None
        F = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    members = sorted(pi.members)
    n = len(members)
    if phi.ndim != n or members != list(range(1, n + 1)):
        raise ValueError("arity mismatch between phi and the partition")
    letters = "abcdefghijklmnopqrstuvwxyz"
    fam_of = {}
    for f, (m, _) in enumerate(pi.families):
        for i in m:
            fam_of[i] = letters[f]
    phi_sub = "".join(fam_of[i] for i in range(1, n + 1))
    ops, subs = [phi], [phi_sub]
    for f, (_, lab) in enumerate(pi.families):
        if isinstance(lab, tuple):
            if geom is None:
                raise ValueError("tuple labels need a PopulationField")
            lab = geom.index(lab)
        ops.append(F[..., int(lab), :])
        subs.append("..." + letters[f])
    return np.einsum(",".join(subs) + "->...", *ops)


# exact two-lineage dual

def pair_dual_generator(cfg):
    """Generator of two lineages on G_{N,K}: ordered pair states then coalesced states."""
    geom = cfg.geometry
    N, K, n = cfg.N, cfg.K, geom.n_sites
    a = cfg.level_rates()
    D = geom.distance_matrix()
    # single-lineage jump rates site -> site (migration plus block reshuffles)
    single = np.zeros((n, n))
    lam_star = np.array([cfg.level_measure(k).lam_star for k in range(1, K + 1)])
    lam_mass = np.array([cfg.level_measure(k).lam for k in range(1, K + 1)])
    for k in range(1, K + 1):
        same = D <= k
        single += same * (a[k - 1] + N ** -k * lam_star[k - 1]) / N ** k
    np.fill_diagonal(single, 0.0)
    S = n * n + n
    Q = np.zeros((S, S))
    eye = np.eye(n)
    pair = np.arange(n * n).reshape(n, n)
    # each lineage moves on its own, except block events covering both
    for i in range(n):
        for j in range(n):
            s = pair[i, j]
            dij = D[i, j]
            for k in range(1, K + 1):
                rate_mig = a[k - 1] / N ** k
                rate_blk = N ** -k * lam_star[k - 1] / N ** k
                blk_i = geom.block_of(i, k)
                blk_j = geom.block_of(j, k)
                Q[s, pair[blk_i.start:blk_i.stop, j]] += rate_mig
                Q[s, pair[i, blk_j.start:blk_j.stop]] += rate_mig
                if dij <= k:
                    B = blk_i
                    Q[s, n * n + np.arange(B.start, B.stop)] += N ** -k * lam_mass[k - 1] / N ** k
                    resh = N ** -k * (lam_star[k - 1] - lam_mass[k - 1]) / N ** (2 * k)
                    Q[np.ix_([s], pair[B.start:B.stop, B.start:B.stop].ravel())] += resh
                else:
                    Q[s, pair[blk_i.start:blk_i.stop, j]] += rate_blk
                    Q[s, pair[i, blk_j.start:blk_j.stop]] += rate_blk
            if i == j:
                Q[s, n * n + i] += cfg.level_measure(0).lam + 2.0 * cfg.d0
    Q[n * n:, n * n:] = single
    np.fill_diagonal(Q, 0.0)
    Q -= np.diag(Q.sum(axis=1))
    return Q


def _pair_state_values(F, phi):
    """H for every dual state: (..., n*n + n)."""
    phi = np.asarray(phi, dtype=float)
    n = F.shape[-2]
    pairs = np.einsum("...iu,uv,...jv->...ij", F, phi, F).reshape(F.shape[:-2] + (n * n,))
    coal = np.einsum("...iu,u->...i", F, np.diagonal(phi))
    return np.concatenate([pairs, coal], axis=-1)


def _pair_start(pi, geom):
    if len(pi.members) != 2:
        raise ValueError("the exact dual handles two lineages")
    n = geom.n_sites
    labs = [geom.index(l) if isinstance(l, tuple) else int(l) for l in pi.labels]
    if len(pi) == 1:
        return n * n + labs[0]
    (m1, l1), (m2, l2) = pi.families
    i, j = (labs[0], labs[1]) if 1 in m1 else (labs[1], labs[0])
    return i * n + j


def exact_dual_expectation(cfg, x0, pi0, phi, t):
    """E[H_phi(x0, C_t)] for two lineages by the matrix exponential."""
    Q = pair_dual_generator(cfg)
    p = linalg.expm(Q.T * t)[:, _pair_start(pi0, cfg.geometry)]
    return float(p @ _pair_state_values(x0.frequencies(), phi))


@dataclass
class DualityReport:
    lhs: float
    rhs: float
    gap: float
    se: float
    lhs_se: float
    rhs_se: float
    mode: str
    method: str
    reps: int
    projections: int = 0
    extra: dict = field(default_factory=dict)


def duality_gap(fwd, x0, pi0, phi, t, reps, dual="mc", estimator="plain", rng=None):
    """Compare E[H_phi(X_t, pi0)] with E[H_phi(x0, C_t)].

    ``dual`` is "mc" (coalescent.simulate) or "exact" (two-lineage matrix
    exponential).  ``estimator="cv"`` (ibm, two lineages, no block events)
    estimates the forward side as the exact dual value plus the integrated
    generator difference E int_0^t (L^M - L) u(s, X_s) ds, where u is the
    continuum expectation of H; this isolates the O(1/M) bias with small
    variance.
    """
    rng_fwd = as_generator(rng, fwd.seed, 0)
    rng_dual = as_generator(None, fwd.seed, 1) if rng is None else rng
    if fwd.geometry != x0.geom:
        raise ValueError("parameter mismatch: forward config and field geometries differ")
    phi = np.asarray(phi, dtype=float)
    if t == 0:
        h = float(eval_duality_fn(x0, pi0, phi))
        return DualityReport(h, h, 0.0, 0.0, 0.0, 0.0, x0.mode, estimator, reps)
    if estimator == "cv":
        return _duality_cv(fwd, x0, pi0, phi, t, reps, rng_fwd)
    path = simulate_forward(fwd, x0, t, reps=reps, rng=rng_fwd)
    F = path.states[:, -1] / (x0.M if x0.mode == "ibm" else 1.0)
    vals = eval_duality_fn(F, _index_labels(pi0, x0.geom), phi)
    lhs, lhs_se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps))
    if dual == "exact":
        rhs, rhs_se = exact_dual_expectation(fwd, x0, pi0, phi, t), 0.0
    else:
        rhs, rhs_se = dual_mc(fwd, x0, pi0, phi, t, reps, rng_dual)
    se = math.hypot(lhs_se, rhs_se)
    return DualityReport(lhs, rhs, lhs - rhs, se, lhs_se, rhs_se, x0.mode, estimator, reps, path.projections)


def _index_labels(pi, geom):
    return LabelledPartition(tuple((m, geom.index(l) if isinstance(l, tuple) else int(l))
                                   for m, l in pi.families))


def dual_mc(fwd, x0, pi0, phi, t, reps, rng):
    """MC estimate of E[H_phi(x0, C_t)] with coalescent.simulate."""
    n = len(pi0.members)
    ccfg = fwd.coalescent_config(n)
    F = x0.frequencies()
    geom = x0.geom
    vals = np.empty(reps)
    for r, res in enumerate(simulate_many(ccfg, pi0, t, reps, rng=rng)):
        vals[r] = eval_duality_fn(F, _index_labels(res.final, geom), phi)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps))


def _duality_cv(fwd, x0, pi0, phi, t, reps, rng, grid=101):
    if x0.mode != "ibm":
        raise ValueError("the control-variate estimator is for ibm mode")
    if any(fwd.level_measure(k).lam_star > 0 for k in range(1, fwd.K + 1)):
        raise ValueError("the control-variate estimator excludes block events")
    geom = x0.geom
    N, K, n, M = fwd.N, fwd.K, geom.n_sites, x0.M
    Q = pair_dual_generator(fwd)
    start = _pair_start(pi0, geom)
    rhs = float(linalg.expm(Q.T * t)[:, start] @ _pair_state_values(x0.frequencies(), phi))
    times = np.linspace(0.0, t, grid)
    diag_states = np.arange(n) * (n + 1)
    Pdiag = np.array([linalg.expm(Q.T * (t - s))[diag_states, start] for s in times])  # (grid, n)
    a = fwd.level_rates()
    dphi = np.diagonal(phi)
    symphi = phi + phi.T

    def integrand(s, X):
        g = int(round(s / t * (grid - 1)))
        x = X / M
        tot = np.zeros(X.shape[0])
        for k in range(1, K + 1):
            y = block_mean(x, N, k)
            term = (np.einsum("rsu,u->rs", x + y, dphi) - np.einsum("rsu,uv,rsv->rs", x, symphi, y))
            tot += a[k - 1] / M * (term * Pdiag[g][None, :]).sum(axis=1)
        return tot

    X0 = np.broadcast_to(x0.data, (reps,) + x0.data.shape)
    _, vals = _run_ibm(_with_M(fwd, M), np.array(X0), times, rng, integrand)
    integral = np.trapezoid(vals, times, axis=1)
    gap = float(integral.mean())
    se = float(integral.std(ddof=1) / math.sqrt(reps))
    return DualityReport(rhs + gap, rhs, gap, se, se, 0.0, "ibm", "cv", reps)
