"""Hierarchical group geometry and the hierarchical random walk.

Sites are digit vectors ``(x^0, x^1, ..., x^{K-1})`` with digit 0 the lowest
level.  Internally a site of G_{N,K} is also addressed by its integer index
``sum_l x^l N^l``, so the k-block of site ``s`` is ``s // N**k``.

Two clocks appear below.  The spectral quantities (r_j, h_j, transition
probabilities, Green function) refer to the walk with unit jump rate; the
actual walk jumps at total rate ``Dstar``, so P_t = P^unit_{Dstar t} and
G = G^unit / Dstar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .families import CoefficientFamily, FamilySum, as_family


@dataclass(frozen=True)
class HierGeometry:
    order_N: int
    trunc_K: int | None = None  # None means the infinite group

    def __post_init__(self):
        if int(self.order_N) < 2:
            raise ValueError("order_N must be at least 2")
        if self.trunc_K is not None and int(self.trunc_K) < 1:
            raise ValueError("trunc_K must be at least 1")

    @property
    def finite(self):
        return self.trunc_K is not None

    @property
    def n_sites(self):
        if not self.finite:
            raise ValueError("infinite geometry has no finite site count")
        return self.order_N ** self.trunc_K

    def site(self, index):
        """Digit vector of a site index."""
        N, K = self.order_N, self.trunc_K
        return tuple((int(index) // N ** l) % N for l in range(K))

    def index(self, site):
        site = tuple(site)
        if len(site) != self.trunc_K or any(not 0 <= d < self.order_N for d in site):
            raise ValueError(f"site {site} outside G_({self.order_N},{self.trunc_K})")
        return sum(int(d) * self.order_N ** l for l, d in enumerate(site))

    def block_of(self, index, k):
        """Site indices of the k-block containing ``index``."""
        size = self.order_N ** k
        start = (int(index) // size) * size
        return range(start, start + size)

    def distance_matrix(self):
        idx = np.arange(self.n_sites)
        d = np.zeros((idx.size, idx.size), dtype=np.int64)
        for k in range(self.trunc_K):
            blk = idx // self.order_N ** k
            d += blk[:, None] != blk[None, :]
        return d


def mean_field(N):
    """The N-site mean-field box is G_{N,1}."""
    return HierGeometry(int(N), 1)


def hier_distance(a, b):
    """Smallest k such that the digits of a and b agree from index k on."""
    a, b = tuple(a), tuple(b)
    if len(a) != len(b):
        raise ValueError("geometry mismatch")
    for l in range(len(a) - 1, -1, -1):
        if a[l] != b[l]:
            return l + 1
    return 0


def index_distance(i, j, N):
    """Hierarchical distance between two site indices."""
    d = 0
    while i != j:
        i //= N
        j //= N
        d += 1
    return d


def block_counts(geom, k):
    """(N^k, N[k], N-bar[k]): ball size, shell size and double-shell size."""
    k = int(k)
    if k < 0 or (geom.finite and k > geom.trunc_K):
        raise ValueError(f"level {k} out of range")
    N = geom.order_N
    if k == 0:
        return 1, 1, 1
    return N ** k, N ** k - N ** (k - 1), N ** k - 2 * N ** (k - 1)


@dataclass(frozen=True)
class MigrationSpec:
    """Per-level coefficients c_k (list or family); ``lam`` feeds c-bar when effective."""
    c: object
    effective: bool = False
    lam: object = None

    def family(self, N):
        c = as_family(self.c)
        if not self.effective:
            return c
        if self.lam is None:
            raise ValueError("effective coefficients need a lambda sequence")
        lam = as_family(self.lam)
        return FamilySum(((c, 1.0, 0), (lam, 1.0 / N, 1)))


def _check_summable(fam, N):
    if fam.growth() >= math.log(N) - 1e-12:
        raise ValueError("non-summable migration")


def _levels_for(fam, N, tol=1e-17, cap=20000):
    """Number of coefficient levels needed before c_m N^-m is negligible."""
    if fam.finite_support:
        return max(fam.support_length(), 1)
    _check_summable(fam, N)
    m = np.arange(cap)
    with np.errstate(over="ignore", divide="ignore"):
        lt = fam.log_value(m) - m * math.log(N)
    run = np.maximum.accumulate(lt[::-1])[::-1]
    top = lt.max()
    small = np.nonzero(run < top + math.log(tol))[0]
    if small.size == 0:
        raise ValueError("non-summable migration")
    return int(small[0]) + 1


@dataclass(frozen=True)
class MigrationKernel:
    geom: HierGeometry
    coeffs: np.ndarray  # c_0 .. c_{L-1}
    level_rates: np.ndarray  # c_{k-1}/N^{k-1}, k = 1..L
    site_rates: np.ndarray  # a(eta, zeta) by distance 0..L
    Dstar: float

    def rate(self, a, b):
        d = hier_distance(a, b)
        return float(self.site_rates[d]) if d < self.site_rates.size else 0.0

    def matrix(self):
        d = self.geom.distance_matrix()
        return self.site_rates[d]


def migration_kernel(geom, mig):
    """Kernel a(eta,zeta) = sum_{k >= d} c_{k-1} / N^{2k-1}, per-level rates and D*."""
    N = geom.order_N
    fam = mig.family(N) if isinstance(mig, MigrationSpec) else as_family(mig)
    if geom.finite:
        L = geom.trunc_K
    else:
        L = _levels_for(fam, N)
    c = fam.head(L)
    if np.any(c < 0):
        raise ValueError("migration coefficients must be non-negative")
    k = np.arange(1, L + 1)
    level_rates = c * float(N) ** (1 - k)
    per = c * float(N) ** (1 - 2 * k)  # contribution of level k to each site in the k-block
    tail = np.cumsum(per[::-1])[::-1]
    site_rates = np.concatenate([[0.0], tail])
    m = np.arange(L)
    Dstar = float(np.sum(c * float(N) ** (-m) * (1 - float(N) ** (-(m + 1)))))
    return MigrationKernel(geom, c, level_rates, site_rates, Dstar)


@dataclass(frozen=True)
class WalkSpectrum:
    """Spectral data of the unit-jump-rate walk, j = 1..J_max.

    ``hhat[j-1] = h_j N^j`` and ``rho[j-1] = r_j N^j`` are stored scaled so that
    deep levels neither underflow nor lose precision.
    """
    N: int
    J_max: int
    rho: np.ndarray
    hhat: np.ndarray
    D: float
    Dstar: float
    eps_tail: float
    stationary_tail: bool
    transient: bool
    green_tail: float

    @property
    def r(self):
        return self.rho * float(self.N) ** -np.arange(1, self.J_max + 1)

    @property
    def h(self):
        return self.hhat * float(self.N) ** -np.arange(1, self.J_max + 1)


def walk_spectrum(N, c, J_max=None, tol=1e-15):
    """Build r_j, h_j, D and D* for coefficients ``c`` (list or family)."""
    N = int(N)
    fam = as_family(c)
    logN = math.log(N)
    if fam.finite_support:
        K = fam.support_length()
        if K == 0:
            raise ValueError("walk needs at least one positive coefficient")
        J = K
        npad = 0
        stationary = True
    else:
        _check_summable(fam, N)
        J = int(J_max) if J_max else int(math.ceil(-math.log(tol) / logN)) + 1
        npad = int(math.ceil(40.0 / (logN - max(fam.growth(), 0.0)))) + 2
        stationary = False
    L = J + npad
    m = np.arange(L)
    with np.errstate(over="ignore", divide="ignore"):
        logc = fam.log_value(m)
        cvals = np.exp(logc)
        Dstar_terms = np.exp(logc - m * logN) * (1 - np.exp(-(m + 1) * logN))
    Dstar = float(np.sum(Dstar_terms[np.isfinite(Dstar_terms)]))
    D = Dstar * N / (N - 1)
    # S_j = sum_{m >= 0} c_{j-1+m} N^{1-2m}; rho_j = S_j / D
    S = np.zeros(L + 1)
    for j in range(L, 0, -1):
        S[j - 1] = cvals[j - 1] * N + S[j] / N ** 2 if j < L else cvals[j - 1] * N
    rho_all = S[:L] / D
    T = np.zeros(L + 1)  # T_j = sum_{i > j} rho_i N^{j-i}
    for j in range(L - 1, 0, -1):
        T[j - 1] = (rho_all[j] + T[j]) / N
    hhat_all = N / (N - 1) * rho_all + T[:L]
    rho = rho_all[:J].copy()
    hhat = hhat_all[:J].copy()
    transient = False if fam.finite_support else fam.reciprocal_summable()
    if transient:
        inv = 1.0 / hhat[-1]
        rtail = fam.reciprocal_tail(J)
        green_tail = inv * float(fam(np.array([J - 1]))[0]) * rtail if np.isfinite(inv) else 0.0
    else:
        green_tail = math.inf
    return WalkSpectrum(N, J, rho, hhat, float(D), float(Dstar), float(N) ** -J,
                        stationary, transient, float(green_tail))


def _Kjk(N, j, k):
    if j == k:
        return 0.0 if j == 0 else -1.0
    return float(N - 1)


def transition_prob(spec, t, k, clock="unit"):
    """P_t(0, eta) for |eta| = k.

    Levels above J_max are treated as frozen (h_j = 0).  For finitely
    supported coefficients this is exact; otherwise the omitted part of the
    series is bounded by ``spec.eps_tail``.
    """
    if t < 0 or k < 0:
        raise ValueError("t and k must be non-negative")
    if clock == "walk":
        t = t * spec.Dstar
    N, J = spec.N, spec.J_max
    jj = np.arange(1, J + 1)
    total = 0.0
    if k <= J:
        sel = jj >= max(k, 1)
        with np.errstate(under="ignore"):
            terms = np.exp(-spec.h[sel] * t) * float(N) ** -jj[sel].astype(float)
        K = np.full(terms.size, N - 1.0)
        if k >= 1:
            K[0] = -1.0
        total = float(np.dot(K, terms))
        total += float(N) ** -J
    return total


def green_block(spec, k, clock="unit"):
    """G_k = sum_{j >= k} K_jk / (h_j N^j); ``math.inf`` for a recurrent walk."""
    if not spec.transient:
        return math.inf
    G = green_all(spec, k)[k]
    return G / spec.Dstar if clock == "walk" else G


def green_all(spec, kmax):
    """Array G_0..G_kmax of the unit-rate Green function."""
    if not spec.transient:
        return np.full(kmax + 1, math.inf)
    if kmax >= spec.J_max:
        raise ValueError("kmax must be below J_max")
    N = spec.N
    with np.errstate(divide="ignore"):
        inv = 1.0 / spec.hhat
    # tail sums U_j = sum_{i >= j} 1/hhat_i  (1-based j)
    U = np.concatenate([np.cumsum(inv[::-1])[::-1], [0.0]]) + spec.green_tail
    G = np.empty(kmax + 1)
    G[0] = (N - 1) * U[0]
    for k in range(1, kmax + 1):
        G[k] = (N - 1) * U[k] - inv[k - 1]
    return G


def generator_matrix(geom, mig):
    """Dense generator of the walk on a finite G_{N,K} (for oracles and small systems)."""
    A = migration_kernel(geom, mig).matrix()
    return A - np.diag(A.sum(axis=1))
