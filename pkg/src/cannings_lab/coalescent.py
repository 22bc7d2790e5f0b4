"""Spatial Lambda-coalescents with block reshuffling.

Three geographies are supported by ``simulate``: a finite hierarchical group
G_{N,K} (the mean-field box is G_{N,1}) and the two-point space {0, *} in
which families at 0 emigrate to an inert cemetery ``*``.

Event channels, given the current labelled partition:

* migration: each family, for each level k = 1..K, at rate c_{k-1}/N^{k-1}
  jumps to a uniform site of its k-block;
* level 0: a site holding b >= 2 families merges a given i-subset at rate
  lambda_{b,i} (continuous part of Lambda_0) and each pair at rate 2 d_0;
* level k >= 1: every occupied k-block fires at rate N^-k lambda*_k; on
  firing r ~ Lambda*_k / lambda*_k, each family of the block is marked with
  probability r, marked families merge, then all families of the block are
  sent to independent uniform sites of the block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .families import as_family
from .hiergeo import HierGeometry, MigrationSpec, _check_summable, _levels_for
from .lambda_measure import LambdaMeasure, as_measure
from .rng import as_generator

CEMETERY = "*"
EXACT_CAP = 6


@dataclass(frozen=True)
class ImmigrationEmigration:
    """The space {0, *}: site 0 and an absorbing cemetery."""


@dataclass(frozen=True)
class LabelledPartition:
    """Families as (frozenset of members, label), ordered by smallest member."""
    families: tuple

    def __post_init__(self):
        fams = tuple((frozenset(m), lab) for m, lab in self.families)
        if any(not m for m, _ in fams):
            raise ValueError("families must be non-empty")
        seen = set()
        for m, _ in fams:
            if seen & m:
                raise ValueError("families must be disjoint")
            seen |= m
        object.__setattr__(self, "families", tuple(sorted(fams, key=lambda f: min(f[0]))))

    @classmethod
    def singletons(cls, n, label=0):
        """n families {1}, ..., {n}, all at ``label`` (or at labels[i] for a sequence)."""
        labels = list(label) if isinstance(label, (list, np.ndarray)) else [label] * n
        return cls(tuple((frozenset([i + 1]), labels[i]) for i in range(n)))

    def __len__(self):
        return len(self.families)

    @property
    def labels(self):
        return [lab for _, lab in self.families]

    @property
    def blocks(self):
        return [set(m) for m, _ in self.families]

    @property
    def members(self):
        out = set()
        for m, _ in self.families:
            out |= m
        return out

    def restrict(self, keep):
        """Partition induced on the members in ``keep`` (projectivity)."""
        keep = set(keep)
        return LabelledPartition(tuple((m & keep, lab) for m, lab in self.families if m & keep))

    def block_sizes(self):
        return sorted(len(m) for m, _ in self.families)


def coalesce_blocks(pi, J, g):
    """Merge the families with (0-based) indices in J into one family labelled g."""
    J = sorted(set(int(j) for j in J))
    if not J:
        return pi
    if J[0] < 0 or J[-1] >= len(pi):
        raise IndexError("family index out of range")
    merged = frozenset().union(*(pi.families[j][0] for j in J))
    rest = [f for i, f in enumerate(pi.families) if i not in J]
    return LabelledPartition(tuple(rest) + ((merged, g),))


def reshuffle_block(pi, block, targets):
    """Send the families labelled inside ``block`` to ``targets`` (in family order)."""
    block = set(block)
    inside = [i for i, (_, lab) in enumerate(pi.families) if lab in block]
    targets = list(targets)
    if len(targets) != len(inside):
        raise ValueError("need one target per family in the block")
    if any(t not in block for t in targets):
        raise ValueError("target outside block")
    fams = list(pi.families)
    for i, t in zip(inside, targets):
        fams[i] = (fams[i][0], t)
    return LabelledPartition(tuple(fams))


@dataclass(frozen=True)
class CoalescentConfig:
    geometry: object  # HierGeometry (finite) or ImmigrationEmigration
    mig: object  # MigrationSpec, coefficient list, or emigration rate for {0,*}
    lambdas: tuple = ()  # Lambda_0, Lambda_1, ...
    n: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sample size must be positive")
        lams = tuple(as_measure(x) for x in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        for k, lam in enumerate(lams[1:], start=1):
            if lam.kingman > 0:
                raise ValueError(f"level {k} measure may not charge 0")
            if math.isinf(lam.lam_star):
                raise ValueError(f"lambda*_{k} is infinite; level-k events need a finite rate")
        if isinstance(self.geometry, HierGeometry) and not self.geometry.finite:
            raise ValueError("simulate needs a finite geometry")

    def level_measure(self, k):
        return self.lambdas[k] if k < len(self.lambdas) else LambdaMeasure()


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str  # migration | level0-coalescence | kingman-pair | block-event
    level: int
    block_count: int
    detail: dict = field(default_factory=dict)


@dataclass
class SimulationResult:
    trajectory: list
    final: LabelledPartition
    hazard: float | None
    time: float


def _level0_table(lam0, nmax):
    """Per b: (total rate, probabilities over [kingman-pair, i=2..b])."""
    d0 = lam0.kingman
    table = {}
    for b in range(2, nmax + 1):
        R = lam0.merger_rates(b)[2:]
        kp = math.comb(b, 2) * 2.0 * d0
        tot = kp + R.sum()
        table[b] = (tot, np.concatenate([[kp], R]) / tot if tot > 0 else None)
    return table


class _Sim:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        g = cfg.geometry
        self.cemetery_space = isinstance(g, ImmigrationEmigration)
        lam0 = cfg.level_measure(0)
        self.lvl0 = _level0_table(lam0, max(cfg.n, 2))
        if self.cemetery_space:
            c = cfg.mig
            if isinstance(c, MigrationSpec):
                c = as_family(c.c).head(1)[0]
            self.c_emig = float(np.atleast_1d(c)[0])
            self.K = 0
            self.N = 1
            self.mig_rates = np.zeros(0)
            self.block_rates = np.zeros(0)
        else:
            self.N, self.K = g.order_N, g.trunc_K
            mig = cfg.mig if isinstance(cfg.mig, MigrationSpec) else MigrationSpec(cfg.mig)
            c = mig.family(self.N).head(self.K)
            k = np.arange(1, self.K + 1)
            self.mig_rates = c * float(self.N) ** (1 - k)
            self.block_rates = np.array(
                [cfg.level_measure(j).lam_star * float(self.N) ** -j for j in range(1, self.K + 1)])
            self.block_measures = [cfg.level_measure(j) for j in range(1, self.K + 1)]
        self.mig_total = float(self.mig_rates.sum())
        # pair weights for hazard: W[d] = intensity of pair coalescence at distance d
        w = np.zeros(self.K + 1)
        w[0] = lam0.pair_rate
        for j in range(1, self.K + 1):
            w[j] = cfg.level_measure(j).lam * float(self.N) ** -j
        self.W = np.cumsum(w[::-1])[::-1]

    def distance(self, a, b):
        if self.cemetery_space:
            return 0 if a == 0 and b == 0 else -1
        d = 0
        while a != b:
            a //= self.N
            b //= self.N
            d += 1
        return d

    def pair_intensity(self, labels):
        tot = 0.0
        for i in range(len(labels)):
            for j in range(i + 1, len(labels)):
                d = self.distance(labels[i], labels[j])
                if d >= 0:
                    tot += self.W[d]
        return tot

    def run(self, labels, members, horizon, record, track_hazard):
        rng = self.rng
        t = 0.0
        hazard = 0.0 if track_hazard else None
        traj = []
        N = self.N
        while True:
            b = len(labels)
            # level-0 channels by site
            sites = {}
            for idx, lab in enumerate(labels):
                if self.cemetery_space and lab != 0:
                    continue
                sites.setdefault(lab, []).append(idx)
            l0 = [(s, self.lvl0[len(v)][0]) for s, v in sites.items() if len(v) >= 2]
            r_l0 = sum(r for _, r in l0)
            if self.cemetery_space:
                n_active = sum(len(v) for v in sites.values())
                r_mig = n_active * self.c_emig
                r_blk = 0.0
                occ = []
            else:
                r_mig = b * self.mig_total
                occ = []
                for j in range(1, self.K + 1):
                    if self.block_rates[j - 1] > 0:
                        blocks = sorted({lab // N ** j for lab in labels})
                        occ.append((j, blocks))
                r_blk = sum(self.block_rates[j - 1] * len(bl) for j, bl in occ)
            total = r_mig + r_l0 + r_blk
            if track_hazard:
                pint = self.pair_intensity(labels)
            if total <= 0:
                if track_hazard:
                    hazard += pint * (horizon - t) if pint > 0 else 0.0
                t = horizon
                break
            tau = rng.exponential(1.0 / total)
            if t + tau >= horizon:
                if track_hazard and pint > 0:
                    hazard += pint * (horizon - t)
                t = horizon
                break
            if track_hazard:
                hazard += pint * tau
            t += tau
            u = rng.random() * total
            if u < r_mig:
                if self.cemetery_space:
                    active = [i for i, lab in enumerate(labels) if lab == 0]
                    i = active[int(rng.integers(len(active)))]
                    labels[i] = CEMETERY
                    level = 1
                else:
                    i = int(rng.integers(b))
                    level = 1 + int(np.searchsorted(np.cumsum(self.mig_rates), rng.random() * self.mig_total,
                                                    side="right"))
                    level = min(level, self.K)
                    size = N ** level
                    labels[i] = (labels[i] // size) * size + int(rng.integers(size))
                if record:
                    traj.append(EventRecord(t, "migration", level, len(labels), {"family": i}))
                continue
            u -= r_mig
            if u < r_l0:
                for s, r in l0:
                    if u < r:
                        break
                    u -= r
                idxs = sites[s]
                bs = len(idxs)
                probs = self.lvl0[bs][1]
                ch = int(rng.choice(probs.size, p=probs))
                size = 2 if ch == 0 else ch + 1
                chosen = sorted(rng.choice(bs, size=size, replace=False))
                J = [idxs[c] for c in chosen]
                self._merge(labels, members, J, s)
                if record:
                    kind = "kingman-pair" if ch == 0 else "level0-coalescence"
                    traj.append(EventRecord(t, kind, 0, len(labels), {"site": s, "merged": size}))
                continue
            u -= r_l0
            for j, blocks in occ:
                rj = self.block_rates[j - 1] * len(blocks)
                if u < rj:
                    break
                u -= rj
            blk = blocks[min(int(u / self.block_rates[j - 1]), len(blocks) - 1)]
            size = N ** j
            r = float(self.block_measures[j - 1].sample_r(rng))
            inside = [i for i, lab in enumerate(labels) if lab // size == blk]
            marks = rng.random(len(inside)) < r
            marked = [i for i, mk in zip(inside, marks) if mk]
            centre = blk * size + int(rng.integers(size))
            coalesced = len(marked) >= 2
            if marked:
                self._merge(labels, members, marked, centre)
            inside = [i for i, lab in enumerate(labels) if lab // size == blk]
            targets = blk * size + rng.integers(size, size=len(inside))
            for i, tg in zip(inside, targets):
                labels[i] = int(tg)
            if record:
                traj.append(EventRecord(t, "block-event", j, len(labels),
                                        {"r": r, "marks": len(marked), "coalesced": coalesced,
                                         "targets": [int(x) for x in targets]}))
        return traj, hazard, t

    @staticmethod
    def _merge(labels, members, J, g):
        J = sorted(J)
        keep = J[0]
        for j in J[1:]:
            members[keep] = members[keep] | members[j]
        labels[keep] = g
        for j in reversed(J[1:]):
            del labels[j]
            del members[j]


def simulate(cfg, pi0, horizon, record=False, track_hazard=False, rng=None):
    """Exact event-driven simulation up to ``horizon``.

    Returns a ``SimulationResult`` with the event list (if ``record``), the
    final labelled partition and, if ``track_hazard``, the integral over time
    of the summed pairwise coalescence intensity.
    """
    rng = as_generator(rng, cfg.seed)
    return _simulate_once(_Sim(cfg, rng), cfg, pi0, horizon, record, track_hazard)


def simulate_many(cfg, pi0, horizon, reps, record=False, track_hazard=False, rng=None):
    """``reps`` independent runs of ``simulate`` sharing one set-up (a generator)."""
    rng = as_generator(rng, cfg.seed)
    sim = _Sim(cfg, rng)
    for _ in range(int(reps)):
        yield _simulate_once(sim, cfg, pi0, horizon, record, track_hazard)


def _simulate_once(sim, cfg, pi0, horizon, record, track_hazard):
    geom = cfg.geometry
    labels, members = [], []
    for m, lab in pi0.families:
        if sim.cemetery_space:
            if lab not in (0, CEMETERY):
                raise ValueError("labels on {0,*} must be 0 or '*'")
        else:
            lab = geom.index(lab) if isinstance(lab, tuple) else int(lab)
            if not 0 <= lab < geom.n_sites:
                raise ValueError("label outside geometry")
        labels.append(lab)
        members.append(frozenset(m))
    if len(labels) > len(sim.lvl0) + 1:
        sim.lvl0 = _level0_table(cfg.level_measure(0), len(labels))
    traj, hazard, t = sim.run(labels, members, float(horizon), record, track_hazard)
    if not sim.cemetery_space:
        labels = [geom.site(x) for x in labels]
    final = LabelledPartition(tuple(zip(members, labels)))
    return SimulationResult(traj, final, hazard, t)


def absorption_probs_exact(n, c, lam, d=None, cap=EXACT_CAP):
    """P_{n,k}, k = 1..n: number of families reaching * from n families at 0.

    Families at 0 emigrate at rate c each; b families at 0 merge a given
    i-subset at rate lambda_{b,i} plus 2d per pair.  ``lam`` is a
    LambdaMeasure (its Kingman mass is used when ``d`` is None).
    """
    n = int(n)
    if n > cap:
        raise ValueError(f"n = {n} exceeds the exact cap {cap}; use Monte Carlo via simulate")
    if n < 1:
        raise ValueError("n must be positive")
    lam = as_measure(lam)
    d = lam.kingman if d is None else float(d)
    return _absorption_dp(n, float(c), lam, d)


def _absorption_dp(n, c, lam, d):
    # V[a][m]: law of the final count started from a families at 0 and m at *;
    # it only depends on a, shifted by m, so store Q[a] = law of families
    # produced from a families at 0.
    Q = {0: np.array([1.0])}
    for a in range(1, n + 1):
        R = lam.merger_rates(a)
        if a >= 2:
            R[2] += math.comb(a, 2) * 2.0 * d
        out_emig = a * c
        tot = out_emig + R[2:].sum()
        law = np.zeros(a + 1)
        if tot == 0:
            raise ValueError("no events: families never leave site 0")
        sub = Q[a - 1]
        law[1:1 + sub.size] += out_emig / tot * sub
        for i in range(2, a + 1):
            if R[i] > 0:
                s2 = Q[a - i + 1]
                law[:s2.size] += R[i] / tot * s2
        Q[a] = law
    return Q[n][1:]


def absorption_mc(n, c, lam, reps, seed=0, d=None):
    """Vectorised Monte Carlo of the {0,*} count chain (for large samples)."""
    lam = as_measure(lam)
    d = lam.kingman if d is None else float(d)
    rng = as_generator(seed)
    rates = {}
    for a in range(2, n + 1):
        R = lam.merger_rates(a)
        R[2] += math.comb(a, 2) * 2.0 * d
        rates[a] = R
    a = np.full(reps, n)
    m = np.zeros(reps, dtype=np.int64)
    while np.any(a > 0):
        live = np.nonzero(a > 0)[0]
        for av in np.unique(a[live]):
            idx = live[a[live] == av]
            emig = av * c
            R = rates.get(av, np.zeros(av + 1))
            w = np.concatenate([[emig], R[2:]])
            choice = rng.choice(w.size, size=idx.size, p=w / w.sum())
            em = choice == 0
            m[idx[em]] += 1
            a[idx[em]] -= 1
            # choice i-1 >= 1 merges i families, leaving a - i + 1
            a[idx[~em]] -= choice[~em]
    return m


def pair_hazard_mc(N, c, lam, horizon=math.inf, reps=10000, seed=0, d0=0.0,
                   effective=True, tol=1e-7, start=0):
    """Monte Carlo of E[H_N(horizon)] for two tagged lineages.

    The pair is reduced to one walk on distances running at doubled speed with
    coefficients c-bar_k = c_k + lambda_{k+1}/N (when ``effective``).  From
    distance k, a level-j jump (rate 2 c-bar_{j-1}/N^{j-1}, j >= max(k,1))
    moves to distance m with probability N[m]/N^j.  The hazard integrand at
    distance d is sum_{k >= d} w_k with w_0 = lambda_0 + 2 d0 and
    w_k = lambda_k N^-k; holding periods contribute their conditional
    expectation (Rao-Blackwellisation).  Returns (mean, standard error).
    """
    N = int(N)
    lamf = as_family(lam)
    cf = as_family(c)
    if effective:
        cf = MigrationSpec(cf, True, lamf).family(N)
    infinite = math.isinf(horizon)
    if cf.finite_support:
        Lc = cf.support_length()
        if infinite:
            raise ValueError("finitely many levels give a recurrent walk; use a finite horizon")
    else:
        _check_summable(cf, N)
        Lc = _levels_for(cf, N)
        if infinite and not cf.reciprocal_summable():
            return math.inf, 0.0
    S = _hazard_support(cf, lamf, d0, tol)
    L = max(Lc, S) + (_EXTRA_LEVELS if infinite else 0)
    j = np.arange(1, L + 1)
    cb = cf.head(L)
    nu = 2.0 * cb * float(N) ** (1 - j)
    lamv = lamf.head(L + 1)
    w = lamv * float(N) ** -np.arange(L + 1)
    w[0] += 2.0 * d0
    if not np.any(w > 0):
        return 0.0, 0.0
    W = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])  # W[d], d = 0..L+1
    # cumulative jump rates from distance k over levels j >= max(k,1)
    C = np.zeros((L + 2, L))
    R = np.zeros(L + 2)
    for k in range(L + 1):
        sel = j >= max(k, 1)
        C[k] = np.cumsum(np.where(sel, nu, 0.0))
        R[k] = C[k, -1]
    stop = L + 1
    if infinite:
        stop = _stop_level(nu, N, S, tol)
        if stop > L:
            raise RuntimeError("level cutoff too small to certify the escape of the pair")
    rng = as_generator(seed)
    dist = np.full(reps, int(start))
    tt = np.zeros(reps)
    H = np.zeros(reps)
    active = np.ones(reps, dtype=bool)
    logN = math.log(N)
    while np.any(active):
        idx = np.nonzero(active)[0]
        d = dist[idx]
        Rk = R[d]
        rem = horizon - tt[idx]
        with np.errstate(over="ignore", invalid="ignore"):
            frac = np.where(np.isinf(rem), 1.0 / Rk, -np.expm1(-Rk * rem) / Rk)
        H[idx] += W[d] * frac
        tau = rng.exponential(1.0 / Rk)
        tt[idx] += tau
        done = tt[idx] >= horizon
        u = rng.random(idx.size) * Rk
        lev = 1 + np.sum(C[d] < u[:, None], axis=1)
        lev = np.minimum(lev, L)
        v = rng.random(idx.size)
        with np.errstate(divide="ignore"):
            newd = np.maximum(0, np.ceil(lev + np.log(v) / logN)).astype(np.int64)
        newd = np.minimum(newd, lev)
        dist[idx] = np.where(done, d, newd)
        fin = done | (dist[idx] >= stop)
        active[idx[fin]] = False
    return float(H.mean()), float(H.std(ddof=1) / math.sqrt(reps))


_EXTRA_LEVELS = 60
_SUPPORT_CAP = 400


def _hazard_support(cf, lamf, d0, tol):
    """Highest level whose hazard weight matters, judged by lambda_k / c-bar_k."""
    if lamf.finite_support:
        return max(lamf.support_length(), 1)
    k = np.arange(_SUPPORT_CAP)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = lamf.log_value(k) - cf.log_value(k)
    score[0] = np.logaddexp(score[0], math.log(2 * d0) - cf.log_value(np.array([0]))[0]) if d0 > 0 else score[0]
    big = np.nonzero(score > score.max() + math.log(tol))[0]
    return int(big.max()) + 1


def _stop_level(nu, N, supp, tol):
    """Distance beyond which returning below level ``supp`` has probability < ``tol``.

    The chance of coming down one level is estimated by the down/(down+up)
    split of the first state-changing jump; the product over levels is used
    as the return probability.
    """
    L = nu.size
    p = 1.0
    for D in range(supp + 1, L + 1):
        jj = np.arange(D, L + 1)
        down = float(np.sum(nu[jj - 1] * float(N) ** (D - 1 - jj)))
        up = float(np.sum(nu[jj[1:] - 1] * (1 - float(N) ** (D - jj[1:])))) if D < L else 0.0
        if up + down == 0:
            continue
        p *= down / (down + up)
        if p < tol:
            return D + 1
    return L + 1
