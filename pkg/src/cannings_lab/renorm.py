"""Renormalisation analytics: the volatility flow d_k and what it decides.

The flow is d_{k+1} = c_k (mu_k + d_k) / (c_k + mu_k + d_k) with
m_k = (mu_k + d_k) / c_k and mu_k = lambda_k / 2.  Each step is the Moebius
map f_k(x) = c_k (mu_k + x) / (c_k + mu_k + x).

Series questions (does sum m_k diverge?) are settled numerically by trend
fits with explicit thresholds; the fitted exponents travel with the verdict.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .families import (Asym, CoefficientFamily, as_family, asym_cumsum, asym_limit,
                       asym_product, asym_ratio, series_diverges)
from .hiergeo import MigrationSpec, _check_summable, green_all, walk_spectrum

CLUSTERING = "clustering"
COEXISTENCE = "local-coexistence"
INCONCLUSIVE = "inconclusive"

PLATEAU_REL = 1e-8
GEOMETRIC_EFOLDS = 20.0
P_BAND = 0.05
POLY_KMAX = 100_000
EXP_KMAX = 200


# volatility flow

@dataclass
class FlowResult:
    k: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    m: np.ndarray
    sigma: np.ndarray
    sum_m: np.ndarray  # partial sums of m_k
    sum_cmu: np.ndarray  # partial sums of (1/c_k) sum_{l<=k} mu_l, d_0 folded into mu_0
    d0: float = 0.0

    @property
    def k_max(self):
        return int(self.k[-1])

    def lower_bound(self):
        """d*_k = mu_0' / (1 + mu_0' sigma_k) with mu_0' = mu_0 + d_0 (k >= 1)."""
        m0 = self.mu[0] + self.d0
        out = m0 / (1.0 + m0 * self.sigma)
        out[0] = self.d0
        return out

    def to_dict(self):
        return {"d0": self.d0, **{name: getattr(self, name).tolist()
                                  for name in ("k", "c", "mu", "d", "m", "sigma", "sum_m", "sum_cmu")}}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["k", "c_k", "mu_k", "d_k", "m_k", "sigma_k"])
        for row in zip(self.k, self.c, self.mu, self.d, self.m, self.sigma):
            w.writerow([int(row[0])] + [fmt_float(x) for x in row[1:]])
        return buf.getvalue()


def fmt_float(x):
    """17 significant digits, '.' separator; inf and nan spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _values(fam, n):
    with np.errstate(over="ignore"):
        return np.asarray(as_family(fam).head(n), dtype=float)


def dk_flow(c, mu, d0=0.0, k_max=100):
    """Iterate the flow from d_0 up to d_{k_max}."""
    k_max = int(k_max)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if d0 < 0 or not math.isfinite(d0):
        raise ValueError("d_0 must be finite and non-negative")
    cv = _values(c, k_max + 1)
    mv = _values(mu, k_max + 1)
    if np.any(~(cv > 0)):
        raise ValueError("migration coefficients must be positive")
    if np.any(mv < 0) or np.any(np.isnan(mv)):
        raise ValueError("mu coefficients must be non-negative")
    d = np.empty(k_max + 1)
    d[0] = d0
    x = float(d0)
    cl = cv.tolist()
    ml = mv.tolist()
    for k in range(k_max):
        s = ml[k] + x
        ck = cl[k]
        # written so that c_k = inf gives d_{k+1} = mu_k + d_k
        x = s / (1.0 + s / ck)
        d[k + 1] = x
    with np.errstate(invalid="ignore"):
        m = (mv + d) / cv
    m = np.nan_to_num(m, nan=0.0)
    sigma = np.concatenate([[0.0], np.cumsum(1.0 / cv)[:-1]])
    mu_eff = mv.copy()
    mu_eff[0] += d0
    sum_cmu = np.cumsum(np.cumsum(mu_eff) / cv)
    return FlowResult(np.arange(k_max + 1), cv, mv, d, m, sigma, np.cumsum(m), sum_cmu, float(d0))


# Moebius maps

@dataclass(frozen=True)
class MobiusFixedPoints:
    x_plus: float
    x_minus: float
    slope_plus: float
    slope_minus: float


def mobius_map(c, mu, x):
    return c * (mu + x) / (c + mu + x)


def mobius_fixed_points(c, mu):
    """Fixed points x+ > 0 > x- of f(x) = c (mu + x) / (c + mu + x) and f'(x+-)."""
    if not (c > 0 and mu > 0):
        raise ValueError("need c > 0 and mu > 0")
    root = math.sqrt(1.0 + 4.0 * c / mu)
    xp = 2.0 * c / (1.0 + root)  # = mu (root - 1) / 2 without cancellation
    xm = -0.5 * mu * (1.0 + root)

    def slope(x):
        return c * c / (c + mu + x) ** 2

    return MobiusFixedPoints(xp, xm, slope(xp), slope(xm))


# series trends

@dataclass
class TrendFit:
    verdict: str  # "diverge", "converge" or "inconclusive"
    reason: str
    p: float = math.nan  # increments ~ C k^-p (log k)^-q
    q: float = math.nan
    rate: float = math.nan  # fitted exponential rate of the increments
    partial_sums: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tail_estimate: float = math.nan

    def to_dict(self):
        return {"verdict": self.verdict, "reason": self.reason, "p": self.p, "q": self.q,
                "rate": self.rate, "tail_estimate": self.tail_estimate,
                "final_partial_sum": float(self.partial_sums[-1]) if self.partial_sums.size else 0.0}


def series_trend(increments, lo_frac=0.01):
    """Decide whether sum_k a_k diverges from a_0..a_kmax.

    Order of tests: non-finite terms (diverge); a negligible second half
    (plateau, converge); geometric behaviour of the last half (at least
    GEOMETRIC_EFOLDS e-folds across it); otherwise a fit of
    log a_k = log C - p log k - q log log k over [lo_frac kmax, kmax].
    """
    a = np.asarray(increments, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise ValueError("need at least two increments")
    if np.any(a < 0):
        raise ValueError("increments must be non-negative")
    with np.errstate(invalid="ignore"):
        S = np.cumsum(a)
    if not np.all(np.isfinite(a)):
        return TrendFit("diverge", "infinite term", partial_sums=S, tail_estimate=math.inf)
    n = a.size
    kmax = n - 1
    total = float(S[-1])
    if total == 0.0:
        return TrendFit("converge", "all terms vanish", partial_sums=S, tail_estimate=0.0)
    half = a[n // 2:]
    if half.sum() < PLATEAU_REL * total:
        return TrendFit("converge", "plateau", partial_sums=S, tail_estimate=float(half.sum()))
    k = np.arange(n, dtype=float)
    pos = a > 0
    # geometric test on the last half
    sel = pos & (k >= kmax / 2)
    if sel.sum() >= 3:
        g = np.polyfit(k[sel], np.log(a[sel]), 1)[0]
        if abs(g) * (kmax / 2) >= GEOMETRIC_EFOLDS:
            if g > 0:
                return TrendFit("diverge", "geometric growth", rate=g, partial_sums=S, tail_estimate=math.inf)
            r = math.exp(g)
            return TrendFit("converge", "geometric decay", rate=g, partial_sums=S,
                            tail_estimate=float(a[-1] * r / (1 - r)))
    sel = pos & (k >= max(3.0, lo_frac * kmax))
    if sel.sum() < 5:
        return TrendFit(INCONCLUSIVE, "too few positive terms in the fit window", partial_sums=S)
    X = np.column_stack([np.ones(sel.sum()), -np.log(k[sel]), -np.log(np.log(k[sel]))])
    coef = np.linalg.lstsq(X, np.log(a[sel]), rcond=None)[0]
    p, q = float(coef[1]), float(coef[2])
    tail = _power_tail(a[-1], kmax, p, q)
    if p > 1 + P_BAND or (abs(p - 1) <= P_BAND and q > 1 + P_BAND):
        return TrendFit("converge", "power-law decay", p, q, partial_sums=S, tail_estimate=tail)
    if p < 1 - P_BAND or (abs(p - 1) <= P_BAND and q < 1 - P_BAND):
        return TrendFit("diverge", "power-law decay too slow", p, q, partial_sums=S, tail_estimate=math.inf)
    return TrendFit(INCONCLUSIVE, "fitted exponents on the boundary", p, q, partial_sums=S, tail_estimate=tail)


def _power_tail(a_last, kmax, p, q):
    if p > 1 + P_BAND:
        return float(a_last * kmax / (p - 1))
    if abs(p - 1) <= P_BAND and q > 1:
        return float(a_last * kmax * math.log(kmax) / (q - 1))
    return math.inf


# hazard

@dataclass
class HazardMoments:
    first: float
    second: float
    finite: bool | None  # None when the trend is inconclusive
    trend: TrendFit | None
    terms: np.ndarray  # per-level contributions to the first moment
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {"first": self.first, "second": self.second, "finite": self.finite,
                "trend": self.trend.to_dict() if self.trend else None, "warnings": list(self.warnings)}


def hazard_closed_form(N, c, lam, trunc_M, d0=0.0, effective=True):
    """First and second moments of the truncated pair hazard H^(M)_N.

    E[H] = (1/D*) (1/2) sum_{k<=M} w_k N[k] G_k with w_k = sum_{j>=k} lambda_j N^-j
    (plus 2 d0 at level 0) and G the unit-rate Green function of the walk
    on c-bar.  Second moment by counting site pairs, divided by D*^2.
    Quantities are carried as W_k N^k to avoid underflow at deep levels.
    """
    N = int(N)
    M = int(trunc_M)
    if M < 0:
        raise ValueError("trunc_M must be non-negative")
    lamf = as_family(lam)
    cf = as_family(c)
    if effective:
        cf = MigrationSpec(cf, True, lamf).family(N)
    if lamf.is_zero and d0 == 0:
        z = np.zeros(M + 1)
        return HazardMoments(0.0, 0.0, True, series_trend(np.zeros(2)), z)
    logN = math.log(N)
    # W_k N^k = lambda_k + (W_{k+1} N^{k+1}) / N, run down from far enough out
    extra = int(math.ceil(40.0 / max(logN - max(lamf.growth(), 0.0), 1e-3))) + 2
    lv = _values(lamf, M + extra + 1)
    Wh = np.zeros(M + extra + 2)
    for k in range(M + extra, -1, -1):
        Wh[k] = lv[k] + Wh[k + 1] / N
    Wh = Wh[:M + 1]
    Wh[0] += 2.0 * d0
    Ns = np.full(M + 1, 1.0 - 1.0 / N)  # N[k] / N^k
    Ns[0] = 1.0
    Nbs = np.full(M + 1, 1.0 - 2.0 / N)  # N-bar[k] / N^k
    Nbs[0] = 1.0
    A = Wh * Ns  # w_k N[k]
    if cf.finite_support:
        G = np.full(M + 1, math.inf)
        Dstar = 1.0
    else:
        _check_summable(cf, N)
        spec = walk_spectrum(N, cf, J_max=M + 2)
        if not spec.transient:
            G = np.full(M + 1, math.inf)
        else:
            G = green_all(spec, M)
        Dstar = spec.Dstar
    with np.errstate(invalid="ignore"):
        terms = np.where(A > 0, 0.5 * A * G / Dstar, 0.0)
    first = float(terms.sum())
    if math.isinf(first):
        trend = TrendFit("diverge", "recurrent walk", partial_sums=np.cumsum(terms), tail_estimate=math.inf)
        return HazardMoments(math.inf, math.inf, False, trend, terms)
    # B_k = sum_{m<k} N[m] G_m / N^k
    B = np.zeros(M + 1)
    for k in range(M):
        B[k + 1] = (B[k] + Ns[k] * G[k]) / N
    AG = A * G
    below = np.concatenate([[0.0], np.cumsum(A)[:-1]])
    above = np.concatenate([np.cumsum(AG[::-1])[::-1][1:], [0.0]])
    inner = G * below + above + Wh * (B + Nbs * G)
    second = float(0.5 * np.sum(AG * inner) / Dstar ** 2)
    trend = series_trend(terms)
    finite = {"converge": True, "diverge": False}.get(trend.verdict)
    warnings = []
    if not finite or trend.tail_estimate > 0.01 * first:
        warnings.append(f"trunc_M = {M} does not certify the tail (estimate {trend.tail_estimate:.3g})")
    return HazardMoments(first, second, finite, trend, terms, warnings)


def hazard_large_N(c, lam, M, tail_levels=2000):
    """Large-N first-moment form sum_{k<=M} mu_k sum_{m>=k} 1/c_m."""
    cf, lamf = as_family(c), as_family(lam)
    n = int(M) + 1 + int(tail_levels)
    with np.errstate(divide="ignore", over="ignore"):
        inv = 1.0 / _values(cf, n)
    tails = np.cumsum(inv[::-1])[::-1]
    if hasattr(cf, "reciprocal_tail") and not cf.finite_support:
        tails = tails + cf.reciprocal_tail(n)
    mu = 0.5 * _values(lamf, int(M) + 1)
    return float(np.sum(mu * tails[:int(M) + 1]))


# dichotomy

@dataclass
class DichotomyReport:
    verdict: str
    indicators: dict  # name -> TrendFit
    regularity: dict
    concordant: bool
    N: int | None = None
    k_max: int = 0

    def to_dict(self):
        return {"verdict": self.verdict, "concordant": self.concordant, "N": self.N, "k_max": self.k_max,
                "regularity": self.regularity,
                "indicators": {k: v.to_dict() for k, v in self.indicators.items()}}


def _is_exponential(f):
    return isinstance(f, CoefficientFamily) and f.kind == "exponential" and f.base != 1.0


def default_kmax(c, mu):
    return EXP_KMAX if (_is_exponential(as_family(c)) or _is_exponential(as_family(mu))) else POLY_KMAX


def suggest_order(c, mu, candidates=(2, 4, 8, 16, 32, 64, 128)):
    """Smallest N for which the walk on c-bar_k = c_k + 2 mu_{k+1}/N has finite jump rate."""
    g = max(as_family(c).growth(), as_family(mu).growth())
    for N in candidates:
        if g < math.log(N) - 1e-9:
            return N
    raise ValueError("coefficients grow too fast for the candidate orders")


def _double(mu):
    mu = as_family(mu)
    if isinstance(mu, CoefficientFamily):
        if mu.kind == "explicit":
            return CoefficientFamily.explicit([2 * v for v in mu.values], 2 * mu.tail)
        return CoefficientFamily(mu.kind, 2 * mu.amplitude, mu.index, mu.log_power, mu.base)
    raise TypeError("mu must be a coefficient family or list")


def regularity_condition(c, mu, k_max=None):
    """Evaluate: limsup lambda_{k+1}/c_k < inf, or liminf min(lambda_{k+1}/c_k, lambda_k/lambda_{k+1}) > 0."""
    cf, mf = as_family(c), as_family(mu)
    ac, am = _asym(cf), _asym(mf)
    out = {"method": None, "bounded_ratio": None, "ratio_bounded_below": None, "holds": None}
    if ac is not None and am is not None:
        # lambda_{k+1} ~ 2 mu^(k+1) ... has the same asymptotic shape times 2 base
        lam_next = Asym(am.base, am.a, am.p, 2 * am.amp * am.base)
        r = asym_limit(asym_ratio(lam_next, ac))
        out.update(method="asymptotic", bounded_ratio=bool(r < math.inf),
                   ratio_bounded_below=bool(r > 0 and am.base > 0))
    else:
        n = int(k_max or 1000)
        cv, lv = _values(cf, n + 2), 2 * _values(mf, n + 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = lv[1:] / cv[:-1]
            s = lv[:-1] / lv[1:]
        tail = slice(n // 2, n)
        out.update(method="numeric tail", bounded_ratio=bool(np.isfinite(r[tail]).all() and r[tail].max() < 1e12),
                   ratio_bounded_below=bool(np.nan_to_num(np.minimum(r[tail], s[tail])).min() > 0))
    out["holds"] = bool(out["bounded_ratio"] or out["ratio_bounded_below"])
    return out


def _asym(f):
    if isinstance(f, CoefficientFamily) and f.kind != "explicit":
        return f.asymptotic()
    return None


def dichotomy_test(c, mu, d0=0.0, k_max=None, N=None, trunc_M=None):
    """Three indicators of clustering vs local coexistence.

    (i) sum m_k along the flow; (ii) sum (1/c_k) sum_{l<=k} mu_l with d_0
    folded into mu_0 (the flow sees d_0 only through mu_0 + d_0); (iii) when
    N is given, the per-level terms of the hazard mean on c-bar with
    lambda = 2 mu.  ``N="auto"`` picks the smallest admissible power of two.
    """
    k_max = int(k_max or default_kmax(c, mu))
    flow = dk_flow(c, mu, d0, k_max)
    ind = {"sum_m": series_trend(flow.m)}
    mu_eff = flow.mu.copy()
    mu_eff[0] += d0
    ind["sum_cmu"] = series_trend(np.cumsum(mu_eff) / flow.c)
    if N == "auto":
        N = suggest_order(c, mu)
    if N is not None:
        M = int(trunc_M or k_max)
        hz = hazard_closed_form(int(N), c, _double(mu), M, d0=d0)
        ind["hazard"] = hz.trend
    votes = {t.verdict for t in ind.values()}
    if votes == {"diverge"}:
        verdict = CLUSTERING
    elif votes == {"converge"}:
        verdict = COEXISTENCE
    else:
        verdict = INCONCLUSIVE
    return DichotomyReport(verdict, ind, regularity_condition(c, mu, k_max), len(votes) == 1,
                           None if N is None else int(N), k_max)


# regime classification

def M_balanced(K):
    """lim d_k/c_k for K in (0, inf)."""
    return 0.5 * K * (-1.0 + math.sqrt(1.0 + 4.0 / K))


def M_star(L, a):
    """lim sigma_k d_k in the migration-dominated case with index a < 1."""
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * L / (1.0 - a) ** 2))


def M_bar(c, Kbar):
    """lim d_k/c_k for equal exponential bases c and K-bar in (0, inf)."""
    s = c * (Kbar + 1.0) - 1.0
    return (-s + math.sqrt(s * s + 4.0 * c * Kbar)) / (2.0 * c)


@dataclass(frozen=True)
class ClusterSpeed:
    kind: str  # "fast", "diffusive", "slow" or "unclassified"
    R: float | None = None
    reason: str = ""


@dataclass
class RegimeReport:
    family_kind: str  # "polynomial" or "exponential"
    case: str
    verdict: str
    K: float | None = None
    L: float | None = None
    Kbar: float | None = None
    M: float | None = None
    M_star: float | None = None
    M_bar: float | None = None
    limit_quantity: str | None = None  # which scaled d_k converges
    limit_value: float | None = None
    m_asymptotics: str | None = None
    m_limit: float | None = None
    index_a: float | None = None
    base_c: float = 1.0
    base_mu: float = 1.0
    K_numeric: float | None = None
    cluster_speed: ClusterSpeed | None = None
    reason: str = ""

    def to_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k != "cluster_speed"}
        cs = self.cluster_speed
        out["cluster_speed"] = None if cs is None else {"kind": cs.kind, "R": cs.R, "reason": cs.reason}
        return out

    def scaled_flow(self, flow):
        """The flow quantity that should approach ``limit_value``."""
        q = self.limit_quantity
        if q == "d_k/c_k":
            return flow.d / flow.c
        if q == "d_k/sqrt(c_k mu_k)":
            return flow.d / np.sqrt(flow.c * flow.mu)
        if q == "sigma_k d_k":
            return flow.sigma * flow.d
        if q == "d_k/mu_k":
            return flow.d / flow.mu
        raise ValueError("report has no limit quantity")

    def validate_flow(self, c, mu, k_max=10_000, d0=0.0):
        """(value at k_max, relative error) of the scaled flow against the constant."""
        flow = dk_flow(c, mu, d0, k_max)
        v = float(self.scaled_flow(flow)[-1])
        return v, abs(v - self.limit_value) / abs(self.limit_value)


def _require_family(f, name):
    if not isinstance(f, CoefficientFamily) or f.kind == "explicit":
        raise ValueError(f"{name}: classification needs a polynomial or exponential family")
    return f


def _criterion_diverges(ac, am):
    """sum_k (1/c_k) sum_{l<=k} mu_l = inf, from the asymptotic forms."""
    cum, _ = asym_cumsum(am)
    return series_diverges(asym_ratio(cum, ac))


def classify_regime(c, mu):
    """Case, limit constants and verdict from the exponents of the families."""
    cf = _require_family(c, "c")
    mf = _require_family(mu, "mu")
    ac, am = cf.asymptotic(), mf.asymptotic()
    verdict = CLUSTERING if _criterion_diverges(ac, am) else COEXISTENCE
    with np.errstate(over="ignore", invalid="ignore"):
        kk = np.array([1e6 if ac.base == am.base == 1 else 400.0])
        Knum = float(np.exp(mf.log_value(kk) - cf.log_value(kk))[0])
    if ac.base == 1.0 and am.base == 1.0:
        rep = _classify_poly(ac, am, verdict)
    else:
        rep = _classify_exp(cf, ac, am, verdict)
    rep.K_numeric = Knum
    if rep.verdict == CLUSTERING and rep.case != "unclassified":
        rep.cluster_speed = clustering_speed(rep, cf, mf)
    return rep


def _classify_poly(ac, am, verdict):
    ratio = asym_ratio(am, ac)
    K = asym_limit(ratio)
    rep = RegimeReport("polynomial", "unclassified", verdict, K=K, index_a=ac.a)
    if math.isinf(K):
        rep.case, rep.limit_quantity, rep.limit_value = "a", "d_k/c_k", 1.0
        rep.m_asymptotics, rep.m_limit = "m_k ~ mu_k/c_k -> inf", math.inf
        return rep
    if K > 0:
        M = M_balanced(K)
        rep.case, rep.M, rep.limit_quantity, rep.limit_value = "b", M, "d_k/c_k", M
        rep.m_asymptotics, rep.m_limit = "m_k -> K + M", K + M
        return rep
    L = asym_limit(asym_product(ratio, Asym(1.0, 2.0, 0.0, 1.0)))
    rep.L = L
    if math.isinf(L):
        rep.case, rep.limit_quantity, rep.limit_value = "c", "d_k/sqrt(c_k mu_k)", 1.0
        rep.m_asymptotics, rep.m_limit = "m_k ~ sqrt(mu_k/c_k) -> 0", 0.0
        return rep
    if ac.a < 1:
        Ms = M_star(L, ac.a)
        rep.case, rep.M_star, rep.limit_quantity, rep.limit_value = "d", Ms, "sigma_k d_k", Ms
        rep.m_asymptotics, rep.m_limit = "m_k ~ M*/(c_k sigma_k) -> 0", 0.0
        return rep
    rep.reason = "K = 0 and L < inf need index a < 1"
    return rep


def _classify_exp(cf, ac, am, verdict):
    cb, mb = ac.base, am.base
    bar = asym_ratio(Asym(1.0, am.a, am.p, am.amp), Asym(1.0, ac.a, ac.p, ac.amp))
    Kbar = asym_limit(bar)
    rep = RegimeReport("exponential", "unclassified", verdict, Kbar=Kbar, index_a=ac.a,
                       base_c=cb, base_mu=mb)
    if cb < mb or (cb == mb and math.isinf(Kbar)):
        rep.case, rep.limit_quantity, rep.limit_value = "A", "d_k/c_k", 1.0 / cb
        rep.m_asymptotics, rep.m_limit = "m_k ~ mu_k/c_k -> inf", math.inf
        return rep
    if cb == mb and Kbar > 0:
        Mb = M_bar(cb, Kbar)
        rep.case, rep.M_bar, rep.limit_quantity, rep.limit_value = "B", Mb, "d_k/c_k", Mb
        rep.m_asymptotics = "m_k -> (K-bar + M-bar) scale"
        return rep
    if cb == mb:
        if cb < 1:
            rep.case, rep.limit_quantity, rep.limit_value = "C2", "d_k/c_k", (1.0 - cb) / cb
            rep.m_asymptotics, rep.m_limit = "m_k -> (1-c)/c", (1.0 - cb) / cb
        else:
            rep.case, rep.limit_quantity, rep.limit_value = "C3", "d_k/mu_k", 1.0 / (mb - 1.0)
            rep.m_asymptotics, rep.m_limit = "m_k ~ mu_k/((mu-1) c_k) -> 0", 0.0
        return rep
    # c > mu
    if cb < 1 or (cb == 1 and not cf.reciprocal_summable()):
        rep.case, rep.limit_quantity, rep.limit_value = "C1", "sigma_k d_k", 1.0
        rep.m_asymptotics, rep.m_limit = "m_k ~ 1/(c_k sigma_k)", 0.0
        return rep
    rep.reason = "c > mu with transient migration: local coexistence, no scaling theorem"
    return rep


def clustering_speed(report, c, mu):
    """Fast, diffusive (with exponent R) or slow cluster growth."""
    if report.verdict != CLUSTERING:
        raise ValueError("cluster speed is only defined in the clustering regime")
    case = report.case
    if case in ("a", "b", "c", "A", "B", "C1", "C2"):
        return ClusterSpeed("fast")
    if case == "d":
        return ClusterSpeed("diffusive", report.M_star * (1.0 - report.index_a))
    if case == "C3":
        ac, am = as_family(c).asymptotic(), as_family(mu).asymptotic()
        x = Asym(1.0, am.a - ac.a + 1.0, am.p - ac.p, am.amp / ac.amp)  # k mu-bar/c-bar
        C = asym_limit(x)
        if math.isinf(C):
            return ClusterSpeed("fast")
        if C > 0:
            return ClusterSpeed("diffusive", C / (report.base_mu - 1.0))
        if x.a == 0 and 0 < -x.p < 1:
            return ClusterSpeed("slow", reason=f"k mu-bar/c-bar ~ (log k)^-{-x.p:g}")
        return ClusterSpeed("unclassified", reason="k mu-bar/c-bar -> 0 outside the (log k)^-gamma class")
    return ClusterSpeed("unclassified", reason=f"no cluster-speed result for case {case!r}")


# interaction-chain variances

def _flow_arrays(flow):
    return np.asarray(flow.c, float), np.asarray(flow.d, float), np.asarray(flow.m, float)


def chain_variance(mode, flow, j, k=0, var_theta=1.0, beta1=None, beta2=None):
    """Variance functionals of the interaction chain built on ``flow``.

    e-var: prod_{k=0}^{j} (1+m_k)^-1 var_theta.
    eval-var: sum_{i=k}^{j} (d_{i+1}/c_i) prod_{l=i+1}^{j} (1+m_l)^-1 var_theta.
    diffusive-sum: the same sum over i in [floor(beta2 j), floor(beta1 j)]
    with the product running to floor(beta1 j).
    """
    c, d, m = _flow_arrays(flow)
    j = int(j)
    if j < 0:
        raise ValueError("j must be non-negative")
    if mode == "e-var":
        if j > m.size - 1:
            raise ValueError("flow too short for this j")
        return float(np.prod(1.0 / (1.0 + m[:j + 1])) * var_theta)
    if mode == "eval-var":
        k = int(k)
        if not 0 <= k <= j + 1:
            raise ValueError("need 0 <= k <= j + 1")
        return _window_sum(c, d, m, k, j) * var_theta
    if mode == "diffusive-sum":
        if beta1 is None or beta2 is None or not 0 <= beta2 <= beta1 <= 1:
            raise ValueError("need 0 <= beta2 <= beta1 <= 1")
        hi = int(math.floor(beta1 * j))
        lo = int(math.floor(beta2 * j))
        return _window_sum(c, d, m, lo, hi) * var_theta
    raise ValueError(f"unknown mode {mode!r}")


def _window_sum(c, d, m, lo, hi):
    """sum_{i=lo}^{hi} (d_{i+1}/c_i) prod_{l=i+1}^{hi} (1+m_l)^-1."""
    if hi + 1 > d.size - 1:
        raise ValueError("flow too short for this window")
    if lo > hi:
        return 0.0
    i = np.arange(lo, hi + 1)
    lg = np.log1p(m[lo:hi + 1])
    # sum of log(1+m_l) for l in (i, hi]
    after = np.concatenate([np.cumsum(lg[::-1])[::-1][1:], [0.0]])
    with np.errstate(invalid="ignore"):
        ratio = np.where(np.isinf(c[i]), 0.0, d[i + 1] / c[i])
    return float(np.sum(ratio * np.exp(-after)))
