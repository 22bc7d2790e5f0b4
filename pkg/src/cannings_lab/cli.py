"""Command-line front end: config validation, dispatch, CSV/JSON output, plot scripts.

    cannings-lab <command> --config run.json [--out DIR] [--seed S] [--reps R] [--threads T]

Exit codes: 0 success, 1 computation error (no outputs left behind),
2 invalid config or arguments.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import renorm
from .coalescent import CEMETERY, CoalescentConfig, ImmigrationEmigration, LabelledPartition, simulate
from .families import CoefficientFamily
from .forward import ForwardConfig, PopulationField, duality_gap, simulate_forward
from .hiergeo import HierGeometry
from .lambda_measure import LambdaMeasure
from .mckv import sample_interaction_chain
from .renorm import fmt_float
from .rng import DEFAULT_SEED, stream

COMMANDS = ("classify", "flow", "hazard", "coalescent-sim", "forward-sim", "duality-check", "chain")
THREADS_ENV = "CANNINGS_LAB_THREADS"

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POSINT = {"type": "integer", "minimum": 1}

FAMILY_SCHEMA = {
    "oneOf": [
        {"type": "array", "items": _NONNEG, "minItems": 1},
        _POS,
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["poly", "polynomial", "exp", "exponential", "list", "explicit"]},
                "a": _NUM, "b": _NUM, "p": _NUM,
                "amplitude": _POS, "base": _POS,
                "values": {"type": "array", "items": _NONNEG},
                "tail": _NONNEG,
            },
        },
    ]
}

MEASURE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kingman": _NONNEG,
        "atoms": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "density": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {"kind": {"enum": ["beta", "uniform"]}, "a": _POS, "b": _POS, "scale": _NONNEG},
        },
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["hierarchical", "immigration-emigration"]},
                "N": {"type": "integer", "minimum": 2},
                "K": _POSINT,
            },
        },
        "c": FAMILY_SCHEMA,
        "mu": FAMILY_SCHEMA,
        "lambda": FAMILY_SCHEMA,
        "d0": _NONNEG,
        "measures": {"type": "array", "items": MEASURE_SCHEMA},
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": _POSINT, "M": _POSINT, "horizon": _NONNEG, "t": _NONNEG,
                "dt": _POS, "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "reps": _POSINT, "seed": {"type": "integer", "minimum": 0},
                "mode": {"enum": ["continuum", "ibm"]},
                "times": {"type": "array", "items": _NONNEG},
                "dual": {"enum": ["mc", "exact"]},
                "estimator": {"enum": ["plain", "cv"]},
                "burn_in": _POS,
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_max": _POSINT, "trunc_M": {"type": "integer", "minimum": 0},
                "j": {"type": "integer", "minimum": 0},
                "beta1": {"type": "number", "minimum": 0, "maximum": 1},
                "beta2": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "state": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x0": {"type": "array", "minItems": 1},
                "phi": {"type": "array", "minItems": 1},
                "theta": {"type": "array", "items": _NONNEG, "minItems": 1},
                "psi": {"type": "array", "items": _NUM, "minItems": 1},
                "pi0": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}, "minItems": 1},
                "emit_plot_scripts": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists (JSON path, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


@dataclass
class RunConfig:
    command: str
    raw: dict
    geometry: object = None
    c: object = None
    mu: object = None
    lam: object = None
    d0: float = 0.0
    measures: tuple = ()
    simulation: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def sim(self, key, default=None):
        return self.simulation.get(key, default)

    def ana(self, key, default=None):
        return self.analysis.get(key, default)

    @property
    def mu_family(self):
        """mu_k from ``mu``, else lambda_k / 2."""
        if self.mu is not None:
            return self.mu
        if self.lam is not None:
            return _scale_family(self.lam, 0.5)
        return None

    @property
    def lambda_family(self):
        if self.lam is not None:
            return self.lam
        if self.mu is not None:
            return _scale_family(self.mu, 2.0)
        return None


def _json_path(err):
    path = "$"
    for part in err.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    if err.validator == "required":
        missing = err.message.split("'")[1]
        path += f".{missing}"
    return path


def _family(spec):
    if isinstance(spec, list):
        return CoefficientFamily.explicit(spec)
    if isinstance(spec, (int, float)):
        return CoefficientFamily.poly(0.0, float(spec))
    kind = spec["kind"]
    if kind in ("list", "explicit"):
        return CoefficientFamily.explicit(spec.get("values", []), spec.get("tail", 0.0))
    if "a" in spec and "b" in spec:
        raise ValueError("give the index as 'a' or 'b', not both")
    index = spec.get("a", spec.get("b", 0.0))
    amp = spec.get("amplitude", 1.0)
    p = spec.get("p", 0.0)
    if kind in ("poly", "polynomial"):
        return CoefficientFamily.poly(index, amp, p)
    return CoefficientFamily.exp(spec.get("base", 1.0), index, amp, p)


def _scale_family(f, s):
    if f.kind == "explicit":
        return CoefficientFamily.explicit([s * v for v in f.values], s * f.tail)
    return CoefficientFamily(f.kind, s * f.amplitude, f.index, f.log_power, f.base)


def parse_config(source):
    """Validate a config given as a path, a JSON string or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        try:
            if not text.lstrip().startswith("{") and Path(text).exists():
                text = Path(text).read_text()
            raw = json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([("$", f"malformed JSON: {exc}")]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([("$", "config must be a JSON object")])
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError([(_json_path(e), e.message) for e in errors])
    problems = []
    try:
        fams = {k: _family(raw[k]) for k in ("c", "mu", "lambda") if k in raw}
        measures = tuple(LambdaMeasure.from_dict(m) for m in raw.get("measures", []))
    except ValueError as exc:
        raise ConfigError([("$", str(exc))]) from exc
    if "mu" in raw and "lambda" in raw:
        problems.append(("$.lambda", "give mu or lambda, not both"))
    geom = None
    g = raw.get("geometry")
    if g is not None:
        if g.get("kind") == "immigration-emigration":
            geom = ImmigrationEmigration()
        elif "N" not in g:
            problems.append(("$.geometry.N", "hierarchical geometry needs N"))
        else:
            geom = HierGeometry(g["N"], g.get("K"))
    K = g.get("K") if g else None
    if K is not None:
        for key in ("c", "lambda", "mu"):
            f = fams.get(key)
            if f is not None and f.kind == "explicit" and len(f.values) < K:
                problems.append((f"$.{key}", "level count mismatch"))
        if len(measures) > K + 1:
            problems.append(("$.measures", "level count mismatch"))
    a = raw.get("analysis", {})
    if "beta1" in a and "beta2" in a and a["beta2"] > a["beta1"]:
        problems.append(("$.analysis.beta2", "beta2 must not exceed beta1"))
    if problems:
        raise ConfigError(problems)
    return RunConfig(raw["command"], raw, geom, fams.get("c"), fams.get("mu"), fams.get("lambda"),
                     float(raw.get("d0", 0.0)), measures, dict(raw.get("simulation", {})),
                     dict(a), dict(raw.get("state", {})), dict(raw.get("output", {})))


# output helpers

def _clean(x):
    """JSON-safe copy: numpy scalars and arrays become Python values, inf/nan become strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else fmt_float(x)
    if isinstance(x, LambdaMeasure):
        return x.to_dict()
    return x


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class _Out:
    def __init__(self, tmp, formats):
        self.dir = Path(tmp)
        self.formats = set(formats)
        self.written = []

    def csv(self, name, header, rows, force=False):
        if force or "csv" in self.formats:
            self._write(name, _csv_text(header, rows))

    def json(self, name, obj, force=False):
        if force or "json" in self.formats:
            self._write(name, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def _write(self, name, text):
        with open(self.dir / name, "w", newline="") as fh:
            fh.write(text)
        self.written.append(name)


def _require(cfg, *keys):
    missing = [k for k in keys if getattr(cfg, k if k != "lambda" else "lam") is None]
    if missing:
        raise ConfigError([(f"$.{k}", f"command {cfg.command!r} needs {k!r}") for k in missing])


def _need_mu(cfg):
    if cfg.mu_family is None:
        raise ConfigError([("$.mu", f"command {cfg.command!r} needs 'mu' or 'lambda'")])
    return cfg.mu_family


# commands

def _cmd_classify(cfg, out, ctx):
    _require(cfg, "c")
    mu = _need_mu(cfg)
    rep = renorm.classify_regime(cfg.c, mu)
    k_max = cfg.ana("k_max", 1000)
    data = rep.to_dict()
    if rep.limit_quantity is not None:
        v, err = rep.validate_flow(cfg.c, mu, k_max, cfg.d0)
        data["flow_check"] = {"k_max": k_max, "value": v, "relative_error": err}
    out.json("regime.json", data, force=True)
    flow = renorm.dk_flow(cfg.c, mu, cfg.d0, k_max)
    out._write("flow.csv", flow.to_csv())


def _cmd_flow(cfg, out, ctx):
    _require(cfg, "c")
    flow = renorm.dk_flow(cfg.c, _need_mu(cfg), cfg.d0, cfg.ana("k_max", 100))
    if "csv" in out.formats:
        out._write("flow.csv", flow.to_csv())
    out.json("flow.json", flow.to_dict())


def _order(cfg):
    if not isinstance(cfg.geometry, HierGeometry):
        raise ConfigError([("$.geometry.N", f"command {cfg.command!r} needs a hierarchical geometry")])
    return cfg.geometry.order_N


def _cmd_hazard(cfg, out, ctx):
    from .coalescent import pair_hazard_mc
    _require(cfg, "c")
    if cfg.lambda_family is None:
        raise ConfigError([("$.lambda", "command 'hazard' needs 'lambda' or 'mu'")])
    N = _order(cfg)
    M = cfg.ana("trunc_M", 30)
    hz = renorm.hazard_closed_form(N, cfg.c, cfg.lambda_family, M, d0=cfg.d0)
    mc, se = math.nan, math.nan
    if math.isfinite(hz.first) and hz.first > 0:
        mc, se = pair_hazard_mc(N, cfg.c, cfg.lambda_family, reps=ctx["reps"], seed=ctx["seed"], d0=cfg.d0)
    rows = [("first_moment", hz.first, mc, se), ("second_moment", hz.second, math.nan, math.nan)]
    out.csv("hazard.csv", ["quantity", "closed_form", "monte_carlo", "mc_se"], rows, force=True)
    out.csv("hazard_terms.csv", ["k", "term"], [(k, float(t)) for k, t in enumerate(hz.terms)])
    out.json("hazard.json", {**hz.to_dict(), "monte_carlo": mc, "mc_se": se, "N": N, "trunc_M": M})
    ctx["warnings"].extend(hz.warnings)


def _lambdas(cfg):
    lams = list(cfg.measures) or [LambdaMeasure()]
    if cfg.d0:
        l0 = lams[0]
        lams[0] = LambdaMeasure(l0.kingman + cfg.d0, l0.atoms, l0.density)
    return tuple(lams)


def _cmd_coalescent(cfg, out, ctx):
    _require(cfg, "c", "geometry")
    n = cfg.sim("n", 2)
    ccfg = CoalescentConfig(cfg.geometry, cfg.c if not isinstance(cfg.geometry, ImmigrationEmigration)
                            else float(cfg.c(np.array([0]))[0]), _lambdas(cfg), n, ctx["seed"])
    pi0 = _partition(cfg, n)
    horizon = cfg.sim("horizon", 1.0)

    def one(r):
        return simulate(ccfg, pi0, horizon, record=True, rng=stream(ctx["seed"], r))

    with ThreadPoolExecutor(max_workers=ctx["threads"]) as pool:
        results = list(pool.map(one, range(ctx["reps"])))
    rows, finals = [], []
    for r, res in enumerate(results):
        rows.append((r, 0.0, "start", -1, n))
        for ev in res.trajectory:
            rows.append((r, float(ev.time), ev.kind, ev.level, ev.block_count))
        finals.append([[sorted(m), list(lab) if isinstance(lab, tuple) else lab] for m, lab in res.final.families])
    out.csv("trajectory.csv", ["rep", "time", "kind", "level", "block_count"], rows, force=True)
    out.json("final.json", {"horizon": horizon, "final_partitions": finals})


def _partition(cfg, n):
    pi0 = cfg.state.get("pi0")
    geom = cfg.geometry
    if pi0 is None:
        site = 0 if isinstance(geom, ImmigrationEmigration) else tuple([0] * geom.trunc_K)
        return LabelledPartition.singletons(n, site)
    fams = []
    for members, lab in pi0:
        if isinstance(lab, list):
            lab = tuple(lab)
        elif lab == CEMETERY or isinstance(geom, ImmigrationEmigration):
            lab = lab
        else:
            lab = geom.site(int(lab))
        fams.append((frozenset(members), lab))
    return LabelledPartition(tuple(fams))


def _forward(cfg, ctx):
    _require(cfg, "c", "geometry")
    if not isinstance(cfg.geometry, HierGeometry) or not cfg.geometry.finite:
        raise ConfigError([("$.geometry", "forward models need a finite hierarchical geometry")])
    mode = cfg.sim("mode", "continuum")
    M = cfg.sim("M")
    if mode == "ibm" and M is None:
        raise ConfigError([("$.simulation.M", "ibm mode needs M")])
    fwd = ForwardConfig(cfg.geometry, cfg.c, tuple(cfg.measures), cfg.d0, M,
                        cfg.sim("dt", 1e-3), cfg.sim("eps", 1e-3), ctx["seed"])
    x0 = cfg.state.get("x0")
    if x0 is None:
        raise ConfigError([("$.state.x0", "forward commands need an initial field")])
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.tile(x0, (cfg.geometry.n_sites, 1))
    if mode == "ibm":
        field_ = PopulationField("ibm", np.rint(x0 * M).astype(np.int64), cfg.geometry, M)
    else:
        field_ = PopulationField("continuum", x0, cfg.geometry)
    return fwd, field_


def _cmd_forward(cfg, out, ctx):
    fwd, x0 = _forward(cfg, ctx)
    horizon = cfg.sim("horizon", 1.0)
    times = cfg.sim("times")
    path = simulate_forward(fwd, x0, horizon, times, ctx["reps"], stream(ctx["seed"], 0))
    F = path.states / (x0.M if x0.mode == "ibm" else 1.0)
    rows = []
    for r in range(F.shape[0]):
        for g, t in enumerate(path.times):
            for s in range(F.shape[2]):
                for u in range(F.shape[3]):
                    rows.append((r, float(t), s, u, float(F[r, g, s, u])))
    out.csv("snapshots.csv", ["rep", "time", "site", "type", "frequency"], rows, force=True)
    out.json("forward.json", {"mode": path.mode, "projections": path.projections, "reps": ctx["reps"]})


def _cmd_duality(cfg, out, ctx):
    fwd, x0 = _forward(cfg, ctx)
    phi = cfg.state.get("phi")
    if phi is None:
        raise ConfigError([("$.state.phi", "duality-check needs a test function table")])
    n = cfg.sim("n", 2)
    pi0 = _partition(cfg, n)
    t = cfg.sim("t", 1.0)
    rep = duality_gap(fwd, x0, pi0, np.asarray(phi, float), t, ctx["reps"],
                      dual=cfg.sim("dual", "mc"), estimator=cfg.sim("estimator", "plain"),
                      rng=stream(ctx["seed"], 0))
    data = dict(rep.__dict__)
    data["t"] = t
    out.json("duality.json", data, force=True)
    out.csv("duality.csv", ["t", "lhs", "rhs", "gap", "se"], [(float(t), rep.lhs, rep.rhs, rep.gap, rep.se)])


def _cmd_chain(cfg, out, ctx):
    _require(cfg, "c")
    j = cfg.ana("j", 2)
    if len(cfg.measures) < j + 1:
        raise ConfigError([("$.measures", "level count mismatch: chain needs measures for levels 0..j")])
    lams = cfg.measures[:j + 1]
    mu = [0.5 * lam.lam for lam in lams]
    cvals = cfg.c.head(j + 1)
    # the chain uses levels 0..j; the flow needs one more coefficient to step past j
    flow = renorm.dk_flow(CoefficientFamily.explicit(cvals, tail=cvals[-1]), CoefficientFamily.explicit(mu),
                          cfg.d0, j + 1)
    theta = cfg.state.get("theta")
    psi = cfg.state.get("psi")
    if theta is None or psi is None:
        raise ConfigError([("$.state", "chain needs theta and psi")])
    theta = np.asarray(theta, float)
    psi = np.asarray(psi, float)
    var_theta = float(theta @ psi ** 2 - (theta @ psi) ** 2)
    smp = sample_interaction_chain(j, flow.c, lams, flow.d, theta, ctx["reps"], stream(ctx["seed"], 0),
                                   cfg.sim("dt", 1e-3), cfg.sim("eps", 1e-3), cfg.sim("burn_in"))
    mean, mean_se = smp.mean(psi)
    ev, ev_se = smp.expected_variance(psi)
    rows = []
    for pos in range(j + 2):
        level = j + 1 - pos
        pred = var_theta * float(np.prod(1.0 / (1.0 + flow.m[level:j + 1])))
        rows.append((level, float(mean[pos]), float(mean_se[pos]), float(ev[pos]), float(ev_se[pos]), pred))
    out.csv("chain.csv", ["level", "mean", "mean_se", "exp_var", "exp_var_se", "exp_var_product_formula"],
            rows, force=True)


_DISPATCH = {
    "classify": _cmd_classify,
    "flow": _cmd_flow,
    "hazard": _cmd_hazard,
    "coalescent-sim": _cmd_coalescent,
    "forward-sim": _cmd_forward,
    "duality-check": _cmd_duality,
    "chain": _cmd_chain,
}


def _threads(value):
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError([("--threads", f"not an integer: {value!r}")]) from None
    if n < 1:
        raise ConfigError([("--threads", "must be at least 1")])
    return n


def run(cfg, out=None, seed=None, reps=None, threads=None):
    """Execute ``cfg``; returns (exit code, output directory, warnings).

    Files are written to a scratch directory and moved into place only
    when the command succeeds.
    """
    out_dir = Path(out or cfg.output.get("directory", "results"))
    ctx = {
        "seed": int(seed if seed is not None else cfg.sim("seed", DEFAULT_SEED)),
        "reps": int(reps if reps is not None else cfg.sim("reps", 1000)),
        "threads": _threads(threads),
        "warnings": [],
    }
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".cannings-", dir=out_dir.parent)
    try:
        writer = _Out(tmp, cfg.output.get("formats", ["csv", "json"]))
        _DISPATCH[cfg.command](cfg, writer, ctx)
        if cfg.output.get("emit_plot_scripts"):
            emit_plot_scripts(tmp)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in os.listdir(tmp):
            os.replace(os.path.join(tmp, name), out_dir / name)
    except ConfigError:
        raise
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1, out_dir, ctx["warnings"]
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    for w in ctx["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    return 0, out_dir, ctx["warnings"]


# plot scripts

def _gp_header(title, csvname, out_png):
    return (f"# plots {csvname}\n"
            "set datafile separator ','\n"
            "set key autotitle columnhead\n"
            "set terminal pngcairo size 900,600\n"
            f"set output '{out_png}'\n"
            f"set title '{title}'\n")


def emit_plot_scripts(results_dir):
    """Write gnuplot scripts for the flow, hazard and duality CSVs in ``results_dir``."""
    d = Path(results_dir)
    if not d.is_dir():
        raise ValueError("nothing to plot")
    made = []
    for f in sorted(d.glob("*.csv")):
        stem = f.stem
        if stem.startswith("flow"):
            # one script per flow CSV: d_k on a log scale, then the partial sums of m_k
            made.append(_script(d, f"{stem}.gp", _gp_header("volatility flow", f.name, f"{stem}_d.png")
                                + "set xlabel 'k'\nset logscale y\n"
                                f"plot '{f.name}' using 1:4 with lines title 'd_k'\n"
                                "unset logscale y\nset logscale x\n"
                                f"set output '{stem}_sum_m.png'\nset title 'partial sums of m_k'\n"
                                f"plot '{f.name}' using 1:5 smooth cumulative title 'sum m_k'\n"))
        elif stem == "hazard":
            made.append(_script(d, "hazard.gp", _gp_header("hazard: closed form vs Monte Carlo", f.name, "hazard.png")
                                + "set style data points\nset xtics ('first moment' 0)\nset xrange [-0.5:0.5]\n"
                                f"plot '{f.name}' every ::0::0 using (0):2 title 'closed form' pt 7, \\\n"
                                f"     '{f.name}' every ::0::0 using (0.1):3:4 with yerrorbars title 'Monte Carlo'\n"))
        elif stem == "duality":
            made.append(_script(d, "duality.gp", _gp_header("duality gap", f.name, "duality.png")
                                + "set xlabel 't'\nset ylabel 'forward - dual'\n"
                                f"plot '{f.name}' using 1:4:5 with yerrorbars title 'gap'\n"))
    if not made:
        raise ValueError("nothing to plot")
    return made


def _script(d, name, text):
    p = d / name
    p.write_text(text)
    return p


def main(argv=None):
    ap = argparse.ArgumentParser(prog="cannings-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON file or inline JSON object")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--reps", type=int)
    ap.add_argument("--threads", help=f"worker threads (default ${THREADS_ENV} or 1)")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        text = args.config
        if not text.lstrip().startswith("{"):
            try:
                text = Path(text).read_text()
            except OSError as exc:
                raise ConfigError([("$", f"cannot read config: {exc}")]) from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("$", f"malformed JSON: {exc}")]) from exc
        if isinstance(raw, dict):
            raw.setdefault("command", args.command)
            if raw["command"] != args.command:
                raise ConfigError([("$.command", f"config says {raw['command']!r}, command line {args.command!r}")])
        cfg = parse_config(raw)
        if args.reps is not None and args.reps < 1:
            raise ConfigError([("--reps", "must be at least 1")])
        code, out_dir, _ = run(cfg, args.out, args.seed, args.reps, args.threads)
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return 2
    if code == 0:
        print(out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
