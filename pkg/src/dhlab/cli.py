"""Batch driver: parse instance files, run verification plans, emit deterministic reports.

Instance files are JSON.  Polynomials are lists of [coefficient, [exponents]]
terms, matrices are lists of rows of polynomials.  See README.md for the
field-by-field schema.

Exit codes: 0 every check passed, 1 some check failed, 2 input error.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import random
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence


from . import __version__
from .cartier import LiftingDatum, LiftingFamily, fstar_complex, inverse_cartier_local, kv_subcomplex, local_cartier_qis
from .chain import Verdict, betti, homology_ranks
from .chart_algebra import Chart, OrderedSplitting, RingElement, decode_element, mat_identity
from .deform import artin_hasse_product, twist_table, twisted_cartier_qis
from .higgs import HiggsModule, build_hodge_pair, nilpotency_level
from . import homotopy as hz

SCHEMA_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent instance; carries a JSON-path location."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location, self.message = location, message


class _At:
    """Context manager turning ValueError/TypeError/KeyError into InputError at a location."""

    def __init__(self, location: str):
        self.location = location

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is None or isinstance(exc, InputError):
            return False
        if isinstance(exc, (ValueError, TypeError, KeyError, IndexError, ZeroDivisionError)):
            msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
            if isinstance(exc, KeyError):
                msg = f"missing field {msg!r}"
            raise InputError(self.location, str(msg)) from exc
        return False


# ---------------------------------------------------------------- instance parsing

@dataclass
class Instance:
    name: str
    chart: Chart
    E: HiggsModule
    family: LiftingFamily
    splittings: List[OrderedSplitting]
    f: Optional[RingElement]
    pair: Optional[dict]
    plan: List[dict]
    raw: dict
    seed: Optional[int] = None


def _poly(ring, data, loc: str) -> RingElement:
    with _At(loc):
        if not isinstance(data, list):
            raise ValueError("polynomial must be a list of [coefficient, exponents] terms")
        return decode_element(ring, data)


def _matrix(ring, data, loc: str, m: Optional[int] = None):
    with _At(loc):
        if not isinstance(data, list) or any(not isinstance(row, list) for row in data):
            raise ValueError("matrix must be a list of rows")
        if m is not None and (len(data) != m or any(len(row) != m for row in data)):
            raise ValueError(f"expected a {m}x{m} matrix")
    return [[_poly(ring, x, f"{loc}[{i}][{j}]") for j, x in enumerate(row)] for i, row in enumerate(data)]


def parse_chart(data: dict, loc: str = "$.chart") -> Chart:
    with _At(loc):
        if not isinstance(data, dict):
            raise ValueError("chart must be an object")
        unknown = set(data) - {"p", "n", "r", "M", "s"}
        if unknown:
            raise ValueError(f"unknown chart fields {sorted(unknown)}")
        return Chart(int(data["p"]), int(data["n"]), int(data.get("r", 0)), int(data.get("M", 1)),
                     None if data.get("s") is None else int(data["s"]))


def parse_higgs(chart: Chart, data: dict, loc: str = "$.higgs") -> HiggsModule:
    with _At(loc):
        m = int(data["rank"])
        theta = data.get("theta")
        if theta is None:
            return HiggsModule.trivial(chart, m)
        if len(theta) != chart.n:
            raise ValueError(f"need {chart.n} theta components, got {len(theta)}")
    mats = [_matrix(chart.coarse, t, f"{loc}.theta[{i}]", m) for i, t in enumerate(theta)]
    with _At(f"{loc}.theta"):
        return HiggsModule(chart, mats)


def parse_liftings(chart: Chart, data, loc: str = "$.liftings") -> LiftingFamily:
    with _At(loc):
        data = data or [{}]
        if not isinstance(data, list):
            raise ValueError("liftings must be a list")
    members = []
    for a, item in enumerate(data):
        here = f"{loc}[{a}]"
        with _At(here):
            w = [_poly(chart.fine, x, f"{here}.w[{i}]") for i, x in enumerate(item.get("w", []))]
            g = [_poly(chart.fine, x, f"{here}.g[{i}]") for i, x in enumerate(item.get("g", []))]
            members.append(LiftingDatum(chart, w, g))
    with _At(loc):
        return LiftingFamily(members)


def parse_splittings(chart: Chart, data, loc: str = "$.splittings") -> List[OrderedSplitting]:
    data = data or [{"D": [1] * chart.n}]
    out = []
    for k, item in enumerate(data):
        here = f"{loc}[{k}]"
        basis = None
        if item.get("basis") is not None:
            basis = _matrix(chart.coarse, item["basis"], f"{here}.basis", chart.n)
        with _At(here):
            out.append(OrderedSplitting(chart, item["D"], basis))
    return out


def parse_instance(data: Any) -> Instance:
    with _At("$"):
        if not isinstance(data, dict):
            raise ValueError("instance must be a JSON object")
        version = data.get("schema", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {version}")
        name = str(data.get("name", "unnamed"))
    chart = parse_chart(data.get("chart"))
    E = parse_higgs(chart, data.get("higgs", {"rank": 1}))
    family = parse_liftings(chart, data.get("liftings"))
    splittings = parse_splittings(chart, data.get("splittings"))
    f = _poly(chart.fine, data["f"], "$.f") if data.get("f") is not None else None
    pair = data.get("pair")
    plan = data.get("plan", [])
    with _At("$.plan"):
        if not isinstance(plan, list):
            raise ValueError("plan must be a list")
        for i, step in enumerate(plan):
            if not isinstance(step, dict) or step.get("check") not in CHECKS:
                raise InputError(f"$.plan[{i}]", f"unknown check {step.get('check') if isinstance(step, dict) else step!r}")
    return Instance(name, chart, E, family, splittings, f, pair, plan, data, data.get("seed"))


def digest(data: Any) -> str:
    canon = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- checks

def _aggregate(name: str, verdicts: Sequence[Verdict]) -> Verdict:
    bad = [v for v in verdicts if not v.ok]
    if bad:
        return Verdict(name, False, bad[0].degree, f"{bad[0].claim}: {bad[0].witness}",
                       {"checked": len(verdicts), "failed": len(bad)})
    return Verdict(name, True, detail={"checked": len(verdicts)})


def _splitting(inst: Instance, params: dict) -> OrderedSplitting:
    k = int(params.get("splitting", 0))
    if not 0 <= k < len(inst.splittings):
        raise ValueError(f"splitting index {k} out of range")
    return inst.splittings[k]


def _tuples(inst: Instance, r: int):
    return itertools.combinations(range(len(inst.family)), r + 1)


def _need_f(inst: Instance) -> RingElement:
    if inst.f is None:
        raise ValueError("this check needs the function f")
    return inst.f


def check_cartier_qis(inst: Instance, params: dict) -> List[Verdict]:
    kind = _selector(params.get("kind", "full"))
    _, v0, v1 = local_cartier_qis(inst.E, None, kind)
    out = [v0, v1]
    if kind == "full":
        H = inverse_cartier_local(inst.E, LiftingDatum.standard(inst.chart))
        hb, eb = betti(H.complex()), betti(inst.E.complex())
        bad = [q for q in sorted(eb) if hb.get(q, 0) != eb[q]]
        out.append(Verdict("dim H^q(F_* de Rham) = dim H^q(Higgs)", not bad, bad[0] if bad else None,
                           None if not bad else f"{hb.get(bad[0], 0)} vs {eb[bad[0]]}"))
    return out


def check_kv_acyclic(inst: Instance, params: dict) -> List[Verdict]:
    kind = _selector(params.get("kind", "full"))
    graded = fstar_complex(inst.E, None, kind)
    strata = params.get("strata", "nonzero")
    if strata == "nonzero":
        vs = [v for v in graded.strata() if any(v)]
    else:
        vs = [tuple(int(x) for x in v) for v in strata]
    out = []
    for v in vs:
        C = kv_subcomplex(graded, v)
        nonzero = [(q, h) for q, _, _, h in homology_ranks(C) if h]
        out.append(Verdict(f"K_v acyclic v={list(v)}", not nonzero, nonzero[0][0] if nonzero else None,
                           None if not nonzero else f"H^{nonzero[0][0]} has dimension {nonzero[0][1]}"))
    return [_aggregate(f"K_v acyclic ({len(vs)} strata, {kind})", out)] if params.get("aggregate", False) else out


def check_artin_hasse(inst: Instance, params: dict) -> List[Verdict]:
    return [artin_hasse_product(inst.chart, _need_f(inst)).check()]


def check_twisted_cartier(inst: Instance, params: dict) -> List[Verdict]:
    return twisted_cartier_qis(inst.E, _need_f(inst), _selector(params.get("kind", "full"))).verdicts


def check_twist_table(inst: Instance, params: dict) -> List[Verdict]:
    return twist_table(inst.E, _need_f(inst), int(params.get("weight", 0)))


def _pair(inst: Instance):
    if not inst.pair:
        raise ValueError("this check needs a pair")
    pr = inst.pair
    return build_hodge_pair(pr["type"], inst.E, weight=pr.get("weight"), selector=pr.get("selector", "kontsevich"),
                            fiber=int(pr.get("fiber", 0)))


def check_pair_isomorphisms(inst: Instance, params: dict) -> List[Verdict]:
    pair = _pair(inst)
    return list(pair.info.get("isomorphisms", []))


def check_infty_homotopy(inst: Instance, params: dict) -> List[Verdict]:
    data = hz.HomotopyData(inst.E, inst.family, _splitting(inst, params))
    cache = hz.PhiCache(data)
    out = []
    for r in params.get("r", [1, 2]):
        vs = [hz.verify_infty_homotopy(data, tup, s, cache)
              for tup in _tuples(inst, r) for s in range(0, inst.chart.n - r + 2)]
        out.append(_aggregate(f"infinity-homotopy relation r={r}", vs))
    return out


def check_phi_tilde(inst: Instance, params: dict) -> List[Verdict]:
    data = hz.HomotopyData(inst.E, inst.family, _splitting(inst, params))
    out = []
    for r in params.get("r", [0, 1, 2]):
        vs = [hz.verify_phi_tilde(data, tup, s) for tup in _tuples(inst, r) for s in range(0, inst.chart.n - r + 1)]
        out.append(_aggregate(f"phi = phi~ o sec r={r}", vs))
    return out


def check_basis_invariance(inst: Instance, params: dict) -> List[Verdict]:
    sp = _splitting(inst, params)
    Q = _matrix(inst.chart.coarse, params["Q"], "Q", inst.chart.n)
    out = []
    for r in params.get("r", [1]):
        vs = [hz.verify_basis_invariance(inst.E, inst.family, sp, Q, tup, s)
              for tup in _tuples(inst, r) for s in range(0, inst.chart.n - r + 1)]
        out.append(_aggregate(f"basis invariance r={r}", vs))
    return out


def check_splitting_homotopy(inst: Instance, params: dict) -> List[Verdict]:
    sp = _splitting(inst, params)
    o = int(params.get("o", 1))
    merged = sp.merge(o)
    d1 = hz.HomotopyData(inst.E, inst.family, sp)
    d2 = hz.HomotopyData(inst.E, inst.family, merged)
    caches = (hz.PhiCache(d1), hz.PhiCache(d2), hz.PsiCache(d1, o))
    out = []
    for r in params.get("r", [1, 2]):
        vs = [hz.verify_splitting_homotopy(inst.E, inst.family, sp, o, tup, s, 0, caches)
              for tup in _tuples(inst, r) for s in range(-1, inst.chart.n)]
        out.append(_aggregate(f"splitting homotopy o={o} r={r}", vs))
    return out


def check_cech(inst: Instance, params: dict) -> List[Verdict]:
    data = hz.HomotopyData(inst.E, inst.family, _splitting(inst, params))
    asm = hz.cech_assemble(data, _selector(params.get("selector", "full")))
    return hz.certify_assembly(asm)


def check_subcomplex_compat(inst: Instance, params: dict) -> List[Verdict]:
    sp = _splitting(inst, params)
    relation = params.get("relation", "auto")
    E = inst.E
    selector = params.get("selector")
    if params.get("pair", False):
        pair = _pair(inst)
        selector = pair.higgs_selector if selector is None else selector
        E = hz.higgs_for_pair(pair, inst.family)
        if pair.kind == "IV" and relation == "auto":
            relation = "g"
    selector = _selector(selector or "full")
    data = hz.HomotopyData(E, inst.family, sp)
    o = params.get("o")
    return [hz.verify_subcomplex_compat(data, selector, None if o is None else int(o), relation=relation)]


def check_two_term(inst: Instance, params: dict) -> List[Verdict]:
    chain = [inst.splittings[int(k)] for k in params.get("chain", [0])]
    out = []
    for a in params.get("a", [0, 1]):
        vs = hz.verify_two_term(inst.E, inst.family, chain, int(a), _selector(params.get("selector", "full")))
        out.append(_aggregate(f"two-term agreement a={a}", vs))
    return out


def check_kunneth(inst: Instance, params: dict) -> List[Verdict]:
    other = params["other"]
    chart2 = parse_chart(other["chart"], "other.chart")
    E2 = None if chart2.n == 0 else parse_higgs(chart2, other.get("higgs", {"rank": 1}), "other.higgs")
    fam2 = parse_liftings(chart2, other.get("liftings"), "other.liftings")
    return [hz.kunneth_verify(inst.E, inst.family, E2, fam2)]


def _selector(sel):
    if isinstance(sel, list):
        return tuple(sel)
    return sel


CHECKS: Dict[str, Callable[[Instance, dict], List[Verdict]]] = {
    "cartier_qis": check_cartier_qis,
    "kv_acyclic": check_kv_acyclic,
    "artin_hasse": check_artin_hasse,
    "twisted_cartier": check_twisted_cartier,
    "twist_table": check_twist_table,
    "pair_isomorphisms": check_pair_isomorphisms,
    "infty_homotopy": check_infty_homotopy,
    "phi_tilde": check_phi_tilde,
    "basis_invariance": check_basis_invariance,
    "splitting_homotopy": check_splitting_homotopy,
    "cech": check_cech,
    "subcomplex_compat": check_subcomplex_compat,
    "two_term": check_two_term,
    "kunneth": check_kunneth,
}

# the identity each check exercises, recorded in every report row
IDENTITIES = {
    "cartier_qis": "local Cartier quasi-isomorphism onto the v=0 stratum",
    "kv_acyclic": "acyclicity of the v != 0 Koszul strata",
    "artin_hasse": "dG = G u for the Artin-Hasse unit",
    "twisted_cartier": "twisted Cartier composite is a quasi-isomorphism",
    "twist_table": "exponential twisting commutes with taking subcomplexes",
    "pair_isomorphisms": "formal g-transform isomorphisms",
    "infty_homotopy": "infinity-homotopy relation",
    "phi_tilde": "base-free lift composed with the section",
    "basis_invariance": "independence of the adapted basis",
    "splitting_homotopy": "splitting-comparison homotopy identity",
    "cech": "Cech assembly is a quasi-isomorphism",
    "subcomplex_compat": "higher homotopies preserve subcomplexes",
    "two_term": "two-term truncation comparison",
    "kunneth": "Kunneth factorization through the cup product",
}


# ---------------------------------------------------------------- reports

def _run_step(inst: Instance, i: int, step: dict) -> List[dict]:
    name = step["check"]
    params = step.get("params", {}) or {}
    with _At(f"$.plan[{i}]"):
        verdicts = CHECKS[name](inst, params)
    return [{"check": name, "identity": IDENTITIES[name], "claim": v.claim,
             "degree": None if v.degree is None else int(v.degree),
             "status": "pass" if v.ok else "fail", "witness": v.witness} for v in verdicts]


def _homology(inst: Instance) -> dict:
    H = inverse_cartier_local(inst.E, inst.family[0])
    return {"higgs": {str(q): h for q, h in betti(inst.E.complex()).items()},
            "de_rham": {str(q): h for q, h in betti(H.complex()).items()}}


def build_report(inst: Instance, threads: int = 1, timing: bool = False) -> dict:
    t0 = time.perf_counter()
    jobs = list(enumerate(inst.plan))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ij: _run_step(inst, *ij), jobs))
    else:
        parts = [_run_step(inst, i, step) for i, step in jobs]
    rows = [row for part in parts for row in part]
    failed = sum(row["status"] == "fail" for row in rows)
    report = {
        "tool": f"dhlab {__version__}",
        "instance": inst.name,
        "digest": digest(inst.raw),
        "homology": _homology(inst),
        "rows": rows,
        "summary": {"passed": len(rows) - failed, "failed": failed},
        "status": "fail" if failed else "pass",
    }
    if timing:
        report["seconds"] = round(time.perf_counter() - t0, 3)
    return report


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2) + "\n"
    lines = [f"{report['tool']}  instance {report['instance']}  digest {report['digest']}"]
    for side in ("higgs", "de_rham"):
        h = report["homology"][side]
        lines.append(f"  H^* {side:8s} " + " ".join(f"{q}:{h[q]}" for q in sorted(h, key=int)))
    for row in report["rows"]:
        deg = "" if row["degree"] is None else f" (degree {row['degree']})"
        wit = "" if row["witness"] is None else f"  witness: {row['witness']}"
        lines.append(f"  [{row['status']}] {row['claim']}{deg}{wit}")
    s = report["summary"]
    lines.append(f"  {s['passed']} passed, {s['failed']} failed")
    if "seconds" in report:
        lines.append(f"  {report['seconds']} s")
    return "\n".join(lines) + "\n"


def load(path: str) -> Instance:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(path, f"cannot read file ({exc.strerror})")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg)
    return parse_instance(data)


def run(path: str, fmt: str = "text", threads: int = 1, timing: bool = False):
    """(exit status, rendered report or diagnostic)."""
    try:
        inst = load(path)
        report = build_report(inst, threads, timing)
    except InputError as exc:
        return 2, f"input error at {exc.location}: {exc.message}\n"
    return (1 if report["status"] == "fail" else 0), render(report, fmt)


# ---------------------------------------------------------------- corpus generation

PROFILES: Dict[str, dict] = {
    "smoke": {"p": [3], "n": [1], "M": [1], "rank": [1, 2], "level": 1, "liftings": [2], "count": 4,
              "adapted": False, "checks": ["cartier_qis", "kv_acyclic", "infty_homotopy", "phi_tilde", "cech"]},
    "homotopy": {"p": [3, 5], "n": [1, 2], "M": [1], "rank": [1, 2, 3], "level": 2, "liftings": [2, 3],
                 "count": 50, "adapted": True,
                 "checks": ["infty_homotopy", "phi_tilde", "basis_invariance", "splitting_homotopy", "two_term"]},
    "kontsevich": {"p": [5], "n": [2], "M": [1, 2], "rank": [1, 2], "level": 1, "liftings": [2, 3], "count": 12,
                   "adapted": True, "kontsevich": True, "checks": ["subcomplex_compat"]},
}


def _rand_poly(ring, rng: random.Random, terms: int, max_deg: int, no_constant: bool = False) -> list:
    mons = [e for e in ring.monomials() if sum(e) <= max_deg and not (no_constant and not any(e))]
    out = {}
    for _ in range(terms):
        e = rng.choice(mons)
        out[e] = (out.get(e, 0) + rng.randrange(1, ring.p)) % ring.p
    return RingElement(ring, out).encode()


def _const(c: int, n: int) -> list:
    return [[c, [0] * n]] if c else []


def _nilpotent_theta(chart: Chart, rng: random.Random, m: int, level: int, pole_free: bool = False) -> list:
    """theta_i = sum_k c_ik(t) N^k for one strictly upper triangular N: the components commute.

    pole_free multiplies the coefficients of log components by t_i.
    """
    ring = chart.coarse
    N = [[ring.zero() for _ in range(m)] for _ in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < 0.7 or j == i + 1:
                N[i][j] = RingElement(ring, {(0,) * chart.n: rng.randrange(1, chart.p)})
    powers = [mat_identity(ring, m)]
    for _ in range(level):
        prev = powers[-1]
        powers.append([[sum((prev[i][k] * N[k][j] for k in range(m)), ring.zero()) for j in range(m)]
                       for i in range(m)])
    theta = []
    for i in range(chart.n):
        acc = [[ring.zero() for _ in range(m)] for _ in range(m)]
        for k in range(1, level + 1):
            c = decode_element(ring, _rand_poly(ring, rng, 2, 1))
            if pole_free and chart.is_log(i):
                c = c * ring.var(i)
            acc = [[acc[i][j] + c * powers[k][i][j] for j in range(m)] for i in range(m)]
        theta.append([[x.encode() for x in row] for row in acc])
    return theta


def _block_map(rng: random.Random, n: int, beta: int) -> List[int]:
    cuts = sorted(rng.sample(range(1, n), beta - 1)) if beta > 1 else []
    D, b = [], 1
    for i in range(n):
        if b - 1 < len(cuts) and i == cuts[b - 1]:
            b += 1
        D.append(b)
    return D


def _unipotent(chart: Chart, rng: random.Random, D: Optional[List[int]] = None) -> list:
    """I + random constants above the diagonal (inside blocks when D is given)."""
    n = chart.n
    rows = [[_const(1, n) if i == j else [] for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if (D is None or D[i] == D[j]) and rng.random() < 0.6:
                rows[i][j] = _const(rng.randrange(1, chart.p), n)
    return rows


def _liftings(chart: Chart, rng: random.Random, L: int, preserve_g: bool) -> list:
    out = [{}]
    for _ in range(L - 1):
        w = [_rand_poly(chart.fine, rng, 2, 2) for _ in range(chart.r)]
        if preserve_g and chart.s:
            rest = sum((decode_element(chart.fine, x) for x in w[1:chart.s]), chart.fine.zero())
            w[0] = (chart.fine.zero() - rest).encode()
        g = [_rand_poly(chart.fine, rng, 2, 2) for _ in range(chart.n - chart.r)]
        out.append({"w": w, "g": g})
    return out


def _plan(chart: Chart, params: dict, rng: random.Random, D: List[int], level: int, L: int, E: HiggsModule) -> list:
    p = chart.p
    beta = max(D)
    ranks = [D.count(b) for b in range(1, beta + 1)]
    rmax = [r for r in (1, 2) if r < L]
    plan = []
    for name in params["checks"]:
        if name == "infty_homotopy":
            plan.append({"check": name, "params": {"r": rmax}})
        elif name == "phi_tilde":
            plan.append({"check": name, "params": {"r": [0] + rmax}})
        elif name == "basis_invariance":
            plan.append({"check": name, "params": {"r": rmax[:1], "Q": _unipotent(chart, rng, D)}})
        elif name in ("splitting_homotopy", "two_term"):
            if beta < 2 or not rmax:
                continue
            o = rng.randrange(1, beta)
            merged = ranks[o - 1] + ranks[o]
            if max(ranks + [merged]) >= p - level:
                continue
            if name == "splitting_homotopy":
                plan.append({"check": name, "params": {"o": o, "r": rmax}})
            elif level <= p - 3:
                plan.append({"check": name, "params": {"chain": [0, 1], "a": [0, 1]}})
        elif name == "cech":
            plan.append({"check": name, "params": {}})
        elif name in ("cartier_qis", "kv_acyclic"):
            plan.append({"check": name, "params": {}})
        elif name == "subcomplex_compat":
            plan.append({"check": name, "params": {"splitting": 1, "selector": "kontsevich", "o": 1}})
            plan.append({"check": name, "params": {"splitting": 2, "selector": "intersection", "o": 1}})
            if not E.has_pole():
                plan.append({"check": name, "params": {"splitting": 2, "selector": ["weight", 1], "o": 1}})
            if level == 0:
                plan.append({"check": name, "params": {"splitting": 1, "pair": True, "o": 1}})
                plan.append({"check": "pair_isomorphisms", "params": {}})
    return plan


def gen_corpus(params: dict, seed: int) -> List[dict]:
    """Seeded random instances; every one passes the constructor checks."""
    params = dict(params)
    ps = params["p"]
    level = int(params["level"])
    if any(level >= p for p in ps):
        raise ValueError(f"infeasible parameters: level budget {level} must be < p")
    rng = random.Random(seed)
    out = []
    for idx in range(int(params["count"])):
        p = rng.choice(ps)
        n = rng.choice(params["n"])
        M = rng.choice(params["M"])
        kont = params.get("kontsevich", False)
        r = n if kont else rng.randrange(0, n + 1)
        s = rng.randrange(1, r + 1) if kont else None
        chart = Chart(p, n, r, M, s)
        m = rng.choice(params["rank"])
        lvl = min(level, m - 1, p - 2)
        lvl = rng.randrange(0, lvl + 1)
        pole_free = kont and rng.random() < 0.5
        theta = _nilpotent_theta(chart, rng, m, lvl, pole_free) if lvl else None
        L = rng.choice(params["liftings"])
        beta = rng.randrange(1, n + 1)
        D = _block_map(rng, n, beta)
        splittings = [{"D": D, "basis": _unipotent(chart, rng) if params.get("adapted") and rng.random() < 0.5 else None}]
        if beta >= 2:
            first = splittings[0]
            o = 1
            merged = [x if x <= o else x - 1 for x in D]
            splittings.append({"D": merged, "basis": first["basis"]})
        if kont:
            # g-adapted basis: omega'_1 = dlog g; plus coordinate forms split one per block
            P = [[_const(1, n) if i == j else [] for j in range(n)] for i in range(n)]
            for k in range(s):
                P[k][0] = _const(1, n)
            splittings = [{"D": [1] * n, "basis": None}, {"D": [1] + [2] * (n - 1), "basis": P},
                          {"D": list(range(1, n + 1)), "basis": None}]
        inst = {
            "schema": SCHEMA_VERSION,
            "name": f"{params.get('name', 'corpus')}-{seed}-{idx:03d}",
            "seed": seed,
            "chart": {"p": p, "n": n, "r": r, "M": M, "s": s},
            "higgs": {"rank": m, "theta": theta},
            "liftings": _liftings(chart, rng, L, kont),
            "splittings": splittings,
        }
        parsed = parse_instance(inst)
        lv = nilpotency_level(parsed.E)
        if kont and lv == 0:
            sel = rng.choice(["kontsevich", "weight"])
            inst["pair"] = {"type": "IV", "selector": sel, "weight": 1}
        inst["plan"] = _plan(chart, params, rng, D, lv, L, parsed.E)
        # the splitting_homotopy / two_term steps refer to splittings[0] and its merge
        if not kont and beta >= 2:
            o_used = [st["params"]["o"] for st in inst["plan"] if st["check"] == "splitting_homotopy"]
            o = o_used[0] if o_used else 1
            inst["splittings"][1] = {"D": [x if x <= o else x - 1 for x in D], "basis": splittings[0]["basis"]}
        out.append(inst)
    return out


def profile_params(profile: str, overrides: Sequence[str] = ()) -> dict:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    params = dict(PROFILES[profile], name=profile)
    for item in overrides:
        key, _, val = item.partition("=")
        if key not in params:
            raise ValueError(f"unknown profile parameter {key!r}")
        val = json.loads(val)
        params[key] = val if isinstance(val, list) or not isinstance(params[key], list) else [val]
    return params


# ---------------------------------------------------------------- entry point

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DHLAB_THREADS", "1")))
    except ValueError:
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="dhlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    v = sub.add_parser("verify", help="run the verification plan of instance files")
    v.add_argument("files", nargs="+")
    v.add_argument("--format", choices=["text", "json"], default="text")
    v.add_argument("--timing", action="store_true", help="add wall-clock time (breaks byte stability)")
    rp = sub.add_parser("report", help="emit the full report of one instance")
    rp.add_argument("file")
    rp.add_argument("--format", choices=["text", "json"], default="json")
    rp.add_argument("--out")
    g = sub.add_parser("gen", help="generate a seeded random corpus")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--profile", default="smoke")
    g.add_argument("--set", action="append", default=[], metavar="KEY=JSON")
    g.add_argument("--out", default="corpus")
    args = ap.parse_args(argv)

    if args.cmd == "gen":
        try:
            corpus = gen_corpus(profile_params(args.profile, args.set), args.seed)
        except (ValueError, InputError) as exc:
            sys.stderr.write(f"input error: {exc}\n")
            return 2
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for inst in corpus:
            (out / f"{inst['name']}.json").write_text(json.dumps(inst, sort_keys=True, indent=1) + "\n")
        sys.stdout.write(f"wrote {len(corpus)} instances to {out}  digest {digest(corpus)}\n")
        return 0

    if args.cmd == "report":
        code, text = run(args.file, args.format, _threads())
        if code == 2:
            sys.stderr.write(text)
            return 2
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return code

    worst = 0
    for path in args.files:
        code, text = run(path, args.format, _threads(), args.timing)
        (sys.stderr if code == 2 else sys.stdout).write(text)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
