"""Higgs modules, lambda-connections, twists and Hodge pairs on a chart."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .chain import ChainComplex, Span, koszul, subcomplex
from .chart_algebra import (Chart, FreeModel, Matrix, Ring, RingElement, generator_rows, mat_add,
                            mat_eq, mat_identity, mat_is_zero, mat_mul, mat_scale, mat_zero,
                            parse_kind, subcomplex_generators)


def _check_square(mats: Sequence[Matrix], m: int, ring: Ring):
    for i, a in enumerate(mats):
        if len(a) != m or any(len(row) != m for row in a):
            raise ValueError(f"component {i + 1} is not a {m}x{m} matrix")
        for row in a:
            for x in row:
                if x.ring != ring:
                    raise ValueError(f"component {i + 1} lives on the wrong ring")


class LambdaConnection:
    """lam * (coefficient derivation) + matrix part, one component per omega_j.

    For a log index the derivation is t_j d/dt_j, otherwise d/dt_j.  lam = 0
    gives a Higgs field, lam = 1 an integrable connection.
    """

    def __init__(self, chart: Chart, ring: Ring, lam: int, mats: Sequence[Matrix], check: bool = True):
        self.chart, self.ring, self.lam = chart, ring, lam % chart.p
        self.mats = [list(map(list, a)) for a in mats]
        if len(self.mats) != chart.n:
            raise ValueError("need one component per coordinate")
        self.m = len(self.mats[0]) if self.mats else 0
        _check_square(self.mats, self.m, ring)
        self._ops = None
        if check:
            self.check_integrable()

    @property
    def model(self) -> FreeModel:
        return FreeModel(self.ring, self.m)

    def matrix_part(self, j: int) -> Matrix:
        return self.mats[j]

    def component(self, j: int, vec: Sequence[RingElement]) -> List[RingElement]:
        """Apply the j-th component to a module vector."""
        out = []
        for row_i in range(self.m):
            acc = self.chart.derive(vec[row_i], j).scale(self.lam) if self.lam else self.ring.zero()
            for k in range(self.m):
                a, x = self.mats[j][row_i][k], vec[k]
                if a.terms and x.terms:
                    acc = acc + a * x
            out.append(acc)
        return out

    def operators(self) -> List[np.ndarray]:
        """Dense F_p matrices of the components on the F_p-basis e_k t^e."""
        if self._ops is not None:
            return self._ops
        model = self.model
        ops = []
        p = self.chart.p
        for j in range(self.chart.n):
            op = np.zeros((model.dim, model.dim), dtype=np.int64)
            for col, (k, e) in enumerate(model.labels):
                if self.lam and e[j] % p:
                    if self.chart.is_log(j):
                        op[col, col] += self.lam * e[j]
                    else:
                        f = list(e)
                        f[j] -= 1
                        op[model.index(k, tuple(f)), col] += self.lam * e[j]
                for row_k in range(self.m):
                    a = self.mats[j][row_k][k]
                    for g, c in a.shift(e).terms.items():
                        op[model.index(row_k, g), col] += c
            ops.append(op % p)
        self._ops = ops
        return ops

    def check_integrable(self):
        n = self.chart.n
        for i in range(n):
            for j in range(i + 1, n):
                if self.lam == 0:
                    ok = mat_eq(mat_mul(self.mats[i], self.mats[j]), mat_mul(self.mats[j], self.mats[i]))
                else:
                    a, b = self.operators()[i], self.operators()[j]
                    ok = not ((a @ b - b @ a) % self.chart.p).any()
                if not ok:
                    raise ValueError(f"integrability violated: components {i + 1} and {j + 1} do not commute")

    def complex(self) -> ChainComplex:
        return koszul(self.operators(), self.chart.p, self.model.labels, check_commute=False)

    def subcomplex(self, kind) -> Tuple[ChainComplex, Dict[int, Span], ChainComplex]:
        """(subcomplex, spans inside the full complex, full complex)."""
        full = self.complex()
        name, _ = parse_kind(kind)
        if name == "full":
            spans = {q: np.eye(full.dim(q), dtype=np.int64) for q in full.bases}
        else:
            gens = subcomplex_generators(self.chart, kind, self)
            spans = {q: generator_rows(self.chart, self.model, q, g) for q, g in gens.items()}
        sub, sp = subcomplex(full, spans, name=str(kind))
        return sub, sp, full

    def twisted(self, f: RingElement, sign: int) -> "LambdaConnection":
        return twist_exact(self, f, sign)


class HiggsModule(LambdaConnection):
    """Free module of rank m over the coarse ring with commuting theta_i."""

    def __init__(self, chart: Chart, theta: Sequence[Matrix]):
        super().__init__(chart, chart.coarse, 0, theta)

    @classmethod
    def trivial(cls, chart: Chart, m: int = 1) -> "HiggsModule":
        return cls(chart, [mat_zero(chart.coarse, m) for _ in range(chart.n)])

    @classmethod
    def constant(cls, chart: Chart, mats: Sequence[Sequence[Sequence[int]]]) -> "HiggsModule":
        ring = chart.coarse
        return cls(chart, [[[ring.const(c) for c in row] for row in a] for a in mats])

    @property
    def theta(self) -> List[Matrix]:
        return self.mats

    def has_pole(self) -> bool:
        return any(not x.divisible_by_var(j) for j in range(self.chart.r) for row in self.mats[j] for x in row)

    def level(self) -> Optional[int]:
        return nilpotency_level(self)

    def monomials(self, max_degree: Optional[int] = None) -> Dict[Tuple[int, ...], Matrix]:
        """theta^a for every exponent vector a with theta^a != 0 (a = 0 included)."""
        n, ring, m = self.chart.n, self.ring, self.m
        cap = self.chart.p if max_degree is None else max_degree
        out = {(0,) * n: mat_identity(ring, m)}
        frontier = dict(out)
        for _ in range(cap):
            nxt = {}
            for a, mat in frontier.items():
                for j in range(n):
                    b = list(a)
                    b[j] += 1
                    b = tuple(b)
                    if b in nxt or b in out:
                        continue
                    prod = mat_mul(mat, self.mats[j])
                    if not mat_is_zero(prod):
                        nxt[b] = prod
            if not nxt:
                break
            out.update(nxt)
            frontier = nxt
        return out


def nilpotency_level(E: LambdaConnection) -> Optional[int]:
    """Least l with every (l+1)-fold product of components zero; None if >= p."""
    n, p, ring, m = E.chart.n, E.chart.p, E.ring, E.m
    words = [mat_identity(ring, m)]
    for length in range(1, p + 1):
        nxt = []
        seen = []
        for w in words:
            for j in range(n):
                prod = mat_mul(w, E.mats[j])
                if not mat_is_zero(prod) and not any(mat_eq(prod, s) for s in seen):
                    seen.append(prod)
                    nxt.append(prod)
        if not nxt:
            return length - 1
        words = nxt
    return None


def twist_exact(E: LambdaConnection, f: RingElement, sign: int) -> LambdaConnection:
    """Add sign * df as a scalar 1-form to the matrix part."""
    if f.ring != E.ring:
        f = f.reindex(E.ring)
    chart = E.chart
    mats = []
    for j in range(chart.n):
        c = chart.derive(f, j).scale(sign)
        mats.append(mat_add(E.mats[j], mat_scale(mat_identity(E.ring, E.m), c)))
    cls = LambdaConnection
    return cls(chart, E.ring, E.lam, mats)


def scalar_form_twist(E: LambdaConnection, comps: Sequence[RingElement]) -> LambdaConnection:
    """Add the scalar 1-form sum_j comps[j] omega_j to the matrix part."""
    mats = [mat_add(E.mats[j], mat_scale(mat_identity(E.ring, E.m), comps[j])) for j in range(E.chart.n)]
    return LambdaConnection(E.chart, E.ring, E.lam, mats)


# ---------------------------------------------------------------- Hodge pairs

PAIR_TYPES = ("I", "I-weight", "II", "III", "IV")


@dataclass
class HodgePair:
    kind: str
    higgs_selector: object
    dr_selector: object
    higgs: LambdaConnection
    de_rham: LambdaConnection
    level: int
    info: Dict[str, object] = field(default_factory=dict)

    def higgs_complex(self):
        return self.higgs.subcomplex(self.higgs_selector)

    def de_rham_complex(self):
        return self.de_rham.subcomplex(self.dr_selector)


def build_hodge_pair(kind: str, E: HiggsModule, lifting=None, weight: Optional[int] = None,
                     selector: str = "kontsevich", fiber: int = 0, f: Optional[RingElement] = None) -> HodgePair:
    """Assemble one of the four pair types on a chart.

    Type IV is represented around one fiber of g = t_1...t_s: the selector is
    'kontsevich' or 'weight(j)', and the differentials carry the formal
    g-transform twist (see deform.formal_g_transform).
    """
    from .cartier import LiftingDatum, inverse_cartier_local

    chart = E.chart
    if kind not in PAIR_TYPES:
        raise ValueError(f"unknown pair type {kind!r}")
    lvl = nilpotency_level(E)
    if lvl is None or lvl > chart.p - 1:
        raise ValueError("level bound violated: need level <= p-1")
    lifting = lifting or LiftingDatum.standard(chart)
    H = inverse_cartier_local(E, lifting)
    if kind == "I":
        return HodgePair(kind, "full", "full", E, H, lvl)
    if kind == "I-weight":
        if weight is None:
            raise ValueError("weight pairs need the weight index")
        if E.has_pole():
            raise ValueError("pole violation: theta has a log pole along D")
        sel = ("weight", weight)
        return HodgePair(kind, sel, sel, E, H, lvl)
    if kind == "II":
        return HodgePair(kind, "intersection", "intersection", E, H, lvl)
    if chart.s is None:
        raise ValueError("types III and IV need the Kontsevich parameter s")
    if kind == "III":
        return HodgePair(kind, "kontsevich", "kontsevich", E, H, lvl)
    # type IV
    if lvl != 0:
        raise ValueError("type IV needs theta = 0")
    from .deform import formal_g_transform
    sel = selector if selector == "kontsevich" else ("weight", weight if weight is not None else 0)
    pair = HodgePair(kind, sel, sel, E, H, lvl, {"fiber": fiber % chart.p})
    return formal_g_transform(pair, fiber, f=f, lifting=lifting)
