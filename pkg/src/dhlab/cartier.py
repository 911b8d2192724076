"""Frobenius liftings, the local inverse Cartier transform and the v-strata.

A lifting is stored through its mod-p shadow: w_i for a log coordinate
(F(t_i) = t_i^p (1 + p w_i)) and g_i for the others (F(t_i) = t_i^p + p g_i).
Only the induced maps zeta and h are ever used.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .chain import ChainComplex, ChainMap, Span, Verdict, certify, koszul, matmul_mod
from .chart_algebra import (Chart, FreeModel, Idx, LogForm, Matrix, RingElement, d_function, generator_rows,
                            mat_add, mat_exp, mat_frobenius, mat_identity,
                            mat_scale, mat_zero, parse_kind, subcomplex_generators, subsets, weight_member)
from .higgs import HiggsModule, LambdaConnection, nilpotency_level

VForm = Dict[Idx, List[RingElement]]


# ---------------------------------------------------------------- liftings

class LiftingDatum:
    def __init__(self, chart: Chart, w: Sequence[RingElement] = (), g: Sequence[RingElement] = ()):
        fine = chart.fine
        w = list(w) or [fine.zero()] * chart.r
        g = list(g) or [fine.zero()] * (chart.n - chart.r)
        if len(w) != chart.r or len(g) != chart.n - chart.r:
            raise ValueError("lifting needs one w per log coordinate and one g per other coordinate")
        for x in w + g:
            if x.ring != fine:
                raise ValueError("lifting shadows live on the fine ring")
        self.chart, self.w, self.g = chart, w, g

    @classmethod
    def standard(cls, chart: Chart) -> "LiftingDatum":
        return cls(chart)

    def is_standard(self) -> bool:
        return all(x.is_zero() for x in self.w + self.g)

    def shadow(self, i: int) -> RingElement:
        return self.w[i] if self.chart.is_log(i) else self.g[i - self.chart.r]

    def zeta(self, i: int) -> LogForm:
        """zeta(F^* omega_i)."""
        chart = self.chart
        fine = chart.fine
        if chart.is_log(i):
            base = LogForm(chart, 1, {(i,): fine.one()})
        else:
            e = [0] * chart.n
            e[i] = chart.p - 1
            base = LogForm(chart, 1, {(i,): fine.monomial(e)})
        return base + d_function(chart, self.shadow(i))

    def encode(self) -> dict:
        return {"w": [x.encode() for x in self.w], "g": [x.encode() for x in self.g]}

    def __eq__(self, other):
        return isinstance(other, LiftingDatum) and self.w == other.w and self.g == other.g


def h_shadow(a: LiftingDatum, b: LiftingDatum, i: int) -> RingElement:
    """h_{ab}(F^* omega_i) = (F_b^* - F_a^*)/p on the i-th coordinate."""
    return b.shadow(i) - a.shadow(i)


class LiftingFamily:
    def __init__(self, members: Sequence[LiftingDatum]):
        members = list(members)
        if not members:
            raise ValueError("empty lifting family")
        if any(m.chart != members[0].chart for m in members):
            raise ValueError("chart mismatch inside lifting family")
        self.members = members
        self.chart = members[0].chart

    def __len__(self):
        return len(self.members)

    def __getitem__(self, k):
        return self.members[k]

    def h(self, a: int, b: int, i: int) -> RingElement:
        return h_shadow(self.members[a], self.members[b], i)

    def zeta(self, a: int, i: int) -> LogForm:
        return self.members[a].zeta(i)


# ---------------------------------------------------------------- inverse Cartier

def _require_level(E: HiggsModule):
    lvl = nilpotency_level(E)
    if lvl is None or lvl > E.chart.p - 1:
        raise ValueError("level bound violated: need level <= p-1")
    return lvl


def connection_matrices(E: HiggsModule, F: LiftingDatum) -> List[Matrix]:
    """Matrix parts of nabla_can + sum_i F^*theta_i zeta(F^* omega_i)."""
    chart = E.chart
    fine = chart.fine
    ftheta = [mat_frobenius(t, fine) for t in E.theta]
    mats = [mat_zero(fine, E.m) for _ in range(chart.n)]
    for i in range(chart.n):
        z = F.zeta(i)
        for (j,), c in z.coeffs.items():
            mats[j] = mat_add(mats[j], mat_scale(ftheta[i], c))
    return mats


def inverse_cartier_local(E: HiggsModule, F: LiftingDatum, check_level: bool = True) -> LambdaConnection:
    if check_level:
        _require_level(E)
    return LambdaConnection(E.chart, E.chart.fine, 1, connection_matrices(E, F))


def transition_matrix(E: HiggsModule, Fa: LiftingDatum, Fb: LiftingDatum) -> Matrix:
    """G_ab = exp(sum_i h_ab(F^* omega_i) F^* theta_i), a map H_b -> H_a."""
    _require_level(E)
    chart = E.chart
    fine = chart.fine
    x = mat_zero(fine, E.m)
    for i in range(chart.n):
        h = h_shadow(Fa, Fb, i)
        if h.terms:
            x = mat_add(x, mat_scale(mat_frobenius(E.theta[i], fine), h))
    return mat_exp(x, chart.p)


def module_operator(model: FreeModel, G: Matrix) -> np.ndarray:
    """F_p matrix of v -> G v on the F_p-basis of R^m."""
    op = np.zeros((model.dim, model.dim), dtype=np.int64)
    for col, (k, e) in enumerate(model.labels):
        for row_k in range(model.m):
            for g, c in G[row_k][k].shift(e).terms.items():
                op[model.index(row_k, g), col] += c
    return op % model.ring.p


def formwise(op: np.ndarray, n: int) -> Dict[int, np.ndarray]:
    """Block-diagonal extension of a module operator to every form degree."""
    return {q: np.kron(np.eye(len(subsets(n, q)), dtype=np.int64), op) for q in range(n + 1)}


def transition_iso(E: HiggsModule, Fa: LiftingDatum, Fb: LiftingDatum) -> Tuple[Matrix, ChainMap]:
    """G_ab as a chain map from the de Rham complex of F_b to that of F_a."""
    G = transition_matrix(E, Fa, Fb)
    Ha = inverse_cartier_local(E, Fa)
    Hb = inverse_cartier_local(E, Fb)
    op = module_operator(Hb.model, G)
    Ca, Cb = Ha.complex(), Hb.complex()
    return G, ChainMap(Cb, Ca, formwise(op, E.chart.n))


# ---------------------------------------------------------------- coarse-linear maps into the fine model

def extend_coarse_linear(chart: Chart, m: int, q_src: int, q_tgt: int,
                         images: Dict[Tuple[int, Idx], VForm]) -> np.ndarray:
    """F_p matrix of the A'-linear map with e_k omega_I -> images[(k, I)].

    Source basis: the coarse model in degree q_src; target: the fine model in
    degree q_tgt.  t'^b acts on the target as multiplication by t^(p b).
    """
    coarse, fine = FreeModel(chart.coarse, m), FreeModel(chart.fine, m)
    src_sub, tgt_sub = subsets(chart.n, q_src), subsets(chart.n, q_tgt)
    out = np.zeros((len(tgt_sub) * fine.dim, len(src_sub) * coarse.dim), dtype=np.int64)
    p = chart.p
    tpos = {J: i for i, J in enumerate(tgt_sub)}
    for si, I in enumerate(src_sub):
        for k in range(m):
            img = images.get((k, I))
            if not img:
                continue
            entries = []
            for J, vec in img.items():
                for row_k, x in enumerate(vec):
                    for e, c in x.terms.items():
                        entries.append((tpos[J], row_k, e, c))
            for b in coarse.monos:
                col = si * coarse.dim + coarse.index(k, b)
                shift = tuple(p * x for x in b)
                for J, row_k, e, c in entries:
                    g = tuple(x + y for x, y in zip(e, shift))
                    if max(g, default=0) < chart.N:
                        out[J * fine.dim + fine.index(row_k, g), col] += c
    return out % p


def vform_add(a: VForm, b: VForm) -> VForm:
    out = dict(a)
    for I, v in b.items():
        out[I] = [x + y for x, y in zip(out[I], v)] if I in out else list(v)
    return out


def vform_scale(a: VForm, c) -> VForm:
    return {I: [x * c for x in v] for I, v in a.items()}


def form_times_vector(form: LogForm, vec: Sequence[RingElement]) -> VForm:
    """vec (x) form, as a module-valued form."""
    return {I: [x * c for x in vec] for I, c in form.coeffs.items()}


def wedge_forms(forms: Sequence[LogForm], chart: Chart) -> LogForm:
    out = LogForm(chart, 0, {(): chart.fine.one()})
    for f in forms:
        out = out.wedge(f)
    return out


# ---------------------------------------------------------------- the local Cartier map

def cartier_images(E: HiggsModule, F: LiftingDatum, q: int, G: Optional[Matrix] = None) -> Dict[Tuple[int, Idx], VForm]:
    """e_k omega_I -> G F^*e_k (x) zeta(omega_i1) ^ ... ^ zeta(omega_iq)."""
    chart = E.chart
    fine = chart.fine
    zetas = [F.zeta(i) for i in range(chart.n)]
    out = {}
    for I in subsets(chart.n, q):
        form = wedge_forms([zetas[i] for i in I], chart)
        for k in range(E.m):
            col = [G[row][k] for row in range(E.m)] if G is not None else \
                [fine.one() if row == k else fine.zero() for row in range(E.m)]
            out[(k, I)] = form_times_vector(form, col)
    return out


def cartier_map_full(E: HiggsModule, F: LiftingDatum, higgs_full: ChainComplex, dr_full: ChainComplex,
                     G: Optional[Matrix] = None) -> ChainMap:
    chart = E.chart
    mats = {q: extend_coarse_linear(chart, E.m, q, q, cartier_images(E, F, q, G)) for q in range(chart.n + 1)}
    return ChainMap(higgs_full, dr_full, mats)


# ---------------------------------------------------------------- gradings and strata

def v_grade(chart: Chart, e, I: Idx) -> Tuple[int, ...]:
    p = chart.p
    return tuple((e[i] + (1 if (i in I and not chart.is_log(i)) else 0)) % p for i in range(chart.n))


def vg_grade(chart: Chart, e, I: Idx, with_g: bool) -> Tuple[int, ...]:
    p = chart.p
    base = v_grade(chart, e, I)
    if not with_g:
        return base
    return tuple((x + (1 if i < chart.s else 0)) % p for i, x in enumerate(base))


def weight_grade(chart: Chart, e) -> Tuple[int, ...]:
    return tuple(1 if e[i] % chart.p == 0 else 0 for i in range(chart.r))


@dataclass
class GradedComplex:
    """A subcomplex of the full pushed-forward de Rham complex with a grade per basis vector."""
    complex: ChainComplex
    rows: Dict[int, np.ndarray]          # basis vectors inside the full complex
    grades: Dict[int, List[tuple]]
    full: ChainComplex
    flavor: str

    def strata(self) -> List[tuple]:
        return sorted({g for gs in self.grades.values() for g in gs})

    def stratum_indices(self, q: int, v) -> List[int]:
        return [i for i, g in enumerate(self.grades.get(q, [])) if g == tuple(v)]


def _coords(rows: np.ndarray, vecs: np.ndarray, p: int) -> np.ndarray:
    """X with X rows = vecs; rows independent.  Raises if some vec is outside the span."""
    k, dim = rows.shape
    if k == 0:
        if np.asarray(vecs).any():
            raise ValueError("vector outside span")
        return np.zeros((vecs.shape[0], 0), dtype=np.int64)
    aug = np.hstack([rows % p, np.eye(k, dtype=np.int64)])
    sp = Span(aug, p)
    # rows of sp: [R | T] with R = T rows (R in echelon form)
    R, T = sp.rows[:, :dim], sp.rows[:, dim:]
    piv = sp.pivots
    if any(c >= dim for c in piv):
        raise ValueError("basis rows are dependent")
    vecs = np.asarray(vecs, dtype=np.int64) % p
    c = vecs[:, piv]
    if ((c @ R - vecs) % p).any():
        raise ValueError("vector outside span")
    return (c @ T) % p


def graded_from_rows(full: ChainComplex, rows: Dict[int, np.ndarray], grades: Dict[int, List[tuple]],
                     flavor: str) -> GradedComplex:
    p = full.p
    bases = {q: [(flavor, q, g, i) for i, g in enumerate(grades[q])] for q in rows}
    diffs = {}
    for q, r in rows.items():
        if q + 1 not in rows or not len(r) or not len(rows[q + 1]):
            continue
        img = matmul_mod(full.d(q), r.T, p).T
        X = _coords(rows[q + 1], img, p)
        gq, gn = grades[q], grades[q + 1]
        for a, b in zip(*np.nonzero(X)):
            if gq[a] != gn[b]:
                raise ValueError(f"differential mixes strata {gq[a]} -> {gn[b]}")
        diffs[q] = X.T
    return GradedComplex(ChainComplex(p, bases, diffs), rows, grades, full, flavor)


def fstar_complex(E: HiggsModule, F: Optional[LiftingDatum] = None, kind="full",
                  H: Optional[LambdaConnection] = None) -> GradedComplex:
    """F_* of the de Rham complex of the inverse Cartier transform, with its v-grading."""
    chart = E.chart
    F = F or LiftingDatum.standard(chart)
    if not F.is_standard():
        raise ValueError("the graded decomposition is only available for the standard lifting")
    H = H or inverse_cartier_local(E, F, check_level=False)
    full = H.complex()
    model = H.model
    n, p = chart.n, chart.p
    name, wi = parse_kind(kind)
    if name == "weight" and E.has_pole():
        raise ValueError("pole violation: theta has a log pole along D")
    rows, grades = {}, {}
    for q in range(n + 1):
        subs = subsets(n, q)
        if name in ("full", "weight"):
            idx, gr = [], []
            for si, I in enumerate(subs):
                for li, (k, e) in enumerate(model.labels):
                    if name == "weight" and not weight_member(chart, e, I, wi):
                        continue
                    idx.append(si * model.dim + li)
                    gr.append(v_grade(chart, e, I))
            r = np.zeros((len(idx), full.dim(q)), dtype=np.int64)
            r[np.arange(len(idx)), idx] = 1
            rows[q], grades[q] = r, gr
        elif name == "intersection":
            gens = subcomplex_generators(chart, kind, H, [q])[q]
            G = generator_rows(chart, model, q, gens)
            lab_grade = [v_grade(chart, e, I) for I in subs for (k, e) in model.labels]
            by_v: Dict[tuple, List[int]] = {}
            for col, g in enumerate(lab_grade):
                by_v.setdefault(g, []).append(col)
            rr, gr = [], []
            total = Span(G, p, full.dim(q)).dim if len(G) else 0
            for v, cols in sorted(by_v.items()):
                proj = np.zeros_like(G)
                proj[:, cols] = G[:, cols]
                sp = Span(proj, p, full.dim(q))
                for row in sp.rows:
                    rr.append(row)
                    gr.append(v)
            r = np.array(rr, dtype=np.int64).reshape(-1, full.dim(q))
            if Span(r, p, full.dim(q)).dim != total:
                raise ValueError("intersection subcomplex is not graded")
            rows[q], grades[q] = r, gr
        elif name == "kontsevich":
            if chart.s is None:
                raise ValueError("kontsevich grading needs the parameter s")
            rr, gr = [], []
            fine = chart.fine
            g = chart.g()
            dlog_g = LogForm(chart, 1, {(k,): fine.one() for k in range(chart.s)})
            pieces = []
            if q >= 1:
                for I in itertools.combinations(range(1, n), q - 1):
                    pieces.append((dlog_g.wedge(LogForm.basis(chart, I)), I, False))
            for J in itertools.combinations(range(1, n), q):
                pieces.append((LogForm.basis(chart, J).times(g), J, True))
            for form, J, with_g in pieces:
                for k, e in model.labels:
                    mono = fine.monomial(e)
                    vec = {I: [c * mono if j == k else fine.zero() for j in range(E.m)]
                           for I, c in form.coeffs.items()}
                    arr = model.form_array(n, q, vec)
                    if not arr.any():
                        continue
                    rr.append(arr)
                    gr.append(vg_grade(chart, e, J, with_g))
            rows[q] = np.array(rr, dtype=np.int64).reshape(-1, full.dim(q))
            grades[q] = gr
        else:
            raise ValueError(f"unknown kind {kind!r}")
    return graded_from_rows(full, rows, grades, str(kind))


def kv_subcomplex(graded: GradedComplex, v) -> ChainComplex:
    """The subcomplex spanned by basis vectors of grade v."""
    v = tuple(x % graded.full.p for x in v)
    C = graded.complex
    bases, diffs = {}, {}
    idx = {q: graded.stratum_indices(q, v) for q in C.bases}
    for q in C.bases:
        bases[q] = [C.bases[q][i] for i in idx[q]]
    for q in C.bases:
        if q + 1 in C.bases and idx[q] and idx[q + 1]:
            diffs[q] = C.d(q)[np.ix_(idx[q + 1], idx[q])]
    return ChainComplex(C.p, bases, diffs)


def stratum_inclusion(graded: GradedComplex, v) -> Dict[int, np.ndarray]:
    """Rows (inside the full complex) of the basis of the v-stratum."""
    v = tuple(x % graded.full.p for x in v)
    return {q: graded.rows[q][graded.stratum_indices(q, v)] for q in graded.rows}


def epsilon(chart: Chart, v) -> List[int]:
    return [1 if (not chart.is_log(i) and v[i] % chart.p) else 0 for i in range(chart.n)]


def kv_koszul_model(E: HiggsModule, v) -> Tuple[ChainComplex, ChainMap]:
    """Kos(E; v_i + t_i^eps_i Theta_i) with its explicit embedding onto the v-stratum.

    Returns the Koszul complex and the chain map into the full pushed-forward
    complex of the standard inverse Cartier transform.
    """
    chart = E.chart
    p, n = chart.p, chart.n
    v = [x % p for x in v]
    coarse = FreeModel(chart.coarse, E.m)
    eps = epsilon(chart, v)
    ring = chart.coarse
    ops = []
    for i in range(n):
        mat = E.theta[i]
        if eps[i]:
            mat = mat_scale(mat, ring.var(i))
        mat = mat_add(mat, mat_scale(mat_identity(ring, E.m), ring.const(v[i])))
        ops.append(module_operator(coarse, mat))
    K = koszul(ops, p, coarse.labels)
    H = inverse_cartier_local(E, LiftingDatum.standard(chart), check_level=False)
    full = H.complex()
    fine = FreeModel(chart.fine, E.m)
    mats = {}
    for q in range(n + 1):
        subs = subsets(n, q)
        m = np.zeros((full.dim(q), K.dim(q)), dtype=np.int64)
        for si, I in enumerate(subs):
            for li, (k, b) in enumerate(coarse.labels):
                gamma = [p * b[i] + v[i] for i in range(n)]
                for i in I:
                    if not chart.is_log(i):
                        # u_i = dlog t_i when v_i != 0, else t_i^{p-1} dt_i
                        gamma[i] += -1 if v[i] else p - 1
                if max(gamma, default=0) >= chart.N:
                    continue
                m[si * fine.dim + fine.index(k, tuple(gamma)), si * coarse.dim + li] = 1
        mats[q] = m
    return K, ChainMap(K, full, mats)


def local_cartier_qis(E: HiggsModule, F: Optional[LiftingDatum] = None, kind="full"
                      ) -> Tuple[ChainMap, Verdict, Verdict]:
    """phi_F : kind(E, theta) -> K_0 stratum of the matching kind; certified.

    Returns the map into the v = 0 stratum together with the chain-map and
    quasi-isomorphism verdicts of the composite into the whole pushed-forward
    subcomplex.
    """
    chart = E.chart
    F = F or LiftingDatum.standard(chart)
    graded = fstar_complex(E, F, kind)
    higgs_sub, higgs_spans, higgs_full = E.subcomplex(kind)
    phi_full = cartier_map_full(E, F, higgs_full, graded.full)
    p = chart.p
    k0 = kv_subcomplex(graded, (0,) * chart.n)
    zero_rows = stratum_inclusion(graded, (0,) * chart.n)
    mats_k0, mats_all = {}, {}
    for q in higgs_sub.bases:
        src = higgs_spans[q].rows.T  # columns in the full Higgs complex
        img = matmul_mod(phi_full.at(q), src, p).T
        if not len(img):
            continue
        mats_k0[q] = _coords(zero_rows[q], img, p).T if len(zero_rows[q]) else np.zeros((0, len(img)))
        mats_all[q] = _coords(graded.rows[q], img, p).T
    to_k0 = ChainMap(higgs_sub, k0, mats_k0)
    to_all = ChainMap(higgs_sub, graded.complex, mats_all)
    return to_k0, certify(to_k0, "quasi_iso", name=f"phi onto K_0 ({kind})"), \
        certify(to_all, "quasi_iso", name=f"phi into F_* ({kind})")
