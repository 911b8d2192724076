import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhlab.chain import Span
from dhlab.chart_algebra import (Chart, LogForm, OrderedSplitting, Ring, decode_element,
                                 decompose_function, exterior_d, generator_rows, kontsevich_forms, mat_inverse, sec_split, subcomplex_generators, subsets,
                                 tensor_change_basis, wedge_change_basis, wedge_projection)
from dhlab.higgs import HiggsModule, LambdaConnection

from helpers import rand_elem


# ---------------------------------------------------------------- ring arithmetic

def test_one_times_t1():
    R = Chart(3, 2, 1).fine
    assert R.one() * R.var(0) == R.var(0)


def test_frobenius_additive_p3_M2():
    R = Chart(3, 2, 0, 2).fine
    x = R.var(0) + R.var(1)
    assert x ** 3 == R.var(0) ** 3 + R.var(1) ** 3


def test_truncation_cutoff():
    ch = Chart(3, 1, 0, 2)
    R = ch.fine
    assert (R.monomial([ch.N - 1]) * R.var(0)).is_zero()


def test_no_stored_zeros():
    R = Ring(5, 2, 5)
    a = R.monomial([1, 0], 5) + R.monomial([7, 0], 1)
    assert a.terms == {}


def test_chart_mismatch():
    with pytest.raises(ValueError, match="chart mismatch"):
        Ring(3, 1, 3).var(0) * Ring(3, 1, 6).var(0)


def test_chart_validation():
    with pytest.raises(ValueError):
        Chart(4, 1, 0)
    with pytest.raises(ValueError):
        Chart(3, 1, 2)
    with pytest.raises(ValueError):
        Chart(3, 2, 1, 1, s=2)


def test_encode_roundtrip():
    R = Chart(5, 2, 1, 2).fine
    a = rand_elem(R, random.Random(3), 6)
    assert decode_element(R, a.encode()) == a
    with pytest.raises(ValueError):
        decode_element(R, [[1, [0]]])


ring_params = st.sampled_from([(2, 2, 2), (3, 2, 2), (5, 1, 2), (3, 3, 1)])


@settings(max_examples=40, deadline=None)
@given(ring_params, st.integers(0, 10 ** 6))
def test_ring_axioms(params, seed):
    p, n, M = params
    R = Chart(p, n, 0, M).fine
    rng = random.Random(seed)
    a, b, c = (rand_elem(R, rng, 4) for _ in range(3))
    assert a * (b + c) == a * b + a * c
    assert (a * b) * c == a * (b * c)
    assert a * b == b * a
    assert (a - a).is_zero()


# ---------------------------------------------------------------- exterior derivative

def test_d_of_log_coordinate():
    ch = Chart(3, 2, 1)
    t1 = ch.fine.var(0)
    assert exterior_d(LogForm.function(ch, t1)) == LogForm(ch, 1, {(0,): t1})


def test_d_of_nonlog_square():
    ch = Chart(3, 2, 1)
    t2 = ch.fine.var(1)
    assert exterior_d(LogForm.function(ch, t2 * t2)) == LogForm(ch, 1, {(1,): t2.scale(2)})


def test_d_of_pth_power_vanishes():
    ch = Chart(3, 1, 1, 2)
    assert exterior_d(LogForm.function(ch, ch.fine.var(0) ** 3)).is_zero()


def test_d_rejects_top_degree():
    ch = Chart(3, 1, 1)
    with pytest.raises(ValueError):
        exterior_d(LogForm.basis(ch, (0,)))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([(3, 2, 1), (3, 3, 2), (5, 2, 0), (2, 3, 3)]), st.integers(0, 10 ** 6))
def test_d_squared_zero(params, seed):
    p, n, r = params
    ch = Chart(p, n, r)
    rng = random.Random(seed)
    for q in range(n - 1):
        xi = LogForm(ch, q, {I: rand_elem(ch.fine, rng, 3) for I in subsets(n, q)})
        assert exterior_d(exterior_d(xi)).is_zero()


# ---------------------------------------------------------------- Frobenius decomposition

def test_decompose_t1():
    ch = Chart(3, 2, 1, 2)
    dec = decompose_function(ch, ch.fine.var(0))
    assert dec.parts == {(1, 0): ch.coarse.one()}


def test_decompose_pure_power():
    ch = Chart(3, 2, 1, 2)
    dec = decompose_function(ch, ch.fine.var(0) ** 3)
    assert dec.parts == {(0, 0): ch.coarse.var(0)}
    assert dec.constant_part == ch.coarse.var(0)


def test_decompose_shared_residue():
    # t + t^4 = (1 + t')^3 t: one residue class with h = 1 + t
    ch = Chart(3, 1, 0, 2)
    t = ch.fine.var(0)
    dec = decompose_function(ch, t + t ** 4)
    assert dec.parts == {(1,): ch.coarse.one() + ch.coarse.var(0)}


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([(2, 2, 2), (3, 2, 2), (5, 1, 3), (3, 3, 1)]), st.integers(0, 10 ** 6))
def test_decompose_reassembles(params, seed):
    p, n, M = params
    ch = Chart(p, n, n, M)
    f = rand_elem(ch.fine, random.Random(seed), 6)
    dec = decompose_function(ch, f)
    assert dec.reassemble() == f
    assert all(h.ring == ch.coarse for h in dec.parts.values())


# ---------------------------------------------------------------- sec_split

def test_sec_cross_block():
    ch = Chart(3, 2, 2)
    sp = OrderedSplitting(ch, [1, 2])
    one = ch.fine.one()
    assert sec_split({(0, 1): one}, sp) == {(0, 1): one}


def test_sec_same_block_antisymmetrises():
    ch = Chart(3, 2, 2)
    sp = OrderedSplitting(ch, [1, 1])
    one = ch.fine.one()
    # 1/2! = 2 mod 3
    assert sec_split({(0, 1): one}, sp) == {(0, 1): one.scale(2), (1, 0): one.scale(-2)}


def test_sec_degree_zero():
    ch = Chart(3, 2, 2)
    c = ch.fine.var(0)
    assert sec_split({(): c}, OrderedSplitting(ch, [1, 2])) == {(): c}


def test_sec_blockwise_degree_guard():
    ch = Chart(2, 2, 2)
    with pytest.raises(ValueError, match="blockwise degree"):
        sec_split({(0, 1): ch.fine.one()}, OrderedSplitting(ch, [1, 1]))


def test_splitting_validation():
    ch = Chart(3, 3, 3)
    for D in ([1, 3, 3], [2, 2, 2], [1, 2, 1], [1, 2]):
        with pytest.raises(ValueError):
            OrderedSplitting(ch, D)
    sp = OrderedSplitting(ch, [1, 2, 3])
    assert sp.ranks == [1, 1, 1]
    assert sp.merge(2).D == (1, 2, 2)


SPLITS = [(5, 3, [1, 1, 2]), (5, 3, [1, 2, 3]), (3, 3, [1, 2, 2]), (7, 3, [1, 1, 1]), (3, 2, [1, 1])]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SPLITS), st.integers(0, 10 ** 6))
def test_sec_is_section(case, seed):
    p, n, D = case
    ch = Chart(p, n, n)
    sp = OrderedSplitting(ch, D)
    rng = random.Random(seed)
    for q in range(n + 1):
        coeffs = {I: rand_elem(ch.fine, rng, 2) for I in subsets(n, q)}
        coeffs = {I: c for I, c in coeffs.items() if c}
        assert wedge_projection(sec_split(coeffs, sp), ch.fine) == coeffs


def _block_diag(ring, D, rng):
    p, n = ring.p, len(D)
    while True:
        Q = [[ring.const(rng.randrange(p)) if D[i] == D[j] else ring.zero() for j in range(n)] for i in range(n)]
        try:
            mat_inverse(Q)
            return Q
        except ValueError:
            continue


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(SPLITS), st.integers(0, 10 ** 6))
def test_sec_commutes_with_block_substitution(case, seed):
    p, n, D = case
    ch = Chart(p, n, n)
    sp = OrderedSplitting(ch, D)
    rng = random.Random(seed)
    Q = _block_diag(ch.fine, D, rng)
    for q in range(n + 1):
        coeffs = {I: rand_elem(ch.fine, rng, 2) for I in subsets(n, q)}
        lhs = sec_split(wedge_change_basis(coeffs, Q), sp)
        rhs = tensor_change_basis(sec_split(coeffs, sp), Q)
        assert lhs == rhs


# ---------------------------------------------------------------- distinguished subcomplexes

def _span(chart, E, kind, q):
    gens = subcomplex_generators(chart, kind, E, [q])[q]
    return Span(generator_rows(chart, E.model, q, gens), chart.p, len(subsets(chart.n, q)) * E.model.dim)


def _rows(chart, model, q, items):
    """Rows of t^e omega_I (rank one)."""
    return np.array([model.form_array(chart.n, q, {I: [chart.coarse.monomial(e)]}) for e, I in items])


def test_weight_zero_rank_one():
    ch = Chart(3, 2, 2)
    E = HiggsModule.trivial(ch)
    # W_0 in degree 1: t_i^{a} omega_i with a_i >= 1, i.e. no genuine log pole
    sp = _span(ch, E, ("weight", 0), 1)
    assert sp.dim == 0  # M = 1: t' vanishes on the coarse ring
    ch2 = Chart(3, 2, 2, 2)
    E2 = HiggsModule.trivial(ch2)
    sp2 = _span(ch2, E2, ("weight", 0), 1)
    want = [(e, (i,)) for i in range(2) for e in E2.model.monos if e[i] > 0]
    assert sp2 == Span(_rows(ch2, E2.model, 1, want), 3)


def test_intersection_rank_one_log_line():
    ch = Chart(3, 1, 1, 2)
    E = HiggsModule.trivial(ch)
    sp = _span(ch, E, "intersection", 1)
    want = [(e, (0,)) for e in E.model.monos if e[0] >= 1]
    assert sp == Span(_rows(ch, E.model, 1, want), 3)


def test_kontsevich_degree_one_generators():
    ch = Chart(3, 2, 2, 1, s=2)
    forms = kontsevich_forms(ch, 1)
    one, g = ch.fine.one(), ch.g()
    assert forms == [LogForm(ch, 1, {(0,): one, (1,): one}),
                     LogForm(ch, 1, {(0,): g}), LogForm(ch, 1, {(1,): g})]


def test_kontsevich_needs_s():
    ch = Chart(3, 2, 2)
    with pytest.raises(ValueError):
        subcomplex_generators(ch, "kontsevich", HiggsModule.trivial(ch))


def test_weight_pole_violation():
    ch = Chart(3, 1, 1)
    E = HiggsModule.constant(ch, [[[0, 1], [0, 0]]])
    with pytest.raises(ValueError, match="pole violation"):
        subcomplex_generators(ch, ("weight", 1), E)


@pytest.mark.parametrize("lam", [0, 1])
@pytest.mark.parametrize("params", [(3, 2, 2, 1, 2), (3, 3, 3, 1, 2), (5, 2, 2, 1, 1)])
def test_kontsevich_closed_under_d(lam, params):
    p, n, r, M, s = params
    ch = Chart(p, n, r, M, s)
    C = LambdaConnection(ch, ch.fine, lam, [[[ch.fine.zero()]] for _ in range(n)])
    sub, spans, _ = C.subcomplex("kontsevich")   # raises if d leaves the span
    assert sub.total_dim() > 0


@pytest.mark.parametrize("kind", [("weight", 0), ("weight", 1), "intersection", "kontsevich"])
def test_spans_are_submodules(kind):
    ch = Chart(3, 2, 2, 1, s=2)
    fine = ch.fine
    H = LambdaConnection(ch, fine, 1, [[[fine.zero()] * 2, [fine.monomial([1, 0]), fine.zero()]],
                                       [[fine.zero()] * 2, [fine.monomial([0, 1]), fine.zero()]]])
    model = H.model
    for q in range(3):
        gens = subcomplex_generators(ch, kind, H, [q])[q]
        sp = Span(generator_rows(ch, model, q, gens), 3, len(subsets(2, q)) * model.dim)
        for g in gens[:40]:
            for i in range(2):
                moved = {I: [x * fine.var(i) for x in v] for I, v in g.items()}
                assert sp.contains(model.form_array(2, q, moved))
