import random

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from dhlab.cartier import LiftingDatum, inverse_cartier_local
from dhlab.chain import certify, identity_map, matmul_mod
from dhlab.chart_algebra import Chart, Ring, decompose_function, mat_eq, mat_identity, mat_is_zero
from dhlab.deform import (ah_conjugate, artin_hasse, artin_hasse_coefficients, artin_hasse_product,
                          formal_g_transform, log_series, psi_inverse, psi_iso, theta_deformation, twist_table,
                          twisted_cartier_qis)
from dhlab.higgs import HiggsModule, build_hodge_pair, twist_exact

from helpers import jordan, level_one_module, rand_elem


# ---------------------------------------------------------------- Artin-Hasse

def test_ah_of_zero():
    R = Chart(3, 2, 1).fine
    assert artin_hasse(R.zero()).G == R.one()


def test_ah_p2_against_rational_series():
    # oracle: sympy series of exp(x + x^2/2 + x^4/4), checked 2-integral, reduced mod 2
    x = sympy.symbols("x")
    ser = sympy.series(sympy.exp(x + x ** 2 / 2 + x ** 4 / 4), x, 0, 5).removeO()
    coeffs = [sympy.Rational(sympy.Poly(ser, x).coeff_monomial(x ** k)) for k in range(5)]
    assert all(c.q % 2 for c in coeffs)
    reduced = [int(c.p * pow(int(c.q), -1, 2) % 2) for c in coeffs]
    assert reduced == [1, 1, 1, 0, 0]
    R = Ring(2, 1, 5)
    assert artin_hasse(R.var(0)).G == R.one() + R.var(0) + R.monomial([2])


@pytest.mark.parametrize("p", [2, 3, 5, 7])
def test_ah_coefficients_integral(p):
    # raises ArithmeticError if a denominator is divisible by p
    assert artin_hasse_coefficients(p, 60)[0] == 1


def test_ah_rejects_constant_term():
    R = Chart(3, 1, 1).fine
    with pytest.raises(ValueError, match="constant term"):
        artin_hasse(R.one() + R.var(0))


CHARTS = [(2, 2, 1, 2), (3, 2, 1, 1), (3, 1, 0, 3), (5, 2, 2, 1)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(CHARTS))
def test_ah_defining_identity(seed, params):
    ch = Chart(*params)
    f = rand_elem(ch.fine, random.Random(seed), 4, no_constant=True)
    assert artin_hasse(f, ch).check()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(CHARTS))
def test_ah_product_rule(seed, params):
    ch = Chart(*params)
    f = rand_elem(ch.fine, random.Random(seed), 5)
    if not decompose_function(ch, f).constant_part.is_zero():
        f = f - decompose_function(ch, f).pieces()[(0,) * ch.n]
    assert artin_hasse_product(ch, f).check()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([(3, 2, 2, 2), (2, 2, 2, 2), (5, 1, 1, 2), (3, 3, 3, 1)]))
def test_log_series_reduction_identity(seed, params):
    # sum over pieces of sum_j f_a^(p^j-1) df_a = sum_q sum_j (t_q d_q f)^(p^j) dlog t_q
    ch = Chart(*params)
    f = rand_elem(ch.fine, random.Random(seed), 5, no_constant=True)
    lhs = [ch.fine.zero()] * ch.n
    for piece in decompose_function(ch, f).pieces().values():
        comps, _ = log_series(piece, ch)
        lhs = [a + b for a, b in zip(lhs, comps)]
    rhs = []
    for q in range(ch.n):
        x, acc, e = f.log_derivative(q), ch.fine.zero(), 1
        while not (x ** e).is_zero():
            acc = acc + x ** e
            e *= ch.p
        rhs.append(acc)
    assert lhs == rhs


# ---------------------------------------------------------------- the deformation

def test_deformation_trivial():
    ch = Chart(3, 2, 1, 2)
    E = level_one_module(ch)
    defo = theta_deformation(E, ch.fine.zero())
    assert [mat_eq(a, b) for a, b in zip(defo.Theta.mats, E.mats)] == [True, True]
    assert all(mat_eq(v, mat_identity(ch.coarse, 2)) for v in defo.vartheta)


def test_deformation_line_f_equals_t():
    ch = Chart(3, 1, 1, 3)
    c = ch.coarse
    t = c.var(0)
    defo = theta_deformation(HiggsModule.trivial(ch), ch.fine.var(0))
    # Theta = -(t + t^3 + ...) = -t and vartheta = 1 + t^2 + t^8 + ... = 1 + t^2 with t'^3 = 0
    assert defo.Theta.mats[0] == [[-t]]
    assert defo.vartheta[0] == [[c.one() + t * t]]
    assert defo.check()


def test_deformation_rejects_constant_part():
    ch = Chart(3, 1, 1, 2)
    with pytest.raises(ValueError, match="constant part"):
        theta_deformation(HiggsModule.trivial(ch), ch.fine.monomial([3]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([(3, 2, 1, 2), (5, 2, 2, 1), (3, 2, 0, 2)]))
def test_vartheta_quotient_identity(seed, params):
    ch = Chart(*params)
    rng = random.Random(seed)
    E = level_one_module(ch, [rng.randrange(3), rng.randrange(3)])
    f = rand_elem(ch.fine, rng, 4, no_constant=True)
    f = f - decompose_function(ch, f).pieces().get((0,) * ch.n, ch.fine.zero())
    defo = theta_deformation(E, f)
    assert defo.check()
    psi = psi_iso(defo)
    assert certify(psi, "chain_map")
    inv = psi_inverse(defo)
    assert certify(inv, "chain_map")
    for q in psi.source.bases:
        assert not (matmul_mod(inv.at(q), psi.at(q), ch.p) - np.eye(psi.source.dim(q), dtype=np.int64)).any()


def test_psi_identity_when_f_zero():
    ch = Chart(3, 2, 1)
    defo = theta_deformation(level_one_module(ch), ch.fine.zero())
    psi = psi_iso(defo)
    assert (psi - identity_map(psi.source)).is_zero()


def test_psi_line_degree_one_is_vartheta():
    ch = Chart(3, 1, 1, 3)
    defo = theta_deformation(HiggsModule.trivial(ch), ch.fine.var(0))
    psi = psi_iso(defo)
    assert certify(psi, "chain_map")
    assert (psi.at(0) == np.eye(3, dtype=np.int64)).all()
    # multiplication by 1 + t^2 on {1, t, t^2}
    assert psi.at(1).tolist() == [[1, 0, 0], [0, 1, 0], [1, 0, 1]]


def test_psi_prime_keeps_kontsevich_span():
    ch = Chart(3, 2, 2, 2, s=2)
    E = HiggsModule.trivial(ch)
    f = ch.fine.var(0) + ch.fine.monomial([0, 2])
    defo = theta_deformation(E, f)
    psi = psi_iso(defo, "psi_prime")
    assert certify(psi, "chain_map")
    _, src_spans, _ = defo.source.subcomplex("kontsevich")
    _, tgt_spans, _ = defo.Theta.subcomplex("kontsevich")
    for q, sp in src_spans.items():
        if sp.dim:
            img = matmul_mod(psi.at(q), sp.rows.T, 3).T
            assert not tgt_spans[q].reduce(img).any()


# ---------------------------------------------------------------- Artin-Hasse conjugation

def _conjugation_holds(E, f):
    ch = E.chart
    F = LiftingDatum.standard(ch)
    defo = theta_deformation(E, f)
    H_plus = twist_exact(inverse_cartier_local(E, F), f, +1)
    expected = inverse_cartier_local(defo.Theta, F, check_level=False)
    ah_conjugate(H_plus, artin_hasse_product(ch, f), expected=expected)   # raises on mismatch
    return True


def test_conjugation_f_zero():
    ch = Chart(3, 2, 1)
    E = level_one_module(ch)
    H = inverse_cartier_local(E, LiftingDatum.standard(ch))
    conj = ah_conjugate(H, artin_hasse(ch.fine.zero(), ch), expected=H)
    assert all(mat_eq(a, b) for a, b in zip(conj.mats, H.mats))


def test_conjugation_line_p2():
    ch = Chart(2, 1, 0, 2)
    assert _conjugation_holds(HiggsModule.trivial(ch), ch.fine.var(0))


def test_conjugation_rank_two_nonlog():
    ch = Chart(3, 2, 1, 2)
    assert _conjugation_holds(level_one_module(ch), ch.fine.var(1))


def test_conjugation_mismatch_reported():
    ch = Chart(3, 1, 1, 2)
    E = HiggsModule.trivial(ch)
    H = inverse_cartier_local(E, LiftingDatum.standard(ch))
    wrong = twist_exact(H, ch.fine.var(0), +1)
    with pytest.raises(ValueError, match="conjugation mismatch"):
        ah_conjugate(H, artin_hasse(ch.fine.zero(), ch), expected=wrong)


@pytest.mark.parametrize("kind", ["full", "intersection", "kontsevich", ("weight", 1)])
def test_twisted_composite(kind):
    ch = Chart(3, 2, 2, 2, s=2)
    ring = ch.coarse
    N = jordan(ring, 2)
    t1, t2 = ring.var(0), ring.var(1)
    # entries divisible by the matching coordinate: no log pole
    E = HiggsModule(ch, [[[x * t1 for x in row] for row in N], [[x * t2 for x in row] for row in N]])
    res = twisted_cartier_qis(E, ch.fine.var(0) * ch.fine.var(1) + ch.fine.monomial([2, 0]) * 2, kind)
    assert res.ok, [v for v in res.verdicts if not v.ok]


# ---------------------------------------------------------------- twist table and the formal g-transform

def test_twist_table_six_identities():
    ch = Chart(3, 2, 2, 2, s=2)
    ring = ch.coarse
    N = jordan(ring, 2)
    E = HiggsModule(ch, [[[x * ring.var(0) for x in row] for row in N], [[ring.zero()] * 2] * 2])
    rows = twist_table(E, ch.fine.var(0) + ch.fine.monomial([1, 1]))
    assert len(rows) == 6 and all(rows)


def test_g_transform_higgs_differential():
    ch = Chart(3, 2, 2, 2, s=2)
    pair = build_hodge_pair("IV", HiggsModule.trivial(ch))
    g = ch.coarse.monomial([1, 1])
    # -sum_j g'^(p^j - 1) dg' against dlog t_k is -sum_j g'^(p^j) = -g' (g'^3 = 0)
    assert pair.higgs.mats == [[[-g]], [[-g]]]
    assert all(pair.info["isomorphisms"])


def test_g_transform_third_iso_p3():
    ch = Chart(3, 1, 1, 1, s=1)
    pair = build_hodge_pair("IV", HiggsModule.trivial(ch))
    isos = pair.info["isomorphisms"]
    assert len(isos) == 4 and isos[2]


def test_g_transform_constant_fiber_is_identity():
    ch = Chart(3, 2, 2, 1, s=1)
    E = HiggsModule.trivial(ch)
    pair = build_hodge_pair("IV", E, f=ch.fine.const(2), fiber=2)
    assert all(mat_is_zero(a) for a in pair.higgs.mats)
    assert all(mat_is_zero(a) for a in pair.de_rham.mats)


def test_g_transform_type_check():
    ch = Chart(3, 1, 1, 1, s=1)
    pair = build_hodge_pair("I", HiggsModule.trivial(ch))
    with pytest.raises(ValueError, match="type IV"):
        formal_g_transform(pair)
