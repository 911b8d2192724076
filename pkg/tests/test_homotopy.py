import itertools
import random
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhlab.cartier import LiftingFamily, LiftingDatum
from dhlab.chain import betti
from dhlab.chart_algebra import Chart, OrderedSplitting, mat_frobenius, mat_identity, mat_mul, mat_zero
from dhlab.higgs import HiggsModule
from dhlab.homotopy import (HomotopyData, HomotopyIndex, PhiCache, PsiCache, TripleIndex, cech_assemble,
                            certify_assembly, coeff_C, coeff_Co, enumerate_T, is_homotopy_index, is_triple,
                            kunneth_verify, phi_images, psi_rs, verify_basis_invariance,
                            verify_infty_homotopy, verify_phi_tilde, verify_splitting_homotopy,
                            verify_subcomplex_compat, verify_two_term)

from helpers import jordan, level_one_module, random_family


# ---------------------------------------------------------------- admissible triples

def _oracle_triples(n, r, s, D, p):
    """Filter every (i, S, j) with each index placed in at most one S_q."""
    out = set()
    vecs = list(itertools.product(range(p), repeat=n))
    for i in itertools.product(range(n), repeat=r):
        for place in itertools.product(range(-1, r + 1), repeat=n):
            S = tuple(tuple(l for l in range(n) if place[l] == q) for q in range(r + 1))
            if sum(map(len, S)) != s:
                continue
            if len(set(i) | {l for q in S for l in q}) != r + s:
                continue
            for j in itertools.product(vecs, repeat=r):
                lam = [max([D[l] for l in S[q + 1]] + [D[l] for l in range(n) if j[q][l]], default=0)
                       for q in range(r)]
                if any(lam[q] < lam[q + 1] for q in range(r - 1)):
                    continue
                if any(D[i[q]] != lam[q] or not j[q][i[q]] for q in range(r)):
                    continue
                out.add(TripleIndex(i, S, j))
    return out


def test_triples_line():
    ch = Chart(3, 1, 1)
    T = enumerate_T(1, 0, OrderedSplitting(ch, [1]))
    assert [(t.i, t.S, t.j) for t in T] == [((0,), ((), ()), ((1,),)), ((0,), ((), ()), ((2,),))]


@pytest.mark.parametrize("r,s,count", [(1, 0, 8), (1, 1, 14), (2, 0, 12), (2, 1, 0)])
def test_triples_two_blocks(r, s, count):
    ch = Chart(3, 2, 2)
    D = (1, 2)
    T = enumerate_T(r, s, OrderedSplitting(ch, D))
    assert len(T) == count
    assert set(T) == _oracle_triples(2, r, s, D, 3)
    assert all(is_triple(t, D, 3) for t in T)


def test_triples_single_block_match_oracle():
    ch = Chart(3, 2, 1)
    for r, s in ((1, 0), (1, 1), (2, 0)):
        assert set(enumerate_T(r, s, OrderedSplitting(ch, [1, 1]))) == _oracle_triples(2, r, s, (1, 1), 3)


def test_mixed_block_tuple_filtered():
    # i_1 in block 1 while j carries block 2: lambda_1 = 2 != D(i_1)
    assert not is_triple(TripleIndex((0,), ((), ()), ((1, 1),)), (1, 2), 3)
    assert is_triple(TripleIndex((1,), ((), ()), ((1, 1),)), (1, 2), 3)


def test_triples_too_many_indices():
    ch = Chart(3, 2, 2)
    assert enumerate_T(2, 1, OrderedSplitting(ch, [1, 2])) == []
    assert enumerate_T(1, 2, OrderedSplitting(ch, [1, 1])) == []


# ---------------------------------------------------------------- coefficients

def test_coeff_single_factor():
    assert coeff_C(TripleIndex((0,), ((), ()), ((1, 0),)), (1, 1), 5) == 1


def test_coeff_telescoping_p5():
    t = TripleIndex((0, 1), ((), (), ()), ((1, 0), (0, 1)))
    assert is_triple(t, (1, 1), 5)
    assert coeff_C(t, (1, 1), 5) == 3


def test_coeff_unhit_block():
    t = TripleIndex((0,), ((), ()), ((2, 0),))
    assert coeff_C(t, (1, 2), 5) == pow(2, -1, 5)


def test_coeff_guard_sum_at_least_p():
    # block sum 3 + 1 >= p: the block contributes 1
    t = TripleIndex((0, 1), ((), (), ()), ((2, 0), (1, 1)))
    assert is_triple(t, (1, 1), 3)
    assert coeff_C(t, (1, 1), 3) == 1


def test_homotopy_coefficient_guard_inactive():
    h = HomotopyIndex(1, 0, ((),) * 4, (2, 1, 3), ((1, 0, 1, 0), (0, 1, 0, 0), (0, 0, 0, 1)))
    D = (1, 1, 2, 2)
    assert is_homotopy_index(h, D, 1, 5)
    assert coeff_Co(h, D, 1, 5) == 0


# ---------------------------------------------------------------- phi(r, s)

def _nonzero(images):
    return {key: {I: v for I, v in vf.items() if any(x.terms for x in v)} for key, vf in images.items()}


def test_phi_one_zero_field():
    ch = Chart(3, 2, 1)
    fam = random_family(ch, random.Random(3), 2)
    data = HomotopyData(HiggsModule.trivial(ch), fam, OrderedSplitting(ch, [1, 2]))
    got = _nonzero(phi_images(data, (0, 1), 0))
    for i in range(2):
        h = fam.h(0, 1, i)
        assert got[(0, (i,))] == ({(): [h]} if h.terms else {})


def _phi_one_oracle(E, fam, D):
    """Direct sum over j for r = 1, s = 0 with the coordinate basis and lifting 0 as reference."""
    ch = E.chart
    p, n, fine = ch.p, ch.n, ch.fine
    Ft = [mat_frobenius(t, fine) for t in E.theta]
    h = [fam.h(0, 1, l) for l in range(n)]
    out = {}
    for i in range(n):
        for j in itertools.product(range(p), repeat=n):
            if not j[i] or max(D[l] for l in range(n) if j[l]) != D[i]:
                continue
            blk = sum(j[l] for l in range(n) if D[l] == D[i])
            c = pow(blk, -1, p) if blk < p else 1
            c = c * j[i] * pow(int(np.prod([factorial(x) for x in j])), -1, p) % p
            M = mat_identity(fine, E.m)
            for l in range(n):
                for _ in range(j[l] - (l == i)):
                    M = mat_mul(M, Ft[l])
            hj = fine.one()
            for l in range(n):
                hj = hj * h[l] ** j[l]
            for k in range(E.m):
                acc_k = [M[row][k] * hj * c for row in range(E.m)]
                out.setdefault((k, (i,)), [fine.zero()] * E.m)
                out[(k, (i,))] = [a + b for a, b in zip(out[(k, (i,))], acc_k)]
    return {key: ({(): v} if any(x.terms for x in v) else {}) for key, v in out.items()}


@pytest.mark.parametrize("D", [(1, 1), (1, 2)])
@pytest.mark.parametrize("seed", range(3))
def test_phi_one_matches_direct_sum(D, seed):
    ch = Chart(5, 2, 1)
    E = level_one_module(ch, [1, 3])
    fam = random_family(ch, random.Random(seed), 2)
    data = HomotopyData(E, fam, OrderedSplitting(ch, D))
    assert _nonzero(phi_images(data, (0, 1), 0)) == _phi_one_oracle(E, fam, D)


def _std_family(ch):
    fine = ch.fine
    return LiftingFamily([LiftingDatum(ch), LiftingDatum(ch, [fine.var(0), fine.var(1) ** 2]),
                          LiftingDatum(ch, [fine.var(1), fine.var(0) + fine.var(1)])])


def test_phi_two_zero_frozen_values():
    ch = Chart(5, 2, 2)
    fam = _std_family(ch)
    E = HiggsModule.trivial(ch)
    h01 = [fam.h(0, 1, i) for i in range(2)]
    h12 = [fam.h(1, 2, i) for i in range(2)]
    for D, expect in (((1, 1), (h01[0] * h12[1] - h01[1] * h12[0]) * 3), ((1, 2), -(h01[1] * h12[0]))):
        data = HomotopyData(E, fam, OrderedSplitting(ch, D))
        got = _nonzero(phi_images(data, (0, 1, 2), 0))[(0, (0, 1))]
        assert got == ({(): [expect]} if expect.terms else {})
        assert expect.terms


# ---------------------------------------------------------------- identities

def test_infty_homotopy_zero_field_cocycle():
    ch = Chart(3, 2, 1)
    data = HomotopyData(HiggsModule.trivial(ch), random_family(ch, random.Random(5), 2), OrderedSplitting(ch, [1, 2]))
    assert verify_infty_homotopy(data, (0, 1), 1)


@pytest.mark.parametrize("seed", range(3))
def test_infty_homotopy_level_one_p5(seed):
    ch = Chart(5, 2, 1)
    data = HomotopyData(level_one_module(ch, [2, 1]), random_family(ch, random.Random(seed), 2),
                        OrderedSplitting(ch, [1, 2]))
    cache = PhiCache(data)
    for s in range(0, 3):
        assert verify_infty_homotopy(data, (0, 1), s, cache)


def test_infty_homotopy_r2_n3():
    ch = Chart(5, 3, 1)
    data = HomotopyData(level_one_module(ch, [1, 2, 3]), random_family(ch, random.Random(7), 3, max_deg=1),
                        OrderedSplitting(ch, [1, 2, 3]))
    cache = PhiCache(data)
    for s in range(0, 3):
        assert verify_infty_homotopy(data, (0, 1, 2), s, cache)


def test_infty_homotopy_truncated_regime():
    # rank-2 block with level 1 at p = 3: rank 2 >= p - level, model is truncated below 2
    ch = Chart(3, 2, 1)
    data = HomotopyData(level_one_module(ch, [1, 1]), random_family(ch, random.Random(8), 2),
                        OrderedSplitting(ch, [1, 1]))
    assert data.cutoff() == 2
    cache = PhiCache(data)
    for s in range(0, 3):
        assert verify_infty_homotopy(data, (0, 1), s, cache)


def test_broken_homotopy_detected():
    ch = Chart(5, 2, 1)
    data = HomotopyData(level_one_module(ch, [2, 1]), random_family(ch, random.Random(1), 2),
                        OrderedSplitting(ch, [1, 2]))
    cache = PhiCache(data)
    key = ((0, 1), 0)
    cache.get(*key)
    cache._m[key] = (cache._m[key] + 1) % 5
    v = verify_infty_homotopy(data, (0, 1), 1, cache)
    assert not v and v.witness.startswith("source vector")


def test_phi_tilde_two_blocks():
    ch = Chart(5, 2, 1)
    data = HomotopyData(level_one_module(ch, [1, 4]), random_family(ch, random.Random(9), 2),
                        OrderedSplitting(ch, [1, 2]))
    for s in (0, 1):
        assert verify_phi_tilde(data, (0, 1), s)
    assert verify_phi_tilde(data, (0,), 1)


def test_phi_tilde_adapted_basis():
    ch = Chart(5, 2, 1)
    P = [[1, 2], [0, 1]]
    data = HomotopyData(level_one_module(ch, [1, 4]), random_family(ch, random.Random(10), 2),
                        OrderedSplitting(ch, [1, 1], P))
    assert verify_phi_tilde(data, (0, 1), 1)


def test_basis_invariance():
    ch = Chart(5, 2, 1)
    E = level_one_module(ch, [3, 1])
    fam = random_family(ch, random.Random(11), 2)
    sp = OrderedSplitting(ch, [1, 1])
    Q = [[ch.coarse.one(), ch.coarse.const(3)], [ch.coarse.zero(), ch.coarse.const(2)]]
    for s in (0, 1):
        assert verify_basis_invariance(E, fam, sp, Q, (0, 1), s)
    with pytest.raises(ValueError, match="mixes blocks"):
        verify_basis_invariance(E, fam, OrderedSplitting(ch, [1, 2]), Q, (0, 1), 0)


def test_basis_invariance_truncated_regime():
    # p = 3, level 1, rank-2 block: cutoff 2, so only components with r + s < 2 are compared
    ch = Chart(3, 2, 1)
    E = level_one_module(ch, [1, 2])
    fam = random_family(ch, random.Random(24), 2)
    sp = OrderedSplitting(ch, [1, 1])
    Q = [[1, 2], [0, 1]]
    Q = [[ch.coarse.const(x) for x in row] for row in Q]
    below = verify_basis_invariance(E, fam, sp, Q, (0, 1), 0)
    above = verify_basis_invariance(E, fam, sp, Q, (0, 1), 1)
    assert below and not (below.detail or {}).get("vacuous")
    assert above and above.detail["truncated"]


# ---------------------------------------------------------------- splitting homotopy

def test_psi_zero_field_survives():
    # j = e_i + e_(i_1) leaves theta^0 = id, so psi(1, 0) is nonzero even at theta = 0
    ch = Chart(5, 2, 1)
    E = HiggsModule.trivial(ch)
    fam = random_family(ch, random.Random(12), 2)
    sp = OrderedSplitting(ch, [1, 2])
    assert not psi_rs(HomotopyData(E, fam, sp), (0, 1), 1, 0).is_zero()
    for s in (-1, 0, 1):
        assert verify_splitting_homotopy(E, fam, sp, 1, (0, 1), s)


@pytest.mark.parametrize("seed", range(3))
def test_splitting_homotopy_two_blocks(seed):
    ch = Chart(5, 2, 1)
    E = level_one_module(ch, [1, 2])
    fam = random_family(ch, random.Random(seed), 2)
    sp = OrderedSplitting(ch, [1, 2])
    data = HomotopyData(E, fam, sp)
    assert any(not psi_rs(data, (0, 1), 1, s).is_zero() for s in (0, 1))
    for s in (-1, 0, 1):
        assert verify_splitting_homotopy(E, fam, sp, 1, (0, 1), s)


def test_splitting_homotopy_r2_three_blocks():
    ch = Chart(7, 3, 1)
    E = level_one_module(ch, [1, 2, 3])
    fam = random_family(ch, random.Random(13), 3, max_deg=1)
    sp = OrderedSplitting(ch, [1, 2, 3])
    d1, d2 = HomotopyData(E, fam, sp), HomotopyData(E, fam, sp.merge(2))
    caches = (PhiCache(d1), PhiCache(d2), PsiCache(d1, 2))
    for s in (-1, 0):
        assert verify_splitting_homotopy(E, fam, sp, 2, (0, 1, 2), s, 0, caches)


def test_splitting_homotopy_rank_bound():
    ch = Chart(3, 2, 1)
    E = level_one_module(ch, [1, 1])
    with pytest.raises(ValueError, match="rank bound"):
        verify_splitting_homotopy(E, random_family(ch, random.Random(0), 2), OrderedSplitting(ch, [1, 2]), 1, (0, 1), 0)


# ---------------------------------------------------------------- Cech assembly

def test_cech_single_lifting_is_cartier():
    ch = Chart(3, 2, 1)
    data = HomotopyData(HiggsModule.trivial(ch), LiftingFamily([LiftingDatum(ch)]), OrderedSplitting(ch, [1, 1]))
    assert all(certify_assembly(cech_assemble(data)))


def test_cech_two_liftings_line():
    ch = Chart(3, 1, 0)
    data = HomotopyData(HiggsModule.trivial(ch), random_family(ch, random.Random(14), 2), OrderedSplitting(ch, [1]))
    asm = cech_assemble(data)
    assert all(certify_assembly(asm))
    assert betti(asm.source.complex) == {0: 1, 1: 1}


def test_cech_three_liftings_level_one():
    ch = Chart(5, 2, 1)
    data = HomotopyData(level_one_module(ch, [1, 2]), random_family(ch, random.Random(15), 3),
                        OrderedSplitting(ch, [1, 2]))
    assert all(certify_assembly(cech_assemble(data)))


# ---------------------------------------------------------------- subcomplexes, two-term truncation, Kunneth

def test_subcomplex_full_vacuous():
    ch = Chart(3, 2, 1)
    data = HomotopyData(HiggsModule.trivial(ch), random_family(ch, random.Random(0), 2), OrderedSplitting(ch, [1, 2]))
    v = verify_subcomplex_compat(data, "full")
    assert v and v.detail["vacuous"]


def test_subcomplex_kontsevich_g_adapted():
    ch = Chart(3, 2, 2, 1, s=2)
    fam = random_family(ch, random.Random(16), 2, preserve_g=True)
    P = [[1, 0], [1, 1]]   # omega'_1 = dlog t1 + dlog t2 = dlog g
    data = HomotopyData(HiggsModule.trivial(ch), fam, OrderedSplitting(ch, [1, 2], P))
    v = verify_subcomplex_compat(data, "kontsevich", o=1)
    assert v and v.detail["checked"] > 0


def test_subcomplex_intersection_level_one():
    ch = Chart(5, 2, 2)
    E = HiggsModule(ch, [jordan(ch.coarse, 2), mat_zero(ch.coarse, 2)])
    data = HomotopyData(E, random_family(ch, random.Random(17), 3), OrderedSplitting(ch, [1, 2]))
    assert verify_subcomplex_compat(data, "intersection", o=1)


def test_subcomplex_incompatible_splitting():
    ch = Chart(3, 2, 2)
    P = [[1, 1], [0, 1]]   # omega'_2 = dlog t1 + dlog t2 shares residue index 1 with block 1
    data = HomotopyData(HiggsModule.trivial(ch), random_family(ch, random.Random(0), 2), OrderedSplitting(ch, [1, 2], P))
    with pytest.raises(ValueError, match="incompatible splitting"):
        verify_subcomplex_compat(data, "intersection")


def test_two_term_same_splitting():
    ch = Chart(5, 2, 1)
    sp = OrderedSplitting(ch, [1, 2])
    vs = verify_two_term(level_one_module(ch), random_family(ch, random.Random(18), 2), [sp], 0)
    assert all(vs)


def test_two_term_merge_chain():
    ch = Chart(5, 2, 0)
    P = [[1, 1], [0, 1]]
    chain = [OrderedSplitting(ch, [1, 2]), OrderedSplitting(ch, [1, 1]), OrderedSplitting(ch, [1, 2], P)]
    vs = verify_two_term(HiggsModule.trivial(ch), random_family(ch, random.Random(19), 2), chain, 0)
    assert len(vs) == 4 and all(vs)


def test_two_term_outside_support():
    ch = Chart(5, 1, 1)
    vs = verify_two_term(HiggsModule.trivial(ch), random_family(ch, random.Random(0), 2), [OrderedSplitting(ch, [1])], 3)
    assert all(vs) and vs[-1].detail["vacuous"]


def test_two_term_invalid_step():
    ch = Chart(5, 2, 1)
    chain = [OrderedSplitting(ch, [1, 2]), OrderedSplitting(ch, [1, 2], [[1, 1], [0, 1]])]
    with pytest.raises(ValueError, match="invalid chain step"):
        verify_two_term(HiggsModule.trivial(ch), random_family(ch, random.Random(0), 2), chain, 0)


@pytest.mark.parametrize("p", [3, 5])
def test_kunneth_zero_fields(p):
    c1, c2 = Chart(p, 1, 1), Chart(p, 1, 0)
    f1 = random_family(c1, random.Random(20), 2, max_deg=1)
    f2 = random_family(c2, random.Random(21), 2, max_deg=1)
    assert kunneth_verify(HiggsModule.trivial(c1), f1, HiggsModule.trivial(c2), f2)


def test_kunneth_nontrivial_factor():
    c1, c2 = Chart(5, 1, 1), Chart(5, 1, 1)
    f1 = random_family(c1, random.Random(22), 2, max_deg=1)
    f2 = random_family(c2, random.Random(23), 2, max_deg=1)
    assert kunneth_verify(HiggsModule(c1, [jordan(c1.coarse, 2)]), f1, HiggsModule.trivial(c2), f2)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_infty_homotopy_random_liftings(seed):
    ch = Chart(5, 2, 1)
    rng = random.Random(seed)
    E = level_one_module(ch, [rng.randrange(5), rng.randrange(5)])
    data = HomotopyData(E, random_family(ch, rng, 2), OrderedSplitting(ch, rng.choice([[1, 1], [1, 2]])))
    cache = PhiCache(data)
    assert all(verify_infty_homotopy(data, (0, 1), s, cache) for s in range(3))
