import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhlab.chain import matmul_mod
from dhlab.chart_algebra import Chart, kontsevich_forms, mat_is_zero, mat_mul, mat_zero
from dhlab.higgs import HiggsModule, LambdaConnection, build_hodge_pair, nilpotency_level, twist_exact

from helpers import jordan, level_one_module, rand_elem


def test_level_of_zero_field():
    assert nilpotency_level(HiggsModule.trivial(Chart(3, 2, 1), 3)) == 0


def test_level_of_square_zero():
    ch = Chart(5, 2, 1)
    E = HiggsModule(ch, [jordan(ch.coarse, 2), mat_zero(ch.coarse, 2)])
    assert nilpotency_level(E) == 1


def test_level_of_jordan_block_and_square():
    ch = Chart(5, 2, 1)
    N = jordan(ch.coarse, 3)
    E = HiggsModule(ch, [N, mat_mul(N, N)])
    assert nilpotency_level(E) == 2


def test_level_not_nilpotent():
    ch = Chart(3, 1, 1)
    E = HiggsModule.constant(ch, [[[1]]])
    assert nilpotency_level(E) is None


def test_integrability_check():
    ch = Chart(3, 2, 1)
    with pytest.raises(ValueError, match="integrability violated"):
        HiggsModule.constant(ch, [[[0, 1], [0, 0]], [[0, 0], [1, 0]]])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10 ** 6))
def test_level_bound_kills_longer_words(m, seed):
    # theta_i = c_i N + d_i N^2 commute; all words of length level+1 vanish
    ch = Chart(5, 2, 1)
    rng = random.Random(seed)
    ring = ch.coarse
    N = jordan(ring, m)
    N2 = mat_mul(N, N)
    mats = []
    for _ in range(2):
        a, b = ring.const(rng.randrange(5)), ring.const(rng.randrange(5))
        mats.append([[x * a + y * b for x, y in zip(r1, r2)] for r1, r2 in zip(N, N2)])
    E = HiggsModule(ch, mats)
    lvl = nilpotency_level(E)
    assert lvl is not None and lvl <= m - 1
    for word in itertools.product(range(2), repeat=lvl + 1):
        prod = mats[word[0]]
        for j in word[1:]:
            prod = mat_mul(prod, mats[j])
        assert mat_is_zero(prod)


# ---------------------------------------------------------------- twists

def test_twist_zero_is_identity():
    E = level_one_module(Chart(3, 2, 1, 2))
    T = twist_exact(E, E.ring.zero(), -1)
    assert T.mats == E.mats


def test_twist_nonlog_coordinate():
    ch = Chart(3, 2, 1, 2)
    E = HiggsModule.trivial(ch)
    T = twist_exact(E, ch.coarse.var(1), -1)
    assert T.mats[1] == [[ch.coarse.const(-1)]]
    assert T.mats[0] == [[ch.coarse.zero()]]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_twist_involution(seed):
    ch = Chart(3, 2, 1, 2)
    rng = random.Random(seed)
    E = level_one_module(ch)
    f = rand_elem(ch.coarse, rng, 3)
    assert twist_exact(twist_exact(E, f, 1), f, -1).mats == E.mats


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([0, 1]))
def test_twisted_complexes_square_to_zero(seed, lam):
    ch = Chart(3, 2, 1, 2)
    rng = random.Random(seed)
    ring = ch.fine if lam else ch.coarse
    E = LambdaConnection(ch, ring, lam, [[[ring.zero()]] for _ in range(2)])
    C = twist_exact(E, rand_elem(ring, rng, 3), 1).complex()   # the constructor checks d o d = 0
    for q in C.degrees():
        assert not matmul_mod(C.d(q + 1), C.d(q), 3).any()


# ---------------------------------------------------------------- Hodge pairs

def test_type_one_trivial_pair():
    ch = Chart(3, 1, 1)
    pair = build_hodge_pair("I", HiggsModule.trivial(ch))
    assert pair.higgs_selector == pair.dr_selector == "full"
    assert pair.de_rham.lam == 1 and mat_is_zero(pair.de_rham.mats[0])
    assert pair.higgs.lam == 0 and mat_is_zero(pair.higgs.mats[0])


def test_type_three_generator_count():
    ch = Chart(3, 2, 2, 1, s=2)
    pair = build_hodge_pair("III", HiggsModule.trivial(ch))
    assert len(kontsevich_forms(ch, 1, ring=pair.higgs.ring)) == 3
    assert len(kontsevich_forms(ch, 1, ring=pair.de_rham.ring)) == 3
    for side in (pair.higgs_complex(), pair.de_rham_complex()):
        assert side[0].total_dim() > 0


def test_weight_pair_pole_violation():
    ch = Chart(3, 2, 2)
    E = HiggsModule.constant(ch, [[[0, 1], [0, 0]], [[0, 0], [0, 0]]])
    with pytest.raises(ValueError, match="pole violation"):
        build_hodge_pair("I-weight", E, weight=1)


def test_pair_constraints():
    ch = Chart(3, 2, 2)
    with pytest.raises(ValueError, match="Kontsevich parameter"):
        build_hodge_pair("III", HiggsModule.trivial(ch))
    with pytest.raises(ValueError, match="unknown pair type"):
        build_hodge_pair("V", HiggsModule.trivial(ch))
    chs = Chart(3, 2, 2, 1, s=1)
    with pytest.raises(ValueError, match="theta = 0"):
        build_hodge_pair("IV", level_one_module(chs))


@pytest.mark.parametrize("kind,kw", [("I", {}), ("II", {}), ("III", {}), ("I-weight", {"weight": 1})])
def test_pair_complexes_are_complexes(kind, kw):
    ch = Chart(3, 2, 2, 1, s=2)
    ring = ch.coarse
    E = HiggsModule(ch, [jordan(ring, 2), mat_zero(ring, 2)]) if kind != "I-weight" else HiggsModule.trivial(ch, 2)
    pair = build_hodge_pair(kind, E, **kw)
    for sub, spans, full in (pair.higgs_complex(), pair.de_rham_complex()):
        assert sub.total_dim() <= full.total_dim()
