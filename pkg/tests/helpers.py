
from dhlab.cartier import LiftingDatum, LiftingFamily
from dhlab.chart_algebra import mat_scale, mat_zero
from dhlab.higgs import HiggsModule


def rand_elem(ring, rng, terms=3, max_deg=None, no_constant=False):
    """Sparse random element with small exponents."""
    max_deg = ring.N - 1 if max_deg is None else max_deg
    out = ring.zero()
    for _ in range(terms):
        e = [rng.randrange(max_deg + 1) for _ in range(ring.n)]
        if no_constant and not any(e):
            continue
        out = out + ring.monomial(e, rng.randrange(ring.p))
    return out


def jordan(ring, m, c=1):
    """c times the nilpotent Jordan block of size m."""
    z, o = ring.zero(), ring.const(c)
    return [[o if j == i + 1 else z for j in range(m)] for i in range(m)]


def level_one_module(chart, scalars=None, m=2):
    """theta_i = scalars[i] * N with N^2 = 0 (rank 2 uses the single Jordan block)."""
    ring = chart.coarse
    N = jordan(ring, m)
    scalars = scalars or [i + 1 for i in range(chart.n)]
    return HiggsModule(chart, [mat_scale(N, ring.const(c)) if c else mat_zero(ring, m) for c in scalars])


def random_family(chart, rng, L, preserve_g=False, max_deg=2):
    """Standard lifting followed by L-1 random mod-p shadows."""
    fine = chart.fine
    members = [LiftingDatum(chart)]
    for _ in range(L - 1):
        w = [rand_elem(fine, rng, 2, max_deg) for _ in range(chart.r)]
        if preserve_g and chart.s:
            tot = fine.zero()
            for i in range(1, chart.s):
                tot = tot + w[i]
            w[0] = -tot
        g = [rand_elem(fine, rng, 2, max_deg) for _ in range(chart.n - chart.r)]
        members.append(LiftingDatum(chart, w, g))
    return LiftingFamily(members)
