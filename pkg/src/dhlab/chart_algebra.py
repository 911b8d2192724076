"""Truncated coordinate rings, logarithmic forms and ordered splittings.

A chart fixes a prime p, a dimension n, the number r of log coordinates and a
truncation order M.  Two rings live on it:

* the fine ring  A  = F_p[t_1..t_n] / (t_i^N),  N = p*M  (de Rham side)
* the coarse ring A' = F_p[t'_1..t'_n] / (t'_i^M)          (Higgs side)

Frobenius pullback sends t'^b to t^(p*b).  Indices are 0-based internally.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

Exp = Tuple[int, ...]
Idx = Tuple[int, ...]


# ---------------------------------------------------------------- rings

class Ring:
    """F_p[t_1..t_n] truncated at exponent N in every variable."""

    __slots__ = ("p", "n", "N")

    def __init__(self, p: int, n: int, N: int):
        self.p, self.n, self.N = p, n, N

    def __eq__(self, other):
        return isinstance(other, Ring) and (self.p, self.n, self.N) == (other.p, other.n, other.N)

    def __hash__(self):
        return hash((self.p, self.n, self.N))

    def __repr__(self):
        return f"Ring(p={self.p}, n={self.n}, N={self.N})"

    def zero(self) -> "RingElement":
        return RingElement(self, {})

    def one(self) -> "RingElement":
        return self.const(1)

    def const(self, c: int) -> "RingElement":
        return RingElement(self, {(0,) * self.n: c})

    def var(self, i: int) -> "RingElement":
        e = [0] * self.n
        e[i] = 1
        return RingElement(self, {tuple(e): 1})

    def monomial(self, e: Sequence[int], c: int = 1) -> "RingElement":
        return RingElement(self, {tuple(e): c})

    def monomials(self) -> List[Exp]:
        return list(itertools.product(range(self.N), repeat=self.n))

    def dim(self) -> int:
        return self.N ** self.n

    def in_range(self, e: Exp) -> bool:
        return all(x < self.N for x in e)


class RingElement:
    """Sparse element of a truncated ring; keys are exponent tuples."""

    __slots__ = ("ring", "terms")

    def __init__(self, ring: Ring, terms: Dict[Exp, int]):
        p, N = ring.p, ring.N
        clean = {}
        for e, c in terms.items():
            c %= p
            if c and all(x < N for x in e):
                clean[tuple(e)] = c
        self.ring = ring
        self.terms = clean

    @classmethod
    def _raw(cls, ring, terms):
        obj = cls.__new__(cls)
        obj.ring = ring
        obj.terms = terms
        return obj

    def _check(self, other):
        if not isinstance(other, RingElement):
            raise TypeError("expected RingElement")
        if other.ring != self.ring:
            raise ValueError("chart mismatch")

    def __add__(self, other):
        if isinstance(other, int):
            other = self.ring.const(other)
        self._check(other)
        p = self.ring.p
        out = dict(self.terms)
        for e, c in other.terms.items():
            v = (out.get(e, 0) + c) % p
            if v:
                out[e] = v
            else:
                out.pop(e, None)
        return RingElement._raw(self.ring, out)

    __radd__ = __add__

    def __neg__(self):
        p = self.ring.p
        return RingElement._raw(self.ring, {e: (p - c) % p for e, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, int):
            other = self.ring.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c: int) -> "RingElement":
        c %= self.ring.p
        if not c:
            return self.ring.zero()
        p = self.ring.p
        return RingElement._raw(self.ring, {e: v * c % p for e, v in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, int):
            return self.scale(other)
        self._check(other)
        p, N = self.ring.p, self.ring.N
        out: Dict[Exp, int] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                if max(e, default=0) >= N:
                    continue
                out[e] = (out.get(e, 0) + c1 * c2) % p
        return RingElement._raw(self.ring, {e: c for e, c in out.items() if c})

    __rmul__ = __mul__

    def __pow__(self, k: int):
        result = self.ring.one()
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if isinstance(other, int):
            other = self.ring.const(other)
        return isinstance(other, RingElement) and self.ring == other.ring and self.terms == other.terms

    def __hash__(self):
        return hash(tuple(sorted(self.terms.items())))

    def __bool__(self):
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def constant_term(self) -> int:
        return self.terms.get((0,) * self.ring.n, 0)

    def derivative(self, i: int) -> "RingElement":
        """Plain partial derivative in t_i."""
        p = self.ring.p
        out = {}
        for e, c in self.terms.items():
            if e[i] % p:
                f = list(e)
                f[i] -= 1
                out[tuple(f)] = c * e[i] % p
        return RingElement._raw(self.ring, out)

    def log_derivative(self, i: int) -> "RingElement":
        """t_i * d/dt_i."""
        p = self.ring.p
        return RingElement._raw(self.ring, {e: c * e[i] % p for e, c in self.terms.items() if e[i] % p})

    def shift(self, e: Exp) -> "RingElement":
        """Multiply by the monomial t^e."""
        N = self.ring.N
        out = {}
        for f, c in self.terms.items():
            g = tuple(a + b for a, b in zip(f, e))
            if max(g, default=0) < N:
                out[g] = c
        return RingElement._raw(self.ring, out)

    def divisible_by_var(self, i: int) -> bool:
        return all(e[i] > 0 for e in self.terms)

    def frobenius(self, target: Ring) -> "RingElement":
        """Pull back along t' -> t^p into the fine ring."""
        p = self.ring.p
        return RingElement(target, {tuple(p * x for x in e): c for e, c in self.terms.items()})

    def reindex(self, target: Ring) -> "RingElement":
        """Same polynomial read in another truncation of the same variables."""
        return RingElement(target, dict(self.terms))

    def sorted_terms(self) -> List[Tuple[Exp, int]]:
        return sorted(self.terms.items())

    def encode(self) -> list:
        return [[c, list(e)] for e, c in self.sorted_terms()]

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for e, c in self.sorted_terms():
            mono = "*".join(f"t{i + 1}^{x}" if x > 1 else f"t{i + 1}" for i, x in enumerate(e) if x)
            parts.append(f"{c}*{mono}" if mono else str(c))
        return " + ".join(parts)


def decode_element(ring: Ring, data) -> RingElement:
    """Inverse of RingElement.encode; raises ValueError on malformed input."""
    terms: Dict[Exp, int] = {}
    for item in data:
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise ValueError(f"bad term {item!r}")
        c, e = item
        if not isinstance(c, int) or not isinstance(e, (list, tuple)) or len(e) != ring.n:
            raise ValueError(f"bad term {item!r}")
        if any((not isinstance(x, int)) or x < 0 for x in e):
            raise ValueError(f"bad exponent {e!r}")
        e = tuple(e)
        terms[e] = (terms.get(e, 0) + c) % ring.p
    return RingElement(ring, terms)


# ---------------------------------------------------------------- matrices over a ring

Matrix = List[List[RingElement]]


def mat_zero(ring: Ring, m: int) -> Matrix:
    return [[ring.zero() for _ in range(m)] for _ in range(m)]


def mat_identity(ring: Ring, m: int) -> Matrix:
    return [[ring.one() if i == j else ring.zero() for j in range(m)] for i in range(m)]


def mat_const(ring: Ring, rows: Sequence[Sequence[int]]) -> Matrix:
    return [[ring.const(c) for c in row] for row in rows]


def mat_add(a: Matrix, b: Matrix) -> Matrix:
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_sub(a: Matrix, b: Matrix) -> Matrix:
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_scale(a: Matrix, c) -> Matrix:
    return [[x * c for x in row] for row in a]


def mat_mul(a: Matrix, b: Matrix) -> Matrix:
    m, k, q = len(a), len(b), len(b[0]) if b else 0
    out = []
    for i in range(m):
        row = []
        for j in range(q):
            acc = None
            for t in range(k):
                x, y = a[i][t], b[t][j]
                if x.terms and y.terms:
                    acc = x * y if acc is None else acc + x * y
            row.append(acc if acc is not None else a[0][0].ring.zero())
        out.append(row)
    return out


def mat_is_zero(a: Matrix) -> bool:
    return all(x.is_zero() for row in a for x in row)


def mat_eq(a: Matrix, b: Matrix) -> bool:
    return all(x == y for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def mat_frobenius(a: Matrix, target: Ring) -> Matrix:
    return [[x.frobenius(target) for x in row] for row in a]


def mat_reindex(a: Matrix, target: Ring) -> Matrix:
    return [[x.reindex(target) for x in row] for row in a]


def mat_apply(a: Matrix, v: Sequence[RingElement]) -> List[RingElement]:
    out = []
    for row in a:
        acc = v[0].ring.zero()
        for x, y in zip(row, v):
            if x.terms and y.terms:
                acc = acc + x * y
        out.append(acc)
    return out


def mat_exp(x: Matrix, p: int) -> Matrix:
    """Truncated exponential sum_{k<p} x^k/k!; exact when x^p = 0."""
    ring = x[0][0].ring
    m = len(x)
    total = mat_identity(ring, m)
    power = mat_identity(ring, m)
    for k in range(1, p):
        power = mat_mul(power, x)
        if mat_is_zero(power):
            break
        total = mat_add(total, mat_scale(power, pow(math.factorial(k), -1, p)))
    return total


def mat_inverse(a: Matrix) -> Matrix:
    """Inverse of a matrix whose constant part is invertible mod p."""
    ring = a[0][0].ring
    p, m = ring.p, len(a)
    const = [[x.constant_term() for x in row] for row in a]
    c_inv = _const_inverse(const, p)
    if c_inv is None:
        raise ValueError("matrix is not invertible")
    c_inv_m = mat_const(ring, c_inv)
    # a = c (1 + u) with u nilpotent; invert 1 + u by the geometric series
    u = mat_sub(mat_mul(c_inv_m, a), mat_identity(ring, m))
    total = mat_identity(ring, m)
    term = mat_identity(ring, m)
    sign = 1
    while True:
        term = mat_mul(term, u)
        sign = -sign
        if mat_is_zero(term):
            break
        total = mat_add(total, mat_scale(term, sign))
    return mat_mul(total, c_inv_m)


def _const_inverse(a: Sequence[Sequence[int]], p: int) -> Optional[List[List[int]]]:
    m = len(a)
    aug = [[x % p for x in row] + [1 if i == j else 0 for j in range(m)] for i, row in enumerate(a)]
    for col in range(m):
        piv = next((r for r in range(col, m) if aug[r][col]), None)
        if piv is None:
            return None
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = pow(aug[col][col], -1, p)
        aug[col] = [x * inv % p for x in aug[col]]
        for r in range(m):
            if r != col and aug[r][col]:
                f = aug[r][col]
                aug[r] = [(x - f * y) % p for x, y in zip(aug[r], aug[col])]
    return [row[m:] for row in aug]


# ---------------------------------------------------------------- the chart

@dataclass(frozen=True)
class Chart:
    p: int
    n: int
    r: int
    M: int = 1
    s: Optional[int] = None

    def __post_init__(self):
        if self.p < 2 or any(self.p % d == 0 for d in range(2, int(self.p ** 0.5) + 1)):
            raise ValueError(f"p={self.p} is not prime")
        if self.n < 0 or not 0 <= self.r <= self.n:
            raise ValueError("need 0 <= r <= n")
        if self.M < 1:
            raise ValueError("need M >= 1")
        if self.s is not None and not 0 < self.s <= self.r:
            raise ValueError("need 0 < s <= r")

    @property
    def N(self) -> int:
        return self.p * self.M

    @property
    def fine(self) -> Ring:
        return Ring(self.p, self.n, self.N)

    @property
    def coarse(self) -> Ring:
        return Ring(self.p, self.n, self.M)

    def is_log(self, i: int) -> bool:
        return i < self.r

    def derive(self, a: RingElement, i: int) -> RingElement:
        """Coefficient of omega_i in da."""
        return a.log_derivative(i) if self.is_log(i) else a.derivative(i)

    def g(self) -> RingElement:
        """The Kontsevich function t_1...t_s on the fine ring."""
        if self.s is None:
            raise ValueError("chart has no Kontsevich parameter s")
        return self.fine.monomial([1] * self.s + [0] * (self.n - self.s))


# ---------------------------------------------------------------- wedge combinatorics

def subsets(n: int, q: int) -> List[Idx]:
    return list(itertools.combinations(range(n), q))


def perm_sign(seq: Sequence[int]) -> int:
    """Sign of the permutation sorting seq; 0 if seq has repeats."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def insert_sign(j: int, idx: Idx) -> Tuple[int, Idx]:
    """omega_j ^ omega_idx = sign * omega_(idx + j)."""
    if j in idx:
        return 0, idx
    before = sum(1 for i in idx if i < j)
    return (-1) ** before, tuple(sorted(idx + (j,)))


class LogForm:
    """Sum of coefficient * omega_I over ascending index tuples I."""

    __slots__ = ("chart", "ring", "degree", "coeffs")

    def __init__(self, chart: Chart, degree: int, coeffs: Dict[Idx, RingElement], ring: Optional[Ring] = None):
        self.chart = chart
        self.ring = ring or chart.fine
        self.degree = degree
        clean = {}
        for I, c in coeffs.items():
            I = tuple(I)
            if len(I) != degree:
                raise ValueError("index set has wrong cardinality")
            if c.ring != self.ring:
                raise ValueError("chart mismatch")
            if c.terms:
                clean[I] = c
        self.coeffs = clean

    @classmethod
    def zero(cls, chart: Chart, degree: int, ring: Optional[Ring] = None):
        return cls(chart, degree, {}, ring)

    @classmethod
    def function(cls, chart: Chart, a: RingElement):
        return cls(chart, 0, {(): a}, a.ring)

    @classmethod
    def basis(cls, chart: Chart, I: Idx, ring: Optional[Ring] = None):
        ring = ring or chart.fine
        return cls(chart, len(I), {tuple(I): ring.one()}, ring)

    def __add__(self, other: "LogForm") -> "LogForm":
        if other.degree != self.degree:
            raise ValueError("degree mismatch")
        out = dict(self.coeffs)
        for I, c in other.coeffs.items():
            out[I] = out[I] + c if I in out else c
        return LogForm(self.chart, self.degree, out, self.ring)

    def __neg__(self):
        return LogForm(self.chart, self.degree, {I: -c for I, c in self.coeffs.items()}, self.ring)

    def __sub__(self, other):
        return self + (-other)

    def __eq__(self, other):
        return isinstance(other, LogForm) and self.degree == other.degree and self.coeffs == other.coeffs

    def times(self, a) -> "LogForm":
        return LogForm(self.chart, self.degree, {I: c * a for I, c in self.coeffs.items()}, self.ring)

    def wedge(self, other: "LogForm") -> "LogForm":
        out: Dict[Idx, RingElement] = {}
        for I, a in self.coeffs.items():
            for J, b in other.coeffs.items():
                if set(I) & set(J):
                    continue
                sgn = perm_sign(I + J)
                K = tuple(sorted(I + J))
                term = (a * b).scale(sgn)
                out[K] = out[K] + term if K in out else term
        return LogForm(self.chart, self.degree + other.degree, out, self.ring)

    def is_zero(self) -> bool:
        return not self.coeffs

    def __repr__(self):
        if not self.coeffs:
            return "0"
        return " + ".join(f"({c})w{[i + 1 for i in I]}" for I, c in sorted(self.coeffs.items()))


def exterior_d(xi: LogForm) -> LogForm:
    """d(c omega_I) = sum_j D_j(c) omega_j ^ omega_I; every omega_i is closed."""
    chart = xi.chart
    if xi.degree >= chart.n:
        raise ValueError("exterior_d: input already has top degree")
    out: Dict[Idx, RingElement] = {}
    for I, c in xi.coeffs.items():
        for j in range(chart.n):
            if j in I:
                continue
            dc = chart.derive(c, j)
            if not dc.terms:
                continue
            sgn, K = insert_sign(j, I)
            term = dc.scale(sgn)
            out[K] = out[K] + term if K in out else term
    return LogForm(chart, xi.degree + 1, out, xi.ring)


def d_function(chart: Chart, a: RingElement) -> LogForm:
    """da as a 1-form (works in every dimension, including n = 1)."""
    return LogForm(chart, 1, {(j,): chart.derive(a, j) for j in range(chart.n)}, a.ring)


# ---------------------------------------------------------------- decomposition of functions

@dataclass
class Decomposition:
    """f = sum_i F^*(h_i) * t^i over residues i in {0..p-1}^n."""
    chart: Chart
    parts: Dict[Exp, RingElement]

    @property
    def constant_part(self) -> RingElement:
        return self.parts.get((0,) * self.chart.n, self.chart.coarse.zero())

    def reassemble(self) -> RingElement:
        fine = self.chart.fine
        total = fine.zero()
        for i, h in self.parts.items():
            total = total + h.frobenius(fine).shift(i)
        return total

    def pieces(self) -> Dict[Exp, RingElement]:
        """The summands f_i = h_i^p t^i as fine ring elements."""
        fine = self.chart.fine
        return {i: h.frobenius(fine).shift(i) for i, h in self.parts.items()}


def decompose_function(chart: Chart, f: RingElement) -> Decomposition:
    p = chart.p
    coarse = chart.coarse
    buckets: Dict[Exp, Dict[Exp, int]] = {}
    for e, c in f.terms.items():
        i = tuple(x % p for x in e)
        b = tuple(x // p for x in e)
        buckets.setdefault(i, {})[b] = c
    return Decomposition(chart, {i: RingElement(coarse, t) for i, t in sorted(buckets.items())})


# ---------------------------------------------------------------- ordered splittings

class OrderedSplitting:
    """Block map D (values 1..beta, nondecreasing) with an optional adapted basis.

    The adapted basis is given by a coarse matrix P whose column j expresses the
    new form omega'_j = sum_i P[i][j] omega_i.  Without P the coordinate forms
    are used.
    """

    def __init__(self, chart: Chart, D: Sequence[int], basis: Optional[Matrix] = None):
        D = tuple(int(x) for x in D)
        if len(D) != chart.n:
            raise ValueError("block map has wrong length")
        if any(b > a for a, b in zip(D[1:], D)):
            raise ValueError("block map must be nondecreasing")
        if D and (D[0] != 1 or set(D) != set(range(1, max(D) + 1))):
            raise ValueError("block map must be surjective onto 1..beta")
        self.chart = chart
        self.D = D
        self.beta = max(D) if D else 0
        if basis is not None:
            if len(basis) != chart.n or any(len(row) != chart.n for row in basis):
                raise ValueError("basis matrix has wrong shape")
            basis = [[x if isinstance(x, RingElement) else chart.coarse.const(x) for x in row] for row in basis]
            self.inverse = mat_inverse(basis)
        else:
            self.inverse = None
        self.basis = basis

    @property
    def ranks(self) -> List[int]:
        return [self.D.count(b) for b in range(1, self.beta + 1)]

    def block(self, b: int) -> List[int]:
        return [i for i, x in enumerate(self.D) if x == b]

    def is_coordinate(self) -> bool:
        return self.basis is None

    def merge(self, o: int) -> "OrderedSplitting":
        """Merge blocks o and o+1 (1-based)."""
        if not 1 <= o < self.beta:
            raise ValueError("merge index out of range")
        D = tuple(x if x <= o else x - 1 for x in self.D)
        return OrderedSplitting(self.chart, D, self.basis)

    def with_basis(self, basis: Matrix) -> "OrderedSplitting":
        return OrderedSplitting(self.chart, self.D, basis)

    def __repr__(self):
        return f"OrderedSplitting(D={self.D}, adapted={self.basis is not None})"


# ---------------------------------------------------------------- sec_split

Tensor = Dict[Tuple[int, ...], RingElement]


def _antisym(idx: Sequence[int], p: int) -> List[Tuple[Tuple[int, ...], int]]:
    k = len(idx)
    if k >= p:
        raise ValueError("blockwise degree >= p: factorial division undefined")
    w = pow(math.factorial(k), -1, p)
    out = []
    for perm in itertools.permutations(idx):
        out.append((perm, perm_sign(perm) * w % p))
    return out


def sec_split(coeffs: Dict[Idx, RingElement], splitting: OrderedSplitting) -> Tensor:
    """Blockwise antisymmetrised section of the wedge projection.

    coeffs maps ascending index tuples (against the adapted basis) to ring
    elements.  The result maps sequences of adapted-basis indices to ring
    elements, blocks in increasing order.
    """
    p = splitting.chart.p
    out: Tensor = {}
    for I, c in coeffs.items():
        if not c.terms:
            continue
        per_block = []
        for b in range(1, splitting.beta + 1):
            part = [i for i in I if splitting.D[i] == b]
            per_block.append(_antisym(part, p))
        for combo in itertools.product(*per_block):
            seq = tuple(x for perm, _ in combo for x in perm)
            w = 1
            for _, wt in combo:
                w = w * wt % p
            term = c.scale(w)
            out[seq] = out[seq] + term if seq in out else term
    return {k: v for k, v in out.items() if v.terms}


def wedge_projection(tensor: Tensor, ring: Ring) -> Dict[Idx, RingElement]:
    out: Dict[Idx, RingElement] = {}
    for seq, c in tensor.items():
        sgn = perm_sign(seq)
        if not sgn:
            continue
        K = tuple(sorted(seq))
        term = c.scale(sgn)
        out[K] = out[K] + term if K in out else term
    return {k: v for k, v in out.items() if v.terms}


def tensor_change_basis(tensor: Tensor, Q: Matrix) -> Tensor:
    """Rewrite a tensor in basis w'' (w''_j = sum_i Q[i][j] w'_i) in terms of w'."""
    out: Tensor = {}
    n = len(Q)
    for seq, c in tensor.items():
        choices = []
        for j in seq:
            choices.append([(i, Q[i][j]) for i in range(n) if Q[i][j].terms])
        for combo in itertools.product(*choices):
            coef = c
            for _, q in combo:
                coef = coef * q
            key = tuple(i for i, _ in combo)
            out[key] = out[key] + coef if key in out else coef
    return {k: v for k, v in out.items() if v.terms}


def wedge_change_basis(coeffs: Dict[Idx, RingElement], Q: Matrix) -> Dict[Idx, RingElement]:
    """Coefficients in basis w' of a form given by coefficients in w'' = w' Q."""
    out: Dict[Idx, RingElement] = {}
    n = len(Q)
    for J, c in coeffs.items():
        choices = [[(i, Q[i][j]) for i in range(n) if Q[i][j].terms] for j in J]
        for combo in itertools.product(*choices):
            seq = tuple(i for i, _ in combo)
            sgn = perm_sign(seq)
            if not sgn:
                continue
            coef = c.scale(sgn)
            for _, q in combo:
                coef = coef * q
            K = tuple(sorted(seq))
            out[K] = out[K] + coef if K in out else coef
    return {k: v for k, v in out.items() if v.terms}


# ---------------------------------------------------------------- distinguished subcomplexes

def weight_member(chart: Chart, gamma: Exp, I: Idx, i: int) -> bool:
    """Is t^gamma omega_I in W_i (at most i genuine log poles)?"""
    poles = sum(1 for k in I if chart.is_log(k) and gamma[k] == 0)
    return poles <= i


def kontsevich_forms(chart: Chart, q: int, basis: bool = False, ring: Optional[Ring] = None) -> List[LogForm]:
    """Module generators dlog g ^ omega_I (I in {2..n}) and g omega_J of degree q.

    With basis=True the g omega_J part is restricted to J in {2..n}, which
    gives a free basis of the Kontsevich module.
    """
    if chart.s is None:
        raise ValueError("Kontsevich generators need the parameter s")
    ring = ring or chart.fine
    g = ring.monomial([1] * chart.s + [0] * (chart.n - chart.s))
    dlog_g = LogForm(chart, 1, {(k,): ring.one() for k in range(chart.s)}, ring)
    rest = list(range(1, chart.n))
    gens = []
    if q >= 1:
        for I in itertools.combinations(rest, q - 1):
            gens.append(dlog_g.wedge(LogForm.basis(chart, I, ring)))
    for J in itertools.combinations(rest if basis else range(chart.n), q):
        gens.append(LogForm.basis(chart, J, ring).times(g))
    return gens


# ---------------------------------------------------------------- free modules over a ring

class FreeModel:
    """F_p-coordinates on R^m and on R^m (x) Omega^q.

    The order of coordinates matches chain.koszul: index sets I outermost
    (in itertools.combinations order), then module index k, then monomial.
    """

    def __init__(self, ring: Ring, m: int):
        self.ring, self.m = ring, m
        self.monos = ring.monomials()
        self.R = len(self.monos)
        self.dim = m * self.R
        self.labels = [(k, e) for k in range(m) for e in self.monos]

    def mono_index(self, e: Exp) -> int:
        idx = 0
        for x in e:
            idx = idx * self.ring.N + x
        return idx

    def index(self, k: int, e: Exp) -> int:
        return k * self.R + self.mono_index(e)

    def to_array(self, vec: Sequence[RingElement]) -> "np.ndarray":
        import numpy as np
        out = np.zeros(self.dim, dtype=np.int64)
        for k, x in enumerate(vec):
            for e, c in x.terms.items():
                out[self.index(k, e)] = c
        return out

    def from_array(self, arr) -> List[RingElement]:
        vec = [dict() for _ in range(self.m)]
        for i in map(int, arr.nonzero()[0]):
            k, e = self.labels[i]
            vec[k][e] = int(arr[i])
        return [RingElement(self.ring, t) for t in vec]

    def basis_vector(self, k: int, e: Exp) -> List[RingElement]:
        return [self.ring.monomial(e) if j == k else self.ring.zero() for j in range(self.m)]

    def form_array(self, n: int, q: int, comps: Dict[Idx, Sequence[RingElement]]) -> "np.ndarray":
        import numpy as np
        subs = subsets(n, q)
        out = np.zeros(len(subs) * self.dim, dtype=np.int64)
        pos = {I: i for i, I in enumerate(subs)}
        for I, vec in comps.items():
            b = pos[tuple(I)] * self.dim
            out[b:b + self.dim] = (out[b:b + self.dim] + self.to_array(vec)) % self.ring.p
        return out

    def form_from_array(self, n: int, q: int, arr) -> Dict[Idx, List[RingElement]]:
        out = {}
        for i, I in enumerate(subsets(n, q)):
            block = arr[i * self.dim:(i + 1) * self.dim]
            if block.any():
                out[I] = self.from_array(block)
        return out


def vec_scale(vec: Sequence[RingElement], a) -> List[RingElement]:
    return [x * a for x in vec]


def vec_add(u: Sequence[RingElement], v: Sequence[RingElement]) -> List[RingElement]:
    return [x + y for x, y in zip(u, v)]


# ---------------------------------------------------------------- subcomplex generators

def parse_kind(kind) -> Tuple[str, Optional[int]]:
    """'full' | 'intersection' | 'kontsevich' | 'weight(i)' | ('weight', i)."""
    if isinstance(kind, tuple):
        return kind[0], (kind[1] if len(kind) > 1 else None)
    kind = str(kind)
    if kind.startswith("weight"):
        inner = kind[len("weight"):].strip("() ")
        return "weight", int(inner) if inner else 0
    if kind not in ("full", "intersection", "kontsevich"):
        raise ValueError(f"unknown subcomplex kind {kind!r}")
    return kind, None


def subcomplex_generators(chart: Chart, kind, E, degrees: Optional[Iterable[int]] = None
                          ) -> Dict[int, List[Dict[Idx, List[RingElement]]]]:
    """F_p-spanning sets of a distinguished subcomplex of E (x) Omega^q.

    E is a lambda-connection (Higgs field or connection) exposing ``ring``,
    ``m``, ``component(j, vec)`` and ``matrix_part(j)``.  Every generator is a
    map from index sets to module vectors.
    """
    name, i = parse_kind(kind)
    ring, m, n = E.ring, E.m, chart.n
    model = FreeModel(ring, m)
    degrees = list(range(n + 1)) if degrees is None else list(degrees)
    out: Dict[int, List[Dict[Idx, List[RingElement]]]] = {}
    basis = [model.basis_vector(k, e) for k, e in model.labels]
    if name == "weight":
        for j in range(chart.r):
            if any(not x.divisible_by_var(j) for row in E.matrix_part(j) for x in row):
                raise ValueError(f"pole violation: component {j + 1} has a log pole")
    if name == "kontsevich" and chart.s is None:
        raise ValueError("kontsevich generators need the parameter s")
    for q in degrees:
        gens = []
        if name == "full":
            for I in subsets(n, q):
                gens.extend({I: v} for v in basis)
        elif name == "weight":
            for I in subsets(n, q):
                for k, e in model.labels:
                    if weight_member(chart, e, I, i):
                        gens.append({I: model.basis_vector(k, e)})
        elif name == "intersection":
            for I in subsets(n, q):
                K = [k for k in I if chart.is_log(k)]
                for size in range(len(K) + 1):
                    for J in itertools.combinations(K, size):
                        rest = [k for k in K if k not in J]
                        tJ = ring.monomial([1 if k in J else 0 for k in range(n)])
                        for v in basis:
                            w = v
                            for k in rest:
                                w = E.component(k, w)
                            w = vec_scale(w, tJ)
                            if any(x.terms for x in w):
                                gens.append({I: w})
        elif name == "kontsevich":
            for form in kontsevich_forms(chart, q, ring=ring):
                for k, e in model.labels:
                    mono = ring.monomial(e)
                    g = {}
                    for I, c in form.coeffs.items():
                        cc = c * mono
                        if cc.terms:
                            g[I] = [cc if j == k else ring.zero() for j in range(m)]
                    if g:
                        gens.append(g)
        out[q] = gens
    return out


def generator_rows(chart: Chart, model: FreeModel, q: int, gens) -> "np.ndarray":
    import numpy as np
    rows = [model.form_array(chart.n, q, g) for g in gens]
    if not rows:
        return np.zeros((0, len(subsets(chart.n, q)) * model.dim), dtype=np.int64)
    return np.array(rows, dtype=np.int64)
