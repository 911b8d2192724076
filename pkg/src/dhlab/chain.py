"""Finite-dimensional cochain complexes over F_p.

Differentials are dense integer matrices acting on column vectors:
``d[q]`` has shape (dim C^{q+1}, dim C^q).  Exact ranks, echelon forms and
null spaces are delegated to FLINT's nmod_mat.

Sign convention for maps of degree k: f is a chain map when
d o f = (-1)^k f o d, and a degree -1 map h is a homotopy from f to g when
d o h + h o d = f - g.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

import flint
import numpy as np


# ---------------------------------------------------------------- F_p linear algebra

def _flint(a: np.ndarray, p: int) -> "flint.nmod_mat":
    a = np.asarray(a, dtype=np.int64) % p
    rows, cols = a.shape
    return flint.nmod_mat(rows, cols, a.ravel().tolist(), p)


def _from_flint(m: "flint.nmod_mat") -> np.ndarray:
    rows, cols = m.nrows(), m.ncols()
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=np.int64)
    return np.array([int(x) for x in m.entries()], dtype=np.int64).reshape(rows, cols)


def rank_mod(a: np.ndarray, p: int) -> int:
    a = np.asarray(a)
    if a.size == 0:
        return 0
    a = a % p
    if not a.any():
        return 0
    return _flint(a, p).rank()


def rref_mod(a: np.ndarray, p: int) -> Tuple[np.ndarray, List[int]]:
    """Reduced row echelon form (nonzero rows only) and pivot columns."""
    a = np.asarray(a, dtype=np.int64)
    if a.size == 0 or not (a % p).any():
        return np.zeros((0, a.shape[1]), dtype=np.int64), []
    r, rk = _flint(a, p).rref()
    r = _from_flint(r)[:rk]
    pivots = [int(np.flatnonzero(row)[0]) for row in r]
    return r, pivots


def nullspace_mod(a: np.ndarray, p: int) -> np.ndarray:
    """Columns form a basis of {x : a x = 0}."""
    a = np.asarray(a, dtype=np.int64)
    rows, cols = a.shape
    if cols == 0:
        return np.zeros((0, 0), dtype=np.int64)
    if rows == 0 or not (a % p).any():
        return np.eye(cols, dtype=np.int64)
    x, nullity = _flint(a, p).nullspace()
    return _from_flint(x)[:, :nullity]


def matmul_mod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    a, b = a % p, b % p
    # float64 BLAS is exact while every partial sum stays below 2^53
    k = a.shape[1]
    step = max(1, (1 << 52) // max(1, (p - 1) ** 2))
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    for lo in range(0, k, step):
        hi = min(k, lo + step)
        part = a[:, lo:hi].astype(np.float64) @ b[lo:hi].astype(np.float64)
        out = (out + np.fmod(part, p).astype(np.int64)) % p
    return out


class Span:
    """Row space of a matrix, kept in reduced echelon form."""

    def __init__(self, rows: np.ndarray, p: int, dim: Optional[int] = None):
        rows = np.asarray(rows, dtype=np.int64)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if dim is not None and rows.size == 0:
            rows = np.zeros((0, dim), dtype=np.int64)
        self.p = p
        self.ambient = rows.shape[1]
        self.rows, self.pivots = rref_mod(rows, p)

    @property
    def dim(self) -> int:
        return len(self.pivots)

    def reduce(self, v: np.ndarray) -> np.ndarray:
        """Remainder of each row of v after eliminating the pivot columns."""
        v = np.asarray(v, dtype=np.int64) % self.p
        if not self.pivots:
            return v
        single = v.ndim == 1
        v2 = v.reshape(1, -1) if single else v
        out = (v2 - v2[:, self.pivots] @ self.rows) % self.p
        return out[0] if single else out

    def contains(self, v: np.ndarray) -> bool:
        return not self.reduce(v).any()

    def coords(self, v: np.ndarray) -> np.ndarray:
        """Coordinates of members (rows of v) in the echelon basis."""
        v = np.asarray(v, dtype=np.int64) % self.p
        return v[..., self.pivots]

    def __contains__(self, v):
        return self.contains(v)

    def issubspace(self, other: "Span") -> bool:
        return all(other.contains(row) for row in self.rows)

    def __eq__(self, other):
        return isinstance(other, Span) and self.dim == other.dim and self.issubspace(other)


class Subquotient:
    """Z / B for subspaces B <= Z of F_p^dim, given by spanning rows."""

    def __init__(self, Z: np.ndarray, B: np.ndarray, p: int, dim: int):
        self.p, self.ambient = p, dim
        self.B = Span(np.asarray(B).reshape(-1, dim), p, dim)
        Zred = self.B.reduce(np.asarray(Z).reshape(-1, dim)) if np.asarray(Z).size else np.zeros((0, dim), dtype=np.int64)
        self.C = Span(Zred, p, dim)

    @property
    def dim(self) -> int:
        return self.C.dim

    def embed(self) -> np.ndarray:
        """Representatives as columns, shape (ambient, dim)."""
        return self.C.rows.T.copy()

    def project(self, vecs: np.ndarray) -> np.ndarray:
        """Coordinates of columns of vecs (assumed to lie in Z), shape (dim, k)."""
        v = np.asarray(vecs, dtype=np.int64).T
        return self.C.coords(self.B.reduce(v)).T % self.p

    def residual(self, vecs: np.ndarray) -> np.ndarray:
        v = np.asarray(vecs, dtype=np.int64).T
        return self.C.reduce(self.B.reduce(v)).T


# ---------------------------------------------------------------- complexes

class ChainComplex:
    """Cochain complex with labeled bases; d[q] : C^q -> C^{q+1}."""

    def __init__(self, p: int, bases: Dict[int, Sequence[Hashable]], diffs: Optional[Dict[int, np.ndarray]] = None,
                 check: bool = True):
        self.p = p
        self.bases = {q: list(b) for q, b in bases.items()}
        self.diffs: Dict[int, np.ndarray] = {}
        for q, m in (diffs or {}).items():
            m = np.asarray(m, dtype=np.int64) % p
            if m.shape != (self.dim(q + 1), self.dim(q)):
                raise ValueError(f"differential in degree {q} has shape {m.shape}, "
                                 f"expected {(self.dim(q + 1), self.dim(q))}")
            self.diffs[q] = m
        if check:
            for q in self.degrees():
                dd = matmul_mod(self.d(q + 1), self.d(q), p)
                if dd.any():
                    raise ValueError(f"d o d != 0 in degree {q}")

    def degrees(self) -> List[int]:
        return sorted(q for q, b in self.bases.items() if len(b))

    def dim(self, q: int) -> int:
        return len(self.bases.get(q, ()))

    def d(self, q: int) -> np.ndarray:
        m = self.diffs.get(q)
        if m is None:
            return np.zeros((self.dim(q + 1), self.dim(q)), dtype=np.int64)
        return m

    def total_dim(self) -> int:
        return sum(self.dim(q) for q in self.bases)

    def label(self, q: int, i: int):
        return self.bases[q][i]

    def permuted(self, perms: Dict[int, Sequence[int]]) -> "ChainComplex":
        """Reorder bases: new index k holds old index perms[q][k]."""
        bases = {q: [b[i] for i in perms.get(q, range(len(b)))] for q, b in self.bases.items()}
        diffs = {}
        for q in self.bases:
            src = list(perms.get(q, range(self.dim(q))))
            tgt = list(perms.get(q + 1, range(self.dim(q + 1))))
            if self.dim(q) and self.dim(q + 1):
                diffs[q] = self.d(q)[np.ix_(tgt, src)]
        return ChainComplex(self.p, bases, diffs)


def homology_ranks(C: ChainComplex) -> List[Tuple[int, int, int, int]]:
    """Rows (degree, dim ker d_q, dim im d_{q-1}, dim H^q)."""
    qs = sorted(set(C.bases))
    out = []
    ranks = {q: rank_mod(C.d(q), C.p) for q in qs}
    for q in qs:
        ker = C.dim(q) - ranks[q]
        im = ranks.get(q - 1, 0)
        out.append((q, ker, im, ker - im))
    return out


def betti(C: ChainComplex) -> Dict[int, int]:
    return {q: h for q, _, _, h in homology_ranks(C)}


def is_acyclic(C: ChainComplex) -> bool:
    return all(h == 0 for _, _, _, h in homology_ranks(C))


# ---------------------------------------------------------------- maps

class ChainMap:
    """Degree-`shift` map; mats[q] has shape (dim T^{q+shift}, dim S^q)."""

    def __init__(self, source: ChainComplex, target: ChainComplex, mats: Dict[int, np.ndarray], shift: int = 0):
        self.source, self.target, self.shift = source, target, shift
        self.mats: Dict[int, np.ndarray] = {}
        p = source.p
        for q, m in mats.items():
            m = np.asarray(m, dtype=np.int64) % p
            want = (target.dim(q + shift), source.dim(q))
            if m.shape != want:
                raise ValueError(f"map in degree {q} has shape {m.shape}, expected {want}")
            self.mats[q] = m

    def at(self, q: int) -> np.ndarray:
        m = self.mats.get(q)
        if m is None:
            return np.zeros((self.target.dim(q + self.shift), self.source.dim(q)), dtype=np.int64)
        return m

    def compose(self, other: "ChainMap") -> "ChainMap":
        """self o other."""
        p = self.source.p
        mats = {}
        for q in other.source.bases:
            mats[q] = matmul_mod(self.at(q + other.shift), other.at(q), p)
        return ChainMap(other.source, self.target, mats, self.shift + other.shift)

    def __sub__(self, other: "ChainMap") -> "ChainMap":
        qs = set(self.source.bases) | set(other.source.bases)
        return ChainMap(self.source, self.target, {q: self.at(q) - other.at(q) for q in qs}, self.shift)

    def __add__(self, other: "ChainMap") -> "ChainMap":
        qs = set(self.source.bases) | set(other.source.bases)
        return ChainMap(self.source, self.target, {q: self.at(q) + other.at(q) for q in qs}, self.shift)

    def is_zero(self) -> bool:
        return all(not (self.at(q) % self.source.p).any() for q in self.source.bases)


def identity_map(C: ChainComplex) -> ChainMap:
    return ChainMap(C, C, {q: np.eye(C.dim(q), dtype=np.int64) for q in C.bases})


def zero_map(S: ChainComplex, T: ChainComplex, shift: int = 0) -> ChainMap:
    return ChainMap(S, T, {}, shift)


@dataclass
class Verdict:
    claim: str
    ok: bool
    degree: Optional[int] = None
    witness: Optional[str] = None
    detail: Dict[str, Any] = field(default_factory=dict)

    def row(self) -> Tuple[str, Optional[int], str, Optional[str]]:
        return (self.claim, self.degree, "pass" if self.ok else "fail", self.witness)

    def __bool__(self):
        return self.ok


def _first_bad(diff: np.ndarray, labels: Sequence) -> Optional[str]:
    cols = np.flatnonzero(diff.any(axis=0))
    if not len(cols):
        return None
    c = int(cols[0])
    return repr(labels[c]) if c < len(labels) else f"#{c}"


def mapping_cone(f: ChainMap) -> ChainComplex:
    """Cone^q = S^{q+1} + T^q with d(s, t) = (-d s, f s + d t)."""
    if f.shift != 0:
        raise ValueError("cone needs a degree-0 map")
    S, T, p = f.source, f.target, f.source.p
    qs = set(q - 1 for q in S.bases) | set(T.bases)
    bases = {q: [("src", x) for x in S.bases.get(q + 1, [])] + [("tgt", x) for x in T.bases.get(q, [])] for q in qs}
    diffs = {}
    for q in qs:
        a, b = S.dim(q + 1), T.dim(q)
        a2, b2 = S.dim(q + 2), T.dim(q + 1)
        m = np.zeros((a2 + b2, a + b), dtype=np.int64)
        if a2 and a:
            m[:a2, :a] = -S.d(q + 1)
        if b2 and a:
            m[a2:, :a] = f.at(q + 1)
        if b2 and b:
            m[a2:, a:] = T.d(q)
        diffs[q] = m % p
    return ChainComplex(p, bases, diffs)


def induced_homology_ranks(f: ChainMap) -> Dict[int, Tuple[int, int, int]]:
    """Per degree: (dim H(S), dim H(T), rank of H(f)).  Independent of the cone."""
    S, T, p = f.source, f.target, f.source.p
    out = {}
    for q in sorted(set(S.bases) | set(T.bases)):
        zs = nullspace_mod(S.d(q), p) if S.dim(q) else np.zeros((0, 0), dtype=np.int64)
        hs = zs.shape[1] - rank_mod(S.d(q - 1), p)
        bt = T.d(q - 1)
        rb = rank_mod(bt, p)
        ht = T.dim(q) - rank_mod(T.d(q), p) - rb
        if zs.size and T.dim(q):
            img = matmul_mod(f.at(q), zs, p)
            rk = rank_mod(np.hstack([bt, img]), p) - rb
        else:
            rk = 0
        out[q] = (hs, ht, rk)
    return out


def certify(f: ChainMap, claim: str = "chain_map", g: Optional[ChainMap] = None,
            h: Optional[ChainMap] = None, name: Optional[str] = None) -> Verdict:
    """Exact check of chain_map | quasi_iso | null_homotopic | homotopic."""
    S, T, p = f.source, f.target, f.source.p
    tag = name or claim
    if claim in ("chain_map", "quasi_iso"):
        sign = -1 if f.shift % 2 else 1
        for q in sorted(set(S.bases) | set(q - 1 for q in S.bases)):
            lhs = matmul_mod(T.d(q + f.shift), f.at(q), p)
            rhs = matmul_mod(f.at(q + 1), S.d(q), p)
            diff = (lhs - sign * rhs) % p
            if diff.any():
                return Verdict(tag, False, q, _first_bad(diff, S.bases.get(q, [])))
        if claim == "chain_map":
            return Verdict(tag, True)
        cone = mapping_cone(f)
        for q, _, _, hq in homology_ranks(cone):
            if hq:
                return Verdict(tag, False, q + 1, f"cone H^{q} has dimension {hq}")
        return Verdict(tag, True)
    if claim in ("null_homotopic", "homotopic"):
        if h is None:
            raise ValueError("homotopy claims need h")
        target = f if claim == "null_homotopic" else (f - g)
        for q in sorted(S.bases):
            lhs = (matmul_mod(T.d(q - 1), h.at(q), p) + matmul_mod(h.at(q + 1), S.d(q), p)) % p
            diff = (lhs - target.at(q)) % p
            if diff.any():
                return Verdict(tag, False, q, _first_bad(diff, S.bases.get(q, [])))
        return Verdict(tag, True)
    raise ValueError(f"unknown claim {claim!r}")


# ---------------------------------------------------------------- truncations

class Truncation:
    """A truncated complex together with its subquotient data per degree."""

    def __init__(self, original: ChainComplex, pieces: Dict[int, Subquotient]):
        self.original = original
        self.pieces = pieces
        p = original.p
        bases = {q: [("tr", q, i) for i in range(sq.dim)] for q, sq in pieces.items()}
        diffs = {}
        for q, sq in pieces.items():
            nxt = pieces.get(q + 1)
            if nxt is None or not sq.dim or not nxt.dim:
                continue
            img = matmul_mod(original.d(q), sq.embed(), p)
            diffs[q] = nxt.project(img)
        self.complex = ChainComplex(p, bases, diffs)

    def map(self, f: ChainMap, target: "Truncation") -> ChainMap:
        """Induced map between truncations of source and target of f."""
        p = f.source.p
        mats = {}
        for q, sq in self.pieces.items():
            tq = target.pieces.get(q + f.shift)
            if tq is None or not sq.dim or not tq.dim:
                continue
            img = matmul_mod(f.at(q), sq.embed(), p)
            mats[q] = tq.project(img)
        return ChainMap(self.complex, target.complex, mats, f.shift)


def truncate(C: ChainComplex, mode: str, a: Optional[int] = None, b: Optional[int] = None) -> Truncation:
    """mode 'below' keeps degrees < a (kernel at a-1); 'two_sided' keeps H in [a, b]."""
    p = C.p
    qs = sorted(C.bases)

    def full(q):
        n = C.dim(q)
        return Subquotient(np.eye(n, dtype=np.int64), np.zeros((0, n)), p, n)

    def kernel(q):
        n = C.dim(q)
        Z = nullspace_mod(C.d(q), p).T if n else np.zeros((0, 0))
        return Subquotient(Z, np.zeros((0, n)), p, n)

    def image_rows(q):
        return matmul_mod(C.d(q - 1), np.eye(C.dim(q - 1), dtype=np.int64), p).T

    pieces: Dict[int, Subquotient] = {}
    if mode == "below":
        if a is None:
            raise ValueError("below needs a bound")
        for q in qs:
            if q < a - 1:
                pieces[q] = full(q)
            elif q == a - 1:
                pieces[q] = kernel(q)
    elif mode == "two_sided":
        if a is None or b is None or a > b:
            raise ValueError("empty truncation window")
        for q in qs:
            if q < a or q > b:
                continue
            n = C.dim(q)
            Z = nullspace_mod(C.d(q), p).T if q == b else np.eye(n, dtype=np.int64)
            B = image_rows(q) if q == a else np.zeros((0, n))
            pieces[q] = Subquotient(Z, B, p, n)
    else:
        raise ValueError(f"unknown truncation mode {mode!r}")
    return Truncation(C, pieces)


# ---------------------------------------------------------------- Koszul complexes

def koszul(operators: Sequence[np.ndarray], p: int, labels: Optional[Sequence[Hashable]] = None,
           check_commute: bool = True) -> ChainComplex:
    """Koszul complex of commuting operators D_1..D_n on F_p^dim.

    Degree q has basis v (x) omega_I over q-subsets I; the differential is
    v omega_I -> sum_j (-1)^{#(i in I, i<j)} D_j v omega_{I+j}.
    """
    n = len(operators)
    dim = operators[0].shape[0] if n else (len(labels) if labels is not None else 0)
    ops = [np.asarray(o, dtype=np.int64) % p for o in operators]
    if check_commute:
        for i in range(n):
            for j in range(i + 1, n):
                if ((ops[i] @ ops[j] - ops[j] @ ops[i]) % p).any():
                    raise ValueError(f"operators {i + 1} and {j + 1} do not commute")
    labels = list(labels) if labels is not None else list(range(dim))
    subsets = {q: list(itertools.combinations(range(n), q)) for q in range(n + 1)}
    pos = {q: {I: k for k, I in enumerate(subsets[q])} for q in subsets}
    bases = {q: [(lab, I) for I in subsets[q] for lab in labels] for q in subsets}
    diffs = {}
    for q in range(n):
        m = np.zeros((len(subsets[q + 1]) * dim, len(subsets[q]) * dim), dtype=np.int64)
        for ci, I in enumerate(subsets[q]):
            for j in range(n):
                if j in I:
                    continue
                sgn = (-1) ** sum(1 for i in I if i < j)
                K = tuple(sorted(I + (j,)))
                ri = pos[q + 1][K]
                m[ri * dim:(ri + 1) * dim, ci * dim:(ci + 1) * dim] += sgn * ops[j]
        diffs[q] = m % p
    return ChainComplex(p, bases, diffs)


def subcomplex(C: ChainComplex, spans: Dict[int, np.ndarray], name: str = "sub") -> Tuple[ChainComplex, Dict[int, Span]]:
    """Subcomplex spanned by the given rows in each degree; raises if not d-closed."""
    p = C.p
    sp = {q: Span(np.asarray(spans.get(q, np.zeros((0, C.dim(q))))).reshape(-1, C.dim(q)), p, C.dim(q))
          for q in C.bases}
    bases = {q: [(name, q, i) for i in range(s.dim)] for q, s in sp.items()}
    diffs = {}
    for q, s in sp.items():
        if not s.dim or q + 1 not in sp:
            continue
        img = matmul_mod(C.d(q), s.rows.T, p).T
        nxt = sp[q + 1]
        if nxt.reduce(img).any():
            raise ValueError(f"span is not closed under d in degree {q}")
        if nxt.dim:
            diffs[q] = nxt.coords(img).T
    return ChainComplex(p, bases, diffs), sp


def inclusion(sub: ChainComplex, spans: Dict[int, Span], ambient: ChainComplex) -> ChainMap:
    return ChainMap(sub, ambient, {q: s.rows.T for q, s in spans.items() if s.dim})
