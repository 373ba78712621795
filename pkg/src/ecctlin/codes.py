"""Linear binary block codes: construction, encoding, rate matching and alist I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

# Bound used as the finite stand-in for a perfectly known bit.
LLR_CLIP = 20.0


class ParameterError(ValueError):
    """Invalid code parameters."""


class ConstructionError(ParameterError):
    """A code could not be built from otherwise valid-looking parameters."""


class DegenerateCodeError(ValueError):
    """The code carries no information bits."""


class AlistParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _as_binary(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.all((arr == 0) | (arr == 1)):
        raise ParameterError(f"{name} entries must be 0 or 1")
    return arr.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Binary m x n parity-check matrix with Tanner-graph accessors."""

    H: np.ndarray

    def __post_init__(self):
        H = _as_binary(self.H, "parity-check matrix")
        if H.ndim != 2 or H.size == 0:
            raise ParameterError(f"parity-check matrix must be a nonempty 2-D array, got shape {H.shape}")
        H = H.copy()
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.H.shape

    @cached_property
    def check_neighbors(self) -> list[np.ndarray]:
        """Variable indices attached to each check node."""
        return [np.flatnonzero(row) for row in self.H]

    @cached_property
    def variable_neighbors(self) -> list[np.ndarray]:
        """Check indices attached to each variable node."""
        return [np.flatnonzero(col) for col in self.H.T]

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(check index, variable index) of every Tanner edge, row-major order."""
        rows, cols = np.nonzero(self.H)
        return rows, cols

    @property
    def num_edges(self) -> int:
        return int(self.H.sum())

    @property
    def row_weights(self) -> np.ndarray:
        return self.H.sum(axis=1)

    @property
    def column_weights(self) -> np.ndarray:
        return self.H.sum(axis=0)

    @cached_property
    def rank(self) -> int:
        return len(gf2_rref(self.H)[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return self.H.shape == other.H.shape and bool(np.array_equal(self.H, other.H))

    def __hash__(self):
        return hash((self.H.shape, self.H.tobytes()))

    def __repr__(self):
        return f"ParityCheckMatrix(m={self.m}, n={self.n}, edges={self.num_edges})"


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """k x n generator; ``systematic[i]`` is the codeword column carrying info bit i."""

    G: np.ndarray
    systematic: np.ndarray

    def __post_init__(self):
        G = _as_binary(self.G, "generator matrix").copy()
        sys_cols = np.asarray(self.systematic, dtype=np.int64).copy()
        G.setflags(write=False)
        sys_cols.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "systematic", sys_cols)

    @property
    def k(self) -> int:
        return self.G.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class CodeSpec:
    kind: str
    n: int
    k: int
    m: int
    params: dict = field(default_factory=dict)

    @property
    def rate(self) -> Fraction:
        return Fraction(self.k, self.n)


@dataclass(frozen=True)
class RateRecord:
    k: int
    n: int
    removed: int
    rate: Fraction


@dataclass(frozen=True, eq=False)
class Code:
    """A parity-check matrix, its generator and a description of how it was made."""

    pcm: ParityCheckMatrix
    generator: GeneratorMatrix
    spec: CodeSpec

    @classmethod
    def from_pcm(cls, pcm: ParityCheckMatrix | np.ndarray, kind: str = "imported", **params) -> "Code":
        if not isinstance(pcm, ParityCheckMatrix):
            pcm = ParityCheckMatrix(pcm)
        gen = derive_generator(pcm)
        spec = CodeSpec(kind=kind, n=pcm.n, k=gen.k, m=pcm.m, params=params)
        return cls(pcm, gen, spec)

    @classmethod
    def regular(cls, n: int, v: int, c: int, seed: int = 0) -> "Code":
        return cls.from_pcm(build_regular_ldpc(n, v, c, seed), kind="regular", v=v, c=c, seed=seed)

    @classmethod
    def lifted(cls, base: np.ndarray, Z: int) -> "Code":
        base = np.asarray(base, dtype=np.int64)
        return cls.from_pcm(lift_base_graph(base, Z), kind="lifted", Z=Z, base=base.tolist())

    @property
    def n(self) -> int:
        return self.pcm.n

    @property
    def m(self) -> int:
        return self.pcm.m

    @property
    def k(self) -> int:
        return self.generator.k

    @property
    def rate(self) -> Fraction:
        return self.spec.rate

    def encode(self, bits: np.ndarray) -> np.ndarray:
        return encode(self.generator, bits)

    def syndrome(self, hard: np.ndarray) -> np.ndarray:
        return syndrome(self.pcm, hard)


# --------------------------------------------------------------------------
# Construction
# --------------------------------------------------------------------------


def build_regular_ldpc(n: int, v: int, c: int, seed: int = 0) -> ParityCheckMatrix:
    """Random (v, c)-regular parity-check matrix via the socket permutation construction.

    Every column has weight ``v`` and every row weight ``c``; the number of
    checks is ``v * n / c``. Parallel edges are removed by re-drawing the
    offending sockets; no attempt is made to avoid short cycles.
    """
    if min(n, v, c) < 1:
        raise ParameterError(f"n, v, c must be positive (got n={n}, v={v}, c={c})")
    if v >= c:
        raise ParameterError(f"column degree v={v} must be smaller than row degree c={c} for a positive rate")
    if (v * n) % c:
        raise ConstructionError(f"v*n = {v * n} is not divisible by c = {c}")
    m = v * n // c
    if m < 1 or c > n or v > m:
        raise ConstructionError(f"no simple (v={v}, c={c}) graph exists for n={n}")

    rng = np.random.default_rng(seed)
    var_sockets = np.repeat(np.arange(n), v)
    for _ in range(1000):
        chk = rng.permutation(np.repeat(np.arange(m), c))
        if _resolve_parallel_edges(var_sockets, chk, m, rng):
            H = np.zeros((m, n), dtype=np.uint8)
            H[chk, var_sockets] = 1
            return ParityCheckMatrix(H)
    raise ConstructionError(f"could not place a simple (v={v}, c={c}) graph on n={n} variables")


def _resolve_parallel_edges(var_sockets, chk, m, rng, max_redraws: int = 100) -> bool:
    # chk is edited in place; swaps keep every check's socket count intact.
    n_sockets = len(chk)
    for _ in range(max_redraws):
        keys = var_sockets * m + chk
        _, first, counts = np.unique(keys, return_index=True, return_counts=True)
        dup = np.setdiff1d(np.arange(n_sockets), first)
        if dup.size == 0:
            return True
        for i in dup:
            j = int(rng.integers(n_sockets))
            chk[i], chk[j] = chk[j], chk[i]
    keys = var_sockets * m + chk
    return np.unique(keys).size == n_sockets


def lift_base_graph(base, Z: int) -> ParityCheckMatrix:
    """Expand a shift table into a parity-check matrix of Z x Z circulant blocks.

    Entry -1 gives the zero block, entry s >= 0 the identity with its columns
    cyclically shifted right by s.
    """
    base = np.asarray(base)
    if base.ndim != 2 or base.size == 0:
        raise ParameterError(f"base graph must be a nonempty 2-D table, got shape {base.shape}")
    if Z < 1:
        raise ParameterError(f"lifting factor must be >= 1, got {Z}")
    if not np.issubdtype(base.dtype, np.integer):
        if not np.all(np.equal(np.mod(base, 1), 0)):
            raise ParameterError("shift values must be integers")
        base = base.astype(np.int64)
    if np.any(base < -1) or np.any(base >= Z):
        bad = base[(base < -1) | (base >= Z)][0]
        raise ParameterError(f"shift {bad} outside [-1, {Z - 1}]")

    bm, bn = base.shape
    H = np.zeros((bm * Z, bn * Z), dtype=np.uint8)
    rows = np.arange(Z)
    for i, j in zip(*np.nonzero(base >= 0)):
        s = int(base[i, j])
        H[i * Z + rows, j * Z + (rows + s) % Z] = 1
    return ParityCheckMatrix(H)


def parse_protograph(text: str) -> tuple[np.ndarray, int]:
    """Read ``base_m base_n Z`` followed by base_m rows of shifts."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or len(lines[0]) != 3:
        raise ParameterError("protograph header must be 'base_m base_n Z'")
    bm, bn, Z = (int(x) for x in lines[0])
    rows = lines[1:]
    if len(rows) != bm or any(len(r) != bn for r in rows):
        raise ParameterError(f"expected {bm} rows of {bn} shifts")
    return np.array([[int(x) for x in r] for r in rows], dtype=np.int64), Z


# --------------------------------------------------------------------------
# GF(2) linear algebra
# --------------------------------------------------------------------------


def gf2_rref(A: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2) and the list of pivot columns."""
    R = (np.asarray(A) & 1).astype(np.uint8, copy=True)
    m, n = R.shape
    pivots: list[int] = []
    r = 0
    for col in range(n):
        if r == m:
            break
        hits = np.flatnonzero(R[r:, col])
        if hits.size == 0:
            continue
        p = r + hits[0]
        if p != r:
            R[[r, p]] = R[[p, r]]
        others = np.flatnonzero(R[:, col])
        others = others[others != r]
        if others.size:
            R[others] ^= R[r]
        pivots.append(col)
        r += 1
    return R, pivots


def gf2_rank(A: np.ndarray) -> int:
    return len(gf2_rref(A)[1])


def derive_generator(pcm: ParityCheckMatrix | np.ndarray) -> GeneratorMatrix:
    """Generator matrix with G H^T = 0, systematic on the non-pivot columns of H."""
    if not isinstance(pcm, ParityCheckMatrix):
        pcm = ParityCheckMatrix(pcm)
    R, pivots = gf2_rref(pcm.H)
    n = pcm.n
    free = np.setdiff1d(np.arange(n), pivots)
    if free.size == 0:
        raise DegenerateCodeError(f"rank(H) = n = {n}: the code has no information bits")
    G = np.zeros((free.size, n), dtype=np.uint8)
    G[np.arange(free.size), free] = 1
    # each pivot bit is the parity of the free bits in its reduced row
    G[:, pivots] = R[: len(pivots)][:, free].T
    return GeneratorMatrix(G, free)


def encode(gen: GeneratorMatrix, bits: np.ndarray) -> np.ndarray:
    """c = b G over GF(2); accepts a single word or a batch along the leading axes."""
    b = np.asarray(bits)
    if b.shape[-1:] != (gen.k,):
        raise ValueError(f"expected information words of length {gen.k}, got shape {b.shape}")
    return ((b.astype(np.int64) @ gen.G) & 1).astype(np.uint8)


def syndrome(pcm: ParityCheckMatrix, hard: np.ndarray) -> np.ndarray:
    """sigma = H c^T over GF(2); batches along leading axes."""
    c = np.asarray(hard)
    if c.shape[-1:] != (pcm.n,):
        raise ValueError(f"expected words of length {pcm.n}, got shape {c.shape}")
    return ((c.astype(np.int64) @ pcm.H.T) & 1).astype(np.uint8)


# --------------------------------------------------------------------------
# Rate matching
# --------------------------------------------------------------------------


def _check_positions(pattern: Sequence[int], n: int) -> np.ndarray:
    idx = np.asarray(pattern, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"positions must lie in [0, {n - 1}], got {idx.tolist()}")
    if np.unique(idx).size != idx.size:
        raise IndexError("positions must be distinct")
    return idx


def puncture(x: np.ndarray, pattern: Sequence[int], k: int) -> tuple[np.ndarray, RateRecord]:
    """Drop the ``pattern`` positions of a length-n word (bits or LLRs)."""
    x = np.asarray(x)
    n = x.shape[-1]
    idx = _check_positions(pattern, n)
    if idx.size >= n:
        raise IndexError(f"cannot puncture {idx.size} of {n} positions")
    keep = np.setdiff1d(np.arange(n), idx)
    p = idx.size
    return x[..., keep], RateRecord(k=k, n=n, removed=p, rate=Fraction(k, n - p))


def reinsert(x: np.ndarray, pattern: Sequence[int], n: int, value: float | np.ndarray = 0.0) -> np.ndarray:
    """Inverse of ``puncture``: place ``value`` at ``pattern`` and ``x`` elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    idx = _check_positions(pattern, n)
    keep = np.setdiff1d(np.arange(n), idx)
    if x.shape[-1] != keep.size:
        raise ValueError(f"expected {keep.size} received values, got {x.shape[-1]}")
    out = np.empty(x.shape[:-1] + (n,), dtype=np.float64)
    out[..., keep] = x
    out[..., idx] = value
    return out


def depuncture(llr: np.ndarray, pattern: Sequence[int], n: int) -> np.ndarray:
    """Punctured bits come back as erasures (LLR 0)."""
    return reinsert(llr, pattern, n, 0.0)


def shorten(bits: np.ndarray, pattern: Sequence[int], fill, n: int) -> tuple[np.ndarray, RateRecord]:
    """Fix ``pattern`` information bits to the known ``fill`` values."""
    b = np.array(bits, dtype=np.uint8)
    k = b.shape[-1]
    idx = _check_positions(pattern, k)
    if idx.size >= k:
        raise IndexError(f"cannot shorten {idx.size} of {k} information bits")
    b[..., idx] = np.broadcast_to(np.asarray(fill, dtype=np.uint8), idx.shape)
    s = idx.size
    return b, RateRecord(k=k, n=n, removed=s, rate=Fraction(k - s, n - s))


def known_bit_llr(llr: np.ndarray, positions: Sequence[int], fill, n: int, clip: float = LLR_CLIP) -> np.ndarray:
    """Re-insert shortened codeword positions with saturated LLRs (+clip for 0, -clip for 1)."""
    idx = _check_positions(positions, n)
    fill = np.broadcast_to(np.asarray(fill, dtype=np.float64), idx.shape)
    return reinsert(llr, idx, n, clip * (1.0 - 2.0 * fill))


# --------------------------------------------------------------------------
# alist
# --------------------------------------------------------------------------


def save_alist(pcm: ParityCheckMatrix) -> str:
    """Serialise to the standard alist layout with zero padding."""
    cols = pcm.variable_neighbors
    rows = pcm.check_neighbors
    max_dv = max((len(c) for c in cols), default=0)
    max_dc = max((len(r) for r in rows), default=0)

    def padded(idx, width):
        vals = [str(i + 1) for i in idx] + ["0"] * (width - len(idx))
        return " ".join(vals)

    lines = [
        f"{pcm.n} {pcm.m}",
        f"{max_dv} {max_dc}",
        " ".join(str(len(c)) for c in cols),
        " ".join(str(len(r)) for r in rows),
    ]
    lines += [padded(c, max_dv) for c in cols]
    lines += [padded(r, max_dc) for r in rows]
    return "\n".join(lines) + "\n"


def load_alist(text: str) -> ParityCheckMatrix:
    """Parse alist text; padding zeros are ignored, inconsistencies raise ``AlistParseError``."""
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise AlistParseError("unexpected end of file", last + 1)
        lineno, toks = lines[pos]
        pos += 1
        try:
            return lineno, [int(t) for t in toks]
        except ValueError:
            raise AlistParseError(f"non-integer token in {' '.join(toks)!r}", lineno) from None

    lineno, dims = take()
    if len(dims) != 2 or min(dims) < 1:
        raise AlistParseError("expected 'n m'", lineno)
    n, m = dims
    lineno, maxes = take()
    if len(maxes) != 2:
        raise AlistParseError("expected 'max_col_degree max_row_degree'", lineno)
    lineno, col_deg = take()
    if len(col_deg) != n:
        raise AlistParseError(f"expected {n} column degrees, got {len(col_deg)}", lineno)
    lineno, row_deg = take()
    if len(row_deg) != m:
        raise AlistParseError(f"expected {m} row degrees, got {len(row_deg)}", lineno)
    if max(col_deg) > maxes[0] or max(row_deg) > maxes[1]:
        raise AlistParseError("a node degree exceeds the declared maximum", lineno)

    def neighbor_block(count, degrees, bound, what):
        out = []
        for i in range(count):
            lineno, vals = take()
            nz = [v for v in vals if v != 0]
            if any(v < 0 or v > bound for v in nz):
                bad = next(v for v in nz if v < 0 or v > bound)
                raise AlistParseError(f"{what} {i + 1}: neighbor index {bad} out of range 1..{bound}", lineno)
            if len(nz) != degrees[i]:
                raise AlistParseError(f"{what} {i + 1}: declared degree {degrees[i]} but {len(nz)} neighbors listed", lineno)
            if len(set(nz)) != len(nz):
                raise AlistParseError(f"{what} {i + 1}: repeated neighbor", lineno)
            out.append((lineno, [v - 1 for v in nz]))
        return out

    col_lists = neighbor_block(n, col_deg, m, "column")
    row_lists = neighbor_block(m, row_deg, n, "row")

    H = np.zeros((m, n), dtype=np.uint8)
    for j, (_, rs) in enumerate(col_lists):
        H[rs, j] = 1
    H_rows = np.zeros_like(H)
    for i, (_, cs) in enumerate(row_lists):
        H_rows[i, cs] = 1
    if not np.array_equal(H, H_rows):
        r, c = np.argwhere(H != H_rows)[0]
        raise AlistParseError(f"row and column lists disagree at (row {r + 1}, column {c + 1})", row_lists[r][0])
    return ParityCheckMatrix(H)


HAMMING_7_4 = np.array(
    [
        [1, 1, 0, 1, 1, 0, 0],
        [1, 0, 1, 1, 0, 1, 0],
        [0, 1, 1, 1, 0, 0, 1],
    ],
    dtype=np.uint8,
)


def hamming74() -> Code:
    return Code.from_pcm(HAMMING_7_4, kind="imported", name="hamming74")
