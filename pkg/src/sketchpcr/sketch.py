"""Seeded random sketching operators.

Three families: dense subgaussian maps, CountSketch sparse embeddings
(one random +-1 per column), and TensorSketch for implicit degree-q
polynomial feature maps. All generators are pure functions of
(dimensions, seed); identical inputs rebuild bit-identical operators.

Hash functions are realized as random polynomials over the Mersenne
prime field 2^61 - 1 (degree 3 for bucket hashes, degree 4 for sign
hashes), which gives the limited independence the sketches need while
staying reproducible and cheap to evaluate on a stream of indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import as_matrix, as_vector, spectral_norm

MERSENNE_P = (1 << 61) - 1
HASH_DEGREE = 3
SIGN_DEGREE = 4
DEFAULT_GRAM_CONST = 8.0


class PolyHash:
    """Random polynomial over GF(2^61 - 1), evaluated at integer keys."""

    def __init__(self, coeffs):
        self.coeffs = [int(c) % MERSENNE_P for c in coeffs]

    @classmethod
    def draw(cls, rng, degree):
        coeffs = [int(rng.integers(0, MERSENNE_P)) for _ in range(degree + 1)]
        return cls(coeffs)

    def value(self, key):
        acc = 0
        for c in reversed(self.coeffs):
            acc = (acc * key + c) % MERSENNE_P
        return acc

    def values(self, keys):
        out = np.empty(len(keys), dtype=np.uint64)
        for i, key in enumerate(keys):
            out[i] = self.value(int(key))
        return out

    def bucket(self, key, n_buckets):
        return self.value(key) % n_buckets

    def sign(self, key):
        return 1.0 if (self.value(key) & 1) == 0 else -1.0


def _hash_pair(seed):
    rng = np.random.default_rng(seed)
    return PolyHash.draw(rng, HASH_DEGREE), PolyHash.draw(rng, SIGN_DEGREE)


@dataclass(frozen=True)
class SubgaussianSketch:
    out_dim: int
    in_dim: int
    seed: int
    matrix: np.ndarray = field(repr=False)
    kind: str = "subgaussian"


@dataclass(frozen=True)
class CountSketch:
    out_dim: int
    in_dim: int
    seed: int
    rows: np.ndarray = field(repr=False)   # target row per column
    signs: np.ndarray = field(repr=False)  # +-1 per column
    kind: str = "countsketch"

    def materialize(self):
        m = np.zeros((self.out_dim, self.in_dim))
        m[self.rows, np.arange(self.in_dim)] = self.signs
        return m


@dataclass(frozen=True)
class TensorSketch:
    degree: int
    in_dim: int
    out_dim: int
    seed: int
    row_tables: np.ndarray = field(repr=False)   # (degree, in_dim) bucket ids
    sign_tables: np.ndarray = field(repr=False)  # (degree, in_dim) +-1
    kind: str = "tensorsketch"


def gen_subgaussian(out_dim, in_dim, seed):
    """Dense i.i.d. N(0, 1/out_dim) sketch, so S^T S = I in expectation."""
    if out_dim < 1 or in_dim < 1:
        raise ValueError("sketch dimensions must be positive")
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((out_dim, in_dim)) / math.sqrt(out_dim)
    return SubgaussianSketch(out_dim=out_dim, in_dim=in_dim, seed=seed, matrix=m)


def gen_countsketch(out_dim, in_dim, seed):
    """Sparse embedding with exactly one random +-1 per column."""
    if out_dim < 1 or in_dim < 1:
        raise ValueError("sketch dimensions must be positive")
    h, g = _hash_pair(seed)
    keys = range(in_dim)
    rows = (h.values(keys) % out_dim).astype(np.int64)
    signs = np.where((g.values(keys) & 1) == 0, 1.0, -1.0)
    return CountSketch(out_dim=out_dim, in_dim=in_dim, seed=seed, rows=rows, signs=signs)


def identity_embedding(dim):
    """CountSketch that is the identity: a degenerate but handy sketch."""
    return CountSketch(out_dim=dim, in_dim=dim, seed=-1,
                       rows=np.arange(dim, dtype=np.int64), signs=np.ones(dim))


def gen_tensorsketch(q, in_dim, out_dim, seed):
    """TensorSketch for the degree-q tensor-product feature map on R^in_dim.

    Draws q bucket hashes h_1..h_q and q sign hashes g_1..g_q; the implicit
    sketch maps the monomial indexed by (i_1, ..., i_q) to bucket
    (h_1(i_1) + ... + h_q(i_q)) mod out_dim with sign g_1(i_1)...g_q(i_q).
    """
    if q < 1:
        raise ValueError("degree must be at least 1")
    if out_dim < 1 or in_dim < 1:
        raise ValueError("sketch dimensions must be positive")
    rng = np.random.default_rng(seed)
    rows = np.empty((q, in_dim), dtype=np.int64)
    signs = np.empty((q, in_dim))
    keys = range(in_dim)
    for j in range(q):
        h = PolyHash.draw(rng, HASH_DEGREE)
        g = PolyHash.draw(rng, SIGN_DEGREE)
        rows[j] = (h.values(keys) % out_dim).astype(np.int64)
        signs[j] = np.where((g.values(keys) & 1) == 0, 1.0, -1.0)
    return TensorSketch(degree=q, in_dim=in_dim, out_dim=out_dim, seed=seed,
                        row_tables=rows, sign_tables=signs)


class TouchCounter:
    """Counts stored nonzeros visited by sparse sketch application."""

    def __init__(self):
        self.count = 0


def apply_left(op, a, touch_counter=None):
    """Compute op @ a for a dense or sparse matrix ``a``.

    CountSketch application visits each stored nonzero of ``a`` exactly
    once; pass a TouchCounter to observe that.
    """
    sparse_input = sp.issparse(a)
    if not sparse_input:
        a = as_matrix(a, "a")
    if op.in_dim != a.shape[0]:
        raise ValueError(f"operator expects {op.in_dim} rows, got {a.shape[0]}")

    if op.kind == "subgaussian":
        if sparse_input:
            return np.ascontiguousarray((a.T @ op.matrix.T).T)
        return op.matrix @ a

    if op.kind == "countsketch":
        out = np.zeros((op.out_dim, a.shape[1]))
        if sparse_input:
            coo = a.tocoo()
            np.add.at(out, (op.rows[coo.row], coo.col), op.signs[coo.row] * coo.data)
            if touch_counter is not None:
                touch_counter.count += coo.nnz
        else:
            np.add.at(out, op.rows, op.signs[:, None] * a)
            if touch_counter is not None:
                touch_counter.count += a.size
        return out

    raise ValueError(f"apply_left does not support kind {op.kind!r}")


def _fold_cyclic(linear, t):
    out = np.zeros(t)
    for start in range(0, len(linear), t):
        chunk = linear[start:start + t]
        out[: len(chunk)] += chunk
    return out


def _conv_direct(a, b, t):
    return _fold_cyclic(np.convolve(a, b), t)


def tensorsketch_apply(op, z):
    """Image of the implicit feature vector phi(z) under the sketch.

    Equal to the length-t cyclic convolution of the q individual
    CountSketch images of z. Uses a power-of-two padded real FFT, with a
    direct convolution fallback for small t; degree 1 needs no
    convolution and is exactly a plain CountSketch.
    """
    if op.kind != "tensorsketch":
        raise ValueError("operator is not a TensorSketch")
    z = as_vector(z, length=op.in_dim, name="z")
    t = op.out_dim
    levels = []
    for j in range(op.degree):
        c = np.zeros(t)
        np.add.at(c, op.row_tables[j], op.sign_tables[j] * z)
        levels.append(c)
    if op.degree == 1:
        return levels[0]
    if t < 64:
        out = levels[0]
        for c in levels[1:]:
            out = _conv_direct(out, c, t)
        return out
    full_len = op.degree * (t - 1) + 1
    n_fft = 1 << (full_len - 1).bit_length()
    spec = np.fft.rfft(levels[0], n_fft)
    for c in levels[1:]:
        spec = spec * np.fft.rfft(c, n_fft)
    linear = np.fft.irfft(spec, n_fft)[:full_len]
    return _fold_cyclic(linear, t)


def tensorsketch_materialize(op, max_rows=2_000_000):
    """Explicit (in_dim^q, out_dim) sketch matrix, for small cases only."""
    d, q, t = op.in_dim, op.degree, op.out_dim
    n_rows = d ** q
    if n_rows > max_rows:
        raise ValueError(f"materializing {n_rows} rows is not sensible")
    grids = np.meshgrid(*[np.arange(d)] * q, indexing="ij")
    idx = [g.ravel() for g in grids]
    buckets = np.zeros(n_rows, dtype=np.int64)
    signs = np.ones(n_rows)
    for j in range(q):
        buckets += op.row_tables[j][idx[j]]
        signs *= op.sign_tables[j][idx[j]]
    buckets %= t
    r = np.zeros((n_rows, t))
    r[np.arange(n_rows), buckets] = signs
    return r


@dataclass(frozen=True)
class GramErrorReport:
    spectral_error: float    # |X^T S^T S X - X^T X|_2
    normalized_error: float  # divided by |X|_2^2
    passed: bool


def gram_error(op, x, eps):
    """Measure how well the sketch preserves the Gram matrix of ``x``.

    Passes when |X^T S^T S X - X^T X|_2 <= eps * |X|_2^2.
    """
    x = as_matrix(x, "x")
    sx = apply_left(op, x)
    diff = sx.T @ sx - x.T @ x
    err = float(np.max(np.abs(np.linalg.eigvalsh(diff)))) if diff.size else 0.0
    x2 = spectral_norm(x) ** 2
    return GramErrorReport(
        spectral_error=err,
        normalized_error=err / x2 if x2 > 0 else 0.0,
        passed=bool(err <= eps * x2),
    )


def sketch_rows_for_gram(kind, stable_rank, eps, delta, const=DEFAULT_GRAM_CONST):
    """Rows needed for the (eps, delta)-approximate Gram property.

    Uses const * (sr + ln(1/delta)) / eps^2 for subgaussian maps and
    const * sr^2 / (eps^2 * delta) for CountSketch. The asymptotic
    statements leave the constant open; ``const`` defaults to a value
    calibrated on the synthetic Monte Carlo suite.
    """
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    if not 0 < delta <= 0.5:
        raise ValueError("delta must lie in (0, 1/2]")
    if stable_rank <= 0:
        raise ValueError("stable rank must be positive")
    if kind == "subgaussian":
        raw = const * (stable_rank + math.log(1.0 / delta)) / eps**2
    elif kind == "countsketch":
        raw = const * stable_rank**2 / (eps**2 * delta)
    else:
        raise ValueError(f"no Gram sizing rule for kind {kind!r}")
    return max(1, math.ceil(raw))
