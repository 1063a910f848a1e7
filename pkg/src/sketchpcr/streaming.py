"""One-pass row-insertion streaming approximate PCR.

Rows of A (and entries of b) arrive one at a time. Two sketch
accumulators are maintained: S A (to extract the compression basis R)
and T A together with T b (to solve the compressed regression without
storing A). Memory is a function of the sketch sizes and d only, never
of the number of rows seen.

CountSketch columns are realized lazily by hashing the running row
index, so no stream length needs fixing in advance; subgaussian columns
come from a counter-based generator keyed on the row index, which makes
replays reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficiencyError
from .linalg import as_vector, pinv_solve, rank_tolerance, thin_svd
from .sketch import _hash_pair, gen_countsketch
from .solvers import PcrSolution, require_gap


class StreamingCountSketch:
    """CountSketch over an unbounded column index, one +-1 per column."""

    kind = "countsketch"

    def __init__(self, out_dim, seed):
        self.out_dim = out_dim
        self.seed = seed
        self._h, self._g = _hash_pair(seed)

    def bucket(self, index):
        return int(self._h.value(index) % self.out_dim)

    def sign(self, index):
        return self._g.sign(index)

    def materialize(self, n):
        return gen_countsketch(self.out_dim, n, self.seed)


class StreamingGaussian:
    """Subgaussian sketch whose column i is replayable from (seed, i)."""

    kind = "subgaussian"

    def __init__(self, out_dim, seed):
        self.out_dim = out_dim
        self.seed = seed
        self._scale = 1.0 / math.sqrt(out_dim)

    def column(self, index):
        # Disjoint counter blocks per row index keep the streams independent.
        bitgen = np.random.Philox(key=self.seed, counter=index << 128)
        rng = np.random.Generator(bitgen)
        return rng.standard_normal(self.out_dim) * self._scale

    def materialize(self, n):
        m = np.empty((self.out_dim, n))
        for i in range(n):
            m[:, i] = self.column(i)
        return m


class IdentityStreamSketch:
    """Degenerate sketch that copies row i to accumulator row i."""

    kind = "identity"

    def __init__(self, out_dim):
        self.out_dim = out_dim

    def bucket(self, index):
        if index >= self.out_dim:
            raise ValueError("identity sketch ran out of rows")
        return index

    def sign(self, index):
        return 1.0


def _make_spec(kind, rows, seed):
    if kind == "countsketch":
        return StreamingCountSketch(rows, seed)
    if kind == "subgaussian":
        return StreamingGaussian(rows, seed)
    raise ValueError(f"unknown streaming sketch kind {kind!r}")


@dataclass
class StreamState:
    d: int
    s_spec: object
    t_spec: object
    sa: np.ndarray = field(repr=False)
    ta: np.ndarray = field(repr=False)
    tb: np.ndarray = field(repr=False)
    rows_seen: int = 0
    finalized: bool = False

    def memory_bytes(self):
        """Accumulator footprint; independent of rows_seen by construction."""
        return self.sa.nbytes + self.ta.nbytes + self.tb.nbytes


def stream_init(d, s_rows, t_rows, seed, s_kind="countsketch", t_kind="countsketch"):
    """Fresh zeroed accumulators with seeded hashing state."""
    if d < 1 or s_rows < 1 or t_rows < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    seed_s, seed_t = (int(x) for x in rng.integers(0, 2**63 - 1, size=2))
    return stream_init_with_specs(d, _make_spec(s_kind, s_rows, seed_s),
                                  _make_spec(t_kind, t_rows, seed_t))


def stream_init_with_specs(d, s_spec, t_spec):
    return StreamState(
        d=d,
        s_spec=s_spec,
        t_spec=t_spec,
        sa=np.zeros((s_spec.out_dim, d)),
        ta=np.zeros((t_spec.out_dim, d)),
        tb=np.zeros(t_spec.out_dim),
    )


def stream_update(st: StreamState, a_row, b_entry) -> StreamState:
    """Fold one (row of A, entry of b) pair into the accumulators.

    O(d) work for CountSketch, O(rows * d) for subgaussian. Mutates and
    returns the state.
    """
    if st.finalized:
        raise RuntimeError("stream state was already finalized")
    row = as_vector(a_row, length=st.d, name="a_row")
    b_entry = float(b_entry)
    if not np.isfinite(b_entry):
        raise ValueError("b entry is not finite")
    i = st.rows_seen
    if st.s_spec.kind == "subgaussian":
        st.sa += np.outer(st.s_spec.column(i), row)
    else:
        st.sa[st.s_spec.bucket(i)] += st.s_spec.sign(i) * row
    if st.t_spec.kind == "subgaussian":
        col = st.t_spec.column(i)
        st.ta += np.outer(col, row)
        st.tb += col * b_entry
    else:
        r = st.t_spec.bucket(i)
        sgn = st.t_spec.sign(i)
        st.ta[r] += sgn * row
        st.tb[r] += sgn * b_entry
    st.rows_seen += 1
    return st


def stream_finalize(st: StreamState, k) -> PcrSolution:
    """Close the stream and return x = R (T A R)^+ T b with R = V_{SA,k}.

    Final work is polynomial in d and the sketch sizes only. The state
    is consumed.
    """
    if st.finalized:
        raise RuntimeError("stream state was already finalized")
    t0 = time.perf_counter()
    st.finalized = True
    f = thin_svd(st.sa, k)
    require_gap(f.sigma, k, "S A")
    r = f.v_k
    tar = st.ta @ r
    tar_sigma = np.linalg.svd(tar, compute_uv=False)
    if tar_sigma[-1] <= rank_tolerance(tar_sigma, tar.shape):
        raise RankDeficiencyError("T A R is rank deficient")
    x = r @ pinv_solve(tar, st.tb)
    return PcrSolution(
        x=x,
        method="stream",
        r_cols=k,
        objective=None,
        constraint_norm=None,
        wall_time=time.perf_counter() - t0,
    )
