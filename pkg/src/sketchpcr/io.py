"""Dataset ingestion: dense CSV and sparse svmlight files.

Both loaders reject malformed input with the offending position in the
error message instead of guessing. The svmlight writer uses shortest
round-trip float formatting, so write-then-read reproduces values
bit-for-bit.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp


class DataFormatError(ValueError):
    pass


def _parse_float(token, where):
    try:
        value = float(token)
    except ValueError:
        raise DataFormatError(f"{where}: not a number: {token!r}") from None
    if not math.isfinite(value):
        raise DataFormatError(f"{where}: non-finite value {token!r}")
    return value


def load_dense_csv(path):
    """Read a dense CSV whose last column is the response.

    Returns (A, b). A leading header row is skipped when any of its
    fields fails to parse as a number. Ragged rows and NaN/Inf entries
    are rejected with their location.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    if not lines:
        raise DataFormatError(f"{path}: file is empty")

    first_fields = lines[0][1].split(",")
    start = 0
    try:
        for tok in first_fields:
            float(tok)
    except ValueError:
        start = 1
    data = lines[start:]
    if not data:
        raise DataFormatError(f"{path}: no data rows after the header")

    width = len(data[0][1].split(","))
    if width < 2:
        raise DataFormatError(f"{path}:{data[0][0]}: need at least two columns")
    rows = []
    for lineno, ln in data:
        fields = ln.split(",")
        if len(fields) != width:
            raise DataFormatError(
                f"{path}:{lineno}: ragged row ({len(fields)} fields, expected {width})"
            )
        rows.append([
            _parse_float(tok, f"{path}:{lineno}:col {j + 1}")
            for j, tok in enumerate(fields)
        ])
    arr = np.asarray(rows, dtype=float)
    return arr[:, :-1], arr[:, -1]


def load_svmlight(path, center_response=False):
    """Read an svmlight/libsvm file: ``label idx:val idx:val ...`` per line.

    Indices are 1-based and must be strictly increasing within a line.
    Returns (csr_matrix, labels); labels are mean-centered when asked.
    """
    labels = []
    data, indices, indptr = [], [], [0]
    n_features = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            labels.append(_parse_float(parts[0], f"{path}:{lineno}:label"))
            prev = 0
            for tok in parts[1:]:
                where = f"{path}:{lineno}: pair {tok!r}"
                pieces = tok.split(":")
                if len(pieces) != 2:
                    raise DataFormatError(f"{where}: expected index:value")
                try:
                    idx = int(pieces[0])
                except ValueError:
                    raise DataFormatError(f"{where}: bad index") from None
                if idx == 0:
                    raise DataFormatError(f"{where}: indices are 1-based")
                if idx <= prev:
                    raise DataFormatError(
                        f"{where}: index {idx} not greater than previous {prev}"
                    )
                prev = idx
                data.append(_parse_float(pieces[1], where))
                indices.append(idx - 1)
                n_features = max(n_features, idx)
            indptr.append(len(data))
    if not labels:
        raise DataFormatError(f"{path}: file is empty")
    x = sp.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), n_features),
    )
    b = np.asarray(labels)
    if center_response:
        b = b - b.mean()
    return x, b


def write_svmlight(path, x, b):
    """Write (x, b) in svmlight format with bit-preserving float text."""
    x = sp.csr_matrix(x)
    b = np.asarray(b, dtype=float)
    if x.shape[0] != b.shape[0]:
        raise ValueError("row count of x and length of b differ")
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(x.shape[0]):
            lo, hi = x.indptr[i], x.indptr[i + 1]
            pairs = " ".join(
                f"{x.indices[j] + 1}:{repr(float(x.data[j]))}" for j in range(lo, hi)
            )
            fh.write(f"{repr(float(b[i]))} {pairs}".rstrip() + "\n")
