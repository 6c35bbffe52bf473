"""Plain-text readers and writers for graphs, kernels and node fields.

Floats are written with ``repr`` so a write followed by a read returns the
exact same binary values.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "FormatError",
    "read_edge_list",
    "write_edge_list",
    "read_kernel",
    "write_kernel",
    "read_field",
    "write_field",
    "read_points",
    "dump_json",
    "json_line",
]


class FormatError(ValueError):
    pass


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def read_edge_list(path) -> tuple[list[tuple[int, int, float]], list[str]]:
    """Read ``x y [w]`` lines; node labels are numbered in order of first appearance."""
    index: dict[str, int] = {}
    edges = []
    for lineno, tok in _lines(path):
        if len(tok) not in (2, 3):
            raise FormatError(f"{path}:{lineno}: expected 'x y [weight]'")
        ids = []
        for t in tok[:2]:
            if t not in index:
                index[t] = len(index)
            ids.append(index[t])
        try:
            w = float(tok[2]) if len(tok) == 3 else 1.0
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad weight {tok[2]!r}") from None
        edges.append((ids[0], ids[1], w))
    if not edges:
        raise FormatError(f"{path}: no edges")
    return edges, list(index)


def write_edge_list(path, edges, labels=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in edges:
            x, y = int(e[0]), int(e[1])
            lx = labels[x] if labels is not None else x
            ly = labels[y] if labels is not None else y
            w = float(e[2]) if len(e) > 2 else 1.0
            fh.write(f"{lx} {ly} {w!r}\n")


def _coordinate(rows):
    head = rows[0][1]
    if len(head) != 3 or not all(t.lstrip("-").isdigit() for t in head):
        return None
    n, m, nnz = (int(t) for t in head)
    if n != m or len(rows) - 1 != nnz or any(len(tok) != 3 for _, tok in rows[1:]):
        return None
    return n, nnz


def read_kernel(path) -> sp.csr_matrix:
    """Read a transition matrix.

    Three layouts are understood: Matrix Market (``.mtx``), a coordinate
    file whose first line is ``n n nnz`` followed by ``row col value``
    triples with 0-based indices, and whitespace-separated dense rows.
    """
    if str(path).endswith(".mtx"):
        return sp.csr_matrix(scipy.io.mmread(path), dtype=float)
    rows = list(_lines(path))
    if not rows:
        raise FormatError(f"{path}: empty kernel file")
    coo = _coordinate(rows)
    if coo is not None:
        n, nnz = coo
        try:
            r = [int(tok[0]) for _, tok in rows[1:]]
            c = [int(tok[1]) for _, tok in rows[1:]]
            v = [float(tok[2]) for _, tok in rows[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        if nnz and (min(r + c) < 0 or max(r + c) >= n):
            raise FormatError(f"{path}: index out of range for n = {n}")
        return sp.csr_matrix((v, (r, c)), shape=(n, n))
    try:
        K = np.array([[float(t) for t in tok] for _, tok in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise FormatError(f"{path}: dense kernel must be square")
    return sp.csr_matrix(K)


def write_kernel(path, K) -> None:
    """Write Matrix Market for ``.mtx`` paths, the 0-based coordinate layout otherwise."""
    if str(path).endswith(".mtx"):
        scipy.io.mmwrite(path, sp.coo_matrix(K), precision=17)
        return
    K = sp.coo_matrix(K)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{K.shape[0]} {K.shape[1]} {K.nnz}\n")
        for i, j, v in zip(K.row, K.col, K.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def read_field(path, n: int | None = None, labels=None) -> np.ndarray:
    """Read ``node value`` lines into a dense field ordered by node index."""
    pos = None if labels is None else {str(l): i for i, l in enumerate(labels)}
    pairs = []
    for lineno, tok in _lines(path):
        if len(tok) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'node value'")
        node, val = tok
        if pos is not None:
            if node not in pos:
                raise FormatError(f"{path}:{lineno}: unknown node {node!r}")
            i = pos[node]
        else:
            try:
                i = int(node)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: node {node!r} is not an index") from None
        pairs.append((i, float(val)))
    size = n if n is not None else (len(labels) if labels is not None else 1 + max(i for i, _ in pairs))
    out = np.full(size, np.nan)
    for i, v in pairs:
        if not 0 <= i < size:
            raise FormatError(f"{path}: node index {i} out of range")
        out[i] = v
    if np.isnan(out).any():
        raise FormatError(f"{path}: missing values for nodes {np.flatnonzero(np.isnan(out)).tolist()}")
    return out


def write_field(path, u, labels=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, v in enumerate(np.asarray(u, dtype=float)):
            fh.write(f"{labels[i] if labels is not None else i} {float(v)!r}\n")


def read_points(path) -> np.ndarray:
    return np.loadtxt(path, dtype=float, comments="#", ndmin=2)


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, os.PathLike):
        return str(x)
    return x


def json_line(record: dict) -> str:
    return json.dumps(_clean(record), sort_keys=False, allow_nan=False)


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8")
