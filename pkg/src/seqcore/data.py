"""Synthetic generators and CSV ingestion (features first, response last)."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import Dataset, ParameterError

__all__ = ["IngestionError", "gen_linear", "gen_gmm", "load_csv", "write_csv"]


class IngestionError(ValueError):
    """Malformed CSV input; ``row`` is the 1-based line number when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def gen_linear(n: int = 1_000_000, d: int = 50, coef_range=(-5.0, 5.0), noise_var: float = 4.0,
               seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """y = <h, x> + N(0, noise_var), x standard normal, h uniform on coef_range."""
    if n < 1 or d < 1:
        raise ParameterError("n and d must be >= 1")
    if noise_var < 0:
        raise ParameterError("noise_var must be nonnegative")
    lo, hi = coef_range
    rng = np.random.default_rng(seed)
    h = rng.uniform(lo, hi, size=d)
    X = rng.standard_normal((n, d))
    y = X @ h
    if noise_var > 0:
        y = y + math.sqrt(noise_var) * rng.standard_normal(n)
    return Dataset(X, y), h


def gen_gmm(n: int = 100_000, D: int = 2, k: int = 3, separation: float = 5.0,
            seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Unit-variance isotropic blobs; labels drawn uniformly over k components.

    Means are scaled vertices of a regular simplex, so every pair of means is
    exactly ``separation * sqrt(D)`` apart.
    """
    if not n >= k >= 1 or D < 1:
        raise ParameterError("need n >= k >= 1 and D >= 1")
    rng = np.random.default_rng(seed)
    means = _simplex(k, D) * separation * math.sqrt(D)
    labels = rng.integers(0, k, size=n)
    X = means[labels] + rng.standard_normal((n, D))
    return Dataset(X, np.zeros(n)), labels


def _simplex(k: int, D: int) -> np.ndarray:
    # k points with pairwise distance 1; a random-free embedding when k - 1 <= D
    if k == 1:
        return np.zeros((1, D))
    E = np.eye(k) - 1.0 / k
    U, s, _ = np.linalg.svd(E)
    coords = U[:, : k - 1] * s[: k - 1]
    coords /= np.linalg.norm(coords[0] - coords[1])
    if k - 1 <= D:
        out = np.zeros((k, D))
        out[:, : k - 1] = coords
        return out
    # more components than dimensions: fall back to a fixed-seed projection
    P = np.linalg.qr(np.random.default_rng(0).standard_normal((k - 1, D)))[0]
    out = coords @ P
    dmin = min(np.linalg.norm(out[i] - out[j]) for i in range(k) for j in range(i))
    return out / dmin


def load_csv(path, has_header: bool = False) -> Dataset:
    """Read a comma-separated numeric file; the last column is the response."""
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and has_header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise IngestionError("need at least one feature column and a response", lineno)
            elif len(row) != width:
                raise IngestionError(f"expected {width} fields, found {len(row)}", lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise IngestionError(f"non-numeric cell ({exc})", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise IngestionError("non-finite cell", lineno)
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path} contains no data rows")
    A = np.array(rows, dtype=np.float64)
    return Dataset(A[:, :-1], A[:, -1])


def write_csv(dataset: Dataset, path, header: bool = False) -> None:
    """Write features then response with round-trip precision."""
    A = np.column_stack([dataset.features, dataset.responses])
    kw = {"header": ",".join([f"x{i}" for i in range(dataset.d)] + ["y"]), "comments": ""} if header else {}
    np.savetxt(path, A, delimiter=",", fmt="%.17g", **kw)
