"""Black-box objectives and LIBSVM data ingestion."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, TextIO

import numpy as np
from scipy import sparse


class DatasetError(ValueError):
    """Raised for malformed or empty LIBSVM input."""


@dataclass(frozen=True)
class ObjectiveOracle:
    """Scalar loss over a parameter vector, optionally with an exact gradient.

    ``smoothness_hint`` is the gradient Lipschitz constant when it is known
    analytically (test objectives), otherwise ``None``.
    """

    value_fn: Callable[[np.ndarray], float]
    dim: int
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None
    smoothness_hint: float | None = None
    name: str = "objective"

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.smoothness_hint is not None and self.smoothness_hint < 0:
            raise ValueError("smoothness_hint must be nonnegative")

    def __call__(self, x: np.ndarray) -> float:
        return self.value(x)

    def value(self, x: np.ndarray) -> float:
        return float(self.value_fn(np.asarray(x, dtype=np.float64)))

    @property
    def has_grad(self) -> bool:
        return self.grad_fn is not None

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.grad_fn is None:
            raise ValueError(f"{self.name} does not expose a gradient")
        g = np.asarray(self.grad_fn(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        if g.shape != (self.dim,):
            raise ValueError(f"gradient has shape {g.shape}, expected ({self.dim},)")
        return g


class CountingOracle:
    """Wraps an oracle and counts value evaluations.

    Used to check oracle-call accounting against what the estimators actually
    request. Not thread-safe; give each run its own wrapper.
    """

    def __init__(self, oracle: ObjectiveOracle):
        self.oracle = oracle
        self.calls = 0

    def __getattr__(self, item):
        return getattr(self.oracle, item)

    def __call__(self, x):
        return self.value(x)

    def value(self, x) -> float:
        self.calls += 1
        return self.oracle.value(x)


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def quadratic_objective(diag, shift) -> ObjectiveOracle:
    """f(x) = 1/2 sum_i diag_i (x_i - shift_i)^2 with L = max(diag)."""
    diag = _as_vector(diag, "diag")
    shift = _as_vector(shift, "shift")
    if diag.shape != shift.shape:
        raise ValueError(f"dimension mismatch: diag has {diag.size}, shift has {shift.size}")
    if np.any(diag <= 0):
        raise ValueError("diag entries must be positive")
    diag = diag.copy()
    shift = shift.copy()

    def value(x):
        r = x - shift
        return 0.5 * float(np.dot(diag * r, r))

    def grad(x):
        return diag * (x - shift)

    return ObjectiveOracle(value, diag.size, grad, float(diag.max()), name="quadratic")


@dataclass
class Dataset:
    """Sparse rows ``(features, label)`` with 1-based feature indices."""

    rows: list[tuple[dict[int, float], float]]
    n_features: int
    _csr: sparse.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n_features <= 0:
            raise DatasetError("n_features must be positive")
        for feats, label in self.rows:
            if not math.isfinite(label):
                raise DatasetError(f"non-finite label {label!r}")
            for idx in feats:
                if not 1 <= idx <= self.n_features:
                    raise DatasetError(f"feature index {idx} outside [1, {self.n_features}]")

    def __len__(self):
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.rows], dtype=np.float64)

    def to_csr(self) -> sparse.csr_matrix:
        """Design matrix with column j-1 holding feature j."""
        if self._csr is None:
            indptr = [0]
            indices = []
            data = []
            for feats, _ in self.rows:
                for idx in sorted(feats):
                    indices.append(idx - 1)
                    data.append(feats[idx])
                indptr.append(len(indices))
            self._csr = sparse.csr_matrix(
                (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr)),
                shape=(len(self.rows), self.n_features),
            )
        return self._csr

    def with_intercept(self) -> "Dataset":
        """Copy with a constant 1.0 feature appended at index n_features + 1."""
        col = self.n_features + 1
        rows = [({**feats, col: 1.0}, y) for feats, y in self.rows]
        return Dataset(rows, col)

    def normalized_rows(self) -> "Dataset":
        """Copy with every nonzero feature row scaled to unit Euclidean norm."""
        rows = []
        for feats, y in self.rows:
            n = math.sqrt(sum(v * v for v in feats.values()))
            rows.append(({i: v / n for i, v in feats.items()} if n > 0 else dict(feats), y))
        return Dataset(rows, self.n_features)

    def serialize(self) -> str:
        lines = []
        for feats, y in self.rows:
            parts = [repr(float(y)) if not float(y).is_integer() else str(int(y))]
            parts += [f"{i}:{feats[i]!r}" for i in sorted(feats)]
            lines.append(" ".join(parts))
        return "\n".join(lines) + ("\n" if lines else "")


def parse_libsvm(stream: TextIO | Iterable[str] | str) -> Dataset:
    """Read ``label idx:val ...`` lines into a :class:`Dataset`.

    Blank lines and ``#`` comments are ignored. Indices must be 1-based and
    strictly increasing within a line.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = []
    n_features = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise DatasetError(f"line {lineno}: non-numeric label {tokens[0]!r}") from None
        if not math.isfinite(label):
            raise DatasetError(f"line {lineno}: non-finite label {tokens[0]!r}")
        feats: dict[int, float] = {}
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DatasetError(f"line {lineno}: malformed token {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise DatasetError(f"line {lineno}: malformed token {tok!r}") from None
            if idx < 1:
                raise DatasetError(f"line {lineno}: index {idx} is not 1-based")
            if idx <= prev:
                raise DatasetError(f"line {lineno}: non-increasing index {idx} after {prev}")
            if not math.isfinite(val):
                raise DatasetError(f"line {lineno}: non-finite value in {tok!r}")
            feats[idx] = val
            prev = idx
        n_features = max(n_features, prev)
        rows.append((feats, label))
    if not rows:
        raise DatasetError("empty dataset")
    return Dataset(rows, max(n_features, 1))


def load_libsvm(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh)


# Categorical group sizes of the one-hot a9a encoding (123 features in total).
A9A_GROUPS = (5, 8, 16, 7, 14, 6, 5, 2, 3, 9, 5, 4, 36, 3)


def synthetic_a9a(n: int = 2000, seed: int = 0, positive_rate: float = 0.24) -> Dataset:
    """a9a-shaped data: one active binary feature per categorical group, +-1 labels.

    Labels come from a noisy random linear score thresholded so that about
    ``positive_rate`` of the rows are positive, as in the real a9a.
    """
    rng = np.random.default_rng(seed)
    probs = [rng.dirichlet(np.full(s, 0.8)) for s in A9A_GROUPS]
    w = rng.standard_normal(sum(A9A_GROUPS))
    offsets = np.cumsum((0,) + A9A_GROUPS[:-1])
    active = np.stack([off + rng.choice(s, size=n, p=p) for off, s, p in zip(offsets, A9A_GROUPS, probs)], axis=1)
    score = w[active].sum(axis=1)
    noisy = score + 0.5 * score.std() * rng.standard_normal(n)
    labels = np.where(noisy > np.quantile(score, 1 - positive_rate), 1.0, -1.0)
    rows = [({int(j) + 1: 1.0 for j in act}, float(y)) for act, y in zip(active, labels)]
    return Dataset(rows, sum(A9A_GROUPS))


def least_squares_objective(data: Dataset) -> ObjectiveOracle:
    """f(w) = 1/(2n) sum_i (<w, phi_i> - y_i)^2.

    The smoothness hint is the top eigenvalue of Phi^T Phi / n.
    """
    if len(data) == 0:
        raise DatasetError("empty dataset")
    A = data.to_csr()
    y = data.labels
    n = A.shape[0]
    At = A.T.tocsr()

    def value(w):
        r = A @ w - y
        return 0.5 * float(np.dot(r, r)) / n

    def grad(w):
        return (At @ (A @ w - y)) / n

    return ObjectiveOracle(value, data.n_features, grad, _top_eig_gram(A) / n, name="least_squares")


def logistic_objective(data: Dataset) -> ObjectiveOracle:
    """Mean log-loss (1/n) sum_i log(1 + exp(-y_i <w, phi_i>)), labels in {-1, +1}."""
    if len(data) == 0:
        raise DatasetError("empty dataset")
    y = data.labels
    bad = ~np.isin(y, (-1.0, 1.0))
    if np.any(bad):
        raise DatasetError(f"label {y[bad][0]!r} outside {{-1, +1}}")
    A = data.to_csr()
    At = A.T.tocsr()
    n = A.shape[0]

    def value(w):
        return float(np.mean(np.logaddexp(0.0, -y * (A @ w))))

    def grad(w):
        m = y * (A @ w)
        # d/dm log(1+e^{-m}) = -sigmoid(-m)
        s = -y * _sigmoid(-m)
        return (At @ s) / n

    # Hessian is bounded by Phi^T Phi / (4n)
    return ObjectiveOracle(value, data.n_features, grad, _top_eig_gram(A) / (4 * n), name="logistic")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _top_eig_gram(A: sparse.csr_matrix) -> float:
    G = (A.T @ A).toarray()
    return float(np.linalg.eigvalsh(G)[-1])
