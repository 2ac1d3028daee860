"""Nonparametric regression learners used for nuisance and second-stage fits.

Four learners share one interface: :func:`fit_regression` returns an immutable
:class:`FittedRegression` whose ``predict`` maps a covariate matrix to reals.
With zero covariate columns every learner reduces to the training mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError, NumericError

KINDS = ("linear", "knn", "kernel", "local-linear")
_ALIASES = {
    "linear": "linear",
    "global-linear": "linear",
    "ridge": "linear",
    "knn": "knn",
    "k-nn": "knn",
    "kernel": "kernel",
    "kernel-smoother": "kernel",
    "nw": "kernel",
    "local-linear": "local-linear",
    "loclin": "local-linear",
    "ll": "local-linear",
}

# query rows per block keep the (rows x n_train) weight matrix near 64 MB
_BLOCK_ELEMENTS = 1 << 23


@dataclass(frozen=True)
class LearnerSpec:
    """Which learner to use and its hyperparameters.

    ``bandwidth=None`` selects the rule-of-thumb bandwidth
    ``1.06 * sd_j * n ** (-1/5)`` separately for each covariate ``j``.
    """

    kind: str = "kernel"
    penalty: float = 0.0
    neighbors: int = 10
    bandwidth: Optional[float] = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise ArgumentError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "linear" and not self.penalty >= 0:
            raise ArgumentError(f"ridge penalty must be >= 0, got {self.penalty}")
        if kind == "knn" and (int(self.neighbors) != self.neighbors or self.neighbors < 1):
            raise ArgumentError(f"k must be a positive integer, got {self.neighbors}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ArgumentError(f"bandwidth must be > 0, got {self.bandwidth}")

    @classmethod
    def parse(cls, text: str) -> "LearnerSpec":
        """Parse ``"kind[:key=value,...]"``, e.g. ``"kernel:h=0.3"`` or ``"knn:k=25"``."""
        kind, _, rest = text.strip().partition(":")
        kwargs = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ArgumentError(f"malformed learner option {item!r} in {text!r}")
            key = key.strip().lower()
            try:
                if key in ("h", "bandwidth"):
                    kwargs["bandwidth"] = None if value.strip() == "auto" else float(value)
                elif key in ("k", "neighbors"):
                    kwargs["neighbors"] = int(value)
                elif key in ("lambda", "lam", "penalty", "alpha"):
                    kwargs["penalty"] = float(value)
                else:
                    raise ArgumentError(f"unknown learner option {key!r} in {text!r}")
            except ValueError:
                raise ArgumentError(f"bad value for {key!r} in {text!r}") from None
        return cls(kind=kind, **kwargs)

    def __str__(self) -> str:
        if self.kind == "linear":
            return f"linear:lambda={self.penalty!r}"
        if self.kind == "knn":
            return f"knn:k={self.neighbors}"
        h = "auto" if self.bandwidth is None else repr(self.bandwidth)
        return f"{self.kind}:h={h}"


def silverman_bandwidth(X: np.ndarray) -> np.ndarray:
    """Per-column rule-of-thumb bandwidths; constant columns get 1.0."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(X.shape[1])
    h = 1.06 * sd * n ** (-0.2)
    return np.where(h > 0, h, 1.0)


def _as_matrix(X, d: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None] if d in (None, 1) else X[None, :]
    if d is not None and X.shape[1] != d:
        raise ArgumentError(f"expected {d} covariate column(s), got {X.shape[1]}")
    return X


def _kernel_weights(Q: np.ndarray, X: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Gaussian product-kernel weights, shape ``(len(Q), len(X))``.

    Rows whose weights all underflow (queries far outside the data) are
    rescaled by their largest weight so the smoother stays finite.
    """
    scale = h * np.sqrt(2.0)
    Qs, Xs = Q / scale, X / scale
    sq = np.subtract.outer(Qs[:, 0], Xs[:, 0])
    sq *= sq
    for j in range(1, X.shape[1]):
        diff = np.subtract.outer(Qs[:, j], Xs[:, j])
        diff *= diff
        sq += diff
    nearest = sq.min(axis=1)
    far = np.flatnonzero(nearest >= 700.0)
    if far.size:
        sq[far] -= nearest[far, None]
    np.negative(sq, out=sq)
    np.exp(sq, out=sq)
    return sq


@dataclass(frozen=True, eq=False)
class FittedRegression:
    spec: LearnerSpec
    X: np.ndarray
    y: np.ndarray
    _state: dict = field(default_factory=dict, repr=False)

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    def predict(self, X) -> np.ndarray:
        """Predictions at rows of ``X``; identical rows get bit-identical values."""
        Q = _as_matrix(X, self.n_features)
        if self.n_features == 0:
            return np.full(Q.shape[0], self._state["mean"])
        unique, inverse = np.unique(Q, axis=0, return_inverse=True)
        return self._predict_rows(unique)[inverse.ravel()]

    __call__ = predict

    def _predict_rows(self, Q):
        kind = self.spec.kind
        if kind == "linear":
            return self._state["coef"][0] + Q @ self._state["coef"][1:]
        if kind == "knn":
            return self._predict_knn(Q)
        return self._predict_smoother(Q, local_linear=(kind == "local-linear"))

    def _predict_knn(self, Q):
        k = self._state["k"]
        _, idx = self._state["tree"].query(Q, k=k)
        idx = np.asarray(idx).reshape(Q.shape[0], k)
        return self.y[idx].mean(axis=1)

    def _predict_smoother(self, Q, local_linear):
        h = self._state["h"]
        X, y = self.X, self.y
        n, d = X.shape
        out = np.empty(Q.shape[0])
        step = max(1, _BLOCK_ELEMENTS // max(n, 1))
        y1 = np.column_stack([np.ones(n), y])
        if local_linear:
            XX = (X[:, :, None] * X[:, None, :]).reshape(n, d * d)
            Xy = X * y[:, None]
        for start in range(0, Q.shape[0], step):
            q = Q[start:start + step]
            w = _kernel_weights(q, X, h)
            s0, wy = (w @ y1).T
            nw = wy / s0
            if not local_linear:
                out[start:start + step] = nw
                continue
            m = q.shape[0]
            sx = w @ X
            sxx = (w @ XX).reshape(m, d, d)
            sxy = w @ Xy
            # moments of (x - q) under the local weights
            cxx = sxx - sx[:, :, None] * q[:, None, :] - q[:, :, None] * sx[:, None, :] \
                + s0[:, None, None] * q[:, :, None] * q[:, None, :]
            cx = sx - s0[:, None] * q
            cxy = sxy - q * wy[:, None]
            A = np.zeros((m, d + 1, d + 1))
            A[:, 0, 0] = s0
            A[:, 0, 1:] = cx
            A[:, 1:, 0] = cx
            A[:, 1:, 1:] = cxx
            b = np.concatenate([wy[:, None], cxy], axis=1)
            # tiny ridge on slopes keeps sparse neighbourhoods solvable
            ridge = 1e-10 * s0[:, None] * (h ** 2)[None, :]
            A[:, 1:, 1:] += ridge[:, :, None] * np.eye(d)[None]
            try:
                coef = np.linalg.solve(A, b[:, :, None])[:, 0, 0]
            except np.linalg.LinAlgError:
                coef = nw
            # fall back to local-constant where the local design is degenerate
            mean_dev = cx / s0[:, None]
            cov = cxx / s0[:, None, None] - mean_dev[:, :, None] * mean_dev[:, None, :]
            cov /= h[None, :, None] * h[None, None, :]
            spread = np.linalg.eigvalsh(cov)[:, 0]
            coef = np.where(np.isfinite(coef) & (spread > 1e-3), coef, nw)
            out[start:start + step] = coef
        return out


def fit_regression(spec: LearnerSpec, features, targets) -> FittedRegression:
    """Fit ``spec`` to ``(features, targets)``.

    Raises
    ------
    ArgumentError
        Empty training set, mismatched shapes, or ``k`` larger than the sample.
    NumericError
        Unpenalised linear fit on a rank-deficient design.
    """
    y = np.asarray(targets, dtype=float).ravel()
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if y.shape[0] == 0:
        raise ArgumentError("cannot fit a regression on an empty training set")
    if X.shape[0] != y.shape[0]:
        raise ArgumentError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("training data contain non-finite values")
    X = X.copy()
    y = y.copy()
    X.setflags(write=False)
    y.setflags(write=False)
    n, d = X.shape
    state: dict = {"mean": float(y.mean())}
    if d == 0:
        return FittedRegression(spec, X, y, state)
    if spec.kind == "linear":
        state["coef"] = _fit_linear(X, y, spec.penalty)
    elif spec.kind == "knn":
        if spec.neighbors > n:
            raise ArgumentError(f"k={spec.neighbors} exceeds training size {n}")
        state["k"] = int(spec.neighbors)
        state["tree"] = cKDTree(X)
    else:
        h = silverman_bandwidth(X) if spec.bandwidth is None else np.full(d, float(spec.bandwidth))
        state["h"] = h
    return FittedRegression(spec, X, y, state)


def _fit_linear(X, y, penalty):
    n, d = X.shape
    Z = np.hstack([np.ones((n, 1)), X])
    if penalty == 0:
        if np.linalg.matrix_rank(Z) < d + 1:
            raise NumericError(
                "design matrix is singular for the unpenalised linear learner; use lambda > 0"
            )
        coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
        return coef
    # intercept is left unpenalised
    P = penalty * np.eye(d + 1)
    P[0, 0] = 0.0
    return np.linalg.solve(Z.T @ Z + P, Z.T @ y)
