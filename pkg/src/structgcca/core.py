"""Blocks, model configuration and the smoothed RGCCA objective.

Every block is centred before fitting. The covariance between two block
components uses the unbiased ``1 / (n - 1)`` convention, and the criterion
uses Horst's inner-weighting scheme, ``g(x) = x``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import penalty as pen

__all__ = ["Block", "Design", "BlockConstraint", "PenaltyAttachment",
           "Tolerances", "ModelSpec", "FitResult", "ConstraintMatrix",
           "preprocess", "block_from_array", "constraint_matrix", "covariance",
           "phi", "objective", "gradient_phi", "read_block_csv"]

SCHEMES = ("horst",)


@dataclass(frozen=True)
class Preprocessing:
    centered: bool
    scaled: bool
    means: Optional[np.ndarray] = None
    sds: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Block:
    """One n-by-p data matrix with its cached thin SVD.

    ``singular_values`` holds the ``r = min(n, p)`` singular values and ``V``
    the matching right singular vectors as a ``p x r`` matrix.
    """
    data: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray
    preprocessing: Preprocessing
    name: str = ""

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    @property
    def rank_dim(self) -> int:
        return min(self.n, self.p)

    def with_data(self, data: np.ndarray) -> "Block":
        """Same preprocessing record, new data, recomputed SVD."""
        s, V = _thin_svd(data)
        return replace(self, data=data, singular_values=s, V=V)


def _thin_svd(X):
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    return s, np.ascontiguousarray(Vt.T)


def block_from_array(data, name="", centered=False, scaled=False) -> Block:
    X = np.array(data, dtype=float, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("a block must be a 2-d matrix")
    if X.shape[0] < 2:
        raise ValueError("a block needs at least 2 samples, got %d"
                         % X.shape[0])
    if not np.all(np.isfinite(X)):
        raise ValueError("block %r contains non-finite values" % name)
    s, V = _thin_svd(X)
    return Block(X, s, V, Preprocessing(centered, scaled), name)


def preprocess(raw, center=True, scale=False, name="") -> Block:
    """Centre (and optionally scale) a raw data matrix.

    Scaling uses the ``1 / (n - 1)`` standard deviation. Columns that are
    constant are left at zero after centring and are not scaled.

    Raises
    ------
    ValueError
        If there are fewer than two rows or the matrix has NaN/inf entries.
    """
    blk = block_from_array(raw, name=name)
    X = blk.data
    means = X.mean(axis=0) if center else None
    if center:
        X = X - means
    sds = None
    if scale:
        sds = X.std(axis=0, ddof=1)
        const = sds <= 1e-12 * max(1.0, float(np.abs(X).max(initial=0.0)))
        sds = np.where(const, 1.0, sds)
        X = X / sds
    s, V = _thin_svd(X)
    return Block(X, s, V, Preprocessing(center, scale, means, sds), name)


def apply_preprocessing(block: Block, raw) -> np.ndarray:
    """Apply a block's centring/scaling (learnt on training rows) to new rows."""
    X = np.asarray(raw, dtype=float)
    pp = block.preprocessing
    if pp.means is not None:
        X = X - pp.means
    if pp.sds is not None:
        X = X / pp.sds
    return X


def read_block_csv(path, center=True, scale=False) -> Block:
    """Read a header-first CSV block (one row per sample) and preprocess it."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("%s is empty" % path)
    body = [r for r in rows[1:] if r]
    try:
        X = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as e:
        raise ValueError("%s: non-numeric or missing value (%s)" % (path, e))
    if X.ndim != 2 or X.shape[1] != len(rows[0]):
        raise ValueError("%s: ragged rows or header/column mismatch" % path)
    return preprocess(X, center=center, scale=scale, name=str(path))


@dataclass(frozen=True, eq=False)
class Design:
    """Symmetric 0/1 adjacency matrix between blocks."""
    C: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        object.__setattr__(self, "C", C)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("design matrix must be square")
        bad = [(i, j) for i in range(C.shape[0]) for j in range(C.shape[1])
               if C[i, j] != C[j, i]]
        if bad:
            raise ValueError("design matrix is not symmetric at entries %s"
                             % ", ".join("(%d,%d)" % ij for ij in bad[:10]))
        if not np.all((C == 0) | (C == 1)):
            raise ValueError("design matrix entries must be 0 or 1")
        if np.any(np.diag(C) != 0):
            raise ValueError("design matrix diagonal must be zero")
        if not np.any(C == 1):
            raise ValueError("design matrix connects no blocks")

    @property
    def K(self) -> int:
        return self.C.shape[0]

    @classmethod
    def fully_connected(cls, K):
        return cls(np.ones((K, K)) - np.eye(K))


@dataclass(frozen=True)
class BlockConstraint:
    tau: float = 1.0
    s: Optional[float] = None
    c: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1], got %r" % self.tau)
        if self.s is not None and not self.s > 0:
            raise ValueError("the l1 radius s must be positive, got %r"
                             % self.s)
        if not self.c > 0:
            raise ValueError("the quadratic radius c must be positive")


@dataclass(frozen=True)
class PenaltyAttachment:
    operator: pen.LinearOperator
    omega: float
    mu: float = 5e-4
    name: str = ""

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("penalty weight omega must be nonnegative")
        if not self.mu > 0:
            raise ValueError("smoothing parameter mu must be positive")

    @property
    def lipschitz(self) -> float:
        return self.omega * pen.lipschitz(self.operator, self.mu)


@dataclass(frozen=True)
class Tolerances:
    eps_outer: float = 1e-6
    eps_inner: float = 1e-7
    eps_dykstra0: float = 1e-3
    eps_dykstra_floor: float = 1e-12
    max_iter_inner: int = 5000
    max_iter_outer: int = 500
    max_iter_dykstra: int = 10000
    restart: bool = True


@dataclass(frozen=True)
class ModelSpec:
    design: Design
    constraints: Sequence[BlockConstraint]
    penalties: Sequence[Sequence[PenaltyAttachment]] = ()
    n_components: int = 1
    tolerances: Tolerances = field(default_factory=Tolerances)
    scheme: str = "horst"
    init: str = "svd"
    seed: Optional[int] = None

    def __post_init__(self):
        K = self.design.K
        object.__setattr__(self, "constraints", tuple(self.constraints))
        pens = tuple(tuple(p) for p in self.penalties) or ((),) * K
        object.__setattr__(self, "penalties", pens)
        if len(self.constraints) != K or len(pens) != K:
            raise ValueError("expected %d block constraints and penalty "
                             "lists, got %d and %d"
                             % (K, len(self.constraints), len(pens)))
        if self.scheme.lower() not in SCHEMES:
            raise ValueError("only Horst's scheme (g(x) = x) keeps the "
                             "penalised criterion multiconvex; got %r"
                             % self.scheme)
        if int(self.n_components) < 1:
            raise ValueError("n_components must be at least 1")
        if self.init not in ("svd", "random"):
            raise ValueError("init must be 'svd' or 'random'")

    @property
    def K(self) -> int:
        return self.design.K

    def validate_blocks(self, blocks):
        if len(blocks) != self.K:
            raise ValueError("spec has %d blocks but %d were given"
                             % (self.K, len(blocks)))
        n = blocks[0].n
        for k, b in enumerate(blocks):
            if b.n != n:
                raise ValueError("block %d has %d rows, block 0 has %d"
                                 % (k, b.n, n))
            for a in self.penalties[k]:
                if a.operator.p != b.p:
                    raise ValueError("penalty %r on block %d expects %d "
                                     "variables, block has %d"
                                     % (a.name, k, a.operator.p, b.p))
        limit = min(b.rank_dim for b in blocks)
        if self.n_components > limit:
            raise ValueError("n_components=%d exceeds min(n, p_k)=%d"
                             % (self.n_components, limit))


@dataclass
class FitResult:
    weights: list
    scores: list
    objective_trace: list
    converged: bool
    iterations: dict
    diagnostics: list = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return self.weights[0].shape[1] if self.weights else 0


class ConstraintMatrix:
    """Implicit ``M = tau I + (1 - tau) / (n - 1) X^T X``.

    Only the cached SVD of X is used, so M is never formed for large p.
    """

    def __init__(self, block: Block, tau: float):
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        self.block = block
        self.tau = float(tau)
        self.n = block.n
        self.p = block.p
        self.V = block.V
        self.beta = (1.0 - self.tau) / (self.n - 1)
        self.eigvals_head = self.beta * block.singular_values ** 2 + self.tau

    def matvec(self, y):
        y = np.asarray(y, dtype=float)
        return self.tau * y + self.beta * (self.block.data.T
                                           @ (self.block.data @ y))

    __matmul__ = matvec

    def quad(self, y):
        y = np.asarray(y, dtype=float)
        Xy = self.block.data @ y
        return self.tau * float(y @ y) + self.beta * float(Xy @ Xy)

    def eigenvalues(self):
        """All p eigenvalues, the r leading ones first."""
        tail = np.full(self.p - len(self.eigvals_head), self.tau)
        return np.concatenate([self.eigvals_head, tail])

    def dense(self):
        X = self.block.data
        return self.tau * np.eye(self.p) + self.beta * (X.T @ X)


def constraint_matrix(block: Block, tau: float) -> ConstraintMatrix:
    return ConstraintMatrix(block, tau)


def covariance(Xk: Block, wk, Xj: Block, wj) -> float:
    if Xk.n != Xj.n:
        raise ValueError("blocks have different sample counts (%d vs %d)"
                         % (Xk.n, Xj.n))
    return float((Xk.data @ wk) @ (Xj.data @ wj)) / (Xk.n - 1)


def phi(blocks, design: Design, weights) -> float:
    """The unpenalised criterion ``-sum_k sum_j c_kj Cov(X_k w_k, X_j w_j)``.

    Each connected pair is counted twice, once as (k, j) and once as (j, k).
    """
    scores = [b.data @ w for b, w in zip(blocks, weights)]
    n = blocks[0].n
    total = 0.0
    K = design.K
    for k in range(K):
        for j in range(K):
            if design.C[k, j]:
                total += design.C[k, j] * float(scores[k] @ scores[j])
    return -total / (n - 1)


def penalty_value(attachments, w) -> float:
    return sum(a.omega * pen.smoothed_value(a.operator, w, a.mu)
               for a in attachments)


def penalty_gradient(attachments, w):
    g = np.zeros_like(w, dtype=float)
    for a in attachments:
        if a.omega:
            g += a.omega * pen.smoothed_gradient(a.operator, w, a.mu)
    return g


def objective(blocks, design: Design, weights, penalties=()) -> float:
    """Smoothed criterion: phi plus the weighted Nesterov-smoothed penalties."""
    val = phi(blocks, design, weights)
    for atts, w in zip(penalties or (), weights):
        val += penalty_value(atts, w)
    return val


def gradient_phi(blocks, design: Design, weights, k: int):
    """Partial gradient of phi with respect to ``w_k``.

    Because phi sums over both (k, j) and (j, k), the partial gradient is
    ``-2 / (n - 1) * sum_j c_kj X_k^T X_j w_j``. It does not depend on
    ``w_k`` itself.
    """
    Xk = blocks[k].data
    n = blocks[k].n
    acc = np.zeros(Xk.shape[0])
    for j in range(design.K):
        if design.C[k, j]:
            acc += design.C[k, j] * (blocks[j].data @ weights[j])
    return -(2.0 / (n - 1)) * (Xk.T @ acc)
