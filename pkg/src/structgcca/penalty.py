"""Group-structured linear operators and Nesterov-smoothed penalties.

A penalty has the form ``Omega(w) = sum_G ||A_G w||_2``. Its smoothed version
with parameter ``mu`` is

    Omega_mu(w) = <alpha*, A w> - mu / 2 ||alpha*||^2,

where ``alpha*`` is the groupwise projection of ``A w / mu`` onto the unit
ball. It has gradient ``A^T alpha*`` and Lipschitz constant ``||A||^2 / mu``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

log = logging.getLogger(__name__)

__all__ = ["LinearOperator", "build_group_l12", "build_tv1d", "from_matrix",
           "alpha_star", "exact_value", "smoothed_value", "smoothed_gradient",
           "lipschitz", "power_iteration_norm", "read_groups", "write_groups"]


class PowerIterationError(RuntimeError):
    def __init__(self, msg, bound):
        super().__init__(msg)
        self.bound = bound


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Sparse ``m x p`` operator whose rows are partitioned into groups.

    ``starts[G]:ends[G]`` are the rows of group ``G``; the ranges are
    contiguous and cover ``[0, m)``.
    """
    A: sparse.csr_matrix
    starts: np.ndarray
    ends: np.ndarray
    spectral_norm: float
    kind: str = "custom"

    def __post_init__(self):
        m = self.A.shape[0]
        if len(self.starts) == 0:
            raise ValueError("operator has no groups")
        if (self.starts[0] != 0 or self.ends[-1] != m
                or np.any(self.starts[1:] != self.ends[:-1])
                or np.any(self.ends <= self.starts)):
            raise ValueError("group row ranges must partition [0, %d)" % m)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.starts)

    @property
    def groups(self):
        return list(zip(self.starts.tolist(), self.ends.tolist()))

    @property
    def single_row_groups(self) -> bool:
        return self.m == self.n_groups


def build_group_l12(groups, p, group_weights=None) -> LinearOperator:
    """Group l1,2 operator: one weighted coordinate selector per group.

    Groups may overlap; an overlapping variable simply appears in several
    groups' rows.
    """
    if group_weights is None:
        group_weights = [1.0] * len(groups)
    if len(group_weights) != len(groups):
        raise ValueError("need one weight per group")
    rows, cols, vals, sizes = [], [], [], []
    r = 0
    for g, gw in zip(groups, group_weights):
        g = [int(i) for i in g]
        if not g:
            raise ValueError("empty group")
        if min(g) < 0 or max(g) >= p:
            raise ValueError("group index out of range [0, %d)" % p)
        if not gw > 0:
            raise ValueError("group weights must be positive")
        rows.extend(range(r, r + len(g)))
        cols.extend(g)
        vals.extend([float(gw)] * len(g))
        sizes.append(len(g))
        r += len(g)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(r, p))
    ends = np.cumsum(sizes)
    starts = ends - np.asarray(sizes)
    # A^T A is diagonal: entry j is the sum of squared weights of groups
    # containing j.
    diag = np.asarray(A.multiply(A).sum(axis=0)).ravel()
    return LinearOperator(A, starts, ends, float(np.sqrt(diag.max())),
                          kind="group_l12")


def build_tv1d(p) -> LinearOperator:
    """First-difference operator, row i = e_{i+1} - e_i, one group per row."""
    p = int(p)
    if p < 2:
        raise ValueError("total variation needs p >= 2")
    A = sparse.diags([-np.ones(p - 1), np.ones(p - 1)], [0, 1],
                     shape=(p - 1, p), format="csr")
    starts = np.arange(p - 1)
    # Closed form: the singular values are 2 sin(j pi / (2p)), j = 1..p-1.
    norm = 2.0 * np.sin((p - 1) * np.pi / (2.0 * p))
    return LinearOperator(A, starts, starts + 1, float(norm), kind="tv")


def from_matrix(A, groups=None, spectral_norm=None, seed=0) -> LinearOperator:
    """Wrap an arbitrary matrix; ``groups`` is a list of row ranges."""
    A = sparse.csr_matrix(A, dtype=float)
    if groups is None:
        groups = [(i, i + 1) for i in range(A.shape[0])]
    starts = np.array([g[0] for g in groups], dtype=int)
    ends = np.array([g[1] for g in groups], dtype=int)
    if spectral_norm is None:
        spectral_norm = power_iteration_norm(A, seed=seed)
    return LinearOperator(A, starts, ends, float(spectral_norm))


def power_iteration_norm(A, rtol=1e-6, max_iter=10000, seed=0) -> float:
    """Estimate ``||A||_2`` by power iteration on ``B = A^T A``.

    With ``v`` of unit norm, ``rho = v^T B v`` and residual ``r = B v - rho v``,
    the interval ``[rho - ||r||, rho + ||r||]`` holds an eigenvalue of B.
    Iteration stops once ``||r|| <= rtol * rho`` and returns
    ``sqrt(rho + ||r||)``, which does not undershoot that eigenvalue.

    Raises
    ------
    PowerIterationError
        If ``max_iter`` is reached; ``.bound`` holds ``sqrt(rho + ||r||)``
        for the last iterate.
    """
    A = sparse.csr_matrix(A)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    bound = np.inf
    for _ in range(max_iter):
        u = A.T @ (A @ v)
        rho = float(v @ u)
        res = float(np.linalg.norm(u - rho * v))
        bound = float(np.sqrt(rho + res))
        if res <= rtol * rho or rho == 0.0:
            return bound
        v = u / np.linalg.norm(u)
    raise PowerIterationError("power iteration did not converge in %d "
                              "iterations" % max_iter, bound)


def _group_norms(op: LinearOperator, v):
    if op.single_row_groups:
        return np.abs(v)
    return np.sqrt(np.add.reduceat(v * v, op.starts))


def alpha_star(op: LinearOperator, w, mu):
    """Maximiser of ``<alpha, A w> - mu/2 ||alpha||^2`` over groupwise unit balls."""
    v = (op.A @ w) / mu
    norms = _group_norms(op, v)
    scale = 1.0 / np.maximum(norms, 1.0)
    if op.single_row_groups:
        return v * scale
    return v * np.repeat(scale, op.ends - op.starts)


def exact_value(op: LinearOperator, w) -> float:
    return float(_group_norms(op, op.A @ w).sum())


def smoothed_value(op: LinearOperator, w, mu) -> float:
    Aw = op.A @ w
    a = alpha_star(op, w, mu)
    return float(a @ Aw) - 0.5 * mu * float(a @ a)


def smoothed_gradient(op: LinearOperator, w, mu):
    return op.A.T @ alpha_star(op, w, mu)


def lipschitz(op: LinearOperator, mu) -> float:
    if not mu > 0:
        raise ValueError("mu must be positive")
    return op.spectral_norm ** 2 / mu


def read_groups(path, p):
    """Read a group file: one group per line, comma-separated zero-based
    indices, optionally ending in ``;weight=<real>``.

    Returns ``(groups, weights)``.
    """
    groups, weights = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            body, _, tail = line.partition(";")
            weight = 1.0
            if tail:
                key, _, val = tail.partition("=")
                if key.strip() != "weight":
                    raise ValueError("%s:%d: unknown group attribute %r"
                                     % (path, lineno, key.strip()))
                weight = float(val)
            try:
                idx = [int(t) for t in body.split(",") if t.strip()]
            except ValueError:
                raise ValueError("%s:%d: bad index list" % (path, lineno))
            groups.append(idx)
            weights.append(weight)
    if not groups:
        raise ValueError("%s: no groups found" % path)
    build_group_l12(groups, p, weights)  # validates ranges
    return groups, weights


def write_groups(path, groups, weights=None):
    with open(path, "w", encoding="utf-8") as fh:
        for i, g in enumerate(groups):
            line = ",".join(str(int(j)) for j in g)
            if weights is not None and weights[i] != 1.0:
                line += ";weight=%r" % float(weights[i])
            fh.write(line + "\n")
