"""Prediction through the inner relation, cross-validation and bootstrap
stability of a fitted model."""
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import core, solver

log = logging.getLogger(__name__)

__all__ = ["inner_coeff", "PredictionModel", "predict_block", "r2_pred",
           "classify_from_dummy", "fold_indices", "CvGrid", "apply_cell",
           "cross_validate", "fleiss_kappa", "bootstrap_stability",
           "StabilityReport", "CvResult"]

SELECTION_THRESHOLD = 1e-10


def inner_coeff(t_k, t_j) -> float:
    """Least-squares slope of ``t_j`` on ``t_k``."""
    t_k = np.asarray(t_k, dtype=float).ravel()
    t_j = np.asarray(t_j, dtype=float).ravel()
    den = float(t_k @ t_k)
    if den == 0.0:
        raise ValueError("source score vector is zero")
    return float(t_k @ t_j) / den


@dataclass
class PredictionModel:
    """Latent regression of block ``target`` on block ``source``.

    ``T_source`` and ``T_target`` are ``n x A`` score matrices on the
    training rows and ``W_target`` is the ``p_target x A`` weight matrix.
    """
    source: int
    target: int
    T_source: np.ndarray
    T_target: np.ndarray
    W_target: np.ndarray

    def __post_init__(self):
        self.T_source = np.atleast_2d(np.asarray(self.T_source, float).T).T
        self.T_target = np.atleast_2d(np.asarray(self.T_target, float).T).T
        self.W_target = np.atleast_2d(np.asarray(self.W_target, float).T).T
        A = self.T_source.shape[1]
        if A < 1 or self.T_target.shape[1] != A or self.W_target.shape[1] != A:
            raise ValueError("score and weight matrices need the same number "
                             "of components")

    @property
    def rank_deficient(self) -> bool:
        return np.linalg.matrix_rank(self.T_source) < self.T_source.shape[1]

    def coefficients(self):
        """``(T_k^T T_k)^{-1} T_k^T T_j``; pseudo-inverse when singular."""
        if self.rank_deficient:
            log.warning("source scores are rank deficient; using the "
                        "Moore-Penrose pseudo-inverse")
        return np.linalg.pinv(self.T_source) @ self.T_target


def predict_block(model: PredictionModel, T_source=None):
    """``T_k B W_j^T``, on the training scores or on new source scores."""
    T = model.T_source if T_source is None \
        else np.atleast_2d(np.asarray(T_source, float).T).T
    return T @ model.coefficients() @ model.W_target.T


def r2_pred(Xhat, X) -> float:
    """``1 - ||Xhat - X||_F^2 / ||X||_F^2``."""
    Xhat = np.asarray(Xhat, dtype=float)
    X = np.asarray(X, dtype=float)
    if Xhat.shape != X.shape:
        raise ValueError("shape mismatch %s vs %s" % (Xhat.shape, X.shape))
    den = float(np.sum(X * X))
    if den == 0.0:
        raise ValueError("target block has zero norm")
    return 1.0 - float(np.sum((Xhat - X) ** 2)) / den


def classify_from_dummy(Xhat):
    """Row-wise argmax; ties go to the lowest column index."""
    Xhat = np.asarray(Xhat, dtype=float)
    if Xhat.ndim != 2 or Xhat.shape[1] < 2:
        raise ValueError("need a matrix with at least two dummy columns")
    return np.argmax(Xhat, axis=1)


def fold_indices(n, folds, seed):
    """One seeded shuffle of the rows, cut into contiguous folds."""
    if not 2 <= folds <= n:
        raise ValueError("need 2 <= folds <= n, got folds=%d, n=%d"
                         % (folds, n))
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


@dataclass
class CvGrid:
    """Candidate values per tunable and the number of folds.

    Tunable names are ``block<k>.tau``, ``block<k>.s`` or
    ``block<k>.<penalty name>`` (its omega), with k counted from 1.
    """
    axes: dict
    folds: int = 7

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if not self.axes:
            raise ValueError("grid has no axes")
        for name, vals in self.axes.items():
            if not len(vals):
                raise ValueError("axis %r is empty" % name)

    def cells(self):
        names = list(self.axes)
        return [dict(zip(names, vals))
                for vals in product(*(self.axes[n] for n in names))]


_TUNABLE = re.compile(r"^block(\d+)\.(\w+?)(\.mu)?$")


def apply_cell(spec: core.ModelSpec, cell: dict) -> core.ModelSpec:
    cons = list(spec.constraints)
    pens = [list(p) for p in spec.penalties]
    for name, value in cell.items():
        m = _TUNABLE.match(name)
        if not m:
            raise ValueError("bad tunable name %r" % name)
        k = int(m.group(1)) - 1
        if not 0 <= k < spec.K:
            raise ValueError("tunable %r refers to a missing block" % name)
        key = m.group(2)
        if key in ("tau", "c") and not m.group(3):
            cons[k] = replace(cons[k], **{key: float(value)})
        elif key == "s" and not m.group(3):
            v = None if value is None or str(value).lower() == "none" \
                else float(value)
            cons[k] = replace(cons[k], s=v)
        else:
            idx = [i for i, a in enumerate(pens[k]) if a.name == key]
            if not idx:
                raise ValueError("block %d has no penalty named %r"
                                 % (k + 1, key))
            field_ = "mu" if m.group(3) else "omega"
            pens[k][idx[0]] = replace(pens[k][idx[0]],
                                      **{field_: float(value)})
    return replace(spec, constraints=cons, penalties=pens)


def _as_array(b):
    return np.asarray(b.data if isinstance(b, core.Block) else b, dtype=float)


def _predictors(spec, target):
    C = spec.design.C
    ks = [k for k in range(spec.K) if k != target and C[k, target]]
    return ks or [k for k in range(spec.K) if k != target]


def _fold_score(raw, spec, target, test, center, scale):
    n = raw[0].shape[0]
    train = np.setdiff1d(np.arange(n), test)
    blocks = [core.preprocess(X[train], center=center, scale=scale)
              for X in raw]
    res = solver.fit(blocks, spec)
    if not res.converged:
        log.info("fold fit did not converge; scored anyway")
    A = res.n_components
    test_X = [core.apply_preprocessing(b, X[test])
              for b, X in zip(blocks, raw)]
    Wt = res.weights[target][:, :A]
    score = 1.0
    parts = {}
    for k in _predictors(spec, target):
        pm = PredictionModel(k, target, res.scores[k], res.scores[target], Wt)
        Xhat = predict_block(pm, test_X[k] @ res.weights[k])
        parts[k] = r2_pred(Xhat, test_X[target])
        score *= parts[k]
    return score, parts, res.converged


def _cell_job(args):
    raw, spec, target, folds, center, scale = args
    try:
        out = [_fold_score(raw, spec, target, f, center, scale)
               for f in folds]
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
        log.warning("grid cell failed: %s", e)
        return -math.inf, str(e), 0
    return (float(np.mean([o[0] for o in out])), "",
            sum(not o[2] for o in out))


def _run(fn, jobs_args, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, jobs_args))
    return [fn(a) for a in jobs_args]


@dataclass
class CvResult:
    best_cell: dict
    best_index: int
    best_spec: core.ModelSpec
    table: list
    tied: list = field(default_factory=list)
    nonconverged: int = 0


def cross_validate(blocks, spec_template, grid: CvGrid, target, seed=0,
                   center=True, scale=False, jobs=1) -> CvResult:
    """Grid search maximising the product of held-out R^2 predictions of
    block ``target`` from each block connected to it.

    Each fold's training rows are preprocessed on their own and the
    held-out rows reuse the training means (and scales). A cell whose fit
    fails scores ``-inf``. Ties go to the lowest cell index.
    """
    raw = [_as_array(b) for b in blocks]
    n = raw[0].shape[0]
    folds = fold_indices(n, grid.folds, seed)
    cells = grid.cells()
    specs = [apply_cell(spec_template, c) for c in cells]
    results = _run(_cell_job, [(raw, s, target, folds, center, scale)
                               for s in specs], jobs)
    table = [dict(cell, score=sc, nonconverged=nc, error=err)
             for cell, (sc, err, nc) in zip(cells, results)]
    scores = np.array([r[0] for r in results])
    best = int(np.argmax(scores))
    tied = [i for i, s in enumerate(scores) if s == scores[best]]
    if len(tied) > 1:
        log.info("CV tie between cells %s; keeping cell %d", tied, best)
    return CvResult(cells[best], best, specs[best], table, tied,
                    sum(r[2] for r in results))


def fleiss_kappa(counts) -> float:
    """Fleiss' kappa for an ``items x categories`` table of rater counts.

    Every row must sum to the same number of raters. Perfect agreement on a
    single category everywhere is reported as 1.
    """
    counts = np.asarray(counts, dtype=float)
    N, _ = counts.shape
    r = counts.sum(axis=1)
    if not np.allclose(r, r[0]) or r[0] < 2:
        raise ValueError("need the same number (>= 2) of raters per item")
    r = r[0]
    p_j = counts.sum(axis=0) / (N * r)
    P_i = (np.sum(counts * counts, axis=1) - r) / (r * (r - 1))
    P_bar = P_i.mean()
    P_e = float(np.sum(p_j * p_j))
    if np.isclose(P_e, 1.0):
        return 1.0
    return float((P_bar - P_e) / (1.0 - P_e))


@dataclass
class StabilityReport:
    B: int
    successes: int
    selection_counts: list
    kappa: list
    failures: list = field(default_factory=list)
    nonconverged: int = 0


def _boot_job(args):
    raw, spec, rows, center, scale, threshold = args
    try:
        blocks = [core.preprocess(X[rows], center=center, scale=scale)
                  for X in raw]
        res = solver.fit(blocks, spec)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
        return None, str(e), False
    sel = []
    for W in res.weights:
        S = np.zeros((W.shape[0], spec.n_components), dtype=int)
        S[:, :W.shape[1]] = np.abs(W) > threshold
        sel.append(S)
    return sel, "", res.converged


def bootstrap_stability(blocks, spec, B=100, seed=0, center=True,
                        scale=False, threshold=SELECTION_THRESHOLD,
                        jobs=1) -> StabilityReport:
    """Refit on ``B`` row resamples and measure selection agreement.

    ``selection_counts[k]`` is a ``p_k x A`` array of how many successful
    rounds gave each variable a weight above ``threshold`` in magnitude;
    ``kappa[k][a]`` is Fleiss' kappa over those rounds with the two
    categories selected / not selected.
    """
    if B < 2:
        raise ValueError("need at least 2 bootstrap rounds")
    raw = [_as_array(b) for b in blocks]
    n = raw[0].shape[0]
    rngs = [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(B)]
    rows = [g.integers(0, n, size=n) for g in rngs]
    out = _run(_boot_job, [(raw, spec, r, center, scale, threshold)
                           for r in rows], jobs)
    A = spec.n_components
    counts = [np.zeros((X.shape[1], A), dtype=int) for X in raw]
    failures = []
    ok = 0
    nonconverged = 0
    for b, (sel, err, conv) in enumerate(out):
        if sel is None:
            failures.append((b, err))
            continue
        ok += 1
        nonconverged += not conv
        for k, S in enumerate(sel):
            counts[k] += S
    kappa = []
    for C in counts:
        row = []
        for a in range(A):
            if ok < 2:
                row.append(float("nan"))
                continue
            table = np.column_stack([C[:, a], ok - C[:, a]])
            row.append(fleiss_kappa(table))
        kappa.append(row)
    if failures:
        log.warning("%d of %d bootstrap fits failed", len(failures), B)
    return StabilityReport(B, ok, counts, kappa, failures, nonconverged)
