"""Block-relaxation accelerated projected gradient solver.

Each outer sweep visits the blocks in order. For block k the other weight
vectors are held fixed, which makes the criterion convex in ``w_k``: a linear
covariance term plus smoothed penalties. That subproblem is solved by FISTA
with projections onto ``W_k``. The sweeps stop when every block's gradient map
is below ``eps_outer``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import core
from .project import Ellipsoid, project_W

log = logging.getLogger(__name__)

__all__ = ["SolverState", "BlockProblem", "step_size", "backtracking_step",
           "fista_block", "gradient_map", "fit_component", "deflate", "fit",
           "initial_weights", "DegenerateComponentError"]


class DegenerateComponentError(ValueError):
    pass


class BlockProblem:
    """Everything about one block that stays fixed during a component fit."""

    def __init__(self, block, constraint, attachments):
        self.block = block
        self.constraint = constraint
        self.attachments = tuple(attachments)
        self.ellipsoid = Ellipsoid(block, constraint.tau, constraint.c)
        self.lipschitz = sum(a.lipschitz for a in self.attachments)

    def penalty_value(self, w):
        return core.penalty_value(self.attachments, w)

    def penalty_gradient(self, w):
        return core.penalty_gradient(self.attachments, w)

    def project(self, x, eps, max_iter):
        return project_W(x, self.constraint, self.ellipsoid, eps, max_iter)


@dataclass
class SolverState:
    weights: list
    step_sizes: list
    counters: list
    outer_sweep: int = 0
    objective_trace: list = field(default_factory=list)
    block_trace: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    inner_capped: int = 0
    dykstra_capped: int = 0

    def projection_eps(self, k, tol):
        i = max(self.counters[k], 1)
        return max(tol.eps_dykstra0 / i ** 5, tol.eps_dykstra_floor)


def backtracking_step(fun, grad, y, project, t0=1.0, shrink=0.5,
                      max_halvings=60):
    """Largest ``t0 * shrink^j`` passing the sufficient-decrease test

        fun(z) <= fun(y) + <grad, z - y> + ||z - y||^2 / (2 t),

    with ``z = project(y - t grad)``.
    """
    fy = fun(y)
    t = t0
    for _ in range(max_halvings):
        z = project(y - t * grad)
        d = z - y
        if fun(z) <= fy + grad @ d + (d @ d) / (2 * t) + 1e-12 * abs(fy):
            return t
        t *= shrink
    return t


def step_size(problem: BlockProblem, w=None, g_phi=None, project=None):
    """``1 / sum_a omega_a ||A_a||^2 / mu_a``; backtracking when that is zero.

    The covariance part is linear in ``w_k`` and adds nothing to the Lipschitz
    constant.
    """
    if problem.lipschitz > 0:
        return 1.0 / problem.lipschitz
    if w is None:
        return 1.0
    if project is None:
        project = problem.ellipsoid.project

    def fun(v):
        return float(g_phi @ v) + problem.penalty_value(v)

    grad = g_phi + problem.penalty_gradient(w)
    return backtracking_step(fun, grad, w, project)


def _sign_fix(v):
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def initial_weights(blocks, spec):
    """Feasible deterministic start: the leading right singular vector of
    each block (sign fixed so its largest entry is positive), or seeded
    random directions when ``spec.init == 'random'``."""
    out = []
    if spec.init == "random":
        seqs = np.random.SeedSequence(spec.seed or 0).spawn(len(blocks))
        for b, ss in zip(blocks, seqs):
            v = np.random.default_rng(ss).standard_normal(b.p)
            out.append(v / np.linalg.norm(v))
        return out
    for b in blocks:
        if b.V.shape[1] and b.singular_values[0] > 0:
            v = _sign_fix(b.V[:, 0].copy())
        else:
            v = np.ones(b.p) / np.sqrt(b.p)
        out.append(v)
    return out


def _block_objective(problem, g_phi, w):
    return float(g_phi @ w) + problem.penalty_value(w)


def fista_block(k, state: SolverState, problems, blocks, design, tol):
    """Minimise the criterion over ``w_k`` with the other blocks fixed.

    Momentum is restarted whenever the step and the momentum direction
    disagree, ``(y - w_new) . (w_new - w) > 0``. The last iterate is
    returned unless its value is above the entry point's, in which case the
    best iterate seen is returned instead.
    """
    pb = problems[k]
    g_phi = core.gradient_phi(blocks, design, state.weights, k)
    t = state.step_sizes[k]
    w = state.weights[k]
    w_prev = w
    f_entry = _block_objective(pb, g_phi, w)
    best, f_best = w, f_entry
    s = 0
    for it in range(1, tol.max_iter_inner + 1):
        s += 1
        state.counters[k] += 1
        eps = state.projection_eps(k, tol)
        y = w + ((s - 1.0) / (s + 2.0)) * (w - w_prev)
        rep = pb.project(y - t * (g_phi + pb.penalty_gradient(y)), eps,
                         tol.max_iter_dykstra)
        if tol.restart and s > 1 and (y - rep.point) @ (rep.point - w) > 0:
            s = 1
            y = w
            rep = pb.project(y - t * (g_phi + pb.penalty_gradient(y)), eps,
                             tol.max_iter_dykstra)
        if not rep.converged:
            state.dykstra_capped += 1
        w_prev, w = w, rep.point
        fw = _block_objective(pb, g_phi, w)
        if fw < f_best:
            best, f_best = w, fw
        if np.linalg.norm(w - y) <= t * tol.eps_inner:
            break
    else:
        state.inner_capped += 1
        log.debug("block %d: FISTA hit max_iter_inner=%d", k,
                  tol.max_iter_inner)
    state.inner_iterations.append((k, it))
    if fw <= f_entry + 1e-12 * max(1.0, abs(f_entry)):
        return w
    return best


def gradient_map(k, weights, problems, blocks, design, step, eps=1e-12,
                 max_iter=10000):
    """``G = (w_k - proj_W(w_k - t grad_k)) / t`` and its norm."""
    pb = problems[k]
    w = weights[k]
    grad = core.gradient_phi(blocks, design, weights, k) \
        + pb.penalty_gradient(w)
    rep = pb.project(w - step * grad, eps, max_iter)
    G = (w - rep.point) / step
    return G, float(np.linalg.norm(G))


def fit_component(blocks, spec, init=None):
    """Fit one set of weight vectors by block relaxation.

    Returns ``(weights, diagnostics)``. ``diagnostics['converged']`` is False
    when ``max_iter_outer`` sweeps did not bring every gradient-map norm below
    ``eps_outer``; ``diagnostics['degenerate']`` flags an all-zero block.
    """
    tol = spec.tolerances
    design = spec.design
    problems = [BlockProblem(b, c, a) for b, c, a
                in zip(blocks, spec.constraints, spec.penalties)]
    K = len(blocks)
    start = init if init is not None else initial_weights(blocks, spec)
    weights = []
    for k in range(K):
        w0 = np.asarray(start[k], dtype=float)
        if w0.shape != (blocks[k].p,):
            raise ValueError("initial weight %d has shape %s, expected (%d,)"
                             % (k, w0.shape, blocks[k].p))
        weights.append(problems[k].project(w0, tol.eps_dykstra0 * 1e-6,
                                           tol.max_iter_dykstra).point)
    steps = []
    for k in range(K):
        g_phi = core.gradient_phi(blocks, design, weights, k)
        steps.append(step_size(problems[k], weights[k], g_phi,
                     lambda v, pb=problems[k]: pb.project(
                         v, tol.eps_dykstra_floor, tol.max_iter_dykstra).point))
    state = SolverState(weights, steps, [0] * K)

    def full_objective():
        return core.objective(blocks, design, state.weights, spec.penalties)

    state.objective_trace.append(full_objective())
    converged = False
    norms = [np.inf] * K
    for sweep in range(1, tol.max_iter_outer + 1):
        state.outer_sweep = sweep
        for k in range(K):
            state.weights[k] = fista_block(k, state, problems, blocks, design,
                                           tol)
            state.block_trace.append(full_objective())
        state.objective_trace.append(state.block_trace[-1])
        norms = [gradient_map(k, state.weights, problems, blocks, design,
                              state.step_sizes[k],
                              state.projection_eps(k, tol),
                              tol.max_iter_dykstra)[1] for k in range(K)]
        if max(norms) < tol.eps_outer:
            converged = True
            break
    if not converged:
        log.warning("no convergence after %d sweeps; gradient-map norms %s",
                    tol.max_iter_outer, ["%.3g" % v for v in norms])
    degenerate = any(not np.any(w) for w in state.weights)
    diagnostics = {
        "converged": converged,
        "degenerate": degenerate,
        "sweeps": state.outer_sweep,
        "gradient_map_norms": norms,
        "step_sizes": list(state.step_sizes),
        "objective_trace": list(state.objective_trace),
        "block_trace": list(state.block_trace),
        "fista_iterations": list(state.counters),
        "fista_capped": state.inner_capped,
        "dykstra_capped": state.dykstra_capped,
    }
    return [w.copy() for w in state.weights], diagnostics


def deflate(block, w):
    """``X <- X - X w w^T / (w^T w)``, with the SVD cache recomputed."""
    w = np.asarray(w, dtype=float)
    ww = float(w @ w)
    if ww == 0.0:
        raise DegenerateComponentError("cannot deflate by a zero weight vector")
    X = block.data
    return block.with_data(X - np.outer(X @ w, w) / ww)


def fit(blocks, spec) -> core.FitResult:
    """Extract ``spec.n_components`` components with deflation.

    Scores are computed on the original blocks. A degenerate (all-zero)
    component is kept and stops the extraction.
    """
    spec.validate_blocks(blocks)
    for k, b in enumerate(blocks):
        if not b.preprocessing.centered:
            raise ValueError("block %d is not centred; use preprocess()" % k)
    K = len(blocks)
    current = list(blocks)
    W = [[] for _ in range(K)]
    diags = []
    converged = True
    for a in range(spec.n_components):
        weights, diag = fit_component(current, spec)
        diag["component"] = a
        diags.append(diag)
        converged &= diag["converged"]
        for k in range(K):
            W[k].append(weights[k])
        if diag["degenerate"]:
            log.warning("component %d is degenerate (zero weights); stopping "
                        "extraction", a)
            break
        if a + 1 < spec.n_components:
            current = [deflate(b, w) for b, w in zip(current, weights)]
    weights = [np.column_stack(ws) for ws in W]
    scores = [b.data @ Wk for b, Wk in zip(blocks, weights)]
    trace = [v for d in diags for v in d["objective_trace"]]
    iterations = {
        "sweeps": [d["sweeps"] for d in diags],
        "fista": [d["fista_iterations"] for d in diags],
    }
    return core.FitResult(weights, scores, trace, bool(converged), iterations,
                          diags)
