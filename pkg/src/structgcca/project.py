"""Projections onto the block constraint set W = P ∩ S.

P is the l1 ball of radius s and S is the ellipsoid ``{y : y^T M y <= c}``
with ``M = tau I + (1 - tau) / (n - 1) X^T X``. Projection onto S solves a
univariate Newton problem in the eigenbasis of M, which only needs the
thin SVD of X. Projection onto the intersection uses Dykstra's algorithm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

__all__ = ["soft_threshold", "l1_threshold", "project_l1", "Ellipsoid",
           "EllipsoidSpec", "project_ellipsoid", "ProjectionReport",
           "dykstra", "project_W", "NewtonError"]

NEWTON_TOL = 5e-16
NEWTON_MAX_ITER = 200


class NewtonError(RuntimeError):
    pass


@dataclass
class ProjectionReport:
    point: np.ndarray
    iterations: int
    residual: float
    active: dict = field(default_factory=dict)
    converged: bool = True


def soft_threshold(x, lam):
    """Proximal operator of ``lam * ||.||_1``."""
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def l1_threshold(x, s) -> float:
    """Root of ``sum_i (|x_i| - lam)_+ = s`` for ``||x||_1 > s``.

    The left-hand side is piecewise linear in lam with breakpoints at the
    sorted ``|x_i|``; find the bracketing pair and interpolate.
    """
    u = np.sort(np.abs(np.asarray(x, dtype=float)))[::-1]
    css = np.cumsum(u)
    j = np.arange(1, u.size + 1)
    # On the segment where the largest j values are above lam, the sum is
    # css_j - j * lam; it is valid while lam < u_j.
    cand = (css - s) / j
    rho = np.nonzero(u > cand)[0][-1]
    return float(max(cand[rho], 0.0))


def project_l1(x, s):
    """Euclidean projection onto ``{y : ||y||_1 <= s}``."""
    if not s > 0:
        raise ValueError("l1 radius must be positive")
    x = np.asarray(x, dtype=float)
    if np.abs(x).sum() <= s:
        return x.copy()
    return soft_threshold(x, l1_threshold(x, s))


class Ellipsoid:
    """The set ``{y : y^T M y <= c}`` described by the SVD of a block.

    The eigenvalues of M are ``(1 - tau) / (n - 1) * sigma_i^2 + tau`` along
    the r right singular vectors, and ``tau`` on their orthogonal complement.
    The complement is never formed; its contribution is recovered from
    ``||x||^2`` minus the mass captured by the leading vectors.
    """

    def __init__(self, block, tau, c=1.0):
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not c > 0:
            raise ValueError("radius c must be positive")
        self.tau = float(tau)
        self.c = float(c)
        self.n = block.n
        self.p = block.p
        self.V = block.V
        self.Vt = np.ascontiguousarray(block.V.T)
        self.lam = (1.0 - self.tau) / (self.n - 1) \
            * block.singular_values ** 2 + self.tau
        self.has_tail = self.V.shape[1] < self.p
        self._lam = {np.float64: self.lam,
                     np.longdouble: self.lam.astype(np.longdouble)}
        if not np.any(self.lam > 0) and (self.tau == 0 or not self.has_tail):
            raise ValueError("constraint matrix M is zero (tau = 0 and X = 0);"
                             " the quadratic constraint is vacuous")
        self.last_gamma = 0.0
        self.last_iterations = 0
        self.last_step = 0.0

    @classmethod
    def identity(cls, p, c=1.0):
        """The l2 ball of radius sqrt(c) (tau = 1)."""
        from .core import block_from_array
        return cls(block_from_array(np.zeros((2, p))), 1.0, c)

    def eigenvalues(self):
        tail = np.full(self.p - self.lam.size, self.tau)
        return np.concatenate([self.lam, tail])

    def _coords(self, x):
        xt = self.Vt @ x
        xt2 = xt * xt
        tail = max(float(x @ x) - float(xt2.sum()), 0.0) \
            if self.has_tail else 0.0
        return xt, xt2, tail

    def quad(self, x):
        _, xt2, tail = self._coords(x)
        return float(xt2 @ self.lam) + self.tau * tail

    def contains(self, x):
        return self.quad(x) <= self.c

    def _f(self, g, a, b, tail, dtype):
        one, two = dtype(1), dtype(2)
        lam, tau = self._lam[dtype], dtype(self.tau)
        g = dtype(g)
        d = one / (one + two * g * lam)
        d2 = d * d
        f = a @ d2 - dtype(self.c)
        fp = -dtype(4) * ((b * d) @ d2)
        if tail:
            dt = one / (one + two * g * tau)
            f += tau * tail * dt * dt
            fp -= dtype(4) * tau * tau * tail * dt ** 3
        return f, fp

    def newton(self, xt2, tail, gamma0=0.0):
        """Root of ``f(gamma) = sum_i xt_i^2 lam_i / (1 + 2 gamma lam_i)^2 - c``.

        f is convex and decreasing on ``gamma >= 0``, so Newton started below
        the root climbs to it monotonically. A warm start ``gamma0`` above the
        root costs one step: the tangent there crosses zero left of the root
        (clipped at 0), and the climb proceeds from that point.
        Iterations run in double precision until the step stalls in rounding
        noise; the last few then accumulate f and f' in extended precision so
        that the iteration settles on the correctly rounded root (a step of
        exactly zero) even when gamma is large. Returns
        ``(gamma, iterations, last_step)``.
        """
        g = float(gamma0)
        step = np.inf
        it = 0
        for dtype in (np.float64, np.longdouble):
            lam = self._lam[dtype]
            a = xt2.astype(dtype) * lam
            b = a * lam
            tl = dtype(tail)
            tiny = 0
            while it < NEWTON_MAX_ITER:
                it += 1
                f, fp = self._f(g, a, b, tl, dtype)
                if fp == 0:
                    raise NewtonError("zero derivative in ellipsoid Newton step")
                g_new = max(float(dtype(g) - f / fp), 0.0)
                step = abs(g_new - g)
                g = g_new
                if step < NEWTON_TOL:
                    return g, it, step
                if dtype is np.float64 and step < 1e-8 * (1.0 + g):
                    # Quadratic convergence takes one more step from here;
                    # a second small step means double precision is stuck.
                    tiny += 1
                    if tiny == 2:
                        break
        raise NewtonError("ellipsoid Newton did not converge in %d iterations"
                          " (last step %.3g)" % (NEWTON_MAX_ITER, step))

    def project(self, x, gamma0=0.0):
        """Euclidean projection of ``x``; ``gamma0`` warm-starts Newton."""
        x = np.asarray(x, dtype=float)
        xt, xt2, tail = self._coords(x)
        if float(xt2 @ self.lam) + self.tau * tail <= self.c:
            self.last_gamma, self.last_iterations, self.last_step = 0.0, 0, 0.
            return x.copy()
        gamma, it, step = self.newton(xt2, tail, gamma0)
        self.last_gamma, self.last_iterations, self.last_step = gamma, it, step
        # (I + 2 gamma M)^{-1} x in the eigenbasis of M.
        head = self.V @ (xt / (1.0 + 2.0 * gamma * self.lam))
        if not self.has_tail:
            return head
        rest = x - self.V @ xt
        return head + rest / (1.0 + 2.0 * gamma * self.tau)

    def warm(self, x):
        """Projection warm-started from the previous multiplier."""
        return self.project(x, self.last_gamma)

    __call__ = project


EllipsoidSpec = Ellipsoid


def project_ellipsoid(x, E: Ellipsoid):
    return E.project(x)


def dykstra(x0, proj_p, proj_s, eps, max_iter=10000) -> ProjectionReport:
    """Dykstra's alternating projection onto the intersection of two sets.

    Stops when the iterate is within ``eps`` of both sets and neither it nor
    the correction terms moved by more than ``eps`` in the last sweep.
    Feasibility alone is not enough: a single pass ``proj_s(proj_p(x0))`` is
    often feasible without being the projection of ``x0``. If ``max_iter``
    is reached, the last iterate is returned with ``converged=False``.
    """
    x = np.asarray(x0, dtype=float).copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for it in range(1, max_iter + 1):
        y = proj_p(x + p)
        p = x + p - y
        x_new = proj_s(y + q)
        q_new = y + q - x_new
        # x can sit still for many sweeps while the corrections p and q are
        # still changing, so both must settle. x0 - x = p + q, hence
        # watching x and q covers p as well.
        moved = max(np.linalg.norm(x_new - x), np.linalg.norm(q_new - q))
        x, q = x_new, q_new
        if moved > eps:
            continue
        # x is the output of proj_s, so its distance to S is zero up to
        # rounding and only the distance to P needs computing.
        residual = float(np.linalg.norm(x - proj_p(x)))
        if residual <= eps:
            return ProjectionReport(x, it, residual)
    residual = float(np.linalg.norm(x - proj_p(x)))
    log.debug("Dykstra stopped at max_iter=%d, residual %.3g",
              max_iter, residual)
    return ProjectionReport(x, max_iter, float(residual), converged=False)


def project_W(x, constraint, E: Ellipsoid, eps=1e-10, max_iter=10000,
              active_tol=1e-8) -> ProjectionReport:
    """Project onto ``{y : ||y||_1 <= s, y^T M y <= c}``.

    Without an l1 radius this is a single ellipsoid projection.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = constraint.s
    if s is None:
        y = E.project(x)
        rep = ProjectionReport(y, 1, float(np.linalg.norm(y - E.project(y))))
    else:
        E.last_gamma = 0.0
        rep = dykstra(x, lambda v: project_l1(v, s), E.warm, eps, max_iter)
    y = rep.point
    rep.active = {"ellipsoid": bool(abs(E.quad(y) - E.c) <= active_tol * E.c)}
    if s is not None:
        rep.active["l1"] = bool(abs(np.abs(y).sum() - s) <= active_tol * s)
    return rep
