"""Two-block synthetic data with known weight vectors.

    X1 = t1 w1^T + E1,   X2 = t2 w2^T + E2,
    t1 ~ N(0, I), t2 ~ N(t1, sd_t2^2 I), E_k columns ~ N(0, sd_ek^2 I).

Each of t1, t2, E1 and E2 is drawn from its own PCG64 stream spawned from
``SeedSequence(seed)`` in that order, so resizing one matrix leaves the
others unchanged.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import block_from_array

__all__ = ["SimSpec", "default_truth", "default_groups", "generate",
           "recovery_score", "W1_BREAKS", "W1_LEVELS", "W2_LEVELS"]

# Canonical profile for p1 = 150: cut points and levels between them.
W1_BREAKS = (0, 30, 70, 90, 120, 150)
W1_LEVELS = (0.0, 0.5, -0.3, 0.0, 0.4)
# Group values for the six groups of X2; group 2 wins on the 2/3 overlap.
W2_LEVELS = (0.0, 0.4, -0.3, 0.5, 0.2, 0.0)
_GROUP_BOUNDS = ((0, 10), (10, 30), (20, 40), (40, 60), (60, 90), (90, 100))


def _scaled(bounds, p, ref):
    return [int(round(b * p / ref)) for b in bounds]


def default_groups(p2=100):
    """Six groups over X2 (groups 2 and 3 overlap), scaled from p2 = 100."""
    out = []
    for lo, hi in _GROUP_BOUNDS:
        lo, hi = _scaled((lo, hi), p2, 100)
        out.append(list(range(lo, hi)))
    return out


def default_truth(p1=150, p2=100):
    """Piecewise-constant w1 and groupwise-constant w2, both of unit norm."""
    w1 = np.zeros(p1)
    cuts = _scaled(W1_BREAKS, p1, 150)
    for lo, hi, v in zip(cuts[:-1], cuts[1:], W1_LEVELS):
        w1[lo:hi] = v
    w2 = np.zeros(p2)
    # Paint in reverse so that earlier groups overwrite overlaps.
    for g, v in reversed(list(zip(default_groups(p2), W2_LEVELS))):
        w2[g] = v
    return w1 / np.linalg.norm(w1), w2 / np.linalg.norm(w2)


@dataclass
class SimSpec:
    n: int = 50
    p1: int = 150
    p2: int = 100
    sd_t2: float = 0.01
    sd_e1: float = 0.15
    sd_e2: float = 0.2
    true_w1: Optional[np.ndarray] = None
    true_w2: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if min(self.sd_t2, self.sd_e1, self.sd_e2) < 0:
            raise ValueError("standard deviations must be nonnegative")
        if self.true_w1 is None or self.true_w2 is None:
            w1, w2 = default_truth(self.p1, self.p2)
            if self.true_w1 is None:
                self.true_w1 = w1
            if self.true_w2 is None:
                self.true_w2 = w2
        self.true_w1 = np.asarray(self.true_w1, dtype=float)
        self.true_w2 = np.asarray(self.true_w2, dtype=float)
        if self.true_w1.shape != (self.p1,) or self.true_w2.shape != (self.p2,):
            raise ValueError("true weights do not match p1/p2")
        if not (np.any(self.true_w1) and np.any(self.true_w2)):
            raise ValueError("true weight vectors must be nonzero")

    def to_dict(self):
        d = asdict(self)
        d["true_w1"] = self.true_w1.tolist()
        d["true_w2"] = self.true_w2.tolist()
        return d


@dataclass
class Truth:
    t1: np.ndarray
    t2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    E1: np.ndarray = field(repr=False, default=None)
    E2: np.ndarray = field(repr=False, default=None)


def generate(spec: SimSpec):
    """Draw ``(X1, X2, truth)``; the blocks are raw (not centred)."""
    streams = [np.random.Generator(np.random.PCG64(s))
               for s in np.random.SeedSequence(spec.seed).spawn(4)]
    t1 = streams[0].standard_normal(spec.n)
    t2 = t1 + spec.sd_t2 * streams[1].standard_normal(spec.n)
    E1 = spec.sd_e1 * streams[2].standard_normal((spec.n, spec.p1))
    E2 = spec.sd_e2 * streams[3].standard_normal((spec.n, spec.p2))
    X1 = np.outer(t1, spec.true_w1) + E1
    X2 = np.outer(t2, spec.true_w2) + E2
    truth = Truth(t1, t2, spec.true_w1, spec.true_w2, E1, E2)
    return block_from_array(X1, "X1"), block_from_array(X2, "X2"), truth


def recovery_score(w_hat, w_true) -> float:
    """``|cos(w_hat, w_true)|``; 0 for a zero estimate."""
    w_hat = np.asarray(w_hat, dtype=float).ravel()
    w_true = np.asarray(w_true, dtype=float).ravel()
    if w_hat.shape != w_true.shape:
        raise ValueError("weight vectors differ in length")
    nt = np.linalg.norm(w_true)
    if nt == 0:
        raise ValueError("true weight vector is zero")
    nh = np.linalg.norm(w_hat)
    if nh == 0:
        return 0.0
    return float(abs(w_hat @ w_true) / (nh * nt))
