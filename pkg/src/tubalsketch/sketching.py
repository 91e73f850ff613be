"""Sketch families and sampling-probability rules for the solvers.

Two regimes exist:

* spatial sets: q tubal matrices S_i of shape (m, tau_i, l) whose only
  nonzero frontal slice is the first one.  Their depth transform has
  identical Fourier slices, so every Fourier subsystem gets sketched the
  same way.
* per-slice sets: l independent families of q ordinary (m, tau) matrices,
  one family per Fourier slice, which is what the stacked and real-part
  solver variants consume.

All constructors are deterministic given a seeded ``numpy`` Generator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .t_algebra import dft3, identity

__all__ = [
    "SketchSet",
    "make_slice_sketches",
    "make_block_sketches",
    "make_gaussian_sketches",
    "make_fourier_sketches",
    "prob_uniform",
    "prob_slice_norm",
    "prob_sketch_norm",
    "prob_fourier_row_norm",
    "as_prob_vector",
    "sample_index",
    "is_complete_discrete_sampling",
]

SPATIAL_KINDS = ("slice", "block", "gaussian")
FOURIER_KINDS = ("fourier-row", "fourier-gaussian")


@dataclass(frozen=True)
class SketchSet:
    """A finite family of sketches plus the metadata the solvers need.

    ``members`` is a list of (m, tau_i, l) arrays for spatial kinds, or a
    list of l per-slice families, each a list of (m, tau) arrays, for the
    Fourier kinds.
    """

    kind: str
    m: int
    l: int
    q: int
    members: list = field(repr=False)

    def __post_init__(self):
        if self.kind not in SPATIAL_KINDS + FOURIER_KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}")

    @property
    def per_slice(self):
        return self.kind in FOURIER_KINDS

    @property
    def taus(self):
        """Per-member sketch sizes (ragged tau is allowed for block sets)."""
        if self.per_slice:
            return tuple(s.shape[1] for s in self.members[0])
        return tuple(s.shape[1] for s in self.members)

    @property
    def tau(self):
        taus = set(self.taus)
        if len(taus) != 1:
            raise ValueError("sketch set has ragged tau; use .taus")
        return taus.pop()

    def member_hat(self, i):
        """Depth transform of spatial member i, slices-first (l, m, tau)."""
        if self.per_slice:
            raise ValueError("per-slice sets have no single spatial member")
        return np.moveaxis(dft3(self.members[i]), 2, 0)

    def slice_family(self, k):
        """Family of slice k: per-slice members, or the (constant) Fourier
        slice of each spatial member."""
        if self.per_slice:
            return self.members[k]
        return [self.member_hat(i)[k] for i in range(self.q)]


def make_slice_sketches(m, l):
    """One sketch per horizontal slice: S_i is lateral slice i of the identity."""
    eye = identity(m, l)
    members = [np.ascontiguousarray(eye[:, i:i + 1, :]) for i in range(m)]
    return SketchSet("slice", m, l, m, members)


def make_block_sketches(m, l, partition):
    """Column-selection sketches for a disjoint cover of the row indices."""
    seen = set()
    members = []
    for block in partition:
        block = list(block)
        if not block:
            raise ValueError("empty block in partition")
        if seen.intersection(block):
            raise ValueError("overlapping blocks in partition")
        seen.update(block)
        S = np.zeros((m, len(block), l))
        for col, row in enumerate(block):
            S[row, col, 0] = 1.0
        members.append(S)
    if seen != set(range(m)):
        raise ValueError("partition must cover every row index exactly once")
    return SketchSet("block", m, l, len(members), members)


def make_gaussian_sketches(m, tau, q, l, rng):
    """q sketches whose first frontal slice is i.i.d. N(0, 1), others zero."""
    if tau > m:
        raise ValueError(f"tau={tau} exceeds m={m}")
    members = []
    for _ in range(q):
        S = np.zeros((m, tau, l))
        S[:, :, 0] = rng.standard_normal((m, tau))
        members.append(S)
    return SketchSet("gaussian", m, l, q, members)


def make_fourier_sketches(m, tau, q, l, kind, rng=None):
    """l independent per-slice families of q plain (m, tau) matrices.

    ``kind='row'`` gives the coordinate columns e_1..e_m (tau must be 1 and
    q must be m); ``kind='gaussian'`` gives real Gaussian matrices drawn
    from an independent stream per slice.
    """
    if tau > m:
        raise ValueError(f"tau={tau} exceeds m={m}")
    if kind == "row":
        if tau != 1 or q != m:
            raise ValueError("row sketches require tau=1 and q=m")
        family = [np.eye(m)[:, i:i + 1] for i in range(m)]
        members = [family for _ in range(l)]
        return SketchSet("fourier-row", m, l, q, members)
    if kind == "gaussian":
        if rng is None:
            raise ValueError("gaussian per-slice sketches need an rng")
        members = [
            [child.standard_normal((m, tau)) for _ in range(q)]
            for child in rng.spawn(l)
        ]
        return SketchSet("fourier-gaussian", m, l, q, members)
    raise ValueError(f"unknown per-slice sketch kind {kind!r}")


def as_prob_vector(w):
    """Validate (and return) a point of the probability simplex."""
    p = np.asarray(w, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be a nonempty 1-D array")
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def _normalize(weights, what):
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise ValueError(f"all {what} weights are zero")
    return w / total


def prob_uniform(q):
    return np.full(q, 1.0 / q)


def prob_slice_norm(A):
    """p_i proportional to the squared norm of horizontal slice i of A."""
    A = np.asarray(A, dtype=np.float64)
    return _normalize(np.sum(A * A, axis=(1, 2)), "horizontal-slice")


def prob_sketch_norm(A, Q, sketches):
    """p_i proportional to ||Q^{-1/2} * A^T * S_i||_F^2 (spatial sets)."""
    if sketches.per_slice:
        raise ValueError("prob_sketch_norm applies to spatial sketch sets")
    Ah = np.moveaxis(dft3(A), 2, 0)
    weights = np.empty(sketches.q)
    for i in range(sketches.q):
        Sh = sketches.member_hat(i)
        weights[i] = sum(
            np.linalg.norm(Q.inv_sqrt[k] @ Ah[k].conj().T @ Sh[k]) ** 2
            for k in range(sketches.l)
        )
    return _normalize(weights, "sketch-norm")


def prob_fourier_row_norm(A, Q=None):
    """Per-slice row probabilities: p[k, i] prop. to ||Q_k^{-1/2} A_k^H e_i||^2.

    With Q omitted this is the squared row norm of each Fourier slice of A.
    Returns an (l, m) array of per-slice simplex points.
    """
    Ah = np.moveaxis(dft3(A), 2, 0)
    l, m = Ah.shape[0], Ah.shape[1]
    p = np.empty((l, m))
    for k in range(l):
        cols = Ah[k].conj().T if Q is None else Q.inv_sqrt[k] @ Ah[k].conj().T
        p[k] = _normalize(np.sum(np.abs(cols) ** 2, axis=0), "fourier-row")
    return p


def sample_index(p, rng):
    """Inverse-CDF draw from a probability vector."""
    p = as_prob_vector(p)
    edges = np.cumsum(p)
    return min(int(np.searchsorted(edges, rng.random(), side="right")), p.size - 1)


def is_complete_discrete_sampling(A, sketches, relcut=1e-10):
    """Check, per Fourier slice, full row rank of every sketched system and
    full column reach of the stacked family.

    The rate certificates assume this; the solvers only warn when it fails
    because the pseudoinverse still defines a valid iteration.
    """
    Ah = np.moveaxis(dft3(A), 2, 0)
    n = Ah.shape[2]
    for k in range(sketches.l):
        stacked = []
        for S in sketches.slice_family(k):
            SA = S.conj().T @ Ah[k]
            if np.linalg.matrix_rank(SA, tol=relcut * max(SA.shape)) < S.shape[1]:
                return False
            stacked.append(SA)
        stacked = np.vstack(stacked)
        if np.linalg.matrix_rank(stacked, tol=relcut * max(stacked.shape)) < n:
            return False
    return True


def warn_if_not_complete(A, sketches):
    if not is_complete_discrete_sampling(A, sketches):
        warnings.warn(
            "sketch family is not complete discrete sampling for this system; "
            "the iteration is still defined but the rate certificates may not hold",
            stacklevel=3,
        )
