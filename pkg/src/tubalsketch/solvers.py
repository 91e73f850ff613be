"""Sketch-and-project solvers for consistent tensor systems A * X = B.

Eleven methods are exposed through :func:`solve`:

==============  ==============================================================
name            behaviour
==============  ==============================================================
TSP             fresh spatial Gaussian sketch drawn every iteration
NTSP            finite spatial set, fixed sampling probabilities
ATSP-MD         finite spatial set, largest sketched loss wins
ATSP-PR         finite spatial set, probabilities proportional to the losses
ATSP-CS         finite spatial set, loss-capped sampling with parameter theta
TSP-I           per-slice sketches, real Re/Im-stacked sketched system
TSP-II          per-slice sketches, fixed probabilities, real part taken at
                the end (direct updates, no factor caching)
NTSP-II         as TSP-II through the cached per-slice fast path
ATSP-MD-II      per-slice max-loss selection, cached fast path
ATSP-PR-II      per-slice proportional selection, cached fast path
ATSP-CS-II      per-slice capped selection, cached fast path
==============  ==============================================================

Every finite-set method runs through a cached fast path: the projector
factors are precomputed once, the sketched residuals are kept current by a
rank-one-style recursion, and each iteration touches only small matrices.
:func:`audit_residuals` recomputes the residuals from scratch for drift
checks.  All iterations operate on the Fourier slices; spatial-domain
reference steps for cross-checking live in :func:`sp_step_direct`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import sketching
from .t_algebra import PINV_RELCUT, WeightQ, bcirc, fold, unfold

__all__ = [
    "METHODS",
    "SolverConfig",
    "RunRecord",
    "DivergenceError",
    "solve",
    "make_state",
    "sketched_loss",
    "sp_step",
    "select_index",
    "audit_residuals",
    "sp_step_direct",
]

SPATIAL_FRESH = ("TSP",)
SPATIAL_SET = ("NTSP", "ATSP-MD", "ATSP-PR", "ATSP-CS")
STACKED = ("TSP-I",)
PER_SLICE_FRESH = ("TSP-II",)
PER_SLICE_SET = ("NTSP-II", "ATSP-MD-II", "ATSP-PR-II", "ATSP-CS-II")
METHODS = SPATIAL_FRESH + SPATIAL_SET + STACKED + PER_SLICE_FRESH + PER_SLICE_SET

_RULES = {
    "NTSP": "fixed", "ATSP-MD": "md", "ATSP-PR": "pr", "ATSP-CS": "cs",
    "NTSP-II": "fixed", "ATSP-MD-II": "md", "ATSP-PR-II": "pr",
    "ATSP-CS-II": "cs", "TSP-II": "fixed", "TSP-I": "fixed",
}


class DivergenceError(RuntimeError):
    """Raised when the tracked error grows far beyond its initial value."""


@dataclass
class SolverConfig:
    """Everything a solver run needs besides the system itself.

    ``probabilities`` may be an explicit vector, one of the rule names
    'uniform', 'slice-norm', 'sketch-norm', 'fourier-row-norm', or None
    (uniform).  It is the fixed distribution of the nonadaptive methods and
    the reference distribution of the capped rule.  ``tau`` is only read by
    the fresh-draw TSP method.
    """

    method: str = "NTSP"
    sketches: sketching.SketchSet | None = None
    weight: WeightQ | None = None
    probabilities: object = None
    theta: float = 0.5
    tau: int = 1
    max_iters: int = 100_000
    tol: float = 1e-10
    seed: int = 0
    record_every: int = 1
    audit_every: int = 0
    keep_iterates: bool = False
    check_sampling: bool = True

    def canonical_method(self):
        name = self.method.upper()
        if name not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        return name


@dataclass
class RunRecord:
    """Per-run trace: one entry per recorded iteration plus run summary."""

    method: str
    t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    epsilon: np.ndarray = field(default_factory=lambda: np.empty(0))
    q_error: np.ndarray = field(default_factory=lambda: np.empty(0))
    chosen: list = field(default_factory=list)
    loss_max: np.ndarray = field(default_factory=lambda: np.empty(0))
    loss_sum: np.ndarray = field(default_factory=lambda: np.empty(0))
    seconds: np.ndarray = field(default_factory=lambda: np.empty(0))
    pr_variance_factor: np.ndarray = field(default_factory=lambda: np.empty(0))
    iterations: int = 0
    converged: bool = False
    audit_max: float = 0.0
    max_imag_residue: float = 0.0
    iterates: list | None = None


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def _hat(X):
    """(a, b, l) tensor -> slices-first Fourier stack (l, a, b)."""
    return np.fft.fft(np.moveaxis(np.asarray(X, dtype=np.complex128), 2, 0), axis=0)


def _unhat(Xh, imag_tol=1e-9, force_real=False):
    Y = np.fft.ifft(Xh, axis=0)
    if not force_real:
        imag, real = np.linalg.norm(Y.imag), np.linalg.norm(Y.real)
        if imag > imag_tol * real + 1e-300:
            raise ValueError(
                f"iterate lost conjugate symmetry: |imag|={imag:.3e}, |real|={real:.3e}"
            )
    return np.ascontiguousarray(np.moveaxis(Y.real, 0, 2))


def _batched_inv_factor(M, relcut=PINV_RELCUT, slice_axis=None):
    """Factor C with C C^H = pinv(M) for a stack of Hermitian PSD matrices.

    Rank-deficient (including all-zero) matrices yield zero columns, which
    downstream become zero residual rows and skipped update components.
    ``slice_axis`` names the stack axis that holds the Fourier slices of one
    and the same sketched system; the rank cutoff is then relative to that
    system's largest eigenvalue, so slices that vanish up to transform
    rounding are dropped instead of inverted.
    """
    M = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    lam, U = np.linalg.eigh(M)
    lmax = np.clip(lam[..., -1:], 0.0, None)
    if slice_axis is not None:
        lmax = lmax.max(axis=slice_axis, keepdims=True)
    cut = lmax * (M.shape[-1] * relcut)
    inv = np.where(lam > cut, 1.0 / np.sqrt(np.clip(lam, 1e-300, None)), 0.0)
    return U * inv[..., None, :]


def _batched_hpinv(M, relcut=PINV_RELCUT, slice_axis=None):
    C = _batched_inv_factor(M, relcut, slice_axis)
    return C @ np.conj(np.swapaxes(C, -1, -2))


def select_index(losses, rule, rng=None, base_probs=None, theta=0.5):
    """Pick the sketch index for one iteration from the current losses.

    Rules: 'md' (argmax, lowest index wins ties), 'pr' (probability
    proportional to loss), 'cs' (proportional within the theta-capped set),
    'fixed' (draw from ``base_probs``).  All losses zero means there is
    nothing left to project on; callers treat that as convergence before
    selecting.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if rule == "fixed":
        return sketching.sample_index(base_probs, rng)
    if not np.any(losses > 0):
        raise ValueError("all sketched losses are zero; nothing to select")
    if rule == "md":
        return int(np.argmax(losses))
    if rule == "pr":
        return sketching.sample_index(losses / losses.sum(), rng)
    if rule == "cs":
        if base_probs is None:
            base_probs = sketching.prob_uniform(losses.size)
        threshold = theta * losses.max() + (1.0 - theta) * float(base_probs @ losses)
        capped = np.where(losses >= threshold, losses, 0.0)
        if not np.any(capped > 0):  # float hedge; the max always qualifies
            return int(np.argmax(losses))
        return sketching.sample_index(capped / capped.sum(), rng)
    raise ValueError(f"unknown selection rule {rule!r}")


def _resolve_probs(spec, A, Q, sketches):
    if spec is None or (isinstance(spec, str) and spec == "uniform"):
        return sketching.prob_uniform(sketches.q)
    if isinstance(spec, str):
        if spec == "slice-norm":
            if sketches.kind != "slice":
                raise ValueError("slice-norm probabilities require slice sketches")
            return sketching.prob_slice_norm(A)
        if spec == "sketch-norm":
            return sketching.prob_sketch_norm(A, Q, sketches)
        if spec == "fourier-row-norm":
            if not sketches.per_slice:
                raise ValueError("fourier-row-norm requires a per-slice sketch set")
            return sketching.prob_fourier_row_norm(A, Q)
        raise ValueError(f"unknown probability rule {spec!r}")
    return np.asarray(spec, dtype=np.float64)


def _per_slice_probs(p, l, q):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = np.broadcast_to(p, (l, q)).copy()
    if p.shape != (l, q):
        raise ValueError(f"per-slice probabilities must have shape ({l}, {q})")
    for k in range(l):
        sketching.as_prob_vector(p[k])
    return p


def _draw_per_slice(weights, rngs, active=None):
    """Inverse-CDF draws from one weight row per slice, batched.

    ``weights`` is (l, q) nonnegative with positive row sums on active rows;
    rows flagged inactive come back as -1.  One uniform variate is consumed
    from each active slice's generator, so streams stay per-slice.
    """
    l, q = weights.shape
    idx = np.full(l, -1, dtype=int)
    if active is None:
        active = np.ones(l, dtype=bool)
    rows = np.nonzero(active)[0]
    if rows.size == 0:
        return idx
    cum = np.cumsum(weights[rows], axis=1)
    targets = np.array([rngs[k].random() for k in rows]) * cum[:, -1]
    idx[rows] = np.minimum((cum <= targets[:, None]).sum(axis=1), q - 1)
    return idx


class _BaseState:
    """Shared bookkeeping: Fourier data, error tracking, iterate export."""

    def __init__(self, A, B, config, x_star):
        A = np.asarray(A, dtype=np.float64)
        B = np.asarray(B, dtype=np.float64)
        if A.ndim != 3 or B.ndim != 3 or A.shape[0] != B.shape[0] or A.shape[2] != B.shape[2]:
            raise ValueError(f"incompatible system shapes {A.shape} and {B.shape}")
        self.method = config.canonical_method()
        self.config = config
        self.m, self.n, self.l = A.shape
        self.p = B.shape[1]
        Q = config.weight or WeightQ.identity(self.n, self.l)
        if Q.n != self.n or Q.l != self.l:
            raise ValueError("weight dimensions do not match the system")
        self.Q = Q
        self.Ah = _hat(A)
        self.Bh = _hat(B)
        self.Xh = np.zeros((self.l, self.n, self.p), dtype=np.complex128)
        self.t = 0
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=np.float64)
        if self.x_star is not None:
            self.Xsh = _hat(self.x_star)
            self.x_star_norm = np.linalg.norm(self.x_star)
            if self.x_star_norm == 0:
                raise ValueError("x_star must be nonzero for relative errors")
        self.b_norm = np.linalg.norm(B)
        self.max_imag_residue = 0.0
        self.audit_max = 0.0

    # -- error tracking ----------------------------------------------------
    def epsilon(self):
        """Relative solution error when the solution is known, else the
        relative residual."""
        if self.x_star is not None:
            diff = self.Xh - self.Xsh
            return float(np.linalg.norm(diff) / np.sqrt(self.l) / self.x_star_norm)
        res = self.Ah @ self.Xh - self.Bh
        return float(np.linalg.norm(res) / np.sqrt(self.l) / max(self.b_norm, 1e-300))

    def q_error(self):
        """Weighted squared error ||X - X_star||_{F(Q)}^2 (needs x_star)."""
        if self.x_star is None:
            return float("nan")
        diff = self.Xh - self.Xsh
        if self.Q.is_identity:
            return float(np.linalg.norm(diff) ** 2 / self.l)
        return float(
            sum(np.linalg.norm(self.Q.sqrt[k] @ diff[k]) ** 2 for k in range(self.l))
            / self.l
        )

    def x(self):
        return _unhat(self.Xh)

    # defaults for paths without cached residuals
    def losses(self):
        return None

    def audit(self):
        raise ValueError("this method keeps no cached residuals to audit")


class _SpatialSetState(_BaseState):
    """Cached fast path for the finite-spatial-set methods.

    Per member i and slice k the setup stores the sketched system N = S^H A,
    a factor C with C C^H = pinv(N Q^{-1} N^H), the step map Q^{-1} N^H C,
    the cross products C_i^H N_i Q^{-1} N_j^H C_j, and the running sketched
    residuals R_i = C_i^H (N_i X - S_i^H B).  The sketched loss of member i
    is (1/l) sum_k ||R_i[k]||_F^2 and one iteration costs a couple of small
    batched matmuls.
    """

    per_slice_selection = False

    def __init__(self, A, B, config, x_star):
        super().__init__(A, B, config, x_star)
        sketches = config.sketches
        if sketches is None or sketches.per_slice:
            raise ValueError(f"{self.method} needs a spatial sketch set")
        if sketches.m != self.m or sketches.l != self.l:
            raise ValueError("sketch set dimensions do not match the system")
        if config.check_sampling:
            sketching.warn_if_not_complete(A, sketches)
        self.sketches = sketches
        self.q = sketches.q
        self.rule = _RULES[self.method]
        self.base_probs = sketching.as_prob_vector(
            _resolve_probs(config.probabilities, A, self.Q, sketches)
        )
        if self.base_probs.size != self.q:
            raise ValueError("probability vector length does not match q")
        self.index_rng = _rng(config.seed, 1)
        self.uniform_tau = len(set(sketches.taus)) == 1
        QiAH = self.Q.inv @ np.conj(np.swapaxes(self.Ah, -1, -2))  # (l, n, m)
        if self.uniform_tau:
            Sh = np.stack([sketches.member_hat(i) for i in range(self.q)])  # (q,l,m,tau)
            N = np.conj(np.swapaxes(Sh, -1, -2)) @ self.Ah  # (q,l,tau,n)
            AQS = QiAH[None] @ Sh  # (q,l,n,tau) = Q^{-1} A^H S
            M = N @ AQS
            self.C = _batched_inv_factor(M, slice_axis=1)  # (q,l,tau,tau)
            self.step_map = AQS @ self.C  # (q,l,n,tau)
            CH = np.conj(np.swapaxes(self.C, -1, -2))
            # cross[i, j] = C_i^H N_i (Q^{-1} A^H S_j C_j)
            self.cross = np.einsum(
                "ikab,jkbc->ijkac", CH @ N, self.step_map, optimize=True
            )
            self.SB = np.conj(np.swapaxes(Sh, -1, -2)) @ self.Bh  # (q,l,tau,p)
            self.N = N
            self.R = CH @ ((N @ self.Xh[None]) - self.SB)
        else:
            self.N, self.C, self.step_map, self.SB, self.R = [], [], [], [], []
            for i in range(self.q):
                Sh = sketches.member_hat(i)
                N = np.conj(np.swapaxes(Sh, -1, -2)) @ self.Ah
                AQS = QiAH @ Sh
                C = _batched_inv_factor(N @ AQS, slice_axis=0)
                self.N.append(N)
                self.C.append(C)
                self.step_map.append(AQS @ C)
                self.SB.append(np.conj(np.swapaxes(Sh, -1, -2)) @ self.Bh)
                self.R.append(
                    np.conj(np.swapaxes(C, -1, -2)) @ (N @ self.Xh - self.SB[i])
                )
            self.cross = [
                [
                    np.conj(np.swapaxes(self.C[i], -1, -2)) @ self.N[i] @ self.step_map[j]
                    for j in range(self.q)
                ]
                for i in range(self.q)
            ]

    def losses(self):
        if self.uniform_tau:
            return np.sum(np.abs(self.R) ** 2, axis=(1, 2, 3)) / self.l
        return np.array([np.linalg.norm(R) ** 2 / self.l for R in self.R])

    def select(self, losses):
        return select_index(
            losses, self.rule, self.index_rng, self.base_probs, self.config.theta
        )

    def step(self, i):
        if self.uniform_tau:
            Ri = self.R[i]
            self.Xh -= self.step_map[i] @ Ri
            self.R -= self.cross[:, i] @ Ri[None]
        else:
            Ri = self.R[i].copy()
            self.Xh -= self.step_map[i] @ Ri
            for j in range(self.q):
                self.R[j] -= self.cross[j][i] @ Ri
        self.t += 1

    def audit(self):
        """Max Frobenius deviation between recursed and fresh residuals."""
        worst = 0.0
        for i in range(self.q):
            C = self.C[i]
            fresh = np.conj(np.swapaxes(C, -1, -2)) @ (
                (self.N[i] @ self.Xh) - self.SB[i]
            )
            worst = max(worst, float(np.linalg.norm(fresh - self.R[i])))
        self.audit_max = max(self.audit_max, worst)
        return worst


class _PerSliceSetState(_BaseState):
    """Cached fast path for the per-slice finite-set methods.

    Mirrors the spatial fast path but every Fourier slice k owns its own
    family, losses, selection and residual recursion; the step touches all
    slices at once through batched matmuls.  The candidate loss of member i
    in slice k is ||R[k, i]||_F^2 (no 1/l: the subsystems are independent).
    """

    per_slice_selection = True

    def __init__(self, A, B, config, x_star):
        super().__init__(A, B, config, x_star)
        sketches = config.sketches
        if sketches is None or not sketches.per_slice:
            raise ValueError(f"{self.method} needs a per-slice sketch set")
        if sketches.m != self.m or sketches.l != self.l:
            raise ValueError("sketch set dimensions do not match the system")
        if config.check_sampling:
            sketching.warn_if_not_complete(A, sketches)
        self.sketches = sketches
        self.q = sketches.q
        self.rule = _RULES[self.method]
        self.base_probs = _per_slice_probs(
            _resolve_probs(config.probabilities, A, self.Q, sketches), self.l, self.q
        )
        self.slice_rngs = [_rng(config.seed, 2, k) for k in range(self.l)]
        S = np.stack([np.stack(sketches.members[k]) for k in range(self.l)])
        S = S.astype(np.complex128)  # (l, q, m, tau)
        N = np.conj(np.swapaxes(S, -1, -2)) @ self.Ah[:, None]  # (l,q,tau,n)
        AQS = (self.Q.inv @ np.conj(np.swapaxes(self.Ah, -1, -2)))[:, None] @ S
        self.C = _batched_inv_factor(N @ AQS)  # (l,q,tau,tau)
        self.step_map = AQS @ self.C  # (l,q,n,tau)
        CH = np.conj(np.swapaxes(self.C, -1, -2))
        self.cross = np.einsum(
            "kiab,kjbc->kijac", CH @ N, self.step_map, optimize=True
        )  # (l,q,q,tau,tau)
        self.SB = np.conj(np.swapaxes(S, -1, -2)) @ self.Bh[:, None]  # (l,q,tau,p)
        self.N = N
        self.R = CH @ ((N @ self.Xh[:, None]) - self.SB)

    def losses(self):
        """(l, q) per-slice candidate losses."""
        return np.sum(np.abs(self.R) ** 2, axis=(2, 3))

    def select(self, losses):
        """Per-slice index choices; -1 marks an already-solved slice."""
        if self.rule == "fixed":
            return _draw_per_slice(self.base_probs, self.slice_rngs)
        active = losses.max(axis=1) > 0
        if self.rule == "md":
            return np.where(active, np.argmax(losses, axis=1), -1)
        if self.rule == "pr":
            return _draw_per_slice(losses, self.slice_rngs, active)
        theta = self.config.theta
        threshold = (
            theta * losses.max(axis=1)
            + (1.0 - theta) * np.sum(self.base_probs * losses, axis=1)
        )
        capped = np.where(losses >= threshold[:, None], losses, 0.0)
        hedge = np.nonzero(active & ~(capped.max(axis=1) > 0))[0]
        if hedge.size:  # float hedge; the max always qualifies
            capped[hedge, np.argmax(losses[hedge], axis=1)] = 1.0
        return _draw_per_slice(capped, self.slice_rngs, active)

    def step(self, idx):
        idx = np.asarray(idx, dtype=int)
        active = np.nonzero(idx >= 0)[0]
        if active.size:
            ks, sel = active, idx[active]
            Rsel = self.R[ks, sel]
            self.Xh[ks] -= self.step_map[ks, sel] @ Rsel
            self.R[ks] -= self.cross[ks, :, sel] @ Rsel[:, None]
        self.t += 1

    def audit(self):
        CH = np.conj(np.swapaxes(self.C, -1, -2))
        fresh = CH @ ((self.N @ self.Xh[:, None]) - self.SB)
        diff = fresh - self.R
        worst = float(np.sqrt(np.max(np.sum(np.abs(diff) ** 2, axis=(2, 3)))))
        self.audit_max = max(self.audit_max, worst)
        return worst

    def x(self):
        # the real-part strategy: per-slice sketching breaks conjugate
        # symmetry, taking the real part is the method's final answer
        return _unhat(self.Xh, force_real=True)


class _FreshGaussianState(_BaseState):
    """Fresh spatial Gaussian sketch every iteration; no caching."""

    per_slice_selection = False

    def __init__(self, A, B, config, x_star):
        super().__init__(A, B, config, x_star)
        if config.tau < 1 or config.tau > self.m:
            raise ValueError(f"tau={config.tau} out of range for m={self.m}")
        self.tau = config.tau
        self.sketch_rng = _rng(config.seed, 0)
        self.QiAH = self.Q.inv @ np.conj(np.swapaxes(self.Ah, -1, -2))
        self.last_sketch = None

    def iterate_once(self):
        S0 = self.sketch_rng.standard_normal((self.m, self.tau))
        self.last_sketch = S0
        self.apply_sketch(S0)
        return None, None, None

    def apply_sketch(self, S0):
        # only the first frontal slice is nonzero, so every Fourier slice of
        # the sketch equals S0
        N = S0.T @ self.Ah  # (l, tau, n)
        AQS = self.QiAH @ S0.astype(np.complex128)  # (l, n, tau)
        G = _batched_hpinv(N @ AQS, slice_axis=0)
        resid = (N @ self.Xh) - (S0.T @ self.Bh)
        self.Xh -= AQS @ (G @ resid)
        self.t += 1


class _StackedState(_BaseState):
    """Per-slice sketches folded back into a real sketched system.

    Each iteration draws one sketch per Fourier slice, inverse-transforms
    the sketched system, stacks its real and imaginary parts into a real
    system of doubled sketch size, and projects onto that system's solution
    set.  The stacking keeps every iterate real even though the per-slice
    sketches break conjugate symmetry.
    """

    per_slice_selection = True

    def __init__(self, A, B, config, x_star):
        super().__init__(A, B, config, x_star)
        sketches = config.sketches
        if sketches is None or not sketches.per_slice:
            raise ValueError("TSP-I needs a per-slice sketch set")
        if sketches.m != self.m or sketches.l != self.l:
            raise ValueError("sketch set dimensions do not match the system")
        self.sketches = sketches
        self.q = sketches.q
        self.base_probs = _per_slice_probs(
            _resolve_probs(config.probabilities, A, self.Q, sketches), self.l, self.q
        )
        self.slice_rngs = [_rng(config.seed, 2, k) for k in range(self.l)]

    def draw_indices(self):
        return _draw_per_slice(self.base_probs, self.slice_rngs)

    def iterate_once(self):
        idx = self.draw_indices()
        self.apply_indices(idx)
        return idx, None, None

    def apply_indices(self, idx):
        S = np.stack([self.sketches.members[k][idx[k]] for k in range(self.l)])
        SH = np.conj(np.swapaxes(S, -1, -2)).astype(np.complex128)
        Acheck = SH @ self.Ah  # (l, tau, n) sketched Fourier slices
        Bcheck = SH @ self.Bh
        Atil = np.fft.ifft(Acheck, axis=0)
        Btil = np.fft.ifft(Bcheck, axis=0)
        As = np.concatenate([Atil.real, Atil.imag], axis=1)  # real (l, 2tau, n)
        Bs = np.concatenate([Btil.real, Btil.imag], axis=1)
        Ash = np.fft.fft(As.astype(np.complex128), axis=0)
        Bsh = np.fft.fft(Bs.astype(np.complex128), axis=0)
        AshH = np.conj(np.swapaxes(Ash, -1, -2))
        QiAH = self.Q.inv @ AshH  # (l, n, 2tau)
        G = _batched_hpinv(Ash @ QiAH)
        self.Xh -= QiAH @ (G @ ((Ash @ self.Xh) - Bsh))
        self.t += 1
        imag = np.linalg.norm(np.fft.ifft(self.Xh, axis=0).imag)
        scale = max(np.linalg.norm(self.Xh) / np.sqrt(self.l), 1e-300)
        self.max_imag_residue = max(self.max_imag_residue, float(imag / scale))


class _PerSliceFreshState(_BaseState):
    """Direct per-slice updates with fixed probabilities (no caching);
    the real part of the final inverse transform is the answer."""

    per_slice_selection = True

    def __init__(self, A, B, config, x_star):
        super().__init__(A, B, config, x_star)
        sketches = config.sketches
        if sketches is None or not sketches.per_slice:
            raise ValueError("TSP-II needs a per-slice sketch set")
        self.sketches = sketches
        self.q = sketches.q
        self.base_probs = _per_slice_probs(
            _resolve_probs(config.probabilities, A, self.Q, sketches), self.l, self.q
        )
        self.slice_rngs = [_rng(config.seed, 2, k) for k in range(self.l)]
        self.QiAH = self.Q.inv @ np.conj(np.swapaxes(self.Ah, -1, -2))

    def iterate_once(self):
        idx = _draw_per_slice(self.base_probs, self.slice_rngs)
        self.apply_indices(idx)
        return idx, None, None

    def apply_indices(self, idx):
        S = np.stack([self.sketches.members[k][idx[k]] for k in range(self.l)])
        SH = np.conj(np.swapaxes(S, -1, -2)).astype(np.complex128)
        N = SH @ self.Ah
        AQS = self.QiAH @ S.astype(np.complex128)
        G = _batched_hpinv(N @ AQS)
        self.Xh -= AQS @ (G @ ((N @ self.Xh) - (SH @ self.Bh)))
        self.t += 1

    def x(self):
        return _unhat(self.Xh, force_real=True)


_STATE_CLASSES = {}
_STATE_CLASSES.update({name: _FreshGaussianState for name in SPATIAL_FRESH})
_STATE_CLASSES.update({name: _SpatialSetState for name in SPATIAL_SET})
_STATE_CLASSES.update({name: _StackedState for name in STACKED})
_STATE_CLASSES.update({name: _PerSliceFreshState for name in PER_SLICE_FRESH})
_STATE_CLASSES.update({name: _PerSliceSetState for name in PER_SLICE_SET})


def make_state(A, B, config, x_star=None):
    """Build the solver state for ``config`` without running it."""
    return _STATE_CLASSES[config.canonical_method()](A, B, config, x_star)


def sketched_loss(state, i):
    """Current sketched loss of member ``i`` (cached fast paths only).

    For per-slice states pass a ``(k, i)`` pair to address slice k's family.
    """
    losses = state.losses()
    if losses is None:
        raise ValueError("this method does not maintain cached sketched losses")
    return float(losses[i])


def sp_step(state, i):
    """Advance a cached-path state one iteration with member (or per-slice
    members) ``i``."""
    state.step(i)
    return state


def audit_residuals(state):
    """Recompute every cached sketched residual from the iterate and return
    the worst Frobenius deviation from the recursed values."""
    return state.audit()


def _variance_factor(losses):
    total = losses.sum()
    if total <= 0:
        return float("nan")
    pt = losses / total
    q = losses.size
    return float(1.0 + q * q * (np.mean(pt**2) - np.mean(pt) ** 2))


def solve(A, B, config, x_star=None):
    """Run the configured method from X = O and return (X, RunRecord).

    The stopping rule compares the relative solution error against
    ``config.tol`` when ``x_star`` is given, and the relative residual
    otherwise.  Iteration timing excludes all precomputation.
    """
    state = make_state(A, B, config, x_star)
    method = state.method
    record = RunRecord(method=method)
    cached = isinstance(state, (_SpatialSetState, _PerSliceSetState))
    # the proportional-rule variance factor is only meaningful for the
    # spatial variant (a single family shared by all slices)
    is_pr = method == "ATSP-PR"

    rows_t, rows_eps, rows_qerr, rows_lmax, rows_lsum, rows_sec = [], [], [], [], [], []
    rows_var = []
    if config.keep_iterates:
        record.iterates = []

    eps = state.epsilon()
    eps0 = max(eps, 1e-300)

    def log_row(current_eps, chosen, lmax, lsum, elapsed, var):
        rows_t.append(state.t)
        rows_eps.append(current_eps)
        rows_qerr.append(state.q_error())
        record.chosen.append(chosen)
        rows_lmax.append(lmax)
        rows_lsum.append(lsum)
        rows_sec.append(elapsed)
        rows_var.append(var)
        if config.keep_iterates:
            record.iterates.append(state.x())

    log_row(eps, None, np.nan, np.nan, 0.0, np.nan)
    converged = eps < config.tol
    start = time.perf_counter()

    while not converged and state.t < config.max_iters:
        if cached:
            losses = state.losses()
            lmax = float(losses.max())
            lsum = float(losses.sum())
            if lmax <= 0.0:
                converged = True
                break
            var = _variance_factor(np.ravel(losses)) if is_pr else np.nan
            chosen = state.select(losses)
            state.step(chosen)
            if state.per_slice_selection:
                chosen = tuple(int(c) for c in chosen)
            else:
                chosen = int(chosen)
        else:
            chosen, lmax, lsum = state.iterate_once()
            if chosen is not None:
                chosen = tuple(int(c) for c in chosen)
            lmax = np.nan if lmax is None else lmax
            lsum = np.nan if lsum is None else lsum
            var = np.nan

        if config.audit_every and cached and state.t % config.audit_every == 0:
            state.audit()

        eps = state.epsilon()
        if not np.isfinite(eps) or eps > 1e3 * eps0:
            raise DivergenceError(
                f"{method} diverged at iteration {state.t}: "
                f"error {eps:.3e} vs initial {eps0:.3e}"
            )
        if state.t % config.record_every == 0 or eps < config.tol:
            log_row(eps, chosen, lmax, lsum, time.perf_counter() - start, var)
        converged = eps < config.tol

    if rows_t[-1] != state.t:
        log_row(
            state.epsilon(), None, np.nan, np.nan, time.perf_counter() - start, np.nan
        )

    record.t = np.array(rows_t, dtype=int)
    record.epsilon = np.array(rows_eps)
    record.q_error = np.array(rows_qerr)
    record.loss_max = np.array(rows_lmax)
    record.loss_sum = np.array(rows_lsum)
    record.seconds = np.array(rows_sec)
    record.pr_variance_factor = np.array(rows_var)
    record.iterations = state.t
    record.converged = bool(converged)
    record.audit_max = state.audit_max
    record.max_imag_residue = state.max_imag_residue
    return state.x(), record


def sp_step_direct(A, B, X, S, Q=None, relcut=PINV_RELCUT):
    """One sketch-and-project step evaluated on the block-circulant matrices.

    This is the slow spatial-domain route (no depth transform anywhere); it
    exists as the independent cross-check for the Fourier fast paths.
    """
    A = np.asarray(A, dtype=np.float64)
    l = A.shape[2]
    Ab = bcirc(A)
    Sb = bcirc(np.asarray(S, dtype=np.float64))
    Xu = unfold(X)
    Bu = unfold(B)
    if Q is None:
        Qb_inv = np.eye(Ab.shape[1])
    else:
        Qbase = Q.base if isinstance(Q, WeightQ) else Q
        Qb_inv = np.linalg.inv(bcirc(Qbase))
    N = Sb.T @ Ab
    M = N @ Qb_inv @ N.T
    G = np.linalg.pinv(M, rcond=M.shape[0] * relcut)
    step = Qb_inv @ N.T @ (G @ ((N @ Xu) - Sb.T @ Bu))
    return fold(Xu - step, l)


def _bcirc_inv(M, m, n, l):
    """First block column of a block-circulant matrix, back as a tensor."""
    X = np.empty((m, n, l))
    for k in range(l):
        X[:, :, k] = M[k * m:(k + 1) * m, :n]
    return X


def row_action_step_oracle(A, B, X, i):
    """Closed-form single-horizontal-slice step computed with the
    block-circulant oracle products (the identity-weight specialization)."""
    from .t_algebra import tprod_oracle, ttranspose

    Ai = np.ascontiguousarray(A[i:i + 1])
    Bi = np.ascontiguousarray(B[i:i + 1])
    l = A.shape[2]
    gram = bcirc(tprod_oracle(Ai, ttranspose(Ai)))
    pinv_gram = _bcirc_inv(np.linalg.pinv(gram, rcond=l * PINV_RELCUT), 1, 1, l)
    resid = tprod_oracle(Ai, X) - Bi
    return X - tprod_oracle(ttranspose(Ai), tprod_oracle(pinv_gram, resid))
