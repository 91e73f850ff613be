"""Tubal (third-order tensor) linear algebra under the t-product.

A real tensor of shape ``(m, n, l)`` is treated as an m x n matrix whose
entries are tubes of length ``l``.  Frontal slice k is ``X[:, :, k]``.

Transform convention used throughout the package: the depth transform
``dft3`` is the *unnormalized* DFT along the third axis (``numpy.fft.fft``)
and the inverse carries the 1/l factor.  Under this scaling

    ||X||_F^2 == (1/l) * sum_k ||dft3(X)[:, :, k]||_F^2,

so every Fourier-domain norm formula in the package carries an explicit
1/l.  ``bcirc`` is block-diagonalized by the unitary depth DFT, which is
what makes the per-slice implementations below equivalent to the
block-circulant ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "unfold",
    "fold",
    "bcirc",
    "identity",
    "dft3",
    "idft3",
    "idft3_complex",
    "tprod",
    "tprod_oracle",
    "ttranspose",
    "tpinv",
    "is_t_spd",
    "t_sqrt",
    "fnorm",
    "WeightQ",
    "weighted_fnorm",
]

# Imaginary residue larger than this (relative to the real part) after an
# inverse transform of data that should be real indicates an algebra bug
# upstream; raise instead of silently truncating.
IMAG_TOL = 1e-9

# Singular values below max(m, n) * sigma_max * PINV_RELCUT are treated as
# zero by every pseudoinverse in the package.
PINV_RELCUT = 1e-12


def _as_tubal(X, name="tensor"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"{name} must be a third-order tensor, got ndim={X.ndim}")
    return X


def unfold(X):
    """Stack the frontal slices of ``X`` vertically into an (m*l, n) matrix."""
    X = _as_tubal(X)
    m, n, l = X.shape
    return np.moveaxis(X, 2, 0).reshape(m * l, n)


def fold(M, depth):
    """Inverse of :func:`unfold`; ``depth`` is the number of frontal slices."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] % depth != 0:
        raise ValueError(f"cannot fold shape {M.shape} into {depth} frontal slices")
    m = M.shape[0] // depth
    return np.moveaxis(M.reshape(depth, m, M.shape[1]), 0, 2)


def bcirc(X):
    """Block-circulant matrix of ``X``: block (r, c) is frontal slice (r-c) mod l."""
    X = _as_tubal(X)
    m, n, l = X.shape
    out = np.empty((m * l, n * l))
    for r in range(l):
        for c in range(l):
            out[r * m:(r + 1) * m, c * n:(c + 1) * n] = X[:, :, (r - c) % l]
    return out


def identity(n, l):
    """Identity tubal matrix: slice 0 is I_n, the other slices are zero."""
    X = np.zeros((n, n, l))
    X[:, :, 0] = np.eye(n)
    return X


def dft3(X):
    """Unnormalized DFT along the depth axis; returns complex (m, n, l)."""
    return np.fft.fft(np.asarray(X, dtype=np.complex128), axis=2)


def idft3(F, imag_tol=IMAG_TOL):
    """Inverse depth DFT of slices that should describe a real tensor.

    Raises ``ValueError`` if the imaginary residue exceeds ``imag_tol``
    relative to the real part, since that signals broken conjugate
    symmetry rather than rounding noise.
    """
    Y = np.fft.ifft(np.asarray(F, dtype=np.complex128), axis=2)
    imag = np.linalg.norm(Y.imag)
    real = np.linalg.norm(Y.real)
    if imag > imag_tol * real + 1e-300:
        raise ValueError(
            f"inverse transform is not real: |imag|={imag:.3e}, |real|={real:.3e}"
        )
    return np.ascontiguousarray(Y.real)


def idft3_complex(F):
    """Inverse depth DFT without any realness check (complex result)."""
    return np.fft.ifft(np.asarray(F, dtype=np.complex128), axis=2)


def _slice_matmul(Fx, Fy):
    # per-frontal-slice products of two complex (.., .., l) slice stacks
    return np.moveaxis(np.moveaxis(Fx, 2, 0) @ np.moveaxis(Fy, 2, 0), 0, 2)


def tprod(X, Y):
    """t-product of X (m, n, l) and Y (n, p, l) via per-slice Fourier products."""
    X, Y = _as_tubal(X, "X"), _as_tubal(Y, "Y")
    if X.shape[1] != Y.shape[0] or X.shape[2] != Y.shape[2]:
        raise ValueError(f"t-product shape mismatch: {X.shape} * {Y.shape}")
    return idft3(_slice_matmul(dft3(X), dft3(Y)))


def tprod_oracle(X, Y):
    """t-product computed literally as fold(bcirc(X) @ unfold(Y)).

    Slower than :func:`tprod` but independent of the transform path; used
    as the reference for every Fourier-domain operation.
    """
    X, Y = _as_tubal(X, "X"), _as_tubal(Y, "Y")
    if X.shape[1] != Y.shape[0] or X.shape[2] != Y.shape[2]:
        raise ValueError(f"t-product shape mismatch: {X.shape} * {Y.shape}")
    return fold(bcirc(X) @ unfold(Y), X.shape[2])


def ttranspose(X):
    """Tubal transpose: transpose every slice and reverse slices 2..l."""
    X = _as_tubal(X)
    m, n, l = X.shape
    out = np.empty((n, m, l))
    out[:, :, 0] = X[:, :, 0].T
    for k in range(1, l):
        out[:, :, k] = X[:, :, l - k].T
    return out


def tpinv(X, relcut=PINV_RELCUT):
    """Moore-Penrose inverse: per-frontal-slice pinv in the Fourier domain.

    The rank cutoff is relative to the largest singular value across all
    slices (the block-circulant matrix's scale), so a slice that vanishes up
    to rounding is treated as zero instead of having its noise inverted.
    """
    X = _as_tubal(X)
    m, n, l = X.shape
    F = np.moveaxis(dft3(X), 2, 0)
    u, s, vh = np.linalg.svd(F, full_matrices=False)
    cut = max(m, n) * relcut * (s.max() if s.size else 0.0)
    sinv = np.where(s > cut, 1.0 / np.where(s > cut, s, 1.0), 0.0)
    out = np.conj(np.swapaxes(vh, -1, -2)) @ (
        sinv[..., None] * np.conj(np.swapaxes(u, -1, -2))
    )
    return idft3(np.moveaxis(out, 0, 2))


def is_t_spd(X, tol=1e-10):
    """True iff every Fourier slice is Hermitian (to tol) with lambda_min > tol."""
    X = _as_tubal(X)
    if X.shape[0] != X.shape[1]:
        raise ValueError(f"square frontal slices required, got shape {X.shape}")
    F = dft3(X)
    for k in range(F.shape[2]):
        M = F[:, :, k]
        if np.linalg.norm(M - M.conj().T) > tol * max(1.0, np.linalg.norm(M)):
            return False
        lam = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
        if lam[0] <= tol:
            return False
    return True


def t_sqrt(X, tol=1e-10):
    """Square root R of a T-SPD tensor, tprod(R, R) == X."""
    X = _as_tubal(X)
    if not is_t_spd(X, tol=tol):
        raise ValueError("t_sqrt requires a T-symmetric T-positive definite input")
    F = dft3(X)
    out = np.empty_like(F)
    for k in range(F.shape[2]):
        lam, U = np.linalg.eigh(0.5 * (F[:, :, k] + F[:, :, k].conj().T))
        out[:, :, k] = (U * np.sqrt(np.clip(lam, 0.0, None))) @ U.conj().T
    return idft3(out)


def fnorm(X):
    return float(np.linalg.norm(X))


def _hermitian_powers(M, powers, pd_floor=0.0):
    """Eigendecomposition-based matrix powers of a Hermitian matrix."""
    lam, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    if pd_floor and lam[0] <= pd_floor:
        raise ValueError(f"matrix is not positive definite: lambda_min={lam[0]:.3e}")
    return tuple((U * lam ** p) @ U.conj().T for p in powers)


@dataclass(frozen=True)
class WeightQ:
    """T-SPD weight with cached per-slice functions of its Fourier slices.

    The caches hold, for every frontal slice k of the depth transform,
    Q_k^{-1}, Q_k^{-1/2} and Q_k^{1/2} in slices-first layout (l, n, n);
    they are what the solvers and norms consume, so the factorization
    happens once per weight rather than once per iteration.
    """

    base: np.ndarray          # (n, n, l) real
    hat: np.ndarray           # (l, n, n) complex
    inv: np.ndarray           # (l, n, n) per-slice inverse
    inv_sqrt: np.ndarray      # (l, n, n) Hermitian sqrt of the inverse
    sqrt: np.ndarray          # (l, n, n) Hermitian sqrt

    @property
    def n(self):
        return self.base.shape[0]

    @property
    def l(self):
        return self.base.shape[2]

    @property
    def is_identity(self):
        return bool(np.array_equal(self.base, identity(self.n, self.l)))

    @classmethod
    def from_tensor(cls, Q, tol=1e-10):
        Q = _as_tubal(Q, "Q")
        if not is_t_spd(Q, tol=tol):
            raise ValueError("weight must be T-symmetric T-positive definite")
        hat = np.moveaxis(dft3(Q), 2, 0)
        inv = np.empty_like(hat)
        inv_sqrt = np.empty_like(hat)
        sqrt = np.empty_like(hat)
        for k in range(hat.shape[0]):
            inv[k], inv_sqrt[k], sqrt[k] = _hermitian_powers(
                hat[k], (-1.0, -0.5, 0.5), pd_floor=tol
            )
        return cls(Q, hat, inv, inv_sqrt, sqrt)

    @classmethod
    def identity(cls, n, l):
        eye = np.broadcast_to(np.eye(n, dtype=np.complex128), (l, n, n)).copy()
        return cls(identity(n, l), eye, eye.copy(), eye.copy(), eye.copy())

    def inv_sqrt_tensor(self):
        """Q^{-1/2} as a real tensor (n, n, l)."""
        return idft3(np.moveaxis(self.inv_sqrt, 0, 2))

    def sqrt_tensor(self):
        """Q^{1/2} as a real tensor (n, n, l)."""
        return idft3(np.moveaxis(self.sqrt, 0, 2))


def weighted_fnorm(M, Q):
    """Weighted Frobenius norm ||Q^{1/2} * M||_F, evaluated per Fourier slice."""
    M = _as_tubal(M, "M")
    if not isinstance(Q, WeightQ):
        Q = WeightQ.from_tensor(Q)
    if M.shape[0] != Q.n or M.shape[2] != Q.l:
        raise ValueError(f"weight of size ({Q.n}, {Q.l}) cannot norm shape {M.shape}")
    Mh = np.moveaxis(dft3(M), 2, 0)
    total = sum(
        np.linalg.norm(Q.sqrt[k] @ Mh[k]) ** 2 for k in range(Q.l)
    )
    return float(np.sqrt(total / Q.l))
