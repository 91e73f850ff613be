"""Shared oracles for the test suite.

Everything here goes through the block-circulant matrices or direct
summation, never through the package's Fourier fast paths, so agreement
between the two routes is meaningful.
"""

import numpy as np

from tubalsketch.t_algebra import bcirc, identity, tprod_oracle, ttranspose


def rand_tubal(rng, m, n, l):
    return rng.standard_normal((m, n, l))


def naive_dft3(X):
    """O(l^2) direct DFT summation along the depth axis."""
    m, n, l = X.shape
    out = np.zeros((m, n, l), dtype=np.complex128)
    for k in range(l):
        for j in range(l):
            out[:, :, k] += X[:, :, j] * np.exp(-2j * np.pi * j * k / l)
    return out


def naive_idft3(F):
    """O(l^2) direct inverse DFT along the depth axis (complex result)."""
    m, n, l = F.shape
    out = np.zeros((m, n, l), dtype=np.complex128)
    for k in range(l):
        for j in range(l):
            out[:, :, k] += F[:, :, j] * np.exp(2j * np.pi * j * k / l)
    return out / l


def bcirc_block_column(M, m, n, l):
    """First block column of an (m*l, n*l) block-circulant matrix as a tensor."""
    X = np.empty((m, n, l))
    for k in range(l):
        X[:, :, k] = M[k * m:(k + 1) * m, :n]
    return X


def tpinv_via_bcirc(X):
    """Moore-Penrose inverse through the block-circulant route."""
    m, n, l = X.shape
    P = np.linalg.pinv(bcirc(X))
    return bcirc_block_column(P, n, m, l)


def spd_weight_tensor(rng, n, l, shift=0.5):
    """A generic T-SPD tensor: a Gram tensor plus a multiple of the identity."""
    F = rand_tubal(rng, n, n, l)
    return tprod_oracle(ttranspose(F), F) + shift * identity(n, l)


def circ_conv_tubes(x, y):
    """Circular convolution of two length-l tubes by direct summation."""
    l = x.size
    out = np.zeros(l)
    for k in range(l):
        for j in range(l):
            out[k] += x[j] * y[(k - j) % l]
    return out
