"""Tour of the tubal-matrix algebra layer.

A third-order tensor of shape (m, n, l) acts like an m x n matrix whose
entries are length-l tubes.  Multiplication circularly convolves tubes,
which is why the block-circulant matrix and the depth DFT both show up
everywhere below.
"""

import numpy as np

from tubalsketch import (
    WeightQ,
    bcirc,
    fnorm,
    identity,
    is_t_spd,
    t_sqrt,
    tpinv,
    tprod,
    tprod_oracle,
    ttranspose,
    unfold,
    weighted_fnorm,
)

rng = np.random.default_rng(0)

print("== unfold / bcirc ==")
X = rng.standard_normal((3, 2, 4))
print(f"X has shape {X.shape}; unfold stacks the 4 frontal slices: "
      f"{unfold(X).shape}")
print(f"bcirc(X) is block-circulant: {bcirc(X).shape}")
print(f"bcirc of the identity tubal matrix is the identity: "
      f"{np.array_equal(bcirc(identity(3, 4)), np.eye(12))}")

print("\n== the product, two ways ==")
Y = rng.standard_normal((2, 5, 4))
fast = tprod(X, Y)            # per-slice products in the Fourier domain
slow = tprod_oracle(X, Y)     # fold(bcirc(X) @ unfold(Y)), the definition
print(f"Fourier route vs block-circulant route: "
      f"relative gap {fnorm(fast - slow) / fnorm(slow):.2e}")
print(f"transpose reverses products: "
      f"{fnorm(ttranspose(fast) - tprod(ttranspose(Y), ttranspose(X))):.2e}")

print("\n== pseudoinverse ==")
P = tpinv(X)
axiom = fnorm(tprod(tprod(X, P), X) - X) / fnorm(X)
print(f"X * pinv(X) * X == X up to {axiom:.2e}")

print("\n== weights ==")
F = rng.standard_normal((2, 2, 4))
Qt = tprod(ttranspose(F), F) + 0.5 * identity(2, 4)
print(f"Gram + shift is positive definite in the tubal sense: {is_t_spd(Qt)}")
R = t_sqrt(Qt)
print(f"square root squares back: {fnorm(tprod(R, R) - Qt) / fnorm(Qt):.2e}")
Q = WeightQ.from_tensor(Qt)
M = rng.standard_normal((2, 3, 4))
print(f"weighted norm ||M||_F(Q) = {weighted_fnorm(M, Q):.4f} "
      f"(plain ||M||_F = {fnorm(M):.4f})")
