"""Fixed vs adaptive sampling on one synthetic system.

Every method repeatedly projects the iterate onto the solution set of a
sketched subsystem.  The adaptive rules look at the current sketched
losses before choosing, and the loss of the chosen sketch is exactly the
squared error removed by that step, which the first section verifies on
live iterations.
"""

import numpy as np

from tubalsketch import (
    SolverConfig,
    make_slice_sketches,
    make_state,
    solve,
    sp_step,
)
from tubalsketch.harness import ProblemSpec, gen_gaussian

spec = ProblemSpec(m=50, n=20, p=5, l=5, seed=1)
A, x_star, B = gen_gaussian(spec)
sketches = make_slice_sketches(spec.m, spec.l)

print("== the decrease identity, live ==")
state = make_state(
    A, B, SolverConfig(method="ATSP-MD", sketches=sketches, seed=2),
    x_star=x_star,
)
for t in range(5):
    losses = state.losses()
    i = int(np.argmax(losses))
    before = state.q_error()
    sp_step(state, i)
    after = state.q_error()
    print(f"  step {t}: picked sketch {i:2d}, "
          f"error^2 {before:9.3f} -> {after:9.3f}, "
          f"drop == loss up to {abs(before - after - losses[i]):.2e}")

print("\n== iterations to reach 1e-8 ==")
for method in ("NTSP", "ATSP-PR", "ATSP-CS", "ATSP-MD"):
    cfg = SolverConfig(method=method, sketches=sketches, tol=1e-8, seed=3,
                       record_every=200)
    X, record = solve(A, B, cfg, x_star=x_star)
    print(f"  {method:8s}: {record.iterations:6d} iterations "
          f"(final error {record.epsilon[-1]:.2e})")

print("\nGreedy selection wins on iterations; the fixed rule costs the "
      "least per iteration.  The trace CSVs written by the benchmark "
      "harness make the same comparison over many trials.")
