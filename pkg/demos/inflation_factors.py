r"""
How many members are enough?
============================

The ensemble variance of a functional is a chi-squared quantity, so the true
posterior standard deviation lies in ``[sigma_hat * L, sigma_hat * R]`` with
probability ``1 - alpha``. Both factors approach one slowly.
"""

from fluxmc import inflation_deflation_factors

print(f"{'M':>9} {'L':>8} {'R':>8}")
for M in (10, 30, 60, 100, 1000, 10_000, 100_000, 1_000_000):
    L, R = inflation_deflation_factors(M, alpha=0.05)
    print(f"{M:>9} {L:8.4f} {R:8.4f}")

###############################################################################
# With 60 members the upper bracket is about 22% wider than the estimate and
# the lower one about 15% narrower. Halving the bracket width takes roughly
# four times as many members.
