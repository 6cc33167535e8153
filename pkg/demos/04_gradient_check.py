"""
Gradient checking the whole objective
=====================================

Every gradient in the package comes from a small reverse-mode tape.  The
check below compares those analytic gradients against central finite
differences of the full loss - ranking terms, intent-independence penalty,
weight decay - on a hand-sized model chosen so every code path carries
gradient: both propagation sides, the intent attention, and the
distance-correlation penalty.
"""

from urbanrec.training import run_gradcheck

###############################################################################
# The check perturbs every coordinate of every parameter tensor twice, so
# it is exact but only affordable on the tiny instance.

report = run_gradcheck(step=1e-4, threshold=1e-4)
for line in report.lines():
    print(line)

###############################################################################
# A check that cannot fail proves nothing, so corrupt one tensor's analytic
# gradient and watch the comparison catch it and name the tensor.

print()
bad = run_gradcheck(step=1e-4, threshold=1e-4, corrupt="R_f")
print(bad.lines()[-1])
assert not bad.passed
