"""Finite-difference gradient oracle used across the test suite.

Central differences at h=1e-5 in float64; the oracle only ever calls the
forward path, so it stays independent of every backward rule it checks.
"""

import numpy as np

H_STEP = 1e-5
REL_FLOOR = 1e-6


def rel_err(a: float, b: float, floor: float = REL_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def max_grad_error(f, leaves, rng, samples_per_tensor=6, h=H_STEP):
    """Worst relative error between analytic grads and central differences.

    ``f`` rebuilds the graph from the leaf tensors and returns the scalar
    loss tensor; ``leaves`` are the tensors whose gradients are checked.
    Coordinates are sampled at random per leaf.
    """
    for t in leaves:
        t.grad = None
    f().backward()
    analytic = [np.array(t.grad) for t in leaves]
    worst = 0.0
    for t, an in zip(leaves, analytic):
        n = t.data.size
        for i in rng.choice(n, size=min(samples_per_tensor, n), replace=False):
            pos = np.unravel_index(i, t.data.shape)
            orig = t.data[pos]
            t.data[pos] = orig + h
            up = f().item()
            t.data[pos] = orig - h
            dn = f().item()
            t.data[pos] = orig
            fd = (up - dn) / (2.0 * h)
            worst = max(worst, rel_err(float(an[pos]), fd))
    for t in leaves:
        t.grad = None
    return worst
