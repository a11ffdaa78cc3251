"""Central finite-difference gradient checking.

The numeric side perturbs raw numpy buffers in place and re-runs a forward
closure, so it never touches the autograd tape it is validating.
"""

import numpy as np

REL_STEP = 1e-5
RTOL = 1e-3


def numeric_grad(f, arr, flat_indices, rel_step=REL_STEP):
    """d f / d arr[i] by central differences, one flat index at a time."""
    flat = arr.reshape(-1)
    out = {}
    for i in flat_indices:
        x0 = flat[i]
        h = rel_step * (abs(x0) + 1.0)
        flat[i] = x0 + h
        fp = f()
        flat[i] = x0 - h
        fm = f()
        flat[i] = x0
        out[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def assert_close_grads(analytic_flat, numeric, rtol=RTOL):
    worst = 0.0
    for i, gn in numeric.items():
        err = relative_error(float(analytic_flat[i]), gn)
        worst = max(worst, err)
        assert err <= rtol, (
            f"gradient mismatch at flat index {i}: "
            f"analytic={float(analytic_flat[i]):.8g} numeric={gn:.8g} rel={err:.3g}"
        )
    return worst


def sample_indices(rng, size, count):
    count = min(count, size)
    return rng.choice(size, size=count, replace=False)
