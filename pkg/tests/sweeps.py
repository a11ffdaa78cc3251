"""Randomized sweep helpers shared by the unit and acceptance suites."""

import numpy as np
import numpy.testing as npt

from fusenet.tensor import LrnParams, Tensor, conv2d, lrn, maxpool2d

import oracles


def run_kernel_oracle_sweep(n_shapes: int, seed: int, atol: float = 1e-6) -> int:
    """conv2d / maxpool2d / lrn vs the naive loop oracles on random small shapes."""
    rng = np.random.default_rng(seed)
    checked = 0
    for _ in range(n_shapes):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h = int(rng.integers(4, 11))
        w = int(rng.integers(4, 11))
        x = rng.standard_normal((n, c, h, w))

        k_out = int(rng.integers(1, 5))
        kk = int(rng.integers(1, min(4, h, w) + 1))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        wt = rng.standard_normal((k_out, c, kk, kk))
        b = rng.standard_normal(k_out)
        got = conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, pad=pad)
        ref = oracles.conv2d_naive(x, wt, b, stride=stride, pad=pad)
        npt.assert_allclose(got.data, ref, atol=atol)

        pk = int(rng.integers(1, min(h, w) + 1))
        ps = int(rng.integers(1, 3))
        got = maxpool2d(Tensor(x), pk, ps)
        npt.assert_allclose(got.data, oracles.maxpool2d_naive(x, pk, ps), atol=atol)

        params = LrnParams(n=int(rng.choice([1, 3, 5])),
                           k=float(rng.uniform(0.5, 2.5)),
                           alpha=float(rng.uniform(1e-4, 1.0)),
                           beta=float(rng.uniform(0.5, 1.0)))
        got = lrn(Tensor(x), params)
        ref = oracles.lrn_naive(x, params.n, params.k, params.alpha, params.beta)
        npt.assert_allclose(got.data, ref, atol=atol)
        checked += 3
    return checked
