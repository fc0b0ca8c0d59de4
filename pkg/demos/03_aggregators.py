#!/usr/bin/env python3
"""The four intra-window aggregation layers, side by side.

Each layer maps a batch of windows (tokens x channels) to the same shape;
they differ in how tokens inside the window talk to each other. The grouped
axial linear map touches only the row and column of each output token; the
attention layer touches the whole window.
"""

import numpy as np

from winmix import Tensor, init_aggregator
from winmix.aggregators import aggregate

ws, c = 7, 12
rng = np.random.default_rng(0)
windows = Tensor(rng.standard_normal((5, ws * ws, c)), dtype=np.float64)

for kind, kwargs in [
    ("Linear", dict(gs=3)),
    ("DWLinear", dict(gs=3)),
    ("MLP", dict(gs=3, rho=4)),
    ("MHSA", dict(heads=4)),
]:
    params = init_aggregator(kind, c, ws, seed=1, dtype=np.float64, **kwargs)
    out = aggregate(kind, windows, params)
    n_params = sum(t.size for _, t in params.tensors())
    print(f"{kind:9s} out {out.shape}  params {n_params:6d}")

# --- influence pattern: perturb one token, watch which outputs move --------
print("\ninfluence of token (2, 4) inside one window:")
for kind, kwargs in [("Linear", dict(gs=3)), ("MHSA", dict(heads=4))]:
    params = init_aggregator(kind, c, ws, seed=1, dtype=np.float64, **kwargs)
    # randomize so no weight is accidentally zero
    for name, t in params.tensors():
        setattr(params, name, Tensor(rng.standard_normal(t.shape), dtype=np.float64))
    base = aggregate(kind, windows, params).numpy()
    moved = windows.numpy().copy()
    moved[0, 2 * ws + 4, :] += 1.0
    delta = np.abs(aggregate(kind, Tensor(moved, dtype=np.float64), params).numpy()
                   - base)[0].sum(axis=1).reshape(ws, ws)
    print(f"{kind}: affected tokens (X = moved)")
    for row in (delta > 1e-12):
        print("   " + "".join("X" if v else "." for v in row))
