#!/usr/bin/env python3
"""Window partition, cyclic shift, spatial shuffle, and messenger routing.

All of these are pure permutations of the token grid: invertible, value
preserving, parameter-free. They are shown here on a small labeled grid so
the index motion is visible.
"""

import numpy as np

from winmix import (
    FeatureMap,
    MessengerState,
    Tensor,
    cyclic_shift,
    messenger_attach,
    messenger_detach,
    messenger_exchange,
    spatial_shuffle,
    window_partition,
    window_reverse,
)

def show(name, fm):
    print(f"{name}:")
    print(fm.values.numpy()[0, :, :, 0].astype(int))

grid = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
x = FeatureMap(Tensor(grid))
show("original 4x4 grid", x)

# --- partition into 2x2 windows --------------------------------------------
wset = window_partition(x, 2)
print("windows (row-major, tokens row-major):")
print(wset.windows.numpy()[:, :, 0].astype(int))
assert (window_reverse(wset).values.numpy() == grid).all()

# --- cyclic shift: the token at (i, j) moves to (i+dy, j+dx) mod size ------
show("shift by (1, 1)", cyclic_shift(x, 1, 1))

# --- spatial shuffle: each new window collects one token per old window ----
shuffled = spatial_shuffle(x, 2)
show("spatial shuffle (ws=2)", shuffled)
print("first shuffled window:",
      window_partition(shuffled, 2).windows.numpy()[0, :, 0].astype(int))

# --- messenger tokens: attach, exchange across a region, detach ------------
c = 4
tokens = np.zeros((4, 1, c))
for win in range(4):
    tokens[win] = 10 + win            # tag each window's messenger
state = MessengerState(tokens=Tensor(tokens), batch=1, win_h=2, win_w=2, region=2)

x8 = FeatureMap(Tensor(np.zeros((1, 4, 4, c))))
wset8 = window_partition(x8, 2)
bundle = messenger_attach(wset8, state)
print("attached bundle shape (ws*ws + m tokens):", bundle.shape)
toks, msgs = messenger_detach(bundle, 2)
assert (msgs.numpy() == tokens).all()

after = messenger_exchange(state)
print("window 0 messenger after exchange (one quarter-slice per window):")
print(after.tokens.numpy()[0, 0])
assert (messenger_exchange(after).tokens.numpy() == tokens).all()  # involution
print("exchange twice restores the original state")
