#!/usr/bin/env python3
"""Closed-form cost accounting for the named presets.

Parameter counts come straight from the config (no model is built); FLOPs
are multiply-accumulates at batch 1 and a given input resolution. The
instrumented oracle at the end re-derives one small count from an actual
forward pass, multiply by multiply.
"""

import dataclasses

from winmix import count_flops, count_params, flops_oracle, preset
from winmix.model import PRESETS

print(f"{'preset':34s} {'params':>10s} {'flops@224':>12s}")
for name in sorted(PRESETS):
    cfg = PRESETS[name]
    params = count_params(cfg).total_params
    flops = count_flops(cfg, 224).total_flops
    print(f"{name:34s} {params / 1e6:9.2f}M {flops / 1e9:10.2f}G")

# group-count sweep on the width-96 configuration
print("\nwidth-96 {2,2,6,2} group sweep:")
base = preset("swin-linmapper-tiny-baseline")
for groups in (96, 48, 32, 16, 8):
    for agg in ("Linear", "DWLinear"):
        cfg = dataclasses.replace(base, groups=groups, aggregator=agg)
        print(f"  groups={groups:3d} {agg:9s} {count_params(cfg).total_params / 1e6:6.2f}M"
              f" {count_flops(cfg, 224).total_flops / 1e9:6.2f}G")

# per-layer breakdown for a small config
desk = preset("toy-desk")
print("\nper-layer table for toy-desk at 32x32:")
print(count_flops(desk, 32).to_table())

oracle = flops_oracle(desk, 32)
closed = count_flops(desk, 32).total_flops
print(f"\ninstrumented forward counted {oracle} MACs; closed form {closed};"
      f" equal: {oracle == closed}")
