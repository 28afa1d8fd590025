#!/usr/bin/env python3
"""Self-ensembling: CNN heads on the first blocks vote with the final head.

Demonstrates majority voting, mean-probability fusion, and random
sub-ensembles that keep only c of the m intermediate heads.
"""

import numpy as np

import robustlab as rl
from robustlab.ensemble import majority_vote, probability_fusion

rng = np.random.default_rng(11)

backbone = rl.ViTModel(rl.TOY_VIT, seed=1)
heads = [rl.CnnHead(64, 2, seed=20 + i) for i in range(3)]
ensemble = rl.EnsembleModel(backbone, heads, fusion="majority")

images = rng.uniform(0, 1, size=(4, 3, 32, 32)).astype(np.float32)
pred, fused, voters = ensemble.predict(images)

print("per-voter classes (rows = heads 1..3 then the backbone head):")
print(voters.classes)
print("fused prediction:", pred)
print("fused probability rows (sum to 1):", fused.round(3))

# the vote rule itself: ties defer to the final head, then the lowest class
print("majority([0,1,1,0], fallback=0) ->", majority_vote([0, 1, 1, 0], fallback=0))
print("majority([0,1,1,0], fallback=1) ->", majority_vote([0, 1, 1, 0], fallback=1))

# mean fusion of explicit probability rows
cls, row = probability_fusion(np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]], np.float32))
print("mean fusion of three rows ->", cls, row.round(3))

# random sub-ensembles: choose c of the m heads, deterministically per seed
for seed in (0, 1, 2):
    sub = rl.random_subensemble(ensemble, c=2, seed=seed)
    print(f"sub-ensemble seed={seed}: heads on blocks {sub.block_indices}")
