#!/usr/bin/env python3
"""Black-box model extraction against a deployed classifier.

The attacker sees only a query interface (images in, labels out), spends a
fixed query budget, and trains a 3-conv replica. Counters prove the
black-box contract: zero gradient queries, forward queries within budget.
"""

import numpy as np

import robustlab as rl
from robustlab.pipeline import ExtractionConfig, QueryOracle

data = rl.synth_generate(800, image_size=32, seed=13)
train, _, test = rl.split_dataset(data, rl.SplitSpec(seed=13))

victim = rl.ExtractionCnn(3, 2, seed=1)
rl.train_clean(victim, train, rl.TrainConfig(epochs=14, batch_size=32,
                                             learning_rate=1e-3, seed=2))
print("victim clean accuracy:", rl.accuracy(victim, test))

# the oracle is all the attacker ever touches
oracle = QueryOracle(victim, output_mode="hard")
sample = oracle.query(test.images[:5])
print("oracle responses to 5 queries:", sample, "| forward queries:", oracle.forward_queries)

cfg = ExtractionConfig(query_budget=400, epochs=10, batch_size=32,
                       learning_rate=1e-3, seed=3)
result = rl.extraction_attack(victim, cfg, train.images, test)

print(f"replica fidelity (agreement with victim): {result.fidelity:.3f}")
print(f"replica clean accuracy vs true labels:    {result.replica_clean_accuracy:.3f}")
print(f"forward queries used: {result.forward_queries} / {cfg.query_budget}")
print(f"gradient queries:     {result.gradient_queries} (black box held)")

# soft-probability responses make a stronger attacker
soft_cfg = ExtractionConfig(query_budget=400, epochs=10, batch_size=32,
                            learning_rate=1e-3, seed=3, victim_output_mode="soft")
soft_result = rl.extraction_attack(victim, soft_cfg, train.images, test)
print(f"soft-label replica fidelity: {soft_result.fidelity:.3f}")
