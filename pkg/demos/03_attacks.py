#!/usr/bin/env python3
"""FGSM, PGD and AutoPGD against a small CNN, with the invariants on display.

Every attack stays inside the L-infinity budget and the [0, 1] pixel box, is
deterministic per seed, and PGD with one full-size step reproduces FGSM
exactly.
"""

import numpy as np

import robustlab as rl
from robustlab.attacks import AttackSpec, autopgd, fgsm, pgd

rng = np.random.default_rng(3)

data = rl.synth_generate(800, image_size=32, seed=5)
train, _, test = rl.split_dataset(data, rl.SplitSpec(seed=5))

model = rl.ExtractionCnn(3, 2, seed=1)
rl.train_clean(model, train, rl.TrainConfig(epochs=14, batch_size=32,
                                            learning_rate=1e-3, seed=2))
print("clean accuracy:", rl.accuracy(model, test))

x, y = test.images[:40], test.labels[:40]
eps = 0.03

adv_f = fgsm(model, x, y, epsilon=eps)
print(f"fgsm   eps={eps}: success rate {adv_f.success.mean():.2f}, "
      f"max|delta|={np.abs(adv_f.x_adv - x).max():.4f}")

spec = AttackSpec(kind="pgd", epsilon=eps, steps=10, seed=4)
adv_p = pgd(model, x, y, spec)
print(f"pgd    eps={eps}: success rate {adv_p.success.mean():.2f}")

aspec = AttackSpec(kind="autopgd", epsilon=eps, steps=10, seed=4)
adv_a = autopgd(model, x, y, aspec)
print(f"autopgd eps={eps}: success rate {adv_a.success.mean():.2f}")

# one-step PGD at step_size = eps with no random start IS fgsm, bit for bit
one = AttackSpec(kind="pgd", epsilon=eps, steps=1, step_size=eps,
                 random_start=False, seed=0)
identical = pgd(model, x, y, one).x_adv.tobytes() == adv_f.x_adv.tobytes()
print("pgd(1 step, full size) == fgsm:", identical)

# determinism: the same seed regenerates the same batch
again = pgd(model, x, y, spec)
print("same seed, same adversarial batch:", again.x_adv.tobytes() == adv_p.x_adv.tobytes())
