#!/usr/bin/env python3
"""End-to-end defense pipeline at miniature scale.

Clean-train a toy transformer, attach CNN heads on its frozen features,
adversarially fine-tune the heads, distill the defended ensemble into a
compact student on temperature-softened predictions, and compare
robustness on one shared attack set crafted against the undefended
transformer. Sizes are trimmed for a few-minute run; the acceptance suite
runs the full-size version.
"""

import copy

import numpy as np

import robustlab as rl
from robustlab.attacks import AttackSpec, run_attack

data = rl.synth_generate(1000, image_size=32, seed=9)
train, val, test = rl.split_dataset(data, rl.SplitSpec(seed=9))
fgsm03 = [AttackSpec(kind="fgsm", epsilon=0.03)]

print("== clean-train the backbone ==")
vit = rl.ViTModel(rl.TOY_VIT, seed=1)
rl.train_clean(vit, train, rl.TrainConfig(epochs=20, batch_size=32,
                                          learning_rate=5e-4, seed=2), val=val)
r_vit = rl.evaluate(vit, test, fgsm03, tag="vit", seed=3)
print(f"vit: clean={r_vit.clean_accuracy:.2f} fgsm@0.03={r_vit.robust['fgsm@0.03']:.2f}")

print("== attach heads to the frozen backbone, train them clean ==")
ensemble = rl.EnsembleModel(copy.deepcopy(vit),
                            [rl.CnnHead(64, 2, seed=30 + i) for i in range(3)])
rl.train_clean(ensemble, train, rl.TrainConfig(epochs=3, batch_size=32,
                                               learning_rate=1e-3, seed=4))
r_ens = rl.evaluate(ensemble, test, fgsm03, tag="ensemble", seed=3, attack_on=vit)
print(f"ensemble: clean={r_ens.clean_accuracy:.2f} fgsm@0.03={r_ens.robust['fgsm@0.03']:.2f}")

print("== adversarial fine-tuning (mixed clean/adversarial loss) ==")
defended = copy.deepcopy(ensemble)
rl.adversarial_train(defended, train, rl.TrainConfig(
    epochs=3, batch_size=32, learning_rate=1e-3, lam=0.5, seed=5,
    attack_spec=AttackSpec(kind="fgsm", epsilon=0.03)))
r_adv = rl.evaluate(defended, test, fgsm03, tag="ensemble_adv", seed=3, attack_on=vit)
print(f"defended: clean={r_adv.clean_accuracy:.2f} fgsm@0.03={r_adv.robust['fgsm@0.03']:.2f}")

print("== distill the defended ensemble into a 5-conv student ==")
adv_batches = [run_attack(defended, train.images[s : s + 128],
                          train.labels[s : s + 128],
                          AttackSpec(kind="fgsm", epsilon=0.03, seed=100 + i),
                          with_success=False)
               for i, s in enumerate(range(0, len(train), 128))]
soft = rl.build_distill_dataset(train, adv_batches, defended, temperature=5.0)
student = rl.DistilledCnn(3, 2, seed=6)
rl.distill_train(student, soft, rl.DistillConfig(temperature=5.0, epochs=10,
                                                 batch_size=64, seed=7))
r_stu = rl.evaluate(student, test, fgsm03, tag="student", seed=3, attack_on=vit)
print(f"student: clean={r_stu.clean_accuracy:.2f} fgsm@0.03={r_stu.robust['fgsm@0.03']:.2f}")

print("\nmodel          clean  robust(fgsm@0.03, attacks crafted on the bare vit)")
for r in (r_vit, r_ens, r_adv, r_stu):
    print(f"{r.model_tag:<14} {r.clean_accuracy:.2f}   {r.robust['fgsm@0.03']:.2f}")
