#!/usr/bin/env python3
"""The toy vision transformer and the CNN heads that tap its blocks.

Shows the per-block patch tokens the ensemble feeds on, plus the analytic
parameter and FLOP counters at both toy and full scale.
"""

import numpy as np

import robustlab as rl

rng = np.random.default_rng(7)

vit = rl.ViTModel(rl.TOY_VIT, seed=1)
images = rng.uniform(0, 1, size=(2, 3, 32, 32)).astype(np.float32)
patch_tokens, class_token, logits = vit.forward(images)

print(f"blocks: {len(patch_tokens)}; tokens per block: {patch_tokens[0].shape}")
print(f"final class token: {class_token.shape}; logits: {logits.shape}")

# A two-conv head turns one block's tokens (reshaped to an 8x8 grid of
# 64-channel 'pixels') into its own class vote.
head = rl.CnnHead(embed_dim=64, num_classes=2, seed=2)
print("head logits on block 0 tokens:", head.forward(patch_tokens[0]).data[0])

# Analytic accounting, no forward pass required.
print(f"toy ViT params:      {rl.count_params(rl.TOY_VIT):,}")
print(f"toy ViT flops/image: {rl.estimate_flops(rl.TOY_VIT):,}")
print(f"full-scale params:   {rl.count_params(rl.VIT_B16) / 1e6:.2f}M")
print(f"full-scale flops:    {rl.estimate_flops(rl.VIT_B16) / 1e9:.2f}G")

# Model sizes on disk come from the checkpoint serialization.
ens = rl.EnsembleModel(vit, [rl.CnnHead(64, 2, seed=10 + i) for i in range(3)])
student = rl.DistilledCnn(3, 2, seed=3)
w_ens = len(rl.model_to_bytes(ens))
w_student = len(rl.model_to_bytes(student))
print(f"ensemble weight: {w_ens:,} bytes; distilled student: {w_student:,} bytes "
      f"({w_ens / w_student:.1f}x smaller)")
