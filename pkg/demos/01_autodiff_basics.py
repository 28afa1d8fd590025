#!/usr/bin/env python3
"""Tour of the tensor engine: forward math, gradients, and verification.

Every model, loss, and attack in this package runs on the little reverse-mode
engine shown here. Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

import robustlab as rl
from robustlab import tensor as T

# Tensors wrap float32 arrays. Asking for gradients turns a tensor into a
# tracked leaf; arithmetic on tracked tensors records the graph.
x = rl.Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = (x * x).sum()
loss.backward()
print("d/dx sum(x^2) at [1,2,3]  ->", x.grad)          # analytic: 2x

# Gradients accumulate until cleared, matching minibatch training loops.
loss2 = (x * 3.0).sum()
loss2.backward()
print("after a second backward   ->", x.grad)           # 2x + 3

# grad_check compares the recorded adjoints against central differences.
rng = np.random.default_rng(0)
w = rl.Tensor(rng.normal(size=(3, 2)).astype(np.float32))
err = rl.grad_check(lambda v: T.matmul(T.reshape(v, (1, 3)), w).sum(),
                    rl.Tensor(rng.normal(size=3).astype(np.float32)), h=0.25)
print("matmul finite-difference error:", err)

# The temperature softmax is the backbone of distillation: higher T gives
# softer rows, and T = 1 recovers the ordinary softmax.
logits = rl.Tensor([[2.0, 0.0]])
for temp in (1.0, 5.0, 20.0):
    print(f"softmax_t(T={temp:>4})", rl.softmax_t(logits, temp).data[0])

# Cross-entropy and the distillation loss are fused, numerically stable ops.
ce = rl.cross_entropy(rl.Tensor([[4.0, -4.0]]), np.array([0]))
print("confident correct cross-entropy:", float(ce.data))

# Tensors serialize to a tiny tagged binary format used by checkpoints.
blob = rl.tensor_to_bytes(np.arange(6, dtype=np.float32).reshape(2, 3))
back, _ = rl.tensor_from_bytes(blob)
print("serialization round-trip ok:", np.array_equal(back, np.arange(6).reshape(2, 3)))
