"""Gradient-based L-infinity adversarial example generators.

FGSM, PGD and AutoPGD against any classifier exposing ``logits(x)``. All
attacks work in the [0, 1] pixel domain, keep every iterate inside the
epsilon ball around the original image, and are deterministic for a fixed
seed and victim. The victim is only read, never mutated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .ensemble import EnsembleModel
from .tensor import DTYPE, Tensor
from .util import new_rng

EPSILONS = (0.03, 0.003)

KIND_FGSM = "fgsm"
KIND_PGD = "pgd"
KIND_AUTOPGD = "autopgd"
ATTACK_KINDS = (KIND_FGSM, KIND_PGD, KIND_AUTOPGD)


@dataclass
class AttackSpec:
    """Attack kind plus budget and schedule.

    step_size defaults to epsilon / 4 for PGD; AutoPGD manages its own step
    size (2 * epsilon, halved at checkpoints) and ignores the field.
    """

    kind: str = KIND_FGSM
    epsilon: float = 0.03
    steps: int = 10
    step_size: float | None = None
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.kind != KIND_FGSM and self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.kind == KIND_AUTOPGD and self.steps < 2:
            raise ValueError(f"autopgd needs steps >= 2, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")

    def resolved_step_size(self) -> float:
        return self.epsilon / 4 if self.step_size is None else self.step_size

    def label(self) -> str:
        return f"{self.kind}@{self.epsilon:g}"


@dataclass
class AdvBatch:
    """Originals, perturbed images, labels, and per-example success flags.

    success[i] is True when the victim classifies x_adv[i] differently from
    the true label. loss_history records the mean objective per step.
    """

    x: np.ndarray
    x_adv: np.ndarray
    labels: np.ndarray
    success: np.ndarray | None
    epsilon: float
    kind: str
    seed: int
    loss_history: list[float] = field(default_factory=list)
    iterates: list[np.ndarray] | None = None

    def __post_init__(self):
        gap = np.abs(self.x_adv - self.x).max(initial=0.0)
        if gap > self.epsilon + 1e-6:
            raise ValueError(f"perturbation {gap} exceeds budget {self.epsilon}")
        if self.x_adv.min(initial=0.0) < 0.0 or self.x_adv.max(initial=1.0) > 1.0:
            raise ValueError("perturbed pixels left the [0, 1] range")


def project_linf(candidate: np.ndarray, origin: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp into the epsilon ball around origin, then into [0, 1]. Idempotent."""
    if candidate.shape != origin.shape:
        raise T.ShapeError(f"candidate {candidate.shape} vs origin {origin.shape}")
    eps = DTYPE(epsilon)
    out = np.clip(candidate, origin - eps, origin + eps)
    return np.clip(out, DTYPE(0.0), DTYPE(1.0))


def _input_gradient(model, x_np: np.ndarray, labels: np.ndarray):
    """Loss gradient with respect to the input pixels, plus loss and logits."""
    x = Tensor(x_np, requires_grad=True)
    logits = model.logits(x)
    loss = T.cross_entropy(logits, labels)
    T.backward(loss)
    grad = x.grad
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite input gradient; victim produced unstable logits")
    return grad, float(loss.data), logits.data


def _per_example_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1, dtype=DTYPE))
    return lse - logits[np.arange(logits.shape[0]), labels]


def _predict(model, x_np: np.ndarray) -> np.ndarray:
    if hasattr(model, "predict_classes"):
        return model.predict_classes(x_np)
    with T.no_grad():
        return model.logits(Tensor(x_np)).data.argmax(axis=1)


def _pgd_core(model, x_np, labels, epsilon, steps, step_size, random_start, seed,
              kind, record_iterates=False, with_success=True) -> AdvBatch:
    x0 = np.asarray(x_np, dtype=DTYPE)
    labels = np.asarray(labels)
    if random_start:
        rng = new_rng(seed, "pgd-start")
        delta = rng.uniform(-epsilon, epsilon, size=x0.shape).astype(DTYPE)
        x_adv = project_linf(x0 + delta, x0, epsilon)
    else:
        x_adv = x0.copy()
    history: list[float] = []
    iterates: list[np.ndarray] = []
    step = DTYPE(step_size)
    for _ in range(steps):
        grad, loss, _ = _input_gradient(model, x_adv, labels)
        history.append(loss)
        x_adv = project_linf(x_adv + step * np.sign(grad), x0, epsilon)
        if record_iterates:
            iterates.append(x_adv.copy())
    success = (_predict(model, x_adv) != labels) if with_success else None
    return AdvBatch(
        x=x0, x_adv=x_adv, labels=labels, success=success, epsilon=epsilon,
        kind=kind, seed=seed, loss_history=history,
        iterates=iterates if record_iterates else None,
    )


def fgsm(model, x, labels, epsilon: float, seed: int = 0,
         with_success: bool = True) -> AdvBatch:
    """Single step of size epsilon along the sign of the loss gradient.

    sign(0) = 0, so coordinates with no gradient stay untouched; with a
    constant-logits victim the output equals the input exactly.
    """
    return _pgd_core(model, x, labels, epsilon, steps=1, step_size=epsilon,
                     random_start=False, seed=seed, kind=KIND_FGSM,
                     with_success=with_success)


def pgd(model, x, labels, spec: AttackSpec, record_iterates: bool = False,
        with_success: bool = True) -> AdvBatch:
    """Iterative sign-gradient ascent, projected into the budget each step.

    With one step of size epsilon and no random start this is exactly FGSM.
    """
    step = spec.resolved_step_size()
    if step <= 0:
        raise ValueError(f"step_size must be > 0, got {step}")
    return _pgd_core(model, x, labels, spec.epsilon, spec.steps, step,
                     spec.random_start, spec.seed, KIND_PGD, record_iterates,
                     with_success)


def _apgd_checkpoints(steps: int) -> list[int]:
    """Checkpoint iterations with decreasing spacing, starting at 22% of budget."""
    points = [0.0, 0.22]
    while points[-1] < 1.0:
        points.append(points[-1] + max(points[-1] - points[-2] - 0.03, 0.06))
    ks = sorted({min(int(np.ceil(p * steps)), steps) for p in points[1:]})
    return [k for k in ks if k >= 1]


def autopgd(model, x, labels, spec: AttackSpec, record_iterates: bool = False,
            with_success: bool = True) -> AdvBatch:
    """Momentum PGD with automatic per-example step-size halving.

    Starts from the input with step size 2 * epsilon. At each checkpoint the
    step is halved (and the search restarted from the best-so-far iterate)
    for examples where fewer than rho = 0.75 of the steps since the previous
    checkpoint improved the loss, or where neither the step size nor the best
    loss moved. The returned image is the best-loss iterate, projected.
    """
    if spec.steps < 2:
        raise ValueError(f"autopgd needs steps >= 2, got {spec.steps}")
    eps = spec.epsilon
    alpha = DTYPE(0.75)  # momentum weight
    rho = 0.75
    x0 = np.asarray(x, dtype=DTYPE)
    labels = np.asarray(labels)
    B = x0.shape[0]
    expand = (slice(None),) + (None,) * (x0.ndim - 1)

    eta = np.full(B, 2.0 * eps, dtype=DTYPE)
    x_adv = x0.copy()
    grad, _, logits = _input_gradient(model, x_adv, labels)
    loss_now = _per_example_ce(logits, labels)
    x_best = x_adv.copy()
    loss_best = loss_now.copy()
    history = [float(loss_now.mean())]
    iterates: list[np.ndarray] = []

    checkpoints = set(_apgd_checkpoints(spec.steps))
    improved = np.zeros(B, dtype=np.int64)
    since_checkpoint = 0
    eta_prev = eta.copy()
    best_prev = loss_best.copy()
    x_prev = x_adv.copy()

    for k in range(1, spec.steps):
        z = project_linf(x_adv + eta[expand] * np.sign(grad), x0, eps)
        if k == 1:
            x_next = z
        else:
            momentum = x_adv + alpha * (z - x_adv) + (DTYPE(1.0) - alpha) * (x_adv - x_prev)
            x_next = project_linf(momentum, x0, eps)
        x_prev = x_adv
        x_adv = x_next
        if record_iterates:
            iterates.append(x_adv.copy())

        grad, _, logits = _input_gradient(model, x_adv, labels)
        loss_new = _per_example_ce(logits, labels)
        history.append(float(loss_new.mean()))
        improved += (loss_new > loss_now).astype(np.int64)
        loss_now = loss_new
        gained = loss_new > loss_best
        x_best[gained] = x_adv[gained]
        loss_best[gained] = loss_new[gained]
        since_checkpoint += 1

        if k in checkpoints and since_checkpoint > 0:
            few_improvements = improved < rho * since_checkpoint
            stalled = (eta == eta_prev) & (loss_best <= best_prev)
            halve = few_improvements | stalled
            if halve.any():
                eta[halve] /= DTYPE(2.0)
                x_adv = x_adv.copy()
                x_adv[halve] = x_best[halve]
                x_prev = x_adv.copy()
                grad, _, logits = _input_gradient(model, x_adv, labels)
                loss_now = _per_example_ce(logits, labels)
            improved[:] = 0
            since_checkpoint = 0
            eta_prev = eta.copy()
            best_prev = loss_best.copy()

    x_final = project_linf(x_best, x0, eps)
    success = (_predict(model, x_final) != labels) if with_success else None
    return AdvBatch(
        x=x0, x_adv=x_final, labels=labels, success=success, epsilon=eps,
        kind=KIND_AUTOPGD, seed=spec.seed, loss_history=history,
        iterates=iterates if record_iterates else None,
    )


class _FusedEnsembleLogits:
    """Differentiable view of an ensemble for the attacker.

    Majority voting has zero gradient almost everywhere, so gradients flow
    through the mean of the voters' softmax rows; the log of that mean is
    served as logits, which makes the generic cross-entropy objective the
    negative log of the fused probability. With m = 0 the backbone's own
    logits are served, so attacking the trivial ensemble is bit-identical to
    attacking the bare transformer. Success flags still use the ensemble's
    configured fusion rule.
    """

    def __init__(self, ensemble: EnsembleModel):
        self.ensemble = ensemble

    def logits(self, x: Tensor) -> Tensor:
        if self.ensemble.m == 0:
            return self.ensemble.backbone.logits(x)
        outs = self.ensemble.voter_logits(x)
        acc = T.softmax_t(outs[0], 1.0)
        for o in outs[1:]:
            acc = acc + T.softmax_t(o, 1.0)
        mean = acc * float(1.0 / len(outs))
        return T.log(mean + 1e-12)

    def predict_classes(self, x_np: np.ndarray) -> np.ndarray:
        return self.ensemble.predict_classes(x_np)


def attack_ensemble(ensemble: EnsembleModel, x, labels, spec: AttackSpec,
                    record_iterates: bool = False, with_success: bool = True) -> AdvBatch:
    """Run the attack named by the spec against an ensemble via its fused path."""
    return run_attack(_FusedEnsembleLogits(ensemble), x, labels, spec, record_iterates,
                      with_success)


def run_attack(model, x, labels, spec: AttackSpec, record_iterates: bool = False,
               with_success: bool = True) -> AdvBatch:
    """Dispatch on spec.kind; ensembles are wrapped in the fused view."""
    if isinstance(model, EnsembleModel):
        model = _FusedEnsembleLogits(model)
    if spec.kind == KIND_FGSM:
        return fgsm(model, x, labels, spec.epsilon, seed=spec.seed,
                    with_success=with_success)
    if spec.kind == KIND_PGD:
        return pgd(model, x, labels, spec, record_iterates, with_success)
    return autopgd(model, x, labels, spec, record_iterates, with_success)


def save_adv_batch(batch: AdvBatch, prefix) -> None:
    """Write originals/perturbed tensors plus a line-delimited sidecar record."""
    prefix = str(prefix)
    T.save_tensor(batch.x, prefix + ".x.seda")
    T.save_tensor(batch.x_adv, prefix + ".x_adv.seda")
    with open(prefix + ".jsonl", "w", encoding="utf-8") as fh:
        meta = {"record": "meta", "kind": batch.kind, "epsilon": batch.epsilon,
                "seed": batch.seed, "count": int(batch.labels.shape[0])}
        fh.write(json.dumps(meta) + "\n")
        for i in range(batch.labels.shape[0]):
            row = {"record": "example", "index": i, "label": int(batch.labels[i]),
                   "success": bool(batch.success[i])}
            fh.write(json.dumps(row) + "\n")
