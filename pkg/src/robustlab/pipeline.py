"""Training and experiment orchestration.

Clean training, adversarial training with a mixed clean/adversarial loss,
soft-prediction collection and distillation, the black-box extraction
attack, and the evaluation harness that turns a model plus an attack grid
into a RunReport. One experiment run is a single logical sequence;
independent runs with different seeds share no mutable state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AdvBatch, AttackSpec, run_attack
from .data import LabeledDataset
from .ensemble import EnsembleModel
from .nn import (
    DistilledCnn,
    ExtractionCnn,
    Module,
    count_params,
    estimate_flops,
    frozen,
    model_to_bytes,
)
from .tensor import DTYPE, Tensor
from .util import derive_seed, new_rng


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 30
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    lam: float = 0.5  # clean/adversarial mixing weight
    attack_spec: AttackSpec | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class DistillConfig:
    temperature: float = 20.0
    student: str = "distilled"
    epochs: int = 5
    batch_size: int = 30
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class ExtractionConfig:
    query_budget: int = 1000
    query_source: str = "train"
    replica: str = "extraction"
    epochs: int = 5
    batch_size: int = 30
    learning_rate: float = 1e-3
    seed: int = 0
    victim_output_mode: str = "hard"  # hard labels or soft probabilities

    def __post_init__(self):
        if self.query_budget < 1:
            raise ValueError(f"query_budget must be >= 1, got {self.query_budget}")
        if self.victim_output_mode not in ("hard", "soft"):
            raise ValueError(f"unknown victim_output_mode {self.victim_output_mode!r}")


@dataclass
class SoftDataset:
    """Images paired with teacher probability rows (each summing to 1)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must pair one-to-one")
        sums = self.targets.sum(axis=1, dtype=np.float64)
        if sums.size and np.max(np.abs(sums - 1.0)) > 1e-4:
            raise ValueError("each target row must sum to 1 within 1e-4")

    def __len__(self) -> int:
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class SgdMomentum:
    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = DTYPE(lr)
        self.momentum = DTYPE(momentum)
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v


class Adam:
    def __init__(self, params: list[Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = DTYPE(eps)
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.b1 ** self.t
        bias2 = 1.0 - self.b2 ** self.t
        scale = DTYPE(self.lr * np.sqrt(bias2) / bias1)
        b1, b2 = DTYPE(self.b1), DTYPE(self.b2)
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (DTYPE(1.0) - b1) * g
            v *= b2
            v += (DTYPE(1.0) - b2) * (g * g)
            p.data = p.data - scale * m / (np.sqrt(v) + self.eps)


def _make_optimizer(cfg: TrainConfig, params: list[Tensor]):
    if cfg.optimizer == "sgd":
        return SgdMomentum(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, LabeledDataset):
        return data.images, data.labels
    x, y = data
    return np.asarray(x, dtype=DTYPE), np.asarray(y)


def predict_classes(model, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Hard predictions under the model's own decision rule, batched."""
    outs = []
    for start in range(0, images.shape[0], batch_size):
        xb = images[start : start + batch_size]
        if hasattr(model, "predict_classes"):
            outs.append(model.predict_classes(xb))
        else:
            with T.no_grad():
                outs.append(model.logits(Tensor(xb)).data.argmax(axis=1))
    return np.concatenate(outs)


def accuracy(model, data, batch_size: int = 128) -> float:
    x, y = _as_arrays(data)
    return float((predict_classes(model, x, batch_size) == y).mean())


def _trainable_params(model: Module) -> list[Tensor]:
    """The parameters a training loop updates.

    For an ensemble only the intermediate heads train; the backbone is a
    fixed, already-trained feature extractor whose own classifier is the
    final voter. Bare models train end to end.
    """
    if isinstance(model, EnsembleModel):
        out: list[Tensor] = []
        for head in model.heads:
            out.extend(head.parameters())
        return out
    return model.parameters()


class _ensemble_backbone_frozen:
    """Freeze the backbone during ensemble training; no-op otherwise."""

    def __init__(self, model: Module):
        self._ctx = frozen(model.backbone) if isinstance(model, EnsembleModel) else None

    def __enter__(self):
        if self._ctx is not None:
            self._ctx.__enter__()
        return self

    def __exit__(self, *exc):
        if self._ctx is not None:
            self._ctx.__exit__(*exc)
        return False


def train_clean(model: Module, data, cfg: TrainConfig, val=None) -> list[dict]:
    """Minibatch gradient descent on the model's own loss. Deterministic per seed.

    An ensemble trains its intermediate heads on the frozen backbone's
    features (the backbone classifier is already the final voter); other
    models train all parameters. Returns one record per epoch with the mean
    train loss and, when a validation set is supplied, validation accuracy.
    """
    x, y = _as_arrays(data)
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    rng = new_rng(cfg.seed, "train-shuffle")
    params = _trainable_params(model)
    opt = _make_optimizer(cfg, params)
    history: list[dict] = []
    with _ensemble_backbone_frozen(model):
        for epoch in range(cfg.epochs):
            perm = rng.permutation(x.shape[0])
            losses = []
            for start in range(0, len(perm), cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                loss = model.loss(Tensor(x[idx]), y[idx])
                model.zero_grad()
                T.backward(loss)
                opt.step()
                losses.append(float(loss.data))
            record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if val is not None:
                record["val_accuracy"] = accuracy(model, val)
            history.append(record)
    return history


def adversarial_train(model: Module, data, cfg: TrainConfig, val=None) -> list[dict]:
    """Mixed-loss training: lambda * clean loss + (1 - lambda) * adversarial loss.

    Adversarial examples are regenerated for every minibatch against the
    current weights (skipped entirely at lambda = 1). The loss is the model's
    own training loss, so an ensemble sums every voter's cross-entropy on
    both the clean and the perturbed images.
    """
    if cfg.attack_spec is None:
        raise ValueError("adversarial_train requires cfg.attack_spec")
    x, y = _as_arrays(data)
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    rng = new_rng(cfg.seed, "train-shuffle")
    params = _trainable_params(model)
    opt = _make_optimizer(cfg, params)
    history: list[dict] = []
    with _ensemble_backbone_frozen(model):
        for epoch in range(cfg.epochs):
            perm = rng.permutation(x.shape[0])
            losses = []
            for bi, start in enumerate(range(0, len(perm), cfg.batch_size)):
                idx = perm[start : start + cfg.batch_size]
                xb, yb = x[idx], y[idx]
                x_adv = None
                if cfg.lam < 1.0:
                    spec = AttackSpec(
                        kind=cfg.attack_spec.kind,
                        epsilon=cfg.attack_spec.epsilon,
                        steps=cfg.attack_spec.steps,
                        step_size=cfg.attack_spec.step_size,
                        random_start=cfg.attack_spec.random_start,
                        seed=derive_seed(cfg.seed, f"adv-train-{epoch}-{bi}"),
                    )
                    with frozen(model):  # attacker needs input gradients only
                        x_adv = run_attack(model, xb, yb, spec, with_success=False).x_adv
                model.zero_grad()
                if cfg.lam >= 1.0:
                    loss = model.loss(Tensor(xb), yb)
                elif cfg.lam <= 0.0:
                    loss = model.loss(Tensor(x_adv), yb)
                else:
                    loss = model.loss(Tensor(xb), yb) * cfg.lam + model.loss(
                        Tensor(x_adv), yb
                    ) * (1.0 - cfg.lam)
                T.backward(loss)
                opt.step()
                losses.append(float(loss.data))
            record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if val is not None:
                record["val_accuracy"] = accuracy(model, val)
            history.append(record)
    return history


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------


def collect_soft_predictions(teacher, inputs: np.ndarray, temperature: float,
                             mode: str = "voter_mean", batch_size: int = 128) -> np.ndarray:
    """Teacher probability targets: temperature softmax per voter, averaged.

    ``mode="final_head"`` uses only the backbone classifier's softened row
    instead of the voter mean.
    """
    if mode not in ("voter_mean", "final_head"):
        raise ValueError(f"unknown soft-prediction mode {mode!r}")
    rows = []
    for start in range(0, inputs.shape[0], batch_size):
        xb = inputs[start : start + batch_size]
        with T.no_grad():
            if isinstance(teacher, EnsembleModel):
                outs = teacher.voter_logits(xb)
                if mode == "final_head":
                    outs = outs[-1:]
            else:
                outs = [teacher.logits(Tensor(xb))]
            soft = np.stack(
                [T.softmax_t(o, temperature).data for o in outs]
            ).mean(axis=0, dtype=np.float64)
        rows.append((soft / soft.sum(axis=1, keepdims=True)).astype(np.float32))
    return np.concatenate(rows)


def build_distill_dataset(clean, adversarial: list[AdvBatch], teacher,
                          temperature: float, mode: str = "voter_mean") -> SoftDataset:
    """Clean images plus adversarial images, all labeled with teacher soft rows."""
    x_clean, _ = _as_arrays(clean)
    parts = [x_clean] + [b.x_adv for b in adversarial]
    inputs = np.concatenate(parts) if len(parts) > 1 else x_clean.copy()
    targets = collect_soft_predictions(teacher, inputs, temperature, mode=mode)
    return SoftDataset(inputs=inputs, targets=targets)


def distill_train(student: Module, soft_data: SoftDataset, cfg: DistillConfig) -> list[dict]:
    """Train the student on softened targets at the configured temperature.

    Inference afterwards runs at temperature 1 (the student's raw logits).
    The student never sees a hard label.
    """
    k_student = student.num_classes
    if soft_data.targets.shape[1] != k_student:
        raise ValueError(
            f"teacher rows have {soft_data.targets.shape[1]} classes, "
            f"student expects {k_student}"
        )
    rng = new_rng(cfg.seed, "distill-shuffle")
    train_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                            learning_rate=cfg.learning_rate, seed=cfg.seed)
    opt = _make_optimizer(train_cfg, student.parameters())
    history: list[dict] = []
    x, p = soft_data.inputs, soft_data.targets
    for epoch in range(cfg.epochs):
        perm = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits = student.forward(Tensor(x[idx]))
            loss = T.soft_target_loss(logits, p[idx], cfg.temperature)
            student.zero_grad()
            T.backward(loss)
            opt.step()
            losses.append(float(loss.data))
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses))})
    return history


# ---------------------------------------------------------------------------
# model extraction
# ---------------------------------------------------------------------------


class QueryOracle:
    """Black-box front of a victim model: images in, outputs out.

    The attacker sees nothing else; there is no gradient path, and the
    gradient counter exists precisely to demonstrate it stays at zero.
    """

    def __init__(self, victim, output_mode: str = "hard"):
        self._victim = victim
        self.output_mode = output_mode
        self.forward_queries = 0
        self.gradient_queries = 0

    def query(self, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
        self.forward_queries += images.shape[0]
        if self.output_mode == "hard":
            return predict_classes(self._victim, images, batch_size)
        rows = []
        for start in range(0, images.shape[0], batch_size):
            xb = images[start : start + batch_size]
            if isinstance(self._victim, EnsembleModel):
                rows.append(self._victim.predict(xb)[1])
            else:
                with T.no_grad():
                    logits = self._victim.logits(Tensor(xb))
                rows.append(T.softmax_t(logits, 1.0).data)
        return np.concatenate(rows)


@dataclass
class ExtractionResult:
    replica: Module
    fidelity: float
    replica_clean_accuracy: float
    forward_queries: int
    gradient_queries: int
    query_budget: int


def _build_replica(tag: str, in_channels: int, num_classes: int, seed: int) -> Module:
    if tag == "extraction":
        return ExtractionCnn(in_channels, num_classes, seed=seed)
    if tag == "distilled":
        return DistilledCnn(in_channels, num_classes, seed=seed)
    raise ValueError(f"unknown replica architecture {tag!r}")


def extraction_attack(victim, cfg: ExtractionConfig, pool: np.ndarray,
                      heldout) -> ExtractionResult:
    """Steal the victim through query/response pairs only.

    Draws cfg.query_budget images from the pool, labels them via the counted
    oracle, trains the replica on that transfer set, then reports fidelity
    (replica agrees with victim) on the held-out images plus the replica's
    clean accuracy against the true labels. Fidelity measurement queries the
    victim directly and does not count against the attacker's budget.
    """
    pool = np.asarray(pool, dtype=DTYPE)
    if cfg.query_budget > pool.shape[0]:
        raise ValueError(
            f"query budget {cfg.query_budget} exceeds pool of {pool.shape[0]}"
        )
    x_held, y_held = _as_arrays(heldout)
    rng = new_rng(cfg.seed, "extract-queries")
    picks = rng.choice(pool.shape[0], size=cfg.query_budget, replace=False)
    queries = pool[picks]

    num_classes = _victim_classes(victim)
    oracle = QueryOracle(victim, output_mode=cfg.victim_output_mode)
    responses = oracle.query(queries)

    replica = _build_replica(cfg.replica, pool.shape[1], num_classes,
                             seed=derive_seed(cfg.seed, "replica-init"))
    if cfg.victim_output_mode == "hard":
        train_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                                learning_rate=cfg.learning_rate, seed=cfg.seed)
        train_clean(replica, (queries, responses), train_cfg)
    else:
        soft = SoftDataset(inputs=queries, targets=responses)
        distill_train(replica, soft, DistillConfig(
            temperature=1.0, epochs=cfg.epochs, batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate, seed=cfg.seed))

    victim_pred = predict_classes(victim, x_held)
    replica_pred = predict_classes(replica, x_held)
    fidelity = float((victim_pred == replica_pred).mean())
    clean_acc = float((replica_pred == y_held).mean())
    return ExtractionResult(
        replica=replica, fidelity=fidelity, replica_clean_accuracy=clean_acc,
        forward_queries=oracle.forward_queries,
        gradient_queries=oracle.gradient_queries,
        query_budget=cfg.query_budget,
    )


def _victim_classes(victim) -> int:
    if isinstance(victim, EnsembleModel):
        return victim.num_classes
    if hasattr(victim, "num_classes"):
        return victim.num_classes
    return victim.config.num_classes


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

REPORT_COLUMNS = [
    "model", "clean", "fgsm@0.03", "fgsm@0.003", "pgd@0.03", "pgd@0.003",
    "autopgd@0.03", "autopgd@0.003", "params", "flops", "weight_bytes",
    "latency", "throughput",
]


@dataclass
class RunReport:
    """One model's scorecard: clean/robust accuracy plus computational stats."""

    model_tag: str
    clean_accuracy: float
    robust: dict[str, float] = field(default_factory=dict)
    params: int | None = None
    flops: int | None = None
    weight_bytes: int | None = None
    latency: float | None = None
    throughput: float | None = None
    fidelity: float | None = None
    seed: int = 0
    config_digest: str = ""

    def to_json(self) -> str:
        record = {
            "model": self.model_tag,
            "clean": self.clean_accuracy,
            "robust": self.robust,
            "params": self.params,
            "flops": self.flops,
            "weight_bytes": self.weight_bytes,
            "latency": self.latency,
            "throughput": self.throughput,
            "fidelity": self.fidelity,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }
        return json.dumps(record, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunReport":
        rec = json.loads(line)
        return cls(
            model_tag=rec["model"], clean_accuracy=rec["clean"],
            robust=dict(rec.get("robust", {})), params=rec.get("params"),
            flops=rec.get("flops"), weight_bytes=rec.get("weight_bytes"),
            latency=rec.get("latency"), throughput=rec.get("throughput"),
            fidelity=rec.get("fidelity"), seed=rec.get("seed", 0),
            config_digest=rec.get("config_digest", ""),
        )

    def csv_row(self) -> list[str]:
        def cell(v):
            if v is None:
                return "-"
            if isinstance(v, float):
                return f"{v:.6g}"
            return str(v)

        row = [self.model_tag, cell(self.clean_accuracy)]
        for col in REPORT_COLUMNS[2:8]:
            row.append(cell(self.robust.get(col)))
        row += [cell(self.params), cell(self.flops), cell(self.weight_bytes),
                cell(self.latency), cell(self.throughput)]
        return row


def evaluate(model, data, attack_specs: list[AttackSpec], tag: str = "model",
             seed: int = 0, batch_size: int = 64, config_digest: str = "",
             attack_on=None) -> RunReport:
    """Clean accuracy plus robust accuracy per (attack, epsilon).

    By default adversarial examples are regenerated against the evaluated
    model itself. Passing ``attack_on`` switches to the transfer protocol:
    the attack set is crafted once against that source model (for a fixed
    top-level seed the set is identical across evaluated models, so reports
    are comparable rows of one table). Deterministic per seed.
    """
    x, y = _as_arrays(data)
    clean = float((predict_classes(model, x, batch_size) == y).mean())
    source = model if attack_on is None else attack_on
    robust: dict[str, float] = {}
    for spec in attack_specs:
        correct = 0
        for bi, start in enumerate(range(0, x.shape[0], batch_size)):
            xb, yb = x[start : start + batch_size], y[start : start + batch_size]
            batch_spec = AttackSpec(
                kind=spec.kind, epsilon=spec.epsilon, steps=spec.steps,
                step_size=spec.step_size, random_start=spec.random_start,
                seed=derive_seed(seed, f"eval-{spec.label()}-{bi}"),
            )
            if isinstance(source, Module):
                with frozen(source):
                    adv = run_attack(source, xb, yb, batch_spec, with_success=False)
            else:
                adv = run_attack(source, xb, yb, batch_spec, with_success=False)
            pred = predict_classes(model, adv.x_adv, batch_size)
            correct += int((pred == yb).sum())
        robust[spec.label()] = correct / x.shape[0]
    report = RunReport(model_tag=tag, clean_accuracy=clean, robust=robust,
                       seed=seed, config_digest=config_digest)
    if isinstance(model, Module):
        report.params = count_params(model)
        try:
            report.weight_bytes = len(model_to_bytes(model))
        except TypeError:
            report.weight_bytes = None
        try:
            report.flops = estimate_flops(model, x.shape[1:])
        except TypeError:
            report.flops = None
    return report


def config_digest_of(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
