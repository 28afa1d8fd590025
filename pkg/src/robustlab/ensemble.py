"""Fusion of intermediate CNN heads with the transformer's own head.

An ensemble of m heads (one per tapped block) plus the backbone classifier
votes on each image. Two fusion criteria: majority voting over predicted
classes, and the arithmetic mean of the voters' softmax rows. Sub-ensembles
sample a random subset of the heads.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import CnnHead, Module, ViTModel
from .tensor import Tensor
from .util import new_rng

FUSION_MAJORITY = "majority"
FUSION_MEAN = "mean"


@dataclass
class VoterOutputs:
    """Per-voter raw outputs for a batch: heads first, backbone head last."""

    logits: np.ndarray  # (m + 1, B, K)
    classes: np.ndarray  # (m + 1, B)
    probs: np.ndarray  # (m + 1, B, K)


def majority_vote(votes, fallback: int) -> int:
    """Modal class of the votes; ties go to the fallback voter's class if it is
    among the tied classes, otherwise to the lowest tied class index."""
    votes = list(votes)
    if not votes:
        raise ValueError("majority_vote needs at least one vote")
    counts = Counter(votes)
    top = max(counts.values())
    tied = sorted(c for c, n in counts.items() if n == top)
    if len(tied) == 1:
        return int(tied[0])
    if fallback in tied:
        return int(fallback)
    return int(tied[0])


def probability_fusion(probs) -> tuple[int, np.ndarray]:
    """Mean the voters' probability rows, renormalize, argmax (ties: lowest index)."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise T.ShapeError(f"expected voters x classes rows, got shape {p.shape}")
    sums = p.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-4:
        raise ValueError("each voter row must sum to 1 within 1e-4")
    fused = p.mean(axis=0)
    fused = fused / fused.sum()
    return int(np.argmax(fused)), fused.astype(np.float32)


class EnsembleModel(Module):
    """Backbone ViT plus CNN heads on its first blocks, fused into one vote.

    ``block_indices`` maps each head to the block whose patch tokens it reads
    (defaults to blocks 0..m-1 in order). With m = 0 the ensemble degenerates
    to the bare backbone classifier.
    """

    def __init__(self, backbone: ViTModel, heads: list[CnnHead],
                 fusion: str = FUSION_MAJORITY, block_indices: list[int] | None = None):
        if fusion not in (FUSION_MAJORITY, FUSION_MEAN):
            raise ValueError(f"unknown fusion criterion {fusion!r}")
        if block_indices is None:
            block_indices = list(range(len(heads)))
        if len(block_indices) != len(heads):
            raise ValueError("one block index per head required")
        if len(heads) > backbone.config.depth:
            raise ValueError(
                f"ensemble has {len(heads)} heads but the backbone only "
                f"{backbone.config.depth} blocks"
            )
        if any(not 0 <= b < backbone.config.depth for b in block_indices):
            raise ValueError(f"block indices {block_indices} out of range")
        self.backbone = backbone
        self.heads = heads
        self.fusion = fusion
        self.block_indices = list(block_indices)

    @property
    def m(self) -> int:
        return len(self.heads)

    @property
    def num_classes(self) -> int:
        return self.backbone.config.num_classes

    def voter_logits(self, images) -> list[Tensor]:
        """One backbone forward feeding every head; backbone head voted last."""
        patch_tokens, _, backbone_logits = self.backbone.forward(images)
        outs = [head.forward(patch_tokens[b]) for head, b in zip(self.heads, self.block_indices)]
        outs.append(backbone_logits)
        return outs

    def loss(self, images, labels) -> Tensor:
        """Sum of every voter's cross-entropy (backbone head plus each CNN head)."""
        outs = self.voter_logits(images)
        total = T.cross_entropy(outs[0], labels)
        for out in outs[1:]:
            total = total + T.cross_entropy(out, labels)
        return total

    def logits(self, images) -> Tensor:
        return self.voter_logits(images)[-1]

    def predict(self, images) -> tuple[np.ndarray, np.ndarray, VoterOutputs]:
        """Fused class per image, fused probability row, and raw voter outputs.

        The probability row is the renormalized voter mean in both fusion
        modes; under majority voting the class comes from the vote count with
        ties resolved toward the backbone head.
        """
        with T.no_grad():
            outs = self.voter_logits(images)
        logits = np.stack([o.data for o in outs])  # (m + 1, B, K)
        probs = np.stack([T.softmax_t(Tensor(o.data), 1.0).data for o in outs])
        classes = logits.argmax(axis=2)
        fused = probs.mean(axis=0, dtype=np.float64)
        fused = (fused / fused.sum(axis=1, keepdims=True)).astype(np.float32)
        if self.fusion == FUSION_MEAN or self.m == 0:
            pred = fused.argmax(axis=1)
        else:
            B = logits.shape[1]
            pred = np.empty(B, dtype=np.int64)
            for i in range(B):
                pred[i] = majority_vote(classes[:, i], fallback=int(classes[-1, i]))
        return pred, fused, VoterOutputs(logits=logits, classes=classes, probs=probs)

    def predict_classes(self, images) -> np.ndarray:
        return self.predict(images)[0]


def random_subensemble(model: EnsembleModel, c: int, seed: int) -> EnsembleModel:
    """View of the ensemble restricted to a uniformly sampled c-subset of heads.

    The backbone and the chosen heads are shared, not copied; the subset is a
    deterministic function of the seed.
    """
    if not 1 <= c <= model.m:
        raise ValueError(f"subset size {c} out of range [1, {model.m}]")
    rng = new_rng(seed, "subensemble")
    chosen = sorted(rng.choice(model.m, size=c, replace=False).tolist())
    return EnsembleModel(
        model.backbone,
        [model.heads[i] for i in chosen],
        fusion=model.fusion,
        block_indices=[model.block_indices[i] for i in chosen],
    )
