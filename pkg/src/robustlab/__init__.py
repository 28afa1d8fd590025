"""robustlab: adversarial robustness workbench for self-ensembled vision
transformers, built on a from-scratch float32 autodiff engine.

Capabilities: gradient attacks (FGSM, PGD, AutoPGD) under an L-infinity
budget, intermediate-head ensembling with majority or mean fusion,
adversarial training, defensive distillation onto a compact CNN, black-box
model extraction, and analytic parameter/FLOP accounting.
"""

from .tensor import (
    Tensor,
    backward,
    conv2d,
    cross_entropy,
    grad_check,
    load_tensor,
    matmul,
    no_grad,
    save_tensor,
    soft_target_loss,
    softmax_t,
    tensor_from_bytes,
    tensor_to_bytes,
)
from .nn import (
    CnnHead,
    DistilledCnn,
    ExtractionCnn,
    LinearClassifier,
    TOY_VIT,
    VIT_B16,
    ViTConfig,
    ViTModel,
    benchmark_model,
    count_params,
    estimate_flops,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
)
from .ensemble import (
    EnsembleModel,
    VoterOutputs,
    majority_vote,
    probability_fusion,
    random_subensemble,
)
from .attacks import (
    AdvBatch,
    AttackSpec,
    EPSILONS,
    attack_ensemble,
    autopgd,
    fgsm,
    pgd,
    project_linf,
    run_attack,
)
from .data import (
    LabeledDataset,
    SplitSpec,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_generate,
)
from .pipeline import (
    DistillConfig,
    ExtractionConfig,
    QueryOracle,
    RunReport,
    SoftDataset,
    TrainConfig,
    accuracy,
    adversarial_train,
    build_distill_dataset,
    collect_soft_predictions,
    distill_train,
    evaluate,
    extraction_attack,
    predict_classes,
    train_clean,
)
from .util import derive_seed, new_rng

__version__ = "0.1.0"
