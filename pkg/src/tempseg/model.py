"""Multi-stage temporal convolutional model.

A stage maps its input channels to a hidden width with a 1x1 adapter, runs a
stack of dilated residual blocks (dilation doubling per layer), and exposes
three views of the result: hidden features, per-sample class logits, and a
unit-normalized projection for contrastive training.  Stage n >= 2 consumes
the previous stage's per-sample class probabilities, so later stages refine
earlier predictions and gradients flow through the whole cascade.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    num_stages: int = 2
    layers_per_stage: int = 6
    hidden_channels: int = 32
    projection_dim: int = 16
    kernel_size: int = 3
    temperature: float = 0.1
    contrast_weight: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.num_stages < 1 or self.layers_per_stage < 1:
            raise ValueError("num_stages and layers_per_stage must be >= 1")
        if self.hidden_channels < 1 or self.projection_dim < 1:
            raise ValueError("hidden_channels and projection_dim must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.contrast_weight < 0:
            raise ValueError("contrast_weight must be nonnegative")


@dataclass
class BlockParams:
    """One dilated residual block: dilated conv + ReLU, then a 1x1 mix."""
    dilated_w: Tensor
    dilated_b: Tensor
    mix_w: Tensor
    mix_b: Tensor


@dataclass
class StageParams:
    adapter_w: Tensor
    adapter_b: Tensor
    blocks: list[BlockParams]
    classifier_w: Tensor
    classifier_b: Tensor
    proj_hidden_w: Tensor
    proj_hidden_b: Tensor
    proj_out_w: Tensor
    proj_out_b: Tensor


@dataclass
class ModelParams:
    stages: list[StageParams]

    def named_parameters(self):
        """Yield (name, tensor) pairs in a stable order."""
        for s, stage in enumerate(self.stages):
            prefix = f"stage{s}"
            yield f"{prefix}.adapter.w", stage.adapter_w
            yield f"{prefix}.adapter.b", stage.adapter_b
            for l, blk in enumerate(stage.blocks):
                yield f"{prefix}.block{l}.dilated.w", blk.dilated_w
                yield f"{prefix}.block{l}.dilated.b", blk.dilated_b
                yield f"{prefix}.block{l}.mix.w", blk.mix_w
                yield f"{prefix}.block{l}.mix.b", blk.mix_b
            yield f"{prefix}.classifier.w", stage.classifier_w
            yield f"{prefix}.classifier.b", stage.classifier_b
            yield f"{prefix}.proj_hidden.w", stage.proj_hidden_w
            yield f"{prefix}.proj_hidden.b", stage.proj_hidden_b
            yield f"{prefix}.proj_out.w", stage.proj_out_w
            yield f"{prefix}.proj_out.b", stage.proj_out_b

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grads(self):
        for t in self.tensors():
            t.zero_grad()


@dataclass
class StageOutput:
    features: Tensor    # T x F hidden features
    logits: Tensor      # T x C, pre-softmax
    probs: Tensor       # T x C, rows sum to 1
    projected: Tensor   # T x P, unit-norm rows (zero rows allowed)


def _conv_weight(rng, c_out, c_in, k) -> Tensor:
    bound = np.sqrt(6.0 / (c_in * k))
    return Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k)))


def _zero_bias(c_out) -> Tensor:
    return Tensor(np.zeros(c_out))


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform init scaled by fan-in; biases start at zero.

    A single generator seeded once makes the draw order, and therefore the
    parameters, fully reproducible.
    """
    rng = np.random.default_rng(seed)
    f = config.hidden_channels
    k = config.kernel_size
    stages = []
    for s in range(config.num_stages):
        c_in = config.input_dim if s == 0 else config.num_classes
        blocks = []
        for _ in range(config.layers_per_stage):
            blocks.append(BlockParams(
                dilated_w=_conv_weight(rng, f, f, k),
                dilated_b=_zero_bias(f),
                mix_w=_conv_weight(rng, f, f, 1),
                mix_b=_zero_bias(f),
            ))
        stages.append(StageParams(
            adapter_w=_conv_weight(rng, f, c_in, 1),
            adapter_b=_zero_bias(f),
            blocks=blocks,
            classifier_w=_conv_weight(rng, config.num_classes, f, 1),
            classifier_b=_zero_bias(config.num_classes),
            proj_hidden_w=_conv_weight(rng, f, f, 1),
            proj_hidden_b=_zero_bias(f),
            proj_out_w=_conv_weight(rng, config.projection_dim, f, 1),
            proj_out_b=_zero_bias(config.projection_dim),
        ))
    return ModelParams(stages=stages)


def sstcn_forward(x: Tensor, stage: StageParams) -> Tensor:
    """Single-stage forward: adapter, then the dilated residual stack."""
    h = ad.conv1d_dilated(x, stage.adapter_w, stage.adapter_b, dilation=1)
    for i, blk in enumerate(stage.blocks):
        pre = ad.relu(ad.conv1d_dilated(h, blk.dilated_w, blk.dilated_b,
                                        dilation=2 ** i))
        h = ad.add(h, ad.conv1d_dilated(pre, blk.mix_w, blk.mix_b, dilation=1))
    return h


def classify(features: Tensor, stage: StageParams) -> Tensor:
    return ad.conv1d_dilated(features, stage.classifier_w, stage.classifier_b,
                             dilation=1)


def _project_raw(features: Tensor, stage: StageParams) -> Tensor:
    h = ad.relu(ad.conv1d_dilated(features, stage.proj_hidden_w,
                                  stage.proj_hidden_b, dilation=1))
    return ad.conv1d_dilated(h, stage.proj_out_w, stage.proj_out_b, dilation=1)


def project(features: Tensor, stage: StageParams) -> Tensor:
    return ad.l2_normalize(_project_raw(features, stage))


def mstcn_forward(features: np.ndarray, params: ModelParams,
                  config: ModelConfig) -> list[StageOutput]:
    """Run the full cascade on one sequence of shape T x input_dim."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.input_dim:
        raise ValueError(
            f"expected T x {config.input_dim} features, got {features.shape}")
    if len(params.stages) != config.num_stages:
        raise ValueError("parameter stage count does not match config")

    outputs = []
    stage_in = Tensor(features)
    for stage in params.stages:
        z = sstcn_forward(stage_in, stage)
        logits = classify(z, stage)
        probs = ad.softmax_rows(logits)
        outputs.append(StageOutput(features=z, logits=logits, probs=probs,
                                   projected=project(z, stage)))
        stage_in = probs
    return outputs


def predict_labels(stage_outputs: list[StageOutput]) -> np.ndarray:
    """Model prediction: argmax over the final stage's probabilities."""
    return np.argmax(stage_outputs[-1].probs.values, axis=1)
