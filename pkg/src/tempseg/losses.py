"""Training objectives.

The per-stage objective combines sample-wise cross entropy with a
contrastive term computed over a curated example set.  Contrast follows the
per-pair form: each anchor/positive pair is scored against the anchor's
full negative set, anchors lacking positives or negatives are skipped, and
the result averages first over an anchor's positives and then over valid
anchors.  Segment-level examples join sample-level ones in a single pool so
every cross-level pairing contributes.

Examples are canonically sorted (class, level, embedding bytes) before any
summation, which makes the loss bitwise invariant to input order.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import Tensor

LEVEL_SAMPLE = "sample"
LEVEL_SEGMENT = "segment"
_LEVEL_ORDER = {LEVEL_SAMPLE: 0, LEVEL_SEGMENT: 1}


@dataclass
class ContrastExample:
    """A unit-norm embedding tagged with its class and granularity level."""
    embedding: Tensor
    class_label: int
    level: str = LEVEL_SAMPLE

    def __post_init__(self):
        if not isinstance(self.embedding, Tensor):
            self.embedding = Tensor(np.asarray(self.embedding, dtype=np.float64))
        if self.embedding.ndim != 1:
            raise ValueError("embedding must be a 1-D vector")
        norm = np.linalg.norm(self.embedding.values)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"embedding norm {norm:.3e} is not 1")
        if self.level not in _LEVEL_ORDER:
            raise ValueError(f"unknown level {self.level!r}")
        if self.class_label < 0:
            raise ValueError("class_label must be nonnegative")


@dataclass
class LossBreakdown:
    classification: list[float]
    contrast: list[float]
    contrast_weight: float
    total: float
    skipped_anchors: int = 0

    def __post_init__(self):
        if len(self.classification) != len(self.contrast):
            raise ValueError("per-stage loss lists must align")
        expected = sum(c + self.contrast_weight * k
                       for c, k in zip(self.classification, self.contrast))
        if abs(self.total - expected) > 1e-12:
            raise ValueError("total does not decompose into its stage terms")


def info_nce(anchor, positive, negatives, temperature: float) -> float:
    """Single-anchor contrastive loss against an explicit negative set."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    negatives = [np.asarray(n, dtype=np.float64) for n in negatives]
    if not negatives:
        raise ValueError("at least one negative is required")
    anchor = np.asarray(anchor, dtype=np.float64)
    pos_sim = float(anchor @ np.asarray(positive, dtype=np.float64)) / temperature
    neg_sims = [float(anchor @ n) / temperature for n in negatives]
    # -log softmax of the positive among {positive} U negatives
    return float(logsumexp([pos_sim] + neg_sims) - pos_sim)


def _canonical_order(examples: list[ContrastExample]) -> list[ContrastExample]:
    return sorted(examples, key=lambda e: (e.class_label,
                                           _LEVEL_ORDER[e.level],
                                           e.embedding.values.tobytes()))


def supervised_contrast(examples: list[ContrastExample], temperature: float,
                        diagnostics: dict | None = None) -> Tensor:
    """Class-supervised contrast over one example pool.

    Returns a scalar graph tensor so gradients reach the embeddings.  The
    whole computation is a handful of matrix ops on the n x n similarity
    matrix; per-pair masks are constants and carry no gradient.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    examples = _canonical_order(examples)
    n = len(examples)
    labels = np.array([e.class_label for e in examples], dtype=int)

    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    n_valid = int(valid.sum())
    if diagnostics is not None:
        diagnostics["anchors"] = n
        diagnostics["skipped_anchors"] = n - n_valid
    if n_valid == 0:
        return Tensor(0.0)

    emb = ad.stack_rows([e.embedding for e in examples])
    sims = ad.scale(ad.matmul(emb, ad.transpose(emb)), 1.0 / temperature)
    exp_sims = ad.exp(sims)
    # row i of this product is constant at sum_{j in N_i} exp(s_ij)
    neg_rowsum = ad.matmul(ad.mul(exp_sims, Tensor(neg_mask.astype(np.float64))),
                           Tensor(np.ones((n, n))))
    denom = ad.add(exp_sims, neg_rowsum)
    # -log(exp(s_ij) / denom_ij) = log(denom_ij) - s_ij
    pair_losses = ad.add(ad.log(denom), ad.scale(sims, -1.0))

    weights = np.zeros((n, n))
    pos_counts = pos_mask.sum(axis=1)
    rows = valid.nonzero()[0]
    weights[rows] = pos_mask[rows] / (pos_counts[rows, None] * n_valid)
    return ad.tsum(ad.mul(pair_losses, Tensor(weights)))


def multilevel_contrast(sample_examples: list[ContrastExample],
                        segment_examples: list[ContrastExample],
                        temperature: float,
                        diagnostics: dict | None = None) -> Tensor:
    """Contrast over the union of sample- and segment-level examples."""
    return supervised_contrast(list(sample_examples) + list(segment_examples),
                               temperature, diagnostics)


def total_objective(stage_outputs, labels, example_sets, contrast_weight: float,
                    temperature: float) -> tuple[Tensor, LossBreakdown]:
    """Sum per-stage cross entropy plus weighted contrast.

    `example_sets` supplies one (sample_examples, segment_examples) pair per
    stage.  With contrast_weight 0 the contrast graphs are never built, so
    the returned loss is exactly the plain cross-entropy sum.
    """
    if len(example_sets) != len(stage_outputs):
        raise ValueError("need one example set per stage")
    labels = np.asarray(labels, dtype=int)

    ce_values, con_values = [], []
    skipped = 0
    total = None
    for out, (samples, segments) in zip(stage_outputs, example_sets):
        ce, _ = ad.softmax_cross_entropy(out.logits, labels)
        ce_values.append(ce.item())
        stage_term = ce
        if contrast_weight > 0:
            diag: dict = {}
            con = multilevel_contrast(samples, segments, temperature, diag)
            skipped += diag.get("skipped_anchors", 0)
            con_values.append(con.item())
            stage_term = ad.add(stage_term, ad.scale(con, contrast_weight))
        else:
            con_values.append(0.0)
        total = stage_term if total is None else ad.add(total, stage_term)

    breakdown = LossBreakdown(classification=ce_values, contrast=con_values,
                              contrast_weight=contrast_weight,
                              total=total.item(), skipped_anchors=skipped)
    return total, breakdown
