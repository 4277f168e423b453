"""Example selection for the contrastive term.

Hard example sampling is hybrid: per class, half the budget goes to
misclassified samples, short-falls are topped up from samples near activity
boundaries, and whatever is left is filled uniformly from the rest of the
class.  Segment-level examples are built separately by pooling each
contiguous ground-truth run of the projected features.

Selection is split from materialization on purpose: `select_hard_examples`
works on plain index arrays and owns all randomness, while
`materialize_examples` turns a frozen plan into graph tensors.  Gradient
checks rely on that split to keep the example set fixed while parameters
are perturbed.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import LEVEL_SAMPLE, LEVEL_SEGMENT, ContrastExample


@dataclass(frozen=True)
class SegmentRun:
    """A maximal constant-label run, end exclusive."""
    class_label: int
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("need 0 <= start < end")


def find_boundaries(labels) -> list[int]:
    """Indices t >= 1 where the label changes from t-1 to t."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("labels must be non-empty")
    return list(np.nonzero(labels[1:] != labels[:-1])[0] + 1)


def labels_to_segments(labels) -> list[SegmentRun]:
    labels = np.asarray(labels)
    edges = [0] + find_boundaries(labels) + [len(labels)]
    return [SegmentRun(int(labels[a]), a, b)
            for a, b in zip(edges[:-1], edges[1:])]


def expand_segments(runs: list[SegmentRun]) -> np.ndarray:
    """Inverse of labels_to_segments."""
    return np.concatenate([np.full(r.end - r.start, r.class_label)
                           for r in runs])


def select_hard_examples(predictions, labels, k_per_class: int,
                         boundary_radius: int, rng) -> dict[int, np.ndarray]:
    """Pick up to k_per_class sample indices per class present in labels.

    Order of precedence: misclassified first (capped at half the budget),
    then boundary-zone samples up to half, then uniform fill.  The boundary
    zone covers boundary_radius samples on each side of every label change.
    Returned index arrays are sorted, which keeps downstream work
    independent of selection order.
    """
    predictions = np.asarray(predictions, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have the same length")
    if k_per_class < 2 or k_per_class % 2 != 0:
        raise ValueError("k_per_class must be an even integer >= 2")

    near_boundary = np.zeros(len(labels), dtype=bool)
    for b in find_boundaries(labels):
        lo = max(0, b - boundary_radius)
        near_boundary[lo:b + boundary_radius] = True

    half = k_per_class // 2
    plan: dict[int, np.ndarray] = {}
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        wrong = members[predictions[members] != c]
        chosen = list(wrong if len(wrong) <= half
                      else rng.choice(wrong, size=half, replace=False))
        if len(chosen) < half:
            pool = np.setdiff1d(members[near_boundary[members]], chosen)
            take = min(half - len(chosen), len(pool))
            if take:
                chosen.extend(rng.choice(pool, size=take, replace=False))
        pool = np.setdiff1d(members, chosen)
        take = min(k_per_class - len(chosen), len(pool))
        if take:
            chosen.extend(rng.choice(pool, size=take, replace=False))
        plan[int(c)] = np.sort(np.asarray(chosen, dtype=int))
    return plan


def pooled_run_embedding(projected: Tensor, run: SegmentRun) -> Tensor | None:
    """Mean of a run's projected rows, renormalized; None if the mean is zero."""
    pooled = ad.mean_rows(projected, run.start, run.end)
    if np.linalg.norm(pooled.values) == 0.0:
        return None
    return ad.l2_normalize(pooled)


def segment_features(projected: Tensor, labels) -> list[tuple[int, Tensor]]:
    """One pooled unit vector per ground-truth run; zero means are dropped."""
    out = []
    for run in labels_to_segments(labels):
        vec = pooled_run_embedding(projected, run)
        if vec is not None:
            out.append((run.class_label, vec))
    return out


def materialize_examples(projected: Tensor,
                         plan: dict[int, np.ndarray]) -> list[ContrastExample]:
    """Turn a frozen index plan into sample-level graph examples.

    Zero projection rows carry no direction and are silently excluded.
    """
    examples = []
    for c in sorted(plan):
        for i in plan[c]:
            if np.linalg.norm(projected.values[i]) == 0.0:
                continue
            examples.append(ContrastExample(ad.row(projected, int(i)), c,
                                            LEVEL_SAMPLE))
    return examples


def build_example_set(projected: Tensor, predictions, labels, rng,
                      k_per_class: int = 16, boundary_radius: int = 2,
                      ) -> tuple[list[ContrastExample], list[ContrastExample]]:
    """Full per-sequence example pool: hard samples plus pooled segments."""
    plan = select_hard_examples(predictions, labels, k_per_class,
                                boundary_radius, rng)
    samples = materialize_examples(projected, plan)
    segments = [ContrastExample(vec, c, LEVEL_SEGMENT)
                for c, vec in segment_features(projected, labels)]
    return samples, segments
