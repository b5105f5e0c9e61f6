"""Training losses with hand-derived analytic gradients.

Covers the classification match loss, the dice/focal mask pair, the shared
squared graph-matching loss over tri-state labels, and the weighted joint
objective. Every gradient here is checked against the central-difference
oracle in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError, as_matrix, as_vector, stable_sigmoid

# Tri-state supervision values. IGNORE cells contribute nothing to any loss.
POSITIVE = 1
NEGATIVE = 0
IGNORE = -1

# Standard defaults; the underlying losses are cited without constants.
DICE_SMOOTHING = 1.0
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25

# Probabilities are clamped before logs to keep losses finite at saturation.
PROB_CLAMP = 1e-7


@dataclass
class LossResult:
    """A finite nonnegative loss value plus gradients keyed by input name."""

    value: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"loss value is not finite: {self.value}")


def _cosine_row(embeddings: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Cosines of q against each embedding row, plus unit rows and |q|."""
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("embedding set contains a zero-norm row")
    nq = float(np.linalg.norm(q))
    if nq == 0.0:
        raise ValueError("query vector has zero norm")
    unit = embeddings / norms[:, None]
    return unit @ q / nq, unit, nq


def classification_match_loss(q, class_embeddings, gt_class: int, tau: float) -> LossResult:
    """Negative log-probability of the ground-truth class under a cosine softmax.

    `class_embeddings` is the full candidate set with the no-object entry at
    index 0. The returned gradient is with respect to `q`.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    q = as_vector(q, "q")
    T = as_matrix(class_embeddings, "class_embeddings")
    if T.shape[1] != q.size:
        raise ShapeError(f"embedding dim {T.shape[1]} != query dim {q.size}")
    n_classes = T.shape[0]
    if not (0 <= gt_class < n_classes):
        raise IndexError(f"gt_class {gt_class} out of range [0, {n_classes})")

    cosines, unit, nq = _cosine_row(T, q)
    z = cosines / tau
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    value = float(lse - z[gt_class])

    p = np.exp(z - lse)
    w = (p - np.eye(1, n_classes, gt_class)[0]) / tau  # dL/dcos per class
    grad_q = (w @ unit) / nq - float(w @ cosines) * q / (nq * nq)
    return LossResult(value, {"q": grad_q})


def dice_loss(pred, gt, smoothing: float = DICE_SMOOTHING) -> LossResult:
    """Soft dice loss between a probability mask and a binary mask."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ShapeError("empty masks")
    if np.any(pred < 0) or np.any(pred > 1):
        raise ValueError("pred entries must lie in [0, 1]")
    inter = float((pred * gt).sum())
    denom = float(pred.sum() + gt.sum() + smoothing)
    value = 1.0 - (2.0 * inter + smoothing) / denom
    grad = -(2.0 * gt * denom - (2.0 * inter + smoothing)) / (denom * denom)
    return LossResult(float(value), {"pred": grad})


def focal_loss(
    pred, gt, gamma: float = FOCAL_GAMMA, alpha_f: float = FOCAL_ALPHA
) -> LossResult:
    """Mean focal loss over pixels, with gradients through the clamp."""
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if not (0.0 < alpha_f < 1.0):
        raise ValueError(f"alpha_f must lie in (0, 1), got {alpha_f}")
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ShapeError("empty masks")

    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = gt > 0.5
    n = pred.size

    value = np.empty_like(p)
    grad = np.empty_like(p)
    pp, pn = p[pos], p[~pos]
    value[pos] = -alpha_f * (1.0 - pp) ** gamma * np.log(pp)
    grad[pos] = alpha_f * (
        gamma * (1.0 - pp) ** (gamma - 1.0) * np.log(pp) if gamma > 0 else 0.0
    ) - alpha_f * (1.0 - pp) ** gamma / pp
    value[~pos] = -(1.0 - alpha_f) * pn**gamma * np.log(1.0 - pn)
    grad[~pos] = -(1.0 - alpha_f) * (
        gamma * pn ** (gamma - 1.0) * np.log(1.0 - pn) if gamma > 0 else 0.0
    ) + (1.0 - alpha_f) * pn**gamma / (1.0 - pn)

    # No gradient flows where the clamp is active.
    grad[(pred <= PROB_CLAMP) | (pred >= 1.0 - PROB_CLAMP)] = 0.0
    return LossResult(float(value.sum() / n), {"pred": grad / n})


def validate_labels(labels) -> np.ndarray:
    """Validate a tri-state label array (values in {POSITIVE, NEGATIVE, IGNORE})."""
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (POSITIVE, NEGATIVE, IGNORE))):
        raise ValueError("labels must be drawn from {positive, negative, ignore}")
    return labels.astype(np.int8)


def graph_matching_loss(scores, labels, normalize: bool = False) -> LossResult:
    """Squared error between sigmoid matching scores and tri-state labels.

    Ignore-labeled cells contribute nothing to either the value or the
    gradient. `normalize=True` divides by the non-ignore count instead of the
    plain summation written in the matching objective.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = validate_labels(labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if np.any(scores <= 0) or np.any(scores >= 1):
        raise ValueError("scores must lie strictly inside (0, 1)")
    mask = labels != IGNORE
    diff = np.where(mask, scores - labels, 0.0)
    value = float((diff * diff).sum())
    grad = 2.0 * diff
    if normalize:
        count = max(int(mask.sum()), 1)
        value /= count
        grad = grad / count
    return LossResult(value, {"scores": grad})


def matching_loss_embeddings(
    nodes, text_embeddings, labels, tau: float, normalize: bool = False
) -> LossResult:
    """Graph-matching loss computed from raw embeddings, with node gradients.

    Scores are sigmoid(cos(text_j, node_i) / tau) over every (node, text)
    pair; the squared tri-state loss is then summed over non-ignore cells.
    Gradients are returned for the visual node embeddings only, the text
    embeddings are constants.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    nodes = as_matrix(nodes, "nodes")
    T = as_matrix(text_embeddings, "text_embeddings")
    labels = validate_labels(labels)
    if nodes.shape[1] != T.shape[1]:
        raise ShapeError(f"embedding dim {nodes.shape[1]} != text dim {T.shape[1]}")
    if labels.shape != (nodes.shape[0], T.shape[0]):
        raise ShapeError(
            f"labels shape {labels.shape} != (nodes, texts) {(nodes.shape[0], T.shape[0])}"
        )

    t_norms = np.linalg.norm(T, axis=1)
    n_norms = np.linalg.norm(nodes, axis=1)
    if np.any(t_norms == 0) or np.any(n_norms == 0):
        raise ValueError("zero-norm embedding in matching loss")
    t_unit = T / t_norms[:, None]
    cos = nodes @ t_unit.T / n_norms[:, None]
    s = stable_sigmoid(cos / tau)

    mask = labels != IGNORE
    diff = np.where(mask, s - labels, 0.0)
    value = float((diff * diff).sum())
    dcos = 2.0 * diff * s * (1.0 - s) / tau
    if normalize:
        count = max(int(mask.sum()), 1)
        value /= count
        dcos = dcos / count
    # d cos(t_j, x_i) / d x_i = t_unit_j / |x_i| - cos_ij * x_i / |x_i|^2
    grad = dcos @ t_unit / n_norms[:, None]
    grad -= (dcos * cos).sum(axis=1)[:, None] * nodes / (n_norms**2)[:, None]
    return LossResult(value, {"nodes": grad})


def total_loss(
    mask_l: float, match_l: float, sp_l: float, cs_l: float, alpha: float, beta: float
) -> float:
    """Weighted joint objective: mask + match + alpha*spatial + beta*channel."""
    parts = (mask_l, match_l, sp_l, cs_l, alpha, beta)
    if not all(np.isfinite(parts)):
        raise ValueError(f"non-finite loss component in {parts}")
    return float(mask_l + match_l + alpha * sp_l + beta * cs_l)
