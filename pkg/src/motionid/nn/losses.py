"""
The three training losses and their combination.

Every loss returns (value, gradient(s)) so models can run backward without a
graph.
"""

from dataclasses import dataclass, InitVar
from typing import Tuple
import logging

import numpy as np

from motionid.errors import BadTarget, DegenerateBatch, ShapeMismatch
from motionid.nn.layers import log_softmax, softmax


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    """Triplet margin."""

    p_norm: float = 2.0
    """Order of the distance used by the triplet loss."""

    alpha_tm: float = 1.0
    """Weight of the triplet loss in the total."""

    temperature: float = 0.1
    """Supervised contrastive temperature."""

    sc_reduction: str = "mean"
    """'sum' over anchors (the textbook formula) or 'mean' (batch-size independent)."""

    skip_validation: InitVar[bool] = False

    def __post_init__(self, skip_validation: bool):
        if skip_validation:
            return
        assert self.margin > 0, "Triplet margin must be positive"
        assert self.p_norm >= 1, "Triplet distance must be a norm (p >= 1)"
        assert self.alpha_tm >= 0, "Triplet weight must be non-negative"
        assert self.temperature > 0, "Temperature must be positive"
        assert self.sc_reduction in ("sum", "mean"), "Reduction must be 'sum' or 'mean'"


def cross_entropy(logits: np.ndarray, targets) -> Tuple[float, np.ndarray]:
    """
    Mean of -log softmax(logits)[target] over the batch, and d loss / d logits.
    """
    logits = np.asarray(logits)
    squeeze = logits.ndim == 1
    if squeeze:
        logits = logits[None, :]
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"{len(targets)} targets for {logits.shape[0]} rows of logits")
    classes = logits.shape[1]
    if np.any(targets < 0) or np.any(targets >= classes):
        raise BadTarget(f"Targets must lie in [0, {classes}), got {targets.tolist()}")
    batch = logits.shape[0]
    rows = np.arange(batch)
    loss = float(-log_softmax(logits)[rows, targets].mean())
    grad = softmax(logits)
    grad[rows, targets] -= 1.0
    grad /= batch
    return loss, (grad[0] if squeeze else grad)


def _pnorm_and_grad(diff: np.ndarray, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """Row norms of DIFF and their gradient with respect to DIFF (0 at 0)."""
    absd = np.abs(diff)
    norm = np.sum(absd**p, axis=1) ** (1.0 / p)
    safe = np.where(norm > 0, norm, 1.0)[:, None]
    grad = np.sign(diff) * absd ** (p - 1) / safe ** (p - 1)
    grad[norm == 0] = 0.0
    return norm, grad


def triplet_margin(
    anchor: np.ndarray,
    positive: np.ndarray,
    negative: np.ndarray,
    margin: float = 1.0,
    p_norm: float = 2.0,
) -> Tuple[float, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Mean of max(d(a, p) - d(a, n) + margin, 0) with d the p-norm distance.

    Returns the loss and the gradients for anchor, positive and negative.
    """
    anchor, positive, negative = (
        np.atleast_2d(np.asarray(x)) for x in (anchor, positive, negative)
    )
    if not (anchor.shape == positive.shape == negative.shape):
        raise ShapeMismatch(
            f"Triplet shapes differ: {anchor.shape}, {positive.shape}, {negative.shape}"
        )
    batch = anchor.shape[0]
    d_ap, g_ap = _pnorm_and_grad(anchor - positive, p_norm)
    d_an, g_an = _pnorm_and_grad(anchor - negative, p_norm)
    hinge = d_ap - d_an + margin
    active = (hinge > 0).astype(anchor.dtype)[:, None] / batch
    loss = float(np.maximum(hinge, 0).mean())
    d_anchor = active * (g_ap - g_an)
    d_positive = -active * g_ap
    d_negative = active * g_an
    return loss, (d_anchor, d_positive, d_negative)


def pairwise_distances(x: np.ndarray, p_norm: float = 2.0) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sum(np.abs(diff) ** p_norm, axis=-1) ** (1.0 / p_norm)


def mine_triplets(
    embeddings: np.ndarray, labels, p_norm: float = 2.0
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Within-batch mining: every (anchor, positive) pair is matched with the
    anchor's hardest (closest) negative. Anchors without a positive or without
    a negative are skipped.
    """
    labels = np.asarray(labels)
    dist = pairwise_distances(np.asarray(embeddings, dtype=np.float64), p_norm)
    same = labels[:, None] == labels[None, :]
    n = len(labels)
    anchors, positives, negatives = [], [], []
    for i in range(n):
        pos = np.flatnonzero(same[i] & (np.arange(n) != i))
        neg = np.flatnonzero(~same[i])
        if len(pos) == 0 or len(neg) == 0:
            continue
        hardest = neg[np.argmin(dist[i, neg])]
        for j in pos:
            anchors.append(i)
            positives.append(j)
            negatives.append(hardest)
    as_index = lambda v: np.array(v, dtype=np.int64)  # noqa: E731
    return as_index(anchors), as_index(positives), as_index(negatives)


def batch_triplet_loss(
    embeddings: np.ndarray, labels, cfg: LossConfig
) -> Tuple[float, np.ndarray]:
    """
    Triplet loss over mined triplets and its gradient with respect to EMBEDDINGS.
    """
    a, p, n = mine_triplets(embeddings, labels, cfg.p_norm)
    grad = np.zeros_like(embeddings)
    if len(a) == 0:
        return 0.0, grad
    loss, (da, dp, dn) = triplet_margin(
        embeddings[a], embeddings[p], embeddings[n], cfg.margin, cfg.p_norm
    )
    np.add.at(grad, a, da)
    np.add.at(grad, p, dp)
    np.add.at(grad, n, dn)
    return loss, grad


def supervised_contrastive(
    z: np.ndarray, labels, temperature: float = 0.1, reduction: str = "sum"
) -> Tuple[float, np.ndarray]:
    """
    L = sum_i -1/|P(i)| sum_{p in P(i)} log(exp(z_i.z_p / t) / sum_{a != i} exp(z_i.z_a / t))

    P(i) holds the other samples sharing i's label. With reduction 'mean' the
    sum over anchors becomes a mean. Returns the loss and d loss / d z.
    """
    z = np.asarray(z)
    labels = np.asarray(labels)
    n = z.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatch(f"{labels.shape} labels for {n} embeddings")
    self_mask = np.eye(n, dtype=bool)
    positive = (labels[:, None] == labels[None, :]) & ~self_mask
    counts = positive.sum(axis=1)
    if np.any(counts == 0):
        raise DegenerateBatch(
            f"{int(np.sum(counts == 0))} sample(s) have no positive in the batch"
        )
    logits = z @ z.T / temperature
    logits = np.where(self_mask, -np.inf, logits)
    logits = logits - logits.max(axis=1, keepdims=True)
    log_prob = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    per_anchor = -np.where(positive, log_prob, 0.0).sum(axis=1) / counts
    scale = 1.0 / n if reduction == "mean" else 1.0
    loss = float(per_anchor.sum() * scale)

    prob = np.where(self_mask, 0.0, np.exp(log_prob))
    g = (prob - positive / counts[:, None]) * scale
    dz = (g + g.T) @ z / temperature
    return loss, dz.astype(z.dtype, copy=False)


def total_loss(ce: float, tm: float, sc: float, cfg: LossConfig) -> float:
    return ce + cfg.alpha_tm * tm + sc
