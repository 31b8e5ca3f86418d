"""Contrastive, multi-positive, and self-teaching losses with exact
score-level gradients.

Seven composite objectives are supported, combining four building blocks:

* single-positive softmax cross-entropy over an anchor's candidates,
* its multi-positive generalization (each positive's denominator holds
  only that positive plus the shared negatives, and the per-positive
  terms are averaged),
* KL divergence from each typoed score distribution to the typo-free
  one (the typo-free distribution is a detached teacher), and
* the dual task of retrieving queries for passages.

All functions return the loss together with d loss / d score for every
input score, so the trainer can chain them through the encoder backward
pass.  Everything is float64 and numerically stabilized via max-shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InputError

KL_EPS = 1e-12


class Method(Enum):
    DR = "dr"
    DR_CL = "dr_cl"
    DR_CL_M = "dr_cl_m"
    DR_DL = "dr_dl"
    DR_DL_M = "dr_dl_m"
    DR_ST_DL = "dr_st_dl"
    DR_ST_DL_M = "dr_st_dl_m"


#: Methods whose objective consumes typoed-query scores.
TYPO_METHODS = frozenset(
    {Method.DR_CL, Method.DR_CL_M, Method.DR_DL_M, Method.DR_ST_DL, Method.DR_ST_DL_M}
)
#: Methods that score queries against other queries (augmented-view losses).
QUERY_VIEW_METHODS = frozenset({Method.DR_CL, Method.DR_CL_M})


@dataclass(frozen=True)
class MethodConfig:
    method: Method
    w1: float = 0.5      # clean-task weight in DR+CL
    w2: float = 0.5      # augmented-view weight in DR+CL
    w: float = 0.5       # dual-task weight in DR+DL
    beta: float = 0.5    # self-teaching (KL) share
    gamma: float = 0.5   # dual-task share inside the contrastive part
    sigma: float = 0.5   # query-direction share inside the KL part
    k: int = 8           # typoed variants per query

    def __post_init__(self):
        for name in ("w1", "w2", "w"):
            if not np.isfinite(getattr(self, name)):
                raise InputError(f"{name} must be finite")
        for name in ("beta", "gamma", "sigma"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InputError(f"{name} must lie in [0, 1]")
        if self.method in TYPO_METHODS and self.k < 1:
            raise InputError(f"{self.method.value} requires k >= 1")


@dataclass(frozen=True)
class ScoreSet:
    """Similarity scores of one anchor against its positives and negatives."""

    pos_scores: np.ndarray
    neg_scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pos_scores", np.asarray(self.pos_scores, dtype=np.float64))
        object.__setattr__(self, "neg_scores", np.asarray(self.neg_scores, dtype=np.float64))
        if self.neg_scores.size == 0:
            raise InputError("neg_scores must be nonempty")
        if not (np.all(np.isfinite(self.pos_scores)) and np.all(np.isfinite(self.neg_scores))):
            raise InputError("scores must be finite")


@dataclass
class BatchScores:
    """All similarity scores for one training batch.

    qp:  [Q, P] clean-query x passage scores.
    positive_index: per query, the column of its positive passage.
    tqp: [Q, K, P] typoed-query x passage scores (typo methods only).
    qq:  [Q, Q] clean-query x clean-query scores (augmented-view methods).
    qv:  [Q, K] clean-query x own-typoed-variant scores (augmented-view).
    """

    qp: np.ndarray
    positive_index: np.ndarray
    tqp: np.ndarray | None = None
    qq: np.ndarray | None = None
    qv: np.ndarray | None = None


@dataclass
class MethodGrads:
    """d loss / d score for every matrix present in the batch."""

    qp: np.ndarray
    tqp: np.ndarray | None = None
    qq: np.ndarray | None = None
    qv: np.ndarray | None = None


def softmax_distribution(scores) -> np.ndarray:
    """Numerically stable softmax over a nonempty score vector."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise InputError("cannot take a softmax of no scores")
    if not np.all(np.isfinite(scores)):
        raise InputError("scores must be finite")
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def _ce_vector(scores: np.ndarray, pos: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of the candidate at index `pos` against the rest;
    grad is softmax(scores) minus the one-hot positive."""
    z = scores - scores.max()
    e = np.exp(z)
    s = e.sum()
    loss = float(np.log(s) - z[pos])
    grad = e / s
    grad[pos] -= 1.0
    return loss, grad


def ce_loss(s: ScoreSet) -> tuple[float, np.ndarray, np.ndarray]:
    """Single-positive contrastive loss.

    Returns (loss, d/d pos_scores, d/d neg_scores)."""
    if s.pos_scores.size != 1:
        raise InputError(
            f"ce_loss needs exactly one positive, got {s.pos_scores.size} "
            "(use mce_loss for multiple)"
        )
    scores = np.concatenate([s.pos_scores, s.neg_scores])
    loss, grad = _ce_vector(scores, 0)
    return loss, grad[:1], grad[1:]


def mce_loss(s: ScoreSet) -> tuple[float, np.ndarray, np.ndarray]:
    """Multi-positive contrastive loss.

    Averages, over the positives, the single-positive loss in which that
    positive competes against only the negatives (other positives are
    excluded from each denominator).  Returns
    (loss, d/d pos_scores, d/d neg_scores)."""
    if s.pos_scores.size == 0:
        raise InputError("mce_loss needs at least one positive")
    n_pos = s.pos_scores.size
    total = 0.0
    d_pos = np.zeros(n_pos)
    d_neg = np.zeros(s.neg_scores.size)
    for j in range(n_pos):
        scores = np.concatenate([s.pos_scores[j : j + 1], s.neg_scores])
        loss_j, grad_j = _ce_vector(scores, 0)
        total += loss_j
        d_pos[j] = grad_j[0] / n_pos
        d_neg += grad_j[1:] / n_pos
    return total / n_pos, d_pos, d_neg


def _clamped_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, KL_EPS))


def kl_self_teaching(
    typoed: np.ndarray, clean: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean KL(typoed_k || clean) over the K typoed distributions.

    `typoed` is [K, C], `clean` is [C]; both are probability vectors over
    the same candidate ordering.  The clean distribution is a constant
    teacher: the returned gradient is d loss / d (typoed pre-softmax
    scores), shape [K, C], and nothing flows into the teacher.
    Probabilities are floored at 1e-12 inside the logs.
    """
    typoed = np.atleast_2d(np.asarray(typoed, dtype=np.float64))
    clean = np.asarray(clean, dtype=np.float64)
    if typoed.shape[1] != clean.shape[0]:
        raise InputError(
            f"candidate count mismatch: typoed {typoed.shape[1]} vs clean {clean.shape[0]}"
        )
    k = typoed.shape[0]
    log_ratio = _clamped_log(typoed) - _clamped_log(clean)  # [K, C]
    per_k = (typoed * log_ratio).sum(axis=1)                # KL per variant
    loss = float(per_k.sum() / k)
    # d/d z of sum t log(t/c) with t = softmax(z):
    #   t_i * (log(t_i/c_i) - KL)
    grad = typoed * (log_ratio - per_k[:, None]) / k
    return loss, grad


def _check_batch(config: MethodConfig, batch: BatchScores) -> tuple[int, int]:
    q, p = batch.qp.shape
    if batch.positive_index.shape != (q,):
        raise InputError("positive_index length must match the query count")
    if config.method in TYPO_METHODS and config.method not in QUERY_VIEW_METHODS:
        if batch.tqp is None:
            raise InputError(f"{config.method.value} requires typoed-query scores (tqp)")
        if batch.tqp.shape != (q, config.k, p):
            raise InputError(
                f"tqp shape {batch.tqp.shape} inconsistent with "
                f"(queries={q}, k={config.k}, passages={p})"
            )
    if config.method in QUERY_VIEW_METHODS:
        if batch.qq is None or batch.qv is None:
            raise InputError(
                f"{config.method.value} requires query-query (qq) and "
                "query-variant (qv) scores"
            )
        if batch.qq.shape != (q, q) or batch.qv.shape != (q, config.k):
            raise InputError("qq/qv shapes inconsistent with the batch")
    return q, p


def _passage_ce(batch: BatchScores, d_qp: np.ndarray) -> float:
    """Mean over queries of the clean passage-retrieval loss; accumulates
    gradients into d_qp."""
    q = batch.qp.shape[0]
    total = 0.0
    for i in range(q):
        loss_i, grad_i = _ce_vector(batch.qp[i], int(batch.positive_index[i]))
        total += loss_i
        d_qp[i] += grad_i / q
    return total / q


def _dual_ce(batch: BatchScores, d_qp: np.ndarray) -> float:
    """Query retrieval: each positive passage scores the batch's clean
    queries; its own query is the positive.

    The positive-first candidate ordering matches _dual_mce's, so the
    k=1 multi-positive reduction is bit-identical, not just close."""
    q = batch.qp.shape[0]
    total = 0.0
    for i in range(q):
        col = int(batch.positive_index[i])
        mask = np.arange(q) != i
        loss_i, d_pos, d_neg = ce_loss(
            ScoreSet(batch.qp[i : i + 1, col], batch.qp[mask, col])
        )
        total += loss_i
        d_qp[i, col] += d_pos[0] / q
        d_qp[mask, col] += d_neg / q
    return total / q


def _dual_mce(
    batch: BatchScores,
    n_variant_positives: int,
    d_qp: np.ndarray,
    d_tqp: np.ndarray,
) -> float:
    """Multi-positive query retrieval: each positive passage treats its
    clean query plus `n_variant_positives` typoed variants as relevant;
    the other clean queries are the negatives."""
    q = batch.qp.shape[0]
    total = 0.0
    neg_rows = [np.arange(q) != i for i in range(q)]
    for i in range(q):
        col = int(batch.positive_index[i])
        mask = neg_rows[i]
        pos = np.concatenate(
            [batch.qp[i : i + 1, col], batch.tqp[i, :n_variant_positives, col]]
        )
        neg = batch.qp[mask, col]
        loss_i, d_pos, d_neg = mce_loss(ScoreSet(pos, neg))
        total += loss_i
        d_qp[i, col] += d_pos[0] / q
        d_tqp[i, :n_variant_positives, col] += d_pos[1:] / q
        d_qp[mask, col] += d_neg / q
    return total / q


def _view_ce(
    batch: BatchScores, variant_index: int, d_qq: np.ndarray, d_qv: np.ndarray
) -> float:
    """Augmented-view loss with a single sampled variant as the positive
    and the other clean queries as negatives."""
    q = batch.qp.shape[0]
    total = 0.0
    for i in range(q):
        mask = np.arange(q) != i
        pos = batch.qv[i, variant_index : variant_index + 1]
        neg = batch.qq[i, mask]
        loss_i, d_pos, d_neg = ce_loss(ScoreSet(pos, neg))
        total += loss_i
        d_qv[i, variant_index] += d_pos[0] / q
        d_qq[i, mask] += d_neg / q
    return total / q


def _view_mce(batch: BatchScores, d_qq: np.ndarray, d_qv: np.ndarray) -> float:
    """Augmented-view loss with all typoed variants as simultaneous
    positives."""
    q = batch.qp.shape[0]
    total = 0.0
    for i in range(q):
        mask = np.arange(q) != i
        loss_i, d_pos, d_neg = mce_loss(ScoreSet(batch.qv[i], batch.qq[i, mask]))
        total += loss_i
        d_qv[i] += d_pos / q
        d_qq[i, mask] += d_neg / q
    return total / q


@dataclass
class KLTeacher:
    """Detached teacher distributions for the self-teaching losses.

    passage_dists[i] is the clean query i's distribution over passages;
    query_dists[i] is the distribution over clean queries for query i's
    positive passage.  Normally these are recomputed from the current
    batch; freezing them lets finite-difference oracles verify the
    detached gradient exactly.
    """

    passage_dists: np.ndarray  # [Q, P]
    query_dists: np.ndarray    # [Q, Q]


def compute_teacher(batch: BatchScores) -> KLTeacher:
    q = batch.qp.shape[0]
    passage = np.stack([softmax_distribution(batch.qp[i]) for i in range(q)])
    query = np.stack(
        [
            softmax_distribution(batch.qp[:, int(batch.positive_index[i])])
            for i in range(q)
        ]
    )
    return KLTeacher(passage, query)


def _kl_passage_direction(
    batch: BatchScores, teacher: KLTeacher, d_tqp: np.ndarray
) -> float:
    """Self-teaching over passage retrieval: for each query, match every
    typoed variant's distribution over passages to the clean one."""
    q = batch.qp.shape[0]
    total = 0.0
    for i in range(q):
        typoed = np.stack([softmax_distribution(row) for row in batch.tqp[i]])
        loss_i, grad_i = kl_self_teaching(typoed, teacher.passage_dists[i])
        total += loss_i
        d_tqp[i] += grad_i / q
    return total / q


def _kl_query_direction(
    batch: BatchScores, teacher: KLTeacher, d_tqp: np.ndarray
) -> float:
    """Self-teaching over query retrieval: for each positive passage,
    match the distribution over the k-th typoed variants of all queries
    to the distribution over the clean queries."""
    q, k, _ = batch.tqp.shape
    total = 0.0
    for i in range(q):
        col = int(batch.positive_index[i])
        typoed = np.stack(
            [softmax_distribution(batch.tqp[:, j, col]) for j in range(k)]
        )
        loss_i, grad_i = kl_self_teaching(typoed, teacher.query_dists[i])
        total += loss_i
        d_tqp[:, :, col] += grad_i.T / q
    return total / q


def method_loss(
    config: MethodConfig,
    batch: BatchScores,
    variant_index: int = 0,
    frozen_teacher: KLTeacher | None = None,
) -> tuple[float, MethodGrads]:
    """Composite objective for the configured method.

    `variant_index` selects the sampled typoed variant for the
    single-positive augmented-view method (the trainer passes
    global_step mod k).  `frozen_teacher` overrides the self-teaching
    teacher distributions (otherwise they are computed from the batch's
    clean scores); either way no gradient flows into the teacher.
    Returns the loss and exact gradients for every score matrix the
    method consumed.
    """
    q, p = _check_batch(config, batch)
    grads = MethodGrads(
        qp=np.zeros_like(batch.qp),
        tqp=None if batch.tqp is None else np.zeros_like(batch.tqp),
        qq=None if batch.qq is None else np.zeros_like(batch.qq),
        qv=None if batch.qv is None else np.zeros_like(batch.qv),
    )
    m = config.method

    if m is Method.DR:
        loss = _passage_ce(batch, grads.qp)

    elif m is Method.DR_CL:
        d_qp = np.zeros_like(batch.qp)
        d_qq = np.zeros_like(batch.qq)
        d_qv = np.zeros_like(batch.qv)
        l_p = _passage_ce(batch, d_qp)
        l_t = _view_ce(batch, variant_index % config.k, d_qq, d_qv)
        loss = config.w1 * l_p + config.w2 * l_t
        grads.qp += config.w1 * d_qp
        grads.qq += config.w2 * d_qq
        grads.qv += config.w2 * d_qv

    elif m is Method.DR_CL_M:
        d_qp = np.zeros_like(batch.qp)
        d_qq = np.zeros_like(batch.qq)
        d_qv = np.zeros_like(batch.qv)
        l_p = _passage_ce(batch, d_qp)
        l_t = _view_mce(batch, d_qq, d_qv)
        loss = config.w1 * l_p + config.w2 * l_t
        grads.qp += config.w1 * d_qp
        grads.qq += config.w2 * d_qq
        grads.qv += config.w2 * d_qv

    elif m is Method.DR_DL:
        d_qp_p = np.zeros_like(batch.qp)
        d_qp_q = np.zeros_like(batch.qp)
        l_p = _passage_ce(batch, d_qp_p)
        l_q = _dual_ce(batch, d_qp_q)
        loss = l_p + config.w * l_q
        grads.qp += d_qp_p + config.w * d_qp_q

    elif m is Method.DR_DL_M:
        d_qp_p = np.zeros_like(batch.qp)
        d_qp_q = np.zeros_like(batch.qp)
        d_tqp = np.zeros_like(batch.tqp)
        l_p = _passage_ce(batch, d_qp_p)
        l_q = _dual_mce(batch, config.k, d_qp_q, d_tqp)
        loss = l_p + config.w * l_q
        grads.qp += d_qp_p + config.w * d_qp_q
        grads.tqp += config.w * d_tqp

    elif m in (Method.DR_ST_DL, Method.DR_ST_DL_M):
        d_qp_p = np.zeros_like(batch.qp)
        d_qp_q = np.zeros_like(batch.qp)
        d_tqp_q = np.zeros_like(batch.tqp)
        d_tqp_klp = np.zeros_like(batch.tqp)
        d_tqp_klq = np.zeros_like(batch.tqp)
        l_p = _passage_ce(batch, d_qp_p)
        if m is Method.DR_ST_DL:
            l_q = _dual_ce(batch, d_qp_q)
        else:
            # Relevant-query set of size k: the typo-free query plus the
            # first k-1 typoed variants, so k=1 reduces exactly to the
            # single-positive method.
            l_q = _dual_mce(batch, config.k - 1, d_qp_q, d_tqp_q)
        teacher = frozen_teacher if frozen_teacher is not None else compute_teacher(batch)
        l_klp = _kl_passage_direction(batch, teacher, d_tqp_klp)
        l_klq = _kl_query_direction(batch, teacher, d_tqp_klq)
        b, g, s = config.beta, config.gamma, config.sigma
        loss = (1 - b) * ((1 - g) * l_p + g * l_q) + b * ((1 - s) * l_klp + s * l_klq)
        grads.qp += (1 - b) * ((1 - g) * d_qp_p + g * d_qp_q)
        grads.tqp += (1 - b) * g * d_tqp_q + b * ((1 - s) * d_tqp_klp + s * d_tqp_klq)

    else:
        raise InputError(f"unknown method {m!r}")

    return loss, grads
