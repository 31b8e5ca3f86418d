"""In-batch-negative training loop for the toy dual encoder.

Each step encodes the batch's clean queries, its passage pool (every
query's positive plus its hard negatives), and, for typo-aware methods,
the typoed query variants; assembles the score matrices; evaluates the
configured objective; and backpropagates the exact score gradients
through the encoder into an AdamW update with linear warmup/decay.

The loop is sequential and fully determined by (dataset, configs, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .encoder import EncoderConfig, EncoderParams, TokenBag
from .errors import InputError, NumericalError
from .losses import (
    TYPO_METHODS,
    QUERY_VIEW_METHODS,
    BatchScores,
    MethodConfig,
    MethodGrads,
    method_loss,
)
from .rng import derive_seed
from .typos import AugmentationPolicy, generate_variants


@dataclass
class TrainingInstance:
    query_id: str
    query_text: str
    positive_passage_id: str
    hard_negative_passage_ids: list[str]
    typo_variants: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.positive_passage_id in self.hard_negative_passage_ids:
            raise InputError(
                f"query {self.query_id}: positive passage "
                f"{self.positive_passage_id} also listed as hard negative"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; the full-scale values from the original setup
    (batch 16, 7 hard negatives, 150K steps, 10K warmup, lr 1e-5) remain
    reachable through config."""

    batch_size: int = 8
    hard_negatives_per_query: int = 3
    learning_rate: float = 5e-3
    warmup_steps: int = 200
    total_steps: int = 2000
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    freeze_typos: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise InputError("batch_size must be >= 2 (in-batch negatives)")
        if self.warmup_steps > self.total_steps:
            raise InputError("warmup_steps must not exceed total_steps")


@dataclass
class DualEncoder:
    """Query and passage towers; the same EncoderParams object serves both
    towers when weights are shared."""

    config: EncoderConfig
    query: EncoderParams
    passage: EncoderParams

    @property
    def shared(self) -> bool:
        return self.query is self.passage

    def param_groups(self) -> dict[str, np.ndarray]:
        groups = {
            "query.embedding": self.query.embedding,
            "query.projection": self.query.projection,
            "query.projection_bias": self.query.projection_bias,
        }
        if not self.shared:
            groups.update(
                {
                    "passage.embedding": self.passage.embedding,
                    "passage.projection": self.passage.projection,
                    "passage.projection_bias": self.passage.projection_bias,
                }
            )
        return groups


def init_model(config: EncoderConfig, seed: int) -> DualEncoder:
    rng = np.random.default_rng(derive_seed(seed, "init"))
    query = enc.init_params(config, rng)
    passage = query if config.shared_weights else enc.init_params(config, rng)
    return DualEncoder(config, query, passage)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_model(cls, model: DualEncoder) -> "OptimizerState":
        groups = model.param_groups()
        return cls(
            m={k: np.zeros_like(p) for k, p in groups.items()},
            v={k: np.zeros_like(p) for k, p in groups.items()},
        )


def lr_at_step(config: TrainConfig, step: int) -> float:
    """Linear warmup to the base rate, then linear decay to zero."""
    if not 0 <= step <= config.total_steps:
        raise InputError(f"step {step} outside [0, {config.total_steps}]")
    base = config.learning_rate
    if step < config.warmup_steps:
        return base * step / config.warmup_steps
    if config.total_steps == config.warmup_steps:
        return base if step < config.total_steps else 0.0
    return base * (config.total_steps - step) / (config.total_steps - config.warmup_steps)


def optimizer_step(
    model: DualEncoder,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
) -> None:
    """AdamW update in place: bias-corrected adaptive moments, with weight
    decay applied directly to the parameters (decoupled)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter group {name}")
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, param in model.param_groups().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
        param -= lr * config.weight_decay * param


class _BagCache:
    def __init__(self, config: EncoderConfig):
        self.config = config
        self._cache: dict[str, TokenBag] = {}

    def get(self, text: str) -> TokenBag:
        bag = self._cache.get(text)
        if bag is None:
            bag = enc.tokenize(text, self.config)
            self._cache[text] = bag
        return bag


@dataclass
class BatchContext:
    """Everything needed to push score gradients back into the encoder."""

    query_bags: list[TokenBag]
    passage_bags: list[TokenBag]
    variant_bags: list[TokenBag]  # flattened [Q*K]
    u: np.ndarray                  # [Q, D] clean query encodings
    v: np.ndarray                  # [P, D] passage encodings
    t: np.ndarray | None           # [Q, K, D] variant encodings
    dedup_warnings: int = 0


def build_batch(
    instances: list[TrainingInstance],
    model: DualEncoder,
    collection: dict[str, str],
    method: MethodConfig,
    cache: _BagCache | None = None,
) -> tuple[BatchScores, BatchContext]:
    """Assemble the score matrices for one batch.

    The passage pool is each query's positive followed by its hard
    negatives, concatenated over the batch; duplicate passage ids are
    dropped (keeping the first occurrence) with a warning count.
    """
    cache = cache or _BagCache(model.config)
    pool_pids: list[str] = []
    seen: dict[str, int] = {}
    dedup = 0
    for inst in instances:
        for pid in [inst.positive_passage_id, *inst.hard_negative_passage_ids]:
            if pid in seen:
                dedup += 1
                continue
            seen[pid] = len(pool_pids)
            pool_pids.append(pid)
    positive_index = np.array(
        [seen[inst.positive_passage_id] for inst in instances], dtype=np.int64
    )

    missing = [pid for pid in pool_pids if pid not in collection]
    if missing:
        raise InputError(f"passage ids not in collection: {missing[:5]}")

    query_bags = [cache.get(inst.query_text) for inst in instances]
    passage_bags = [cache.get(collection[pid]) for pid in pool_pids]
    u = enc.encode_batch(model.query, query_bags)
    v = enc.encode_batch(model.passage, passage_bags)
    qp = u @ v.T

    tqp = qq = qv = None
    variant_bags: list[TokenBag] = []
    t = None
    if method.method in TYPO_METHODS:
        k = method.k
        for inst in instances:
            if len(inst.typo_variants) != k:
                raise InputError(
                    f"query {inst.query_id} has {len(inst.typo_variants)} typo "
                    f"variants, expected k={k}"
                )
            variant_bags.extend(cache.get(text) for text in inst.typo_variants)
        t_flat = enc.encode_batch(model.query, variant_bags)
        t = t_flat.reshape(len(instances), k, -1)
        if method.method in QUERY_VIEW_METHODS:
            qq = u @ u.T
            qv = np.einsum("qd,qkd->qk", u, t)
        else:
            tqp = np.einsum("qkd,pd->qkp", t, v)

    scores = BatchScores(qp=qp, positive_index=positive_index, tqp=tqp, qq=qq, qv=qv)
    ctx = BatchContext(query_bags, passage_bags, variant_bags, u, v, t, dedup)
    return scores, ctx


def backward_batch(
    model: DualEncoder, ctx: BatchContext, grads: MethodGrads
) -> dict[str, np.ndarray]:
    """Chain score-matrix gradients through the encodings into dense
    per-parameter-group gradients."""
    du = grads.qp @ ctx.v
    dv = grads.qp.T @ ctx.u
    dt = None
    if grads.tqp is not None:
        dt = np.einsum("qkp,pd->qkd", grads.tqp, ctx.v)
        dv += np.einsum("qkp,qkd->pd", grads.tqp, ctx.t)
    if grads.qq is not None:
        du += grads.qq @ ctx.u + grads.qq.T @ ctx.u
    if grads.qv is not None:
        if dt is None:
            dt = np.zeros_like(ctx.t)
        du += np.einsum("qk,qkd->qd", grads.qv, ctx.t)
        dt += grads.qv[:, :, None] * ctx.u[:, None, :]

    query_bags = list(ctx.query_bags)
    query_grad_rows = du
    if dt is not None:
        query_bags = query_bags + ctx.variant_bags
        query_grad_rows = np.concatenate([du, dt.reshape(-1, du.shape[1])])

    def densify(params: EncoderParams, bags, rows) -> dict[str, np.ndarray]:
        sparse = enc.encode_backward_batch(params, bags, rows)
        d_emb = np.zeros_like(params.embedding)
        d_emb[sparse.embedding_ids] = sparse.embedding_rows
        return {
            "embedding": d_emb,
            "projection": sparse.projection,
            "projection_bias": sparse.projection_bias,
        }

    if model.shared:
        q_grads = densify(model.query, query_bags + ctx.passage_bags,
                          np.concatenate([query_grad_rows, dv]))
        return {f"query.{k}": g for k, g in q_grads.items()}
    q_grads = densify(model.query, query_bags, query_grad_rows)
    p_grads = densify(model.passage, ctx.passage_bags, dv)
    out = {f"query.{k}": g for k, g in q_grads.items()}
    out.update({f"passage.{k}": g for k, g in p_grads.items()})
    return out


def forward_batch(
    instances: list[TrainingInstance],
    model: DualEncoder,
    collection: dict[str, str],
    method: MethodConfig,
    variant_index: int = 0,
    cache: _BagCache | None = None,
    frozen_teacher=None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact parameter gradients for one batch (used by the train
    loop and by finite-difference verification)."""
    scores, ctx = build_batch(instances, model, collection, method, cache)
    loss, score_grads = method_loss(method, scores, variant_index, frozen_teacher)
    param_grads = backward_batch(model, ctx, score_grads)
    return loss, param_grads


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    lr: float


def _epoch_variants(
    inst: TrainingInstance,
    method: MethodConfig,
    config: TrainConfig,
    policy: AugmentationPolicy,
    epoch: int,
) -> list[str]:
    if config.freeze_typos and inst.typo_variants:
        if len(inst.typo_variants) < method.k:
            raise InputError(
                f"query {inst.query_id}: frozen variants fewer than k={method.k}"
            )
        return inst.typo_variants[: method.k]
    seed = derive_seed(config.seed, "typo", epoch, inst.query_id)
    variants, _ = generate_variants(
        inst.query_text,
        AugmentationPolicy(
            k=method.k,
            min_word_len=policy.min_word_len,
            transforms_per_variant=policy.transforms_per_variant,
            seed=seed,
        ),
    )
    return variants


def train(
    instances: list[TrainingInstance],
    collection: dict[str, str],
    method: MethodConfig,
    config: TrainConfig,
    encoder_config: EncoderConfig,
    policy: AugmentationPolicy | None = None,
) -> tuple[DualEncoder, list[TrainLogEntry]]:
    """Run the full training loop; reproducible from (inputs, seed).

    Typo variants are regenerated once per epoch from an epoch-derived
    seed unless `config.freeze_typos` pins the variants stored on each
    instance.
    """
    if not instances:
        raise InputError("training dataset is empty")
    policy = policy or AugmentationPolicy(k=max(method.k, 1))
    model = init_model(encoder_config, config.seed)
    state = OptimizerState.for_model(model)
    cache = _BagCache(encoder_config)
    log: list[TrainLogEntry] = []

    needs_typos = method.method in TYPO_METHODS
    batches_per_epoch = max(len(instances) // config.batch_size, 1)
    order: np.ndarray | None = None
    epoch = -1
    epoch_variants: dict[str, list[str]] = {}

    h = config.hard_negatives_per_query
    for step in range(config.total_steps):
        new_epoch = step // batches_per_epoch
        if new_epoch != epoch:
            epoch = new_epoch
            shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle", epoch))
            order = shuffle_rng.permutation(len(instances))
            if needs_typos:
                epoch_variants = {
                    inst.query_id: _epoch_variants(inst, method, config, policy, epoch)
                    for inst in instances
                }
        offset = (step % batches_per_epoch) * config.batch_size
        idx = order[offset : offset + config.batch_size]
        if idx.size < config.batch_size:
            idx = order[: config.batch_size]
        batch = []
        for i in idx:
            inst = instances[int(i)]
            batch.append(
                TrainingInstance(
                    query_id=inst.query_id,
                    query_text=inst.query_text,
                    positive_passage_id=inst.positive_passage_id,
                    hard_negative_passage_ids=inst.hard_negative_passage_ids[:h],
                    typo_variants=epoch_variants.get(inst.query_id, []) if needs_typos else [],
                )
            )
        loss, grads = forward_batch(
            batch, model, collection, method,
            variant_index=step % max(method.k, 1), cache=cache,
        )
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at step {step}")
        lr = lr_at_step(config, step)
        optimizer_step(model, grads, state, lr, config)
        log.append(TrainLogEntry(step, loss, lr))
    return model, log
