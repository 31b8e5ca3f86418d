"""Toy dual encoder: hashed character n-grams, mean pooling, linear head.

Each whitespace-delimited word is lowercased, padded with '#' on both
sides, and split into contiguous character n-grams.  N-grams are hashed
with FNV-1a (64-bit) modulo the bucket count into an embedding table.
A text encodes to `projection @ mean(embedding rows) + projection_bias`;
similarity between texts is the raw dot product of their encodings.

Typos perturb only the few n-grams that touch the edited character, which
is exactly the sensitivity the training objectives work against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .rng import fnv1a64

_NGRAM_HASH_CACHE: dict[str, int] = {}


@dataclass(frozen=True)
class EncoderConfig:
    ngram_n: int = 3
    num_buckets: int = 4096
    embed_dim: int = 64
    shared_weights: bool = True

    def __post_init__(self):
        if self.ngram_n < 2:
            raise InputError("ngram_n must be >= 2")
        if self.num_buckets < 16:
            raise InputError("num_buckets must be >= 16")
        if self.embed_dim < 2:
            raise InputError("embed_dim must be >= 2")


@dataclass
class EncoderParams:
    embedding: np.ndarray       # [num_buckets, embed_dim]
    projection: np.ndarray      # [embed_dim, embed_dim]
    projection_bias: np.ndarray  # [embed_dim]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.embedding.copy(), self.projection.copy(), self.projection_bias.copy()
        )


@dataclass(frozen=True)
class TokenBag:
    """Multiset of bucket ids, stored as unique ids with counts."""

    ids: np.ndarray     # unique bucket ids, sorted, int64
    counts: np.ndarray  # multiplicities, float64
    total: float        # sum of counts


@dataclass
class EncoderGradients:
    """Gradients from one backward pass.  Embedding rows are sparse:
    only buckets touched by the bag appear."""

    embedding_ids: np.ndarray    # unique bucket ids
    embedding_rows: np.ndarray   # [len(ids), embed_dim]
    projection: np.ndarray       # [embed_dim, embed_dim]
    projection_bias: np.ndarray  # [embed_dim]


def init_params(config: EncoderConfig, rng: np.random.Generator,
                embed_scale: float = 1.0, proj_noise: float = 0.01) -> EncoderParams:
    """Random initialization: small Gaussian embeddings, near-identity
    projection, zero bias."""
    embedding = rng.normal(0.0, embed_scale, size=(config.num_buckets, config.embed_dim))
    projection = np.eye(config.embed_dim) + rng.normal(
        0.0, proj_noise, size=(config.embed_dim, config.embed_dim)
    )
    bias = np.zeros(config.embed_dim)
    return EncoderParams(embedding, projection, bias)


def _hash_ngram(gram: str) -> int:
    h = _NGRAM_HASH_CACHE.get(gram)
    if h is None:
        h = fnv1a64(gram.encode("utf-8"))
        _NGRAM_HASH_CACHE[gram] = h
    return h


def bucket_ids(text: str, config: EncoderConfig) -> list[int]:
    """Raw (multiset) bucket ids for a text, in occurrence order."""
    text = text.lower()
    words = text.split()
    if not words:
        return [_hash_ngram("#") % config.num_buckets]
    n = config.ngram_n
    ids = []
    for word in words:
        padded = "#" + word + "#"
        if len(padded) < n:
            ids.append(_hash_ngram(padded) % config.num_buckets)
            continue
        for i in range(len(padded) - n + 1):
            ids.append(_hash_ngram(padded[i : i + n]) % config.num_buckets)
    return ids


def tokenize(text: str, config: EncoderConfig) -> TokenBag:
    ids = np.asarray(bucket_ids(text, config), dtype=np.int64)
    uniq, counts = np.unique(ids, return_counts=True)
    counts = counts.astype(np.float64)
    return TokenBag(uniq, counts, float(counts.sum()))


def encode(params: EncoderParams, bag: TokenBag) -> np.ndarray:
    if bag.ids.size == 0:
        raise InputError("cannot encode an empty token bag")
    mean = (bag.counts @ params.embedding[bag.ids]) / bag.total
    return params.projection @ mean + params.projection_bias


def encode_batch(params: EncoderParams, bags: list[TokenBag]) -> np.ndarray:
    """Encode many bags at once; returns [len(bags), embed_dim]."""
    if any(b.ids.size == 0 for b in bags):
        raise InputError("cannot encode an empty token bag")
    means = np.stack(
        [(b.counts @ params.embedding[b.ids]) / b.total for b in bags]
    )
    return means @ params.projection.T + params.projection_bias


def encode_backward(
    params: EncoderParams, bag: TokenBag, grad_out: np.ndarray
) -> EncoderGradients:
    """Exact gradients of grad_out . encode(params, bag) w.r.t. params."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (params.embedding.shape[1],):
        raise InputError(
            f"grad_out shape {grad_out.shape} does not match embed_dim "
            f"{params.embedding.shape[1]}"
        )
    mean = (bag.counts @ params.embedding[bag.ids]) / bag.total
    d_bias = grad_out.copy()
    d_proj = np.outer(grad_out, mean)
    d_mean = params.projection.T @ grad_out
    d_rows = np.outer(bag.counts / bag.total, d_mean)
    return EncoderGradients(bag.ids.copy(), d_rows, d_proj, d_bias)


def encode_backward_batch(
    params: EncoderParams, bags: list[TokenBag], grad_out: np.ndarray
) -> EncoderGradients:
    """Sum of encode_backward over (bag_i, grad_out[i]) pairs, merged into
    one sparse record."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    means = np.stack(
        [(b.counts @ params.embedding[b.ids]) / b.total for b in bags]
    )
    d_bias = grad_out.sum(axis=0)
    d_proj = grad_out.T @ means
    d_means = grad_out @ params.projection  # [T, D]
    all_ids = np.concatenate([b.ids for b in bags])
    all_rows = np.concatenate(
        [
            np.outer(b.counts / b.total, d_means[i])
            for i, b in enumerate(bags)
        ]
    )
    uniq, inverse = np.unique(all_ids, return_inverse=True)
    merged = np.zeros((uniq.size, params.embedding.shape[1]))
    np.add.at(merged, inverse, all_rows)
    return EncoderGradients(uniq, merged, d_proj, d_bias)
