"""Dataset files, checkpoint persistence, and the synthetic benchmark.

File formats:

* collection / queries: TSV ``id<TAB>text``, UTF-8, LF endings.
* qrels: four whitespace-separated columns ``qid 0 pid grade``.
* training triples: JSON lines ``{"qid", "pos_pid", "neg_pids"}``.
* checkpoints: a line-oriented text file carrying the encoder config,
  every parameter array as decimal float64 values in row-major order,
  and a SHA-256 checksum; save -> load round-trips bit-exactly because
  floats are written with shortest round-trip repr.

The synthetic benchmark builds pseudo-word passages (consonant-vowel
syllable strings), queries that copy words from their one relevant
passage, and hard negatives chosen as the non-relevant passages with the
highest word overlap with the query.  Everything is seeded and
byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderParams
from .errors import DataError, InputError
from .evaluation import Qrels, read_qrels, write_qrels
from .rng import derive_seed
from .trainer import DualEncoder, TrainingInstance


@dataclass
class Triple:
    qid: str
    pos_pid: str
    neg_pids: list[str]


@dataclass
class Dataset:
    collection: dict[str, str]
    queries: dict[str, str]
    qrels: Qrels
    triples: list[Triple]

    def training_instances(self) -> list[TrainingInstance]:
        return [
            TrainingInstance(
                query_id=t.qid,
                query_text=self.queries[t.qid],
                positive_passage_id=t.pos_pid,
                hard_negative_passage_ids=list(t.neg_pids),
            )
            for t in self.triples
        ]


def _read_tsv_map(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 tab-separated fields")
            key, text = parts
            if key in out:
                raise DataError(f"{path}:{lineno}: duplicate id {key!r}")
            out[key] = text
    return out


def _write_tsv_map(mapping: dict[str, str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, text in mapping.items():
            if "\t" in text:
                raise DataError(f"text for id {key!r} contains a tab")
            f.write(f"{key}\t{text}\n")


def _read_triples(path) -> list[Triple]:
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                triples.append(
                    Triple(rec["qid"], rec["pos_pid"], list(rec["neg_pids"]))
                )
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: malformed triple ({e})") from None
    return triples


def _write_triples(triples: list[Triple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in triples:
            f.write(
                json.dumps(
                    {"qid": t.qid, "pos_pid": t.pos_pid, "neg_pids": t.neg_pids},
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_dataset(collection_path, queries_path, qrels_path, triples_path) -> Dataset:
    """Load and cross-check the four dataset files.

    Dangling ids (a qrels/triple passage missing from the collection, or
    a triple query missing from the queries file) raise a DataError
    naming the offenders.
    """
    collection = _read_tsv_map(collection_path)
    queries = _read_tsv_map(queries_path)
    qrels = read_qrels(qrels_path) if qrels_path is not None else {}
    triples = _read_triples(triples_path) if triples_path is not None else []

    dangling: list[str] = []
    for qid, judged in qrels.items():
        for pid in judged:
            if pid not in collection:
                dangling.append(f"qrels passage {pid}")
    for t in triples:
        if t.qid not in queries:
            dangling.append(f"triple query {t.qid}")
        for pid in [t.pos_pid, *t.neg_pids]:
            if pid not in collection:
                dangling.append(f"triple passage {pid}")
    if dangling:
        raise DataError(
            "referential integrity violated: " + ", ".join(sorted(set(dangling))[:10])
        )
    return Dataset(collection, queries, qrels, triples)


# --- synthetic benchmark -------------------------------------------------

_CONSONANTS = "bcdfghjklmnpqrstvwz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    num_passages: int = 2000
    num_train_queries: int = 500
    num_eval_queries: int = 200
    vocab_size: int = 300
    passage_len_words: int = 6
    query_len_words: int = 3
    hard_negatives_per_query: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in (
            "num_passages",
            "num_train_queries",
            "num_eval_queries",
            "vocab_size",
            "passage_len_words",
            "query_len_words",
            "hard_negatives_per_query",
        ):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.num_passages < self.num_train_queries + self.num_eval_queries:
            raise InputError(
                "num_passages must cover all queries (one relevant passage each)"
            )
        if self.query_len_words > self.passage_len_words:
            raise InputError("query_len_words cannot exceed passage_len_words")
        if self.hard_negatives_per_query >= self.num_passages - 1:
            raise InputError("not enough passages for the requested hard negatives")


def _make_vocab(config: SynthConfig, rng: np.random.Generator) -> list[str]:
    vocab: list[str] = []
    seen: set[str] = set()
    while len(vocab) < config.vocab_size:
        n_syll = int(rng.integers(2, 5))
        word = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(n_syll)
        )
        if word not in seen:
            seen.add(word)
            vocab.append(word)
    return vocab


@dataclass
class SynthBenchmark:
    train: Dataset
    eval: Dataset
    paths: dict[str, Path]


def generate_synthetic(config: SynthConfig, out_dir) -> SynthBenchmark:
    """Build and write the seeded synthetic benchmark.

    Every query gets exactly one relevant passage; the query's words are
    drawn from that passage, so lexical (and hence n-gram) overlap
    guarantees a learnable signal.  Hard negatives are the non-relevant
    passages with the highest word overlap with the query (ties broken by
    passage id).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(config.seed, "synth"))
    vocab = _make_vocab(config, rng)

    pids = [f"p{i:06d}" for i in range(config.num_passages)]
    collection: dict[str, str] = {}
    passage_words: dict[str, list[str]] = {}
    for pid in pids:
        words = [vocab[int(j)] for j in rng.integers(len(vocab), size=config.passage_len_words)]
        passage_words[pid] = words
        collection[pid] = " ".join(words)

    # inverted index for overlap-based hard negatives
    postings: dict[str, set[str]] = {}
    for pid, words in passage_words.items():
        for w in set(words):
            postings.setdefault(w, set()).add(pid)

    def make_queries(prefix: str, count: int, offset: int) -> tuple[dict[str, str], Qrels]:
        queries: dict[str, str] = {}
        qrels: Qrels = {}
        for i in range(count):
            qid = f"{prefix}{i:05d}"
            pid = pids[offset + i]
            unique_words = sorted(set(passage_words[pid]))
            if len(unique_words) >= config.query_len_words:
                picked = rng.choice(
                    unique_words, size=config.query_len_words, replace=False
                )
            else:
                picked = rng.choice(unique_words, size=config.query_len_words, replace=True)
            queries[qid] = " ".join(str(w) for w in picked)
            qrels[qid] = {pid: 1}
        return queries, qrels

    train_queries, train_qrels = make_queries("qtrain", config.num_train_queries, 0)
    eval_queries, eval_qrels = make_queries(
        "qeval", config.num_eval_queries, config.num_train_queries
    )

    def hard_negatives(qid: str, query_text: str, pos_pid: str) -> list[str]:
        overlap: Counter[str] = Counter()
        for w in set(query_text.split()):
            for pid in postings.get(w, ()):
                overlap[pid] += 1
        overlap.pop(pos_pid, None)
        ranked = sorted(overlap.items(), key=lambda e: (-e[1], e[0]))
        negs = [pid for pid, _ in ranked[: config.hard_negatives_per_query]]
        if len(negs) < config.hard_negatives_per_query:
            # pad with lowest-id non-relevant passages that have no overlap
            for pid in pids:
                if pid != pos_pid and pid not in negs:
                    negs.append(pid)
                    if len(negs) == config.hard_negatives_per_query:
                        break
        return negs

    triples = [
        Triple(qid, list(train_qrels[qid])[0], hard_negatives(qid, text, list(train_qrels[qid])[0]))
        for qid, text in train_queries.items()
    ]

    paths = {
        "collection": out_dir / "collection.tsv",
        "train_queries": out_dir / "queries.train.tsv",
        "eval_queries": out_dir / "queries.eval.tsv",
        "train_qrels": out_dir / "qrels.train.txt",
        "eval_qrels": out_dir / "qrels.eval.txt",
        "triples": out_dir / "triples.train.jsonl",
    }
    _write_tsv_map(collection, paths["collection"])
    _write_tsv_map(train_queries, paths["train_queries"])
    _write_tsv_map(eval_queries, paths["eval_queries"])
    write_qrels(train_qrels, paths["train_qrels"])
    write_qrels(eval_qrels, paths["eval_qrels"])
    _write_triples(triples, paths["triples"])

    train = Dataset(collection, train_queries, train_qrels, triples)
    eval_ds = Dataset(collection, eval_queries, eval_qrels, [])
    return SynthBenchmark(train, eval_ds, paths)


def load_benchmark_dir(data_dir) -> SynthBenchmark:
    """Load a directory written by generate_synthetic (or hand-assembled
    with the same file names)."""
    data_dir = Path(data_dir)
    paths = {
        "collection": data_dir / "collection.tsv",
        "train_queries": data_dir / "queries.train.tsv",
        "eval_queries": data_dir / "queries.eval.tsv",
        "train_qrels": data_dir / "qrels.train.txt",
        "eval_qrels": data_dir / "qrels.eval.txt",
        "triples": data_dir / "triples.train.jsonl",
    }
    for name, p in paths.items():
        if not p.exists():
            raise DataError(f"missing {name} file: {p}")
    train = load_dataset(
        paths["collection"], paths["train_queries"], paths["train_qrels"], paths["triples"]
    )
    eval_ds = load_dataset(paths["collection"], paths["eval_queries"], paths["eval_qrels"], None)
    return SynthBenchmark(train, eval_ds, paths)


# --- checkpoints ----------------------------------------------------------

_CKPT_MAGIC = "typodr-checkpoint v1"


def _format_array(name: str, arr: np.ndarray) -> list[str]:
    arr2 = np.atleast_2d(arr)
    lines = [f"array {name} {arr2.shape[0]} {arr2.shape[1]}"]
    for row in arr2:
        lines.append(" ".join(repr(float(x)) for x in row))
    return lines


def save_checkpoint(model: DualEncoder, path) -> None:
    cfg = model.config
    lines = [
        _CKPT_MAGIC,
        f"ngram_n {cfg.ngram_n}",
        f"num_buckets {cfg.num_buckets}",
        f"embed_dim {cfg.embed_dim}",
        f"shared_weights {int(cfg.shared_weights)}",
    ]
    towers = [("query", model.query)]
    if not model.shared:
        towers.append(("passage", model.passage))
    for tower, params in towers:
        lines += _format_array(f"{tower}.embedding", params.embedding)
        lines += _format_array(f"{tower}.projection", params.projection)
        lines += _format_array(f"{tower}.projection_bias", params.projection_bias)
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(body)
        f.write(f"checksum {digest}\n")


def load_checkpoint(path) -> DualEncoder:
    try:
        with open(path, encoding="utf-8") as f:
            content = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from None
    lines = content.splitlines()
    if not lines or lines[0] != _CKPT_MAGIC:
        raise DataError(f"{path}: not a typodr checkpoint")
    if not lines[-1].startswith("checksum "):
        raise DataError(f"{path}: truncated checkpoint (missing checksum)")
    digest = lines[-1].split()[1]
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != digest:
        raise DataError(f"{path}: checksum mismatch (corrupt checkpoint)")

    header: dict[str, int] = {}
    i = 1
    while i < len(lines) - 1 and not lines[i].startswith("array "):
        key, value = lines[i].split()
        header[key] = int(value)
        i += 1
    try:
        cfg = EncoderConfig(
            ngram_n=header["ngram_n"],
            num_buckets=header["num_buckets"],
            embed_dim=header["embed_dim"],
            shared_weights=bool(header["shared_weights"]),
        )
    except KeyError as e:
        raise DataError(f"{path}: missing header field {e}") from None

    arrays: dict[str, np.ndarray] = {}
    while i < len(lines) - 1:
        parts = lines[i].split()
        if parts[0] != "array" or len(parts) != 4:
            raise DataError(f"{path}: malformed array header at line {i + 1}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        data = np.array(
            [
                [float(x) for x in lines[i + 1 + r].split()]
                for r in range(rows)
            ]
        )
        if data.shape != (rows, cols):
            raise DataError(f"{path}: array {name} shape mismatch")
        arrays[name] = data
        i += 1 + rows

    def tower(prefix: str) -> EncoderParams:
        try:
            emb = arrays[f"{prefix}.embedding"]
            proj = arrays[f"{prefix}.projection"]
            bias = arrays[f"{prefix}.projection_bias"][0]
        except KeyError as e:
            raise DataError(f"{path}: missing parameter array {e}") from None
        if emb.shape != (cfg.num_buckets, cfg.embed_dim) or proj.shape != (
            cfg.embed_dim,
            cfg.embed_dim,
        ) or bias.shape != (cfg.embed_dim,):
            raise DataError(f"{path}: parameter shapes inconsistent with config")
        return EncoderParams(emb, proj, bias)

    query = tower("query")
    passage = query if cfg.shared_weights else tower("passage")
    return DualEncoder(cfg, query, passage)
