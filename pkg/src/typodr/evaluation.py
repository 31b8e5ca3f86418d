"""Exhaustive dense retrieval and ranking evaluation.

Runs are dictionaries qid -> [(pid, score), ...] in descending score
order with ties broken by ascending passage id, so identical inputs
produce identical runs on every platform.  Qrels are qid -> {pid: grade}
with positive integer grades.

Metrics: MRR@k, Recall@k, nDCG@k (gain 2^grade - 1, discount
log2(rank+1), normalized by the ideal ranking), and MAP.  Significance
uses a two-tailed paired t-test whose p-value comes from the regularized
incomplete beta function, evaluated with the standard continued-fraction
(modified Lentz) scheme, with Bonferroni correction across comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .errors import DataError, InputError
from .rng import derive_seed
from .trainer import DualEncoder
from .typos import AugmentationPolicy, generate_variants

Run = dict[str, list[tuple[str, float]]]
Qrels = dict[str, dict[str, int]]

SUPPORTED_METRICS = ("mrr", "recall", "ndcg", "map")


def parse_metric(spec: str) -> tuple[str, int | None]:
    """Parse e.g. 'mrr@10' -> ('mrr', 10) or 'map' -> ('map', None)."""
    spec = spec.strip().lower()
    name, _, cutoff = spec.partition("@")
    if name not in SUPPORTED_METRICS:
        raise InputError(f"unknown metric {spec!r}; supported: {SUPPORTED_METRICS}")
    if not cutoff:
        return name, None
    try:
        k = int(cutoff)
    except ValueError:
        raise InputError(f"bad metric cutoff in {spec!r}") from None
    if k < 1:
        raise InputError(f"metric cutoff must be >= 1 in {spec!r}")
    return name, k


def rank_corpus(
    model: DualEncoder,
    queries: dict[str, str],
    corpus: dict[str, str],
    top_k: int,
) -> Run:
    """Score every (query, passage) pair by dot product and keep the top_k
    per query."""
    if top_k < 1:
        raise InputError("top_k must be >= 1")
    if not corpus:
        raise InputError("corpus is empty")
    pids = sorted(corpus)
    passage_bags = [enc.tokenize(corpus[pid], model.config) for pid in pids]
    v = enc.encode_batch(model.passage, passage_bags)
    run: Run = {}
    qids = list(queries)
    if qids:
        query_bags = [enc.tokenize(queries[qid], model.config) for qid in qids]
        u = enc.encode_batch(model.query, query_bags)
        scores = u @ v.T
        for qi, qid in enumerate(qids):
            row = scores[qi]
            # stable sort over pid-ascending order => ties break by pid
            order = np.argsort(-row, kind="stable")[:top_k]
            run[qid] = [(pids[j], float(row[j])) for j in order]
    return run


def _query_metric(
    name: str,
    k: int | None,
    ranked_pids: list[str],
    judged: dict[str, int],
) -> float:
    relevant = {pid for pid, grade in judged.items() if grade >= 1}
    top = ranked_pids if k is None else ranked_pids[:k]
    if name == "mrr":
        for rank, pid in enumerate(top, start=1):
            if pid in relevant:
                return 1.0 / rank
        return 0.0
    if name == "recall":
        return len(relevant.intersection(top)) / len(relevant)
    if name == "ndcg":
        dcg = 0.0
        for rank, pid in enumerate(top, start=1):
            grade = judged.get(pid, 0)
            if grade >= 1:
                dcg += (2.0**grade - 1.0) / math.log2(rank + 1)
        ideal = sorted(judged.values(), reverse=True)
        if k is not None:
            ideal = ideal[:k]
        idcg = sum(
            (2.0**g - 1.0) / math.log2(r + 1)
            for r, g in enumerate(ideal, start=1)
            if g >= 1
        )
        return dcg / idcg if idcg > 0 else 0.0
    if name == "map":
        hits = 0
        precision_sum = 0.0
        for rank, pid in enumerate(top, start=1):
            if pid in relevant:
                hits += 1
                precision_sum += hits / rank
        return precision_sum / len(relevant)
    raise InputError(f"unknown metric {name!r}")


@dataclass
class MetricResult:
    mean: float
    per_query: dict[str, float]
    skipped_queries: int = 0


def compute_metric(metric: str, run: Run, qrels: Qrels) -> MetricResult:
    """Evaluate one metric (e.g. 'mrr@10') over a run.

    Queries absent from the qrels, or with no relevant passage, are
    skipped and counted rather than scored as zero.
    """
    name, k = parse_metric(metric)
    per_query: dict[str, float] = {}
    skipped = 0
    for qid, ranking in run.items():
        judged = qrels.get(qid)
        if not judged or not any(g >= 1 for g in judged.values()):
            skipped += 1
            continue
        per_query[qid] = _query_metric(name, k, [pid for pid, _ in ranking], judged)
    if not per_query:
        raise InputError("no run query has relevance judgments")
    mean = sum(per_query.values()) / len(per_query)
    return MetricResult(mean, per_query, skipped)


def compute_metrics(metrics: list[str], run: Run, qrels: Qrels) -> dict[str, MetricResult]:
    return {m: compute_metric(m, run, qrels) for m in metrics}


@dataclass
class RepeatedMetric:
    per_repeat: list[float]
    mean: float
    std: float                      # sample std over repeats (0 for one repeat)
    per_query: dict[str, float]     # per-query mean over repeats


@dataclass
class RepeatedReport:
    metrics: dict[str, RepeatedMetric]
    repeats: int


def corrupt_queries(
    queries: dict[str, str], policy: AugmentationPolicy, repeat: int
) -> dict[str, str]:
    """One-typo corruption of every query, seeded per (policy.seed, repeat,
    qid).  A policy with k=0 leaves the queries unchanged."""
    if policy.k == 0:
        return dict(queries)
    out = {}
    for qid, text in queries.items():
        variants, _ = generate_variants(
            text,
            AugmentationPolicy(
                k=1,
                min_word_len=policy.min_word_len,
                transforms_per_variant=policy.transforms_per_variant,
                seed=derive_seed(policy.seed, "repeat", repeat, qid),
            ),
        )
        out[qid] = variants[0]
    return out


def repeated_typo_eval(
    model: DualEncoder,
    queries: dict[str, str],
    corpus: dict[str, str],
    qrels: Qrels,
    repeats: int,
    policy: AugmentationPolicy,
    metrics: list[str],
    top_k: int = 1000,
) -> RepeatedReport:
    """Corrupt every query once per repeat, rank, and average the metrics
    over the repeats."""
    if repeats < 1:
        raise InputError("repeats must be >= 1")
    per_repeat_results: list[dict[str, MetricResult]] = []
    for r in range(repeats):
        corrupted = corrupt_queries(queries, policy, r)
        run = rank_corpus(model, corrupted, corpus, top_k)
        per_repeat_results.append(compute_metrics(metrics, run, qrels))
    report: dict[str, RepeatedMetric] = {}
    for m in metrics:
        means = [res[m].mean for res in per_repeat_results]
        qids = per_repeat_results[0][m].per_query.keys()
        per_query = {
            qid: sum(res[m].per_query[qid] for res in per_repeat_results) / repeats
            for qid in qids
        }
        mean = sum(means) / repeats
        std = float(np.std(means, ddof=1)) if repeats > 1 else 0.0
        report[m] = RepeatedMetric(means, mean, std, per_query)
    return RepeatedReport(report, repeats)


# --- paired t-test -----------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified
    Lentz's method)."""
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def _reg_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_sf_two_tailed(t: float, df: int) -> float:
    """Two-tailed p-value of the t distribution with df degrees of
    freedom."""
    return _reg_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class TTestResult:
    t: float
    p: float
    significant: bool
    degenerate: bool = False   # zero-variance, nonzero-mean differences


def paired_t_test(
    per_query_a: list[float],
    per_query_b: list[float],
    num_comparisons: int = 1,
) -> TTestResult:
    """Two-tailed paired t-test with Bonferroni correction.

    Significance threshold: p < 0.05 / num_comparisons.  All-zero
    differences give t=0, p=1.  Zero-variance but nonzero-mean
    differences are reported as a degenerate infinite-t significant
    result instead of erroring.
    """
    a = np.asarray(per_query_a, dtype=np.float64)
    b = np.asarray(per_query_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError("paired samples must have equal length")
    n = a.size
    if n < 2:
        raise InputError("paired t-test needs at least 2 pairs")
    if num_comparisons < 1:
        raise InputError("num_comparisons must be >= 1")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    threshold = 0.05 / num_comparisons
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, False)
        t = math.inf if mean > 0 else -math.inf
        return TTestResult(t, 0.0, True, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = t_sf_two_tailed(t, n - 1)
    return TTestResult(t, p, p < threshold)


# --- TREC interchange formats -------------------------------------------


def write_run(run: Run, path, tag: str = "typodr") -> None:
    """Six-column TREC run format: qid Q0 pid rank score tag."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid in run:
            for rank, (pid, score) in enumerate(run[qid], start=1):
                f.write(f"{qid} Q0 {pid} {rank} {score!r} {tag}\n")


def read_run(path) -> Run:
    run: Run = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            qid, _, pid, _, score, _ = parts
            try:
                run.setdefault(qid, []).append((pid, float(score)))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad score {score!r}") from None
    for qid, ranking in run.items():
        ranking.sort(key=lambda e: (-e[1], e[0]))
    return run


def write_qrels(qrels: Qrels, path) -> None:
    """Four-column qrels format: qid 0 pid grade."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid in qrels:
            for pid, grade in qrels[qid].items():
                f.write(f"{qid} 0 {pid} {grade}\n")


def read_qrels(path) -> Qrels:
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            qid, _, pid, grade = parts
            try:
                grade_i = int(grade)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad grade {grade!r}") from None
            if grade_i < 0:
                raise DataError(f"{path}:{lineno}: negative grade")
            qrels.setdefault(qid, {})[pid] = grade_i
    return qrels
