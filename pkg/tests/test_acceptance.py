"""The ten acceptance criteria, one test each, at their stated tolerances.

Criteria 7 and 8 train full method grids on the default synthetic
benchmark and take several minutes each; everything else is fast.
"""

import math
import time

import numpy as np
import pytest
import scipy.stats

from typodr.config import default_run_config
from typodr.data import SynthConfig, generate_synthetic
from typodr.evaluation import compute_metric, paired_t_test, parse_metric
from typodr.experiments import compare, gradcheck
from typodr.losses import (
    BatchScores,
    Method,
    MethodConfig,
    ScoreSet,
    ce_loss,
    kl_self_teaching,
    mce_loss,
    method_loss,
    softmax_distribution,
)
from typodr.typos import AugmentationPolicy, generate_variants, generate_variants_detailed

from oracles import osa_distance, reference_metric

ALL_METHODS = list(Method)
TYPO_ROBUST = [
    Method.DR_CL, Method.DR_CL_M, Method.DR_DL_M, Method.DR_ST_DL, Method.DR_ST_DL_M,
]


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """The acceptance benchmark: 2,000 passages, 500 train / 200 eval queries."""
    return generate_synthetic(SynthConfig(), tmp_path_factory.mktemp("acc_bench"))


def test_criterion_01_loss_identities():
    """mce == ce bit-for-bit with one positive; uniform ce == ln(1+M)."""
    start = time.monotonic()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        pos = rng.normal(scale=3.0, size=1)
        neg = rng.normal(scale=3.0, size=int(rng.integers(1, 12)))
        l_ce, dp_ce, dn_ce = ce_loss(ScoreSet(pos, neg))
        l_mce, dp_mce, dn_mce = mce_loss(ScoreSet(pos, neg))
        assert l_ce == l_mce
        assert np.array_equal(dp_ce, dp_mce)
        assert np.array_equal(dn_ce, dn_mce)
    for m in range(1, 65):
        loss, _, _ = ce_loss(ScoreSet([1.3], [1.3] * m))
        assert abs(loss - math.log(1 + m)) < 1e-12
    assert time.monotonic() - start < 1.0


def test_criterion_02_end_to_end_gradients():
    """All 7 method objectives: parameter gradients vs central finite
    differences, max relative error < 1e-4 over 20 random batches."""
    start = time.monotonic()
    for method in ALL_METHODS:
        result = gradcheck(method, seed=0, n_batches=20)
        assert result.max_rel_err < 1e-4, (method, result.max_rel_err)
    assert time.monotonic() - start < 120.0


def test_criterion_03_shift_invariance_and_zero_sum():
    start = time.monotonic()
    rng = np.random.default_rng(1)
    for _ in range(200):
        n_pos = int(rng.integers(1, 5))
        pos = rng.normal(size=n_pos)
        neg = rng.normal(size=int(rng.integers(1, 10)))
        loss_fn = ce_loss if n_pos == 1 else mce_loss
        base, d_pos, d_neg = loss_fn(ScoreSet(pos, neg))
        for c in (-10.0, 1.0, 100.0):
            shifted, _, _ = loss_fn(ScoreSet(pos + c, neg + c))
            assert abs(shifted - base) < 1e-9
        assert abs(d_pos.sum() + d_neg.sum()) < 1e-12
    assert time.monotonic() - start < 1.0


def test_criterion_04_kl_properties():
    start = time.monotonic()
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        p = softmax_distribution(rng.normal(scale=2.0, size=n))
        q = softmax_distribution(rng.normal(scale=2.0, size=n))
        same, _ = kl_self_teaching(p[None, :], p)
        assert same == 0.0
        loss, _ = kl_self_teaching(p[None, :], q)
        assert loss >= 0.0
    assert time.monotonic() - start < 1.0


def test_criterion_05_metric_oracle_equivalence():
    rng = np.random.default_rng(3)
    for _ in range(50):
        pids = [f"p{i}" for i in range(40)]
        scores = rng.normal(size=40)
        order = np.argsort(-scores, kind="stable")
        run = {"q": [(pids[j], float(scores[j])) for j in order]}
        judged = rng.choice(pids, size=int(rng.integers(1, 8)), replace=False)
        qrels = {"q": {pid: int(rng.integers(1, 4)) for pid in judged}}
        ranked = [pid for pid, _ in run["q"]]
        for metric in ("mrr@10", "recall@10", "ndcg@10", "map"):
            name, k = parse_metric(metric)
            ours = compute_metric(metric, run, qrels).mean
            ref = reference_metric(name, k, ranked, qrels["q"])
            assert abs(ours - ref) < 1e-12

    run = {"q": [(f"p{i}", 10.0 - i) for i in range(10)]}
    assert abs(compute_metric("mrr@10", run, {"q": {"p2": 1}}).mean - 1 / 3) < 1e-12
    assert abs(compute_metric("recall@10", run, {"q": {"p0": 1, "x": 1}}).mean - 0.5) < 1e-12
    assert abs(compute_metric("ndcg@10", run, {"q": {"p1": 1}}).mean - 1 / math.log2(3)) < 1e-12
    assert abs(compute_metric("map", run, {"q": {"p0": 1, "p2": 1}}).mean - 5 / 6) < 1e-12


def test_criterion_06_typo_generator():
    """10,000 single-transform variants at Damerau-Levenshtein distance
    exactly 1; kind frequencies 0.2 +/- 0.02; byte-identical regeneration."""
    start = time.monotonic()
    rng = np.random.default_rng(4)
    words = [
        "".join(chr(97 + int(c)) for c in rng.integers(0, 26, size=int(rng.integers(4, 10))))
        for _ in range(40)
    ]
    queries = [" ".join(rng.choice(words, size=3, replace=False)) for _ in range(100)]

    kind_counts = {}
    total = 0
    all_variants = []
    for qi, query in enumerate(queries):
        policy = AugmentationPolicy(k=100, seed=qi)
        variants, kinds, noop = generate_variants_detailed(query, policy)
        assert not noop
        for v, ks in zip(variants, kinds):
            assert osa_distance(query, v) == 1, (query, v)
            assert len(ks) == 1
            kind_counts[ks[0]] = kind_counts.get(ks[0], 0) + 1
            total += 1
        all_variants.append(variants)
    assert total == 10_000
    assert len(kind_counts) == 5
    for kind, count in kind_counts.items():
        assert abs(count / total - 0.2) < 0.02, (kind, count / total)

    for qi, query in enumerate(queries[:20]):
        policy = AugmentationPolicy(k=100, seed=qi)
        again, _ = generate_variants(query, policy)
        assert again == all_variants[qi]
    assert time.monotonic() - start < 30.0


def _typo_mrr(result, method):
    return result.mean(method, "typo", "mrr@10")


def test_criterion_07_directional_method_comparison(benchmark, tmp_path):
    """On the default benchmark (K=8, 2,000 steps, 5 seeds): each
    multi-positive variant >= its single-positive counterpart on typo
    MRR@10, and every typo-robust method beats plain DR."""
    start = time.monotonic()
    result = compare(
        benchmark,
        ALL_METHODS,
        seeds=[1, 2, 3, 4, 5],
        run_config=default_run_config(),
        out_dir=tmp_path / "criterion7",
        metrics=["mrr@10"],
        typo_repeats=5,
        top_k=100,
    )
    pairs = [
        (Method.DR_CL_M, Method.DR_CL),
        (Method.DR_DL_M, Method.DR_DL),
        (Method.DR_ST_DL_M, Method.DR_ST_DL),
    ]
    for multi, single in pairs:
        assert _typo_mrr(result, multi) >= _typo_mrr(result, single), (
            multi, _typo_mrr(result, multi), single, _typo_mrr(result, single),
        )
    dr = _typo_mrr(result, Method.DR)
    for method in TYPO_ROBUST:
        assert _typo_mrr(result, method) > dr, (method, _typo_mrr(result, method), dr)
    assert time.monotonic() - start < 1800.0


def test_criterion_08_k_sweep(benchmark, tmp_path):
    """For K in {1, 2, 4, 8}: ST+DL_M typo MRR@10 >= ST+DL at every K
    (5-seed means), and at K=1 the two losses coincide exactly."""
    start = time.monotonic()
    for k in (1, 2, 4, 8):
        result = compare(
            benchmark,
            [Method.DR_ST_DL, Method.DR_ST_DL_M],
            seeds=[1, 2, 3, 4, 5],
            run_config=default_run_config(k=k),
            out_dir=tmp_path / f"criterion8_k{k}",
            metrics=["mrr@10"],
            typo_repeats=5,
            top_k=100,
            save_checkpoints=False,
        )
        assert _typo_mrr(result, Method.DR_ST_DL_M) >= _typo_mrr(result, Method.DR_ST_DL), (
            k,
            _typo_mrr(result, Method.DR_ST_DL_M),
            _typo_mrr(result, Method.DR_ST_DL),
        )

    # exact loss coincidence at K=1 on random score batches
    rng = np.random.default_rng(5)
    for _ in range(50):
        q, p = 3, 9
        batch = BatchScores(
            qp=rng.normal(size=(q, p)),
            positive_index=np.arange(q, dtype=np.int64) * 3,
            tqp=rng.normal(size=(q, 1, p)),
        )
        l_single, _ = method_loss(MethodConfig(method=Method.DR_ST_DL, k=1), batch)
        l_multi, _ = method_loss(MethodConfig(method=Method.DR_ST_DL_M, k=1), batch)
        assert l_single == l_multi
    assert time.monotonic() - start < 2700.0


def test_criterion_09_compare_determinism(tmp_path):
    """Two identical compare runs produce byte-identical reports and
    checkpoints (small grid; the machinery is identical at any size)."""
    bench = generate_synthetic(
        SynthConfig(num_passages=80, num_train_queries=24, num_eval_queries=10, seed=0),
        tmp_path / "bench",
    )
    cfg = default_run_config(k=2)
    import dataclasses
    cfg = dataclasses.replace(
        cfg,
        train=dataclasses.replace(cfg.train, total_steps=40, warmup_steps=5, batch_size=4),
    )
    methods = [Method.DR, Method.DR_DL_M, Method.DR_ST_DL_M]
    for out in ("runA", "runB"):
        compare(bench, methods, [1, 2], cfg, tmp_path / out,
                metrics=["mrr@10", "map"], typo_repeats=2, top_k=20)
    a, b = tmp_path / "runA", tmp_path / "runB"
    for rel in ("report.tsv", "ttests.tsv", "resolved.cfg"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    for ckpt in sorted((a / "checkpoints").iterdir()):
        assert ckpt.read_bytes() == (b / "checkpoints" / ckpt.name).read_bytes(), ckpt.name


def test_criterion_10_t_test_reference():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(4, 80))
        a = rng.normal(size=n)
        b = a + rng.normal(scale=0.4, size=n) + float(rng.normal(scale=0.2))
        ours = paired_t_test(list(a), list(b))
        ref = scipy.stats.ttest_rel(a, b)
        assert abs(ours.t - ref.statistic) < 1e-9
        assert abs(ours.p - ref.pvalue) < 1e-9
    identical = paired_t_test([0.2, 0.4, 0.8, 0.3], [0.2, 0.4, 0.8, 0.3])
    assert identical.p == 1.0
