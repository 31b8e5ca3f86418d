import numpy as np
import pytest

from typodr.config import default_run_config, parse_run_config
from typodr.data import SynthConfig, generate_synthetic
from typodr.experiments import M_COUNTERPARTS, compare, gradcheck
from typodr.losses import Method


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    return generate_synthetic(
        SynthConfig(num_passages=80, num_train_queries=24, num_eval_queries=10, seed=0),
        tmp_path_factory.mktemp("expbench"),
    )


@pytest.fixture(scope="module")
def quick_cfg():
    return parse_run_config(
        "[method]\nk = 2\n"
        "[train]\nbatch_size = 4\ntotal_steps = 25\nwarmup_steps = 5\n"
        "learning_rate = 0.001\n"
        "[encoder]\nnum_buckets = 128\nembed_dim = 8\n"
    )


def test_gradcheck_passes_on_a_few_batches():
    result = gradcheck(Method.DR_DL_M, n_batches=2)
    assert result.passed
    assert len(result.per_batch) == 2
    assert result.max_rel_err == max(result.per_batch)


def test_m_counterparts_cover_the_multi_positive_methods():
    assert set(M_COUNTERPARTS) == {Method.DR_CL_M, Method.DR_DL_M, Method.DR_ST_DL_M}
    assert M_COUNTERPARTS[Method.DR_ST_DL_M] is Method.DR_ST_DL


def test_compare_outputs_and_accessors(bench, quick_cfg, tmp_path):
    methods = [Method.DR, Method.DR_ST_DL, Method.DR_ST_DL_M]
    result = compare(
        bench, methods, seeds=[1, 2], run_config=quick_cfg,
        out_dir=tmp_path / "out", metrics=["mrr@10", "map"],
        typo_repeats=2, top_k=20,
    )
    for method in methods:
        vals = result.seed_values(method, "typo", "mrr@10")
        assert len(vals) == 2
        assert abs(result.mean(method, "typo", "mrr@10") - sum(vals) / 2) < 1e-15
        per_query = result.per_query_mean(method, "clean", "map")
        assert len(per_query) == 10
        assert all(0.0 <= v <= 1.0 for v in per_query.values())

    report = (tmp_path / "out" / "report.tsv").read_text().splitlines()
    assert len(report) == 1 + len(methods) * 2 * 2
    ttests = (tmp_path / "out" / "ttests.tsv").read_text().splitlines()
    assert len(ttests) == 1 + 2 * 2  # one pair x 2 settings x 2 metrics
    for line in ttests[1:]:
        assert line.split("\t")[0] == "dr_st_dl_m"


def test_compare_parallel_matches_serial(bench, quick_cfg, tmp_path):
    methods = [Method.DR, Method.DR_DL]
    serial = compare(bench, methods, [1], quick_cfg, tmp_path / "s",
                     metrics=["mrr@10"], typo_repeats=2, top_k=20, jobs=1)
    parallel = compare(bench, methods, [1], quick_cfg, tmp_path / "p",
                       metrics=["mrr@10"], typo_repeats=2, top_k=20, jobs=2)
    assert (tmp_path / "s" / "report.tsv").read_bytes() == (
        tmp_path / "p" / "report.tsv"
    ).read_bytes()
    for m in methods:
        a = (tmp_path / "s" / "checkpoints" / f"{m.value}_seed1.ckpt").read_bytes()
        b = (tmp_path / "p" / "checkpoints" / f"{m.value}_seed1.ckpt").read_bytes()
        assert a == b
