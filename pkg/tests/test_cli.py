import pytest

from typodr.cli import run_cli
from typodr.data import SynthConfig, generate_synthetic, load_checkpoint

from oracles import osa_distance


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_bench")
    generate_synthetic(
        SynthConfig(num_passages=80, num_train_queries=24, num_eval_queries=10, seed=0),
        out,
    )
    return out


@pytest.fixture(scope="module")
def short_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "short.cfg"
    path.write_text(
        "[method]\nk = 2\n"
        "[train]\nbatch_size = 4\ntotal_steps = 30\nwarmup_steps = 5\n"
        "learning_rate = 0.001\n"
        "[encoder]\nnum_buckets = 128\nembed_dim = 8\n"
    )
    return path


def test_no_subcommand_prints_help(capsys):
    assert run_cli([]) == 1
    assert "augment" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(capsys):
    assert run_cli(["synth", "--bogus"]) == 1
    assert "error" in capsys.readouterr().err


def test_augment_command(tmp_path, capsys):
    queries = tmp_path / "q.tsv"
    queries.write_text("q1\tretrieve relevant documents\nq2\tshort query\n")
    out = tmp_path / "variants.tsv"
    assert run_cli([
        "augment", "--queries", str(queries), "--k", "3",
        "--seed", "7", "--out", str(out),
    ]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 6
    for line in lines:
        qid, idx, text = line.split("\t")
        original = {"q1": "retrieve relevant documents", "q2": "short query"}[qid]
        assert osa_distance(original, text) == 1
    # deterministic: rerun produces identical bytes
    out2 = tmp_path / "variants2.tsv"
    run_cli(["augment", "--queries", str(queries), "--k", "3",
             "--seed", "7", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_augment_warns_on_noop(tmp_path, capsys):
    queries = tmp_path / "q.tsv"
    queries.write_text("q1\ta b c\n")
    out = tmp_path / "v.tsv"
    assert run_cli(["augment", "--queries", str(queries), "--k", "2",
                    "--out", str(out)]) == 0
    assert "no eligible word" in capsys.readouterr().err


def test_augment_missing_input_is_data_error(tmp_path, capsys):
    code = run_cli(["augment", "--queries", str(tmp_path / "nope.tsv"),
                    "--k", "1", "--out", str(tmp_path / "o.tsv")])
    assert code == 2


def test_synth_command(tmp_path, capsys):
    out = tmp_path / "bench"
    assert run_cli([
        "synth", "--out", str(out), "--num-passages", "60",
        "--num-train-queries", "20", "--num-eval-queries", "10",
    ]) == 0
    for name in ("collection.tsv", "queries.train.tsv", "queries.eval.tsv",
                 "qrels.train.txt", "qrels.eval.txt", "triples.train.jsonl"):
        assert (out / name).exists(), name


def test_synth_rejects_infeasible_config(capsys):
    assert run_cli(["synth", "--out", "/tmp/never", "--num-passages", "5",
                    "--num-train-queries", "10", "--num-eval-queries", "10"]) == 1


def test_train_evaluate_flow(bench_dir, short_cfg, tmp_path, capsys):
    ckpt = tmp_path / "model.ckpt"
    log = tmp_path / "train.tsv"
    assert run_cli([
        "train", "--config", str(short_cfg), "--data-dir", str(bench_dir),
        "--out", str(ckpt), "--log", str(log), "--method", "dr_dl_m",
        "--seed", "3",
    ]) == 0
    assert ckpt.exists()
    resolved = (tmp_path / "model.ckpt.resolved.cfg").read_text()
    assert "dr_dl_m" in resolved and "seed = 3" in resolved
    log_lines = log.read_text().splitlines()
    assert log_lines[0] == "step\tloss\tlr"
    assert len(log_lines) == 31
    model = load_checkpoint(ckpt)
    assert model.config.num_buckets == 128

    report = tmp_path / "eval.tsv"
    assert run_cli([
        "evaluate", "--checkpoint", str(ckpt),
        "--queries", str(bench_dir / "queries.eval.tsv"),
        "--collection", str(bench_dir / "collection.tsv"),
        "--qrels", str(bench_dir / "qrels.eval.txt"),
        "--metrics", "mrr@10,map", "--typo-repeats", "2",
        "--top-k", "20", "--report", str(report),
    ]) == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "setting\tmetric\tmean\tstd"
    settings = {line.split("\t")[0] for line in lines[1:]}
    assert settings == {"clean", "typo"}
    assert len(lines) == 1 + 4  # 2 settings x 2 metrics


def test_evaluate_bad_metric_is_usage_error(bench_dir, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    run_cli(["train", "--data-dir", str(bench_dir), "--out", str(ckpt),
             "--config", str(tmp_path / "missing.cfg")])
    # missing config is a data error
    assert run_cli(["train", "--data-dir", str(bench_dir), "--out", str(ckpt),
                    "--config", str(tmp_path / "missing.cfg")]) == 2


def test_gradcheck_command(capsys):
    assert run_cli(["gradcheck", "--method", "dr", "--batches", "2"]) == 0
    assert "max relative error" in capsys.readouterr().out
    assert run_cli(["gradcheck", "--method", "nonsense"]) == 1


def test_compare_command(bench_dir, short_cfg, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert run_cli([
        "compare", "--data-dir", str(bench_dir), "--config", str(short_cfg),
        "--methods", "dr,dr_dl,dr_dl_m", "--seeds", "1,2",
        "--metrics", "mrr@10", "--typo-repeats", "2", "--top-k", "20",
        "--out", str(out),
    ]) == 0
    report = (out / "report.tsv").read_text().splitlines()
    assert report[0] == "method\tsetting\tmetric\tmean\tstd\tseed_values"
    assert len(report) == 1 + 3 * 2  # 3 methods x 2 settings x 1 metric
    ttests = (out / "ttests.tsv").read_text().splitlines()
    assert ttests[0].startswith("multi\tsingle")
    assert len(ttests) == 1 + 2  # dl_m vs dl, clean + typo
    assert (out / "resolved.cfg").exists()
    assert (out / "checkpoints" / "dr_seed1.ckpt").exists()
    assert (out / "checkpoints" / "dr_dl_m_seed2.ckpt").exists()


def test_compare_requires_existing_data_dir(tmp_path):
    assert run_cli(["compare", "--data-dir", str(tmp_path / "none"),
                    "--out", str(tmp_path / "o")]) == 2
