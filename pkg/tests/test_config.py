import pytest

from typodr.config import (
    default_run_config,
    load_run_config,
    parse_run_config,
    render_resolved,
)
from typodr.errors import DataError
from typodr.losses import Method


def test_defaults():
    cfg = default_run_config()
    assert cfg.method.method is Method.DR
    assert cfg.method.k == 8
    assert cfg.augment.k == 8
    assert cfg.train.total_steps == 2000
    assert cfg.encoder.shared_weights is True


def test_parse_full_config():
    cfg = parse_run_config(
        """
[method]
method = dr_st_dl_m
k = 4
beta = 0.25

[train]
batch_size = 16
learning_rate = 1e-4
freeze_typos = true

[encoder]
num_buckets = 512

[augment]
min_word_len = 4
"""
    )
    assert cfg.method.method is Method.DR_ST_DL_M
    assert cfg.method.k == 4
    assert cfg.augment.k == 4  # mirrors method k
    assert cfg.method.beta == 0.25
    assert cfg.train.batch_size == 16
    assert cfg.train.learning_rate == 1e-4
    assert cfg.train.freeze_typos is True
    assert cfg.encoder.num_buckets == 512
    assert cfg.augment.min_word_len == 4
    # untouched sections keep defaults
    assert cfg.train.total_steps == 2000


def test_parse_rejects_unknown_section_and_key():
    with pytest.raises(DataError, match="unknown section"):
        parse_run_config("[optimizer]\nlr = 1\n")
    with pytest.raises(DataError, match="unknown key"):
        parse_run_config("[train]\nlearningrate = 1\n")


def test_parse_rejects_bad_values():
    with pytest.raises(DataError, match="boolean"):
        parse_run_config("[train]\nfreeze_typos = maybe\n")
    with pytest.raises(DataError, match="unknown method"):
        parse_run_config("[method]\nmethod = bert\n")
    with pytest.raises(DataError, match="cannot parse"):
        parse_run_config("[train]\nbatch_size = many\n")
    # values that parse but violate dataclass invariants
    with pytest.raises(DataError):
        parse_run_config("[train]\nbatch_size = 1\n")
    with pytest.raises(DataError):
        parse_run_config("[method]\nbeta = 2.0\n")


def test_parse_rejects_malformed_ini():
    with pytest.raises(DataError):
        parse_run_config("not an ini file at all [")


def test_render_resolved_round_trips():
    cfg = default_run_config(Method.DR_CL_M, k=3)
    text = render_resolved(cfg)
    reparsed = parse_run_config(text)
    assert reparsed == cfg
    assert "dr_cl_m" in text
    assert "[train]" in text and "[encoder]" in text and "[augment]" in text


def test_with_method_swaps_only_the_method():
    cfg = default_run_config()
    swapped = cfg.with_method(Method.DR_DL)
    assert swapped.method.method is Method.DR_DL
    assert swapped.method.k == cfg.method.k
    assert swapped.train == cfg.train


def test_load_run_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[method]\nmethod = dr_dl\n")
    assert load_run_config(path).method.method is Method.DR_DL
    with pytest.raises(DataError, match="cannot read"):
        load_run_config(tmp_path / "absent.cfg")
