import pytest

from ksmkd.config import (
    CONFIG_VERSION,
    PAPER_GRID,
    RunConfig,
    apply_overrides,
    bind_data,
    load_config,
    parse_weights,
    read_config,
    to_ini,
    write_config,
)
from ksmkd.errors import ConfigError


def paper_overrides():
    return [f"{s}.{k}={v[0]}" for (s, k), v in PAPER_GRID.items()]


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    write_config(cfg, tmp_path / "c.ini")
    assert read_config(tmp_path / "c.ini") == cfg
    assert f"config_version = {CONFIG_VERSION}" in to_ini(cfg)


def test_table_defaults():
    k = RunConfig().ksm
    assert (k.discount, k.actor_lr, k.critic_lr, k.feature_size, k.hidden_size) == (0.98, 2e-4, 2e-4, 8, 256)
    assert k.threshold in PAPER_GRID["ksm", "threshold"] and k.phase_size in PAPER_GRID["ksm", "phase_size"]


def test_partial_file_and_comments(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[ksm]\nthreshold = 0.3  ; gate level\nreward_metric = accuracy\n[run]\nseed = 7\n"
                 "[data]\ntext_b = none\n")
    cfg = read_config(p)
    assert cfg.ksm.threshold == 0.3 and cfg.ksm.reward_metric == "accuracy" and cfg.run.seed == 7
    assert cfg.data.text_b is None and cfg.teacher == RunConfig().teacher


def test_overrides():
    cfg = apply_overrides(RunConfig(), ["ksm.phase_size=64", "train.eval_every_epoch=false", "run.seed=3"])
    assert cfg.ksm.phase_size == 64 and cfg.train.eval_every_epoch is False and cfg.run.seed == 3
    assert cfg.digest() != RunConfig().digest()
    assert RunConfig().digest() == RunConfig().digest()


@pytest.mark.parametrize("item", ["ksm.nope=1", "nosection.x=1", "ksmphase=3", "ksm.phase_size=abc",
                                  "ksm.threshold=2", "student.num_layers=9", "run.fixed_weights=1,1",
                                  "train.eval_every_epoch=maybe"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), [item])


def test_unknown_section_and_version(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[extra]\na = 1\n")
    with pytest.raises(ConfigError):
        read_config(p)
    p.write_text("[run]\nconfig_version = 99\n")
    with pytest.raises(ConfigError, match="config_version"):
        read_config(p)
    with pytest.raises(ConfigError):
        read_config(tmp_path / "missing.ini")
    p.write_text("not an ini file")
    with pytest.raises(ConfigError):
        read_config(p)


def test_strict_grid():
    with pytest.raises(ConfigError, match="strict_paper_grid"):
        apply_overrides(RunConfig(), ["run.strict_paper_grid=true"])
    cfg = load_config(None, paper_overrides() + ["run.strict_paper_grid=true"])
    assert cfg.train.student_lr == 2e-5
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["ksm.phase_size=50"])


def test_bind_data():
    cfg = bind_data(RunConfig(), 321, 4)
    assert cfg.teacher.vocab_size == cfg.student.vocab_size == 321
    assert cfg.teacher.num_classes == cfg.student.num_classes == 4


def test_parse_weights():
    assert parse_weights("1, 0.5,0,2") == [1.0, 0.5, 0.0, 2.0]
    for bad in ("0,0,0,0", "1,2,3", "a,b,c,d", "1,-1,1,1"):
        with pytest.raises(ConfigError):
            parse_weights(bad)
