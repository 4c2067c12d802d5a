import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalarmix.config import SCHEMA, apply_overrides, load_config, parse_config
from scalarmix.errors import ConfigurationError

SWEEP = """\
# kappa sweep
[flow]
kind = alternating-sine
seed = 3

[solver]
kappa = 1e-2, 1e-3, 1e-4, 1e-5
n = 64, 128, 512, 512
dt = 0.005
horizon = 20, 40, 100, 150
resolution_override = true   ; the smallest kappa is not resolved
"""


def test_defaults_fill_everything():
    cfg = parse_config("")
    assert set(cfg.sections) == set(SCHEMA)
    for sec, keys in SCHEMA.items():
        assert set(cfg[sec]) == set(keys)


def test_lists_and_per_kappa():
    cfg = parse_config(SWEEP)
    assert cfg.kappas == (1e-2, 1e-3, 1e-4, 1e-5)
    assert cfg.per_kappa("n", 2) == 512
    assert cfg.per_kappa("dt", 3) == 0.005
    assert cfg.get("flow", "seed") == 3


def test_round_trip_lossless():
    cfg = parse_config(SWEEP)
    again = parse_config(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()
    assert again.digest() == cfg.digest()


@given(st.integers(0, 2**64 - 1), st.floats(1e-6, 0.5, allow_nan=False), st.sampled_from(["inf", "2", "1.5"]))
def test_round_trip_property(seed, kappa, p):
    text = f"[flow]\nseed = {seed}\n[solver]\nkappa = {kappa!r}\nresolution_override = true\n[budget]\np = {p}\n"
    cfg = parse_config(text)
    assert parse_config(cfg.to_text()) == cfg
    assert cfg.get("flow", "seed") == seed


def test_unknown_key_is_line_anchored():
    with pytest.raises(ConfigurationError, match=r"exp\.ini:3: unknown key 'colour'"):
        parse_config("[flow]\nseed = 1\ncolour = red\n", "exp.ini")


def test_unknown_section_is_line_anchored():
    with pytest.raises(ConfigurationError, match=r"exp\.ini:2: unknown section"):
        parse_config("\n[plots]\nx = 1\n", "exp.ini")


def test_bad_value_is_line_anchored():
    with pytest.raises(ConfigurationError, match=r"exp\.ini:4: invalid value 'fast'"):
        parse_config("[solver]\nn = 64\n\ndt = fast\n", "exp.ini")


def test_semantic_error_is_line_anchored():
    with pytest.raises(ConfigurationError, match=r"exp\.ini:2:.*power of two"):
        parse_config("[solver]\nn = 100\n", "exp.ini")


def test_mismatched_lists_rejected():
    with pytest.raises(ConfigurationError, match="one per kappa"):
        parse_config("[solver]\nkappa = 1e-2, 1e-3\nn = 64, 128, 256\n")


def test_duplicate_key_and_stray_text():
    with pytest.raises(ConfigurationError, match=":3: duplicate key"):
        parse_config("[flow]\nseed = 1\nseed = 2\n")
    with pytest.raises(ConfigurationError, match=":1:"):
        parse_config("seed = 1\n")


def test_overrides():
    cfg = parse_config(SWEEP, overrides=["flow.seed=9", "solver.horizon = 5"])
    assert cfg.get("flow", "seed") == 9
    assert cfg.per_kappa("horizon", 0) == 5.0
    assert apply_overrides(parse_config(SWEEP), ["flow.seed=9", "solver.horizon=5"]) == cfg
    with pytest.raises(ConfigurationError, match="--override"):
        parse_config("", overrides=["flow.colour=red"])
    with pytest.raises(ConfigurationError, match="--override"):
        parse_config("", overrides=["seed"])


def test_load_config(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(SWEEP)
    assert load_config(path) == parse_config(SWEEP)
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.ini")
