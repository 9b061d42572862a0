"""Run-file schema: defaults, validation and normalization."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msre.config import (
    DEFAULTS,
    EXPERIMENT_KINDS,
    RunConfig,
    default_sizes,
    disorder_spec,
    normalize,
    parse_config,
    parse_config_text,
)
from msre.errors import ConfigError


def test_minimal_config_gets_defaults():
    cfg = parse_config_text('{"kind": "identity-check", "d": 1, "n": 1}')
    assert cfg.block("model")["lam"] == 1.0
    assert cfg.block("disorder")["kind"] == "white"
    assert cfg.seed == 0
    assert cfg.block("statistics")["replicas"] == 30
    assert cfg.block("statistics")["sizes"] == default_sizes("identity-check", 1)


@pytest.mark.parametrize(
    "patch,key",
    [
        ({"statistics": {"replicas": 0}}, "statistics.replicas"),
        ({"model": {"lam": -1}}, "model.lam"),
        ({"model": {"bogus": 1}}, "model.bogus"),
        ({"extra": 1}, "extra"),
        ({"disorder": {"kind": "gaussian"}}, "disorder.kind"),
        ({"statistics": {"sizes": [8, 4]}}, "statistics.sizes"),
        ({"solver": {"grid": {"W": 2}}}, "solver.grid"),
        ({"model": {"direction": [1.0, 1.0]}, "n": 2}, "model.direction"),
        ({"statistics": {"eps": 1.5}}, "statistics.eps"),
        ({"statistics": {"thresholds": {"nope": 1}}}, "statistics.thresholds.nope"),
        ({"d": 0}, "d"),
        ({"seed": 1.5}, "seed"),
        ({"output": {"plots": "yes"}}, "output.plots"),
    ],
)
def test_invalid_values_name_the_key(patch, key):
    raw = {"kind": "exponents", "d": 1, "n": 1}
    raw.update(patch)
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        normalize(raw)


@pytest.mark.parametrize("missing", ["kind", "d", "n"])
def test_required_keys(missing):
    raw = {"kind": "solve", "d": 1, "n": 1}
    del raw[missing]
    with pytest.raises(ConfigError, match=missing):
        normalize(raw)


def test_version_mismatch():
    with pytest.raises(ConfigError, match="schema_version"):
        normalize({"kind": "solve", "d": 1, "n": 1, "schema_version": 2})


def test_parse_error_reports_line_and_column():
    text = '{\n  "kind": "solve",\n  "d": 1,,\n}'
    with pytest.raises(ConfigError, match=r"line 3, column 10"):
        parse_config_text(text)


def test_parse_config_file(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"kind": "shiftpi", "d": 2, "n": 1, "seed": 4}))
    cfg = parse_config(p)
    assert cfg.kind == "shiftpi" and cfg.seed == 4
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.json")


def test_with_seed_and_disorder_spec():
    cfg = RunConfig(normalize({"kind": "solve", "d": 1, "n": 1, "disorder": {"profile": "biweight"}}))
    assert cfg.with_seed(9).seed == 9 and cfg.seed == 0
    spec = disorder_spec(cfg)
    assert spec["bump"] == {"profile": "biweight"} and spec["kind"] == "white"


def test_thresholds_accept_windows():
    out = normalize({"kind": "exponents", "d": 1, "n": 1, "statistics": {"thresholds": {"xi": [0.55, 0.8], "gap": 0.1}}})
    assert out["statistics"]["thresholds"] == {"gap": 0.1, "xi": [0.55, 0.8]}


_blocks = {
    "model": st.fixed_dictionaries({}, optional={"lam": st.floats(0.01, 10), "L": st.integers(1, 64)}),
    "disorder": st.fixed_dictionaries(
        {}, optional={"kind": st.sampled_from(["white", "linear", "poisson"]), "delta": st.floats(0.05, 1),
                      "amplitude": st.floats(-2, 2), "profile": st.sampled_from(["tent", "biweight"])}),
    "solver": st.fixed_dictionaries(
        {}, optional={"name": st.sampled_from(["auto", "dp", "local"]), "restarts": st.integers(1, 5),
                      "grid": st.none() | st.fixed_dictionaries({"W": st.integers(1, 8), "step": st.sampled_from([0.25, 0.5])})}),
    "statistics": st.fixed_dictionaries(
        {}, optional={"replicas": st.integers(1, 300), "sizes": st.lists(st.integers(1, 300), min_size=1, max_size=5,
                                                                         unique=True).map(sorted),
                      "frozen": st.booleans(), "x_ladder": st.lists(st.integers(0, 4).map(lambda k: k * 0.25)),
                      "thresholds": st.fixed_dictionaries({}, optional={"gap": st.floats(0.01, 1)})}),
    "budget": st.fixed_dictionaries({}, optional={"node_seconds": st.none() | st.integers(0, 10**6)}),
}


@settings(max_examples=50)
@given(kind=st.sampled_from(EXPERIMENT_KINDS), d=st.integers(1, 3), n=st.integers(1, 2),
       seed=st.integers(0, 2**31), blocks=st.fixed_dictionaries({}, optional=_blocks))
def test_normalize_is_idempotent(kind, d, n, seed, blocks):
    raw = {"kind": kind, "d": d, "n": n, "seed": seed, **blocks}
    once = normalize(raw)
    assert normalize(once) == once
    assert set(once) == set(DEFAULTS) | {"kind", "d", "n"}
    # the normalized form survives a JSON round trip unchanged
    assert normalize(json.loads(json.dumps(once))) == once
