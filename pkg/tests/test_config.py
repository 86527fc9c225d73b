"""Configuration parsing, validation and round trip."""

import math

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from biharmonic_resonance.config import (
    SCHEMA_VERSION,
    GridSpec,
    RunConfig,
    fixture_dict,
    load_config,
    load_fixture,
    provenance_hash,
    shipped_fixture,
)
from biharmonic_resonance.errors import ValidationError

FULL = {
    "dimension": 7,
    "potential": {"family": "bumps", "bumps": [{"kind": "poly", "center": 1.0, "width": 0.8},
                                              {"kind": "gaussian", "center": 2.5, "width": 0.5}],
                  "alpha": [-3.0, 1.5], "channels": [0]},
    "grid": {"N": 96, "R": 4.0, "scheme": "graded"},
    "tau": 1e-9,
    "mu_sweep": {"angle": 0.3, "min": 1e-3, "max": 5e-2, "count": 12},
    "t_sweep": {"min": 10.0, "max": 1e4, "count": 20},
    "test_function": {"width": 0.7, "center": 0.2, "channel": 0},
    "cutoff": "poly",
    "output": {"dir": "runs", "cache": None},
    "seed": 12345,
}


def test_schema_version():
    assert SCHEMA_VERSION == "1.0"


def test_defaults_round_trip():
    cfg = RunConfig()
    assert RunConfig.loads(cfg.dumps()) == cfg


def test_full_round_trip_is_exact():
    cfg = RunConfig.from_dict(FULL)
    text = cfg.dumps()
    again = RunConfig.loads(text)
    assert again == cfg
    assert again.dumps() == text
    assert cfg.to_dict() == FULL


@given(
    d=st.integers(5, 12),
    tau=st.floats(1e-14, 0.5),
    angle=st.floats(1e-3, 1.5),
    lo=st.floats(1e-8, 1e-3),
    span=st.floats(1.5, 1e4),
    count=st.integers(4, 200),
    seed=st.integers(0, 2 ** 64 - 1),
    center=st.floats(0.0, 10.0),
)
def test_round_trip_property(d, tau, angle, lo, span, count, seed, center):
    data = dict(FULL, dimension=d, tau=tau, seed=seed,
                mu_sweep={"angle": angle, "min": lo, "max": lo * span, "count": count},
                test_function={"width": 1.0, "center": center, "channel": None})
    cfg = RunConfig.from_dict(data)
    assert RunConfig.loads(cfg.dumps()) == cfg


@pytest.mark.parametrize("section", ["config", "potential", "grid", "mu_sweep", "t_sweep",
                                     "test_function", "output", "bump"])
def test_unknown_keys_rejected(section):
    data = yaml.safe_load(yaml.safe_dump(FULL))
    if section == "config":
        data["extra"] = 1
    elif section == "bump":
        data["potential"]["bumps"][0]["height"] = 1
    else:
        data[section]["extra"] = 1
    with pytest.raises(ValidationError, match="unknown key"):
        RunConfig.from_dict(data)


def test_yaml_string_numbers_accepted():
    # PyYAML reads 1e-8 (no dot) as a string
    cfg = RunConfig.loads("tau: 1e-8\nmu_sweep: {min: 1e-5, max: 1e-2}\n")
    assert cfg.tau == 1e-8
    assert cfg.mu_sweep.min == 1e-5


@pytest.mark.parametrize("patch", [
    {"dimension": 4},
    {"dimension": 5.5},
    {"tau": 0},
    {"tau": 2.0},
    {"tau": "abc"},
    {"tau": True},
    {"tau": math.nan},
    {"cutoff": "gauss"},
    {"seed": -1},
    {"grid": {"N": 4}},
    {"grid": {"scheme": "uniform"}},
    {"grid": {"R": -1}},
    {"mu_sweep": {"min": 1e-1, "max": 1e-2}},
    {"mu_sweep": {"angle": 2.0}},
    {"mu_sweep": {"count": 3}},
    {"t_sweep": {"min": 10.0}},
    {"t_sweep": {"min": 0.5, "max": 10.0}},
    {"test_function": {"center": -1.0}},
    {"test_function": {"width": 0}},
    {"test_function": {"channel": -1}},
    {"potential": {"family": "tuned", "classification": "SecondKind"}},
    {"potential": {"family": "tuned", "classification": "Bogus"}},
    {"potential": {"family": "tuned", "alpha": [1.0]}},
    {"potential": {"family": "bumps", "bumps": [], "alpha": []}},
    {"potential": {"family": "bumps", "bumps": [{"center": 1.0}], "alpha": [1.0, 2.0]}},
    {"potential": {"family": "bumps", "bumps": [{"kind": "square"}], "alpha": [1.0]}},
    {"potential": {"family": "bumps", "bumps": [{}], "alpha": [1.0], "classification": "Regular"}},
    {"potential": {"family": "other"}},
    {"potential": {"fixture": "x.yaml", "alpha": [1.0]}},
    {"potential": {"channels": 0}},
    {"output": "out"},
])
def test_bad_values_rejected(patch):
    data = dict({"dimension": 7}, **patch)
    with pytest.raises(ValidationError):
        RunConfig.from_dict(data)


def test_invalid_yaml_is_validation_error(tmp_path):
    with pytest.raises(ValidationError):
        RunConfig.loads("tau: [1,\n")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "missing.yaml")


def test_with_overrides_revalidates():
    cfg = RunConfig()
    assert cfg.with_overrides(seed=7).seed == 7
    with pytest.raises(ValidationError):
        cfg.with_overrides(dimension=3)


def test_fixture_path_resolved_relative_to_config(tmp_path):
    (tmp_path / "run.yaml").write_text("dimension: 5\npotential: {fixture: pot.yaml}\n")
    cfg = load_config(tmp_path / "run.yaml")
    assert cfg.potential.family == "fixture"
    assert cfg.potential.fixture == str(tmp_path / "pot.yaml")
    assert cfg.potential.to_dict() == {"fixture": str(tmp_path / "pot.yaml")}


@pytest.mark.parametrize("d,cls", [(5, "FirstKind"), (6, "SecondKind"), (9, "Eigenvalue"), (10, "Regular")])
def test_shipped_fixtures_load(d, cls):
    fx = load_fixture(shipped_fixture(d, cls))
    assert fx["problem"].dimension == d
    assert fx["classification"] == cls
    assert isinstance(fx["grid"], GridSpec)


def test_missing_fixture_rejected():
    with pytest.raises(ValidationError):
        shipped_fixture(7, "SecondKind")


def test_fixture_dict_round_trip(tmp_path):
    fx = load_fixture(shipped_fixture(5, "Eigenvalue"))
    path = tmp_path / "fx.yaml"
    path.write_text(yaml.safe_dump(fixture_dict(fx["problem"], fx["classification"], fx["grid"])))
    again = load_fixture(path)
    assert again["problem"].alpha == fx["problem"].alpha
    assert again["problem"].bumps == fx["problem"].bumps
    assert again["grid"] == fx["grid"]


def test_fixture_rejects_unknown_keys_and_bad_class(tmp_path):
    base = fixture_dict(load_fixture(shipped_fixture(7, "FirstKind"))["problem"])
    path = tmp_path / "fx.yaml"
    path.write_text(yaml.safe_dump(dict(base, colour="red")))
    with pytest.raises(ValidationError):
        load_fixture(path)
    path.write_text(yaml.safe_dump(dict(base, classification="SecondKind")))
    with pytest.raises(ValidationError):
        load_fixture(path)


def test_provenance_hash_is_stable_and_order_free():
    a = {"x": 1, "y": [1.0, 2.0]}
    b = {"y": [1.0, 2.0], "x": 1}
    assert provenance_hash(a) == provenance_hash(b)
    assert len(provenance_hash(a)) == 16
    assert provenance_hash(a) != provenance_hash({"x": 2, "y": [1.0, 2.0]})
    cfg = RunConfig.from_dict(FULL)
    assert provenance_hash(cfg.to_dict()) == provenance_hash(RunConfig.loads(cfg.dumps()).to_dict())
