import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nls3lab.config import FIELDS, ConfigError, ExperimentConfig, as_dict, load, override, parse_text, to_text
from nls3lab.radial import MassTriple


def test_every_field_documented():
    from dataclasses import fields

    names = {f.name for f in fields(ExperimentConfig)}
    assert names == set(FIELDS)
    assert all(help_text for _, help_text in FIELDS.values())


def test_defaults():
    c = parse_text("")
    assert c == ExperimentConfig()
    assert c.masses == MassTriple(1, 1, 3) and math.isinf(c.r_max)


def test_parse_values_and_comments():
    c = parse_text("masses = 1, 2, 3  # comment\n\n# only a comment\nn = 512\nr_max = inf\nbackward = no\ntriples = 1,1,1; 1,1,3\n")
    assert c.masses == MassTriple(1, 2, 3) and c.n == 512 and not c.backward
    assert c.triples == (MassTriple(1, 1, 1), MassTriple(1, 1, 3))


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("n = 64\nbogus = 3\n", ":2: unknown key 'bogus'"),
        ("n = 64\nn = 128\n", "duplicate key 'n'"),
        ("dt = fast\n", ":1: bad value for 'dt'"),
        ("just words\n", "expected 'key = value'"),
        ("masses = 1,2\n", "bad value for 'masses'"),
        ("triples = ;\n", "empty mass lattice"),
        ("mapping = spiral\n", "expected one of"),
        ("dt = nan\n", "nan is not allowed"),
        ("n = 4\n", "n must be >= 16"),
        ("mapping = uniform\n", "uniform mapping needs a finite r_max"),
        ("initial = file\n", "initial_file"),
        ("series_order = 9\n", "series_order"),
    ],
)
def test_rejections(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_text(text, "cfg.txt")
    assert fragment in str(exc.value)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "nope.cfg")


def test_load_reports_path(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("n = 64\nfoo = 1\n")
    with pytest.raises(ConfigError) as exc:
        load(p)
    assert f"{p}:2" in str(exc.value)


def test_override_revalidates():
    c = ExperimentConfig()
    assert override(c, n=None, seed=5).seed == 5
    with pytest.raises(ValueError):
        override(c, dt=-1.0)


configs = st.builds(
    ExperimentConfig,
    masses=st.tuples(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10)).map(lambda t: MassTriple(*t)),
    n=st.integers(16, 10_000),
    r_max=st.one_of(st.just(math.inf), st.floats(1.0, 1e3)),
    seed=st.integers(0, 2**31),
    dt=st.floats(1e-4, 1.0),
    backward=st.booleans(),
    a=st.floats(-5, 5),
    triples=st.one_of(st.none(), st.lists(st.tuples(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5)).map(lambda t: MassTriple(*t)), min_size=1, max_size=4).map(tuple)),
    weight_profile=st.sampled_from(["quintic", "septic", "curvature-bounded"]),
)


@given(configs)
def test_text_roundtrip(c):
    back = parse_text(to_text(c))
    assert as_dict(back) == as_dict(c)
