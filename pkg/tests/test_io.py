import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bellstat import JointDistribution, Scenario, SettingDistribution, chsh_functional
from bellstat.chsh import sample_indices
from bellstat.io import (
    FormatError,
    fmt,
    format_csv,
    format_distribution,
    format_functional,
    format_trials,
    read_csv,
    read_distribution,
    read_functional,
    read_trials,
    write_trials,
)

from conftest import random_conditional_q


def records_of(indices, scenario):
    return np.stack(np.unravel_index(indices, scenario.shape), axis=1)


def test_trial_round_trip(tmp_path, chsh_scenario, uniform_settings, ideal_q):
    idx = sample_indices(ideal_q, 500, seed=0)
    path = tmp_path / "t.txt"
    write_trials(path, chsh_scenario, uniform_settings, records_of(idx, chsh_scenario), ["seed 0"])
    back = read_trials(path)
    assert back.scenario == chsh_scenario
    assert back.setting_dist == uniform_settings
    assert np.array_equal(back.indices, idx)
    assert back.comments == ["seed 0"]


def test_synthetic_3016_trial_file_round_trips(tmp_path, chsh_scenario):
    # unequal setting frequencies exercise the settings header line
    rng = np.random.default_rng(3016)
    sd = SettingDistribution(np.array([[0.26, 0.24], [0.23, 0.27]]))
    recs = np.column_stack([rng.integers(0, 2, size=(3016, 4))])
    text = format_trials(chsh_scenario, sd, recs, ["synthetic", "unequal setting frequencies"])
    path = tmp_path / "synthetic.txt"
    path.write_text(text)
    back = read_trials(path)
    assert len(back.records) == 3016
    assert np.array_equal(back.records, recs)
    assert np.array_equal(back.setting_dist.probs, sd.probs)
    assert format_trials(back.scenario, back.setting_dist, back.records, back.comments) == text


def test_empty_trial_file(chsh_scenario, uniform_settings):
    text = format_trials(chsh_scenario, uniform_settings, np.zeros((0, 4)))
    back = read_trials(io.StringIO(text))
    assert len(back.records) == 0
    assert len(back.indices) == 0


def test_settings_default_to_uniform():
    back = read_trials(io.StringIO("# bell-trials v1\n# scenario: 2 3 2 2\n0 2 1 0\n"))
    assert np.allclose(back.setting_dist.probs, 1 / 6)
    assert back.scenario == Scenario(2, 3, 2, 2)


@pytest.mark.parametrize(
    "text,line",
    [
        ("# bell-trials v1\n# scenario: 2 2 2 2\n0 0 0 0\n0 0 1\n", 4),
        ("# bell-trials v1\n# scenario: 2 2 2 2\n0 0 0 0\n\n0 0 x 1\n", 5),
        ("# bell-trials v1\n# scenario: 2 2 2 2\n0 0 0 2\n", 3),
        ("# bell-trials v1\n# scenario: 2 2 2\n", 2),
        ("# bell-trials v1\n# scenario: 2 2 2 2\n# settings: 0.5 0.5 0.5 0.5\n", 3),
    ],
)
def test_parse_errors_name_the_line(text, line):
    with pytest.raises(FormatError) as err:
        read_trials(io.StringIO(text))
    assert err.value.line == line
    assert f":{line}:" in str(err.value)


def test_missing_headers():
    with pytest.raises(FormatError, match="bell-trials"):
        read_trials(io.StringIO("# scenario: 2 2 2 2\n0 0 0 0\n"))
    with pytest.raises(FormatError, match="scenario"):
        read_trials(io.StringIO("# bell-trials v1\n0 0 0 0\n"))
    with pytest.raises(FormatError, match="bell-trials"):
        read_trials(io.StringIO("# bell-distribution v1\n# scenario: 2 2 2 2\n"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_trials(tmp_path / "nope.txt")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distribution_round_trip_is_exact(seed):
    rng = np.random.default_rng(seed)
    sc = Scenario(2, 2, 2, 2)
    sd = SettingDistribution(rng.dirichlet(np.ones(4)).reshape(2, 2))
    q = random_conditional_q(rng, sc, sd, alpha=0.5)
    back = read_distribution(io.StringIO(format_distribution(q)))
    assert np.array_equal(back.probs, q.probs)
    assert back.setting_dist == sd


def test_distribution_with_omitted_cells():
    text = "# bell-distribution v1\n# scenario: 1 1 2 2\n0 0 0 0 0.5\n0 0 1 1 0.5\n"
    q = read_distribution(io.StringIO(text))
    assert q.flat.tolist() == [0.5, 0.0, 0.0, 0.5]


def test_bad_probability_field():
    with pytest.raises(FormatError) as err:
        read_distribution(io.StringIO("# bell-distribution v1\n# scenario: 1 1 2 2\n0 0 0 0 half\n"))
    assert err.value.line == 3


def test_functional_round_trip(uniform_settings):
    f = chsh_functional(uniform_settings)
    back = read_functional(io.StringIO(format_functional(f, ["CHSH"])))
    assert np.array_equal(back.values, f.values)
    assert back.bound == 2.0


def test_functional_needs_bound():
    with pytest.raises(FormatError, match="B:"):
        read_functional(io.StringIO("# bell-functional v1\n# scenario: 1 1 2 2\n0 0 0 0 1\n0 0 1 1 -1\n"))


def test_fmt():
    assert fmt(0.0) == "0"
    assert fmt(None) == ""
    assert fmt(math.nan) == ""
    assert fmt(-math.inf) == "-inf"
    assert float(fmt(0.1)) == 0.1
    assert float(fmt(1 / 3)) == 1 / 3


def test_csv_round_trip():
    text = format_csv(["n", "x"], [(1, 0.5), (2, math.nan)], ["input t.txt"])
    comments, cols, rows = read_csv(io.StringIO(text))
    assert comments[0].startswith("bellstat ")
    assert comments[1] == "input t.txt"
    assert cols == ["n", "x"]
    assert rows == [["1", "0.5"], ["2", ""]]
