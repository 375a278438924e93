import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyflow.appio import (
    ConfigError,
    RunConfig,
    appendix_seed_params,
    bundled_data,
    estimate_mass_constant,
    load_config,
    load_observations,
    load_reference_fit,
    reference_params,
    write_observations,
)
from levyflow.core import ObservationGroup, ObservationSet

PAPER_K224 = 56778.24


def test_bundled_day224_table():
    obs = load_observations(bundled_data("made_day224.csv"))
    assert obs.times == [224.0]
    g = obs.groups[0]
    assert len(g) == 29
    assert g.x[0] == 2.1 and g.x[-1] == 268.7
    assert g.c[0] == 3378 and g.c[-1] == 6


def test_bundled_day328_table():
    obs = load_observations(bundled_data("made_day328.csv"))
    g = obs.groups[0]
    assert obs.times == [328.0] and len(g) == 32
    assert (g.x[0], g.c[0]) == (2.1, 1762)


def test_reference_fit_columns():
    x, fitted = load_reference_fit("day224")
    assert x.size == 29 and fitted[0] == pytest.approx(2871.7248)


def write(tmp_path, text, name="obs.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_file_has_no_observations(tmp_path):
    with pytest.raises(ValueError, match="no observations"):
        load_observations(write(tmp_path, ""))
    with pytest.raises(ValueError, match="no observations"):
        load_observations(write(tmp_path, "time,x,concentration\n"))


def test_malformed_row_reports_line_number(tmp_path):
    path = write(tmp_path, "time,x,concentration\n1,2,3\n1,abc,4\n")
    with pytest.raises(ValueError, match=r":3:"):
        load_observations(path)


def test_negative_concentration_rejected(tmp_path):
    with pytest.raises(ValueError, match="negative"):
        load_observations(write(tmp_path, "time,x,concentration\n1,2,-3\n"))


def test_duplicate_location_rejected(tmp_path):
    with pytest.raises(ValueError, match="duplicate"):
        load_observations(write(tmp_path, "time,x,concentration\n1,2,3\n1,2,4\n"))


def test_missing_columns_rejected(tmp_path):
    with pytest.raises(ValueError, match="lacks"):
        load_observations(write(tmp_path, "time,x\n1,2\n"))


def test_weight_column_and_override(tmp_path):
    path = write(tmp_path, "time,x,concentration,weight\n1,2,3,2\n1,3,3,2\n5,1,1,1\n")
    obs = load_observations(path)
    assert [g.weight for g in obs.groups] == [2.0, 1.0]
    assert [g.weight for g in load_observations(path, {5.0: 4.0}).groups] == [2.0, 4.0]
    bad = write(tmp_path, "time,x,concentration,weight\n1,2,3,2\n1,3,3,1\n", "bad.csv")
    with pytest.raises(ValueError, match="weight differs"):
        load_observations(bad)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1.0, 2.5, 7.0]), st.floats(0, 300), st.floats(0, 1e4),),
                min_size=1, max_size=30, unique_by=lambda r: (r[0], r[1])))
def test_write_and_reload_round_trip(tmp_path_factory, rows):
    groups = []
    for t in sorted({r[0] for r in rows}):
        pts = [(x, c) for tt, x, c in rows if tt == t]
        xs, cs = zip(*pts)
        groups.append(ObservationGroup(t, np.array(xs), np.array(cs), weight=1.0 + t))
    obs = ObservationSet(tuple(groups))
    path = tmp_path_factory.mktemp("rt") / "obs.csv"
    write_observations(obs, path)
    back = load_observations(path)
    assert back.times == obs.times
    for a, b in zip(back.groups, obs.groups):
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.c, b.c)
        assert a.weight == b.weight


def test_mass_constant_rectangle():
    g = ObservationGroup(0.0, np.array([0.0, 1.0]), np.array([2.0, 2.0]))
    assert estimate_mass_constant(g, (0.0, 1.0)) == pytest.approx(2.0)


def test_mass_constant_day224_is_near_reference_value():
    g = load_observations(bundled_data("made_day224.csv")).groups[0]
    assert estimate_mass_constant(g, (0.0, 300.0)) == pytest.approx(PAPER_K224, rel=0.25)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 1e3))
def test_mass_constant_scales_and_density_does_not(factor):
    g = load_observations(bundled_data("made_day224.csv")).groups[0]
    scaled = ObservationGroup(g.time, g.x, g.c * factor)
    K, K_s = estimate_mass_constant(g, (0, 300)), estimate_mass_constant(scaled, (0, 300))
    assert K_s == pytest.approx(factor * K, rel=1e-12)
    np.testing.assert_allclose(scaled.c / K_s, g.c / K, rtol=1e-12)


def test_mass_constant_needs_two_points():
    with pytest.raises(ValueError):
        estimate_mass_constant(ObservationGroup(0.0, np.array([1.0]), np.array([1.0])), (0, 2))


def test_reference_and_appendix_parameters():
    p = reference_params("day224")
    assert (p.lam, p.gamma, p.b, p.mass_constant) == (0.80, 0.9999, 0.1859783, PAPER_K224)
    s = appendix_seed_params("day224")
    assert s.alpha == pytest.approx(1.0915) and s.drift.a0 == 0.196051
    assert s.beta == pytest.approx(0.99)


def test_config_parsing(tmp_path):
    path = write(tmp_path, """
[model]
lambda = 0.7
a0 = 0.2
source = 4
[grid]
intervals = 50
dt = 0.5
clip_negative = yes
[output]
times = 1, 2.5
[fit]
data = obs.csv
pair = a23
weights = 224:2, 328:1
[sample]
n = 10
""", "run.ini")
    cfg = load_config(path)
    assert cfg.lam == 0.7 and cfg.a0 == 0.2 and cfg.source == 4.0
    assert cfg.intervals == 50 and cfg.dt == 0.5 and cfg.clip_negative
    assert cfg.output_times == [1.0, 2.5]
    assert cfg.pair == "a23" and cfg.weights == {224.0: 2.0, 328.0: 1.0}
    assert cfg.data == str((tmp_path / "obs.csv").resolve())
    assert cfg.sample_n == 10


@pytest.mark.parametrize("text", ["[nope]\nx = 1\n", "[model]\nfoo = 1\n",
                                  "[model]\nlambda = 1.5\n", "[grid]\nsolver = magic\n",
                                  "[grid]\nintervals = many\n"])
def test_config_errors(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text, "bad.ini"))


def test_missing_config_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_grid_requires_output_times_on_levels():
    cfg = RunConfig(dt=1.0)
    with pytest.raises(ConfigError):
        cfg.grid(10.0, [2.5])


def test_boundary_source_moves_inside():
    cfg = RunConfig(intervals=600)
    grid = cfg.grid(1.0)
    assert cfg.source_location(grid) == pytest.approx(0.5)
