import json

import numpy as np
import pytest

from adiabat import harness as hn
from adiabat.errors import ConfigError


def test_fit_slope_exact_power():
    x = np.array([0.1, 0.2, 0.4, 0.8])
    slope, intercept, resid = hn.fit_slope(x, 3 * x ** 2)
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert resid < 1e-12
    assert hn.fit_slope(x, np.full(4, 5.0))[0] == pytest.approx(0.0, abs=1e-12)


def test_fit_slope_with_noise(rng):
    x = np.geomspace(1 / 64, 1 / 8, 6)
    y = x ** 1.5 * (1 + 0.01 * rng.standard_normal(6))
    assert 1.4 < hn.fit_slope(x, y)[0] < 1.6


@pytest.mark.parametrize("xs, ys", [([1, 2], [1, 2]), ([1, 2, 3], [1, 0, 2]),
                                    ([1, -2, 3], [1, 2, 3]), ([1, 2, 3], [1, 2])])
def test_fit_slope_rejects(xs, ys):
    with pytest.raises(ValueError):
        hn.fit_slope(xs, ys)


def test_parse_config_full():
    text = """
    [experiment]
    name = leakage-scaling
    [model]
    id = two-level
    twist = 0.3   # inline comment
    [run]
    order = 0
    eps_list = 0.125, 0.0625, 0.03125
    n_points = 64
    time = 2.0
    time_mode = macroscopic
    seed = 11
    [output]
    dir = elsewhere
    """
    cfg = hn.parse_config(text)
    assert cfg.model_params == {"twist": 0.3}
    assert cfg.eps_list == [0.125, 0.0625, 0.03125]
    assert (cfg.order, cfg.n_points, cfg.time, cfg.seed) == (0, 64, 2.0, 11)
    assert cfg.time_mode == "macroscopic"
    assert cfg.out_dir == "elsewhere"


def test_defaults_fill_missing_keys():
    cfg = hn.parse_config("[experiment]\nname = bmt\n")
    assert cfg.model == "dirac"
    assert cfg.time == 10.0
    assert hn.default_config("projector-defect").order == 2


@pytest.mark.parametrize("text, field", [
    ("[run]\norder = 1\n", "experiment.name"),
    ("[experiment]\nname = nope\n", "experiment.name"),
    ("[experiment]\nname = bmt\n[extra]\nx = 1\n", "extra"),
    ("[experiment]\nname = bmt\n[model]\nid = spaceship\n", "model.id"),
    ("[experiment]\nname = leakage-scaling\n[model]\nwobble = 1\n", "model.wobble"),
    ("[experiment]\nname = leakage-scaling\n[model]\ntwist = abc\n", "model.twist"),
    ("[experiment]\nname = leakage-scaling\n[run]\nn_points = 100\n", "run.n_points"),
    ("[experiment]\nname = leakage-scaling\n[run]\nn_points = 1024\n", "run.n_points"),
    ("[experiment]\nname = leakage-scaling\n[run]\neps_list = 0.1, 2\n", "run.eps_list"),
    ("[experiment]\nname = leakage-scaling\n[run]\norder = 3\n", "run.order"),
    ("[experiment]\nname = leakage-scaling\n[run]\ntime_mode = slow\n", "run.time_mode"),
    ("[experiment]\nname = leakage-scaling\n[run]\ncolour = red\n", "run.colour"),
    ("[experiment]\nname = leakage-scaling\n[output]\nfile = x\n", "output.file"),
    ("no section header\n", "<file>"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        hn.parse_config(text)
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        hn.load_config(tmp_path / "absent.ini")


def test_registry_is_complete():
    assert len(hn.REGISTRY) == 9
    for name in hn.REGISTRY:
        assert hn.default_config(name).validate().experiment == name


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("ADPT_THREADS", raising=False)
    assert hn.resolve_threads(None) == 1
    monkeypatch.setenv("ADPT_THREADS", "3")
    assert hn.resolve_threads(None) == 3
    assert hn.resolve_threads(2) == 2
    monkeypatch.setenv("ADPT_THREADS", "many")
    with pytest.raises(ConfigError):
        hn.resolve_threads(None)
    with pytest.raises(ConfigError):
        hn.resolve_threads(0)


def test_summary_json_schema(tmp_path):
    res, summ = hn.run(hn.default_config("dirac-crosscheck"), tmp_path)
    on_disk = json.loads((tmp_path / "dirac-crosscheck.json").read_text())
    assert on_disk == json.loads(json.dumps(summ))
    assert set(on_disk) == {"schema_version", "experiment", "config", "checks", "slopes",
                            "passed"}
    assert on_disk["schema_version"] == 1
    assert on_disk["passed"] is res.passed
    for check in on_disk["checks"]:
        assert set(check) == {"name", "value", "op", "target", "passed"}
    header = (tmp_path / "dirac-crosscheck.csv").read_text().splitlines()[0]
    assert header.split(",") == res.header


@pytest.mark.parametrize("name", ["projector-defect", "wigner-snapshot"])
def test_runs_are_bit_identical(tmp_path, name):
    cfg = hn.default_config(name)
    hn.run(cfg, tmp_path / "a", threads=1)
    hn.run(cfg, tmp_path / "b", threads=4)
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_leakage_sweep_reports_grid_refinement(tmp_path):
    cfg = hn.default_config("leakage-scaling")
    cfg.order, cfg.eps_list = 0, [1 / 8, 1 / 16]
    deltas = {}
    for n in (64, 128):
        cfg.n_points = n
        res, summ = hn.run(cfg, tmp_path / str(n))
        header, rows = res.tables["refinement"]
        assert rows[0][:3] == [1 / 8, n, 2 * n]
        deltas[n] = rows[0][-1]
        assert (tmp_path / str(n) / "leakage-scaling-refinement.csv").exists()
        check = next(c for c in summ["checks"] if c["name"].startswith("grid refinement"))
        assert check["passed"] == (deltas[n] <= 1e-6)
    # 64 sites under-resolve the benchmark, 128 do not
    assert deltas[64] > 1e-6
    assert deltas[128] < 1e-9


def test_precession_return_is_small():
    assert hn.precession_return() < 1e-10
