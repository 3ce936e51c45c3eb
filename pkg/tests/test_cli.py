import json

import numpy as np
import pytest

from nodalgp.cli import ConfigError, RunConfig, dispatch, main, parse_config, serialize
from nodalgp.core import ParamsError

MINIMAL = '{"command": "spectrum", "dim": 1, "lengths": [3.14159265], "sizes": [200], "K": 5}'


def _run(tmp_path, cfg: dict, *extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return main(["--config", str(path), "--out", str(tmp_path / "out"), "--quiet", *extra])


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert isinstance(cfg, RunConfig)
    assert cfg.K == 5 and cfg.sizes == (200,)
    assert cfg.params.mu == (1.0, 1.0) and cfg.step.max_steps == 2000 and cfg.linking.samples == 10_000


def test_round_trip():
    cfg = parse_config(
        json.dumps(
            {
                "command": "sweep",
                "mu": [1, -1, 2],
                "beta": [[0, 0.2, -0.1], [0.2, 0, 0.3], [-0.1, 0.3, 0]],
                "masses": [1e-3, 2e-3, 3e-3],
                "order": [2, 0, 1],
                "step": {"mode": "saddle", "dt_max": 0.5, "dt_init": 0.25},
                "linking": {"d": 1},
                "sweep": {"direction": [0.2, 0.3, 0.5], "target": "semi_nodal", "d": 2, "active": [0, 1]},
            }
        )
    )
    assert parse_config(serialize(cfg)) == cfg
    assert parse_config(serialize(parse_config(MINIMAL))) == parse_config(MINIMAL)


@pytest.mark.parametrize(
    "text, exc, msg",
    [
        ('{"command": "solve", "beta": [[0, 0]]}', ParamsError, "coupling must be nonzero"),
        ('{"command": "solve", "colour": 1}', ConfigError, "unknown key"),
        ('{"command": "solve", "step": {"dt": 1}}', ConfigError, "unknown key"),
        ('{"command": "solve", "K": "five"}', ConfigError, "K"),
        ('{"command": "solve", "K": 2.5}', ConfigError, "integer"),
        ('{"command": "fly"}', ConfigError, "command"),
        ('{"K": 3}', ConfigError, "command"),
        ('{"command": "solve", "step": {"dt_max": 3}}', ConfigError, "dt_max"),
        ("not json", ConfigError, "JSON"),
    ],
)
def test_parse_errors(text, exc, msg):
    with pytest.raises(exc, match=msg):
        parse_config(text)


def test_spectrum_command_and_echo(tmp_path):
    (tmp_path / "cfg.json").write_text(MINIMAL)
    assert main(["--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rows = (tmp_path / "o" / "spectrum.csv").read_text().splitlines()
    assert rows[0] == "k,lambda_k" and len(rows) == 6
    assert abs(float(rows[2].split(",")[1]) - 4.0) < 1e-3
    echo = json.loads((tmp_path / "o" / "effective_config.json").read_text())
    assert echo["K"] == 5 and echo["step"]["dt_max"] == 1.0


def test_config_error_exit_code(tmp_path):
    assert _run(tmp_path, {"command": "solve", "beta": [[0, 0]]}) == 1
    assert main(["--config", str(tmp_path / "missing.json")]) == 1


def test_infeasible_solve_exit_code(tmp_path):
    assert _run(tmp_path, {"command": "solve", "masses": [0.5, 0.5], "sizes": [60], "linking": {"samples": 50}}) == 2
    rep = json.loads((tmp_path / "out" / "feasibility.json").read_text())
    assert rep["conditions"]["ball_cap"]["holds"] is False


def test_solve_writes_artifacts_and_is_reproducible(tmp_path):
    cfg = {"command": "solve", "sizes": [100], "linking": {"samples": 500, "delta_samples": 200}}
    assert _run(tmp_path, cfg, "--seed", "3") == 0
    out = tmp_path / "out"
    first = (out / "run_log.csv").read_bytes()
    report = json.loads((out / "solve_report.json").read_text())
    assert report["classification"].startswith("SignChanging") or "SignChanging" in json.dumps(report)
    assert json.loads((out / "effective_config.json").read_text())["seed"] == 3
    assert _run(tmp_path, cfg, "--seed", "3") == 0
    assert (out / "run_log.csv").read_bytes() == first


def test_bracket_and_sweep_commands(tmp_path):
    assert _run(tmp_path, {"command": "bracket", "sizes": [100], "linking": {"samples": 500}}) == 0
    assert json.loads((tmp_path / "out" / "bracket.json").read_text())["holds"]
    sw = {"command": "sweep", "sizes": [100], "sweep": {"radii": [1e-2, 1e-3], "target": "positive"}}
    assert _run(tmp_path, sw) == 0
    assert len((tmp_path / "out" / "sweep.csv").read_text().splitlines()) == 3


def test_dispatch_direct(tmp_path):
    cfg = parse_config(json.dumps({"command": "feasibility", "sizes": [80], "out": str(tmp_path / "f")}))
    assert dispatch(cfg, quiet=True) == 0
    assert (tmp_path / "f" / "effective_config.json").exists()


@pytest.mark.parametrize("passed, code", [(True, 0), (False, 2)])
def test_selftest_exit_code_follows_suite(tmp_path, monkeypatch, passed, code):
    from nodalgp import selftest

    fake = [selftest.CriterionResult(1, "stub", passed, "stubbed", 0.0, 5.0)]
    monkeypatch.setattr(selftest, "run_all", lambda echo=None: fake)
    assert _run(tmp_path, {"command": "selftest"}) == code
    blob = json.loads((tmp_path / "out" / "selftest.json").read_text())
    assert blob[0]["passed"] is passed
