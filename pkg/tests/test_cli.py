import filecmp
import json
from pathlib import Path

import pytest
import yaml

from lbregularity import cli
from lbregularity.errors import ConfigError, DomainError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_list_checks_stable(capsys):
    assert cli.main(["list-checks"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["list-checks"]) == 0
    assert capsys.readouterr().out == first
    entries = cli.list_checks()
    assert len(entries) >= 10
    assert all(ref for _, ref in entries)
    assert len({n for n, _ in entries}) == len(entries)


@pytest.mark.parametrize("name", ["default.yaml", "paper-suite.yaml", "zero.yaml"])
def test_shipped_configs_validate(name):
    sc = cli.load_scenario(CONFIGS / name)
    assert all(c["name"] in cli.REGISTRY for c in sc.checks)


def _write(tmp_path, cfg):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_missing_gamma(tmp_path, capsys):
    cfg = yaml.safe_load((CONFIGS / "zero.yaml").read_text())
    del cfg["potential"]["gamma"]
    p = _write(tmp_path, cfg)
    with pytest.raises(ConfigError, match="gamma"):
        cli.load_scenario(p)
    assert cli.main(["verify", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "gamma" in capsys.readouterr().err


@pytest.mark.parametrize("patch", [{"potential": {"gamma": 1.5}}, {"checks": ["no_such_check"]},
                                   {"domain": {"shape": "ball", "radius": -1.0}}])
def test_invalid_configs(tmp_path, patch):
    cfg = yaml.safe_load((CONFIGS / "zero.yaml").read_text())
    cfg.update(patch)
    with pytest.raises((ConfigError, DomainError)):
        cli.load_scenario(_write(tmp_path, cfg))


def test_zero_scenario_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    quiet = lambda msg: None
    assert cli.run_scenario(CONFIGS / "zero.yaml", a, log=quiet) == 0
    assert cli.run_scenario(CONFIGS / "zero.yaml", b, log=quiet) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    assert "summary.json" in files and "solve.json" in files
    for name in files:
        if name != "run_info.json":
            assert filecmp.cmp(a / name, b / name, shallow=False), name
    summary = json.loads((a / "summary.json").read_text())
    assert summary["exit_status"] == 0
    assert all(r["passed"] for r in summary["results"])
