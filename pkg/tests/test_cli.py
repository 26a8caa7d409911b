import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from smoothquad import cli

ROOT = Path(__file__).resolve().parents[1]
DIGITAL_CFG = ROOT / "configs" / "digital_gbm.cfg"


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_shipped_config_prices_digital(tmp_path):
    out = tmp_path / "dg.csv"
    assert cli.main(["run", "--config", str(DIGITAL_CFG), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1 and list(rows[0]) == cli.COLUMNS["price"]
    assert abs(float(rows[0]["value"]) / 0.42074 - 1) < 0.01
    meta = json.loads(Path(str(out) + ".meta.json").read_text())
    assert meta["seed"] == 2024 and meta["config"]["model"]["sigma"] == "0.4"
    assert meta["wall_time_s"] > 0 and "version" in meta


def test_negative_sigma_exit_2(tmp_path, capsys):
    bad = write_cfg(tmp_path, DIGITAL_CFG.read_text().replace("sigma = 0.4", "sigma = -0.4"))
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    assert "model.sigma" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_unknown_fields_and_kinds_exit_2(tmp_path):
    for old, new in (("kind = price", "kind = nope"), ("type = digital", "type = barrier"),
                     ("name = asgq", "name = sobol"), ("budget = 1000", "budget = lots")):
        bad = write_cfg(tmp_path, DIGITAL_CFG.read_text().replace(old, new))
        assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "never.csv"
    assert cli.main(["run", "--config", str(DIGITAL_CFG), "--out", str(out), "--dry-run"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["method"] == "asgq" and plan["richardson"] == 1 and plan["n_steps"] == 8
    assert list(tmp_path.iterdir()) == []


def test_runtime_error_exit_3(tmp_path, monkeypatch):
    def boom(cfg, threads=1):
        raise FloatingPointError("non-finite sample")

    monkeypatch.setattr(cli, "execute", boom)
    assert cli.main(["run", "--config", str(DIGITAL_CFG), "--out", str(tmp_path / "x.csv")]) == 3


def test_presets_table(capsys):
    assert cli.main(["presets"]) == 0
    text = capsys.readouterr().out
    assert len(text.strip().splitlines()) == 6
    basket = cli.PRESETS["basket-gbm-4d"]
    assert basket["reference"] == 11.04
    assert basket["model"]["sigma"] == "0.4" and basket["model"]["rho"] == "0.3" and basket["model"]["d"] == "4"
    assert basket["payoff"] == {"type": "basket_call", "strike": "100", "weights": "0.25"}
    assert cli.PRESETS["heston-call"]["reference"] == 6.33254


def test_unknown_preset_exit_2(tmp_path):
    assert cli.main(["presets", "nope"]) == 2
    assert cli.main(["run", "--preset", "nope", "--out", str(tmp_path / "x.csv")]) == 2


def test_preset_resolves_to_valid_plan():
    for name in cli.PRESETS:
        assert cli.main(["run", "--preset", name, "--dry-run"]) == 0


def test_jsonl_mirrors_csv(tmp_path):
    study = write_cfg(tmp_path, "[experiment]\nkind = quad-study\n[study]\nbudgets = 20 60\n", "s.cfg")
    a, b = tmp_path / "a.csv", tmp_path / "b.jsonl"
    assert cli.main(["run", "--preset", "gbm-call", "--config", str(study), "--out", str(a)]) == 0
    assert cli.main(["run", "--preset", "gbm-call", "--config", str(study), "--out", str(b), "--format",
                     "jsonl"]) == 0
    rows_csv = list(csv.DictReader(a.open()))
    rows_json = [json.loads(line) for line in b.read_text().splitlines()]
    assert [list(r) for r in rows_json] == [cli.COLUMNS["quad-study"]] * 2
    for rc, rj in zip(rows_csv, rows_json):
        assert {k: float(v) for k, v in rc.items()} == pytest.approx({k: float(v) for k, v in rj.items()})


def test_bit_reproducible_under_seed(tmp_path):
    cfg = write_cfg(tmp_path, DIGITAL_CFG.read_text().replace("name = asgq", "name = mc\nn_samples = 4000"))
    outs = []
    for i, seed in enumerate((5, 5, 6)):
        out = tmp_path / f"r{i}.csv"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", str(seed)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]


def test_golden_price_schema(tmp_path):
    out = tmp_path / "p.csv"
    assert cli.main(["run", "--preset", "gbm-digital", "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header == "method,smoothed,n_steps,richardson,value,stat_error,work,reference,rel_error"


@pytest.mark.parametrize("kind,extra", [
    ("stat-study", "[method]\nname = rqmc\nn_points = 64\nn_shifts = 4\n[study]\nsamples = 64 128\n"),
    ("mixed-diff", "[study]\ndirections = 0 1\nk_max = 3\n"),
    ("smoothing-study", "[study]\nm_lag = 4 8\ntol_newton = 1e-2 1e-6\nbudget = 50\n"),
    ("decay-probe", "[model]\nn_steps = 4\n[study]\nn_probe_points = 4\n"),
    ("weak-error", "[method]\nname = asgq\nbudget = 100\n[study]\nn_steps = 2 4\n"),
])
def test_every_kind_has_stable_columns(tmp_path, kind, extra):
    cfg = write_cfg(tmp_path, f"[experiment]\nkind = {kind}\n" + extra)
    out = tmp_path / "o.csv"
    assert cli.main(["run", "--preset", "gbm-call", "--config", str(cfg), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].split(",") == cli.COLUMNS[kind]


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("SMOOTHQUAD_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2
    monkeypatch.setenv("SMOOTHQUAD_THREADS", "many")
    with pytest.raises(cli.ValidationError):
        cli._threads(None)


def test_named_seed_derivation():
    assert cli.derive_seed(1, "mc") == cli.derive_seed(1, "mc")
    assert len({cli.derive_seed(1, "mc"), cli.derive_seed(1, "rqmc-shifts"), cli.derive_seed(2, "mc")}) == 3


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "smoothquad.cli", "presets"], capture_output=True, text=True)
    assert proc.returncode == 0 and "heston-call" in proc.stdout
