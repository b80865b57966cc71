import json
import math

from hessianlab import cli, fields


def run_cli(tmp_path, config: dict, out: str, extra=()):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    return cli.main(["--config", str(cfg), "--out", str(tmp_path / out), *extra])


SOLVE_CFG = {
    "command": "solve",
    "seed": 3,
    "params": {
        "problem": {
            "n": 2, "k": 2, "l": 0, "h": 1 / 32,
            "boundary_value": 1.0, "rhs": 1.0, "tol": 1e-9,
            "domain": {"type": "ellipse", "params": {"semiaxes": [1.0, 2.0]}},
        }
    },
}


def test_solve_command_artifacts(tmp_path):
    code = run_cli(tmp_path, SOLVE_CFG, "run")
    assert code == 0
    out = tmp_path / "run"
    report = json.loads((out / "report.json").read_text())
    assert report["converged"] and report["residual_max"] <= 1e-9
    field = fields.load_hsf1(out / "solution.hsf1")
    assert field.mask.inside_count() == report["inside_nodes"]


def test_solve_determinism_bitwise(tmp_path):
    assert run_cli(tmp_path, SOLVE_CFG, "a") == 0
    assert run_cli(tmp_path, SOLVE_CFG, "b") == 0
    for name in ("report.json", "solution.hsf1"):
        ba = (tmp_path / "a" / name).read_bytes()
        bb = (tmp_path / "b" / name).read_bytes()
        assert ba == bb, name


def test_invalid_order_exits_2(tmp_path):
    cfg = {
        "command": "solve",
        "params": {
            "problem": {
                "n": 2, "k": 1, "l": 1, "h": 0.05,
                "domain": {"type": "ellipse", "params": {"semiaxes": [1, 1]}},
            }
        },
    }
    assert run_cli(tmp_path, cfg, "bad") == 2
    assert not (tmp_path / "bad" / "report.json").exists()


def test_unknown_command_exits_2(tmp_path):
    assert run_cli(tmp_path, {"command": "nonsense"}, "x") == 2


def test_nonconvergence_exits_3_with_artifacts(tmp_path):
    cfg = json.loads(json.dumps(SOLVE_CFG))
    cfg["params"]["problem"]["max_iters"] = 1
    code = run_cli(tmp_path, cfg, "stall")
    assert code == 3
    report = json.loads((tmp_path / "stall" / "report.json").read_text())
    assert report["converged"] is False
    assert (tmp_path / "stall" / "solution.hsf1").exists()


def test_analyze_command(tmp_path):
    cfg = {
        "command": "analyze",
        "seed": 0,
        "params": {
            "candidate": "quad:diag(2,0.5)",
            "t_points": 12, "m_dirs": 120, "t_max": 1e5,
        },
    }
    assert run_cli(tmp_path, cfg, "an") == 0
    report = json.loads((tmp_path / "an" / "report.json").read_text())
    assert all(v["verdict"] == "bounded" for v in report["verdicts"].values())
    assert (tmp_path / "an" / "gamma.csv").exists()
    assert (tmp_path / "an" / "sweep_reverse_iso.csv").exists()


def test_sweep_command_and_overrides(tmp_path):
    cfg = {
        "command": "sweep",
        "seed": 0,
        "params": {
            "candidate": "pownorm:c=1,p=1.5,n=2",
            "condition": "volume_growth",
            "t_points": 12, "m_dirs": 120,
        },
    }
    code = run_cli(
        tmp_path, cfg, "sw", extra=["--override", "params.t_points=13"]
    )
    assert code == 0
    verdict = json.loads((tmp_path / "sw" / "verdict.json").read_text())
    assert verdict["verdict"] == "unbounded"
    assert len(verdict["samples"]) == 13  # override took effect
    csv = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert csv[0] == "t value running_min"


def test_chain_iso_command(tmp_path):
    cfg = {
        "command": "chain_iso",
        "seed": 0,
        "params": {"candidate": "quad:diag(3,0.3333333333333333)", "t": 50.0, "m_dirs": 240},
    }
    assert run_cli(tmp_path, cfg, "chain") == 0
    chain = json.loads((tmp_path / "chain" / "chain.json").read_text())
    assert chain["all_passed"]
    assert {ln["check_id"] for ln in chain["links"]} >= {
        "premise-gradient-integral-bound",
        "level-perimeter-bound",
        "roundness-bound",
    }


def test_chain_volume_command(tmp_path):
    cfg = {
        "command": "chain_volume",
        "seed": 0,
        "params": {
            "k": 2, "l": 0, "h": 1 / 40,
            "domains": [
                {"label": "round", "semiaxes": [math.sqrt(2), math.sqrt(2)]},
                {"label": "aspect2", "semiaxes": [1.0, 2.0]},
            ],
        },
    }
    assert run_cli(tmp_path, cfg, "vol") == 0
    payload = json.loads((tmp_path / "vol" / "chain.json").read_text())
    assert len(payload["reports"]) == 2
    assert all(r["all_passed"] for r in payload["reports"])


def test_legendre_command(tmp_path):
    assert run_cli(tmp_path, SOLVE_CFG, "pre") == 0
    cfg = {
        "command": "legendre",
        "seed": 0,
        "params": {"field": str(tmp_path / "pre" / "solution.hsf1")},
    }
    assert run_cli(tmp_path, cfg, "leg") == 0
    meta = json.loads((tmp_path / "leg" / "transform.json").read_text())
    assert meta["min_eigenvalue"] > 0
    back = fields.load_hsf1(tmp_path / "leg" / "transform.hsf1")
    assert back.mask.inside_count() == meta["nodes"]


def test_report_command(tmp_path):
    assert run_cli(tmp_path, SOLVE_CFG, "pre2") == 0
    cfg = {"command": "report", "params": {"dir": str(tmp_path / "pre2")}}
    assert run_cli(tmp_path, cfg, "rep") == 0
    summary = json.loads((tmp_path / "rep" / "summary.json").read_text())
    names = {e["file"] for e in summary["entries"]}
    assert {"report.json", "manifest.json"} <= names


def test_analyze_determinism(tmp_path):
    cfg = {
        "command": "analyze",
        "seed": 9,
        "params": {"candidate": "quad:diag(2,0.5)", "t_points": 12, "m_dirs": 120},
    }
    assert run_cli(tmp_path, cfg, "d1") == 0
    assert run_cli(tmp_path, cfg, "d2") == 0
    for name in ("report.json", "gamma.csv", "sweep_volume_growth.csv"):
        assert (tmp_path / "d1" / name).read_bytes() == (tmp_path / "d2" / name).read_bytes()
