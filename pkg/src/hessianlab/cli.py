"""Batch front-end: solve problems, run sweeps and chain experiments,
emit CSV/JSON artifacts.

One JSON config names the command and its parameters; flags override
scalar entries. Artifacts are written via temp-and-rename and formatted
deterministically (sorted JSON keys, 17-significant-digit floats), so a
fixed seed reproduces byte-identical outputs.

Exit codes: 0 success, 2 precondition/config errors, 3 numerical
non-convergence (partial artifacts are still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import jsonschema
import numpy as np

from . import functionals, pipeline, solver
from .calibration import calibration_hash
from .candidates import candidate_from_spec
from .errors import NonConvergenceError, NumericError, PreconditionError
from .fields import load_hsf1, save_hsf1
from .functionals import Condition

COMMANDS = (
    "solve",
    "analyze",
    "sweep",
    "chain_iso",
    "chain_volume",
    "legendre",
    "report",
)

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["command"],
    "properties": {
        "command": {"type": "string", "enum": list(COMMANDS)},
        "seed": {"type": "integer"},
        "params": {"type": "object"},
    },
}


def _write_text(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_json(path, payload: dict):
    _write_text(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _apply_overrides(config: dict, overrides: list):
    for item in overrides:
        if "=" not in item:
            raise PreconditionError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = val
    return config


def _cmd_solve(params, out, rng):
    problem, opts = solver.problem_from_spec(params["problem"])
    report = solver.solve(problem, opts)
    save_hsf1(report.field, os.path.join(out, "solution.hsf1"))
    payload = report.to_json_dict()
    payload["calibration"] = calibration_hash()
    _write_json(os.path.join(out, "report.json"), payload)
    if not report.converged:
        raise NonConvergenceError("solver did not converge", report=report)
    return 0


def _cmd_analyze(params, out, rng):
    cand = candidate_from_spec(params["candidate"])
    cfg = pipeline.AnalyzeConfig(
        t_min=float(params.get("t_min", 1e2)),
        t_max=float(params.get("t_max", 1e6)),
        t_points=int(params.get("t_points", 13)),
        p_list=tuple(params.get("p_list", (-0.5, 1.0, 2.0))),
        m_dirs=int(params.get("m_dirs", 360)),
    )
    report = pipeline.analyze(cand, cfg)
    pipeline.write_report_json(report, os.path.join(out, "report.json"))
    for key, verdict in report.verdicts.items():
        safe = key.replace(":", "_")
        verdict.export_csv(os.path.join(out, f"sweep_{safe}.csv"))
    lines = ["t gamma"]
    for t, g in report.gamma_samples:
        lines.append(f"{t:.17g} {g:.17g}")
    _write_text(os.path.join(out, "gamma.csv"), "\n".join(lines) + "\n")
    return 0


def _cmd_sweep(params, out, rng):
    cand = candidate_from_spec(params["candidate"])
    t_grid = np.geomspace(
        float(params.get("t_min", 1e2)),
        float(params.get("t_max", 1e6)),
        int(params.get("t_points", 13)),
    )
    verdict = functionals.condition_sweep(
        cand,
        Condition(params.get("condition", "volume_growth")),
        t_grid,
        p=float(params.get("p", 1.0)),
        m_dirs=int(params.get("m_dirs", 360)),
    )
    verdict.export_csv(os.path.join(out, "sweep.csv"))
    _write_json(os.path.join(out, "verdict.json"), verdict.to_json_dict())
    return 0


def _cmd_chain_iso(params, out, rng):
    cand = candidate_from_spec(params["candidate"])
    t = float(params.get("t", 100.0))
    m_dirs = int(params.get("m_dirs", 360))
    gamma = params.get("gamma")
    if gamma is None:
        gamma = pipeline.measured_iso_claim(cand, t, m_dirs=m_dirs)
    interval = tuple(params.get("interval", (1.0 / 3.0, 0.5)))
    report = pipeline.iso_to_roundness_chain(
        cand, t, float(gamma), interval=interval, m_dirs=m_dirs
    )
    pipeline.write_report_json(report, os.path.join(out, "chain.json"))
    return 0 if report.all_passed() else 3


def _cmd_chain_volume(params, out, rng):
    from .fields import mask_from_ellipse

    k = int(params.get("k", 2))
    l = int(params.get("l", 0))
    h = float(params.get("h", 1.0 / 48.0))
    domains = []
    for spec in params["domains"]:
        semi = spec["semiaxes"]
        domains.append((spec.get("label", json.dumps(semi)), mask_from_ellipse(semi, h)))
    reports = pipeline.volume_to_roundness_experiment(domains, k, l)
    payload = {
        "schema_version": pipeline.REPORT_SCHEMA_VERSION,
        "calibration": calibration_hash(),
        "reports": [r.to_json_dict() for r in reports],
    }
    _write_json(os.path.join(out, "chain.json"), payload)
    bad = [r for r in reports if "error" in r.meta or not r.all_passed()]
    return 3 if bad else 0


def _cmd_legendre(params, out, rng):
    f = load_hsf1(params["field"])
    region = params.get("region_level")
    v = functionals.legendre_transform(f, None if region is None else float(region))
    save_hsf1(v, os.path.join(out, "transform.hsf1"))
    st = v.mask.stencils()
    H = v.hessian_stack()
    lam = np.linalg.eigvalsh(H[st.is_full])
    _write_json(
        os.path.join(out, "transform.json"),
        {
            "nodes": int(v.mask.inside_count()),
            "min_eigenvalue": float(np.min(lam)) if lam.size else None,
            "calibration": calibration_hash(),
        },
    )
    return 0


def _cmd_report(params, out, rng):
    src = params["dir"]
    entries = []
    for name in sorted(os.listdir(src)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(src, name)) as fh:
            payload = json.load(fh)
        entries.append({"file": name, "keys": sorted(payload.keys())})
    _write_json(os.path.join(out, "summary.json"), {"entries": entries})
    return 0


_DISPATCH = {
    "solve": _cmd_solve,
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "chain_iso": _cmd_chain_iso,
    "chain_volume": _cmd_chain_volume,
    "legendre": _cmd_legendre,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hessianlab",
        description="Batch runner for Hessian-equation experiments",
    )
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry (dotted keys, JSON values)",
    )
    parser.add_argument("--jobs", type=int, default=1, help="accepted; runs serially")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            config = json.load(fh)
        config = _apply_overrides(config, args.override)
        jsonschema.validate(config, CONFIG_SCHEMA)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        rng = np.random.default_rng(seed)
        os.makedirs(args.out, exist_ok=True)
        _write_json(
            os.path.join(args.out, "manifest.json"),
            {
                "command": config["command"],
                "params": config.get("params", {}),
                "seed": seed,
                "calibration": calibration_hash(),
            },
        )
        handler = _DISPATCH[config["command"]]
        return handler(config.get("params", {}), args.out, rng)
    except (PreconditionError, jsonschema.ValidationError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
