"""Report and table emission.

Reports are JSON documents with a versioned schema tag; every numeric result
carries either an ``exact`` flag (deterministic quadrature / linear algebra)
or a standard error.  Verifier verdicts are uniform blocks
{check, parameters, statistic, threshold, pass}.  All files are written
atomically (write to a temporary file, rename).  CSV tables are RFC-style:
header row, '.' decimal point, no locale dependence.
"""

from __future__ import annotations

import csv
import json
import os
import time
from importlib import resources

import jsonschema

__all__ = [
    "REPORT_SCHEMA",
    "numeric_result",
    "info_result",
    "verdict",
    "build_report",
    "validate_report",
    "write_json",
    "write_csv",
]

REPORT_SCHEMA = "rpgauss-report/v1"


def _schema():
    with resources.files("rpgauss").joinpath("schemas/report.schema.json").open() as fh:
        return json.load(fh)


def numeric_result(name: str, value: float, stderr: float | None = None,
                   exact: bool = False, **extra) -> dict:
    """A result entry; exactly one of ``stderr`` / ``exact`` must be given."""
    if exact == (stderr is not None):
        raise ValueError("numeric results carry either an exact flag or a standard error")
    out = {"name": name, "value": float(value)}
    if exact:
        out["exact"] = True
    else:
        out["stderr"] = float(stderr)
    out.update(extra)
    return out


def info_result(name: str, value) -> dict:
    """A non-numeric payload entry (string/bool/array/object)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        raise ValueError("numeric payloads must go through numeric_result")
    return {"name": name, "value": value}


def verdict(check: str, statistic, threshold, passed: bool, **parameters) -> dict:
    return {
        "check": check,
        "parameters": parameters,
        "statistic": None if statistic is None else float(statistic),
        "threshold": None if threshold is None else float(threshold),
        "pass": bool(passed),
    }


def build_report(command: str, config_echo: dict, seed: int, results: list,
                 verdicts: list, t_start: float, seed_paths=None,
                 tables: dict | None = None, artifacts: list | None = None) -> dict:
    report = {
        "schema": REPORT_SCHEMA,
        "command": command,
        "config": config_echo,
        "seed": int(seed),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "wall_clock_s": max(0.0, time.monotonic() - t_start),
        "seed_paths": [list(p) for p in (seed_paths or [])],
        "results": list(results),
        "verdicts": list(verdicts),
        "pass": all(v["pass"] for v in verdicts),
    }
    if tables:
        report["tables"] = tables
    if artifacts:
        report["artifacts"] = list(artifacts)
    validate_report(report)
    return report


def validate_report(report: dict) -> None:
    jsonschema.validate(report, _schema())


def write_json(doc: dict, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")
    os.replace(tmp, path)


def write_csv(fieldnames, rows, path: str) -> None:
    """rows are dicts keyed by the field names; values written with repr-level
    precision so tables round-trip to float64."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fieldnames})
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
