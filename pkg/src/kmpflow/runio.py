"""Artifact persistence for experiment runs: schema-tagged CSV files and
JSONL manifests whose non-timing lines are byte-stable for a fixed config."""

from __future__ import annotations

import csv
import datetime
import json
import os

SCHEMA = 1
SCHEMA_LINE = f"# schema={SCHEMA}"


class ConfigError(ValueError):
    """Invalid run configuration; the CLI maps this to exit code 2."""


def parse_kv_file(path: str) -> dict[str, str]:
    """Read a flat KEY=VALUE config file; '#' comments and blanks skipped."""
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for ln, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected KEY=VALUE, got {line!r}")
                key, _, value = line.partition("=")
                key = key.strip()
                if not key:
                    raise ConfigError(f"{path}:{ln}: empty key")
                if key in out:
                    raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
                out[key] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


def coerce(key: str, text: str, kind: str):
    """Convert a raw config string to its declared type.

    Kinds: int, float, bool, str, int_list, float_list (comma separated).
    """
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "str":
            return text
        if kind == "int_list":
            return [int(p) for p in text.split(",") if p.strip() != ""]
        if kind == "float_list":
            return [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc
    raise ConfigError(f"unknown config kind {kind!r} for {key}")


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    """Write rows under a `# schema=N` header comment plus a column line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMA_LINE + "\n")
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _fmt(row.get(c)) for c in columns})


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)  # round-trip precision
    return value


def write_jsonl(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    try:
        import numpy as np

        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def check_record(name: str, passed: bool, statistic, threshold, detail: str = "") -> dict:
    return {
        "record": "check",
        "name": name,
        "passed": bool(passed),
        "statistic": None if statistic is None else float(statistic),
        "threshold": None if threshold is None else float(threshold),
        "detail": detail,
    }


def write_manifest(
    path: str,
    subcommand: str,
    version: str,
    config: dict,
    outputs: list[str],
    checks: list[dict],
    wall_seconds: float,
) -> None:
    """One JSONL manifest per run.

    Every line except the final timing line is a pure function of
    (subcommand, version, config, results), so repeated runs with one seed
    produce byte-identical manifests modulo that line.
    """
    records: list[dict] = [
        {
            "record": "run",
            "subcommand": subcommand,
            "version": version,
            "config": {k: config[k] for k in sorted(config)},
        }
    ]
    for name in outputs:
        records.append({"record": "output", "file": name, "schema": SCHEMA})
    records.extend(checks)
    records.append(
        {
            "record": "timing",
            "wall_seconds": round(float(wall_seconds), 3),
            "written_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
    )
    write_jsonl(path, records)


def remove_files(paths: list[str]) -> None:
    """Best-effort cleanup of partial outputs after a config error."""
    for p in paths:
        try:
            os.remove(p)
        except OSError:
            pass
