"""Run manifests, versioned CSV schemas and writers.

Every file written here starts with comment lines carrying the manifest
hash and the schema name/version, followed by a plain CSV header row.
"""
from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    seed: int
    checkpoints: tuple = ()
    versions: dict = field(default_factory=lambda: {"hybridmpc": __version__})
    command: tuple = ()

    @property
    def hash(self) -> str:
        return digest(asdict(self))[:16]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hash"] = self.hash
        return d


def make_manifest(config_data: dict, seed: int, checkpoints: Sequence[str] = (),
                  command: Optional[Sequence[str]] = None) -> RunManifest:
    cmd = tuple(sys.argv if command is None else command)
    return RunManifest(digest(config_data), int(seed), tuple(str(c) for c in checkpoints), command=cmd)


# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    name: str
    version: int
    columns: tuple

    @property
    def fingerprint(self) -> str:
        return digest([self.name, list(self.columns)])[:12]


SCHEMAS = {s.name: s for s in (
    Schema("training_log", 1, ("episode", "closed_loop_cost", "critic_loss", "actor_loss", "alpha_c", "alpha_d")),
    Schema("closed_loop", 1, ("lap", "E_b", "E_f", "m_car", "TW", "TC", "T_race", "T_gap", "u_battery", "u_fuel",
                              "pit", "stage_cost", "horizon", "terminal", "solver_iterations", "fallback")),
    Schema("benchmark", 1, ("method", "horizon", "race_time", "gap", "iter_mean", "iter_min", "iter_max",
                            "fallbacks", "seed", "status")),
    Schema("oracle_ranking", 1, ("rank", "strategy", "race_time", "status")),
    Schema("critic_trace", 1, ("lap", "realized", "critic_relu", "critic_smooth")),
    Schema("traffic_trace", 1, ("lap", "gap_aware", "gap_blind", "T_race_aware", "T_race_blind",
                                "pit_aware", "pit_blind")),
)}

# Fingerprints of the released (name, version) pairs. Changing the columns of
# a schema without bumping its version makes `schema_self_test` fail.
RELEASED = {
    ("training_log", 1): "f1ec644b39a6",
    ("closed_loop", 1): "ce7a5e1e5d1b",
    ("benchmark", 1): "4eda66ee08d6",
    ("oracle_ranking", 1): "dac82b6e6ba0",
    ("critic_trace", 1): "952daca74d9b",
    ("traffic_trace", 1): "00fafeec1cfa",
}


def schema_self_test(schemas=None, released=None) -> list:
    """Names of schemas whose columns changed without a version bump."""
    schemas = SCHEMAS if schemas is None else schemas
    released = RELEASED if released is None else released
    bad = []
    for s in schemas.values():
        fp = released.get((s.name, s.version))
        if fp is not None and fp != s.fingerprint:
            bad.append(s.name)
    return bad


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, schema_name: str, rows: Iterable[dict], manifest: RunManifest) -> Path:
    schema = SCHEMAS[schema_name]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# manifest: {manifest.hash}\n# schema: {schema.name} v{schema.version}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in schema.columns])
    return path


def read_csv(path) -> tuple:
    """(comment metadata dict, list of row dicts)."""
    meta, lines = {}, []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    return meta, list(csv.DictReader(lines))


def write_json(path, data: dict, manifest: RunManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = {"manifest": manifest.to_dict(), **data}
    path.write_text(json.dumps(out, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
