"""
Report emitters.

Every CSV row and JSON document carries the provenance triple
(config_hash, seed, version). Output must be byte-identical for identical
(config, seed), so nothing time-dependent is written here.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

from app import __version__

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON dump of the config."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def provenance(cfg_hash: str, seed: int) -> Dict[str, Any]:
    return {"config_hash": cfg_hash, "seed": int(seed), "version": __version__}


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(_cell(v) for v in value)
    return str(value)


def write_csv(path: Path, rows: Sequence[Dict[str, Any]], prov: Dict[str, Any]) -> Path:
    """One row per record, columns in first-seen order, provenance columns last."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames: List[str] = []
    for row in rows:
        for key in row:
            if key not in fieldnames:
                fieldnames.append(key)
    fieldnames += [k for k in prov if k not in fieldnames]
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            merged = {**row, **prov}
            w.writerow({k: _cell(merged.get(k)) for k in fieldnames})
    logger.debug("Wrote %d rows to %s", len(rows), path)
    return path


def write_json(path: Path, payload: Dict[str, Any], prov: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, **prov, **payload}
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(doc, sort_keys=True, indent=2, default=str))
        f.write("\n")
    return path
