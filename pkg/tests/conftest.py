import json
from pathlib import Path
import sys
from typing import Any, Dict, List

import numpy as np
import pytest
import yaml

# Ensure local project root is on sys.path before importing 'app.*'
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from app.engine.probcore import JointPmf
from app.engine.swcodec import LinearEncoder, build_layout, parse_layout

CALIBRATION_FILE = Path(__file__).resolve().parent / "data" / "calibration.json"


class PinStore:
    """
    Pinned regression values kept in tests/data/calibration.json.

    pin() returns the stored value for a key. A key the file does not hold yet
    is recorded from the value the calling test computed and written back when
    the session ends, so later runs compare against it. scripts/calibrate.py
    rewrites every key at once.
    """

    def __init__(self, path: Path):
        self.path = path
        self.values: Dict[str, Any] = {}
        self.recorded: List[str] = []
        if path.exists():
            with path.open("r", encoding="utf-8") as f:
                self.values = json.load(f)

    def pin(self, key: str, value: Any) -> Any:
        if key not in self.values:
            # JSON round trip so a fresh pin compares like a loaded one
            self.values[key] = json.loads(json.dumps(value))
            self.recorded.append(key)
        return self.values[key]

    def save(self) -> None:
        if not self.recorded:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.values, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def calibration():
    store = PinStore(CALIBRATION_FILE)
    yield store
    store.save()


@pytest.fixture()
def dsbs():
    return JointPmf.dsbs(0.1)


@pytest.fixture()
def independent_bits():
    return JointPmf.independent([0.5, 0.5], [0.5, 0.5])


@pytest.fixture()
def same_bit():
    return JointPmf.identical(2, 2)


@pytest.fixture()
def chain():
    return JointPmf.markov_chain(0.1, 0.2)


@pytest.fixture()
def dsbs_plus_free_bit():
    """DSBS(0.1) on (X, Y) with an independent uniform Z."""
    probs = np.multiply.outer(JointPmf.dsbs(0.1).probs, np.array([0.5, 0.5]))
    return JointPmf((2, 2, 2), probs)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture()
def encoder_k3(dsbs):
    return LinearEncoder.random(build_layout(dsbs, 3, 0.5), seed=7)


@pytest.fixture()
def full_rank_k3():
    return LinearEncoder.random(parse_layout("3:2,1,1,2"), seed=11)


@pytest.fixture()
def write_config(tmp_path):
    """Write a config document into tmp_path and return its path."""
    def _write(doc: Dict[str, Any], name: str = "config.yaml") -> Path:
        doc = dict(doc)
        doc.setdefault("out_dir", str(tmp_path / "reports"))
        p = tmp_path / name
        p.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
        return p
    return _write
