"""Run records: canonical JSON serialization, content hashing, CSV tables.

A record's hash covers everything that determines the run (config, data
identity, selection outcome, metrics) and deliberately excludes wall time,
so re-running a pinned config must reproduce the hash byte-for-byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

RUNS_CSV_COLUMNS = ("config_hash", "method", "kappa", "seed", "R", "epoch",
                    "acc_maj", "acc_min", "acc_avg", "acc_worst", "delta_prob")
ESTIMATES_CSV_COLUMNS = ("dataset", "attribute", "estimator", "selection",
                         "raw", "snapped", "seed")
THEOREM_CSV_COLUMNS = ("instance", "K", "J", "mean_cond", "holds",
                       "R_threshold", "preferred")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    config_hash: str
    dataset_id: str
    method: str
    kappa: float
    seed: int
    R: float
    epoch: int
    selection: str
    metrics: dict            # selected checkpoint's metric dict (val_* / test_*)
    effect_targets: dict = field(default_factory=dict)
    failed: bool = False
    error: str = ""
    wall_time: float = 0.0

    def record_hash(self) -> str:
        body = asdict(self)
        body.pop("wall_time")
        return hashlib.sha256(canonical_json(body).encode()).hexdigest()

    def to_json(self) -> str:
        body = asdict(self)
        body["record_hash"] = self.record_hash()
        return json.dumps(body, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "RunRecord":
        d = json.loads(text)
        d.pop("record_hash", None)
        return RunRecord(**d)

    def runs_row(self) -> dict:
        m = self.metrics
        return {
            "config_hash": self.config_hash, "method": self.method,
            "kappa": self.kappa, "seed": self.seed, "R": self.R,
            "epoch": self.epoch,
            "acc_maj": m.get("test_maj"), "acc_min": m.get("test_min"),
            "acc_avg": m.get("test_avg"), "acc_worst": m.get("test_worst"),
            "delta_prob": m.get("test_dprob"),
        }


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return format(v, ".12g")
    return v
