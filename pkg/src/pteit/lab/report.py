"""Deterministic CSV writers and the experiment report."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def fmt(v):
    """Shortest round-trip text for a float; ints and strings pass through."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_image_csv(path, mesh, m):
    c = mesh.centroids
    return write_csv(path, ["element", "x", "y", "m"],
                     ((e, c[e, 0], c[e, 1], m[e]) for e in range(mesh.n_elems)))


def write_run_log(path, run, timing=False):
    """``iter,phi,rel_resid,step,ls_evals,wall_ms``; wall_ms stays blank unless ``timing``."""
    rel = run.rel_resid
    rows = ((k, run.phi[k], rel[k], run.steps[k], run.ls_evals[k], run.wall_ms[k] if timing else None)
            for k in range(len(run.phi)))
    return write_csv(path, ["iter", "phi", "rel_resid", "step", "ls_evals", "wall_ms"], rows)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else str(float(v))
    return v


@dataclass
class ExperimentReport:
    scenario: str
    config: dict
    out_dir: Path
    files: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def add(self, path):
        rel = Path(path).resolve().relative_to(Path(self.out_dir).resolve())
        self.files.append(rel.as_posix())
        return path

    def validate(self):
        missing = [f for f in self.files if not (Path(self.out_dir) / f).exists()]
        if missing:
            raise FileNotFoundError(f"manifest lists missing files: {missing}")
        return True

    def to_dict(self):
        return _plain({"scenario": self.scenario, "config": self.config,
                       "files": self.files, "metrics": self.metrics})

    def write(self, name="report.json"):
        self.validate()
        path = Path(self.out_dir) / name
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path
