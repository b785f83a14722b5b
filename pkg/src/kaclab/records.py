"""Experiment configuration, persisted records, and atomic file output."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
import json
import math
import os
from pathlib import Path
import subprocess
import tempfile

import numpy as np

from .stats import TestReport

CSV_HEADER = "# kaclab-csv v1"


class UsageError(Exception):
    """Bad invocation; ``code`` names the specific failure."""

    code = "usage"


class UnknownExperiment(UsageError):
    code = "unknown-experiment"


class InvalidConfig(UsageError):
    code = "invalid-config"


class OutputUnwritable(UsageError):
    code = "output-unwritable"


_CONFIG_FIELDS = ("n", "c1", "num_replicas", "num_samples", "seed", "out_dir", "workers")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    n: int = 4
    c1: float = 12.0
    num_replicas: int = 200
    num_samples: int = 10_000
    out_dir: str | None = None
    workers: int = 1
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed is None:
            raise InvalidConfig("a seed is mandatory")
        try:
            self.seed = int(self.seed)
            self.n = int(self.n)
            self.c1 = float(self.c1)
            self.num_replicas = int(self.num_replicas)
            self.num_samples = int(self.num_samples)
            self.workers = int(self.workers)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None
        if self.n < 2:
            raise InvalidConfig(f"n must be >= 2, got {self.n}")
        if not self.c1 > 10:
            raise InvalidConfig(f"C1 must exceed 10, got {self.c1}")
        if self.num_replicas < 1 or self.num_samples < 1 or self.workers < 1:
            raise InvalidConfig("replicas, samples and workers must be positive")

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))

    def param(self, name: str, default=None, kind=None):
        value = self.params.get(name, default)
        if kind is not None and value is not None:
            try:
                value = kind(value)
            except (TypeError, ValueError):
                raise InvalidConfig(f"parameter {name}={value!r} is not a valid {kind.__name__}") from None
        return value

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "seed": self.seed, "n": self.n,
            "c1": self.c1, "num_replicas": self.num_replicas,
            "num_samples": self.num_samples, "out_dir": self.out_dir,
            "workers": self.workers, "tolerances": dict(self.tolerances),
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


def read_config_file(path) -> dict:
    """Flat INI file: keys under ``[experiment]``, plus ``[tolerances]`` and ``[params]``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None
    out: dict = {"tolerances": {}, "params": {}}
    if cp.has_section("experiment"):
        for key, value in cp.items("experiment"):
            key = {"replicas": "num_replicas", "samples": "num_samples", "out": "out_dir"}.get(key, key)
            if key in _CONFIG_FIELDS or key == "experiment":
                out[key] = value
            else:
                out["params"][key] = value
    if cp.has_section("tolerances"):
        out["tolerances"] = {k: float(v) for k, v in cp.items("tolerances")}
    if cp.has_section("params"):
        out["params"].update(dict(cp.items("params")))
    return out


def jsonable(value):
    """Plain-JSON version of metrics: numpy scalars unwrapped, tuples listed, NaN -> None."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in (value.tolist() if isinstance(value, np.ndarray) else value)]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    return value


def build_id() -> str:
    from . import __version__

    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class ExperimentRecord:
    config: dict
    build: str
    started: str
    finished: str
    metrics: dict
    reports: list
    verdict: str
    status: str = "ok"
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        self.metrics = jsonable(self.metrics)
        self.timing = jsonable(self.timing)
        self.reports = [r if isinstance(r, TestReport) else TestReport.from_dict(r)
                        for r in self.reports]

    @property
    def experiment(self) -> str:
        return self.config["experiment"]

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def to_dict(self) -> dict:
        return {
            "config": self.config, "build": self.build, "started": self.started,
            "finished": self.finished, "metrics": self.metrics,
            "reports": [jsonable(r.to_dict()) for r in self.reports],
            "verdict": self.verdict, "status": self.status, "timing": self.timing,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentRecord":
        d = json.loads(text)
        d["reports"] = [_report_from_json(r) for r in d["reports"]]
        return cls(**d)


def _report_from_json(d: dict) -> TestReport:
    d = dict(d)
    if d.get("statistic") is None:
        d["statistic"] = math.nan
    return TestReport.from_dict(d)


def record_stem(experiment: str, seed: int) -> str:
    return f"{experiment}-{seed}"


def prepare_output_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputUnwritable(f"cannot create {out}: {exc}") from None
    if not os.access(out, os.W_OK | os.X_OK):
        raise OutputUnwritable(f"{out} is not writable")
    return out


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def format_csv(columns: dict) -> str:
    """Columns of equal length to CSV text with the schema header line."""
    names = list(columns)
    cols = [np.asarray(columns[k]).ravel() for k in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"CSV columns have unequal lengths {sorted(lengths)}")
    lines = [CSV_HEADER, ",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


def read_csv(path) -> dict:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected schema line {header!r}")
        names = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    return {name: np.array([float(r[k]) for r in rows]) for k, name in enumerate(names)}


def write_outputs(out_dir, record: ExperimentRecord, columns: dict | None) -> tuple[Path, Path | None]:
    out = Path(out_dir)
    stem = record_stem(record.experiment, record.seed)
    csv_path = None
    if columns:
        csv_path = out / f"{stem}.csv"
        atomic_write(csv_path, format_csv(columns))
    json_path = out / f"{stem}.json"
    atomic_write(json_path, record.to_json())
    return json_path, csv_path


def load_record(path) -> ExperimentRecord:
    return ExperimentRecord.from_json(Path(path).read_text())
