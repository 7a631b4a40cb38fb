"""File formats, run directories and the run configuration.

Formats
-------
sequences (text)
    First line ``# mobclust-sequences 1 D=<D>``.  Then one record per line:
    ``<id>\\t<length>\\t<v1>|<v2>|...`` where each ``v`` is ``D``
    comma-separated non-negative integers.  Blank lines and further ``#``
    lines are ignored.
matrices (CSV)
    Header row ``id,<col>,...``; one row per instance.  Floats are written
    with ``repr`` so a round trip is exact.
labels (CSV)
    ``id,label`` with integer labels.
posterior stack (binary)
    ``MCQSTACK`` magic, then little-endian uint32 version, E, N, K, then E
    int64 epoch indices, then E*N*K float64 values in (epoch, row, col) order.
run directory
    ``config.ini``, ``loss.csv``, ``posteriors.bin``, ``params.ckpt``,
    ``standardizer.csv``, ``manifest.json`` and ``loss.png``.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelParams
from .synth import SyntheticSpec
from .trainer import LOG_FIELDS, EpochPredictions, TrainConfig, TrainResult


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        loc = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{loc}: {message}")


# -- sequences ----------------------------------------------------------------

SEQ_MAGIC = "# mobclust-sequences 1"


def write_sequences(path, ids: Sequence[str], sequences: Sequence[np.ndarray]) -> None:
    if len(ids) != len(sequences):
        raise ValueError(f"{len(ids)} ids for {len(sequences)} sequences")
    if not sequences:
        raise ValueError("no sequences to write")
    dim = np.asarray(sequences[0]).shape[1]
    lines = [f"{SEQ_MAGIC} D={dim}"]
    for tid, seq in zip(ids, sequences):
        seq = np.asarray(seq)
        if seq.ndim != 2 or seq.shape[1] != dim or len(seq) == 0:
            raise ValueError(f"sequence {tid!r} has shape {seq.shape}, expected (t>=1, {dim})")
        if any(c in str(tid) for c in "\t\n"):
            raise ValueError(f"id {tid!r} contains a tab or newline")
        body = "|".join(",".join(str(int(v)) for v in row) for row in seq)
        lines.append(f"{tid}\t{len(seq)}\t{body}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_sequences(path) -> tuple[list[str], list[np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FormatError(path, "file not found")
    ids, seqs = [], []
    dim = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if lineno == 1:
            if not line.startswith(SEQ_MAGIC + " D="):
                raise FormatError(path, "missing sequence-file header", lineno)
            dim = int(line.split("D=", 1)[1])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if len(parts) != 3:
                raise ValueError(f"expected 3 tab-separated fields, got {len(parts)}")
            length = int(parts[1])
            rows = [[int(v) for v in step.split(",")] for step in parts[2].split("|")]
            seq = np.array(rows, dtype=np.int64)
            if seq.shape != (length, dim):
                raise ValueError(f"shape {seq.shape} does not match length {length} and D={dim}")
            if (seq < 0).any():
                raise ValueError("negative count")
        except ValueError as exc:
            raise FormatError(path, f"malformed record ({exc})", lineno) from None
        ids.append(parts[0])
        seqs.append(seq)
    if dim is None:
        raise FormatError(path, "empty file")
    return ids, seqs


# -- CSV ----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, columns: Sequence[str], rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path, required: Sequence[str] = ()) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise FormatError(path, "file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(path, "empty file", 1)
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(path, f"missing columns {missing}", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(path, f"expected {len(header)} fields, got {len(row)}", lineno)
            rows.append(row)
    return header, rows


def write_matrix(path, ids: Sequence[str], M: np.ndarray, prefix: str = "c") -> None:
    M = np.asarray(M)
    cols = ["id"] + [f"{prefix}{j}" for j in range(M.shape[1])]
    write_table(path, cols, ([i, *row] for i, row in zip(ids, M)))


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    header, rows = read_table(path, ["id"])
    ids = []
    out = np.zeros((len(rows), len(header) - 1))
    for r, row in enumerate(rows):
        ids.append(row[0])
        try:
            out[r] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise FormatError(path, f"non-numeric value ({exc})", r + 2) from None
    return ids, out


def write_labels(path, ids: Sequence[str], labels, column: str = "label") -> None:
    write_table(path, ["id", column], zip(ids, np.asarray(labels, dtype=np.int64)))


def read_labels(path, column: str | None = None) -> tuple[list[str], np.ndarray]:
    """Integer column ``column`` (default: the second column) keyed by ``id``."""
    header, rows = read_table(path, ["id"])
    col = header.index(column) if column else 1
    if col >= len(header):
        raise FormatError(path, "no label column", 1)
    ids, vals = [], []
    for r, row in enumerate(rows):
        try:
            vals.append(int(row[col]))
        except ValueError:
            raise FormatError(path, f"non-integer label {row[col]!r}", r + 2) from None
        ids.append(row[0])
    return ids, np.array(vals, dtype=np.int64)


# -- posterior stack ----------------------------------------------------------

QSTACK_MAGIC = b"MCQSTACK"
QSTACK_VERSION = 1


def write_qstack(path, epochs: Sequence[int], Q: np.ndarray) -> None:
    Q = np.ascontiguousarray(Q, dtype="<f8")
    if Q.ndim != 3 or Q.shape[0] != len(epochs):
        raise ValueError(f"stack shape {Q.shape} does not match {len(epochs)} epochs")
    with Path(path).open("wb") as fh:
        fh.write(QSTACK_MAGIC)
        fh.write(struct.pack("<4I", QSTACK_VERSION, *Q.shape))
        fh.write(np.asarray(epochs, dtype="<i8").tobytes())
        fh.write(Q.tobytes())


def read_qstack(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FormatError(path, "file not found")
    raw = path.read_bytes()
    head = len(QSTACK_MAGIC) + 16
    if len(raw) < head or raw[:len(QSTACK_MAGIC)] != QSTACK_MAGIC:
        raise FormatError(path, "not a posterior stack")
    version, E, N, K = struct.unpack("<4I", raw[len(QSTACK_MAGIC):head])
    if version != QSTACK_VERSION:
        raise FormatError(path, f"unsupported version {version}")
    expected = head + 8 * E + 8 * E * N * K
    if len(raw) != expected:
        raise FormatError(path, f"size {len(raw)} != expected {expected} bytes")
    epochs = np.frombuffer(raw, dtype="<i8", count=E, offset=head).astype(np.int64)
    Q = np.frombuffer(raw, dtype="<f8", offset=head + 8 * E).reshape(E, N, K).astype(np.float64)
    return epochs, Q


# -- run configuration --------------------------------------------------------

@dataclass
class PreprocessConfig:
    duration_s: float = 20 * 60.0
    radius_m: float = 200.0
    context_radius_m: float = 300.0
    min_length: int = 2


@dataclass
class EnsembleConfig:
    quantile: float = 0.15


@dataclass
class ElbowConfig:
    k_min: int = 2
    k_max: int = 8
    restarts: int = 10
    flat_tol: float = 0.05


@dataclass
class ModelSection:
    n_clusters: int = 4
    hidden_dim: int = 64
    latent_dim: int = 32
    activation: str = "tanh"


@dataclass
class RunConfig:
    """Everything a command may need; sections map one-to-one to INI sections."""

    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    elbow: ElbowConfig = field(default_factory=ElbowConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)

    def model_config(self, input_dim: int) -> ModelConfig:
        m = self.model
        return ModelConfig(input_dim, m.n_clusters, m.hidden_dim, m.latent_dim, m.activation)


SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(raw: str, default, name: str):
    raw = raw.strip()
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return lowered in ("true", "1", "yes")
    if isinstance(default, dict):
        out = {}
        for item in filter(None, (s.strip() for s in raw.split(","))):
            k, v = item.split(":")
            out[int(k)] = float(v)
        return out
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        # only optional ints exist (converge_epoch)
        return None if raw.lower() in ("", "none") else int(raw)
    return raw


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, dict):
        return ",".join(f"{k}:{_fmt(x)}" for k, x in v.items())
    return _fmt(v)


def _section_objects(cfg: RunConfig) -> dict:
    return {name: getattr(cfg, name) for name in SECTIONS}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read an INI config; unknown sections or keys are rejected.

    ``overrides`` maps ``"section.key"`` to a raw string value and is
    applied after the file.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FormatError(path, "config file not found")
        try:
            parser.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise FormatError(path, f"unparseable config ({exc})") from None
    for dotted, raw in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, key, str(raw))

    defaults = RunConfig()
    kwargs = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise FormatError(path or "<overrides>", f"unknown section [{sec}]")
    for sec, obj in _section_objects(defaults).items():
        known = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
        values = {}
        if parser.has_section(sec):
            for key, raw in parser.items(sec):
                if key not in known:
                    raise FormatError(path or "<overrides>", f"unknown key {key!r} in [{sec}]")
                try:
                    values[key] = _parse_value(raw, known[key], f"{sec}.{key}")
                except ValueError as exc:
                    raise FormatError(path or "<overrides>", f"bad value for {sec}.{key}: {exc}") from None
        try:
            kwargs[sec] = type(obj)(**{**known, **values})
        except (TypeError, ValueError) as exc:
            raise FormatError(path or "<overrides>", f"[{sec}] {exc}") from None
    return RunConfig(**kwargs)


def write_config(path, cfg: RunConfig) -> None:
    """Write the fully resolved configuration (every key, defaults included)."""
    lines = []
    for sec, obj in _section_objects(cfg).items():
        lines.append(f"[{sec}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


# -- run directory ------------------------------------------------------------

RUN_FILES = {
    "config": "config.ini",
    "loss": "loss.csv",
    "posteriors": "posteriors.bin",
    "params": "params.ckpt",
    "standardizer": "standardizer.csv",
    "manifest": "manifest.json",
    "ids": "ids.csv",
}


def write_loss_log(path, rows: Sequence[dict]) -> None:
    write_table(path, LOG_FIELDS, ([r[k] for k in LOG_FIELDS] for r in rows))


def read_loss_log(path) -> list[dict]:
    header, rows = read_table(path, LOG_FIELDS)
    out = []
    for row in rows:
        rec = dict(zip(header, row))
        out.append({k: (int(rec[k]) if k == "epoch" else float(rec[k])) for k in LOG_FIELDS})
    return out


def write_run(run_dir, result: TrainResult, cfg: RunConfig, ids: Sequence[str], data_path=None) -> Path:
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    write_config(run / RUN_FILES["config"], cfg)
    write_loss_log(run / RUN_FILES["loss"], result.log)
    write_qstack(run / RUN_FILES["posteriors"], [p.epoch for p in result.predictions], result.stack())
    ad.save_params(run / RUN_FILES["params"], result.params.snapshot())
    write_table(run / RUN_FILES["standardizer"], ["stat"] + [f"d{j}" for j in range(len(result.mean))],
                [["mean", *result.mean], ["scale", *result.scale]])
    write_table(run / RUN_FILES["ids"], ["id"], ([i] for i in ids))
    mc = result.params.config
    manifest = {
        "format": 1,
        "n": result.converge_epoch,
        "max_epoch": result.max_epoch,
        "converged": result.converged,
        "n_instances": len(ids),
        "model": mc.to_dict(),
        "data": None if data_path is None else str(data_path),
        "files": RUN_FILES,
    }
    (run / RUN_FILES["manifest"]).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run


@dataclass
class RunData:
    path: Path
    manifest: dict
    config: RunConfig
    ids: list[str]
    epochs: np.ndarray
    Q: np.ndarray

    def params(self) -> ModelParams:
        mc = ModelConfig(**self.manifest["model"])
        return ModelParams(mc, ad.load_params(self.path / RUN_FILES["params"]))

    def standardizer(self) -> tuple[np.ndarray, np.ndarray]:
        _, rows = read_table(self.path / RUN_FILES["standardizer"], ["stat"])
        stats = {r[0]: np.array([float(v) for v in r[1:]]) for r in rows}
        return stats["mean"], stats["scale"]

    def loss_log(self) -> list[dict]:
        return read_loss_log(self.path / RUN_FILES["loss"])

    def predictions(self) -> list[EpochPredictions]:
        return [EpochPredictions(int(e), q) for e, q in zip(self.epochs, self.Q)]


def read_run(run_dir) -> RunData:
    run = Path(run_dir)
    mpath = run / RUN_FILES["manifest"]
    if not mpath.exists():
        raise FormatError(run, "not a run directory (manifest.json missing)")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(mpath, f"invalid JSON ({exc.msg})", exc.lineno) from None
    cfg = load_config(run / RUN_FILES["config"])
    _, id_rows = read_table(run / RUN_FILES["ids"], ["id"])
    epochs, Q = read_qstack(run / RUN_FILES["posteriors"])
    ids = [r[0] for r in id_rows]
    if Q.shape[1] != len(ids):
        raise FormatError(run, f"posterior stack has {Q.shape[1]} rows but {len(ids)} ids")
    if len(epochs) and (epochs[0] != manifest["n"] or epochs[-1] != manifest["max_epoch"]):
        raise FormatError(run, "posterior epochs disagree with the manifest window")
    return RunData(run, manifest, cfg, ids, epochs, Q)


# -- ensemble output ----------------------------------------------------------

ENSEMBLE_COLUMNS = ("id", "cluster", "confidence", "variability", "reliability", "boundary")


def write_ensemble(path, ids: Sequence[str], res) -> None:
    write_table(path, ENSEMBLE_COLUMNS,
                zip(ids, res.membership, res.confidence, res.variability, res.reliability,
                    res.boundary))


def read_ensemble(path) -> dict[str, np.ndarray]:
    header, rows = read_table(path, ENSEMBLE_COLUMNS)
    cols = {c: [r[header.index(c)] for r in rows] for c in ENSEMBLE_COLUMNS}
    return {
        "id": np.array(cols["id"], dtype=object),
        "cluster": np.array(cols["cluster"], dtype=np.int64),
        "confidence": np.array(cols["confidence"], dtype=np.float64),
        "variability": np.array(cols["variability"], dtype=np.float64),
        "reliability": np.array(cols["reliability"], dtype=np.float64),
        "boundary": np.array(cols["boundary"], dtype=np.int64).astype(bool),
    }
