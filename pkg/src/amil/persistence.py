"""Binary event, bag-index and checkpoint files; canonical JSON reports; run manifests.

All binary formats are little-endian with a 4-byte magic and a u32 version
first, so a reader can reject foreign or newer files before parsing.

Checkpoint layout (version 1)::

    magic "AMCK" | u32 version | u32 head tag | u32 n_features | u32 input_dim
    | u32 width | u32 n_out | u32 n_layers | 32B schedule sha256
    | f64 dropout, l2, bn_eps, bn_momentum | u64 rng_seed | u32 adapted
    | u64 payload bytes | 32B sha256(header-before-hash + payload) | payload

The payload is f64 in this order: norm_mean, norm_std, then per hidden layer
W (row-major [fan_in, width]), gamma, beta, running_mean, running_var, then
W_out and b_out.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__
from .bagnet.model import HEAD_TAGS, N_LAYERS, BagModel, HeadKind
from .errors import FormatError, HeadMismatchError, IntegrityError, SchemaVersionError
from .experiments import ScalingReport
from .inference import CalibrationRecord, CoverageReport
from .synthdata import FAMILY_TAGS, EventFamily, EventSet

__all__ = [
    "SCHEMA_VERSION",
    "RunManifest",
    "RunLayout",
    "sha256_file",
    "save_events",
    "load_events",
    "export_events_csv",
    "save_bag_indices",
    "load_bag_indices",
    "save_checkpoint",
    "load_checkpoint",
    "canonical_json",
    "write_json",
    "read_json",
    "write_report",
    "read_report",
    "report_rows",
    "write_csv",
    "write_manifest",
    "load_manifest",
]

SCHEMA_VERSION = 1
EVENTS_MAGIC, EVENTS_VERSION = b"AMIL", 1
BAGS_MAGIC, BAGS_VERSION = b"AMBG", 1
CKPT_MAGIC, CKPT_VERSION = b"AMCK", 1

_EV_HEADER = struct.Struct("<4sIIdQIQ")
_BAG_HEADER = struct.Struct("<4sIIQ")
_CK_HEADER = struct.Struct("<4sIIIIIII32sddddQIQ")
_F64 = np.dtype("<f8")
_U64 = np.dtype("<u8")
_TAG_KIND = {v: k for k, v in FAMILY_TAGS.items()}
_TAG_HEAD = {v: k for k, v in HEAD_TAGS.items()}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _read_header(raw: bytes, st: struct.Struct, magic: bytes, version: int, what: str) -> tuple:
    if len(raw) < 8 or raw[:4] != magic:
        raise FormatError(f"not a {what} file (bad magic)")
    (ver,) = struct.unpack_from("<I", raw, 4)
    if ver != version:
        raise FormatError(f"unsupported {what} version {ver} (expected {version})")
    if len(raw) < st.size:
        raise IntegrityError(f"truncated {what} header")
    return st.unpack_from(raw)


# -- events ----------------------------------------------------------------

def save_events(events: EventSet, path) -> dict:
    """Columnar binary event file.  The family tag packs kind | dim << 8."""
    fam = events.family
    x = np.ascontiguousarray(events.features, dtype=_F64)
    if x.ndim != 2 or x.shape[1] != fam.dim_total:
        raise FormatError("event features must be [n, dim_total]")
    tag = FAMILY_TAGS[fam.kind] | (fam.dim << 8)
    head = _EV_HEADER.pack(EVENTS_MAGIC, EVENTS_VERSION, tag, float(events.theta), x.shape[0],
                           x.shape[1], int(events.seed) & ((1 << 64) - 1))
    _atomic_write(path, head + x.tobytes())
    return {"path": str(path), "kind": "events", "sha256": sha256_file(path)}


def load_events(path) -> EventSet:
    raw = Path(path).read_bytes()
    _, _, tag, theta, n, dim, seed = _read_header(raw, _EV_HEADER, EVENTS_MAGIC, EVENTS_VERSION, "event")
    kind = _TAG_KIND.get(tag & 0xFF)
    sig_dim = (tag >> 8) & 0xFFFF
    if kind is None or sig_dim < 1 or sig_dim > dim:
        raise FormatError(f"bad family tag {tag:#x}")
    need = _EV_HEADER.size + n * dim * 8
    if len(raw) != need:
        raise IntegrityError(f"event file has {len(raw)} bytes, header implies {need}")
    x = np.frombuffer(raw, _F64, n * dim, _EV_HEADER.size).astype(np.float64).reshape(n, dim)
    return EventSet(x, theta, seed, EventFamily(kind, sig_dim, dim - sig_dim))


def export_events_csv(events: EventSet, path):
    d = events.features.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{j}" for j in range(d)])
        for row in events.features:
            w.writerow([repr(float(v)) for v in row])


# -- bag indices -----------------------------------------------------------

def save_bag_indices(indices: np.ndarray, path) -> dict:
    """Bag index file: ``[M, N_B]`` row indices into an event file."""
    idx = np.ascontiguousarray(indices, dtype=_U64)
    if idx.ndim != 2:
        raise FormatError("bag indices must be [M, N_B]")
    head = _BAG_HEADER.pack(BAGS_MAGIC, BAGS_VERSION, idx.shape[1], idx.shape[0])
    _atomic_write(path, head + idx.tobytes())
    return {"path": str(path), "kind": "bag-index", "sha256": sha256_file(path)}


def load_bag_indices(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    _, _, n_b, m = _read_header(raw, _BAG_HEADER, BAGS_MAGIC, BAGS_VERSION, "bag index")
    if len(raw) != _BAG_HEADER.size + m * n_b * 8:
        raise IntegrityError("bag index file size does not match header")
    return np.frombuffer(raw, _U64, m * n_b, _BAG_HEADER.size).astype(np.int64).reshape(m, n_b)


# -- checkpoints -----------------------------------------------------------

def _payload_order(model: BagModel) -> list[tuple[str, str]]:
    order = [("state", "norm_mean"), ("state", "norm_std")]
    for l in range(N_LAYERS):
        order += [("params", f"W{l}"), ("params", f"gamma{l}"), ("params", f"beta{l}"),
                  ("state", f"running_mean{l}"), ("state", f"running_var{l}")]
    return order + [("params", "W_out"), ("params", "b_out")]


def save_checkpoint(model: BagModel, path, schedule_hash: bytes = b"") -> dict:
    """Write ``model`` and return a manifest entry for the file."""
    sched = hashlib.sha256(b"").digest() if not schedule_hash else bytes(schedule_hash)
    if len(sched) != 32:
        raise FormatError("schedule hash must be 32 bytes")
    payload = b"".join(
        np.ascontiguousarray(getattr(model, where)[name], dtype=_F64).tobytes()
        for where, name in _payload_order(model)
    )
    head = _CK_HEADER.pack(
        CKPT_MAGIC, CKPT_VERSION, HEAD_TAGS[model.head], model.n_features, model.input_dim,
        model.width, model.n_classes, N_LAYERS, sched, model.dropout, model.l2, model.bn_eps,
        model.bn_momentum, int(model.rng_seed) & ((1 << 64) - 1), int(model.adapted), len(payload),
    )
    digest = hashlib.sha256(head + payload).digest()
    _atomic_write(path, head + digest + payload)
    return {"path": str(path), "kind": "checkpoint", "head": model.head.value,
            "sha256": sha256_file(path), "schedule_hash": sched.hex()}


def load_checkpoint(path, expected_head=None) -> BagModel:
    """Read a checkpoint; ``expected_head`` guards against loading into the wrong pipeline."""
    raw = Path(path).read_bytes()
    (_, _, head_tag, n_features, input_dim, width, n_out, n_layers, _sched, dropout, l2, eps, mom,
     seed, adapted, n_payload) = _read_header(raw, _CK_HEADER, CKPT_MAGIC, CKPT_VERSION, "checkpoint")
    start = _CK_HEADER.size + 32
    if len(raw) != start + n_payload:
        raise IntegrityError(f"checkpoint has {len(raw)} bytes, header implies {start + n_payload}")
    if hashlib.sha256(raw[:_CK_HEADER.size] + raw[start:]).digest() != raw[_CK_HEADER.size:start]:
        raise IntegrityError("checkpoint content hash mismatch")
    if head_tag not in _TAG_HEAD or n_layers != N_LAYERS:
        raise FormatError("checkpoint describes an unsupported topology")
    head = _TAG_HEAD[head_tag]
    if expected_head is not None and HeadKind(expected_head) is not head:
        raise HeadMismatchError(f"checkpoint has a {head.value} head, expected {HeadKind(expected_head).value}")
    model = BagModel(head, n_features, n_out, width, dropout, l2, eps, mom, seed, adapted=bool(adapted))
    if model.input_dim != input_dim:
        raise FormatError("input dimension inconsistent with head")
    model._init_params()
    off = start
    for where, name in _payload_order(model):
        ref = getattr(model, where)[name]
        nbytes = ref.size * 8
        if off + nbytes > len(raw):
            raise IntegrityError("checkpoint payload shorter than its topology")
        getattr(model, where)[name] = np.frombuffer(raw, _F64, ref.size, off).astype(np.float64).reshape(ref.shape)
        off += nbytes
    if off != len(raw):
        raise IntegrityError("checkpoint payload longer than its topology")
    return model


# -- canonical JSON reports ------------------------------------------------

def _plain(obj):
    """Convert to JSON-native values; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, bytes):
        return obj.hex()
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, two-space indent, shortest round-trip floats, trailing newline."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(obj, path, kind: str) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, "data": obj}
    _atomic_write(path, canonical_json(doc).encode("utf-8"))
    return {"path": str(path), "kind": kind, "sha256": sha256_file(path)}


def read_json(path, kind: str | None = None):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or "schema_version" not in doc or "data" not in doc:
        raise FormatError(f"{path}: not a report document")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema version {doc['schema_version']}, expected {SCHEMA_VERSION}")
    if kind is not None and doc.get("kind") != kind:
        raise FormatError(f"{path}: holds a {doc.get('kind')!r} document, expected {kind!r}")
    return doc["kind"], doc["data"]


_REPORT_TYPES = {
    "scaling": ScalingReport,
    "calibration": CalibrationRecord,
    "coverage": CoverageReport,
}


def _report_kind(report) -> str:
    for kind, cls in _REPORT_TYPES.items():
        if isinstance(report, cls):
            return kind
    if isinstance(report, dict) and "kind" in report:
        return report["kind"]
    raise FormatError(f"cannot serialize {type(report).__name__} as a report")


def report_rows(report) -> tuple[list[str], list[list]]:
    """Lossy tabular projection of a report for plotting."""
    if isinstance(report, ScalingReport):
        if report.mode == "binary":
            cols = ["n_signal", "c_bkgrd", "bag_size", "baseline", "auc_mean", "auc_std", "n_models", "status"]
            rows = [[p["n_signal"], p["c_bkgrd"], p["bag_size"], p["baseline"], p["auc_mean"],
                     p["auc_std"], len(p["auc"]), p["status"]] for p in report.points]
            return cols, rows
        cols = ["bag_size", "calibration", "c_cicc", "coverage", "mean_fisher", "bias", "fit_mse", "status"]
        rows = []
        for p in report.points:
            by_cal = {r["calibration"]: r for r in p.get("rows", [])}
            for cal in ("uncalibrated", "calibrated"):
                r = by_cal.get(cal, {})
                rows.append([p["bag_size"], cal] + [r.get(k) for k in cols[2:-1]] + [p["status"]])
        return cols, rows
    if isinstance(report, CoverageReport):
        cols = ["index", "lo", "hi", "covered", "target"]
        return cols, [[i, a, b, h, report.target] for i, ((a, b), h) in enumerate(zip(report.intervals, report.hits))]
    if isinstance(report, CalibrationRecord):
        d = report.to_dict()
        cols = [k for k in d if k != "extra"]
        return cols, [[d[k] for k in cols]]
    raise FormatError(f"no tabular form for {type(report).__name__}")


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return v


def write_csv(cols, rows, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_csv_cell(v) for v in r])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def write_report(report, directory, name: str = "report", csv_dir=None) -> dict:
    """Write ``<name>.json`` (lossless) and ``<name>.csv`` (plot projection)."""
    kind = _report_kind(report)
    directory = Path(directory)
    data = report.to_dict() if hasattr(report, "to_dict") else report
    entry = write_json(data, directory / f"{name}.json", kind)
    out = {"json": entry}
    try:
        cols, rows = report_rows(report)
    except FormatError:
        return out
    csv_path = Path(csv_dir or directory) / f"{name}.csv"
    write_csv(cols, rows, csv_path)
    out["csv"] = {"path": str(csv_path), "kind": kind + "-csv", "sha256": sha256_file(csv_path)}
    return out


def read_report(path):
    kind, data = read_json(path)
    if kind == "scaling":
        return ScalingReport.from_dict(data)
    if kind == "calibration":
        return CalibrationRecord(**data)
    if kind == "coverage":
        return CoverageReport([tuple(iv) for iv in data["intervals"]], data["hits"], data["coverage"],
                              data["target"])
    return data


# -- manifests and run layout ----------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    code_version: str = __version__
    seeds: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # relative path -> sha256
    created: str = ""
    updated: str = ""

    def add(self, root, entry: dict):
        rel = os.path.relpath(entry["path"], root)
        self.artifacts[rel.replace(os.sep, "/")] = entry["sha256"]

    def to_dict(self) -> dict:
        return asdict(self)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def write_manifest(manifest: RunManifest, root) -> Path:
    if not manifest.created:
        manifest.created = _now()
    manifest.updated = _now()
    path = Path(root) / "manifest.json"
    _atomic_write(path, canonical_json({"schema_version": SCHEMA_VERSION, **manifest.to_dict()}).encode())
    return path


def load_manifest(root, verify: bool = True) -> RunManifest:
    """Read ``manifest.json``; with ``verify`` every artifact must exist and hash-match."""
    path = Path(root) / "manifest.json"
    doc = json.loads(path.read_text())
    if doc.pop("schema_version", None) != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: unsupported manifest schema")
    m = RunManifest(**doc)
    if verify:
        for rel, digest in m.artifacts.items():
            p = Path(root) / rel
            if not p.exists():
                raise IntegrityError(f"manifest artifact missing: {rel}")
            if sha256_file(p) != digest:
                raise IntegrityError(f"manifest artifact hash mismatch: {rel}")
    return m


@dataclass
class RunLayout:
    """``root/{manifest.json, config.ini, checkpoints/, reports/, plotdata/}``."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def config(self) -> Path:
        return self.root / "config.ini"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def plotdata(self) -> Path:
        return self.root / "plotdata"

    def create(self) -> "RunLayout":
        for d in (self.root, self.checkpoints, self.reports, self.plotdata):
            d.mkdir(parents=True, exist_ok=True)
        return self
