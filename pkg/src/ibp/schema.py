"""Versioned CSV/JSON snapshot files and run manifests.

CSV layout::

    # ibp-snapshot v1
    # key=value            (zero or more metadata lines)
    time,m,probability,tail_mass,engine[,count,stderr]

Two-type files insert an ``n`` column after ``m``.  Monte Carlo files add the
``count`` and ``stderr`` columns and a ``trajectories`` metadata line.  The
extinct mass of critical branching is carried in the metadata as
``extinct_mass@<time>``, since the rows cover m >= 1 only.  Floats are
written with ``repr`` so files round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Engine, SchemaMismatch

__all__ = [
    "SCHEMA",
    "SnapshotTable",
    "table_from_snapshots",
    "format_csv",
    "format_json",
    "write_csv",
    "write_json",
    "read_table",
    "sha256",
    "write_manifest",
]

SCHEMA = "ibp-snapshot v1"


@dataclass
class SnapshotTable:
    """Flat rows of one or more snapshots, as stored on disk."""

    two_type: bool
    columns: dict
    meta: dict = field(default_factory=dict)

    @property
    def monte_carlo(self) -> bool:
        return "stderr" in self.columns

    def __len__(self) -> int:
        return len(self.columns["time"])

    def keys(self) -> list[tuple]:
        names = ("time", "m", "n") if self.two_type else ("time", "m")
        return list(zip(*(self.columns[c].tolist() for c in names)))

    @property
    def times(self) -> list[float]:
        return sorted(set(self.columns["time"].tolist()))


def _header(two_type, mc):
    cols = ["time", "m"] + (["n"] if two_type else []) + ["probability", "tail_mass", "engine"]
    return cols + (["count", "stderr"] if mc else [])


def table_from_snapshots(snaps, meta: dict | None = None) -> SnapshotTable:
    """Flatten snapshots (all one-type or all two-type) into a table."""
    snaps = list(snaps)
    if not snaps:
        raise SchemaMismatch("no snapshots to write")
    two_type = snaps[0].two_type
    if any(s.two_type != two_type for s in snaps):
        raise SchemaMismatch("cannot mix one-type and two-type snapshots in one file")
    mc = snaps[0].engine is Engine.MONTE_CARLO
    meta = dict(meta or {})
    rows = {c: [] for c in _header(two_type, mc)}
    for s in snaps:
        p = np.asarray(s.probs)
        if two_type:
            mm, nn = np.meshgrid(np.arange(p.shape[0]), np.arange(p.shape[1]), indexing="ij")
            rows["m"] += (mm.ravel() + s.origin).tolist()
            rows["n"] += (nn.ravel() + s.origin).tolist()
        else:
            rows["m"] += s.indices().tolist()
        size = p.size
        rows["time"] += [s.time] * size
        rows["probability"] += p.ravel().tolist()
        rows["tail_mass"] += [s.tail_mass] * size
        rows["engine"] += [s.engine.value] * size
        if mc:
            rows["count"] += np.asarray(s.meta["counts"]).ravel().tolist()
            rows["stderr"] += np.asarray(s.meta["stderr"]).ravel().tolist()
            meta.setdefault("trajectories", s.meta["trajectories"])
        if s.extinct_mass:
            meta[f"extinct_mass@{s.time!r}"] = s.extinct_mass
    columns = {}
    for c, v in rows.items():
        if c in ("m", "n", "count"):
            columns[c] = np.asarray(v, dtype=np.int64)
        elif c == "engine":
            columns[c] = np.asarray(v, dtype=object)
        else:
            columns[c] = np.asarray(v, dtype=float)
    return SnapshotTable(two_type=two_type, columns=columns, meta=meta)


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def format_csv(table: SnapshotTable) -> str:
    cols = _header(table.two_type, table.monte_carlo)
    buf = io.StringIO()
    buf.write(f"# {SCHEMA}\n")
    for key in sorted(table.meta):
        buf.write(f"# {key}={_fmt(table.meta[key])}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    data = [table.columns[c].tolist() for c in cols]
    for row in zip(*data):
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def format_json(table: SnapshotTable) -> str:
    doc = {
        "schema": SCHEMA,
        "two_type": table.two_type,
        "meta": table.meta,
        "columns": {c: table.columns[c].tolist() for c in _header(table.two_type, table.monte_carlo)},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_csv(table: SnapshotTable, path) -> Path:
    path = Path(path)
    path.write_text(format_csv(table))
    return path


def write_json(table: SnapshotTable, path) -> Path:
    path = Path(path)
    path.write_text(format_json(table))
    return path


def _parse_meta(value):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _typed(columns):
    out = {}
    for c, v in columns.items():
        if c in ("m", "n", "count"):
            out[c] = np.asarray([int(x) for x in v], dtype=np.int64)
        elif c == "engine":
            out[c] = np.asarray(v, dtype=object)
        else:
            out[c] = np.asarray([float(x) for x in v], dtype=float)
    return out


def _check_columns(cols):
    required = {"time", "m", "probability", "tail_mass", "engine"}
    missing = required - set(cols)
    if missing:
        raise SchemaMismatch(f"missing columns: {', '.join(sorted(missing))}")


def read_table(path) -> SnapshotTable:
    """Read a CSV or JSON snapshot file written by this package.

    Raises
    ------
    SchemaMismatch
        If the file lacks the version header or required columns.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path}: not valid JSON") from exc
        if doc.get("schema") != SCHEMA:
            raise SchemaMismatch(f"{path}: expected schema {SCHEMA!r}")
        _check_columns(doc["columns"])
        return SnapshotTable(bool(doc["two_type"]), _typed(doc["columns"]), dict(doc.get("meta", {})))

    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {SCHEMA}":
        raise SchemaMismatch(f"{path}: missing '# {SCHEMA}' header")
    meta = {}
    body = []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = _parse_meta(value)
        elif line:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None:
        raise SchemaMismatch(f"{path}: no column header")
    _check_columns(header)
    rows = list(reader)
    columns = {c: [r[i] for r in rows] for i, c in enumerate(header)}
    return SnapshotTable("n" in header, _typed(columns), meta)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def versions() -> dict:
    import matplotlib
    import scipy

    from . import __version__

    return {
        "ibp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def write_manifest(path, argv, params: dict, seed, outputs, wall_clock: float) -> Path:
    """Write a JSON manifest listing every output with its SHA-256 digest."""
    path = Path(path)
    doc = {
        "command_line": list(argv),
        "parameters": params,
        "seed": seed,
        "versions": versions(),
        "outputs": [{"path": str(p), "sha256": sha256(p)} for p in outputs],
        "wall_clock_seconds": wall_clock,
        "executable": sys.executable,
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path
