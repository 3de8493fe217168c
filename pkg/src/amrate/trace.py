"""Per-iteration trace records and their JSONL file format.

File layout: the first line is ``{"header": {...}}`` with run metadata,
every following line is one record with keys ``k``, ``f``, ``dist``,
``block_diffs`` and, when timing was requested, ``wall_nanos``. Floats are
written with 17 significant digits, so reading a file back reproduces every
value exactly.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import format_float


class TraceFormatError(ValueError):
    pass


@dataclass
class IterTrace:
    k: list = field(default_factory=list)
    f: list = field(default_factory=list)
    dist: list = field(default_factory=list)
    block_diffs: list = field(default_factory=list)
    wall_nanos: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, k, f, dist, block_diffs=None, wall_nanos=None):
        if self.k and k <= self.k[-1]:
            raise ValueError(f"record index {k} does not follow {self.k[-1]}")
        if not math.isfinite(f):
            raise ValueError(f"non-finite objective at k={k}")
        if not dist >= 0:
            raise ValueError(f"dist must be >= 0, got {dist} at k={k}")
        self.k.append(int(k))
        self.f.append(float(f))
        self.dist.append(float(dist))
        self.block_diffs.append(dict(block_diffs or {}))
        self.wall_nanos.append(wall_nanos)

    def __len__(self):
        return len(self.k)

    @property
    def f_array(self):
        return np.asarray(self.f, dtype=np.float64)

    @property
    def dist_array(self):
        return np.asarray(self.dist, dtype=np.float64)

    def block_series(self, block):
        """Diffs of one block for records 1.. (record 0 has none)."""
        return np.asarray([bd[block] for bd in self.block_diffs[1:] if block in bd])

    def blocks(self):
        seen = []
        for bd in self.block_diffs:
            for b in bd:
                if b not in seen:
                    seen.append(b)
        return seen

    @classmethod
    def from_arrays(cls, f, dist, meta=None):
        tr = cls(meta=dict(meta or {}))
        for k, (fk, dk) in enumerate(zip(f, dist)):
            tr.append(k, fk, dk)
        return tr


def _num(x):
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite value {x}")
    return format_float(x)


def to_json(obj):
    """Deterministic JSON with 17-digit floats and keys in insertion order."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}"
                               for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist())
    return _num(obj)


def record_line(trace, idx):
    rec = {"k": trace.k[idx], "f": trace.f[idx], "dist": trace.dist[idx],
           "block_diffs": trace.block_diffs[idx]}
    if trace.wall_nanos[idx] is not None:
        rec["wall_nanos"] = int(trace.wall_nanos[idx])
    return to_json(rec)


def header_line(meta):
    return to_json({"header": meta})


class JsonlSink:
    """Streams records to an open text file as they are produced."""

    def __init__(self, fh, meta):
        self.fh = fh
        fh.write(header_line(meta) + "\n")

    def __call__(self, trace, idx):
        self.fh.write(record_line(trace, idx) + "\n")
        self.fh.flush()


def write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write(header_line(trace.meta) + "\n")
        for i in range(len(trace)):
            fh.write(record_line(trace, i) + "\n")


def read_trace(path):
    tr = IterTrace()
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
    except OSError as exc:
        raise TraceFormatError(f"cannot read {path}: {exc}") from None
    for n, ln in enumerate(lines, 1):
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}:{n}: {exc}") from None
        if not isinstance(obj, dict):
            raise TraceFormatError(f"{path}:{n}: expected an object")
        if "header" in obj:
            if n != 1:
                raise TraceFormatError(f"{path}:{n}: header must be the first line")
            tr.meta = obj["header"]
            continue
        try:
            tr.append(obj["k"], obj["f"], obj["dist"], obj.get("block_diffs"),
                      obj.get("wall_nanos"))
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"{path}:{n}: bad record ({exc})") from None
    if not tr.k:
        raise TraceFormatError(f"{path}: no records")
    return tr
