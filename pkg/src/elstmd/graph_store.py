"""Temporal edge lists -> snapshot sequences -> sample windows -> train/test split."""
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ParseError, ShapeError
from .kernels import transient_keep

DEFAULT_NUM_SNAPSHOTS = 320
DEFAULT_HORIZON = 8
DEFAULT_WINDOW_LEN = 10
DEFAULT_TRAIN_COUNT = 230


class TemporalEdge(NamedTuple):
    src: int
    dst: int
    timestamp: int


@dataclass
class TemporalEdgeList:
    src: np.ndarray
    dst: np.ndarray
    timestamp: np.ndarray
    node_count: int
    labels: list = field(default_factory=list)

    def __len__(self):
        return int(self.src.size)

    def __iter__(self) -> Iterator[TemporalEdge]:
        for s, d, t in zip(self.src.tolist(), self.dst.tolist(), self.timestamp.tolist()):
            yield TemporalEdge(s, d, t)

    @property
    def t_min(self):
        return int(self.timestamp[0]) if len(self) else None

    @property
    def t_max(self):
        return int(self.timestamp[-1]) if len(self) else None

    @property
    def ids(self):
        return {label: i for i, label in enumerate(self.labels)}


@dataclass
class SnapshotSequence:
    """Binary adjacency matrices stacked as a ``(T, n, n)`` uint8 array."""

    adjacency: np.ndarray
    interval: float = 1.0
    t_min: float = 0.0
    horizon: int | None = None
    labels: list | None = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 3 or adj.shape[1] != adj.shape[2]:
            raise ShapeError(f"snapshot stack must be (T, n, n), got {adj.shape}")
        if adj.shape[0] == 0:
            raise ShapeError("snapshot sequence is empty")
        adj = (adj != 0).astype(np.uint8)
        idx = np.arange(adj.shape[1])
        adj[:, idx, idx] = 0
        self.adjacency = adj

    def __len__(self):
        return self.adjacency.shape[0]

    def __getitem__(self, k):
        return self.adjacency[k]

    @property
    def node_count(self):
        return self.adjacency.shape[1]

    def link_count(self):
        return int(self.adjacency.sum())


@dataclass
class SampleWindow:
    inputs: np.ndarray  # (N, n, n), snapshots t-N .. t-1
    target: np.ndarray  # (n, n), snapshot t
    t: int

    @property
    def prev(self):
        return self.inputs[-1]

    @property
    def window_len(self):
        return self.inputs.shape[0]


@dataclass
class DatasetSplit:
    train: list
    test: list


# --------------------------------------------------------------------------
# ingestion


def _read_text(source):
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_timestamp(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(f"bad timestamp {tok!r}", lineno) from None
    if not np.isfinite(val) or val != int(val):
        raise ParseError(f"timestamp {tok!r} is not an integer", lineno)
    return int(val)


def ingest_edge_list(source, fmt="auto", undirected=False):
    """Parse ``src dst timestamp`` records into a time-sorted edge list.

    ``source`` may be bytes, a path, or a text/binary stream. ``fmt`` is
    ``"whitespace"``, ``"csv"`` or ``"auto"`` (comma-separated when the first
    record contains a comma). Lines starting with ``#`` or ``%`` are comments.
    Four-field records are read as ``src dst weight timestamp`` (the KONECT
    layout); the weight is ignored.
    """
    text = _read_text(source)
    ids = {}
    rows = []
    csv_mode = None if fmt == "auto" else fmt == "csv"
    if fmt not in ("auto", "csv", "whitespace"):
        raise ValueError(f"unknown edge-list format {fmt!r}")
    first_record = True
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line[0] in "#%":
            continue
        if csv_mode is None:
            csv_mode = "," in line
        fields = [f.strip() for f in line.split(",")] if csv_mode else line.split()
        if len(fields) not in (3, 4):
            raise ParseError(f"expected 'src dst timestamp', got {len(fields)} fields", lineno)
        ts_tok = fields[-1]
        if first_record:
            first_record = False
            if csv_mode:
                try:
                    float(ts_tok)
                except ValueError:
                    continue  # header row
        ts = _parse_timestamp(ts_tok, lineno)
        s = ids.setdefault(fields[0], len(ids))
        d = ids.setdefault(fields[1], len(ids))
        if s != d:
            rows.append((s, d, ts))
    if not ids:
        raise ParseError("edge list is empty")
    if undirected:
        rows = rows + [(d, s, t) for s, d, t in rows]
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    order = np.argsort(arr[:, 2], kind="stable")
    arr = arr[order]
    return TemporalEdgeList(
        src=arr[:, 0].copy(),
        dst=arr[:, 1].copy(),
        timestamp=arr[:, 2].copy(),
        node_count=len(ids),
        labels=list(ids),
    )


# --------------------------------------------------------------------------
# snapshots


def build_snapshots(edges, num_snapshots=DEFAULT_NUM_SNAPSHOTS, t_min=None, t_max=None):
    """Bin edges into ``num_snapshots`` equal-width half-open intervals.

    The last bin is closed so the final timestamp lands in it. ``t_min`` and
    ``t_max`` default to the observed range.
    """
    if num_snapshots < 2:
        raise ValueError("num_snapshots must be at least 2")
    if len(edges) == 0:
        raise ValueError("cannot build snapshots from an edge list with no edges")
    lo = edges.t_min if t_min is None else int(t_min)
    hi = edges.t_max if t_max is None else int(t_max)
    if hi <= lo:
        raise ValueError("all timestamps are equal; snapshot interval would be zero")
    ts = edges.timestamp
    if ts[0] < lo or ts[-1] > hi:
        raise ValueError("edge timestamps fall outside [t_min, t_max]")
    # exact integer form of floor((ts - lo) / interval)
    bins = ((ts - lo) * num_snapshots) // (hi - lo)
    bins = np.minimum(bins, num_snapshots - 1)
    n = edges.node_count
    adj = np.zeros((num_snapshots, n, n), dtype=np.uint8)
    adj[bins, edges.src, edges.dst] = 1
    return SnapshotSequence(
        adjacency=adj,
        interval=(hi - lo) / num_snapshots,
        t_min=lo,
        labels=list(edges.labels) or None,
    )


def filter_transient_links(seq, horizon=DEFAULT_HORIZON, backend=None):
    """Drop each link occurrence that does not recur within the next ``horizon`` snapshots."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    keep = transient_keep(seq.adjacency, horizon, backend=backend)
    return SnapshotSequence(
        adjacency=keep,
        interval=seq.interval,
        t_min=seq.t_min,
        horizon=int(horizon),
        labels=seq.labels,
    )


def make_windows(seq, window_len=DEFAULT_WINDOW_LEN):
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    T = len(seq)
    if T <= window_len:
        raise ValueError(f"need more than {window_len} snapshots to form a window, got {T}")
    adj = seq.adjacency
    return [SampleWindow(inputs=adj[t - window_len:t], target=adj[t], t=t) for t in range(window_len, T)]


def split_windows(windows, train_count=DEFAULT_TRAIN_COUNT):
    if not 0 < train_count < len(windows):
        raise ValueError(f"train_count must be in (0, {len(windows)}), got {train_count}")
    return DatasetSplit(train=list(windows[:train_count]), test=list(windows[train_count:]))


# --------------------------------------------------------------------------
# snapshot directory format: k.edges ("i j" per line) + manifest.json


def write_snapshot_dir(seq, path, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for k in range(len(seq)):
        src, dst = np.nonzero(seq[k])
        lines = "".join(f"{i} {j}\n" for i, j in zip(src.tolist(), dst.tolist()))
        (path / f"{k}.edges").write_text(lines)
    manifest = {
        "node_count": seq.node_count,
        "T": len(seq),
        "interval": seq.interval,
        "t_min": seq.t_min,
        "horizon": seq.horizon,
    }
    if seq.labels is not None:
        manifest["labels"] = [str(x) for x in seq.labels]
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_snapshot_dir(path):
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise ParseError(f"{path} has no manifest.json") from None
    n, T = int(manifest["node_count"]), int(manifest["T"])
    adj = np.zeros((T, n, n), dtype=np.uint8)
    for k in range(T):
        fname = path / f"{k}.edges"
        for lineno, line in enumerate(fname.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{fname.name}: expected 'i j'", lineno)
            i, j = int(parts[0]), int(parts[1])
            if not (0 <= i < n and 0 <= j < n):
                raise ParseError(f"{fname.name}: node id out of range", lineno)
            adj[k, i, j] = 1
    return SnapshotSequence(
        adjacency=adj,
        interval=float(manifest.get("interval", 1.0)),
        t_min=manifest.get("t_min", 0.0),
        horizon=manifest.get("horizon"),
        labels=manifest.get("labels"),
    )


def load_sequence(dataset, num_snapshots=DEFAULT_NUM_SNAPSHOTS, horizon=DEFAULT_HORIZON,
                  undirected=False, fmt="auto"):
    """Snapshot directory as is, or edge-list file through ingest -> snapshot -> filter."""
    p = Path(dataset)
    if p.is_dir():
        return read_snapshot_dir(p)
    if not p.exists():
        raise ParseError(f"dataset {dataset} does not exist")
    edges = ingest_edge_list(p, fmt=fmt, undirected=undirected)
    seq = build_snapshots(edges, num_snapshots)
    if horizon:
        seq = filter_transient_links(seq, horizon)
    return seq
