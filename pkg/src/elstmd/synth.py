"""Periodic (optionally drifting, optionally noisy) synthetic dynamic networks."""
from dataclasses import asdict, dataclass

import numpy as np

from .graph_store import SnapshotSequence
from .numeric import SeededRng


@dataclass
class SyntheticSpec:
    n: int = 30
    period: int = 2
    T: int = 120
    density: float = 0.25
    noise: float = 0.0
    drift_every: int = 0  # 0 = phase edge sets never change
    drift_rate: float = 0.2  # share of each phase's links rewired per drift event
    phases: list | None = None  # explicit (n, n) edge sets, overrides density

    def __post_init__(self):
        if self.period < 2:
            raise ValueError("period must be >= 2")
        if self.n < 2 or self.T < 1:
            raise ValueError("need n >= 2 and T >= 1")
        if not 0 <= self.noise <= 1 or not 0 <= self.drift_rate <= 1:
            raise ValueError("noise and drift_rate must lie in [0, 1]")
        if self.phases is not None and len(self.phases) != self.period:
            raise ValueError("need one explicit edge set per phase")

    def to_dict(self):
        d = asdict(self)
        if self.phases is not None:
            d["phases"] = [np.asarray(p).astype(int).tolist() for p in self.phases]
        return d


def _offdiag(n):
    return ~np.eye(n, dtype=bool)


def _random_phases(spec, rng):
    mask = _offdiag(spec.n)
    while True:
        phases = [(rng.random((spec.n, spec.n)) < spec.density) & mask for _ in range(spec.period)]
        if all(not np.array_equal(phases[0], p) for p in phases[1:]):
            return phases


def _rewire(edges, rate, rng):
    """Drop each link with probability ``rate`` and add as many links among absent pairs."""
    n = edges.shape[0]
    mask = _offdiag(n)
    out = edges.copy()
    present = np.flatnonzero(out & mask)
    drop = present[rng.random(present.size) < rate]
    absent = np.flatnonzero(~out & mask)
    k = min(drop.size, absent.size)
    add = rng.choice(absent, k, replace=False) if k else np.empty(0, dtype=np.int64)
    flat = out.reshape(-1)
    flat[drop] = False
    flat[add] = True
    return out


def synth_generate(spec, seed=0):
    rng = SeededRng(seed)
    if spec.phases is not None:
        phases = [np.asarray(p) != 0 for p in spec.phases]
        for p in phases:
            np.fill_diagonal(p, False)
    else:
        phases = _random_phases(spec, rng)
    mask = _offdiag(spec.n)
    adj = np.zeros((spec.T, spec.n, spec.n), dtype=np.uint8)
    for k in range(spec.T):
        if spec.drift_every and k and k % spec.drift_every == 0:
            phases = [_rewire(p, spec.drift_rate, rng) for p in phases]
        snap = phases[k % spec.period].copy()
        if spec.noise:
            flips = (rng.random((spec.n, spec.n)) < spec.noise) & mask
            snap ^= flips
        adj[k] = snap
    return SnapshotSequence(adjacency=adj, interval=1.0, t_min=0)
