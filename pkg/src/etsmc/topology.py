"""Directed communication graphs among followers plus leader pinning links."""
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NegativeWeight, SelfLoop


@dataclass(frozen=True)
class Topology:
    """Weighted digraph; ``adjacency[i, j]`` is the weight of the edge j -> i."""

    adjacency: np.ndarray
    leader_gains: np.ndarray

    @property
    def n_followers(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class CouplingMatrices:
    degree: np.ndarray
    laplacian: np.ndarray
    h_matrix: np.ndarray


def build_topology(adjacency, leader_gains) -> Topology:
    a = np.array(adjacency, dtype=float)
    b = np.array(leader_gains, dtype=float).reshape(-1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"adjacency must be square, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(
            f"{b.shape[0]} leader gains for {a.shape[0]} followers")
    if (a < 0).any() or (b < 0).any():
        raise NegativeWeight("edge weights and leader gains must be >= 0")
    if np.any(np.diag(a) != 0):
        raise SelfLoop("adjacency diagonal must be zero")
    a.setflags(write=False)
    b.setflags(write=False)
    return Topology(a, b)


def coupling(t: Topology) -> CouplingMatrices:
    d = np.diag(t.adjacency.sum(axis=1))
    lap = d - t.adjacency
    return CouplingMatrices(d, lap, lap + np.diag(t.leader_gains))


def leader_reachable(t: Topology) -> bool:
    """BFS from the leader along information flow (j -> i when a_ij > 0)."""
    n = t.n_followers
    seen = np.zeros(n, dtype=bool)
    queue = deque(np.flatnonzero(t.leader_gains > 0))
    seen[list(queue)] = True
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(t.adjacency[:, j] > 0):
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return bool(seen.all())


def _ring5():
    a = np.zeros((5, 5))
    for i in range(5):
        a[i, (i - 1) % 5] = 1.0
    # a second pinned node keeps the slowest coupling eigenvalue away from zero
    return a, [1, 0, 1, 0, 0]


def _two_hub5():
    # hubs 1 and 4 are pinned to the leader; 2, 3 listen to hub 1; 5, 3 to hub 4
    a = np.zeros((5, 5))
    a[1, 0] = a[2, 0] = 1.0
    a[4, 3] = a[2, 3] = 1.0
    a[0, 3] = 1.0
    return a, [1, 0, 0, 1, 0]


def _chain5():
    a = np.zeros((5, 5))
    for i in range(1, 5):
        a[i, i - 1] = 1.0
    return a, [1, 0, 0, 0, 0]


_PRESETS = {"ring": _ring5, "two-hub": _two_hub5, "chain": _chain5}


def preset_names():
    return list(_PRESETS)


def preset(name: str) -> Topology:
    try:
        a, b = _PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown topology preset {name!r}; "
                       f"choose from {preset_names()}") from None
    return build_topology(a, b)
