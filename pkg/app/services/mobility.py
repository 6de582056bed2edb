import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

US_PER_S = 1_000_000


def within_range(positions: np.ndarray, range_m: float) -> np.ndarray:
    """Boolean adjacency of the unit-disk graph (boundary inclusive, no self loops)"""
    dx = positions[:, None, 0] - positions[None, :, 0]
    dy = positions[:, None, 1] - positions[None, :, 1]
    adjacency = np.hypot(dx, dy) <= range_m
    np.fill_diagonal(adjacency, False)
    return adjacency


def connectivity_graph(positions: np.ndarray, range_m: float) -> nx.Graph:
    """Snapshot of the unit-disk connectivity graph G(V, E)"""
    graph = nx.Graph()
    graph.add_nodes_from(range(len(positions)))
    rows, cols = np.nonzero(np.triu(within_range(positions, range_m), k=1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return graph


@dataclass(slots=True)
class WaypointState:
    """One node's current leg: it sits at ``origin`` until ``leg_start``, moves, then pauses at ``target``"""

    node: int
    origin: Tuple[float, float]
    target: Tuple[float, float]
    leg_start: float
    speed: float
    pause_until: float

    @property
    def leg_end(self) -> float:
        distance = math.dist(self.origin, self.target)
        if distance == 0.0:
            return self.leg_start
        return self.leg_start + distance / self.speed

    def position_at(self, t: float) -> Tuple[float, float]:
        if t <= self.leg_start:
            return self.origin
        end = self.leg_end
        if t >= end:
            return self.target
        frac = (t - self.leg_start) / (end - self.leg_start)
        return (
            self.origin[0] + (self.target[0] - self.origin[0]) * frac,
            self.origin[1] + (self.target[1] - self.origin[1]) * frac,
        )


class RandomWaypoint:
    """
    Random waypoint mobility over a rectangle

    What this does: keeps every node's current leg and interpolates positions
    Why: the channel needs exact positions at every transmission instant
    How: legs advance lazily when positions are queried; each node draws its
         waypoints from its own random stream, so two scenarios that differ
         only in speed visit the same waypoint sequence

    Queries must be made with non-decreasing times.
    """

    def __init__(
        self,
        nodes: int,
        width: float,
        height: float,
        speed: float,
        pause_s: float,
        seed: np.random.SeedSequence,
    ):
        if speed <= 0:
            raise ValueError("waypoint speed must be positive")
        self.nodes = nodes
        self.width = width
        self.height = height
        self.speed = speed
        self.pause_s = pause_s
        self._rngs = [np.random.default_rng(s) for s in seed.spawn(nodes)]
        self._origin = np.array([self._draw_point(i) for i in range(nodes)], dtype=float)
        self._target = self._origin.copy()
        self._leg_start = np.zeros(nodes)
        self._leg_end = np.zeros(nodes)
        # every node pauses first, then moves
        self._pause_until = np.full(nodes, float(pause_s))
        self._clock = 0.0
        self.legs_started = 0

    def _draw_point(self, node: int) -> Tuple[float, float]:
        rng = self._rngs[node]
        return (float(rng.uniform(0.0, self.width)), float(rng.uniform(0.0, self.height)))

    def _start_leg(self, node: int, at: float) -> None:
        self._origin[node] = self._target[node]
        self._target[node] = self._draw_point(node)
        distance = float(np.hypot(*(self._target[node] - self._origin[node])))
        # a zero-length leg with zero pause would never let the clock move on
        duration = max(distance / self.speed, 1e-6)
        self._leg_start[node] = at
        self._leg_end[node] = at + duration
        self._pause_until[node] = at + duration + self.pause_s
        self.legs_started += 1

    def _advance(self, t: float) -> None:
        if t < self._clock:
            raise ValueError(f"mobility queried backwards in time ({t} < {self._clock})")
        self._clock = t
        for node in np.flatnonzero(self._pause_until <= t).tolist():
            while self._pause_until[node] <= t:
                self._start_leg(node, float(self._pause_until[node]))

    def positions(self, t: float) -> np.ndarray:
        """All node positions at time ``t`` seconds, shape (nodes, 2)"""
        self._advance(t)
        duration = self._leg_end - self._leg_start
        elapsed = t - self._leg_start
        frac = np.clip(
            np.divide(elapsed, duration, out=np.ones_like(elapsed), where=duration > 0), 0.0, 1.0
        )
        return self._origin + (self._target - self._origin) * frac[:, None]

    def position_at(self, node: int, t: float) -> Tuple[float, float]:
        x, y = self.positions(t)[node]
        return float(x), float(y)

    def state(self, node: int) -> WaypointState:
        return WaypointState(
            node=node,
            origin=tuple(self._origin[node].tolist()),
            target=tuple(self._target[node].tolist()),
            leg_start=float(self._leg_start[node]),
            speed=self.speed,
            pause_until=float(self._pause_until[node]),
        )


class StaticPlacement:
    """Fixed (or test-scripted) node positions"""

    def __init__(self, positions: Sequence[Tuple[float, float]]):
        self._positions = np.array(positions, dtype=float)
        self.nodes = len(self._positions)

    def positions(self, t: float) -> np.ndarray:
        return self._positions.copy()

    def position_at(self, node: int, t: float) -> Tuple[float, float]:
        x, y = self._positions[node]
        return float(x), float(y)

    def place(self, node: int, x: float, y: float) -> None:
        self._positions[node] = (x, y)


class LinkChangeKind(str, Enum):
    FORMED = "formed"
    BROKEN = "broken"


@dataclass(frozen=True, slots=True)
class LinkChange:
    at: int
    a: int
    b: int
    kind: LinkChangeKind


class LinkScanner:
    """Detects range-threshold crossings between consecutive position samples"""

    def __init__(self, range_m: float):
        self.range_m = range_m
        self._previous: Optional[np.ndarray] = None
        self.last_mean_degree = 0.0

    def scan(self, positions: np.ndarray, at_us: int) -> List[LinkChange]:
        adjacency = within_range(positions, self.range_m)
        self.last_mean_degree = float(adjacency.sum(axis=1).mean())
        previous, self._previous = self._previous, adjacency
        if previous is None:
            return []
        rows, cols = np.nonzero(np.triu(adjacency != previous, k=1))
        return [
            LinkChange(
                at=at_us,
                a=a,
                b=b,
                kind=LinkChangeKind.FORMED if adjacency[a, b] else LinkChangeKind.BROKEN,
            )
            for a, b in zip(rows.tolist(), cols.tolist())
        ]


def link_change_scan(
    mobility, range_m: float, dt_s: float = 0.1, horizon_s: float = 900.0
) -> List[LinkChange]:
    """Sample a mobility model every ``dt_s`` up to the horizon and list every link transition"""
    if dt_s <= 0:
        raise ValueError("scan interval must be positive")
    step_us = int(round(dt_s * US_PER_S))
    horizon_us = int(round(horizon_s * US_PER_S))
    scanner = LinkScanner(range_m)
    changes: List[LinkChange] = []
    for t_us in range(0, horizon_us + 1, step_us):
        changes.extend(scanner.scan(mobility.positions(t_us / US_PER_S), t_us))
    broken = sum(1 for c in changes if c.kind is LinkChangeKind.BROKEN)
    logger.debug(f"Link scan: {len(changes)} changes, {broken} breaks over {horizon_s}s")
    return changes
