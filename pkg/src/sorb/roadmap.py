"""MaxDist-pruned directed graph over buffered states with a cached APSP.

Nodes are deduplicated visited states.  An edge (u, v) exists iff the
ensemble-aggregated predicted distance is strictly below maxdist; the
Floyd-Warshall cache then answers start->goal queries with O(|B|) fresh
value-function calls (start->nodes and nodes->goal vectors) composed with
the precomputed node-to-node matrix.
"""

from __future__ import annotations

import csv
import dataclasses
from typing import Optional

import numpy as np

from . import kernels
from .distval import ReplayBuffer
from .ensemble import ValueEnsemble
from .gridworld import EpisodeConfig, GridMap, State, random_walk_states


class NoPathError(Exception):
    """No waypoint route exists and the direct distance is not under maxdist."""


@dataclasses.dataclass
class SearchBuffer:
    grid: GridMap
    nodes: np.ndarray  # (n, 2) int32 of (x, y), deduplicated by cell
    source: str = "states"

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int32).reshape(-1, 2)

    def __len__(self):
        return len(self.nodes)

    def states(self) -> list[State]:
        return [State(int(x), int(y)) for x, y in self.nodes]

    @classmethod
    def from_states(
        cls,
        grid: GridMap,
        states,
        limit: Optional[int] = None,
        source: str = "states",
    ) -> "SearchBuffer":
        cells = np.array([[s.x, s.y] for s in states], dtype=np.int32).reshape(-1, 2)
        if len(cells) > 0:
            _, first = np.unique(cells, axis=0, return_index=True)
            cells = cells[np.sort(first)]
        if limit is not None and len(cells) > limit:
            cells = coverage_subsample(grid, cells, limit)
        return cls(grid, cells, source)

    @classmethod
    def from_training_buffer(cls, grid: GridMap, replay: ReplayBuffer, size: int) -> "SearchBuffer":
        cells = replay.distinct_states().astype(np.int32)
        if len(cells) > size:
            cells = coverage_subsample(grid, cells, size)
        return cls(grid, cells, "training-buffer")

    @classmethod
    def from_random_walks(
        cls,
        grid: GridMap,
        count: int,
        rng: np.random.Generator,
        cfg: Optional[EpisodeConfig] = None,
        limit: Optional[int] = None,
    ) -> "SearchBuffer":
        states = random_walk_states(grid, count, rng, cfg)
        return cls.from_states(grid, states, limit=limit, source="random-walk")


def _min_dist_update(grid: GridMap, cells: np.ndarray, mind: np.ndarray, x: int, y: int):
    field = grid.distance_field(State(int(x), int(y)))
    d = field[cells[:, 1], cells[:, 0]].astype(np.float64)
    d[d < 0] = np.inf  # unreachable candidates stay live (other components)
    np.minimum(mind, d, out=mind)


def coverage_subsample(grid: GridMap, cells: np.ndarray, k: int) -> np.ndarray:
    """Pick k of the given cells so the survivors stay mutually reachable
    in short hops.

    Roadmap edges only admit pairs whose predicted distance is under
    maxdist, so a small node set must form a net whose neighboring nodes
    sit ~2 steps apart; a uniform draw leaves holes (an uncovered doorway
    disconnects the graph) long before a spread-out draw does.  Strategy: a
    maximal 2-packing in raster order (no two selected cells within one
    step of each other), which covers every input cell within one step,
    then farthest-point fill (or thinning) to spend exactly the budget.
    Deterministic: raster order seeds the packing, ties break by index."""
    cells = np.asarray(cells, dtype=np.int32).reshape(-1, 2)
    n = len(cells)
    if k >= n:
        return cells
    order = np.lexsort((cells[:, 0], cells[:, 1]))
    blocked = np.zeros((grid.height, grid.width), dtype=bool)
    packed = []
    for idx in order:
        x, y = int(cells[idx, 0]), int(cells[idx, 1])
        if blocked[y, x]:
            continue
        packed.append(idx)
        blocked[y, x] = True
        for dx, dy in ((0, -1), (0, 1), (1, 0), (-1, 0)):
            ax, ay = x + dx, y + dy
            if 0 <= ax < grid.width and 0 <= ay < grid.height:
                blocked[ay, ax] = True
    if len(packed) > k:
        # over budget: farthest-point thinning within the packing
        mind = np.full(n, np.inf)
        packed_set = np.zeros(n, dtype=bool)
        packed_set[packed] = True
        chosen = []
        cur = packed[0]
        for _ in range(k):
            chosen.append(cur)
            packed_set[cur] = False
            _min_dist_update(grid, cells, mind, cells[cur, 0], cells[cur, 1])
            live = np.where(packed_set, mind, -np.inf)
            cur = int(np.argmax(live))
        return cells[np.sort(chosen)]
    chosen = list(packed)
    mind = np.full(n, np.inf)
    for idx in chosen:
        _min_dist_update(grid, cells, mind, cells[idx, 0], cells[idx, 1])
    taken = np.zeros(n, dtype=bool)
    taken[chosen] = True
    while len(chosen) < k:
        live = np.where(taken, -np.inf, mind)
        cur = int(np.argmax(live))
        chosen.append(cur)
        taken[cur] = True
        _min_dist_update(grid, cells, mind, cells[cur, 0], cells[cur, 1])
    return cells[np.sort(chosen)]


@dataclasses.dataclass
class Roadmap:
    buffer: SearchBuffer
    maxdist: float
    edge_weights: np.ndarray  # raw aggregated distances, before pruning
    apsp: np.ndarray
    successor: np.ndarray

    @property
    def grid(self) -> GridMap:
        return self.buffer.grid


def floyd_warshall(weights: np.ndarray):
    """All-pairs shortest paths with successor tracking (see kernels)."""
    return kernels.floyd_warshall(weights)


def pairwise_distances(
    buffer: SearchBuffer, ens: ValueEnsemble, chunk: int = 200_000
) -> np.ndarray:
    """Aggregated predicted distance for every ordered node pair, evaluated
    in batched chunks; diagonal forced to 0 (self-edges are free)."""
    n = len(buffer)
    xs = buffer.nodes[:, 0].astype(np.int64)
    ys = buffer.nodes[:, 1].astype(np.int64)
    out = np.empty(n * n, dtype=np.float64)
    si, gi = np.divmod(np.arange(n * n), n)
    for lo in range(0, n * n, chunk):
        hi = min(lo + chunk, n * n)
        out[lo:hi] = ens.aggregate_distances(
            xs[si[lo:hi]], ys[si[lo:hi]], xs[gi[lo:hi]], ys[gi[lo:hi]]
        )
    raw = out.reshape(n, n)
    np.fill_diagonal(raw, 0.0)
    return raw


def _assemble(buffer: SearchBuffer, maxdist: float, raw: np.ndarray) -> Roadmap:
    w = np.where(raw < maxdist, raw, np.inf)
    np.fill_diagonal(w, 0.0)
    apsp, succ = floyd_warshall(w)
    return Roadmap(buffer, float(maxdist), raw, apsp, succ)


def build_roadmap(buffer: SearchBuffer, ens: ValueEnsemble, maxdist: float) -> Roadmap:
    if len(buffer) == 0:
        empty = np.zeros((0, 0))
        return Roadmap(buffer, float(maxdist), empty, empty.copy(), np.zeros((0, 0), np.int32))
    return _assemble(buffer, maxdist, pairwise_distances(buffer, ens))


def reprune(rm: Roadmap, maxdist: float) -> Roadmap:
    """New roadmap at a different maxdist reusing the evaluated weights."""
    if len(rm.buffer) == 0:
        return Roadmap(rm.buffer, float(maxdist), rm.edge_weights, rm.apsp, rm.successor)
    return _assemble(rm.buffer, maxdist, rm.edge_weights)


def subset_roadmap(rm: Roadmap, indices: np.ndarray) -> Roadmap:
    """Roadmap over a node subset, reusing the already-evaluated weights."""
    idx = np.asarray(indices, dtype=np.int64)
    sub = SearchBuffer(rm.buffer.grid, rm.buffer.nodes[idx], rm.buffer.source)
    return _assemble(sub, rm.maxdist, rm.edge_weights[np.ix_(idx, idx)])


def _reaches_all(adj: np.ndarray, root: int) -> np.ndarray:
    seen = np.zeros(len(adj), dtype=bool)
    seen[root] = True
    frontier = seen.copy()
    while frontier.any():
        nxt = adj[frontier].any(axis=0) & ~seen
        seen |= nxt
        frontier = nxt
    return seen


def _giant_scc(adj: np.ndarray) -> np.ndarray:
    """Membership mask of the largest strongly connected component.  Probes
    candidate roots in decreasing degree order; any root inside the giant
    component finds all of it, so a handful of probes suffices — but every
    node is tried before giving up, keeping the result exact."""
    n = len(adj)
    degree = adj.sum(axis=0) + adj.sum(axis=1)
    best = np.zeros(n, dtype=bool)
    unseen = np.ones(n, dtype=bool)
    for root in np.argsort(-degree, kind="stable"):
        if not unseen[root]:
            continue
        comp = _reaches_all(adj, root) & _reaches_all(adj.T, root)
        unseen &= ~comp
        if comp.sum() > best.sum():
            best = comp
        if best.sum() >= unseen.sum():  # nothing left can be larger
            break
    return best


def sparsify_indices(rm: Roadmap, k: int) -> np.ndarray:
    """Indices of k nodes to keep so the pruned graph stays strongly
    connected for as long as the budget allows.

    A small node set fails as a roadmap the moment one doorway loses its
    last short edge, so the shrink has to watch connectivity rather than
    spatial spread.  Stray nodes outside the giant strongly connected
    component go first (they cannot serve as waypoints anyway); then
    greedy peeling repeatedly deletes the highest-degree node whose
    removal keeps every survivor reachable from every other (checked on
    the thresholded predicted-weight graph).  Dense clusters thin out
    first; corridor and doorway nodes survive because removing them cuts
    the graph.  When only cut vertices remain the lowest-degree node goes
    instead.  Uses only the predicted weights already cached on the
    roadmap; deterministic, ties break by node index."""
    n = len(rm.buffer)
    if k >= n:
        return np.arange(n)
    adj = (rm.edge_weights < rm.maxdist) & ~np.eye(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    for _ in range(n - k):
        idx = np.flatnonzero(alive)
        sub = adj[np.ix_(idx, idx)]
        degree = sub.sum(axis=0) + sub.sum(axis=1)
        giant = _giant_scc(sub)
        if not giant.all():
            strays = np.flatnonzero(~giant)
            cand = strays[np.argmin(degree[strays], axis=0)]
            alive[idx[cand]] = False
            continue
        removed = False
        for cand in np.argsort(-degree, kind="stable"):
            keep = np.ones(len(idx), dtype=bool)
            keep[cand] = False
            trial = sub[np.ix_(keep, keep)]
            if _reaches_all(trial, 0).all() and _reaches_all(trial.T, 0).all():
                alive[idx[cand]] = False
                removed = True
                break
        if not removed:
            order = np.argsort(-degree, kind="stable")
            alive[idx[order[-1]]] = False
    return np.flatnonzero(alive)


def refresh_cache(rm: Roadmap, ens: ValueEnsemble) -> Roadmap:
    """Re-evaluate weights under current parameters; the old roadmap object
    stays intact for in-flight readers."""
    return build_roadmap(rm.buffer, ens, rm.maxdist)


def reconstruct_path(successor: np.ndarray, u: int, v: int) -> Optional[list[int]]:
    """Node-index chain u..v following the successor matrix; None if v is
    unreachable from u."""
    if successor[u, v] < 0:
        return None
    path = [u]
    cur = u
    limit = successor.shape[0] + 1
    while cur != v:
        cur = int(successor[cur, v])
        path.append(cur)
        if len(path) > limit:
            raise RuntimeError("successor matrix contains a cycle")
    return path


@dataclasses.dataclass
class GoalContext:
    """Per-goal query cache: nodes->goal leg plus the best cached route
    continuation per entry node, so each step costs O(|B|) value calls."""

    goal: State
    d_node_goal: np.ndarray  # pruned nodes->goal distances (inf where >= maxdist)
    route_tail: np.ndarray  # min_v apsp[u, v] + d_node_goal[v], per u
    tail_exit: np.ndarray  # argmin v per u


def goal_context(rm: Roadmap, ens: ValueEnsemble, g: State) -> GoalContext:
    n = len(rm.buffer)
    xs = rm.buffer.nodes[:, 0]
    ys = rm.buffer.nodes[:, 1]
    dg = ens.aggregate_distances(xs, ys, np.full(n, g.x), np.full(n, g.y))
    dg = np.where(dg < rm.maxdist, dg, np.inf)
    cost = rm.apsp + dg[None, :]
    exit_v = np.argmin(cost, axis=1)
    tail = cost[np.arange(n), exit_v]
    return GoalContext(g, dg, tail, exit_v)


def query(
    rm: Roadmap, ens: ValueEnsemble, s: State, ctx: GoalContext
) -> tuple[float, Optional[int], Optional[int], float]:
    """(route_total, entry_node, exit_node, direct) for one start state.
    route_total is inf when no waypoint route exists; direct is the raw
    aggregated s->g distance (unpruned)."""
    direct = ens.aggregate_distance(s, ctx.goal)
    n = len(rm.buffer)
    if n == 0:
        return np.inf, None, None, direct
    xs = rm.buffer.nodes[:, 0]
    ys = rm.buffer.nodes[:, 1]
    ds = ens.aggregate_distances(np.full(n, s.x), np.full(n, s.y), xs, ys)
    ds = np.where(ds < rm.maxdist, ds, np.inf)
    total = ds + ctx.route_tail
    u = int(np.argmin(total))
    if not np.isfinite(total[u]):
        return np.inf, None, None, direct
    return float(total[u]), u, int(ctx.tail_exit[u]), direct


def shortest_path(s: State, g: State, rm: Roadmap, ens: ValueEnsemble):
    """Best start->goal route through the roadmap, compared against going
    direct.  Returns (total, waypoints); waypoints is empty when direct is
    best (or the only option).  Raises NoPathError when no route exists and
    the direct distance is not under maxdist."""
    ctx = goal_context(rm, ens, g) if len(rm.buffer) else GoalContext(g, None, None, None)
    total, u, v, direct = query(rm, ens, s, ctx)
    if direct < rm.maxdist and direct <= total:
        return float(direct), []
    if not np.isfinite(total):
        raise NoPathError(f"no route from {tuple(s)} to {tuple(g)} under maxdist {rm.maxdist}")
    chain = reconstruct_path(rm.successor, u, v)
    return float(total), [State(int(x), int(y)) for x, y in rm.buffer.nodes[chain]]


def dump_roadmap_csv(rm: Roadmap, edges_path, nodes_path):
    """Edge list "u_index,v_index,weight" (unpruned edges only, self-edges
    skipped) and node table "index,x,y"."""
    with open(nodes_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "x", "y"])
        for i, (x, y) in enumerate(rm.buffer.nodes):
            w.writerow([i, int(x), int(y)])
    with open(edges_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["u_index", "v_index", "weight"])
        n = len(rm.buffer)
        for u in range(n):
            for v in range(n):
                if u != v and rm.edge_weights[u, v] < rm.maxdist:
                    w.writerow([u, v, repr(float(rm.edge_weights[u, v]))])
