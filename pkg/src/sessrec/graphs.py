"""The three graph views: per-session transition graph with arrival-count
weights, corpus-wide shortest-path item graph, and batch-level Jaccard
session graph."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

GRAPH_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Current view: per-session directed graph
# ---------------------------------------------------------------------------

@dataclass
class CurrentSessionGraph:
    nodes: list            # unique items, order of first appearance
    alias: list            # position -> node slot
    weights: np.ndarray    # (n, n) raw arrival-count weights, row=source
    adj_in: np.ndarray     # (n, n) row-normalized incoming adjacency
    adj_out: np.ndarray    # (n, n) row-normalized outgoing adjacency

    def edge_set(self):
        """Weighted edges as {(source_item, target_item): weight}."""
        edges = {}
        n = len(self.nodes)
        for i in range(n):
            for j in range(n):
                if self.weights[i, j] > 0:
                    edges[(self.nodes[i], self.nodes[j])] = int(self.weights[i, j])
        return edges


def build_current_graph(session_items):
    """Directed session graph whose edge into an item carries that item's
    cumulative arrival count at the moment of the transition.

    The m-th time an item occurs as a transition target, the incoming edge
    used at that step gets weight m; repeated identical transitions keep the
    maximum. Each direction of the adjacency is then row-normalized.
    """
    if len(session_items) < 1:
        raise ConfigError("session must contain at least one item")
    nodes = []
    slot = {}
    for item in session_items:
        if item not in slot:
            slot[item] = len(nodes)
            nodes.append(item)
    alias = [slot[item] for item in session_items]

    n = len(nodes)
    weights = np.zeros((n, n))
    arrivals = {}
    for src, tgt in zip(session_items, session_items[1:]):
        arrivals[tgt] = arrivals.get(tgt, 0) + 1
        i, j = slot[src], slot[tgt]
        weights[i, j] = max(weights[i, j], arrivals[tgt])

    out_sum = weights.sum(axis=1, keepdims=True)
    in_sum = weights.T.sum(axis=1, keepdims=True)
    adj_out = np.divide(weights, out_sum, out=np.zeros_like(weights), where=out_sum > 0)
    adj_in = np.divide(weights.T, in_sum, out=np.zeros_like(weights), where=in_sum > 0)
    return CurrentSessionGraph(nodes=nodes, alias=alias, weights=weights,
                               adj_in=adj_in, adj_out=adj_out)


# ---------------------------------------------------------------------------
# Global view: co-occurrence counts reweighted by shortest-path cost
# ---------------------------------------------------------------------------

@dataclass
class CooccurrenceGraph:
    """Adjacent-pair co-occurrence counts over the training sessions."""

    n_items: int
    counts: dict                 # (i, j) -> count; i < j when undirected
    window: int = 1
    directed: bool = False

    def adjacency_lists(self):
        adj = {}
        for (i, j), w in self.counts.items():
            adj.setdefault(i, []).append((j, w))
            if not self.directed:
                adj.setdefault(j, []).append((i, w))
        for lst in adj.values():
            lst.sort()
        return adj

    @property
    def max_weight(self):
        return max(self.counts.values()) if self.counts else 0


def build_global_cooccurrence(train_sessions, n_items, directed=False):
    """Accumulate weight 1 per adjacent item pair; self-pairs are skipped."""
    if not train_sessions:
        raise DataError("cannot build a global graph from an empty train split")
    counts = {}
    for session in train_sessions:
        items = session.items if hasattr(session, "items") else session
        for a, b in zip(items, items[1:]):
            if a == b:
                continue
            key = (a, b) if directed or a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    return CooccurrenceGraph(n_items=n_items, counts=counts, directed=directed)


@dataclass
class GlobalItemGraph:
    """Sparse item graph after cost-order truncation and reweighting."""

    n_items: int
    k_sp: object                           # int cap or None for uncapped
    window: int
    directed: bool
    max_raw_weight: int
    max_cost: int
    edges: dict = field(default_factory=dict)   # source -> [(target, weight)]

    def edge_count(self):
        return sum(len(v) for v in self.edges.values())

    def cost_of(self, source, target):
        """Invert the stored weight back to the shortest-path cost."""
        for t, w in self.edges.get(source, ()):
            if t == target:
                return self.max_cost + 1 - w
        return None


def shortest_path_costs(adj, source, cap=None):
    """Single-source shortest-path costs, expanded in cost order.

    Returns at most ``cap`` cheapest reachable targets (the source itself is
    excluded). Costs are exact integers; ties expand by lower node index.
    """
    settled = set()
    best = {source: 0}
    heap = [(0, source)]
    targets = {}
    while heap:
        d, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        if u != source:
            targets[u] = d
            if cap is not None and len(targets) >= cap:
                break
        for v, c in adj.get(u, ()):
            nd = d + c
            if v not in settled and nd < best.get(v, float("inf")):
                best[v] = nd
                heapq.heappush(heap, (nd, v))
    return targets


def reweight_shortest_path(cooccurrence, k_sp=50):
    """Convert co-occurrence counts into the shortest-path item graph.

    Edge weights w become costs max(w) - w; per-source truncated shortest
    paths give the minimum-cost matrix, and final weights invert retained
    costs so the cheapest pair carries the largest weight and the costliest
    retained pair carries weight 1.
    """
    if not cooccurrence.counts:
        return GlobalItemGraph(n_items=cooccurrence.n_items, k_sp=k_sp,
                               window=cooccurrence.window,
                               directed=cooccurrence.directed,
                               max_raw_weight=0, max_cost=0)

    max_w = cooccurrence.max_weight
    cost_adj = {}
    for (i, j), w in cooccurrence.counts.items():
        cost = max_w - w
        cost_adj.setdefault(i, []).append((j, cost))
        if not cooccurrence.directed:
            cost_adj.setdefault(j, []).append((i, cost))
    for lst in cost_adj.values():
        lst.sort()

    per_source = {}
    for source in sorted(cost_adj):
        targets = shortest_path_costs(cost_adj, source, cap=k_sp)
        if targets:
            per_source[source] = targets

    max_cost = max((c for targets in per_source.values() for c in targets.values()),
                   default=0)
    edges = {}
    for source, targets in per_source.items():
        edges[source] = sorted(
            (target, max_cost + 1 - c) for target, c in targets.items()
        )
    return GlobalItemGraph(n_items=cooccurrence.n_items, k_sp=k_sp,
                           window=cooccurrence.window,
                           directed=cooccurrence.directed,
                           max_raw_weight=max_w, max_cost=max_cost, edges=edges)


def save_global_graph(graph, path):
    """Line-delimited "source target weight" triples behind a metadata header."""
    cap = -1 if graph.k_sp is None else graph.k_sp
    with open(path, "w") as f:
        f.write(f"#version={GRAPH_FORMAT_VERSION} n_items={graph.n_items} "
                f"k_sp={cap} window={graph.window} "
                f"directed={int(graph.directed)} "
                f"max_raw_weight={graph.max_raw_weight} "
                f"max_cost={graph.max_cost}\n")
        for source in sorted(graph.edges):
            for target, weight in graph.edges[source]:
                f.write(f"{source} {target} {weight}\n")


def load_global_graph(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{path} is not a serialized item graph")
    meta = dict(kv.split("=") for kv in lines[0][1:].split())
    if int(meta["version"]) != GRAPH_FORMAT_VERSION:
        raise DataError(f"unsupported graph format version {meta['version']}")
    cap = int(meta["k_sp"])
    graph = GlobalItemGraph(
        n_items=int(meta["n_items"]),
        k_sp=None if cap < 0 else cap,
        window=int(meta["window"]),
        directed=bool(int(meta["directed"])),
        max_raw_weight=int(meta["max_raw_weight"]),
        max_cost=int(meta["max_cost"]),
    )
    for line in lines[1:]:
        s_text, t_text, w_text = line.split()
        graph.edges.setdefault(int(s_text), []).append((int(t_text), int(w_text)))
    return graph


# ---------------------------------------------------------------------------
# Local view: batch-level Jaccard session graph
# ---------------------------------------------------------------------------

@dataclass
class LocalSessionGraph:
    """Per-session top-k neighbors within a batch, by Jaccard similarity."""

    neighbors: list    # per session: list[int] batch indices
    weights: list      # per session: list[float] matching Jaccard weights

    @classmethod
    def empty(cls, batch_size):
        return cls(neighbors=[[] for _ in range(batch_size)],
                   weights=[[] for _ in range(batch_size)])


def jaccard(set_a, set_b):
    if not set_a and not set_b:
        return 0.0
    inter = len(set_a & set_b)
    return inter / (len(set_a) + len(set_b) - inter)


def build_local_session_graph(item_sets, k):
    """Top-k positive-Jaccard neighbors for every session in the batch.

    Neighbor lists are sorted by weight descending with ties broken by lower
    batch index; a session never neighbors itself.
    """
    batch = len(item_sets)
    if batch < 2:
        raise ConfigError("local session graph needs a batch of at least 2")
    if k < 1:
        raise ConfigError("k must be >= 1")

    all_items = sorted(set().union(*item_sets))
    col = {item: j for j, item in enumerate(all_items)}
    members = np.zeros((batch, len(all_items)))
    for row, items in enumerate(item_sets):
        for item in items:
            members[row, col[item]] = 1.0

    inter = members @ members.T
    sizes = members.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / union, 0.0)
    np.fill_diagonal(sim, 0.0)

    neighbors, weights = [], []
    for i in range(batch):
        row = sim[i]
        candidates = np.flatnonzero(row > 0)
        # sort by similarity descending, then batch index ascending
        order = candidates[np.lexsort((candidates, -row[candidates]))][:k]
        neighbors.append([int(j) for j in order])
        weights.append([float(row[j]) for j in order])
    return LocalSessionGraph(neighbors=neighbors, weights=weights)
