"""IR graph data model: typed nodes and edges, validation and graph statistics.

Graphs are immutable value objects. DFGs are acyclic dataflow graphs built
from single basic blocks; CDFGs add block nodes and control edges and may
contain cycles, but removing the edges flagged as back edges must always
leave an acyclic graph. All analyses here are pure functions.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable

from . import vocab
from .vocab import MISC

DFG = "DFG"
CDFG = "CDFG"

# Cap on states expanded per back edge while searching for the longest
# loop body; beyond this the reported loop length is a lower bound.
LOOP_SEARCH_CAP = 10_000

_CATEGORIES = (MISC, vocab.CATEGORY_OPERATION, vocab.CATEGORY_BLOCK, vocab.CATEGORY_PORT)
_EDGE_TYPES = (vocab.EDGE_MISC, vocab.EDGE_DATA, vocab.EDGE_CONTROL, vocab.EDGE_MEMORY_ORDER)


@dataclass(frozen=True)
class NodeFeatures:
    """The seven-field node feature record.

    Integer-valued fields additionally admit the string ``"misc"``; block
    nodes always carry a misc bitwidth.
    """

    category: str = MISC
    bitwidth: int | str = MISC
    opcode_category: str = MISC
    opcode: str = MISC
    is_start_of_path: int | str = MISC
    is_lcd: int | str = MISC
    cluster_group: int | str = MISC

    @classmethod
    def create(cls, category=MISC, bitwidth=MISC, opcode_category=MISC,
               opcode=MISC, is_start_of_path=MISC, is_lcd=MISC,
               cluster_group=MISC) -> "NodeFeatures":
        """Build features, coercing anything out of vocabulary to misc."""
        if category not in _CATEGORIES:
            category = MISC
        if not (isinstance(bitwidth, int) and 0 <= bitwidth <= 256):
            bitwidth = MISC
        opcode = vocab.known_opcode(opcode) if isinstance(opcode, str) else MISC
        if opcode_category not in ("binary_unary", "bitwise", "memory",
                                   "control", "conversion"):
            opcode_category = MISC
        if is_start_of_path not in (0, 1):
            is_start_of_path = MISC
        if is_lcd not in (0, 1):
            is_lcd = MISC
        if not (isinstance(cluster_group, int) and -1 <= cluster_group <= 256):
            cluster_group = MISC
        return cls(category, bitwidth, opcode_category, opcode,
                   is_start_of_path, is_lcd, cluster_group)


@dataclass(frozen=True)
class Node:
    id: int
    features: NodeFeatures


@dataclass(frozen=True)
class EdgeFeatures:
    edge_type: int = vocab.EDGE_MISC
    is_back_edge: bool = False


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    features: EdgeFeatures = field(default_factory=EdgeFeatures)


@dataclass(frozen=True)
class IrGraph:
    """Directed, possibly cyclic graph over typed nodes and edges."""

    name: str
    kind: str
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    @classmethod
    def build(cls, name: str, kind: str, nodes: Iterable[Node],
              edges: Iterable[Edge]) -> "IrGraph":
        return cls(name, kind, tuple(nodes), tuple(edges))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def out_adjacency(self) -> list[list[tuple[int, int]]]:
        """Per-node list of (edge_id, dst), in edge order."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
        for i, e in enumerate(self.edges):
            if 0 <= e.src < len(self.nodes):
                adj[e.src].append((i, e.dst))
        return adj


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    node_ids: tuple[int, ...] = ()
    edge_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_edges: int
    num_back_edges: int
    num_loops: int
    max_loop_length: int
    degree_histogram: dict[int, int]
    truncated: bool = False


def _topo_order(num_nodes: int, edges: Iterable[tuple[int, int]]) -> list[int] | None:
    """Kahn topological order, or None if the edge set is cyclic."""
    indeg = [0] * num_nodes
    out: list[list[int]] = [[] for _ in range(num_nodes)]
    for src, dst in edges:
        out[src].append(dst)
        indeg[dst] += 1
    ready = [v for v in range(num_nodes) if indeg[v] == 0]
    order: list[int] = []
    while ready:
        v = ready.pop()
        order.append(v)
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    return order if len(order) == num_nodes else None


def forward_topo_order(g: IrGraph) -> list[int] | None:
    """Topological order of the graph with back edges removed."""
    fwd = [(e.src, e.dst) for e in g.edges if not e.features.is_back_edge]
    return _topo_order(g.num_nodes, fwd)


def validate(g: IrGraph) -> list[Violation]:
    """Check every structural invariant; an empty report means valid."""
    out: list[Violation] = []
    n = g.num_nodes

    for i, node in enumerate(g.nodes):
        if node.id != i:
            out.append(Violation("node-id-order",
                                 f"node at position {i} has id {node.id}; ids must be dense 0..n-1",
                                 node_ids=(node.id,)))
        f = node.features
        coerced = NodeFeatures.create(f.category, f.bitwidth, f.opcode_category,
                                      f.opcode, f.is_start_of_path, f.is_lcd,
                                      f.cluster_group)
        if coerced != f:
            out.append(Violation("feature-domain",
                                 f"node {node.id} carries out-of-domain feature values",
                                 node_ids=(node.id,)))
        if f.category == vocab.CATEGORY_BLOCK and f.bitwidth != MISC:
            out.append(Violation("block-bitwidth",
                                 f"block node {node.id} must have misc bitwidth",
                                 node_ids=(node.id,)))

    endpoint_bad = set()
    for i, e in enumerate(g.edges):
        if not (0 <= e.src < n and 0 <= e.dst < n):
            out.append(Violation("edge-endpoint",
                                 f"edge {i} references node outside 0..{n - 1}",
                                 edge_ids=(i,)))
            endpoint_bad.add(i)
            continue
        if e.src == e.dst and not (g.kind == CDFG and e.features.is_back_edge):
            # A self edge is representable only as a CDFG back edge (a block
            # that branches to itself); anywhere else it is an illegal cycle.
            out.append(Violation("self-loop", f"edge {i} is a self loop",
                                 edge_ids=(i,)))
        if e.features.edge_type not in _EDGE_TYPES:
            out.append(Violation("feature-domain",
                                 f"edge {i} has unknown edge_type {e.features.edge_type}",
                                 edge_ids=(i,)))
        if g.kind == DFG and e.features.is_back_edge:
            out.append(Violation("dfg-back-edge",
                                 f"DFG edge {i} is flagged as a back edge",
                                 edge_ids=(i,)))

    if g.kind not in (DFG, CDFG):
        out.append(Violation("kind", f"unknown graph kind {g.kind!r}"))
        return out

    usable = [(e.src, e.dst) for i, e in enumerate(g.edges)
              if i not in endpoint_bad and e.src != e.dst
              and not (g.kind == CDFG and e.features.is_back_edge)]
    if _topo_order(n, usable) is None:
        if g.kind == DFG:
            out.append(Violation("dfg-cyclic", "DFG contains a cycle"))
        else:
            out.append(Violation("cdfg-cyclic",
                                 "CDFG is cyclic even after removing back edges"))
    return out


def detect_back_edges(g: IrGraph, roots: list[int]) -> set[int]:
    """Edge ids whose target sits on the DFS stack when the edge is explored.

    The search starts from the given roots in ascending id order; nodes left
    unreached are treated as additional roots, also in id order, so the
    result is deterministic for a fixed graph.
    """
    if not roots:
        raise ValueError("detect_back_edges requires at least one root")
    n = g.num_nodes
    adj = g.out_adjacency()
    color = [0] * n  # 0 = unvisited, 1 = on stack, 2 = finished
    back: set[int] = set()

    def dfs(root: int) -> None:
        stack: list[tuple[int, int]] = [(root, 0)]
        color[root] = 1
        while stack:
            v, i = stack[-1]
            if i < len(adj[v]):
                stack[-1] = (v, i + 1)
                edge_id, w = adj[v][i]
                if color[w] == 1:
                    back.add(edge_id)
                elif color[w] == 0:
                    color[w] = 1
                    stack.append((w, 0))
            else:
                color[v] = 2
                stack.pop()

    for r in sorted(set(roots)):
        if not (0 <= r < n):
            raise ValueError(f"root {r} is not a node id")
        if color[r] == 0:
            dfs(r)
    for v in range(n):
        if color[v] == 0:
            dfs(v)
    return back


def _longest_simple_path(adj: list[list[tuple[int, int]]], start: int,
                         goal: int, skip_edges: set[int],
                         budget: int) -> tuple[int, bool]:
    """Longest simple path start -> goal in edges, bounded by a state budget.

    Returns (length, truncated); length is -1 when no path exists.
    """
    best = -1
    expanded = 0
    truncated = False
    on_path = [False] * len(adj)
    # Stack entries: (node, next-edge-index, depth).
    stack: list[tuple[int, int, int]] = [(start, 0, 0)]
    on_path[start] = True
    while stack:
        v, i, depth = stack[-1]
        if v == goal:
            # A simple path cannot leave and re-enter the goal.
            best = max(best, depth)
            on_path[v] = False
            stack.pop()
            continue
        if i < len(adj[v]):
            stack[-1] = (v, i + 1, depth)
            edge_id, w = adj[v][i]
            if edge_id in skip_edges or on_path[w]:
                continue
            expanded += 1
            if expanded > budget:
                truncated = True
                break
            on_path[w] = True
            stack.append((w, 0, depth + 1))
        else:
            on_path[v] = False
            stack.pop()
    return best, truncated


def compute_stats(g: IrGraph) -> GraphStats:
    """Node/edge counts, loop counts and loop lengths, degree histogram.

    A loop is counted per back edge; its length is the node count of the
    longest elementary cycle the back edge closes, i.e. the longest simple
    path from the back edge's target to its source over non-back edges,
    plus one. The path search is capped per back edge (LOOP_SEARCH_CAP);
    hitting the cap sets ``truncated`` and the length becomes a lower bound.
    """
    degree = Counter()
    deg = [0] * g.num_nodes
    for e in g.edges:
        deg[e.src] += 1
        deg[e.dst] += 1
    for d in deg:
        degree[d] += 1

    back_ids = {i for i, e in enumerate(g.edges) if e.features.is_back_edge}
    adj = g.out_adjacency()
    max_len = 0
    truncated = False
    for i in sorted(back_ids):
        e = g.edges[i]
        length, trunc = _longest_simple_path(adj, e.dst, e.src, back_ids,
                                             LOOP_SEARCH_CAP)
        truncated = truncated or trunc
        if length >= 0:
            max_len = max(max_len, length + 1)
    return GraphStats(
        num_nodes=g.num_nodes,
        num_edges=g.num_edges,
        num_back_edges=len(back_ids),
        num_loops=len(back_ids),
        max_loop_length=max_len,
        degree_histogram=dict(sorted(degree.items())),
        truncated=truncated,
    )


def disjoint_union(g1: IrGraph, g2: IrGraph) -> IrGraph:
    """Concatenate two graphs of the same kind; g2's ids are shifted after g1."""
    if g1.kind != g2.kind:
        raise ValueError(f"cannot union {g1.kind} with {g2.kind}")
    shift = g1.num_nodes
    nodes = list(g1.nodes) + [replace(nd, id=nd.id + shift) for nd in g2.nodes]
    edges = list(g1.edges) + [replace(e, src=e.src + shift, dst=e.dst + shift)
                              for e in g2.edges]
    return IrGraph.build(f"{g1.name}+{g2.name}", g1.kind, nodes, edges)


# --- canonical JSON serialization ------------------------------------------

def to_json_dict(g: IrGraph) -> dict:
    return {
        "name": g.name,
        "kind": g.kind,
        "nodes": [
            {
                "id": nd.id,
                "category": nd.features.category,
                "bitwidth": nd.features.bitwidth,
                "opcode_category": nd.features.opcode_category,
                "opcode": nd.features.opcode,
                "is_start_of_path": nd.features.is_start_of_path,
                "is_lcd": nd.features.is_lcd,
                "cluster_group": nd.features.cluster_group,
            }
            for nd in g.nodes
        ],
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "edge_type": e.features.edge_type,
                "is_back_edge": e.features.is_back_edge,
            }
            for e in g.edges
        ],
    }


def to_json(g: IrGraph) -> str:
    """Canonical serialization: sorted keys, compact separators."""
    return json.dumps(to_json_dict(g), sort_keys=True, separators=(",", ":")) + "\n"


def from_json_dict(d: dict) -> IrGraph:
    nodes = [
        Node(nd["id"], NodeFeatures(
            category=nd["category"],
            bitwidth=nd["bitwidth"],
            opcode_category=nd["opcode_category"],
            opcode=nd["opcode"],
            is_start_of_path=nd["is_start_of_path"],
            is_lcd=nd["is_lcd"],
            cluster_group=nd["cluster_group"],
        ))
        for nd in d["nodes"]
    ]
    edges = [
        Edge(e["src"], e["dst"], EdgeFeatures(e["edge_type"], bool(e["is_back_edge"])))
        for e in d["edges"]
    ]
    return IrGraph.build(d["name"], d["kind"], nodes, edges)


def from_json(text: str) -> IrGraph:
    return from_json_dict(json.loads(text))
