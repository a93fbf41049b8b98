import itertools
import random

import pytest

from p2cir.graph import (
    CDFG,
    DFG,
    Edge,
    EdgeFeatures,
    IrGraph,
    Node,
    NodeFeatures,
    compute_stats,
    detect_back_edges,
    disjoint_union,
    forward_topo_order,
    from_json,
    to_json,
    validate,
)
from p2cir.vocab import EDGE_DATA

from conftest import make_graph, op_node, random_dag


# --- validate ----------------------------------------------------------------

def test_minimal_acyclic_dfg_is_valid():
    g = make_graph(DFG, 2, [(0, 1)])
    assert validate(g) == []


def test_smallest_cycle_in_dfg_reported():
    g = make_graph(DFG, 2, [(0, 1), (1, 0)])
    codes = {v.code for v in validate(g)}
    assert "dfg-cyclic" in codes


def test_back_edge_breaks_cdfg_cycle():
    g = make_graph(CDFG, 3, [(0, 1), (1, 2), (2, 0, True)])
    assert validate(g) == []


def test_cdfg_cycle_without_back_flag_reported():
    g = make_graph(CDFG, 3, [(0, 1), (1, 2), (2, 0)])
    codes = {v.code for v in validate(g)}
    assert "cdfg-cyclic" in codes


def test_unflagged_self_loop_reported():
    g = make_graph(DFG, 2, [(0, 0)])
    codes = {v.code for v in validate(g)}
    assert "self-loop" in codes


def test_flagged_self_loop_allowed_in_cdfg_only():
    cdfg = make_graph(CDFG, 1, [(0, 0, True)])
    assert validate(cdfg) == []
    dfg = make_graph(DFG, 1, [(0, 0, True)])
    assert {v.code for v in validate(dfg)} >= {"self-loop", "dfg-back-edge"}


def test_edge_endpoint_out_of_range():
    g = make_graph(DFG, 2, [(0, 5)])
    codes = {v.code for v in validate(g)}
    assert "edge-endpoint" in codes


def test_non_dense_node_ids_reported():
    nodes = [op_node(0), op_node(2)]
    g = IrGraph.build("g", DFG, nodes, [])
    codes = {v.code for v in validate(g)}
    assert "node-id-order" in codes


def test_block_node_with_concrete_bitwidth_reported():
    bad = Node(0, NodeFeatures(category="block", bitwidth=32))
    g = IrGraph.build("g", CDFG, [bad], [])
    codes = {v.code for v in validate(g)}
    assert "block-bitwidth" in codes


def test_validate_does_not_mutate():
    g = make_graph(DFG, 3, [(0, 1), (1, 2)])
    before = to_json(g)
    validate(g)
    assert to_json(g) == before


def _brute_force_valid(g: IrGraph) -> bool:
    """Direct re-statement of the type invariants, independent of validate()."""
    n = len(g.nodes)
    if any(nd.id != i for i, nd in enumerate(g.nodes)):
        return False
    for e in g.edges:
        if not (0 <= e.src < n and 0 <= e.dst < n):
            return False
        if e.src == e.dst and not (g.kind == CDFG and e.features.is_back_edge):
            return False
        if g.kind == DFG and e.features.is_back_edge:
            return False
    live = [(e.src, e.dst) for e in g.edges
            if not (g.kind == CDFG and e.features.is_back_edge) and e.src != e.dst]
    # Cycle check by exhaustive walk: a cycle exists iff some node reaches itself.
    reach = {v: {w for (u, w) in live if u == v} for v in range(n)}
    for _ in range(n):
        for v in range(n):
            reach[v] |= {x for w in reach[v] for x in reach[w]}
    return all(v not in reach[v] for v in range(n))


def test_validate_matches_brute_force_exhaustively_on_3_nodes():
    pairs = [(a, b) for a in range(3) for b in range(3) if a != b]
    for kind in (DFG, CDFG):
        for r in range(len(pairs) + 1):
            for chosen in itertools.combinations(pairs, r):
                for flags in itertools.product([False, True], repeat=r):
                    g = make_graph(kind, 3, [(s, d, f) for (s, d), f in zip(chosen, flags)])
                    assert (validate(g) == []) == _brute_force_valid(g), (kind, chosen, flags)


def test_validate_matches_brute_force_random_up_to_8_nodes(rng):
    for _ in range(400):
        n = rng.randint(1, 8)
        kind = rng.choice([DFG, CDFG])
        edges = []
        for _ in range(rng.randint(0, 12)):
            edges.append((rng.randrange(n), rng.randrange(n), rng.random() < 0.3))
        g = make_graph(kind, n, edges)
        assert (validate(g) == []) == _brute_force_valid(g)


# --- detect_back_edges -------------------------------------------------------

def test_single_cycle_back_edge():
    g = make_graph(CDFG, 2, [(0, 1), (1, 0)])
    assert detect_back_edges(g, [0]) == {1}


def test_acyclic_diamond_has_no_back_edges():
    g = make_graph(DFG, 4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    assert detect_back_edges(g, [0]) == set()


def test_nested_cycles_back_edges_enter_root():
    # a->b, b->a and a->b->c->a share node a; DFS from a finds exactly the
    # two edges entering a on the stack.
    g = make_graph(CDFG, 3, [(0, 1), (1, 0), (1, 2), (2, 0)])
    back = detect_back_edges(g, [0])
    assert back == {1, 3}
    assert all(g.edges[i].dst == 0 for i in back)


def test_back_edges_deterministic_and_idempotent(rng):
    for _ in range(50):
        n = rng.randint(2, 9)
        edges = [(rng.randrange(n), rng.randrange(n)) for _ in range(rng.randint(1, 14))]
        edges = [e for e in edges if e[0] != e[1]]
        g = make_graph(CDFG, n, edges)
        first = detect_back_edges(g, [0])
        assert detect_back_edges(g, [0]) == first


def test_back_edge_removal_gives_topological_order(rng):
    for _ in range(100):
        n = rng.randint(2, 9)
        edges = [(rng.randrange(n), rng.randrange(n)) for _ in range(rng.randint(1, 14))]
        g0 = make_graph(CDFG, n, [e for e in edges if e[0] != e[1]])
        back = detect_back_edges(g0, [0])
        flagged = make_graph(CDFG, n, [(e.src, e.dst, i in back)
                                       for i, e in enumerate(g0.edges)])
        assert forward_topo_order(flagged) is not None


def test_unreachable_nodes_become_extra_roots():
    # Component {2,3} unreachable from root 0.
    g = make_graph(CDFG, 4, [(0, 1), (2, 3), (3, 2)])
    back = detect_back_edges(g, [0])
    assert back == {2}  # 3->2 closes the cycle when 2 is taken as extra root


def test_empty_roots_rejected():
    g = make_graph(DFG, 2, [(0, 1)])
    with pytest.raises(ValueError):
        detect_back_edges(g, [])


# --- compute_stats -----------------------------------------------------------

def test_chain_stats():
    g = make_graph(DFG, 5, [(i, i + 1) for i in range(4)])
    st = compute_stats(g)
    assert (st.num_nodes, st.num_edges, st.num_back_edges, st.num_loops,
            st.max_loop_length) == (5, 4, 0, 0, 0)
    assert st.degree_histogram == {1: 2, 2: 3}
    assert not st.truncated


def test_three_cycle_loop_length():
    g = make_graph(CDFG, 3, [(0, 1), (1, 2), (2, 0, True)])
    st = compute_stats(g)
    assert st.num_loops == 1
    assert st.max_loop_length == 3


def test_stats_compose_over_disjoint_union():
    a = make_graph(CDFG, 3, [(0, 1), (1, 2), (2, 0, True)])
    b = make_graph(CDFG, 5, [(i, i + 1) for i in range(4)])
    u = disjoint_union(a, b)
    sa, sb, su = compute_stats(a), compute_stats(b), compute_stats(u)
    assert su.num_nodes == sa.num_nodes + sb.num_nodes
    assert su.num_edges == sa.num_edges + sb.num_edges
    assert su.num_back_edges == sa.num_back_edges + sb.num_back_edges
    assert su.num_loops == sa.num_loops + sb.num_loops
    assert su.max_loop_length == max(sa.max_loop_length, sb.max_loop_length)
    merged = {}
    for d, c in list(sa.degree_histogram.items()) + list(sb.degree_histogram.items()):
        merged[d] = merged.get(d, 0) + c
    assert su.degree_histogram == merged


def test_longest_loop_picks_longer_arm():
    # Back edge 4->0; two return paths 0->4: direct and through 1,2,3.
    g = make_graph(CDFG, 5,
                   [(0, 4), (0, 1), (1, 2), (2, 3), (3, 4), (4, 0, True)])
    st = compute_stats(g)
    assert st.max_loop_length == 5


def test_loop_search_cap_sets_truncated(monkeypatch):
    import p2cir.graph as graph_mod
    monkeypatch.setattr(graph_mod, "LOOP_SEARCH_CAP", 2)
    g = make_graph(CDFG, 5,
                   [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (4, 0, True)])
    st = graph_mod.compute_stats(g)
    assert st.truncated


def test_self_back_edge_loop_length_one():
    g = make_graph(CDFG, 2, [(0, 1), (1, 1, True)])
    st = compute_stats(g)
    assert st.num_loops == 1
    assert st.max_loop_length == 1


# --- disjoint_union ----------------------------------------------------------

def test_union_with_empty_is_identity_up_to_name():
    g = make_graph(DFG, 3, [(0, 1), (1, 2)])
    empty = IrGraph.build("e", DFG, [], [])
    u = disjoint_union(g, empty)
    assert u.nodes == g.nodes and u.edges == g.edges


def test_union_counts_add():
    a = random_dag(random.Random(1))
    b = random_dag(random.Random(2))
    u = disjoint_union(a, b)
    assert len(u.nodes) == len(a.nodes) + len(b.nodes)
    assert len(u.edges) == len(a.edges) + len(b.edges)


def test_union_of_valid_graphs_is_valid(rng):
    for _ in range(30):
        a, b = random_dag(rng), random_dag(rng)
        assert validate(disjoint_union(a, b)) == []


def test_union_kind_mismatch_rejected():
    a = make_graph(DFG, 1, [])
    b = make_graph(CDFG, 1, [])
    with pytest.raises(ValueError):
        disjoint_union(a, b)


# --- JSON round trip ---------------------------------------------------------

def test_json_round_trip_bit_exact(rng):
    for _ in range(50):
        g = random_dag(rng)
        text = to_json(g)
        g2 = from_json(text)
        assert g2 == g
        assert to_json(g2) == text


def test_json_holds_schema_fields():
    import json

    g = make_graph(CDFG, 2, [(0, 1, True)])
    d = json.loads(to_json(g))
    assert set(d) == {"name", "kind", "nodes", "edges"}
    assert set(d["nodes"][0]) == {"id", "category", "bitwidth", "opcode_category",
                                  "opcode", "is_start_of_path", "is_lcd",
                                  "cluster_group"}
    assert set(d["edges"][0]) == {"src", "dst", "edge_type", "is_back_edge"}


def test_node_features_oov_coerces_to_misc():
    f = NodeFeatures.create(category="weird", bitwidth=999, opcode="frobnicate",
                            opcode_category="nope", is_start_of_path=7,
                            is_lcd="x", cluster_group=1 << 20)
    assert f == NodeFeatures()
