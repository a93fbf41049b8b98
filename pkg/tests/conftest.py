import random

import pytest

from p2cir.graph import CDFG, DFG, Edge, EdgeFeatures, IrGraph, Node, NodeFeatures
from p2cir.vocab import EDGE_CONTROL, EDGE_DATA


def op_node(i, opcode="add", bitwidth=8, cluster=0):
    return Node(i, NodeFeatures.create(
        category="operation", bitwidth=bitwidth, opcode=opcode,
        opcode_category={"add": "binary_unary", "mul": "binary_unary",
                         "load": "memory"}.get(opcode, "misc"),
        is_start_of_path=0, is_lcd=0, cluster_group=cluster))


def make_graph(kind, n, edge_spec, name="g"):
    """edge_spec: list of (src, dst) or (src, dst, is_back)."""
    nodes = [op_node(i) for i in range(n)]
    edges = []
    for spec in edge_spec:
        src, dst = spec[0], spec[1]
        back = bool(spec[2]) if len(spec) > 2 else False
        etype = EDGE_CONTROL if back else EDGE_DATA
        edges.append(Edge(src, dst, EdgeFeatures(etype, back)))
    return IrGraph.build(name, kind, nodes, edges)


def random_dag(rng: random.Random, n_max=10, kind=DFG, name="rand"):
    """Random DAG over a topological node order, valid by construction."""
    n = rng.randint(1, n_max)
    edges = []
    for dst in range(1, n):
        for src in range(dst):
            if rng.random() < 0.35:
                edges.append((src, dst))
    return make_graph(kind, n, edges, name=name)


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
