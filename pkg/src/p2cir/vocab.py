"""Feature vocabularies shared by the graph model, the featurizer and the GNNs.

The vocabulary file ``data/vocab.json`` is normative: it pins the index of
every categorical value, and its hash is recorded in checkpoints so a model
can never be applied to features produced under a different vocabulary.
Index 0 of every vocabulary is ``misc`` so out-of-vocabulary values stay
representable instead of failing.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from importlib import resources

MISC = "misc"

# Node categories.
CATEGORY_OPERATION = "operation"
CATEGORY_BLOCK = "block"
CATEGORY_PORT = "port"

# Integer edge types (misc deliberately 0).
EDGE_MISC = 0
EDGE_DATA = 1
EDGE_CONTROL = 2
EDGE_MEMORY_ORDER = 3

# Opcode -> opcode category. Anything absent maps to misc.
OPCODE_CATEGORY = {
    "add": "binary_unary", "sub": "binary_unary", "mul": "binary_unary",
    "udiv": "binary_unary", "sdiv": "binary_unary", "icmp": "binary_unary",
    "select": "binary_unary", "mux": "binary_unary", "phi": "binary_unary",
    "and": "bitwise", "or": "bitwise", "xor": "bitwise",
    "shl": "bitwise", "lshr": "bitwise", "ashr": "bitwise",
    "load": "memory", "store": "memory", "alloca": "memory",
    "getelementptr": "memory",
    "br": "control", "ret": "control", "call": "control",
    "zext": "conversion", "sext": "conversion", "trunc": "conversion",
}

NODE_FEATURE_NAMES = (
    "category", "bitwidth", "opcode_category", "opcode",
    "is_start_of_path", "is_lcd", "cluster_group",
)


@lru_cache(maxsize=1)
def _raw() -> dict:
    text = resources.files("p2cir.data").joinpath("vocab.json").read_text("utf-8")
    return json.loads(text)


@lru_cache(maxsize=1)
def vocab_hash() -> str:
    """sha256 over the canonical form of the vocabulary file."""
    canon = json.dumps(_raw(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@lru_cache(maxsize=1)
def _index_maps() -> dict:
    raw = _raw()
    node = raw["node"]
    return {
        "category": {v: i for i, v in enumerate(node["category"])},
        "bitwidth": {v: i for i, v in enumerate(node["bitwidth_buckets"])},
        "opcode_category": {v: i for i, v in enumerate(node["opcode_category"])},
        "opcode": {v: i for i, v in enumerate(node["opcode"])},
        "is_start_of_path": {v: i for i, v in enumerate(node["is_start_of_path"])},
        "is_lcd": {v: i for i, v in enumerate(node["is_lcd"])},
        "edge_type": {v: i for i, v in enumerate(raw["edge"]["edge_type"])},
    }


def opcodes() -> tuple[str, ...]:
    return tuple(_raw()["node"]["opcode"])


def known_opcode(token: str) -> str:
    """Map an arbitrary opcode token into the fixed vocabulary."""
    return token if token in _index_maps()["opcode"] else MISC


def category_index(value) -> int:
    return _index_maps()["category"].get(value, 0)


def bitwidth_index(value) -> int:
    m = _index_maps()["bitwidth"]
    if value in m:
        return m[value]
    if isinstance(value, int) and 0 <= value <= 256:
        return m["other"]
    return 0


def opcode_index(value) -> int:
    return _index_maps()["opcode"].get(value, 0)


def opcode_category_index(value) -> int:
    return _index_maps()["opcode_category"].get(value, 0)


def ternary_index(value) -> int:
    # Shared encoding of the is_start_of_path / is_lcd ternaries.
    if value == 0:
        return 1
    if value == 1:
        return 2
    return 0


def cluster_group_index(value) -> int:
    spec = _raw()["node"]["cluster_group"]
    if isinstance(value, int) and spec["min"] <= value <= spec["max"]:
        return value + spec["offset"]
    return spec["misc_index"]


def cluster_group_size() -> int:
    spec = _raw()["node"]["cluster_group"]
    return spec["max"] - spec["min"] + 1 + spec["offset"]


def edge_type_index(value: int) -> int:
    # Edge types are already stored as their vocabulary integers.
    return value if value in (EDGE_MISC, EDGE_DATA, EDGE_CONTROL, EDGE_MEMORY_ORDER) else EDGE_MISC


def node_vocab_sizes() -> tuple[int, ...]:
    """Vocabulary size per node feature column, in schema order."""
    raw = _raw()["node"]
    return (
        len(raw["category"]),
        len(raw["bitwidth_buckets"]),
        len(raw["opcode_category"]),
        len(raw["opcode"]),
        len(raw["is_start_of_path"]),
        len(raw["is_lcd"]),
        cluster_group_size(),
    )


def edge_vocab_sizes() -> tuple[int, int]:
    raw = _raw()["edge"]
    return (len(raw["edge_type"]), len(raw["is_back_edge"]))
