"""Rule-based cost model standing in for a synthesis tool as the label source.

The model is deliberately simple but deterministic: per-node resource rules
keyed on opcode and bitwidth, a flip-flop surcharge per loop, a slice packing
formula, and critical-path timing as the longest weighted path over the
back-edge-free graph. Every constant lives in OracleConfig and can be
overridden from a TOML file, so the label function is a tunable surrogate,
not a device model.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import vocab
from .graph import IrGraph, Node, forward_topo_order
from .vocab import MISC

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

LABELS_HEADER = ("name", "dsp", "lut", "ff", "slice", "cp_ns")

_BINARY_LUT_OPS = ("add", "sub", "icmp", "and", "or", "xor", "shl", "lshr",
                   "ashr", "select", "mux", "phi", "getelementptr")
_FREE_OPS = ("const", "br", "ret", "call", "zext", "sext", "trunc")


class LabelImportError(Exception):
    pass


@dataclass(frozen=True)
class LabelVector:
    dsp: int
    lut: int
    ff: int
    slice: int
    cp_ns: float

    def as_tuple(self) -> tuple:
        return (self.dsp, self.lut, self.ff, self.slice, self.cp_ns)

    def __getitem__(self, target: str):
        return {"dsp": self.dsp, "lut": self.lut, "ff": self.ff,
                "slice": self.slice, "cp": self.cp_ns, "cp_ns": self.cp_ns}[target]


@dataclass(frozen=True)
class DelayTable:
    """Per-opcode (base_ns, per_bit_ns) delay entries with a misc fallback."""

    entries: dict[str, tuple[float, float]]

    def __post_init__(self):
        if "misc" not in self.entries:
            raise ValueError("delay table must define the misc opcode")
        for op, (base, per_bit) in self.entries.items():
            if base < 0 or per_bit < 0:
                raise ValueError(f"negative delay for {op}")

    def node_delay(self, opcode: str, bitwidth: int) -> float:
        base, per_bit = self.entries.get(opcode, self.entries["misc"])
        return base + per_bit * bitwidth


def _default_toml() -> dict:
    data = resources.files("p2cir.data").joinpath("oracle_default.toml").read_bytes()
    return _toml.loads(data.decode("utf-8"))


@dataclass(frozen=True)
class OracleConfig:
    dsp_bitwidth_threshold: int = 11
    dsp_lane_width: int = 18
    mul_lut_factor: int = 3
    slice_lut_pack: int = 4
    slice_ff_pack: int = 8
    loop_ff_surcharge: int = 8
    glue_nodes_per_slice: int = 10
    default_bitwidth: int = 32
    delays: dict[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "OracleConfig":
        res = raw.get("resources", {})
        delays = {op: (float(d["base"]), float(d["per_bit"]))
                  for op, d in raw.get("delays", {}).items()}
        return cls(
            dsp_bitwidth_threshold=int(res.get("dsp_bitwidth_threshold", 11)),
            dsp_lane_width=int(res.get("dsp_lane_width", 18)),
            mul_lut_factor=int(res.get("mul_lut_factor", 3)),
            slice_lut_pack=int(res.get("slice_lut_pack", 4)),
            slice_ff_pack=int(res.get("slice_ff_pack", 8)),
            loop_ff_surcharge=int(res.get("loop_ff_surcharge", 8)),
            glue_nodes_per_slice=int(res.get("glue_nodes_per_slice", 10)),
            default_bitwidth=int(res.get("default_bitwidth", 32)),
            delays=delays,
        )

    @classmethod
    def from_toml(cls, path: str | Path) -> "OracleConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(_toml.load(fh))

    def delay_table(self) -> DelayTable:
        entries = self.delays or {
            op: (float(d["base"]), float(d["per_bit"]))
            for op, d in _default_toml()["delays"].items()
        }
        return DelayTable(entries)


def _bw(node: Node, cfg: OracleConfig) -> int:
    bw = node.features.bitwidth
    return bw if isinstance(bw, int) else cfg.default_bitwidth


def resource_of_node(node: Node, cfg: OracleConfig | None = None) -> tuple[int, int, int]:
    """(dsp, lut, ff) for one node; control, const, port and block cost nothing."""
    cfg = cfg or OracleConfig()
    f = node.features
    if f.category in (vocab.CATEGORY_BLOCK, vocab.CATEGORY_PORT, MISC):
        return (0, 0, 0)
    bw = _bw(node, cfg)
    op = f.opcode
    if op == "mul":
        if bw <= cfg.dsp_bitwidth_threshold:
            return (0, cfg.mul_lut_factor * bw, 0)
        return (math.ceil(bw / cfg.dsp_lane_width), 0, 0)
    if op in ("udiv", "sdiv"):
        return (0, math.ceil(bw * bw / 2), 0)
    if op in ("load", "store"):
        return (0, math.ceil(bw / 2), bw)
    if op == "alloca":
        return (0, 0, 2 * bw)
    if op in _FREE_OPS:
        return (0, 0, 0)
    if op in _BINARY_LUT_OPS or op == MISC:
        return (0, bw, 0)
    return (0, bw, 0)


def critical_path(g: IrGraph, dt: DelayTable,
                  cfg: OracleConfig | None = None) -> float:
    """Longest weighted path over the back-edge-free subgraph, in ns.

    Node weight is the opcode delay plus the per-bit term; block and port
    nodes weigh nothing. Back edges are register boundaries, so paths end
    there.
    """
    cfg = cfg or OracleConfig()
    order = forward_topo_order(g)
    if order is None:
        raise ValueError("graph is cyclic after removing back edges")
    weight = []
    for node in g.nodes:
        f = node.features
        if f.category in (vocab.CATEGORY_BLOCK, vocab.CATEGORY_PORT):
            weight.append(0.0)
        else:
            weight.append(dt.node_delay(f.opcode, _bw(node, cfg)))
    dist = [0.0] * g.num_nodes
    preds: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for e in g.edges:
        if not e.features.is_back_edge:
            preds[e.dst].append(e.src)
    best = 0.0
    for v in order:
        incoming = max((dist[u] for u in preds[v]), default=0.0)
        dist[v] = incoming + weight[v]
        best = max(best, dist[v])
    return best


def label_graph(g: IrGraph, dt: DelayTable | None = None,
                cfg: OracleConfig | None = None) -> LabelVector:
    """Full label vector: summed resources, loop surcharge, slices, timing."""
    cfg = cfg or OracleConfig()
    dt = dt or cfg.delay_table()
    dsp = lut = ff = 0
    for node in g.nodes:
        d, l, f = resource_of_node(node, cfg)
        dsp += d
        lut += l
        ff += f
    n_back = sum(1 for e in g.edges if e.features.is_back_edge)
    ff += cfg.loop_ff_surcharge * n_back
    slices = math.ceil(max(lut / cfg.slice_lut_pack, ff / cfg.slice_ff_pack))
    slices += math.ceil(g.num_nodes / cfg.glue_nodes_per_slice)
    return LabelVector(dsp, lut, ff, slices, critical_path(g, dt, cfg))


def format_label_row(name: str, lv: LabelVector) -> str:
    return f"{name},{lv.dsp},{lv.lut},{lv.ff},{lv.slice},{lv.cp_ns:.9f}"


def import_labels(path: str | Path) -> dict[str, LabelVector]:
    """Read a labels.csv produced here or by an external labeling flow."""
    out: dict[str, LabelVector] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LABELS_HEADER:
            raise LabelImportError(f"{path}: expected header {','.join(LABELS_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 6:
                raise LabelImportError(f"{path}:{line_no}: expected 6 columns, got {len(row)}")
            name = row[0]
            try:
                dsp, lut, ff, slc = (int(x) for x in row[1:5])
                cp = float(row[5])
            except ValueError as err:
                raise LabelImportError(f"{path}:{line_no}: {err}") from None
            if min(dsp, lut, ff, slc) < 0 or cp < 0:
                raise LabelImportError(f"{path}:{line_no}: negative label value")
            if name in out:
                raise LabelImportError(f"{path}:{line_no}: duplicate name {name!r}")
            out[name] = LabelVector(dsp, lut, ff, slc, cp)
    return out
