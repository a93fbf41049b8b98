"""Seeded generator of P2C-IR programs and on-disk datasets.

Programs are grown as random SSA definition DAGs and emitted in order, so
every emitted program parses and its graph validates by construction. Three
presets cover the dataset regimes: ``dfg`` (single basic block), ``cdfg``
(several blocks with conditional back branches) and ``realistic`` (much
larger programs with heavier looping, the out-of-distribution regime).
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import oracle
from .frontend import build_cdfg, build_dfg, parse_program
from .graph import IrGraph, to_json, validate
from .seeding import derive_seed

PRESETS = ("dfg", "cdfg", "realistic")

_DEFAULT_BW_WEIGHTS = {1: 0.05, 8: 0.20, 16: 0.20, 32: 0.40, 64: 0.15}

# Arithmetic 45%, bitwise 20%, memory 20%, compare/select 10%, conversion 5%.
_DEFAULT_OPCODE_WEIGHTS = {
    "add": 0.15, "sub": 0.10, "mul": 0.12, "udiv": 0.04, "sdiv": 0.04,
    "and": 0.04, "or": 0.04, "xor": 0.04, "shl": 0.03, "lshr": 0.03, "ashr": 0.02,
    "load": 0.08, "store": 0.07, "alloca": 0.02, "getelementptr": 0.03,
    "icmp": 0.04, "select": 0.03, "mux": 0.03,
    "zext": 0.02, "sext": 0.02, "trunc": 0.01,
}

_PRESET_DEFAULTS = {
    # (size_range, loop_prob, branch_prob, block_range)
    "dfg": ((10, 120), 0.0, 0.0, (1, 1)),
    "cdfg": ((12, 120), 0.5, 0.3, (3, 8)),
    "realistic": ((50, 3500), 0.7, 0.4, (4, 16)),
}

_POINTER_OPS = ("load", "store", "getelementptr")
_UNARY_OPS = ("zext", "sext", "trunc")


@dataclass(frozen=True)
class GenConfig:
    preset: str = "dfg"
    count: int = 100
    seed: int = 0
    size_range: tuple[int, int] | None = None
    loop_prob: float | None = None
    branch_prob: float | None = None
    bitwidth_weights: dict[int, float] = field(default_factory=lambda: dict(_DEFAULT_BW_WEIGHTS))
    opcode_weights: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_OPCODE_WEIGHTS))

    def resolved(self) -> "GenConfig":
        """Fill preset-dependent fields left as None."""
        size, loop, branch, _ = _PRESET_DEFAULTS[self.preset]
        return replace(
            self,
            size_range=self.size_range if self.size_range is not None else size,
            loop_prob=self.loop_prob if self.loop_prob is not None else loop,
            branch_prob=self.branch_prob if self.branch_prob is not None else branch,
        )

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        cfg = self.resolved()
        lo, hi = cfg.size_range
        if not (1 <= lo <= hi):
            raise ValueError(f"bad size_range {cfg.size_range}")
        for p in (cfg.loop_prob, cfg.branch_prob):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability {p} outside [0, 1]")
        for weights in (cfg.bitwidth_weights, cfg.opcode_weights):
            if any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
                raise ValueError("weights must be nonnegative with positive sum")

    def to_dict(self) -> dict:
        cfg = self.resolved()
        return {
            "preset": cfg.preset,
            "count": cfg.count,
            "seed": cfg.seed,
            "size_range": list(cfg.size_range),
            "loop_prob": cfg.loop_prob,
            "branch_prob": cfg.branch_prob,
            "bitwidth_weights": {str(k): v for k, v in sorted(cfg.bitwidth_weights.items())},
            "opcode_weights": dict(sorted(cfg.opcode_weights.items())),
        }


def _weighted_choice(rng: random.Random, weights: dict) -> object:
    # Manual cumulative scan: random.choices is avoided so determinism rests
    # only on rng.random().
    total = sum(weights.values())
    x = rng.random() * total
    acc = 0.0
    for key, w in weights.items():
        acc += w
        if x < acc:
            return key
    return next(reversed(weights))


class _FunctionBuilder:
    """Grows one SSA function; emission order equals creation order."""

    def __init__(self, rng: random.Random, cfg: GenConfig):
        self.rng = rng
        self.cfg = cfg
        self.values: list[tuple[str, int]] = []   # (name, bitwidth), SSA values
        self.pointers: list[str] = []
        self.depth: dict[str, int] = {}           # dataflow depth per value
        self.counter = 0
        self._use_depth = 0

    def fresh(self) -> str:
        self.counter += 1
        return f"v{self.counter}"

    def sample_bw(self) -> int:
        return _weighted_choice(self.rng, self.cfg.bitwidth_weights)

    def pick_value(self) -> tuple[str, int]:
        # Tournament favoring shallow values keeps combinational paths
        # short, so timing stays in the small-ns regime instead of growing
        # linearly with program size.
        chosen = min((self.rng.choice(self.values) for _ in range(4)),
                     key=lambda v: self.depth.get(v[0], 0))
        self._use_depth = max(self._use_depth, self.depth.get(chosen[0], 0))
        return chosen

    def operand(self) -> str:
        # Literal operands appear with a fixed small rate so const nodes and
        # the const resource rule stay exercised.
        if not self.values or self.rng.random() < 0.15:
            return str(self.rng.randrange(0, 256))
        return f"%{self.pick_value()[0]}"

    def define(self, name: str, bw: int | None) -> None:
        if bw is not None:
            self.values.append((name, bw))
        self.depth[name] = self._use_depth + 1
        self._use_depth = 0

    def gen_instruction(self) -> str:
        op = _weighted_choice(self.rng, self.cfg.opcode_weights)
        if op in _POINTER_OPS and not self.pointers:
            op = "alloca"
        bw = self.sample_bw()
        rng = self.rng
        if op == "alloca":
            name = self.fresh()
            self.pointers.append(name)
            self.define(name, None)
            return f"%{name} = alloca i{bw}"
        if op == "getelementptr":
            base = rng.choice(self.pointers)
            idx = self.operand()
            name = self.fresh()
            self.pointers.append(name)
            self.define(name, None)
            return f"%{name} = getelementptr i64 %{base} {idx}"
        if op == "load":
            ptr = rng.choice(self.pointers)
            name = self.fresh()
            self.define(name, bw)
            return f"%{name} = load i{bw} %{ptr}"
        if op == "store":
            text = f"store i{bw} {self.operand()} %{rng.choice(self.pointers)}"
            self._use_depth = 0
            return text
        if op == "icmp":
            a, b = self.operand(), self.operand()
            name = self.fresh()
            self.define(name, 1)
            return f"%{name} = icmp i1 {a} {b}"
        if op in ("select", "mux"):
            cond = self.cond_operand()
            a, b = self.operand(), self.operand()
            name = self.fresh()
            self.define(name, bw)
            return f"%{name} = {op} i{bw} {cond} {a} {b}"
        if op in _UNARY_OPS:
            a = self.operand()
            name = self.fresh()
            self.define(name, bw)
            return f"%{name} = {op} i{bw} {a}"
        a, b = self.operand(), self.operand()
        name = self.fresh()
        self.define(name, bw)
        return f"%{name} = {op} i{bw} {a} {b}"

    def cond_operand(self) -> str:
        one_bit = [n for n, bw in self.values if bw == 1]
        if one_bit:
            return f"%{self.rng.choice(one_bit)}"
        return str(self.rng.randrange(0, 2))

    def ensure_cond(self, lines: list[str]) -> str:
        one_bit = [n for n, bw in self.values if bw == 1]
        if not one_bit:
            a, b = self.operand(), self.operand()
            name = self.fresh()
            self.define(name, 1)
            lines.append(f"  %{name} = icmp i1 {a} {b}")
            one_bit = [name]
        return f"%{self.rng.choice(one_bit)}"


def _sample_size(rng: random.Random, lo: int, hi: int) -> int:
    # Skew toward small programs with a long tail, like real IR size spreads.
    u = rng.random()
    return lo + int((hi - lo) * u ** 5)


def generate_program(cfg: GenConfig, index: int) -> str:
    """Deterministic P2C-IR text for (cfg.seed, index)."""
    cfg = cfg.resolved()
    rng = random.Random(derive_seed(cfg.seed, "syngen", cfg.preset, index))
    fb = _FunctionBuilder(rng, cfg)
    lo, hi = cfg.size_range
    n_instr = _sample_size(rng, lo, hi)

    n_args = rng.randint(2, 5)
    args = []
    for i in range(n_args):
        bw = fb.sample_bw()
        args.append((f"a{i}", bw))
        fb.values.append((f"a{i}", bw))
        fb.depth[f"a{i}"] = 0
    header = ", ".join(f"%{n}:i{bw}" for n, bw in args)
    name = f"{cfg.preset}_{index:04d}"

    _, _, _, block_range = _PRESET_DEFAULTS[cfg.preset]
    n_blocks = 1 if cfg.preset == "dfg" else rng.randint(*block_range)

    # Spread instructions over blocks, at least one each.
    split = sorted(rng.randrange(n_instr) for _ in range(n_blocks - 1))
    counts = [b - a for a, b in zip([0] + split, split + [n_instr])]
    counts = [max(1, c) for c in counts]

    labels = ["entry"] + [f"b{i}" for i in range(1, n_blocks)]
    lines = [f"func @{name}({header}) {{"]
    for bi, label in enumerate(labels):
        lines.append(f"{label}:")
        if bi >= 1 and len(fb.values) >= 2 and rng.random() < 0.3:
            # Join point: a phi merging two earlier values.
            pname = fb.fresh()
            bw = fb.sample_bw()
            a = fb.pick_value()[0]
            b = fb.pick_value()[0]
            fb.define(pname, bw)
            lines.append(f"  %{pname} = phi i{bw} %{a} %{b}")
        for _ in range(counts[bi]):
            lines.append("  " + fb.gen_instruction())
        if bi == n_blocks - 1:
            if fb.values and rng.random() < 0.8:
                lines.append(f"  ret %{fb.pick_value()[0]}")
            else:
                lines.append("  ret")
        elif bi >= 1 and rng.random() < cfg.loop_prob:
            cond = fb.ensure_cond(lines)
            target = labels[rng.randrange(bi)]
            lines.append(f"  br {cond} {target} {labels[bi + 1]}")
        elif rng.random() < cfg.branch_prob and bi + 2 < n_blocks:
            cond = fb.ensure_cond(lines)
            skip = labels[rng.randint(bi + 2, n_blocks - 1)]
            lines.append(f"  br {cond} {labels[bi + 1]} {skip}")
        else:
            lines.append(f"  br {labels[bi + 1]}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def build_graph(cfg: GenConfig, text: str, name: str) -> IrGraph:
    """Parse one generated program and build the graph its preset implies."""
    program = parse_program(text)
    if cfg.preset == "dfg":
        return build_dfg(program.blocks[0], list(program.args), name=name)
    return build_cdfg(program, name=name)


@dataclass(frozen=True)
class DatasetManifest:
    schema_version: int
    config: dict
    files: dict[str, str]         # relative path -> sha256
    dataset_hash: str

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "files": self.files,
            "dataset_hash": self.dataset_hash,
        }


def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(data, encoding="utf-8")
    os.replace(tmp, path)


def _sha256_text(data: str) -> str:
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


def generate_dataset(cfg: GenConfig, out_dir: str | Path,
                     oracle_config: "oracle.OracleConfig | None" = None,
                     jobs: int = 1) -> DatasetManifest:
    """Write programs/, graphs/, labels.csv and manifest.json under out_dir.

    Rerunning with the same config reproduces identical file hashes.
    """
    cfg.validate()
    cfg = cfg.resolved()
    ocfg = oracle_config or oracle.OracleConfig()
    dt = ocfg.delay_table()
    out = Path(out_dir)
    (out / "programs").mkdir(parents=True, exist_ok=True)
    (out / "graphs").mkdir(parents=True, exist_ok=True)

    width = max(4, len(str(cfg.count - 1)))

    def make_one(index: int) -> tuple[str, str, str, "oracle.LabelVector"]:
        text = generate_program(cfg, index)
        name = f"{cfg.preset}_{index:0{width}d}"
        g = build_graph(cfg, text, name)
        problems = validate(g)
        if problems:
            raise AssertionError(f"generated graph {name} invalid: {problems[0]}")
        labels = oracle.label_graph(g, dt, ocfg)
        return name, text, to_json(g), labels

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(make_one, range(cfg.count)))
    else:
        results = [make_one(i) for i in range(cfg.count)]

    files: dict[str, str] = {}
    label_rows = [",".join(oracle.LABELS_HEADER)]
    for name, text, gjson, labels in results:
        prog_rel = f"programs/{name}.p2cir"
        graph_rel = f"graphs/{name}.json"
        _atomic_write(out / prog_rel, text)
        _atomic_write(out / graph_rel, gjson)
        files[prog_rel] = _sha256_text(text)
        files[graph_rel] = _sha256_text(gjson)
        label_rows.append(oracle.format_label_row(name, labels))

    labels_text = "\n".join(label_rows) + "\n"
    _atomic_write(out / "labels.csv", labels_text)
    files["labels.csv"] = _sha256_text(labels_text)

    agg = hashlib.sha256()
    for rel in sorted(files):
        agg.update(rel.encode("utf-8"))
        agg.update(files[rel].encode("utf-8"))
    manifest = DatasetManifest(1, cfg.to_dict(), dict(sorted(files.items())),
                               agg.hexdigest())
    _atomic_write(out / "manifest.json",
                  json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n")
    return manifest
