"""P2C-IR text front end: parsing, printing, DFG/CDFG construction, featurization.

The P2C-IR format is a small SSA assembly for one function per file:

    func @name(%a:i32, %b:i32) {
    entry:
      %t1 = add i32 %a %b
      br loop
    loop:
      %t2 = phi i32 %t1 %t3
      %t3 = sub i32 %t2 1
      %c = icmp i1 %t3 %b
      br %c loop done
    done:
      ret %t3
    }

Statements are separated by newlines or ``;``; ``#`` starts a comment that
runs to the end of the line. Operands are ``%names`` or integer literals.
Unknown opcodes parse fine and are carried as ``misc``; types are written
``i<N>`` and anything unrecognized or out of the 0..256 range becomes a
misc bitwidth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import vocab
from .graph import CDFG, DFG, Edge, EdgeFeatures, IrGraph, Node, NodeFeatures, detect_back_edges
from .vocab import MISC

_PUNCT = set("(){},:=;")


class ParseError(Exception):
    """Parse failure with a machine-checkable kind and source location."""

    def __init__(self, kind: str, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{kind} at line {line}:{col}: {message}")
        self.kind = kind
        self.detail = message
        self.line = line
        self.col = col


# Error kinds raised by parse_program.
E_SYNTAX = "syntax"
E_DUPLICATE_SSA = "duplicate-ssa"
E_UNDEFINED_OPERAND = "undefined-operand"
E_UNDEFINED_LABEL = "undefined-label"
E_MISSING_ENTRY = "missing-entry"


@dataclass(frozen=True)
class Operand:
    """Either an SSA value reference or an integer literal."""

    kind: str  # "value" | "const"
    name: str = ""
    value: int = 0

    @classmethod
    def val(cls, name: str) -> "Operand":
        return cls("value", name=name)

    @classmethod
    def const(cls, value: int) -> "Operand":
        return cls("const", value=value)


@dataclass(frozen=True)
class Instruction:
    opcode: str                 # vocabulary opcode (misc for anything unknown)
    result: str | None          # SSA name without the leading %
    bitwidth: int | str         # parsed from the iN type token, or misc
    operands: tuple[Operand, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Terminator:
    kind: str                   # "ret" | "br"
    operand: Operand | None = None   # ret value or branch condition
    targets: tuple[str, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BasicBlock:
    """Straight-line instruction run plus its terminator.

    A None terminator is only legal on hand-assembled blocks fed straight
    to build_dfg; the parser always produces a terminated block.
    """

    label: str
    instructions: tuple[Instruction, ...]
    terminator: Terminator | None


@dataclass(frozen=True)
class ProgramIR:
    name: str
    args: tuple[tuple[str, int | str], ...]   # (name, bitwidth)
    blocks: tuple[BasicBlock, ...]

    @property
    def entry(self) -> BasicBlock:
        return self.blocks[0]

    def successors(self, label: str) -> tuple[str, ...]:
        for b in self.blocks:
            if b.label == label:
                return b.terminator.targets
        raise KeyError(label)


@dataclass
class _Token:
    kind: str   # word | value | fname | int | punct | newline
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    toks: list[_Token] = []
    for ln, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0]
        i = 0
        while i < len(line):
            ch = line[i]
            if ch in " \t\r":
                i += 1
                continue
            col = i + 1
            if ch in _PUNCT:
                toks.append(_Token("punct", ch, ln, col))
                i += 1
                continue
            if ch in "%@":
                j = i + 1
                while j < len(line) and (line[j].isalnum() or line[j] in "._"):
                    j += 1
                if j == i + 1:
                    raise ParseError(E_SYNTAX, f"dangling {ch!r}", ln, col)
                toks.append(_Token("value" if ch == "%" else "fname",
                                   line[i + 1:j], ln, col))
                i = j
                continue
            if ch.isdigit() or (ch == "-" and i + 1 < len(line) and line[i + 1].isdigit()):
                j = i + 1
                while j < len(line) and line[j].isdigit():
                    j += 1
                toks.append(_Token("int", line[i:j], ln, col))
                i = j
                continue
            if ch.isalnum() or ch == "_":
                j = i
                while j < len(line) and (line[j].isalnum() or line[j] in "._"):
                    j += 1
                toks.append(_Token("word", line[i:j], ln, col))
                i = j
                continue
            raise ParseError(E_SYNTAX, f"unexpected character {ch!r}", ln, col)
        toks.append(_Token("newline", "\n", ln, len(line) + 1))
    return toks


def _parse_bitwidth(token: str) -> int | str | None:
    """iN type token -> bitwidth; None when the token is not a type at all."""
    if len(token) < 2 or token[0] != "i" or not token[1:].isdigit():
        return None
    width = int(token[1:])
    return width if 0 <= width <= 256 else MISC


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.toks = tokens
        self.pos = 0

    def _peek(self) -> _Token | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def _next(self) -> _Token:
        tok = self._peek()
        if tok is None:
            last = self.toks[-1] if self.toks else _Token("newline", "", 1, 1)
            raise ParseError(E_SYNTAX, "unexpected end of input", last.line, last.col)
        self.pos += 1
        return tok

    def _skip_newlines(self) -> None:
        while (t := self._peek()) is not None and t.kind == "newline":
            self.pos += 1

    def _expect_punct(self, ch: str) -> _Token:
        tok = self._next()
        if tok.kind != "punct" or tok.text != ch:
            raise ParseError(E_SYNTAX, f"expected {ch!r}, found {tok.text!r}",
                             tok.line, tok.col)
        return tok

    def _at_separator(self) -> bool:
        t = self._peek()
        return t is None or t.kind == "newline" or (t.kind == "punct" and t.text in ";}")

    def _eat_separator(self) -> None:
        t = self._peek()
        if t is not None and (t.kind == "newline" or (t.kind == "punct" and t.text == ";")):
            self.pos += 1

    def parse(self) -> ProgramIR:
        self._skip_newlines()
        tok = self._next()
        if tok.kind != "word" or tok.text != "func":
            raise ParseError(E_SYNTAX, "program must start with 'func'",
                             tok.line, tok.col)
        name_tok = self._next()
        if name_tok.kind != "fname":
            raise ParseError(E_SYNTAX, "expected @name after 'func'",
                             name_tok.line, name_tok.col)
        self._expect_punct("(")
        args = self._parse_args()
        self._expect_punct("{")
        blocks = self._parse_blocks()
        self._skip_newlines()
        if (t := self._peek()) is not None:
            raise ParseError(E_SYNTAX, f"trailing input {t.text!r}", t.line, t.col)
        if not blocks:
            raise ParseError(E_MISSING_ENTRY, "function has no entry block",
                             name_tok.line, name_tok.col)
        return ProgramIR(name_tok.text, tuple(args), tuple(blocks))

    def _parse_args(self) -> list[tuple[str, int | str]]:
        args: list[tuple[str, int | str]] = []
        t = self._peek()
        if t is not None and t.kind == "punct" and t.text == ")":
            self.pos += 1
            return args
        while True:
            tok = self._next()
            if tok.kind != "value":
                raise ParseError(E_SYNTAX, "expected %name in argument list",
                                 tok.line, tok.col)
            self._expect_punct(":")
            ty = self._next()
            if ty.kind != "word":
                raise ParseError(E_SYNTAX, "expected type after ':'", ty.line, ty.col)
            bw = _parse_bitwidth(ty.text)
            args.append((tok.text, MISC if bw is None else bw))
            sep = self._next()
            if sep.kind == "punct" and sep.text == ")":
                return args
            if not (sep.kind == "punct" and sep.text == ","):
                raise ParseError(E_SYNTAX, "expected ',' or ')' in argument list",
                                 sep.line, sep.col)

    def _parse_blocks(self) -> list[BasicBlock]:
        blocks: list[BasicBlock] = []
        label: str | None = None
        label_line = 0
        instrs: list[Instruction] = []
        term: Terminator | None = None

        def close_block() -> None:
            nonlocal label, instrs, term
            if label is None:
                return
            if term is None:
                raise ParseError(E_SYNTAX,
                                 f"block {label!r} has no br/ret terminator",
                                 label_line, 1)
            blocks.append(BasicBlock(label, tuple(instrs), term))
            label, instrs, term = None, [], None

        while True:
            self._skip_newlines()
            t = self._peek()
            if t is None:
                raise ParseError(E_SYNTAX, "missing closing '}'",
                                 self.toks[-1].line, self.toks[-1].col)
            if t.kind == "punct" and t.text == "}":
                self.pos += 1
                close_block()
                return blocks
            if t.kind == "punct" and t.text == ";":
                self.pos += 1
                continue
            nxt = self.toks[self.pos + 1] if self.pos + 1 < len(self.toks) else None
            if (t.kind == "word" and nxt is not None
                    and nxt.kind == "punct" and nxt.text == ":"):
                close_block()
                label = t.text
                label_line = t.line
                self.pos += 2
                continue
            if label is None:
                raise ParseError(E_SYNTAX, "statement before first block label",
                                 t.line, t.col)
            if term is not None:
                raise ParseError(E_SYNTAX,
                                 f"statement after terminator in block {label!r}",
                                 t.line, t.col)
            stmt = self._parse_statement()
            if isinstance(stmt, Terminator):
                term = stmt
            else:
                instrs.append(stmt)

    def _parse_operand(self) -> Operand:
        tok = self._next()
        if tok.kind == "value":
            return Operand.val(tok.text)
        if tok.kind == "int":
            return Operand.const(int(tok.text))
        raise ParseError(E_SYNTAX, f"expected operand, found {tok.text!r}",
                         tok.line, tok.col)

    def _parse_operands(self) -> list[Operand]:
        ops = []
        while not self._at_separator():
            ops.append(self._parse_operand())
        return ops

    def _parse_statement(self) -> Instruction | Terminator:
        tok = self._next()
        if tok.kind == "value":
            eq = self._next()
            if not (eq.kind == "punct" and eq.text == "="):
                raise ParseError(E_SYNTAX, "expected '=' after result name",
                                 eq.line, eq.col)
            op_tok = self._next()
            if op_tok.kind != "word":
                raise ParseError(E_SYNTAX, "expected opcode after '='",
                                 op_tok.line, op_tok.col)
            bw, ops = self._parse_type_and_operands()
            instr = Instruction(vocab.known_opcode(op_tok.text), tok.text, bw,
                                tuple(ops), tok.line)
            self._eat_separator()
            return instr

        if tok.kind != "word":
            raise ParseError(E_SYNTAX, f"unexpected token {tok.text!r}",
                             tok.line, tok.col)

        if tok.text == "ret":
            operand = None if self._at_separator() else self._parse_operand()
            if not self._at_separator():
                t = self._peek()
                raise ParseError(E_SYNTAX, "ret takes at most one operand",
                                 t.line, t.col)
            self._eat_separator()
            return Terminator("ret", operand, (), tok.line)

        if tok.text == "br":
            first = self._next()
            if first.kind == "word":
                # Unconditional branch.
                if not self._at_separator():
                    t = self._peek()
                    raise ParseError(E_SYNTAX, "unconditional br takes one label",
                                     t.line, t.col)
                self._eat_separator()
                return Terminator("br", None, (first.text,), tok.line)
            if first.kind == "value" or first.kind == "int":
                cond = (Operand.val(first.text) if first.kind == "value"
                        else Operand.const(int(first.text)))
                t1 = self._next()
                t2 = self._next()
                if t1.kind != "word" or t2.kind != "word":
                    raise ParseError(E_SYNTAX,
                                     "conditional br needs two target labels",
                                     t1.line, t1.col)
                if not self._at_separator():
                    t = self._peek()
                    raise ParseError(E_SYNTAX, "conditional br takes two labels",
                                     t.line, t.col)
                self._eat_separator()
                return Terminator("br", cond, (t1.text, t2.text), tok.line)
            raise ParseError(E_SYNTAX, "malformed br", first.line, first.col)

        # Result-free instruction, e.g. store or an unknown opcode.
        bw, ops = self._parse_type_and_operands()
        instr = Instruction(vocab.known_opcode(tok.text), None, bw, tuple(ops),
                            tok.line)
        self._eat_separator()
        return instr

    def _parse_type_and_operands(self) -> tuple[int | str, list[Operand]]:
        bw: int | str = MISC
        t = self._peek()
        if t is not None and t.kind == "word":
            parsed = _parse_bitwidth(t.text)
            if parsed is not None:
                bw = parsed
                self.pos += 1
            else:
                raise ParseError(E_SYNTAX, f"expected type or operand, found {t.text!r}",
                                 t.line, t.col)
        return bw, self._parse_operands()


def parse_program(text: str) -> ProgramIR:
    """Parse P2C-IR text and check the program-level invariants."""
    program = _Parser(_tokenize(text)).parse()

    defined: dict[str, int] = {}
    for name, _ in program.args:
        if name in defined:
            raise ParseError(E_DUPLICATE_SSA,
                             f"SSA violation: %{name} declared twice", 1, 1)
        defined[name] = 1
    labels = set()
    for block in program.blocks:
        if block.label in labels:
            raise ParseError(E_SYNTAX, f"duplicate block label {block.label!r}",
                             block.terminator.line, 1)
        labels.add(block.label)
        for instr in block.instructions:
            if instr.result is not None:
                if instr.result in defined:
                    raise ParseError(E_DUPLICATE_SSA,
                                     f"SSA violation: %{instr.result} defined twice",
                                     instr.line, 1)
                defined[instr.result] = 1

    for block in program.blocks:
        for instr in block.instructions:
            for op in instr.operands:
                if op.kind == "value" and op.name not in defined:
                    raise ParseError(E_UNDEFINED_OPERAND,
                                     f"undefined operand %{op.name}", instr.line, 1)
        term = block.terminator
        if term.operand is not None and term.operand.kind == "value" \
                and term.operand.name not in defined:
            raise ParseError(E_UNDEFINED_OPERAND,
                             f"undefined operand %{term.operand.name}", term.line, 1)
        for target in term.targets:
            if target not in labels:
                raise ParseError(E_UNDEFINED_LABEL,
                                 f"branch to unknown block {target!r}", term.line, 1)
    return program


def print_program(p: ProgramIR) -> str:
    """Canonical text form; parse(print(p)) is structurally equal to p."""
    out = []
    # "imisc" is not a valid iN type, so it parses back to a misc bitwidth.
    args = ", ".join(f"%{n}:i{bw}" for n, bw in p.args)
    out.append(f"func @{p.name}({args}) {{")
    for block in p.blocks:
        out.append(f"{block.label}:")
        for ins in block.instructions:
            parts = []
            if ins.result is not None:
                parts.append(f"%{ins.result} =")
            parts.append(ins.opcode)
            if ins.bitwidth != MISC:
                parts.append(f"i{ins.bitwidth}")
            for op in ins.operands:
                parts.append(f"%{op.name}" if op.kind == "value" else str(op.value))
            out.append("  " + " ".join(parts))
        term = block.terminator
        if term.kind == "ret":
            if term.operand is None:
                out.append("  ret")
            else:
                o = term.operand
                out.append(f"  ret {'%' + o.name if o.kind == 'value' else o.value}")
        else:
            if term.operand is None:
                out.append(f"  br {term.targets[0]}")
            else:
                o = term.operand
                cond = f"%{o.name}" if o.kind == "value" else str(o.value)
                out.append(f"  br {cond} {term.targets[0]} {term.targets[1]}")
    out.append("}")
    return "\n".join(out) + "\n"


# --- graph construction -----------------------------------------------------

def _lcd_flag(opcode: str) -> int:
    # Heuristic: memory-backed operations are the ones that tie up LCD
    # resources; block and port nodes are handled by their builders.
    return 1 if opcode in ("load", "store", "alloca") else 0


def _op_features(opcode: str, bitwidth, cluster: int) -> NodeFeatures:
    return NodeFeatures.create(
        category=vocab.CATEGORY_OPERATION,
        bitwidth=bitwidth,
        opcode_category=vocab.OPCODE_CATEGORY.get(opcode, MISC),
        opcode=opcode,
        is_start_of_path=0,
        is_lcd=_lcd_flag(opcode),
        cluster_group=cluster,
    )


def _finalize_start_of_path(nodes: list[NodeFeatures],
                            edges: list[Edge]) -> list[NodeFeatures]:
    indeg = [0] * len(nodes)
    for e in edges:
        indeg[e.dst] += 1
    out = []
    for i, f in enumerate(nodes):
        flag = f.is_start_of_path
        if flag != MISC:
            flag = 1 if indeg[i] == 0 else 0
        out.append(NodeFeatures(f.category, f.bitwidth, f.opcode_category,
                                f.opcode, flag, f.is_lcd, f.cluster_group))
    return out


def _block_dataflow(block: BasicBlock, ports: list[tuple[str, int | str]],
                    cluster: int, include_terminator: bool,
                    ) -> tuple[list[NodeFeatures], list[Edge], dict[str, int]]:
    """Dataflow nodes and edges of one block, ports first, ids from zero."""
    feats: list[NodeFeatures] = []
    name_to_id: dict[str, int] = {}
    const_ids: dict[tuple[int, int | str], int] = {}

    for name, bw in ports:
        name_to_id[name] = len(feats)
        feats.append(NodeFeatures.create(
            category=vocab.CATEGORY_PORT, bitwidth=bw, opcode=MISC,
            opcode_category=MISC, is_start_of_path=0, is_lcd=MISC,
            cluster_group=-1))

    edges: list[Edge] = []

    def operand_node(op: Operand, bw) -> int:
        if op.kind == "value":
            if op.name not in name_to_id:
                raise ValueError(f"operand %{op.name} has no defining node")
            return name_to_id[op.name]
        key = (op.value, bw)
        if key not in const_ids:
            const_ids[key] = len(feats)
            feats.append(_op_features("const", bw, cluster))
        return const_ids[key]

    for ins in block.instructions:
        srcs = [operand_node(op, ins.bitwidth) for op in ins.operands]
        node_id = len(feats)
        feats.append(_op_features(ins.opcode, ins.bitwidth, cluster))
        if ins.result is not None:
            name_to_id[ins.result] = node_id
        for s in srcs:
            edges.append(Edge(s, node_id, EdgeFeatures(vocab.EDGE_DATA, False)))

    if include_terminator and block.terminator is not None:
        term = block.terminator
        srcs = []
        if term.operand is not None:
            srcs.append(operand_node(term.operand,
                                     1 if term.kind == "br" else MISC))
        node_id = len(feats)
        feats.append(_op_features(term.kind, MISC, cluster))
        for s in srcs:
            edges.append(Edge(s, node_id, EdgeFeatures(vocab.EDGE_DATA, False)))

    return feats, edges, name_to_id


def _referenced_externals(block: BasicBlock) -> list[str]:
    """Names a block reads before defining them locally, in first-use order.

    A use that precedes its own local definition (a phi reading the loop
    carried value) also counts: at that point the value flows in from the
    previous iteration, so it enters the block as a port.
    """
    seen: list[str] = []
    defined: set[str] = set()

    def visit(op: Operand | None) -> None:
        if op is not None and op.kind == "value" and op.name not in defined \
                and op.name not in seen:
            seen.append(op.name)

    for ins in block.instructions:
        for op in ins.operands:
            visit(op)
        if ins.result is not None:
            defined.add(ins.result)
    if block.terminator is not None:
        visit(block.terminator.operand)
    return seen


def build_dfg(block: BasicBlock, args: list[tuple[str, int | str]],
              name: str = "dfg", cluster: int = 0) -> IrGraph:
    """Dataflow graph of a single return-terminated basic block.

    Referenced arguments become port nodes, instructions become operation
    nodes, constants become const operation nodes, and every operand adds
    a data edge from its defining node.
    """
    if block.terminator is not None and block.terminator.kind != "ret":
        raise ValueError("build_dfg requires a return-terminated block")
    referenced = set(_referenced_externals(block))
    arg_map = dict(args)
    ports = [(n, arg_map[n]) for n, _ in args if n in referenced]
    missing = [n for n in referenced if n not in arg_map]
    if missing:
        raise ValueError(f"operands not defined by block or args: {missing}")
    feats, edges, _ = _block_dataflow(block, ports, cluster, True)
    feats = _finalize_start_of_path(feats, edges)
    nodes = [Node(i, f) for i, f in enumerate(feats)]
    return IrGraph.build(name, DFG, nodes, edges)


def build_cdfg(p: ProgramIR, name: str | None = None) -> IrGraph:
    """Control-dataflow graph of a whole program.

    Each block contributes its own dataflow island (values flowing in from
    arguments or other blocks surface as port nodes of that block), then one
    block node per basic block is added with control edges to the block's
    operation nodes and to successor block nodes. Back edges are detected by
    a DFS rooted at the entry block node and flagged.
    """
    def_bw: dict[str, int | str] = dict(p.args)
    for block in p.blocks:
        for ins in block.instructions:
            if ins.result is not None:
                def_bw[ins.result] = ins.bitwidth

    feats: list[NodeFeatures] = []
    edges: list[Edge] = []
    block_members: list[list[int]] = []
    for ordinal, block in enumerate(p.blocks):
        externals = _referenced_externals(block)
        ports = [(n, def_bw[n]) for n in externals]
        bfeats, bedges, _ = _block_dataflow(block, ports, ordinal, True)
        bfeats = _finalize_start_of_path(bfeats, bedges)
        shift = len(feats)
        members = [shift + i for i, f in enumerate(bfeats)
                   if f.category == vocab.CATEGORY_OPERATION]
        block_members.append(members)
        feats.extend(bfeats)
        edges.extend(Edge(e.src + shift, e.dst + shift, e.features)
                     for e in bedges)

    block_node_of: dict[str, int] = {}
    for block in p.blocks:
        block_node_of[block.label] = len(feats)
        feats.append(NodeFeatures.create(
            category=vocab.CATEGORY_BLOCK, bitwidth=MISC, opcode=MISC,
            opcode_category=MISC, is_start_of_path=MISC, is_lcd=MISC,
            cluster_group=MISC))

    for block, members in zip(p.blocks, block_members):
        b = block_node_of[block.label]
        for m in members:
            edges.append(Edge(b, m, EdgeFeatures(vocab.EDGE_CONTROL, False)))
    for block in p.blocks:
        b = block_node_of[block.label]
        seen = set()
        for target in block.terminator.targets:
            t = block_node_of[target]
            if t in seen:
                continue
            seen.add(t)
            edges.append(Edge(b, t, EdgeFeatures(vocab.EDGE_CONTROL, False)))

    nodes = [Node(i, f) for i, f in enumerate(feats)]
    graph = IrGraph.build(name or p.name, CDFG, nodes, edges)
    back = detect_back_edges(graph, [block_node_of[p.blocks[0].label]])
    flagged = [Edge(e.src, e.dst, EdgeFeatures(e.features.edge_type, i in back))
               for i, e in enumerate(graph.edges)]
    return IrGraph.build(graph.name, CDFG, nodes, flagged)


def block_port_requirements(p: ProgramIR) -> list[list[tuple[str, int | str]]]:
    """Per block, the external values it reads, as (name, bitwidth) ports."""
    def_bw: dict[str, int | str] = dict(p.args)
    for block in p.blocks:
        for ins in block.instructions:
            if ins.result is not None:
                def_bw[ins.result] = ins.bitwidth
    out = []
    for block in p.blocks:
        out.append([(n, def_bw[n]) for n in _referenced_externals(block)])
    return out


# --- featurization ----------------------------------------------------------

@dataclass(frozen=True)
class FeaturizedGraph:
    """Index-tensor view of an IrGraph, ready for embedding lookups."""

    name: str
    kind: str
    node_features: "np.ndarray"    # [num_nodes, 7] int64
    edge_index: "np.ndarray"       # [2, num_edges] int64
    edge_features: "np.ndarray"    # [num_edges, 2] int64

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]


def featurize(g: IrGraph) -> FeaturizedGraph:
    """Map every categorical field through the shipped vocabulary."""
    import numpy as np

    n = g.num_nodes
    node = np.zeros((n, 7), dtype=np.int64)
    for i, nd in enumerate(g.nodes):
        f = nd.features
        node[i, 0] = vocab.category_index(f.category)
        node[i, 1] = vocab.bitwidth_index(f.bitwidth)
        node[i, 2] = vocab.opcode_category_index(f.opcode_category)
        node[i, 3] = vocab.opcode_index(f.opcode)
        node[i, 4] = vocab.ternary_index(f.is_start_of_path)
        node[i, 5] = vocab.ternary_index(f.is_lcd)
        node[i, 6] = vocab.cluster_group_index(f.cluster_group)

    m = g.num_edges
    edge_index = np.zeros((2, m), dtype=np.int64)
    edge_feat = np.zeros((m, 2), dtype=np.int64)
    for j, e in enumerate(g.edges):
        edge_index[0, j] = e.src
        edge_index[1, j] = e.dst
        edge_feat[j, 0] = vocab.edge_type_index(e.features.edge_type)
        edge_feat[j, 1] = 1 if e.features.is_back_edge else 0
    return FeaturizedGraph(g.name, g.kind, node, edge_index, edge_feat)
