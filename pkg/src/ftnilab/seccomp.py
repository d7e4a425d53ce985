"""Security-typed compilation from the while-language to RISC code.

Every compiled fragment carries a security annotation: a timing label
(exact step count, low-dependent, or possibly secret-dependent) and a write
effect (writes confined to high locations, or unrestricted).  Programs whose
annotations cannot be justified are rejected with an error naming the typing
rule and the violated side condition.

Rule selection is deterministic even though several derivations usually
exist: expression compilation prefers a cached register, conditionals try
the padded high-conditional shape first and fall back to the general one,
and register choice takes the lowest-indexed register of the demanded level,
preferring registers that cache nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import lang
from .lang import (
    Assign,
    BinOp,
    Cmd,
    Const,
    Expr,
    If,
    Out,
    Seq,
    Skip,
    SourceProgram,
    Var,
    While,
    render_cmd,
    render_expr,
)
from .machine import (
    HIGH,
    LOW,
    Instruction,
    MachineConfig,
    RiscProgram,
    SecurityLevel,
    validate_program,
)


class WriteEffect(Enum):
    HIGH_ONLY = "high-only"
    ANY = "any"

    def __le__(self, other: "WriteEffect") -> bool:
        return self is other or (self is WriteEffect.HIGH_ONLY and other is WriteEffect.ANY)

    def join(self, other: "WriteEffect") -> "WriteEffect":
        return WriteEffect.ANY if WriteEffect.ANY in (self, other) else WriteEffect.HIGH_ONLY


@dataclass(frozen=True)
class Timing:
    """Timing label: exact step count, low-dependent, or secret-dependent."""

    kind: str  # "exact" | "low" | "high"
    steps: int | None = None

    @staticmethod
    def exact(steps: int) -> "Timing":
        return Timing("exact", steps)

    @property
    def is_exact(self) -> bool:
        return self.kind == "exact"

    def __le__(self, other: "Timing") -> bool:
        order = {"exact": 0, "low": 1, "high": 2}
        if self.is_exact and other.is_exact:
            return self.steps <= other.steps
        return order[self.kind] <= order[other.kind]

    def blur(self, other: "Timing") -> "Timing":
        """Forget step counts: low-dependent if both sides are, else secret-dependent."""
        if self <= TIMING_LOW and other <= TIMING_LOW:
            return TIMING_LOW
        return TIMING_HIGH

    def then(self, other: "Timing") -> "Timing":
        """Sequential combination: exact counts add, anything else blurs."""
        if self.is_exact and other.is_exact:
            return Timing.exact(self.steps + other.steps)
        return self.blur(other)

    def render(self) -> str:
        return f"exact:{self.steps}" if self.is_exact else self.kind


TIMING_LOW = Timing("low")
TIMING_HIGH = Timing("high")


def write_bound(level: SecurityLevel) -> WriteEffect:
    return WriteEffect.HIGH_ONLY if level is HIGH else WriteEffect.ANY


def timing_bound(level: SecurityLevel) -> Timing:
    return TIMING_HIGH if level is HIGH else TIMING_LOW


class RegisterRecord:
    """Partial bijection between registers and the variables they cache."""

    __slots__ = ("_pairs",)

    def __init__(self, pairs: dict[str, str] | None = None):
        pairs = dict(pairs or {})
        if len(set(pairs.values())) != len(pairs):
            raise ValueError("a variable may be cached in at most one register")
        self._pairs = pairs

    def variable_of(self, reg: str) -> str | None:
        return self._pairs.get(reg)

    def register_of(self, var: str) -> str | None:
        for reg, cached in self._pairs.items():
            if cached == var:
                return reg
        return None

    def update(self, reg: str, var: str) -> "RegisterRecord":
        """Minimal change binding reg to var while staying a bijection."""
        pairs = {r: v for r, v in self._pairs.items() if r != reg and v != var}
        pairs[reg] = var
        return RegisterRecord(pairs)

    def without(self, reg: str) -> "RegisterRecord":
        pairs = {r: v for r, v in self._pairs.items() if r != reg}
        return RegisterRecord(pairs)

    def meet(self, other: "RegisterRecord") -> "RegisterRecord":
        pairs = {
            r: v for r, v in self._pairs.items() if other._pairs.get(r) == v
        }
        return RegisterRecord(pairs)

    def __le__(self, other: "RegisterRecord") -> bool:
        return all(other._pairs.get(r) == v for r, v in self._pairs.items())

    def items(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self._pairs.items()))

    def __eq__(self, other) -> bool:
        return isinstance(other, RegisterRecord) and self._pairs == other._pairs

    def __hash__(self) -> int:
        return hash(self.items())

    def __repr__(self) -> str:
        inside = ", ".join(f"{r}->{v}" for r, v in self.items())
        return f"RegisterRecord({{{inside}}})"


EMPTY_RECORD = RegisterRecord()


class CompileError(Exception):
    """Typing failure; names the rule, the side condition, and the offender."""

    def __init__(self, rule: str, reason: str, command: str, detail: str):
        super().__init__(f"rule {rule}: {reason}: {detail} (in: {command})")
        self.rule = rule
        self.reason = reason
        self.command = command
        self.detail = detail


@dataclass(frozen=True)
class _Branch:
    """A compiled branch waiting to be spliced into its parent buffer."""

    buffer: "_Emitter"
    site_mark: int
    site_end: int
    timing: "Timing"
    effect: "WriteEffect"
    out_label: str | None
    record: "RegisterRecord"


@dataclass(frozen=True)
class IfHSite:
    """Index ranges (end-exclusive) of the two padded branch regions."""

    jz_index: int
    then_start: int
    then_end: int
    else_start: int
    else_end: int


@dataclass(frozen=True)
class CompileResult:
    program: RiscProgram
    timing: Timing
    write_effect: WriteEffect
    v2p: dict[str, int]
    register_levels: dict[str, str]
    memory_levels: tuple[str, ...]
    width: int
    if_h_sites: tuple[IfHSite, ...]
    record: RegisterRecord

    def meta(self) -> dict:
        return {
            "timing": self.timing.render(),
            "write_effect": self.write_effect.value,
            "v2p": dict(self.v2p),
            "register_levels": dict(self.register_levels),
            "memory_levels": list(self.memory_levels),
            "width": self.width,
            "if_h_sites": [
                {
                    "jz": s.jz_index,
                    "then": [s.then_start, s.then_end],
                    "else": [s.else_start, s.else_end],
                }
                for s in self.if_h_sites
            ],
        }


class _Emitter:
    """Append-only instruction buffer with a pending head label."""

    def __init__(self):
        self.instrs: list[Instruction] = []
        self.pending: str | None = None

    def pend(self, label: str | None) -> None:
        if label is None:
            return
        assert self.pending is None, "two labels cannot target the same instruction"
        self.pending = label

    def emit(self, instr: Instruction) -> int:
        if self.pending is not None:
            instr = Instruction(
                instr.op,
                self.pending,
                reg=instr.reg,
                reg2=instr.reg2,
                addr=instr.addr,
                value=instr.value,
                target=instr.target,
                channel=instr.channel,
            )
            self.pending = None
        self.instrs.append(instr)
        return len(self.instrs) - 1

    def append(self, sub: "_Emitter", head_label: str | None = None) -> int:
        """Concatenate a sub-buffer; an optional label lands on its first instruction."""
        start = len(self.instrs)
        self.pend(head_label)
        for instr in sub.instrs:
            if self.pending is not None:
                assert instr.label is None
                self.emit(instr)
            else:
                self.instrs.append(instr)
        self.pending = sub.pending
        return start


class _Compiler:
    def __init__(self, src: SourceProgram, cfg: MachineConfig):
        self.cfg = cfg
        self.levels = {name: level for name, level in src.levels}
        self.v2p = {name: addr for addr, (name, _) in enumerate(src.levels)}
        if cfg.memory_size < len(self.v2p):
            raise CompileError(
                "program", "level-mismatch", "<declarations>",
                f"machine memory holds {cfg.memory_size} cells, program needs {len(self.v2p)}",
            )
        self.fresh = 0
        self.em = _Emitter()
        self.sites: list[IfHSite] = []

    # helpers ---------------------------------------------------------------
    def fresh_label(self, prefix: str) -> str:
        label = f"{prefix}{self.fresh}"
        self.fresh += 1
        return label

    def var_level(self, name: str) -> SecurityLevel:
        return self.levels[name]

    def expr_level(self, expr: Expr) -> SecurityLevel:
        if isinstance(expr, Const):
            return LOW
        if isinstance(expr, Var):
            return self.var_level(expr.name)
        left = self.expr_level(expr.left)
        return HIGH if left is HIGH else self.expr_level(expr.right)

    def pick_register(self, level: SecurityLevel, avoid: frozenset[str], rec: RegisterRecord, context: str) -> str:
        pool = self.cfg.registers_of_level(level)
        for reg in pool:
            if reg not in avoid and rec.variable_of(reg) is None:
                return reg
        for reg in pool:
            if reg not in avoid:
                return reg
        raise CompileError(
            "expr", "no-register",
            context, f"no level-{level.value} register outside {sorted(avoid)}",
        )

    # expressions -----------------------------------------------------------
    def compile_expr(
        self,
        rec: RegisterRecord,
        avoid: frozenset[str],
        label: str | None,
        expr: Expr,
        level: SecurityLevel,
    ) -> tuple[int, str, RegisterRecord]:
        """Emit code leaving the value in a level-matching register.

        Returns (step count, result register, record).  The pending label
        rides along when a cached variable produces no code at all.
        """
        if isinstance(expr, Const):
            reg = self.pick_register(level, avoid, rec, render_expr(expr))
            self.em.pend(label)
            self.em.emit(Instruction("movek", reg=reg, value=expr.value % self.cfg.word_values))
            return (1, reg, rec.without(reg))
        if isinstance(expr, Var):
            cached = rec.register_of(expr.name)
            # A register reserved by an enclosing operand cannot double as a
            # result register, so the cache only helps when it is free.
            if (
                cached is not None
                and cached not in avoid
                and self.cfg.register_level(cached) is level
            ):
                self.em.pend(label)
                return (0, cached, rec)
            if not (self.var_level(expr.name) <= level):
                raise CompileError(
                    "expr", "level-mismatch", render_expr(expr),
                    f"variable {expr.name} has level {self.var_level(expr.name).value},"
                    f" context demands {level.value}",
                )
            reg = self.pick_register(level, avoid, rec, render_expr(expr))
            self.em.pend(label)
            self.em.emit(Instruction("load", reg=reg, addr=self.v2p[expr.name]))
            return (1, reg, rec.update(reg, expr.name))
        if isinstance(expr, BinOp):
            n1, reg, rec1 = self.compile_expr(rec, avoid, label, expr.left, level)
            n2, reg2, rec2 = self.compile_expr(rec1, avoid | {reg}, None, expr.right, level)
            opname = {"+": "add", "-": "sub", "*": "mul", "&": "and"}[expr.op]
            self.em.emit(Instruction(opname, reg=reg, reg2=reg2))
            return (n1 + n2 + 1, reg, rec2.without(reg))
        raise TypeError(f"not an expression: {expr!r}")

    def command_expr(
        self,
        rule: str,
        rec: RegisterRecord,
        label: str | None,
        expr: Expr,
        level: SecurityLevel,
        command: Cmd,
    ) -> tuple[int, str, RegisterRecord]:
        """Compile a command's expression, re-attributing failures to the rule."""
        try:
            return self.compile_expr(rec, frozenset(), label, expr, level)
        except CompileError as err:
            if err.rule != "expr":
                raise
            raise CompileError(rule, err.reason, render_cmd(command), err.detail) from err

    # commands --------------------------------------------------------------
    def compile_cmd(
        self, rec: RegisterRecord, label: str | None, cmd: Cmd
    ) -> tuple[Timing, WriteEffect, str | None, RegisterRecord]:
        if isinstance(cmd, Skip):
            self.em.pend(label)
            self.em.emit(Instruction("nop"))
            return (Timing.exact(1), WriteEffect.HIGH_ONLY, None, rec)

        if isinstance(cmd, Assign):
            level = self.var_level(cmd.var)
            n, reg, rec1 = self.command_expr("assign", rec, label, cmd.expr, level, cmd)
            self.em.emit(Instruction("store", reg=reg, addr=self.v2p[cmd.var]))
            rec2 = rec1.update(reg, cmd.var)
            if level is HIGH:
                return (Timing.exact(n + 1), WriteEffect.HIGH_ONLY, None, rec2)
            return (TIMING_LOW, WriteEffect.ANY, None, rec2)

        if isinstance(cmd, Out):
            level = HIGH if cmd.channel == "high" else LOW
            n, reg, rec1 = self.command_expr("out", rec, label, cmd.expr, level, cmd)
            self.em.emit(Instruction("out", channel=cmd.channel, reg=reg))
            if level is HIGH:
                return (Timing.exact(n + 1), WriteEffect.HIGH_ONLY, None, rec1)
            return (TIMING_LOW, WriteEffect.ANY, None, rec1)

        if isinstance(cmd, Seq):
            t1, w1, l1, rec1 = self.compile_cmd(rec, label, cmd.first)
            t2, w2, l2, rec2 = self.compile_cmd(rec1, l1, cmd.second)
            if t1 == TIMING_HIGH and w2 is not WriteEffect.HIGH_ONLY:
                raise CompileError(
                    "seq", "timing-after-high", render_cmd(cmd.second),
                    "a command after secret-dependent timing must write only high locations",
                )
            return (t1.then(t2), w1.join(w2), l2, rec2)

        if isinstance(cmd, If):
            return self.compile_if(rec, label, cmd)

        if isinstance(cmd, While):
            return self.compile_while(rec, label, cmd)

        raise TypeError(f"not a compilable command: {cmd!r}")

    # conditionals ----------------------------------------------------------
    def _snapshot(self):
        return (len(self.em.instrs), self.em.pending, self.fresh, len(self.sites))

    def _restore(self, snap) -> None:
        count, pending, fresh, nsites = snap
        del self.em.instrs[count:]
        self.em.pending = pending
        self.fresh = fresh
        del self.sites[nsites:]

    def _branch(self, rec: RegisterRecord, cmd: Cmd):
        """Compile a branch into a private buffer sharing the label counter."""
        outer = self.em
        mark = len(self.sites)
        self.em = _Emitter()
        try:
            t, w, out_label, rec2 = self.compile_cmd(rec, None, cmd)
            return _Branch(self.em, mark, len(self.sites), t, w, out_label, rec2)
        finally:
            self.em = outer

    def _append_branch(self, branch: "_Branch", head_label: str | None = None) -> int:
        """Splice a branch buffer in, rebasing any padding sites it recorded."""
        start = self.em.append(branch.buffer, head_label)
        for i in range(branch.site_mark, branch.site_end):
            s = self.sites[i]
            self.sites[i] = IfHSite(
                s.jz_index + start,
                s.then_start + start,
                s.then_end + start,
                s.else_start + start,
                s.else_end + start,
            )
        return start

    def compile_if(self, rec: RegisterRecord, label: str | None, cmd: If):
        snap = self._snapshot()
        try:
            return self._compile_if_high(rec, label, cmd)
        except CompileError:
            self._restore(snap)
        return self._compile_if_any(rec, label, cmd)

    def _compile_if_high(self, rec: RegisterRecord, label: str | None, cmd: If):
        """Padded shape: both branches exact-time and high-writing, guard at H."""
        n0, reg, rec1 = self.command_expr("if-H", rec, label, cmd.guard, HIGH, cmd)
        br = self.fresh_label("br")
        ex = self.fresh_label("ex")
        then_b = self._branch(rec1, cmd.then_cmd)
        else_b = self._branch(rec1, cmd.else_cmd)
        for b in (then_b, else_b):
            if not (b.timing.is_exact and b.effect is WriteEffect.HIGH_ONLY):
                raise CompileError(
                    "if-H", "level-mismatch", render_cmd(cmd),
                    "branches must have exact timing and high-only writes",
                )
        n1, n2 = then_b.timing.steps, else_b.timing.steps
        jz_index = self.em.emit(Instruction("jz", target=br, reg=reg))
        then_start = self._append_branch(then_b)
        self.em.pend(then_b.out_label)
        for _ in range(max(0, n2 - n1)):
            self.em.emit(Instruction("nop"))
        then_end = self.em.emit(Instruction("jmp", target=ex)) + 1
        else_start = self._append_branch(else_b, head_label=br)
        self.em.pend(else_b.out_label)
        for _ in range(max(0, n1 - n2)):
            self.em.emit(Instruction("nop"))
        else_end = self.em.emit(Instruction("nop")) + 1
        self.sites.append(IfHSite(jz_index, then_start, then_end, else_start, else_end))
        m = n0 + max(n1, n2) + 2
        return (Timing.exact(m), WriteEffect.HIGH_ONLY, ex, then_b.record.meet(else_b.record))

    def _compile_if_any(self, rec: RegisterRecord, label: str | None, cmd: If):
        level = self.expr_level(cmd.guard)
        bound = write_bound(level)
        n0, reg, rec1 = self.command_expr("if-any", rec, label, cmd.guard, level, cmd)
        br = self.fresh_label("br")
        ex = self.fresh_label("ex")
        then_b = self._branch(rec1, cmd.then_cmd)
        else_b = self._branch(rec1, cmd.else_cmd)
        for branch, b in ((cmd.then_cmd, then_b), (cmd.else_cmd, else_b)):
            if not b.effect <= bound:
                raise CompileError(
                    "if-any", "implicit-flow", render_cmd(branch),
                    f"branch writes {b.effect.value} under a level-{level.value} guard",
                )
        self.em.emit(Instruction("jz", target=br, reg=reg))
        self._append_branch(then_b)
        self.em.pend(then_b.out_label)
        self.em.emit(Instruction("jmp", target=ex))
        self._append_branch(else_b, head_label=br)
        self.em.pend(else_b.out_label)
        self.em.emit(Instruction("nop"))
        timing = timing_bound(level).blur(then_b.timing).blur(else_b.timing)
        return (timing, bound, ex, then_b.record.meet(else_b.record))

    # loops -------------------------------------------------------------------
    def while_record_fixpoint(
        self, rec: RegisterRecord, cmd: While, reg: str
    ) -> RegisterRecord:
        """Shrink the loop record until it survives one body compilation."""
        rec_b = rec.update(reg, cmd.var)
        snap = self._snapshot()
        while True:
            scratch = self._branch(rec_b, cmd.body)
            self._restore(snap)
            rec_next = rec_b.meet(scratch.record.update(reg, cmd.var))
            if rec_next == rec_b:
                return rec_b
            rec_b = rec_next

    def compile_while(self, rec: RegisterRecord, label: str | None, cmd: While):
        level = self.var_level(cmd.var)
        bound = write_bound(level)
        reg = self.pick_register(level, frozenset(), rec, render_cmd(cmd))
        rec_b = self.while_record_fixpoint(rec, cmd, reg)
        lp = self.fresh_label("lp")
        ex = self.fresh_label("ex")
        addr = self.v2p[cmd.var]
        jump_op = "jlez" if cmd.positive else "jz"
        self.em.pend(label)
        self.em.emit(Instruction("load", reg=reg, addr=addr))
        self.em.emit(Instruction("store", reg=reg, addr=addr))
        self.em.pend(lp)
        self.em.emit(Instruction(jump_op, target=ex, reg=reg))
        t, w, body_label, rec_e = self.compile_cmd(rec_b, None, cmd.body)
        if not w <= bound:
            raise CompileError(
                "while", "implicit-flow", render_cmd(cmd),
                f"body writes {w.value} under a level-{level.value} guard",
            )
        if t == TIMING_HIGH and bound is not WriteEffect.HIGH_ONLY:
            raise CompileError(
                "while", "timing-after-high", render_cmd(cmd),
                "a body with secret-dependent timing needs a high guard",
            )
        assert rec_b <= rec_e.update(reg, cmd.var)
        self.em.pend(body_label)
        self.em.emit(Instruction("load", reg=reg, addr=addr))
        self.em.emit(Instruction("store", reg=reg, addr=addr))
        self.em.emit(Instruction("jmp", target=lp))
        return (timing_bound(level).blur(t), bound, ex, rec_b)


def compile_program(src: SourceProgram, cfg: MachineConfig) -> CompileResult:
    """Compile a declared source program, starting from the empty record."""
    compiler = _Compiler(src, cfg)
    timing, effect, out_label, record = compiler.compile_cmd(EMPTY_RECORD, None, src.body)
    if out_label is not None:
        # A trailing exit label needs a landing instruction; account for its
        # step so exact timings stay exact.
        compiler.em.pend(out_label)
        compiler.em.emit(Instruction("nop"))
        timing = timing.then(Timing.exact(1))
        effect = effect.join(WriteEffect.HIGH_ONLY)
    program = RiscProgram(compiler.em.instrs)
    validate_program(program, cfg)
    return CompileResult(
        program=program,
        timing=timing,
        write_effect=effect,
        v2p=dict(compiler.v2p),
        register_levels={name: lev.value for name, lev in cfg.registers},
        memory_levels=tuple(lev.value for lev in cfg.memory_levels),
        width=cfg.width,
        if_h_sites=tuple(compiler.sites),
        record=record,
    )


def compile_text(text: str, cfg: MachineConfig) -> CompileResult:
    src = lang.parse(text, allow_positive_guards=cfg.enable_jlez)
    return compile_program(src, cfg)


def while_record_fixpoint(
    src: SourceProgram,
    cfg: MachineConfig,
    record: RegisterRecord,
    loop: While,
    reg: str,
) -> RegisterRecord:
    """Standalone access to the loop-record iteration the while rule uses."""
    return _Compiler(src, cfg).while_record_fixpoint(record, loop, reg)
