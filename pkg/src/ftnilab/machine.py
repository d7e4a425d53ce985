"""RISC-like target machine.

Instruction set, assembly text format, label resolution, the deterministic
small-step semantics, and the bit-level encoding that exposes a machine as a
fault-prone system (registers and data memory faulty, program counter and
code shielded).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from collections import Counter

from .faultlab import (
    Action,
    FaultProneSystem,
    Location,
    Tolerance,
    TAU,
    output,
)


class SecurityLevel(Enum):
    LOW = "L"
    HIGH = "H"

    def __le__(self, other: "SecurityLevel") -> bool:
        return self is other or (self is SecurityLevel.LOW and other is SecurityLevel.HIGH)


LOW = SecurityLevel.LOW
HIGH = SecurityLevel.HIGH

BINARY_OPS = ("add", "sub", "mul", "and")
JUMP_OPS = ("jmp", "jz", "jlez")
CHANNELS = ("low", "high")


class AssemblyError(Exception):
    """Raised for malformed assembly text or ill-formed programs."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}" + (f", col {column}" if column is not None else "") + ")" if line else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Instruction:
    op: str
    label: str | None = None
    reg: str | None = None
    reg2: str | None = None
    addr: int | None = None
    value: int | None = None
    target: str | None = None
    channel: str | None = None

    def render(self) -> str:
        body: str
        if self.op == "load":
            body = f"load {self.reg} {self.addr}"
        elif self.op == "store":
            body = f"store {self.addr} {self.reg}"
        elif self.op == "jmp":
            body = f"jmp {self.target}"
        elif self.op in ("jz", "jlez"):
            body = f"{self.op} {self.target} {self.reg}"
        elif self.op == "nop":
            body = "nop"
        elif self.op == "movek":
            body = f"movek {self.reg} {self.value}"
        elif self.op == "mover":
            body = f"mover {self.reg} {self.reg2}"
        elif self.op in BINARY_OPS:
            body = f"{self.op} {self.reg} {self.reg2}"
        elif self.op == "out":
            body = f"out {self.channel} {self.reg}"
        else:
            raise ValueError(f"unknown opcode {self.op}")
        return f"{self.label}: {body}" if self.label else body

    def registers(self) -> tuple[str, ...]:
        return tuple(r for r in (self.reg, self.reg2) if r is not None)


class RiscProgram:
    """An ordered, well-formed instruction list with resolvable labels."""

    def __init__(self, instructions: tuple[Instruction, ...] | list[Instruction]):
        self.instructions = tuple(instructions)
        labels: dict[str, int] = {}
        for i, instr in enumerate(self.instructions):
            if instr.label is not None:
                if instr.label in labels:
                    raise AssemblyError(f"duplicate label {instr.label!r}")
                labels[instr.label] = i
        self._labels = labels
        for instr in self.instructions:
            if instr.target is not None and instr.target not in labels:
                raise AssemblyError(f"unknown label {instr.target!r}")

    def __len__(self) -> int:
        return len(self.instructions)

    def __getitem__(self, i: int) -> Instruction:
        return self.instructions[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, RiscProgram) and self.instructions == other.instructions

    def __hash__(self) -> int:
        return hash(self.instructions)

    def resolve_label(self, label: str) -> int:
        if label not in self._labels:
            raise AssemblyError(f"unknown label {label!r}")
        return self._labels[label]

    def labels(self) -> dict[str, int]:
        return dict(self._labels)

    def registers(self) -> tuple[str, ...]:
        seen: list[str] = []
        for instr in self.instructions:
            for reg in instr.registers():
                if reg not in seen:
                    seen.append(reg)
        return tuple(seen)

    def max_address(self) -> int:
        addrs = [i.addr for i in self.instructions if i.addr is not None]
        return max(addrs) if addrs else -1


_LABEL_RE = re.compile(r"^[A-Za-z_]\w*$")


def assemble(text: str) -> RiscProgram:
    """Parse assembly text: one instruction per line, optional 'label:' prefix."""
    instructions: list[Instruction] = []
    seen_labels: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        label = None
        if ":" in line:
            head, _, rest = line.partition(":")
            label = head.strip()
            if not _LABEL_RE.match(label):
                raise AssemblyError(f"bad label {label!r}", lineno, raw.index(":"))
            if label in seen_labels:
                raise AssemblyError(f"duplicate label {label!r}", lineno)
            seen_labels.add(label)
            line = rest.strip()
        parts = line.split()
        if not parts:
            raise AssemblyError("label with no instruction", lineno)
        op, args = parts[0], parts[1:]

        def want(n: int) -> None:
            if len(args) != n:
                raise AssemblyError(f"{op} expects {n} operand(s), got {len(args)}", lineno)

        def number(text_: str) -> int:
            if not text_.isdigit():
                raise AssemblyError(f"expected a decimal number, got {text_!r}", lineno)
            return int(text_)

        try:
            if op == "load":
                want(2)
                instr = Instruction("load", label, reg=args[0], addr=number(args[1]))
            elif op == "store":
                want(2)
                instr = Instruction("store", label, reg=args[1], addr=number(args[0]))
            elif op == "jmp":
                want(1)
                instr = Instruction("jmp", label, target=args[0])
            elif op in ("jz", "jlez"):
                want(2)
                instr = Instruction(op, label, target=args[0], reg=args[1])
            elif op == "nop":
                want(0)
                instr = Instruction("nop", label)
            elif op == "movek":
                want(2)
                instr = Instruction("movek", label, reg=args[0], value=number(args[1]))
            elif op == "mover":
                want(2)
                instr = Instruction("mover", label, reg=args[0], reg2=args[1])
            elif op in BINARY_OPS:
                want(2)
                instr = Instruction(op, label, reg=args[0], reg2=args[1])
            elif op == "out":
                want(2)
                if args[0] not in CHANNELS:
                    raise AssemblyError(f"channel must be low or high, got {args[0]!r}", lineno)
                instr = Instruction("out", label, channel=args[0], reg=args[1])
            else:
                raise AssemblyError(f"unknown mnemonic {op!r}", lineno, raw.find(op))
        except AssemblyError:
            raise
        instructions.append(instr)
    return RiscProgram(instructions)


def disassemble(program: RiscProgram) -> str:
    return "\n".join(instr.render() for instr in program.instructions) + "\n"


# ---------------------------------------------------------------------------
# Machine configuration, states, and semantics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MachineConfig:
    """Word width, the register bank with levels, and the data memory layout."""

    width: int
    registers: tuple[tuple[str, SecurityLevel], ...]
    memory_levels: tuple[SecurityLevel, ...]
    enable_jlez: bool = False

    @property
    def word_values(self) -> int:
        return 1 << self.width

    @property
    def memory_size(self) -> int:
        return len(self.memory_levels)

    def register_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.registers)

    def register_index(self, name: str) -> int:
        for i, (reg, _) in enumerate(self.registers):
            if reg == name:
                return i
        raise KeyError(name)

    def register_level(self, name: str) -> SecurityLevel:
        return self.registers[self.register_index(name)][1]

    def registers_of_level(self, level: SecurityLevel) -> tuple[str, ...]:
        return tuple(name for name, lev in self.registers if lev is level)


def standard_config(
    width: int,
    low_regs: int = 2,
    high_regs: int = 2,
    memory_levels: tuple[SecurityLevel, ...] = (),
    enable_jlez: bool = False,
) -> MachineConfig:
    regs = tuple((f"rl{i}", LOW) for i in range(low_regs)) + tuple(
        (f"rh{i}", HIGH) for i in range(high_regs)
    )
    return MachineConfig(width, regs, tuple(memory_levels), enable_jlez)


@dataclass(frozen=True)
class MachineState:
    pc: int
    regs: tuple[int, ...]
    mem: tuple[int, ...]


def initial_state(cfg: MachineConfig, mem: dict[int, int] | None = None) -> MachineState:
    cells = [0] * cfg.memory_size
    for addr, val in (mem or {}).items():
        cells[addr] = val % cfg.word_values
    return MachineState(0, (0,) * len(cfg.registers), tuple(cells))


def validate_program(program: RiscProgram, cfg: MachineConfig) -> None:
    names = set(cfg.register_names())
    for i, instr in enumerate(program.instructions):
        for reg in instr.registers():
            if reg not in names:
                raise AssemblyError(f"instruction {i}: unknown register {reg!r}")
        if instr.addr is not None and not (0 <= instr.addr < cfg.memory_size):
            raise AssemblyError(f"instruction {i}: address {instr.addr} out of range")
        if instr.op == "jlez" and not cfg.enable_jlez:
            raise AssemblyError(f"instruction {i}: jlez requires the extension flag")


def signed(value: int, width: int) -> int:
    """Two's-complement reading of a machine word."""
    half = 1 << (width - 1)
    return value - (1 << width) if value >= half else value


def step(
    program: RiscProgram, state: MachineState, cfg: MachineConfig
) -> tuple[Action, MachineState] | None:
    """Execute one instruction; None when the program counter has left the code."""
    if not 0 <= state.pc < len(program):
        return None
    instr = program[state.pc]
    mask = cfg.word_values - 1
    pc1 = state.pc + 1
    if instr.op == "load":
        regs = list(state.regs)
        regs[cfg.register_index(instr.reg)] = state.mem[instr.addr]
        return (TAU, MachineState(pc1, tuple(regs), state.mem))
    if instr.op == "store":
        mem = list(state.mem)
        mem[instr.addr] = state.regs[cfg.register_index(instr.reg)]
        return (TAU, MachineState(pc1, state.regs, tuple(mem)))
    if instr.op == "jmp":
        return (TAU, MachineState(program.resolve_label(instr.target), state.regs, state.mem))
    if instr.op == "jz":
        if state.regs[cfg.register_index(instr.reg)] == 0:
            return (TAU, MachineState(program.resolve_label(instr.target), state.regs, state.mem))
        return (TAU, MachineState(pc1, state.regs, state.mem))
    if instr.op == "jlez":
        if signed(state.regs[cfg.register_index(instr.reg)], cfg.width) <= 0:
            return (TAU, MachineState(program.resolve_label(instr.target), state.regs, state.mem))
        return (TAU, MachineState(pc1, state.regs, state.mem))
    if instr.op == "nop":
        return (TAU, MachineState(pc1, state.regs, state.mem))
    if instr.op == "movek":
        regs = list(state.regs)
        regs[cfg.register_index(instr.reg)] = instr.value & mask
        return (TAU, MachineState(pc1, tuple(regs), state.mem))
    if instr.op == "mover":
        regs = list(state.regs)
        regs[cfg.register_index(instr.reg)] = state.regs[cfg.register_index(instr.reg2)]
        return (TAU, MachineState(pc1, tuple(regs), state.mem))
    if instr.op in BINARY_OPS:
        a = state.regs[cfg.register_index(instr.reg)]
        b = state.regs[cfg.register_index(instr.reg2)]
        if instr.op == "add":
            val = (a + b) & mask
        elif instr.op == "sub":
            val = (a - b) & mask
        elif instr.op == "mul":
            val = (a * b) & mask
        else:
            val = a & b
        regs = list(state.regs)
        regs[cfg.register_index(instr.reg)] = val
        return (TAU, MachineState(pc1, tuple(regs), state.mem))
    if instr.op == "out":
        value = state.regs[cfg.register_index(instr.reg)]
        return (output(instr.channel, value), MachineState(pc1, state.regs, state.mem))
    raise AssemblyError(f"unknown opcode {instr.op}")


def run(
    program: RiscProgram,
    state: MachineState,
    cfg: MachineConfig,
    max_steps: int,
) -> tuple[list[Action], MachineState, bool]:
    """Fault-free execution; returns (output actions, final state, terminated)."""
    outputs: list[Action] = []
    for _ in range(max_steps):
        result = step(program, state, cfg)
        if result is None:
            return outputs, state, True
        action, state = result
        if not action.silent:
            outputs.append(action)
    return outputs, state, step(program, state, cfg) is None


# ---------------------------------------------------------------------------
# Bit-level view: the machine as a fault-prone system
# ---------------------------------------------------------------------------


class RiscSystem(FaultProneSystem):
    """A program plus machine configuration, exposed as bit locations.

    Register and memory bits are faulty; program-counter bits are
    fault-tolerant (the code itself is a fixed parameter, never encoded).
    Bit order within a word is LSB first; location names are "<reg>_<bit>",
    "m<addr>_<bit>", and "pc_<bit>".
    """

    def __init__(self, program: RiscProgram, cfg: MachineConfig):
        validate_program(program, cfg)
        self.program = program
        self.cfg = cfg
        w = cfg.width
        self.pc_bits = max(1, (len(program)).bit_length())
        locations: list[Location] = []
        for name, _ in cfg.registers:
            locations.extend(Location(f"{name}_{b}", Tolerance.FAULTY) for b in range(w))
        for addr in range(cfg.memory_size):
            locations.extend(Location(f"m{addr}_{b}", Tolerance.FAULTY) for b in range(w))
        locations.extend(
            Location(f"pc_{b}", Tolerance.FAULT_TOLERANT) for b in range(self.pc_bits)
        )
        super().__init__(locations)
        self.data_bits = w * (len(cfg.registers) + cfg.memory_size)
        self._pc_shift = self.data_bits
        self.low_mask = 0
        self.high_mask = 0
        pos = 0
        for _, level in cfg.registers:
            chunk = ((1 << w) - 1) << pos
            if level is LOW:
                self.low_mask |= chunk
            else:
                self.high_mask |= chunk
            pos += w
        for level in cfg.memory_levels:
            chunk = ((1 << w) - 1) << pos
            if level is LOW:
                self.low_mask |= chunk
            else:
                self.high_mask |= chunk
            pos += w
        self.pc_mask = ((1 << self.pc_bits) - 1) << self._pc_shift
        self._step_cache: dict[int, tuple[Action, int] | None] = {}

    def encode(self, state: MachineState) -> int:
        w = self.cfg.width
        if not 0 <= state.pc < (1 << self.pc_bits):
            raise ValueError(f"pc {state.pc} not encodable in {self.pc_bits} bits")
        bits = 0
        pos = 0
        for value in state.regs + state.mem:
            bits |= (value & ((1 << w) - 1)) << pos
            pos += w
        bits |= state.pc << self._pc_shift
        return bits

    def decode(self, bits: int) -> MachineState:
        w = self.cfg.width
        word = (1 << w) - 1
        values = []
        pos = 0
        for _ in range(len(self.cfg.registers) + self.cfg.memory_size):
            values.append(bits >> pos & word)
            pos += w
        nregs = len(self.cfg.registers)
        pc = bits >> self._pc_shift & ((1 << self.pc_bits) - 1)
        return MachineState(pc, tuple(values[:nregs]), tuple(values[nregs:]))

    def step(self, state: int) -> tuple[Action, int] | None:
        if state in self._step_cache:
            return self._step_cache[state]
        result = step(self.program, self.decode(state), self.cfg)
        encoded = None if result is None else (result[0], self.encode(result[1]))
        self._step_cache[state] = encoded
        return encoded

    def low_equal(self, a: int, b: int) -> bool:
        return (a ^ b) & self.low_mask == 0


# ---------------------------------------------------------------------------
# Block-structural program comparison
# ---------------------------------------------------------------------------


def _erase(instr: Instruction, block_of_label: dict[str, int]) -> tuple:
    """Drop register identities, keep everything structurally meaningful."""
    target = block_of_label[instr.target] if instr.target is not None else None
    return (instr.op, instr.addr, instr.value, instr.channel, target)


def block_profile(program: RiscProgram):
    """Split at labelled instructions; summarize each block up to register names."""
    leaders = sorted({0} | {i for i, ins in enumerate(program.instructions) if ins.label})
    if not program.instructions:
        return [], []
    bounds = leaders + [len(program)]
    block_of_index = {}
    for b, start in enumerate(leaders):
        for i in range(start, bounds[b + 1]):
            block_of_index[i] = b
    block_of_label = {
        label: block_of_index[idx] for label, idx in program.labels().items()
    }
    profiles = []
    edges = []
    for b, start in enumerate(leaders):
        chunk = program.instructions[start : bounds[b + 1]]
        profiles.append(Counter(_erase(ins, block_of_label) for ins in chunk))
        succ = set()
        for ins in chunk:
            if ins.target is not None:
                succ.add(block_of_label[ins.target])
        last = chunk[-1]
        if last.op != "jmp" and b + 1 < len(leaders):
            succ.add(b + 1)
        edges.append(frozenset(succ))
    return profiles, edges


def structurally_equivalent(a: RiscProgram, b: RiscProgram) -> tuple[bool, str]:
    """Same label graph and per-block instruction multisets, registers erased."""
    pa, ea = block_profile(a)
    pb, eb = block_profile(b)
    if len(pa) != len(pb):
        return False, f"block counts differ: {len(pa)} vs {len(pb)}"
    for i, (ca, cb) in enumerate(zip(pa, pb)):
        if ca != cb:
            missing = ca - cb
            extra = cb - ca
            return False, f"block {i} differs: -{sorted(missing)} +{sorted(extra)}"
    if ea != eb:
        return False, f"label graphs differ: {ea} vs {eb}"
    return True, "equivalent"
