"""Batch command-line entry point.

Subcommands: ``compile`` a source file to assembly plus a JSON side-car,
``run`` an assembly file (optionally under a scripted fault injection),
``inject`` (run with a mandatory fault script), ``check`` an assembly file
against one of the three security properties, and ``demo-hash`` for the
bundled keyed-hash showcase.

Exit codes: 0 success/secure, 1 I/O or parse error, 2 type error,
3 violation, 4 resource budget exceeded, 5 demo mismatch, 64 usage error.
The environment variable FTNI_BUDGET caps checker state-space size.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus, lang, seccomp
from .faultlab import TAU
from .machine import (
    HIGH,
    LOW,
    AssemblyError,
    MachineConfig,
    RiscProgram,
    RiscSystem,
    assemble,
    disassemble,
    initial_state,
    run as machine_run,
    structurally_equivalent,
    validate_program,
)
from .verify import (
    BudgetExceeded,
    CheckConfig,
    check_pni,
    check_poni,
    check_strong_security,
    check_timing_balance,
)
from .faultlab import environment_from_text

EXIT_OK = 0
EXIT_IO = 1
EXIT_TYPE = 2
EXIT_VIOLATION = 3
EXIT_BUDGET = 4
EXIT_MISMATCH = 5
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors must not collide with type errors
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# compile
# ---------------------------------------------------------------------------


def cmd_compile(args) -> int:
    try:
        text = _read(args.source)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read {args.source}: {exc}")
    try:
        src = lang.parse(text, allow_positive_guards=args.jlez)
    except lang.ParseError as exc:
        return _fail(EXIT_IO, f"parse error: {exc}")
    cfg = corpus.config_for_source(src, args.width, enable_jlez=args.jlez)
    try:
        result = seccomp.compile_program(src, cfg)
    except seccomp.CompileError as exc:
        return _fail(EXIT_TYPE, f"type error: {exc}")
    try:
        Path(args.out).write_text(disassemble(result.program), encoding="utf-8")
        Path(args.meta).write_text(
            json.dumps(result.meta(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write output: {exc}")
    print(f"compiled {len(result.program)} instructions;"
          f" timing {result.timing.render()}, writes {result.write_effect.value}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# configuration recovery for run/check
# ---------------------------------------------------------------------------


def _sidecar(asm_path: str) -> dict | None:
    base = Path(asm_path)
    for candidate in (base.with_suffix(".meta.json"), Path(str(base) + ".meta.json")):
        if candidate.exists():
            return json.loads(candidate.read_text(encoding="utf-8"))
    return None


def _config_from_meta(meta: dict, width: int | None) -> MachineConfig:
    regs = tuple(
        (name, LOW if lev == "L" else HIGH)
        for name, lev in sorted(meta["register_levels"].items())
    )
    mem = tuple(LOW if lev == "L" else HIGH for lev in meta["memory_levels"])
    return MachineConfig(width or meta["width"], regs, mem, enable_jlez=True)


def _inferred_config(program: RiscProgram, width: int) -> MachineConfig:
    """Fallback when no side-car exists: levels by register-name convention.

    Registers named rl* are low and rh* are high; anything else, and every
    memory cell, is treated as high (the conservative choice for secrecy).
    """
    regs = tuple(
        (name, LOW if name.startswith("rl") else HIGH)
        for name in sorted(program.registers())
    )
    mem = tuple(HIGH for _ in range(program.max_address() + 1))
    return MachineConfig(width, regs, mem, enable_jlez=True)


def _load_program(asm_path: str, width: int | None):
    program = assemble(_read(asm_path))
    meta = _sidecar(asm_path)
    if meta is not None:
        cfg = _config_from_meta(meta, width)
    else:
        cfg = _inferred_config(program, width or 8)
    validate_program(program, cfg)
    return program, cfg, meta


# ---------------------------------------------------------------------------
# run / inject
# ---------------------------------------------------------------------------


def _parse_fault_script(text: str) -> dict[int, frozenset[str]]:
    script: dict[int, frozenset[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(":")
        try:
            index = int(head.strip())
        except ValueError:
            raise ValueError(f"fault script line {lineno}: bad step index {head!r}")
        names = rest.strip()
        script[index] = frozenset() if names in ("", "-") else frozenset(names.split(","))
    return script


def cmd_run(args) -> int:
    try:
        program, cfg, _ = _load_program(args.asm, None)
    except (OSError, AssemblyError) as exc:
        return _fail(EXIT_IO, f"assembly error: {exc}")
    mem: dict[int, int] = {}
    for item in args.mem or ():
        key, _, value = item.partition("=")
        try:
            mem[int(key)] = int(value)
        except ValueError:
            return _fail(EXIT_USAGE, f"bad --mem entry {item!r}")
    script: dict[int, frozenset[str]] = {}
    if args.faults:
        try:
            script = _parse_fault_script(_read(args.faults))
        except (OSError, ValueError) as exc:
            return _fail(EXIT_IO, f"fault script error: {exc}")

    system = RiscSystem(program, cfg)
    state = system.encode(initial_state(cfg, mem))
    limit = args.steps if args.steps is not None else 10_000
    for index in range(limit):
        stuck_before = system.step(state) is None
        if stuck_before and args.steps is None and index >= max(script, default=-1) + 1:
            break
        faults = script.get(index, frozenset())
        bad = faults - system.faulty_names
        if bad:
            return _fail(EXIT_IO, f"fault script names non-flippable locations: {sorted(bad)}")
        pc = system.decode(state).pc
        if stuck_before:
            action, state = TAU, state
        else:
            flipped = state ^ system.mask_of(faults)
            outcome = system.step(flipped)
            if outcome is None:
                action, state = TAU, flipped
            else:
                action, state = outcome
        rendered = ",".join(sorted(faults))
        print(f"{pc}; {action}; flipped={{{rendered}}}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    try:
        program, cfg, _ = _load_program(args.asm, args.width)
    except (OSError, AssemblyError) as exc:
        return _fail(EXIT_IO, f"assembly error: {exc}")
    check = CheckConfig(depth=args.depth)
    try:
        if args.mode == "ss":
            verdict = check_strong_security(program, cfg, check)
        elif args.mode == "poni":
            verdict = check_poni(program, cfg, check)
        else:
            if not args.env:
                return _fail(EXIT_USAGE, "--mode pni requires --env")
            try:
                env = environment_from_text(_read(args.env))
            except (OSError, ValueError) as exc:
                return _fail(EXIT_IO, f"environment file error: {exc}")
            verdict = check_pni(program, cfg, env, check)
    except BudgetExceeded as exc:
        return _fail(EXIT_BUDGET, f"resource budget exceeded: {exc}")
    print(json.dumps(verdict.to_json(), sort_keys=True))
    return EXIT_OK if verdict.secure else EXIT_VIOLATION


# ---------------------------------------------------------------------------
# demo-hash
# ---------------------------------------------------------------------------


def cmd_demo_hash(args) -> int:
    if args.width < 8:
        return _fail(EXIT_USAGE, "--width must be at least 8 for the hash demo")
    src = corpus.hash_source()
    cfg = corpus.hash_config(args.width)
    try:
        result = seccomp.compile_program(src, cfg)
    except seccomp.CompileError as exc:
        return _fail(EXIT_MISMATCH, f"hash program failed to type-check: {exc}")
    print(f"hash program compiled: {len(result.program)} instructions,"
          f" timing {result.timing.render()}, writes {result.write_effect.value}")

    expected_shape = assemble(corpus.HASH_EXPECTED_SHAPE)
    ok, detail = structurally_equivalent(result.program, expected_shape)
    print(f"structural shape check: {'ok' if ok else detail}")
    if not ok:
        return EXIT_MISMATCH

    for (i, j, p, q, r, m) in corpus.HASH_SAMPLES:
        mem = {
            result.v2p["i"]: i,
            result.v2p["p"]: p,
            result.v2p["q"]: q,
            result.v2p["r"]: r,
            result.v2p["m"]: m,
        }
        _, final, done = machine_run(result.program, initial_state(cfg, mem), cfg, 100_000)
        got = final.mem[result.v2p["source"]]
        want = corpus.hash_reference(i, p, q, r, m)
        status = "ok" if done and got == want else "MISMATCH"
        print(f"hash(i={i}, j={j}, p={p}, q={q}, r={r}, m={m}) = {got}, reference {want}: {status}")
        if status != "ok":
            return EXIT_MISMATCH

    small_src = lang.parse(corpus.SHRUNKEN_HASH, allow_positive_guards=True)
    small_cfg = corpus.config_for_source(small_src, 2, enable_jlez=True)
    small = seccomp.compile_program(small_src, small_cfg)
    try:
        verdict = check_strong_security(small.program, small_cfg)
    except BudgetExceeded as exc:
        return _fail(EXIT_BUDGET, f"resource budget exceeded: {exc}")
    print(f"reduced variant at width 2: strong security {verdict.status}")
    balanced, _ = check_timing_balance(small, small_cfg)
    print(f"reduced variant secret sweep: {'identical public timing' if balanced else 'DIVERGED'}")
    if not verdict.secure or not balanced:
        return EXIT_MISMATCH
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ftni", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a source file to assembly")
    c.add_argument("source")
    c.add_argument("--width", type=int, default=8)
    c.add_argument("--jlez", action="store_true", help="enable the signed-jump extension")
    c.add_argument("--out", required=True, help="assembly output path")
    c.add_argument("--meta", required=True, help="JSON side-car output path")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="execute an assembly file")
    r.add_argument("asm")
    r.add_argument("--mem", action="append", metavar="ADDR=VAL")
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--faults", help="fault script: lines 'step: loc1,loc2' ('-' for none)")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("inject", help="run under a mandatory fault script")
    i.add_argument("asm")
    i.add_argument("--mem", action="append", metavar="ADDR=VAL")
    i.add_argument("--steps", type=int, default=None)
    i.add_argument("--faults", required=True)
    i.set_defaults(func=cmd_run)

    k = sub.add_parser("check", help="check a security property")
    k.add_argument("asm")
    k.add_argument("--mode", required=True, choices=("ss", "poni", "pni"))
    k.add_argument("--depth", type=int, default=4)
    k.add_argument("--width", type=int, default=None)
    k.add_argument("--env", help="environment table (required for pni)")
    k.set_defaults(func=cmd_check)

    d = sub.add_parser("demo-hash", help="compile and validate the keyed-hash showcase")
    d.add_argument("--width", type=int, default=8)
    d.set_defaults(func=cmd_demo_hash)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
