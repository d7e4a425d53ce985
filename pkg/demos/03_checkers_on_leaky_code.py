"""Run all three checkers on a leaky hand-written program and a typed one.

The leaky program loads a secret memory cell and prints it on the public
channel.  Strong security fails with a two-state counterexample, the
possibilistic checker exhibits a distinguishing fault-annotated trace, and
the probabilistic checker reports two different exact trace probabilities.
The compiled well-typed variant passes everything.
"""

import json
from fractions import Fraction

from ftnilab import seccomp
from ftnilab.corpus import config_for_source
from ftnilab.faultlab import uniform_environment
from ftnilab.lang import parse
from ftnilab.machine import RiscSystem, assemble, disassemble, standard_config, LOW, HIGH
from ftnilab.verify import (
    CheckConfig,
    check_pni,
    check_poni,
    check_strong_security,
    default_scope,
)

cfg = standard_config(1, 2, 2, (LOW, HIGH))
leaky = assemble("load rh0 1\nout low rh0\n")
print("== leaky program ==")
print(disassemble(leaky))

ss = check_strong_security(leaky, cfg)
print("strong security:", ss.status)
print("  first divergence:", json.dumps(ss.witness["trace"][-1], sort_keys=True))

scope = default_scope(RiscSystem(leaky, cfg))
check = CheckConfig(depth=3, fault_scope=scope)
poni = check_poni(leaky, cfg, check)
print("possibilistic noninterference:", poni.status)
print("  distinguishing trace:", json.dumps(poni.witness["trace"], sort_keys=True))

env = uniform_environment(Fraction(0), scope)
pni = check_pni(leaky, cfg, env, check)
print("probabilistic noninterference (fault-free attacker):", pni.status)
print("  trace", pni.witness["trace"], "probabilities", pni.witness["probabilities"])

print("\n== typed replacement ==")
src = parse("high h; low x; x := 1; out low x")
tcfg = config_for_source(src, 1)
typed = seccomp.compile_program(src, tcfg)
print(disassemble(typed.program))
print("strong security:", check_strong_security(typed.program, tcfg).status)
tscope = default_scope(RiscSystem(typed.program, tcfg))
tcheck = CheckConfig(depth=3, fault_scope=tscope)
print("possibilistic:", check_poni(typed.program, tcfg, tcheck).status)
print(
    "probabilistic:",
    check_pni(typed.program, tcfg, uniform_environment(Fraction(1, 4), tscope), tcheck).status,
)
