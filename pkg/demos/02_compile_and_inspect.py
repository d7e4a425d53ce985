"""Compile a source program and inspect what the type-directed pass produced.

The program branches on a secret and later emits a public value, so the
compiler must pad the conditional: both arms end up the same length and the
public output always lands on the same step, whatever the secret was.
"""

import json

from ftnilab import seccomp
from ftnilab.corpus import config_for_source
from ftnilab.lang import parse
from ftnilab.machine import disassemble, initial_state, step

TEXT = """\
high h;
low x;
if h then h := 1 else { h := 1; h := 2 };
x := 7;
out low x
"""

src = parse(TEXT)
cfg = config_for_source(src, width=2)
result = seccomp.compile_program(src, cfg)

print("== source ==")
print(TEXT)
print("== compiled assembly ==")
print(disassemble(result.program))
print("== annotation and side-car ==")
print(json.dumps(result.meta(), sort_keys=True, indent=2))

print("\n== the secret never shifts the public output's step index ==")
for h in range(cfg.word_values):
    state = initial_state(cfg, {result.v2p["h"]: h})
    steps = 0
    seen = None
    while (outcome := step(result.program, state, cfg)) is not None:
        action, state = outcome
        steps += 1
        if action.channel == "low":
            seen = (steps, str(action))
    print(f"  h={h}: low output {seen[1]} at step {seen[0]}, run length {steps}")
