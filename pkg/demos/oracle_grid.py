"""Prompt-perturbation grid on one synthetic sequence: how J&F falls off as
the ground-truth box is shifted and scaled, with and without the prompt
group.

    python demos/oracle_grid.py [suite]
"""

import sys

from promptrack.config import ORACLE_SCALES, ORACLE_TRANSLATIONS
from promptrack.oracle_grid import OracleSequence, run_oracle_grid
from promptrack.synthetic import SyntheticBackend, make_benchmark_scripts, render_frame

name = sys.argv[1] if len(sys.argv) > 1 else "slow-rigid"
script = make_benchmark_scripts(0)[name]
frames, labels = zip(*(render_frame(script, t) for t in range(script.duration)))
seq = OracleSequence(name, frames, labels)

for multiprompt in (False, True):
    cells = run_oracle_grid([seq], lambda s: SyntheticBackend(script), multiprompt=multiprompt)
    print("multi-prompt" if multiprompt else "single prompt")
    print("   s \\ tx " + " ".join(f"{tx:+6.2f}" for tx in ORACLE_TRANSLATIONS))
    for s in ORACLE_SCALES:
        print(f"   {s:5.2f}   " + " ".join(f"{cells[(tx, s)]:6.3f}" for tx in ORACLE_TRANSLATIONS))
