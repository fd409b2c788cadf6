"""Sweeping the activation margins on the pick-and-place run.

Runs the same scenario through the command line suite with d_b and d_m set
to 0.2, 0.25 and 0.3 and prints the aggregate table.  Expect a couple of
minutes on one core.
"""

import sys
import tempfile
from pathlib import Path

from sewb import cli

with tempfile.TemporaryDirectory() as tmp:
    lst = Path(tmp) / "list.txt"
    lst.write_text("pickplace\n")
    code = cli.main(["suite", "--list", str(lst), "--sweep", "d_b+d_m=0.2,0.25,0.3", "--out", str(Path(tmp) / "out")])
    print("suite exit code", code, file=sys.stderr)
