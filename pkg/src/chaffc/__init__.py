"""chaffc: a source-to-source injector of provably non-exploitable bugs.

The package parses a small C subset, executes it under a byte-precise
taint-tracking interpreter, mines attacker-controlled data that the
program ignores, and splices in overflow bugs whose triggers are exact
32-bit magic values and whose effects are machine-checked to stay inside
harmless memory.  See README.md for the command-line entry points.
"""

__version__ = "0.1.0"
