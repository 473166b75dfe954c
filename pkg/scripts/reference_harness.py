#!/usr/bin/env python3
"""Reference harness for the external-process evaluator wire protocol.

The adapter spawns one process per evaluation, writes a single JSON request
to its stdin and reads a single JSON response from stdout:

  request:  {"design": [..], "fidelity": [..], "seed": 123}
  response: {"objective": 1.23, "cost_seconds": 0.45}
        or  {"error": "diverged"}

This harness returns the sum of the design components, discounted by how far
the fidelities sit below their requested values, so it can drive a whole
campaign end to end. Use it as a template when wiring a real simulator.
"""

import json
import sys
import time


def main() -> int:
    request = json.loads(sys.stdin.read())
    design = request["design"]
    fidelity = request["fidelity"]
    start = time.monotonic()

    objective = sum(design) - 0.01 * sum(fidelity)
    cost = max(time.monotonic() - start, 1e-6) + 0.001 * sum(fidelity)

    json.dump({"objective": objective, "cost_seconds": cost}, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
