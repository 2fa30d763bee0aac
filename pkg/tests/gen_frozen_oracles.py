"""Regenerate the frozen projected-gradient oracle data.

Run from the repository root:

    python tests/gen_frozen_oracles.py

Writes tests/data/subproblem_oracle.json: random precision-subproblem
instances together with the best objective found by a 1e5-step projected
gradient descent (step 1e-3).  The tests assert that the closed-form solver
meets or beats these values; freezing keeps the (slow) oracle out of the
test runtime while keeping it reproducible from this script.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import projected_gradient_minimize, random_feasible  # noqa: E402

STEPS = 100_000
STEP_SIZE = 1e-3


def acceptance_instances():
    """50 instances: delta = W @ omega_c @ W.T with random feasible omega_c,
    p, d <= 6, v alternating between 2 and 10, m = d."""
    rng = np.random.default_rng(20240601)
    out = []
    for i in range(50):
        p = int(rng.integers(1, 7))
        d = int(rng.integers(1, 7))
        v = 2.0 if i % 2 == 0 else 10.0
        u = 1.0 / v
        w = rng.normal(size=(p, d))
        omega_c = random_feasible(rng, d, u, v)
        delta = w @ omega_c @ w.T
        delta = (delta + delta.T) / 2.0
        out.append({"delta": delta, "m": d, "u": u, "v": v})
    return out


def unit_instances():
    """30 full-rank PD instances, n <= 5, v = 2."""
    rng = np.random.default_rng(20240602)
    out = []
    for _ in range(30):
        n = int(rng.integers(2, 6))
        b = rng.normal(size=(n, n))
        delta = b @ b.T + 0.1 * np.eye(n)
        out.append({"delta": delta, "m": int(rng.integers(1, 8)), "u": 0.5, "v": 2.0})
    return out


def solve_all(instances, label):
    rows = []
    start = time.time()
    for i, inst in enumerate(instances):
        _, best = projected_gradient_minimize(
            inst["delta"], inst["m"], inst["u"], inst["v"], STEPS, STEP_SIZE
        )
        rows.append(
            {
                "delta": inst["delta"].tolist(),
                "m": inst["m"],
                "u": inst["u"],
                "v": inst["v"],
                "oracle_best": best,
            }
        )
        print(f"{label} {i + 1}/{len(instances)}: best={best:.9f} "
              f"({time.time() - start:.0f}s elapsed)")
    return rows


def main():
    data = {
        "steps": STEPS,
        "step_size": STEP_SIZE,
        "acceptance": solve_all(acceptance_instances(), "acceptance"),
        "unit": solve_all(unit_instances(), "unit"),
    }
    out = Path(__file__).parent / "data" / "subproblem_oracle.json"
    out.parent.mkdir(exist_ok=True)
    with open(out, "w") as f:
        json.dump(data, f)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
