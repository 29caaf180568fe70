#!/usr/bin/env python3
"""Smoke test for the coride_py extension module.

Build the extension first, then run this script from the repository root:

    cargo build -p coride-py --release
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def import_extension():
    candidates = [
        REPO_ROOT / "target" / "release" / "libcoride_py.so",
        REPO_ROOT / "target" / "debug" / "libcoride_py.so",
        REPO_ROOT / "target" / "release" / "libcoride_py.dylib",
        REPO_ROOT / "target" / "debug" / "libcoride_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("extension not built; run `cargo build -p coride-py` first")
    stage = Path(tempfile.mkdtemp(prefix="coride_py_"))
    shutil.copy(built, stage / "coride_py.so")
    sys.path.insert(0, str(stage))
    import coride_py

    return coride_py


def approx(a, b, tol=1e-9):
    return abs(a - b) < tol


def main():
    m = import_extension()
    checks = 0

    def ok(label, condition):
        nonlocal checks
        if not condition:
            sys.exit(f"FAIL: {label}")
        checks += 1
        print(f"ok: {label}")

    # Worlds and distances.
    w1 = m.World.radius(1)
    ok("radius-1 world has 7 cells", w1.num_cells == 7)
    w2 = m.World.radius(2)
    ok("radius-2 world has 19 cells", w2.num_cells == 19)
    ok("some radius-2 cell has 6 neighbors",
       any(len(w2.neighbors(g)) == 6 for g in range(w2.num_cells)))
    ok("grid distance is symmetric",
       all(w2.distance(a, b) == w2.distance(b, a)
           for a in range(w2.num_cells) for b in range(w2.num_cells)))

    case = m.World.case_study(0.2)
    ok("case-study world has 21 cells in 3 districts",
       case.num_cells == 21 and case.num_districts == 3)
    rates = sorted(set(case.sampling_rates()))
    ok("case-study sampling rates are 60/80/100%",
       len(rates) == 3 and approx(rates[0], 0.6) and approx(rates[1], 0.8)
       and approx(rates[2], 1.0))
    ok("world spec text round-trips",
       m.World.from_spec(case.spec_text()).num_cells == 21)

    # Entropy and KL primitives.
    ok("entropy(10, 10) = 0", m.entropy(10, 10) == 0.0)
    ok("entropy(5, 10) = -0.5 ln 0.5", approx(m.entropy(5, 10), 0.34657359027997264))
    ok("entropy(0, 7) = 0", m.entropy(0, 7) == 0.0)
    ok("KL(Poisson(2) || Poisson(1)) = 2 ln 2 - 1",
       approx(m.kl_poisson(2.0, 1.0), 2.0 * math.log(2.0) - 1.0))
    ok("KL(P || P) = 0", m.kl_poisson(3.0, 3.0) == 0.0)

    # Fake orders.
    center = next(g for g in range(w2.num_cells) if len(w2.neighbors(g)) == 6)
    ok("interior grid offers 7 fake orders", w2.fake_order_count(center) == 7)
    moves = m.fake_order_moves(w2, center)
    ok("fake orders include the stay move", (center, center) in moves)

    # Selected-k sampling.
    picks = m.selected_k([5.0, 1.0, 1.0], 1, 0.01, seed=7)
    ok("low temperature selects the argmax", picks == [0])
    a = m.selected_k([0.3, 0.9, 0.1, 0.5], 3, 1.0, seed=42)
    b = m.selected_k([0.3, 0.9, 0.1, 0.5], 3, 1.0, seed=42)
    ok("selection is seed-deterministic", a == b and len(set(a)) == 3)

    # Temperature annealing.
    ok("temperature starts at 1.0", m.anneal_temperature(0) == 1.0)
    ok("temperature floors at 0.01", m.anneal_temperature(10**6) == 0.01)
    ok("geometric midpoint is 0.1",
       approx(m.anneal_temperature(500, 1.0, 0.01, 1000), 0.1))

    # A short seeded episode under a rule policy.
    sim = m.Simulator(case, vehicles_per_grid=2, seed=3)
    total = sim.total_vehicles()
    ok("simulator starts with 2 vehicles per grid", total == 42)
    for _ in range(10):
        sim.step_rule("ran")
        ok_conserved = sim.total_vehicles() == total
        if not ok_conserved:
            sys.exit("FAIL: vehicle conservation")
    checks += 1
    print("ok: vehicle conservation over 10 steps")
    stats = sim.metrics()
    ok("episode accumulated income", stats["adi"] > 0.0)
    ok("ORR is a rate", 0.0 <= stats["orr"] <= 1.0)
    ok("clock advanced", sim.clock == 10)

    n, o, e, f, d = sim.observe(0)
    ok("observation entropy matches the primitive", approx(e, m.entropy(n, o)))
    ok("order stats vector has fixed length 5", len(d) == 5)

    # A fleet move relocates one idle vehicle.
    sim2 = m.Simulator(w1, vehicles_per_grid=1, seed=0, base_rate=0.0)
    dest = w1.neighbors(0)[0]
    sim2.fleet_move(0, dest)
    ok("fleet move lands one idle vehicle at the neighbor", sim2.idle(dest) >= 1)
    ok("fleet moves never earn income", sim2.metrics()["adi"] == 0.0)

    print(f"\nall {checks} smoke checks passed")


if __name__ == "__main__":
    main()
