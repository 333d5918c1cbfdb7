#!/usr/bin/env python3
"""Smoke test for the evifuse_py extension module.

Build the module first:

    cargo build --release -p evifuse-py --features extension-module

then run this script from the repository root (or pass the module path as
the first argument).
"""

import math
import shutil
import sys
import sysconfig
import tempfile
from pathlib import Path


def locate_module() -> Path:
    if len(sys.argv) > 1:
        return Path(sys.argv[1])
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libevifuse_py.so", "evifuse_py.dll", "libevifuse_py.dylib")
    ]
    for candidate in candidates:
        if candidate.exists():
            return candidate
    sys.exit(
        "evifuse_py library not found; build it with\n"
        "  cargo build --release -p evifuse-py --features extension-module"
    )


def import_module(library: Path):
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    staging = Path(tempfile.mkdtemp(prefix="evifuse-py-"))
    shutil.copy(library, staging / f"evifuse_py{suffix}")
    sys.path.insert(0, str(staging))
    import evifuse_py

    return evifuse_py


def main() -> None:
    ef = import_module(locate_module())

    # Combinatorial constants.
    assert ef.pair_count(7) == 8001
    assert ef.conflicting_pair_count(7) == 966
    assert math.isclose(ef.conflict_probability(7), 966 / 8001)
    assert math.isclose(ef.weight_of_conflict(0.25), -math.log(0.75))
    constants = ef.error_rate_constants()
    assert math.isclose(constants["pairs_per_cluster"], 94.8979591836, rel_tol=1e-9)
    assert ef.classification_error_rate(0.0) == 0.0

    # Evidence arithmetic on a two-target frame.
    frame = ef.Frame(2)
    assert frame.labels == ["A", "B"]
    a = frame.report(1, "A", 0.5)
    b = frame.report(2, "B", 0.5)
    both = frame.parse_line("3,A|B,0.25")
    assert both.focal == "A|B"
    assert math.isclose(ef.pairwise_conflict(a, b), 0.25)
    assert ef.pairwise_conflict(a, both) == 0.0
    assert math.isclose(ef.subset_conflict([a, b]), 0.25)
    together = ef.metaconflict([a, b], [0, 0], 2)
    apart = ef.metaconflict([a, b], [0, 1], 2)
    assert apart == 0.0 and math.isclose(together, 0.25)

    # The engine separates a conflicting pair and freezes promoted reports.
    engine = ef.Engine(targets=2, clusters=2, stm=2, ltm=2, seed=7)
    engine.process(a)
    view = engine.process(b)
    track_of = {
        id_: t["track"] for t in view["tracks"] for id_ in t["permanent"] + t["tentative"]
    }
    assert track_of[1] != track_of[2], view
    engine.process_line("3,A,0.6")
    engine.process_line("4,B,0.6")
    engine.process_line("5,A|B,0.3")
    # stm holds {4, 5}; everything older is frozen in ltm or history.
    permanent = engine.permanent_view()
    fixed = {id_ for t in permanent["tracks"] for id_ in t["permanent"]}
    assert fixed == {1, 2, 3}, permanent
    assert "[stm]" in engine.snapshot()

    # One-shot clustering agrees with the pairwise conflict structure.
    labels = ef.cluster_reports([a, b], clusters=2, seed=1)
    assert labels[0] != labels[1]

    # Dataset generation is deterministic and feeds the protocol runner.
    first = [(r.id, r.focal, r.bpn) for r in ef.generate_dataset(seed=5)]
    second = [(r.id, r.focal, r.bpn) for r in ef.generate_dataset(seed=5)]
    assert first == second and len(first) == 125
    record = ef.run_config(seed=1, stm=5, ltm=0)
    assert record["invocations"] == 121
    assert len(record["step_weights"]) == 25
    assert record["error_pct"] >= 0.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
