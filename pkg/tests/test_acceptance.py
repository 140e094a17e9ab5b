"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary and when this file is run as a script.
"""
import copy
import json
import math
import random
import time
from pathlib import Path

import pytest

from cgsim.cg_core import RvPattern, occasions_available_flexible, occasions_available_legacy
from cgsim.compare import simulated_comparison
from cgsim.conformance import run_matrix
from cgsim.engine import run_replications, run_scenario
from cgsim.gnb_model import BlerModel, ReceivedSegment, bler, db_to_linear
from cgsim.oracle import (
    DedicatedCgSummary,
    SharedPoolConfig,
    composed_error,
    find_min_kplus,
    p_at_least_one_rep,
    p_common_nack_recovery,
    p_shared_collision,
)
from cgsim.scenario import load_scenario

from test_oracle import tree_error

SCENARIOS = Path(__file__).parent.parent / "scenarios"
RESULTS: dict = {}


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def raw(name):
    return json.loads((SCENARIOS / name).read_text())


def z_binomial(hits, n, p):
    return (hits / n - p) / math.sqrt(p * (1 - p) / n)


# 1 -------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("T,expected", [(0, 0.25), (1, 0.4375), (2, 0.625)])
def test_c01_gap_formula(T, expected):
    sc = load_scenario(SCENARIOS / f"gap_t{T}.json")
    assert p_at_least_one_rep(4, 16, T) == expected
    t0 = time.perf_counter()
    c = run_scenario(sc).pooled()
    took = time.perf_counter() - t0
    z = z_binomial(c.first_period_hits, c.offered, expected)
    ok = abs(z) < 3 and took <= 60 and c.offered == 500_000
    key = f"1/T={T}"
    RESULTS[key] = (f"criterion  1: {'PASS' if ok else 'FAIL'}  T={T} "
                    f"sim={c.first_period_hits / c.offered:.5f} exp={expected} z={z:+.2f} "
                    f"n={c.offered} {took:.1f}s")
    assert ok


# 2 -------------------------------------------------------------------------

def sweep_case(K, a, b, flexible):
    cg = {"ue_id": 0, "cg_id": 0, "period_p": K, "K": K,
          "rv_pattern": str(RvPattern.for_spacing(a)), "rv0_start_k8_exception": False,
          "starting_from_rv0": not flexible, "flexible_start": flexible}
    d = {"schema_version": 1, "profile": "NR_R16", "configured_grants": [cg],
         "enhancements": {"flexible_start": flexible},
         "ues": [{"id": 0, "traffic": {"kind": "deterministic", "period_slots": 2 * K,
                                       "phase_symbols": (b - 1) * 14}}],
         "duration_slots": 6 * K}
    c = run_scenario(load_scenario(d)).pooled()
    assert c.offered == 3
    return c.reps_first_period / c.offered


def test_c02_occasion_counts():
    bad = []
    cases = 0
    for K in range(1, 13):
        for a in (1, 2, 4):
            for b in range(1, K + 1):
                legacy = sweep_case(K, a, b, False)
                flex = sweep_case(K, a, b, True)
                cases += 1
                if legacy != occasions_available_legacy(K, a, b):
                    bad.append(("legacy", K, a, b, legacy))
                if flex != occasions_available_flexible(K, b):
                    bad.append(("flexible", K, a, b, flex))
                if flex < legacy:
                    bad.append(("order", K, a, b))
    record(2, not bad, f"{cases} (K,a,b) points, {len(bad)} mismatches")
    assert not bad, bad[:10]


# 3 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c03_common_nack_recovery():
    sc = load_scenario(SCENARIOS / "common_nack.json")
    c = run_scenario(sc).pooled()
    n = c.initial_bundles
    target = 0.036857
    z = z_binomial(c.common_nack_recovered, n, target)
    z_closed = z_binomial(c.common_nack_recovered, n, p_common_nack_recovery(sc.ues[0].link))
    ok = abs(z) < 3 and n >= 1_000_000
    record(3, ok, f"sim={c.common_nack_recovered / n:.6f} exp={target} z={z:+.2f} "
                  f"(closed form {p_common_nack_recovery(sc.ues[0].link):.6f}, z={z_closed:+.2f}) "
                  f"n={n}")
    assert ok


# 4 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c04_collision_and_composed_error():
    sc = load_scenario(SCENARIOS / "shared_pool.json")
    p = p_shared_collision(SharedPoolConfig(4, 10, 0.1))
    res = simulated_comparison(run_scenario(sc), "shared_collision", p)
    pool = SharedPoolConfig(2, 4, 0.25)
    model = BlerModel(epsilon=0.5)
    exact = all(
        composed_error(DedicatedCgSummary.at_occasion(2, 4, 1.0, rv0_spacing=s), pool, model)
        == float(tree_error(4, 2, 0.5, 2, 4, 0.25, s))
        for s in (None, 1, 2, 4))
    ok = abs(res.z_score) < 3 and exact
    record(4, ok, f"collision sim={res.simulated:.5f} exp={p:.5f} z={res.z_score:+.2f} "
                  f"n={res.n}; composed_error tree match={exact}")
    assert ok


# 5 -------------------------------------------------------------------------

def test_c05_find_min_kplus():
    rnd = random.Random(5)
    bad = 0
    for _ in range(20):
        K = rnd.randint(1, 4)
        ded = DedicatedCgSummary(p_arrival=1.0 / K, K=K, gamma=1.0,
                                 rv0_spacing=rnd.choice([None, 1, 2, 4]))
        n, q = rnd.randint(2, 12), rnd.uniform(0.05, 0.9)
        model = BlerModel(epsilon=rnd.uniform(0.01, 0.5))
        errs = [composed_error(ded, SharedPoolConfig(k, n, q), model) for k in range(1, 33)]
        target = rnd.uniform(min(errs), max(errs))
        scan = next((k for k, e in enumerate(errs, 1) if e <= target), None)
        got = find_min_kplus(ded, SharedPoolConfig(1, n, q), model, target, 32)
        monotone = all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))
        bad += (got != scan) or not monotone
    record(5, bad == 0, f"20 random instances, {bad} disagreements")
    assert bad == 0


# 6 -------------------------------------------------------------------------

def test_c06_fbl_ordering():
    # 4 RBs puts both waterfalls inside the grid, so the check is not vacuous
    model = BlerModel("finite_blocklength", dmrs_overhead=1)
    one = [ReceivedSegment(8, 4, 0, 0)]
    four = [ReceivedSegment(2, 4, 0, i) for i in range(4)]
    grid = [-5 + i for i in range(21)]
    pairs = [(bler(model, db_to_linear(db), one), bler(model, db_to_linear(db), four))
             for db in grid]
    worse = sum(a > b for a, b in pairs)
    strict = sum(a < b for a, b in pairs)
    ok = worse == 0 and strict > 0
    record(6, ok, f"21 SNR points from -5 to 15 dB, {worse} violations, "
                  f"{strict} strictly better")
    assert ok


# 7 -------------------------------------------------------------------------

def test_c07_conformance_matrix():
    results = run_matrix()
    failed = [r.row for r in results if not r.passed]
    record(7, not failed and len(results) == 14,
           f"{len(results) - len(failed)}/{len(results)} rows pass")
    assert not failed


# 8 -------------------------------------------------------------------------

EXPECTED_NO_DFI = [
    (0, "tx", 0, 0, "cg cg=0 to=0 rv=0 uci"),
    (0, "decoded", 0, 0, "latency=14"),
    (56, "retx_timer_expiry", 0, 0, ""),
    (56, "tx", 0, 0, "cg cg=0 to=4 rv=0 uci"),
    (112, "retx_timer_expiry", 0, 0, ""),
    (112, "tx", 0, 0, "cg cg=0 to=8 rv=0 uci"),
    (154, "done_failed", 0, 0, ""),
]
EXPECTED_DFI = [
    (0, "tx", 0, 0, "cg cg=0 to=0 rv=0 uci"),
    (0, "decoded", 0, 0, "latency=14"),
    (28, "dfi_ack", 0, 0, ""),
    (28, "done_ack", 0, 0, ""),
]


def test_c08_nru_timer_trace():
    d = raw("nru_timers.json")
    no_dfi = run_scenario(load_scenario(d)).trace
    d = copy.deepcopy(d)
    d["gnb"]["dfi_enabled"] = True
    dfi = run_scenario(load_scenario(d)).trace
    ok = no_dfi == EXPECTED_NO_DFI and dfi == EXPECTED_DFI
    record(8, ok, f"retx at 56/112, CGT stop at 154, DFI ACK at 28: "
                  f"{'exact match' if ok else 'trace differs'}")
    assert no_dfi == EXPECTED_NO_DFI
    assert dfi == EXPECTED_DFI


# 9 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c09_multi_cg_alignment():
    got = {}
    for m, want in ((1, 2.0), (4, 0.5)):
        c = run_scenario(load_scenario(SCENARIOS / f"multi_cg_m{m}.json")).pooled()
        got[m] = (c.alignment_sum / c.aligned_packets / 14, want, c.aligned_packets)
    ok = all(abs(v - w) <= 0.02 * w and n >= 100_000 for v, w, n in got.values()) \
        and got[4][0] < got[1][0]
    record(9, ok, " ".join(f"M={m}: {v:.4f} (exp {w})" for m, (v, w, _) in got.items())
           + f" n={got[1][2]}")
    assert ok


# 10 ------------------------------------------------------------------------

def test_c10_determinism():
    names = sorted(p.name for p in SCENARIOS.glob("*.json"))
    differ = []
    for name in names:
        sc = load_scenario(SCENARIOS / name)
        sc.duration_slots = min(sc.duration_slots, 20_000)
        reps = min(sc.replications, 2)
        a = run_replications(sc, reps).csv_text()
        b = run_replications(sc, reps).csv_text()
        if a != b:
            differ.append(name)
    record(10, not differ, f"{len(names)} scenarios re-run with the same seed, "
                           f"{len(differ)} differ")
    assert not differ


if __name__ == "__main__":
    import sys
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
