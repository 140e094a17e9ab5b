"""Command-line front end: simulate, oracle, compare, conformance.

Exit codes: 0 success, 2 invalid scenario or arguments, 3 simulation and
closed form disagree beyond the threshold. ``CGSIM_LOG_LEVEL`` sets log
verbosity (default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from .cg_core import occasions_available_flexible, occasions_available_legacy
from .compare import METRICS, compare_with_oracle
from .conformance import run_matrix
from .errors import ConfigurationError
from .gnb_model import BlerModel, LinkModel
from .oracle import (
    DedicatedCgSummary,
    SharedPoolConfig,
    composed_error,
    find_min_kplus,
    mean_alignment_delay,
    mean_repetitions_uniform,
    p_at_least_one_rep,
    p_common_nack_recovery,
    p_shared_collision,
    p_unknown_detection,
)

EXIT_OK, EXIT_INVALID, EXIT_MISMATCH = 0, 2, 3

def _link(a) -> LinkModel:
    return LinkModel(p_transmit=a.p_t, p_detect_energy=a.p_e, p_id_decode=a.p_d,
                     p_misdetect=a.p_md, p_common_nack_decode=a.p_cn)


def _pool(a) -> SharedPoolConfig:
    return SharedPoolConfig(a.k_plus, a.n_ues, a.q)


def _ded(a) -> DedicatedCgSummary:
    spacing = None if a.flexible else a.a
    if a.b is not None:
        return DedicatedCgSummary.at_occasion(a.b, a.K, a.gamma, rv0_spacing=spacing)
    return DedicatedCgSummary(p_arrival=a.p_arrival, K=a.K, gamma=a.gamma, rv0_spacing=spacing)


def _bler(a) -> BlerModel:
    return BlerModel(kind=a.bler, epsilon=a.epsilon, payload_bits=a.payload_bits)


# formula -> (input names, evaluator)
FORMULAS = {
    "at_least_one_rep": (("K", "N", "T"), lambda a: p_at_least_one_rep(a.K, a.N, a.T)),
    "unknown_detection": (("p_t", "p_e", "p_d", "p_md"), lambda a: p_unknown_detection(_link(a))),
    "common_nack_recovery": (("p_t", "p_e", "p_d", "p_md", "p_cn"),
                             lambda a: p_common_nack_recovery(_link(a))),
    "shared_collision": (("q", "k_plus", "n_ues"), lambda a: p_shared_collision(_pool(a))),
    "composed_error": (("K", "b", "p_arrival", "flexible", "a", "gamma", "bler", "epsilon",
                        "q", "k_plus", "n_ues"),
                       lambda a: composed_error(_ded(a), _pool(a), _bler(a))),
    "find_min_kplus": (("K", "b", "p_arrival", "flexible", "a", "gamma", "bler", "epsilon",
                        "q", "n_ues", "target", "k_max"),
                       lambda a: find_min_kplus(_ded(a), _pool(a), _bler(a), a.target, a.k_max)),
    "alignment_delay": (("p", "m"), lambda a: mean_alignment_delay(a.p, a.m)),
    "occasions_legacy": (("K", "a", "b"), lambda a: occasions_available_legacy(a.K, a.a, a.b)),
    "occasions_flexible": (("K", "b"), lambda a: occasions_available_flexible(a.K, a.b)),
    "mean_reps": (("K", "a", "flexible"),
                  lambda a: mean_repetitions_uniform(a.K, None if a.flexible else a.a)),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgsim", description="Configured-grant uplink simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write metrics, CDF and figures")
    s.add_argument("--scenario", required=True, help="scenario JSON file")
    s.add_argument("--seed", type=int, default=None, help="master seed (overrides the file)")
    s.add_argument("--replications", type=int, default=None)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int, default=1, help="parallel replication processes")
    s.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    s.add_argument("--trace", action="store_true", help="also write trace.csv for replication 0")

    o = sub.add_parser("oracle", help="evaluate one closed form, print one CSV row")
    o.add_argument("formula", choices=sorted(FORMULAS))
    o.add_argument("--K", type=int, default=4)
    o.add_argument("--N", type=int, default=16, help="period in slots")
    o.add_argument("--T", type=int, default=0, help="gap between repetitions in slots")
    o.add_argument("--a", type=int, default=1, help="RV0 spacing of the pattern")
    o.add_argument("--b", type=int, default=None, help="arrival occasion (1-based)")
    o.add_argument("--p-arrival", type=float, default=None)
    o.add_argument("--flexible", action="store_true")
    o.add_argument("--p-t", type=float, default=1.0)
    o.add_argument("--p-e", type=float, default=0.99)
    o.add_argument("--p-d", type=float, default=0.95)
    o.add_argument("--p-md", type=float, default=0.01)
    o.add_argument("--p-cn", type=float, default=0.99)
    o.add_argument("--q", type=float, default=0.1)
    o.add_argument("--k-plus", type=int, default=4)
    o.add_argument("--n-ues", type=int, default=10)
    o.add_argument("--gamma", type=float, default=10.0, help="linear SINR")
    o.add_argument("--bler", choices=("bernoulli", "finite_blocklength"), default="bernoulli")
    o.add_argument("--epsilon", type=float, default=0.1)
    o.add_argument("--payload-bits", type=int, default=256)
    o.add_argument("--target", type=float, default=1e-5)
    o.add_argument("--k-max", type=int, default=64)
    o.add_argument("--p", type=int, default=4, help="CG period in slots")
    o.add_argument("--m", type=int, default=1, help="number of offset CGs")

    c = sub.add_parser("compare", help="simulate and compare one metric with its closed form")
    c.add_argument("--scenario", required=True)
    c.add_argument("--metric", required=True, choices=METRICS)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--replications", type=int, default=None)
    c.add_argument("--threshold", type=float, default=3.0, help="allowed |z|")

    sub.add_parser("conformance", help="run the capability-gating matrix")
    return p


def _cmd_simulate(a) -> int:
    from .engine import run_replications
    from .scenario import load_scenario

    sc = load_scenario(a.scenario)
    if a.trace:
        sc.trace = True
    report = run_replications(sc, a.replications, a.seed, workers=a.workers)
    paths = report.export(a.out)
    if not a.no_plots:
        from .plotting import render
        paths.update(render(report, a.out))
    if a.trace:
        path = os.path.join(a.out, "trace.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("symbol", "event", "ue_id", "harq_id", "info"))
            w.writerows(report.trace)
        paths["trace"] = path
    summary = report.summary()
    print(f"offered={summary['offered']} delivered={summary['delivered']} "
          f"reliability={summary['reliability']}")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_oracle(a) -> int:
    if a.formula in ("composed_error", "find_min_kplus") and a.b is None and a.p_arrival is None:
        a.p_arrival = 1.0 / a.K
    names, fn = FORMULAS[a.formula]
    value = fn(a)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("formula",) + names + ("value",))
    w.writerow((a.formula,) + tuple(getattr(a, n) for n in names)
               + ("none" if value is None else value,))
    return EXIT_OK


def _cmd_compare(a) -> int:
    from .scenario import load_scenario

    sc = load_scenario(a.scenario)
    res = compare_with_oracle(sc, a.metric, a.replications, a.seed)
    print(json.dumps({"metric": res.metric, "simulated": res.simulated,
                      "analytical": res.analytical, "z_score": res.z_score,
                      "n": res.n, "note": res.note}, indent=2))
    if res.covered and not res.passes(a.threshold):
        return EXIT_MISMATCH
    return EXIT_OK


def _cmd_conformance(a) -> int:
    results = run_matrix()
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.row}" + (f" ({r.detail})" if r.detail else ""))
    print(f"{sum(r.passed for r in results)}/{len(results)} rows pass")
    return EXIT_OK if all(r.passed for r in results) else EXIT_MISMATCH


COMMANDS = {"simulate": _cmd_simulate, "oracle": _cmd_oracle,
            "compare": _cmd_compare, "conformance": _cmd_conformance}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CGSIM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
