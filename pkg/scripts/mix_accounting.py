"""Search-time accounting for a routing mix.

Prints the per-path tool latency row and the expected modeled search time per
item when the planner routes according to the given category percentages.

    python3 scripts/mix_accounting.py --n 600
    python3 scripts/mix_accounting.py --ratios 100 0 0 0
"""

from __future__ import annotations

import argparse

from mragplan.backends import LatencyModel
from mragplan.core import Category, ToolCallProfile, expected_tool_calls
from mragplan.demo import MIX_RATIOS, counts_from_ratios
from mragplan.evaluator import modeled_search_time


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=600, help="number of items to route")
    ap.add_argument("--ratios", type=float, nargs=4, metavar=("C1", "C2", "C3", "C4"), help="percent per category")
    ap.add_argument("--i2i", type=float, default=LatencyModel.i2i_seconds)
    ap.add_argument("--t2t", type=float, default=LatencyModel.t2t_seconds)
    ap.add_argument("--t2i", type=float, default=LatencyModel.t2i_seconds)
    ap.add_argument("--agent", type=float, default=LatencyModel.agent_infer_seconds)
    args = ap.parse_args()

    latency = LatencyModel(args.i2i, args.t2t, args.t2i, args.agent)
    ratios = dict(zip(Category, args.ratios)) if args.ratios else MIX_RATIOS
    counts = counts_from_ratios(ratios, args.n)

    print("| Path | i2i | t2t | t2i | Tool latency (s) | Items |")
    print("|---|---|---|---|---|---|")
    for cat in Category:
        p = expected_tool_calls(cat)
        cost = modeled_search_time(p, latency)
        print(f"| {cat.code} | {p.i2i_count} | {p.t2t_count} | {p.t2i_count} | {cost:.1f} | {counts[cat]} |")

    totals = ToolCallProfile.total(expected_tool_calls(c) for c in Category for _ in range(counts[c]))
    search = modeled_search_time(totals, latency)
    print()
    print(f"items: {args.n}")
    print(f"tool totals: i2i={totals.i2i_count} t2t={totals.t2t_count} t2i={totals.t2i_count}")
    print(f"modeled search time: {search:.1f} s ({search / args.n:.3f} s/item)")
    print(f"agent inference: {args.n * latency.agent_infer_seconds:.1f} s")


if __name__ == "__main__":
    main()
