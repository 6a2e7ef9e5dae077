"""Annotate, run and evaluate the scripted datasets end to end on mock backends.

    python3 scripts/offline_demo.py --work out/demo
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from mragplan.cli import main as cli
from mragplan.core import save_dataset, write_jsonl
from mragplan.demo import oversupplied_dataset, scripted_run_dataset


def stage(build, work: Path) -> tuple[str, str]:
    examples, fixtures = build()
    work.mkdir(parents=True, exist_ok=True)
    save_dataset(work / "data.jsonl", examples)
    write_jsonl(work / "fixtures.jsonl", fixtures.rows())
    return str(work / "data.jsonl"), str(work / "fixtures.jsonl")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="out/demo")
    ap.add_argument("--cap", type=int, default=2, help="per-category cap for the annotation run")
    args = ap.parse_args()
    work = Path(args.work)

    data, fx = stage(oversupplied_dataset, work / "annotate")
    cfg = work / "annotate" / "caps.yaml"
    cfg.write_text("caps: {" + ", ".join(f"c{i}: {args.cap}" for i in range(1, 5)) + "}\n")
    common = ["--dataset", data, "--fixtures", fx, "--mock", "--out", str(work / "annotate" / "out")]
    if cli(["annotate", "--config", str(cfg), *common]) != 0:
        return 1
    print((work / "annotate" / "out" / "stats.json").read_text())

    data, fx = stage(scripted_run_dataset, work / "run")
    common = ["--dataset", data, "--fixtures", fx, "--mock", "--out", str(work / "run" / "out")]
    for command in ("run", "eval", "report"):
        if cli([command, *common]) != 0:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
