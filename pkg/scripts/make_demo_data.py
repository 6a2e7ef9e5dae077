"""Write the scripted offline datasets and fixture files used by the demo config.

    python3 scripts/make_demo_data.py --out data/demo
"""

from __future__ import annotations

import argparse
from pathlib import Path

from mragplan.core import save_dataset, write_jsonl
from mragplan.demo import mix_dataset, oversupplied_dataset, probe_combo_dataset, scripted_run_dataset

BUILDERS = {
    "combo": probe_combo_dataset,
    "oversupplied": oversupplied_dataset,
    "run12": scripted_run_dataset,
    "mix600": mix_dataset,
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/demo")
    args = ap.parse_args()
    root = Path(args.out)
    for name, build in BUILDERS.items():
        examples, fixtures = build()
        target = root / name
        target.mkdir(parents=True, exist_ok=True)
        save_dataset(target / "data.jsonl", examples)
        write_jsonl(target / "fixtures.jsonl", fixtures.rows())
        print(f"{target}: {len(examples)} examples, {len(fixtures)} fixtures")


if __name__ == "__main__":
    main()
