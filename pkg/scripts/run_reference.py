"""Run the reference tabular experiment and print the bound verdicts.

    python scripts/run_reference.py [--seeds 20] [--out runs/reference]
"""
import argparse
import json
from pathlib import Path

from mops.cli import cmd_run, load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--out", default=str(ROOT / "runs" / "reference"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(ROOT / "configs" / "reference.json")
    cfg.replication.num_seeds = args.seeds
    cfg.replication.workers = args.workers
    cfg.output.dir = args.out
    cmd_run(cfg)
    summary = json.loads((Path(args.out) / "summary.json").read_text())
    print(f"final posterior mass on the true model: {summary['final_mass_true']:.4f}")
    for c in summary["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']:.4f} <= {c['threshold']:.4f}")


if __name__ == "__main__":
    main()
