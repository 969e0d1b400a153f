"""Run every experiment with the configs under configs/, writing into runs/.

Usage: python scripts/run_all.py [--only mode-coverage,dci-bench] [--seed 0]

mnist-pca runs before traverse because traverse loads its checkpoint.
"""
import argparse
import time

from imle_lab.cli import main as cli_main

ORDER = ["dci-bench", "mode-coverage", "mnist-pca", "traverse", "progressive-sr"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", default=",".join(ORDER))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    wanted = args.only.split(",")
    for command in ORDER:
        if command not in wanted:
            continue
        t0 = time.perf_counter()
        cfg = f"configs/{command.replace('-', '_')}.json"
        code = cli_main([command, "--config", cfg, "--seed", str(args.seed)])
        print(f"{command}: exit {code} after {time.perf_counter() - t0:.0f}s", flush=True)
        if code:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
