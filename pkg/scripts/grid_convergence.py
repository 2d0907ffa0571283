"""Richardson ratios of UCVA0, FVA0 and KVA0 on the toy portfolio.

Runs the same seed at steps h, h/2 and h/4 and prints
(X_h - X_{h/2}) / (X_{h/2} - X_{h/4}), which is close to 2 for a first-order scheme.

    python3 scripts/grid_convergence.py [--step 0.5] [--primary 2000] [--secondary 200]
"""

import argparse
import time
from dataclasses import replace

from xvaengine.cli_io import load_config
from xvaengine.engine import run_full

METRICS = ("UCVA0", "FVA0", "KVA0", "FVA_star0")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--step", type=float, default=0.5)
    ap.add_argument("--primary", type=int, default=2000)
    ap.add_argument("--secondary", type=int, default=200)
    args = ap.parse_args()

    cfg = load_config("builtin:toy_config.json")
    portfolio, credit = cfg.load_inputs()
    steps = (args.step, args.step / 2, args.step / 4)
    values = {}
    for h in steps:
        engine = replace(cfg.engine, step=h, primary_count=args.primary, secondary_count=args.secondary)
        t0 = time.perf_counter()
        report = run_full(portfolio, credit, cfg.model, engine)
        values[h] = {m: report.value(m) for m in METRICS}
        print(f"h={h:<6g} " + "  ".join(f"{m}={v:.4f}" for m, v in values[h].items())
              + f"  ({time.perf_counter() - t0:.0f}s)", flush=True)
    a, b, c = (values[h] for h in steps)
    for m in METRICS:
        ratio = (a[m] - b[m]) / (b[m] - c[m]) if b[m] != c[m] else float("inf")
        print(f"{m:<10} ratio {ratio:.3f}")


if __name__ == "__main__":
    main()
