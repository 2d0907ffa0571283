"""Run the bundled toy portfolio and print the XVA table.

    python3 scripts/run_toy.py [--primary 2000] [--secondary 200] [--step 0.25] [--out xva_out]
"""

import argparse
from dataclasses import replace

from xvaengine.cli_io import emit_report, load_config
from xvaengine.engine import run_full


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--primary", type=int, default=2000)
    ap.add_argument("--secondary", type=int, default=200)
    ap.add_argument("--step", type=float, default=0.25)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None, help="also write the report files here")
    args = ap.parse_args()

    cfg = load_config("builtin:toy_config.json")
    engine = replace(cfg.engine, primary_count=args.primary, secondary_count=args.secondary, step=args.step,
                     workers=args.workers)
    portfolio, credit = cfg.load_inputs()
    report = run_full(portfolio, credit, cfg.model, engine)

    print(f"{'metric':<10}{'value':>12}{'rel SE':>10}")
    for name in ("FTDCVA0", "FTDDVA0", "UCVA0", "FVA0", "FVA_star0", "MVA0", "KVA0", "TRC0"):
        est = report.metrics[name]
        rel = f"{100 * est.rel_se:.2f}%" if est.se == est.se and est.value else "n/a"
        print(f"{name:<10}{est.value:>12.2f}{rel:>10}")
    for w in report.warnings:
        print("warning:", w)
    print("timings:", report.meta["timings"])
    if args.out:
        for p in emit_report(report, args.out):
            print(p)


if __name__ == "__main__":
    main()
