"""Command line: ``xvaengine {run,incremental,validate,print-config} --config <file>``.

Exit codes: 0 success, 2 config/parse error, 3 solver non-convergence, 4 I/O error.
The log level comes from ``XVAENGINE_LOG_LEVEL`` (default WARNING).
"""

import argparse
import json
import logging
import os
import sys

from . import cli_io
from .engine import incremental_xva, run_full
from .errors import ConfigError, XVAError

log = logging.getLogger("xvaengine")

_ENGINE_FLAGS = {
    "seed": int, "primary_count": int, "secondary_count": int, "step": float, "horizon_years": float,
    "hurdle": float, "workers": int, "passes": int,
}


def _parser():
    p = argparse.ArgumentParser(prog="xvaengine", description="Nested Monte Carlo XVA engine")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run config (JSON)")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        for name, kind in _ENGINE_FLAGS.items():
            sp.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)
        sp.add_argument("--im-funding", choices=("unsecured", "blended"))
        sp.add_argument("--ftddva-convention", choices=("as_written", "own_default"))

    common(sub.add_parser("run", help="compute the XVA report"))
    inc = sub.add_parser("incremental", help="XVA deltas and FTP of adding trades")
    common(inc)
    inc.add_argument("--add", required=True, help="portfolio file with the trade(s) to add")
    common(sub.add_parser("validate", help="load and check all inputs"))
    common(sub.add_parser("print-config", help="print the effective config"))
    return p


def _effective_config(args):
    cfg = cli_io.load_config(args.config)
    engine = {k: getattr(args, k) for k in _ENGINE_FLAGS if getattr(args, k) is not None}
    if args.ftddva_convention:
        engine["ftddva_convention"] = args.ftddva_convention
    top = {"im_funding": args.im_funding}
    if args.out:
        top["output_dir"] = os.path.abspath(args.out)
    return cfg.with_overrides(engine=engine, **top)


def _run(args):
    cfg = _effective_config(args)
    if args.verb == "print-config":
        print(json.dumps(cli_io._clean(cfg.to_dict()), indent=2))
        return 0
    portfolio, credit = cfg.load_inputs()
    if args.verb == "validate":
        names = set(credit.names)
        for ns in portfolio.netting_sets:
            if ns.counterparty_id not in names:
                raise ConfigError(f"netting set {ns.id}: no credit curve for {ns.counterparty_id!r}")
        cfg.engine.grid_for(portfolio)
        print(f"ok: {len(portfolio.trades)} trades in {len(portfolio.netting_sets)} netting sets, "
              f"{len(credit.entities)} credit curves")
        return 0
    if args.verb == "run":
        report = run_full(portfolio, credit, cfg.model, cfg.engine)
    else:
        extra = cli_io.load_portfolio(cli_io.resolve(args.add))
        report = None
        book = portfolio
        for ns in extra.netting_sets:
            for trade in ns.trades:
                report = incremental_xva(book, trade, credit, cfg.model, cfg.engine, ns.counterparty_id, ns.margin)
                book = book.with_trade(trade, ns.counterparty_id, ns.margin)
        if report is None:
            raise ConfigError("no trades to add")
    for w in report.warnings:
        log.warning(w)
    paths = cli_io.emit_report(report, cfg.output_path)
    for p in paths:
        print(p)
    return 0


def main(argv=None):
    logging.basicConfig(level=os.environ.get("XVAENGINE_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except XVAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
