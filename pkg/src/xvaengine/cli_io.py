"""Portfolio, credit and run-config files; report emission.

Portfolio and credit files are CSV with a header row (JSON equivalents are
accepted by extension). Run configs are JSON. Paths inside a config are
relative to the config file; ``builtin:<name>`` refers to the bundled data.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .credit import BANK, CreditSetup, EntityCredit
from .engine import EngineConfig, XVAReport
from .errors import ConfigError, ParseError
from .instruments import PAR, MarginSpec, NettingSet, Portfolio, Trade
from .market_sim import ModelParams

DIGITS = 15

PORTFOLIO_COLUMNS = ("trade_id", "trade_type", "notional", "maturity_years", "netting_set", "counterparty")
PORTFOLIO_OPTIONAL = ("fixed_rate", "fixed_tenor_months", "float_tenor_months", "vm_threshold",
                      "im_received", "im_posted")
CREDIT_COLUMNS = ("entity", "tenor", "spread_bps", "recovery")


def resolve(path, base=None):
    """Path for ``path``; ``builtin:<name>`` points into the bundled data directory."""
    text = str(path)
    if text.startswith("builtin:"):
        return Path(str(resources.files("xvaengine") / "data" / text[len("builtin:"):]))
    p = Path(text)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    return p


# --- small parsers ----------------------------------------------------------------------

def parse_tenor(text):
    """Year fraction for ``6M``, ``1Y``, ``10D`` or a plain number of years."""
    t = str(text).strip().upper()
    try:
        if t.endswith("Y"):
            v = float(t[:-1])
        elif t.endswith("M"):
            v = float(t[:-1]) / 12.0
        elif t.endswith("W"):
            v = float(t[:-1]) * 7.0 / 365.0
        elif t.endswith("D"):
            v = float(t[:-1]) / 365.0
        else:
            v = float(t)
    except ValueError:
        raise ValueError(f"bad tenor {text!r}") from None
    if not v > 0:
        raise ValueError(f"tenor must be positive: {text!r}")
    return v


def format_tenor(years):
    months = years * 12.0
    if abs(months - round(months)) < 1e-9:
        m = int(round(months))
        return f"{m // 12}Y" if m % 12 == 0 else f"{m}M"
    return _fmt(years)


def parse_im(text):
    """``none``, ``fixed:<amount>`` or ``quantile:<alpha>:<horizon>`` (horizon as a tenor)."""
    t = (text or "none").strip().lower()
    if t in ("", "none"):
        return ("none",)
    parts = t.split(":")
    if parts[0] == "fixed" and len(parts) == 2:
        return ("fixed", float(parts[1]))
    if parts[0] == "quantile" and len(parts) == 3:
        return ("quantile", float(parts[1]), parse_tenor(parts[2]))
    raise ValueError(f"bad IM model {text!r}")


def format_im(model):
    if model[0] == "none":
        return "none"
    return ":".join([model[0]] + [_fmt(x) for x in model[1:]])


def _fmt(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return format(x, f".{DIGITS}g")


# --- portfolio ---------------------------------------------------------------------------

def _trade_from_row(row, where):
    try:
        fixed = (row.get("fixed_rate") or PAR).strip()
        trade = Trade(
            id=row["trade_id"].strip(),
            trade_type=row["trade_type"].strip(),
            notional=float(row["notional"]),
            maturity_years=parse_tenor(row["maturity_years"]),
            netting_set_id=row["netting_set"].strip(),
            fixed_rate=PAR if fixed.lower() == PAR else float(fixed),
            fixed_tenor_months=int(row.get("fixed_tenor_months") or 6),
            float_tenor_months=int(row.get("float_tenor_months") or 3),
        )
        margin = MarginSpec(
            vm_threshold=float(row.get("vm_threshold") or "inf"),
            im_received=parse_im(row.get("im_received")),
            im_posted=parse_im(row.get("im_posted")),
        )
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise ParseError(str(exc), *where) from None
    if not trade.id or not trade.netting_set_id:
        raise ParseError("empty trade id or netting set", *where)
    cp = (row.get("counterparty") or "").strip()
    if not cp:
        raise ParseError("missing counterparty", *where)
    return trade, cp, margin


def _assemble(entries, path):
    seen = set()
    sets = {}
    for trade, cp, margin, line in entries:
        if trade.id in seen:
            raise ParseError(f"duplicate trade id {trade.id!r}", path, line)
        seen.add(trade.id)
        if trade.netting_set_id in sets:
            cp0, margin0, trades = sets[trade.netting_set_id]
            if cp0 != cp:
                raise ParseError(f"netting set {trade.netting_set_id} already belongs to {cp0}", path, line)
            if margin0 != margin:
                raise ParseError(f"netting set {trade.netting_set_id} has conflicting margin terms", path, line)
            trades.append(trade)
        else:
            sets[trade.netting_set_id] = (cp, margin, [trade])
    return Portfolio(tuple(NettingSet(sid, cp, tuple(tr), m) for sid, (cp, m, tr) in sets.items()))


def load_portfolio(path) -> Portfolio:
    """Read a portfolio CSV (or JSON) file."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _load_portfolio_json(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return Portfolio(())
        missing = [c for c in PORTFOLIO_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"missing columns {missing}", path, 1)
        entries = []
        for row in reader:
            line = reader.line_num
            if not any((v or "").strip() for v in row.values()):
                continue
            entries.append((*_trade_from_row(row, (path, line)), line))
    return _assemble(entries, path)


def _load_portfolio_json(path):
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    sets = {s["id"]: s for s in doc.get("netting_sets", [])}
    entries = []
    for n, t in enumerate(doc.get("trades", []), start=1):
        sid = t.get("netting_set")
        if sid not in sets:
            raise ParseError(f"trade {t.get('trade_id')!r}: unknown netting set {sid!r}", path, f"trade[{n}]")
        ns = sets[sid]
        row = {k: ("" if v is None else str(v)) for k, v in t.items()}
        row["counterparty"] = str(ns.get("counterparty", ""))
        for key in ("vm_threshold", "im_received", "im_posted"):
            if key in ns:
                row[key] = str(ns[key])
        entries.append((*_trade_from_row(row, (path, f"trade[{n}]")), f"trade[{n}]"))
    return _assemble(entries, path)


def write_portfolio(portfolio: Portfolio, path):
    path = Path(path)
    cols = PORTFOLIO_COLUMNS + PORTFOLIO_OPTIONAL
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for ns in portfolio.netting_sets:
            for t in ns.trades:
                w.writerow([
                    t.id, t.trade_type, _fmt(t.notional), _fmt(t.maturity_years), ns.id, ns.counterparty_id,
                    PAR if t.fixed_rate == PAR else _fmt(t.fixed_rate), t.fixed_tenor_months,
                    t.float_tenor_months, _fmt(ns.margin.vm_threshold), format_im(ns.margin.im_received),
                    format_im(ns.margin.im_posted),
                ])


# --- credit ------------------------------------------------------------------------------

def load_credit(path, **setup) -> CreditSetup:
    """Read per-entity CDS curves. The entity named ``Bank`` is the bank.

    Extra keyword arguments go to :class:`CreditSetup` (funding conventions).
    """
    path = Path(path)
    rows = []
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
        for n, e in enumerate(doc.get("entities", []), start=1):
            for tenor, spread in zip(e["tenors"], e["spreads_bps"]):
                rows.append((f"entities[{n}]", e["name"], tenor, spread, e.get("recovery", 0.4)))
    else:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ParseError(f"no credit curves (missing {BANK} curve)", path, 1)
            missing = [c for c in CREDIT_COLUMNS[:3] if c not in reader.fieldnames]
            if missing:
                raise ParseError(f"missing columns {missing}", path, 1)
            for row in reader:
                if not any((v or "").strip() for v in row.values()):
                    continue
                rows.append((reader.line_num, row["entity"].strip(), row["tenor"], row["spread_bps"],
                             row.get("recovery") or 0.4))
    curves = {}
    for line, name, tenor, spread, recovery in rows:
        try:
            t, s, r = parse_tenor(tenor), float(spread), float(recovery)
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), path, line) from None
        if not name:
            raise ParseError("empty entity name", path, line)
        if s < 0:
            raise ParseError(f"{name}: negative spread {s}", path, line)
        tenors, spreads, rec = curves.setdefault(name, ([], [], r))
        if rec != r:
            raise ParseError(f"{name}: recovery changes within the curve", path, line)
        if tenors and t <= tenors[-1]:
            raise ParseError(f"{name}: tenors must be strictly increasing", path, line)
        tenors.append(t)
        spreads.append(s)
    if BANK not in curves:
        raise ParseError(f"missing {BANK} curve", path)
    try:
        entities = {n: EntityCredit(n, tuple(t), tuple(s), r) for n, (t, s, r) in curves.items()}
        bank = entities.pop(BANK)
        return CreditSetup(entities, bank, **setup)
    except ConfigError as exc:
        raise ParseError(str(exc), path) from None


def write_credit(credit: CreditSetup, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CREDIT_COLUMNS)
        for e in credit.entities:
            for t, s in zip(e.tenors, e.spreads_bps):
                w.writerow([e.name, format_tenor(t), _fmt(s), _fmt(e.recovery)])


# --- run config --------------------------------------------------------------------------

_MODEL_KEYS = {f.name for f in fields(ModelParams)}
_ENGINE_KEYS = {f.name for f in fields(EngineConfig)}
_CREDIT_KEYS = ("im_funding", "funding_spread_override", "im_spread_override")


@dataclass
class RunConfig:
    portfolio: str
    credit: str
    model: ModelParams = field(default_factory=ModelParams)
    engine: EngineConfig = field(default_factory=EngineConfig)
    im_funding: str = "unsecured"
    funding_spread_override: float | None = None
    im_spread_override: float | None = None
    output_dir: str = "xva_out"
    base_dir: str = "."

    def __post_init__(self):
        if self.im_funding not in ("unsecured", "blended"):
            raise ConfigError(f"im_funding must be 'unsecured' or 'blended', got {self.im_funding!r}")

    @property
    def portfolio_path(self):
        return resolve(self.portfolio, self.base_dir)

    @property
    def credit_path(self):
        return resolve(self.credit, self.base_dir)

    @property
    def output_path(self):
        """Output directory; relative paths are taken from the working directory."""
        return resolve(self.output_dir)

    def load_inputs(self):
        for p in (self.portfolio_path, self.credit_path):
            if not p.is_file():
                raise ConfigError(f"input file not found: {p}")
        portfolio = load_portfolio(self.portfolio_path)
        credit = load_credit(self.credit_path, im_funding=self.im_funding,
                             funding_spread_override=self.funding_spread_override,
                             im_spread_override=self.im_spread_override)
        return portfolio, credit

    def to_dict(self):
        model = asdict(self.model)
        engine = asdict(self.engine)
        return {
            "portfolio": self.portfolio,
            "credit": self.credit,
            "model": model,
            "engine": engine,
            "im_funding": self.im_funding,
            "funding_spread_override": self.funding_spread_override,
            "im_spread_override": self.im_spread_override,
            "output_dir": self.output_dir,
        }

    def with_overrides(self, model=None, engine=None, **top):
        m = ModelParams(**{**asdict(self.model), **(model or {})})
        e = EngineConfig(**{**asdict(self.engine), **(engine or {})})
        d = {k: getattr(self, k) for k in ("portfolio", "credit", "im_funding", "funding_spread_override",
                                             "im_spread_override", "output_dir", "base_dir")}
        d.update({k: v for k, v in top.items() if v is not None})
        return RunConfig(model=m, engine=e, **d)


def config_from_dict(doc, base_dir=".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - {"portfolio", "credit", "model", "engine", "output_dir", *_CREDIT_KEYS}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("portfolio", "credit"):
        if key not in doc:
            raise ConfigError(f"config is missing {key!r}")
    model = doc.get("model", {})
    engine = doc.get("engine", {})
    bad = (set(model) - _MODEL_KEYS) | (set(engine) - _ENGINE_KEYS)
    if bad:
        raise ConfigError(f"unknown model/engine keys: {sorted(bad)}")
    try:
        return RunConfig(
            portfolio=doc["portfolio"],
            credit=doc["credit"],
            model=ModelParams(**model),
            engine=EngineConfig(**engine),
            output_dir=doc.get("output_dir", "xva_out"),
            base_dir=str(base_dir),
            **{k: doc[k] for k in _CREDIT_KEYS if k in doc},
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = resolve(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    return config_from_dict(doc, path.parent)


# --- report emission ---------------------------------------------------------------------

def _num(x):
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(format(x, f".{DIGITS}g"))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


TERM_COLUMNS = ("ES", "KVA", "EC", "blended_lambda")


def report_dict(report: XVAReport):
    """Deterministic content of a report (no timings or worker counts)."""
    meta = report.meta
    doc = {
        "metrics": {k: {"value": v.value, "se": v.se} for k, v in report.metrics.items()},
        "term_structures": {"t": report.times, **{k: v for k, v in report.term_structures.items()}},
        "run": {k: meta[k] for k in ("seed", "primary_count", "secondary_count", "step", "horizon_years",
                                     "grid_points", "hurdle", "passes") if k in meta},
        "warnings": list(report.warnings),
    }
    if report.ftp is not None:
        doc["ftp"] = report.ftp
    return _clean(doc)


def _dump(obj, path):
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    Path(path).write_text(text)


def emit_report(report: XVAReport, out_dir):
    """Write xva.json, xva.csv, term_structures.csv, run_meta.json (and ftp.csv). Returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "xva.json"
    _dump(report_dict(report), p)
    written.append(p)

    p = out / "xva.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "value", "se"))
        for k, v in report.metrics.items():
            w.writerow((k, _fmt(v.value), _fmt(v.se)))
    written.append(p)

    p = out / "term_structures.csv"
    cols = [c for c in TERM_COLUMNS if c in report.term_structures]
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", *cols))
        for k, t in enumerate(report.times):
            w.writerow((_fmt(t), *(_fmt(report.term_structures[c][k]) for c in cols)))
    written.append(p)

    p = out / "run_meta.json"
    meta = {k: v for k, v in report.meta.items() if k != "paths"}
    _dump(_clean(meta), p)
    written.append(p)

    if report.ftp is not None:
        p = out / "ftp.csv"
        d = report.ftp["deltas"]
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("metric", "incremental_value"))
            for key, label in (("UCVA0", "dUCVA0"), ("FVA0", "dFVA0"), ("MVA0", "dMVA0"),
                               ("KVA0", "dKVA0"), ("FTDCVA0", "dFTDCVA0"), ("FTDDVA0", "dFTDDVA0"),
                               ("TRC0", "dTRC0"), ("FTP", "FTP")):
                w.writerow((label, _fmt(d[key])))
        written.append(p)
    return written
