"""Command-line interface: ``gts validate | forecast | evaluate | synth``.

Run settings live in an INI file (section ``[run]``); command-line flags
override it.  Every CSV written carries a ``#`` comment header with the
config hash and seed; the JSON summary carries the same fields.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gts import __version__
from gts.arima import ArimaFitError, OrderBounds
from gts.bootstrap import INTERVAL_METHODS, BootstrapError, interval_forecasts
from gts.evaluate import (
    ALL_METHODS,
    EvalConfig,
    EvaluationError,
    RollingPlan,
    base_forecasts,
    exposure_forecasts,
    run_rolling,
)
from gts.hierarchy import (
    TOTAL,
    GroupedHierarchy,
    HierarchyError,
    PanelError,
    PanelSeries,
    aggregate_panel,
    build_hierarchy,
    key_label,
    rates_summing_stack,
)
from gts.reconcile import ReconciliationError, reconcile

log = logging.getLogger("gts")


class ConfigError(ValueError):
    pass


class IngestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case (H, B, P)
    return cp


def _split(s: str) -> list[str]:
    return [t.strip() for t in s.replace("\n", ",").split(",") if t.strip()]


_NON_RESULT_FIELDS = ("output", "threads")


@dataclass
class RunConfig:
    """Everything a run needs; round-trips through :meth:`to_ini` / :meth:`from_ini`."""

    panel: str = ""
    hierarchy: str = ""
    methods: tuple = ALL_METHODS
    H: int = 20
    alpha: float = 0.2
    B: int = 100
    P: int = 100
    s_mode: str = "forecast"
    seed: int = 0
    max_p: int = 5
    max_q: int = 5
    max_d: int = 2
    output: str = "out"
    train_end: int | None = None
    intervals: bool = False
    log_rates: bool = False
    threads: int = 1

    def validate(self, check_files: bool = True) -> "RunConfig":
        if check_files:
            for name in ("panel", "hierarchy"):
                path = getattr(self, name)
                if not path:
                    raise ConfigError(f"no {name} file given")
                if not Path(path).is_file():
                    raise ConfigError(f"{name} file {path!r} does not exist")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {ALL_METHODS}, got {list(self.methods)}")
        if self.H < 1:
            raise ConfigError("H must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.B < 2 or self.P < 2:
            raise ConfigError("B and P must be at least 2")
        if self.s_mode not in ("forecast", "holdout"):
            raise ConfigError("s_mode must be 'forecast' or 'holdout'")
        if min(self.max_p, self.max_q, self.max_d) < 0:
            raise ConfigError("order bounds must be non-negative")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0 (0 = all cores)")
        return self

    @property
    def bounds(self) -> OrderBounds:
        return OrderBounds(max_p=self.max_p, max_q=self.max_q, max_d=self.max_d)

    @property
    def n_jobs(self) -> int:
        return -1 if self.threads == 0 else self.threads

    def to_ini(self) -> str:
        cp = _parser()
        cp["run"] = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif v is None:
                v = ""
            cp["run"][f.name] = str(v)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base_dir: str | Path | None = None) -> "RunConfig":
        cp = _parser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        if "run" not in cp:
            raise ConfigError("config has no [run] section")
        sec = cp["run"]
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(sec) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        try:
            for name in sec:
                raw = sec[name].strip()
                default = getattr(cls(), name)
                if name == "methods":
                    kw[name] = tuple(_split(raw))
                elif name == "train_end":
                    kw[name] = int(raw) if raw else None
                elif isinstance(default, bool):
                    kw[name] = sec.getboolean(name)
                elif isinstance(default, int):
                    kw[name] = int(raw)
                elif isinstance(default, float):
                    kw[name] = float(raw)
                else:
                    kw[name] = raw
        except ValueError as exc:
            raise ConfigError(f"bad value in config: {exc}") from None
        cfg = cls(**kw)
        if base_dir is not None:
            for name in ("panel", "hierarchy", "output"):
                p = getattr(cfg, name)
                if p and not Path(p).is_absolute():
                    setattr(cfg, name, str(Path(base_dir) / p))
        return cfg

    def provenance(self) -> dict:
        """Result-determining settings (everything except output location and thread count)."""
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self) if f.name not in _NON_RESULT_FIELDS}

    def hash(self) -> str:
        blob = json.dumps(self.provenance(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Ingestion


def read_hierarchy_cfg(path) -> dict[str, list[str]]:
    """Read ``[hierarchy] attributes = a, b`` plus one ``[a] values = ...`` section each."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if "hierarchy" not in cp or "attributes" not in cp["hierarchy"]:
        raise ConfigError(f"{path}: missing [hierarchy] attributes")
    attrs = _split(cp["hierarchy"]["attributes"])
    out = {}
    for a in attrs:
        if a not in cp or "values" not in cp[a]:
            raise ConfigError(f"{path}: attribute {a!r} has no [{a}] values entry")
        out[a] = _split(cp[a]["values"])
    return out


@dataclass
class IngestReport:
    rows: int
    first_year: int
    last_year: int
    nodes: int
    bottom: int
    aggregate_rows: int = 0

    def __str__(self):
        return (f"{self.rows} rows, years {self.first_year}-{self.last_year}, "
                f"{self.nodes} nodes ({self.bottom} bottom)")


def ingest(panel_csv, hierarchy_cfg) -> tuple[GroupedHierarchy, PanelSeries, IngestReport]:
    """Read and validate a long-format panel.

    Aggregate rows (any attribute equal to ``T``) are optional; when present
    they are checked against the sums of their children and then discarded.
    Errors cite 1-based line numbers of the CSV file.
    """
    try:
        h = build_hierarchy(read_hierarchy_cfg(hierarchy_cfg))
    except HierarchyError as exc:
        raise ConfigError(f"{hierarchy_cfg}: {exc}") from None
    expected = ["year", *h.attributes, "deaths", "exposure"]
    na = len(h.attributes)
    domains = [set(d) for d in h.domains]

    cells: dict[tuple[int, tuple], tuple[float, float, int]] = {}
    aggregates = []
    with open(panel_csv, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{panel_csv}: empty file")
        if [c.strip() for c in header] != expected:
            raise IngestError(f"{panel_csv}: line 1: header {header} does not match {expected}")
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(expected):
                raise IngestError(f"line {line}: expected {len(expected)} fields, got {len(row)}")
            row = [c.strip() for c in row]
            try:
                year = int(row[0])
                deaths = float(row[-2])
                expo = float(row[-1])
            except ValueError as exc:
                raise IngestError(f"line {line}: {exc}") from None
            key = tuple(row[1:1 + na])
            for a, v, dom in zip(h.attributes, key, domains):
                if v not in dom and v != TOTAL:
                    raise IngestError(f"line {line}: unknown {a} value {v!r}")
            if not (np.isfinite(deaths) and deaths >= 0):
                raise IngestError(f"line {line}: deaths must be a non-negative number, got {row[-2]!r}")
            if not (np.isfinite(expo) and expo > 0):
                raise IngestError(f"line {line}: exposure must be positive, got {row[-1]!r}")
            if (year, key) in cells:
                raise IngestError(
                    f"line {line}: duplicate row for year {year}, {key_label(key)} "
                    f"(first seen on line {cells[(year, key)][2]})"
                )
            cells[(year, key)] = (deaths, expo, line)
            if TOTAL in key:
                aggregates.append((year, key))
    if not cells:
        raise IngestError(f"{panel_csv}: no data rows")

    years = sorted({y for y, _ in cells})
    full = list(range(years[0], years[-1] + 1))
    gaps = sorted(set(full) - set(years))
    if gaps:
        raise IngestError(f"missing years {gaps[:10]} between {years[0]} and {years[-1]}")
    n = len(full)
    D = np.empty((h.m_bottom, n))
    E = np.empty((h.m_bottom, n))
    for j, key in enumerate(h.bottom_keys):
        for i, year in enumerate(full):
            c = cells.get((year, key))
            if c is None:
                raise IngestError(f"no row for year {year}, {key_label(key)}")
            D[j, i], E[j, i] = c[0], c[1]
    panel = aggregate_panel(h, D, E, np.array(full))

    for year, key in aggregates:
        d, e, line = cells[(year, key)]
        j, i = h.index(key), year - years[0]
        for name, given, derived in (("deaths", d, panel.deaths[j, i]), ("exposure", e, panel.exposure[j, i])):
            if not np.isclose(given, derived, rtol=1e-9, atol=0.0):
                raise IngestError(
                    f"line {line}: {name} {given!r} for {key_label(key)} in {year} "
                    f"differs from the sum of its children ({derived!r})"
                )
    report = IngestReport(len(cells), full[0], full[-1], h.m, h.m_bottom, len(aggregates))
    return h, panel, report


# ---------------------------------------------------------------------------
# Output helpers


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def _header(cfg: RunConfig, kind: str) -> str:
    return f"# gts {__version__} {kind} config_hash={cfg.hash()} seed={cfg.seed}\n"


def _write_csv(path: Path, cfg: RunConfig, kind: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(_header(cfg, kind))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _train_index(panel: PanelSeries, train_end: int | None) -> int:
    """Number of observations up to and including ``train_end``."""
    if train_end is None:
        return panel.n
    years = panel.years.tolist()
    if train_end not in years:
        raise ConfigError(f"train-end {train_end} is outside the data years {years[0]}-{years[-1]}")
    return years.index(train_end) + 1


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(args) -> int:
    h, panel, report = ingest(args.panel, args.hierarchy)
    print(report)
    print("levels: " + ", ".join(f"{n} ({len(h.level_members(k))})" for k, n in enumerate(h.level_names)))
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    h, panel, _ = ingest(cfg.panel, cfg.hierarchy)
    n_train = _train_index(panel, cfg.train_end)
    H = cfg.H
    train = panel.window(n_train)
    last_year = int(train.years[-1])
    fyears = list(range(last_year + 1, last_year + H + 1))
    if n_train < cfg.bounds.min_length:
        raise ConfigError(f"only {n_train} training years; at least {cfg.bounds.min_length} needed")

    base, variances, failures = base_forecasts(train, H, cfg.bounds, cfg.log_rates)
    for j, msg in failures.items():
        log.warning("base fit failed for %s: %s", h.labels()[j], msg)
    if failures:
        raise EvaluationError(f"{len(failures)} series could not be fitted")
    if cfg.s_mode == "holdout":
        if n_train + H > panel.n:
            raise ConfigError("holdout S needs realised exposures for every forecast year")
        E = panel.exposure[-h.m_bottom:, n_train:n_train + H]
    else:
        E = exposure_forecasts(train, H, cfg.bounds)
    S = rates_summing_stack(h, E.T)
    labels = h.labels()

    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    point = {}
    for method in cfg.methods:
        point[method] = base if method == "base" else reconcile(method, base, S, variances, labels).values
        rows = [(labels[j], y, _fmt(point[method][j, i])) for j in range(h.m) for i, y in enumerate(fyears)]
        _write_csv(out / f"forecast_{method}.csv", cfg, "forecast", ("node", "year", "value"), rows)

    intervals = {}
    if cfg.intervals:
        for method in cfg.methods:
            if method not in INTERVAL_METHODS:
                log.warning("no bootstrap intervals for method %s", method)
                continue
            iv = interval_forecasts(
                train, H, cfg.alpha, cfg.B, cfg.P, method, rng_seed=cfg.seed,
                holdout_exposure=E if cfg.s_mode == "holdout" else None,
                bounds=cfg.bounds, log_rates=cfg.log_rates, n_jobs=cfg.n_jobs,
            )
            intervals[method] = iv
            rows = [
                (labels[j], y, _fmt(iv.lower[j, i]), _fmt(iv.upper[j, i]), cfg.alpha)
                for j in range(h.m) for i, y in enumerate(fyears)
            ]
            _write_csv(out / f"intervals_{method}.csv", cfg, "intervals",
                       ("node", "year", "lower", "upper", "alpha"), rows)

    rows = []
    rates = train.rates
    for j in range(h.m):
        for i, y in enumerate(train.years):
            rows.append((labels[j], int(y), "history", "observed", _fmt(rates[j, i]), "", ""))
        for method in cfg.methods:
            iv = intervals.get(method)
            for i, y in enumerate(fyears):
                lo = _fmt(iv.lower[j, i]) if iv else ""
                up = _fmt(iv.upper[j, i]) if iv else ""
                rows.append((labels[j], y, "forecast", method, _fmt(point[method][j, i]), lo, up))
    _write_csv(out / "plot.csv", cfg, "plot", ("node", "year", "kind", "method", "value", "lower", "upper"), rows)
    (out / "run.cfg").write_text(cfg.to_ini(), encoding="utf-8")
    return 0


def _fmt4(v: float) -> str:
    return "" if not np.isfinite(v) else f"{v:.4f}"


def _table_rows(table, H, scale):
    """Horizon rows then Mean and Median, one column per level (paper-style layout)."""
    rows = [[h + 1] + [_fmt4(v * scale) for v in table.levels[:, h]] for h in range(H)]
    rows.append(["Mean"] + [_fmt4(v * scale) for v in table.level_mean])
    rows.append(["Median"] + [_fmt4(v * scale) for v in table.level_median])
    return rows


def cmd_evaluate(cfg: RunConfig) -> int:
    """Rolling evaluation from ``train_end`` to the last data year (``H`` follows from the plan)."""
    h, panel, _ = ingest(cfg.panel, cfg.hierarchy)
    if cfg.train_end is None:
        raise ConfigError("evaluate needs a train-end year")
    n0 = _train_index(panel, cfg.train_end)
    if n0 >= panel.n:
        raise ConfigError("train-end must precede the last data year")
    plan = RollingPlan(n0, panel.n)
    ecfg = EvalConfig(bounds=cfg.bounds, log_rates=cfg.log_rates, intervals=cfg.intervals, alpha=cfg.alpha,
                      B=cfg.B, P=cfg.P, seed=cfg.seed, n_jobs=cfg.n_jobs)
    res = run_rolling(panel, plan, cfg.methods, cfg.s_mode, ecfg)

    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    level_cols = list(h.level_names)
    long_rows = []
    summary_scores = {}
    for method in cfg.methods:
        summary_scores[method] = {}
        for metric, table in res.scores[method].items():
            _write_csv(out / f"scores_{method}_{metric}.csv", cfg, f"{metric} x100",
                       ["h"] + level_cols, _table_rows(table, plan.H, 100.0))
            for k, name in enumerate(level_cols):
                for hh in range(plan.H):
                    v = table.levels[k, hh]
                    long_rows.append((method, metric, name, hh + 1, _fmt(v), _fmt(100 * v)))
            summary_scores[method][metric] = {
                "mean": dict(zip(level_cols, map(float, table.level_mean))),
                "median": dict(zip(level_cols, map(float, table.level_median))),
            }
    _write_csv(out / "scores_long.csv", cfg, "scores", ("method", "metric", "level", "h", "value", "value_x100"),
               long_rows)
    summary = {
        "version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": cfg.provenance(),
        "plan": {"n0": plan.n0, "n_end": plan.n_end, "H": plan.H,
                 "first_origin_year": int(panel.years[plan.n0 - 1]), "last_year": int(panel.years[-1])},
        "s_mode": cfg.s_mode,
        "scores": summary_scores,
        "fit_failures": [{"origin": o, "node": h.labels()[j], "message": msg}
                         for (o, j), msg in sorted(res.failures.items())],
        "base_forecast_hashes": res.base_hashes,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "run.cfg").write_text(cfg.to_ini(), encoding="utf-8")
    return 0


def cmd_synth(args) -> int:
    from gts.synthetic import australian_like, write_hierarchy_cfg, write_panel_csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel = australian_like(args.seed)
    rows = write_panel_csv(panel, out / "panel.csv")
    write_hierarchy_cfg(panel, out / "hierarchy.cfg")
    cfg = RunConfig(panel="panel.csv", hierarchy="hierarchy.cfg", output="results", seed=args.seed)
    (out / "run.cfg").write_text(cfg.to_ini(), encoding="utf-8")
    print(f"wrote {rows} rows to {out / 'panel.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Argument handling


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker processes, 0 = all cores (default: $GTS_THREADS or 1)")
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(ALL_METHODS))
    p.add_argument("--h", type=int, dest="H", help="forecast horizon")
    p.add_argument("--train-end", type=int, help="last training year")
    p.add_argument("--s-mode", choices=("forecast", "holdout"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--B", type=int, dest="B", help="outer bootstrap replicates")
    p.add_argument("--P", type=int, dest="P", help="inner simulated paths")
    p.add_argument("--output", help="output directory")
    p.add_argument("--intervals", action=argparse.BooleanOptionalAction, default=None,
                   help="compute bootstrap prediction intervals")
    p.add_argument("--log-rates", action=argparse.BooleanOptionalAction, default=None,
                   help="model rates on the log scale")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gts", description="Grouped rate forecasting and reconciliation.")
    parser.add_argument("--version", action="version", version=f"gts {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a panel CSV against a hierarchy config")
    p.add_argument("--panel", required=True)
    p.add_argument("--hierarchy", required=True)

    _add_run_flags(sub.add_parser("forecast", help="fit, forecast and reconcile"))
    _add_run_flags(sub.add_parser("evaluate", help="rolling-origin evaluation"))

    p = sub.add_parser("synth", help="write a synthetic Australian-shaped panel and configs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file {args.config!r} does not exist")
    cfg = RunConfig.from_ini(path.read_text(encoding="utf-8"), base_dir=path.parent)
    if args.threads is None and os.environ.get("GTS_THREADS"):
        try:
            cfg.threads = int(os.environ["GTS_THREADS"])
        except ValueError:
            raise ConfigError("GTS_THREADS must be an integer") from None
    for name in ("seed", "threads", "H", "train_end", "s_mode", "alpha", "B", "P", "output", "intervals",
                 "log_rates"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if args.methods:
        cfg.methods = tuple(_split(args.methods))
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "synth":
            return cmd_synth(args)
        cfg = load_config(args)
        return cmd_forecast(cfg) if args.command == "forecast" else cmd_evaluate(cfg)
    except (ConfigError, IngestError, HierarchyError, PanelError, ArimaFitError, ReconciliationError,
            BootstrapError, EvaluationError, OSError) as exc:
        print(f"gts: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
