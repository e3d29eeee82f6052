"""Replicated coverage / set-length experiments and lambda diagnostics."""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (DataError, DataSplit, MultiLabelDataset, concat, frequent_mask,
                   load_dataset, partition, split)
from .predictors import MethodConfig, fit_pipeline
from .simulate import SimConfig, gen_dataset

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.02, 0.05, 0.08, 0.10, 0.12, 0.15, 0.20, 0.25, 0.30, 0.35)
ALL_METHODS = ("TB1-fixed", "TB1-adaptive", "TB2-fixed", "TB2-adaptive", "BR", "PS1", "PS2")
COLUMNS = ("dataset", "method", "procedure", "alpha", "replication",
           "coverage", "mean_len", "lambda_star", "seconds")


class ConfigError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; each field is also a config-file key."""

    source: str = "simulate"
    name: str = "sim"
    sim_n: int = 10_000
    sim_c: int = 5
    sim_beta: tuple = (2.0, 2.5, 2.0)
    sim_w: float = 1.5
    sim_later_noise: bool = True
    train_path: str = ""
    test_path: str = ""
    data_format: str = ""
    n_labels: int = 0
    labels_first: bool = False
    min_count: int = 0
    methods: tuple = ALL_METHODS
    alphas: tuple = DEFAULT_ALPHAS
    replications: int = 50
    fixed_ratios: tuple = (0.2, 0.6, 0.2)
    adaptive_ratios: tuple = (0.3, 0.3, 0.2, 0.2)
    train_ratios: tuple = (0.4, 0.6)
    test_ratios: tuple = (0.5, 0.5)
    seed: int = 0
    pvalue_mode: str = "mirrored"
    calibration: str = "true-label"
    workers: int = 1
    timing: bool = False
    output_dir: str = "results"

    def __post_init__(self):
        if self.source not in ("simulate", "files"):
            raise ConfigError(f"source must be 'simulate' or 'files', got {self.source!r}")
        if not self.alphas or any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("every alpha must lie in (0, 1)")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(ALL_METHODS)}")
        if self.pvalue_mode not in ("mirrored", "literal"):
            raise ConfigError(f"unknown p-value mode {self.pvalue_mode!r}")
        if self.calibration not in ("true-label", "every-node"):
            raise ConfigError(f"unknown calibration scheme {self.calibration!r}")
        for key, k in (("fixed_ratios", 3), ("adaptive_ratios", 4), ("train_ratios", 2),
                       ("test_ratios", 2)):
            r = getattr(self, key)
            if len(r) != k or any(v <= 0 for v in r):
                raise ConfigError(f"{key} needs {k} positive numbers")
        if self.source == "files":
            if not self.train_path or not self.test_path:
                raise ConfigError("file source needs train_path and test_path")
            if self.n_labels < 1:
                raise ConfigError("file source needs n_labels >= 1")


def _convert(name, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], (int, float)):
                return tuple(float(t) for t in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    base = base or ExperimentConfig()
    defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, value, defaults[key])
    return dataclasses.replace(base, **values)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: ExperimentConfig) -> str:
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(t) for t in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


def replication_seed(seed: int, r: int) -> int:
    """Seed of replication `r`: first word of ``SeedSequence([seed, r])``."""
    return int(np.random.SeedSequence([int(seed), int(r)]).generate_state(1, np.uint32)[0])


# --- metrics ---------------------------------------------------------------

def evaluate(sets, truth) -> tuple[float, float]:
    """Coverage and mean size of prediction sets against the true labelsets.

    Parameters
    ----------
    sets : sequence of sets of labelset codes (or PredictionSet)
    truth : sequence of codes, or an (n, c) 0/1 label matrix
    """
    truth = np.asarray(truth)
    if truth.ndim == 2:
        truth = truth.astype(np.int64) @ (1 << np.arange(truth.shape[1] - 1, -1, -1))
    sets = list(sets)
    if len(sets) != len(truth):
        raise ContractError(f"{len(sets)} sets for {len(truth)} labels")
    if not sets:
        raise ContractError("nothing to evaluate")
    covered = np.array([int(y) in s for s, y in zip(sets, truth)], dtype=np.float64)
    sizes = np.array([len(s) for s in sets], dtype=np.float64)
    return float(covered.mean()), float(sizes.mean())


# --- report ----------------------------------------------------------------

@dataclass(frozen=True)
class Row:
    dataset: str
    method: str
    procedure: str
    alpha: float
    replication: int
    coverage: float
    mean_len: float
    lambda_star: float | None = None
    seconds: float | None = None

    def cells(self):
        return [self.dataset, self.method, self.procedure, f"{self.alpha:g}", self.replication,
                f"{self.coverage:.6f}", f"{self.mean_len:.6f}",
                "" if self.lambda_star is None else f"{self.lambda_star:.8f}",
                "" if self.seconds is None else f"{self.seconds:.3f}"]


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    n_labels: dict = field(default_factory=dict)

    def select(self, **match) -> list[Row]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow(r.cells())

    def summary(self) -> list[dict]:
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.dataset, r.method, r.procedure, r.alpha), []).append(r)
        out = []
        for (ds, m, p, a), rs in groups.items():
            cov = np.array([r.coverage for r in rs])
            ln = np.array([r.mean_len for r in rs])
            lam = np.array([r.lambda_star for r in rs if r.lambda_star is not None])
            out.append(dict(dataset=ds, method=m, procedure=p, alpha=a, n=len(rs),
                            coverage_mean=cov.mean(), coverage_sd=_sd(cov),
                            mean_len_mean=ln.mean(), mean_len_sd=_sd(ln),
                            lambda_star_mean=lam.mean() if lam.size else None))
        return out

    def write_summary(self, path):
        cols = ["dataset", "method", "procedure", "alpha", "n", "coverage_mean", "coverage_sd",
                "mean_len_mean", "mean_len_sd", "lambda_star_mean"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for s in self.summary():
                w.writerow([f"{s[c]:g}" if c == "alpha" else _fmt(s[c]) for c in cols])


def _sd(v):
    return float(v.std(ddof=1)) if v.size > 1 else 0.0


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def read_report(path) -> ExperimentReport:
    """Load a per-replication CSV written by `ExperimentReport.write_csv`."""
    rep = ExperimentReport()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(COLUMNS)}")
        for rec in reader:
            rep.rows.append(Row(rec["dataset"], rec["method"], rec["procedure"],
                                float(rec["alpha"]), int(rec["replication"]),
                                float(rec["coverage"]), float(rec["mean_len"]),
                                float(rec["lambda_star"]) if rec["lambda_star"] else None,
                                float(rec["seconds"]) if rec["seconds"] else None))
    return rep


def merge_reports(reports) -> ExperimentReport:
    out = ExperimentReport()
    for rep in reports:
        out.rows.extend(rep.rows)
        out.failures.extend(rep.failures)
        out.n_labels.update(rep.n_labels)
    return out


def lambda_diagnostics(report: ExperimentReport, n_labels=None, method=None) -> list[dict]:
    """Mean ``c * lambda*`` per (dataset, alpha) over the adaptive rows.

    `n_labels` maps dataset name to its label count and defaults to the
    counts stored on the report. Returns an empty list when no adaptive
    rows exist.
    """
    n_labels = dict(report.n_labels, **(n_labels or {}))
    groups: dict = {}
    for r in report.rows:
        if r.lambda_star is None or (method is not None and r.method != method):
            continue
        groups.setdefault((r.dataset, r.alpha), []).append(r.lambda_star)
    if not groups:
        log.warning("report has no adaptive runs; lambda table is empty")
        return []
    out = []
    for (ds, a), lams in sorted(groups.items()):
        if ds not in n_labels:
            raise ContractError(f"label count of dataset {ds!r} is unknown")
        cl = n_labels[ds] * np.asarray(lams)
        out.append(dict(dataset=ds, alpha=a, c=n_labels[ds], c_lambda_mean=float(cl.mean()),
                        c_lambda_sd=_sd(cl), n=len(lams)))
    return out


def write_lambda_csv(table, path):
    cols = ["dataset", "alpha", "c", "c_lambda_mean", "c_lambda_sd", "n"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for t in table:
            w.writerow([_fmt(t[c]) if c != "alpha" else f"{t[c]:g}" for c in cols])


def write_labels_csv(n_labels: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "c"])
        for k in sorted(n_labels):
            w.writerow([k, n_labels[k]])


def read_labels_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {rec["dataset"]: int(rec["c"]) for rec in csv.DictReader(fh)}


# --- one replication --------------------------------------------------------

@dataclass
class _Task:
    dataset: str
    ds: MultiLabelDataset
    fixed: DataSplit
    adaptive: DataSplit
    extra_tests: dict = field(default_factory=dict)


def _read_files(cfg: ExperimentConfig):
    fmt = cfg.data_format or None
    tr = load_dataset(cfg.train_path, fmt, cfg.n_labels, cfg.labels_first)
    te = load_dataset(cfg.test_path, fmt, cfg.n_labels, cfg.labels_first)
    ds = concat(tr, te)
    is_train = np.r_[np.ones(tr.n, bool), np.zeros(te.n, bool)]
    if cfg.min_count > 0:
        keep = frequent_mask(ds.codes, cfg.min_count)
        if not keep.any():
            raise DataError(f"no labelset occurs more than {cfg.min_count} times")
        log.info("dropped %d rows with labelsets seen at most %d times",
                 int((~keep).sum()), cfg.min_count)
        ds, is_train = ds.subset(np.flatnonzero(keep)), is_train[keep]
    return ds, is_train


def _file_task(cfg: ExperimentConfig, ds, is_train, seed_r) -> _Task:
    rng = np.random.default_rng(seed_r)
    train_idx, test_idx = np.flatnonzero(is_train), np.flatnonzero(~is_train)
    tr_parts = partition(len(train_idx), cfg.train_ratios, rng)
    te_parts = partition(len(test_idx), cfg.test_ratios, rng)
    proper, cal = (np.sort(train_idx[p]) for p in tr_parts)
    tune, test_half = (np.sort(test_idx[p]) for p in te_parts)
    fixed = DataSplit(proper, cal, test_idx)
    adaptive = DataSplit(proper, cal, test_half, tuning=tune)
    return _Task(cfg.name, ds, fixed, adaptive, {f"{cfg.name}/half": test_half})


def _make_task(cfg: ExperimentConfig, seed_r: int, files=None) -> _Task:
    if cfg.source == "files":
        return _file_task(cfg, *files, seed_r)
    sim = SimConfig(n=cfg.sim_n, c=cfg.sim_c, beta=cfg.sim_beta, w=cfg.sim_w, seed=seed_r,
                    later_noise=cfg.sim_later_noise)
    ds = gen_dataset(sim)
    return _Task(cfg.name, ds, split(ds, cfg.fixed_ratios, seed_r),
                 split(ds, cfg.adaptive_ratios, seed_r))


def _pipeline_groups(methods):
    # PS1 and PS2 share one fitted flat predictor
    groups: dict = {}
    for m in methods:
        base, _, proc = m.partition("-")
        key = ("PS", "fixed") if base in ("PS1", "PS2") else (base, proc or "fixed")
        groups.setdefault(key, []).append(m)
    return groups


def run_replication(cfg: ExperimentConfig, r: int, files=None) -> list[Row]:
    seed_r = replication_seed(cfg.seed, r)
    task = _make_task(cfg, seed_r, files)
    ds, rows = task.ds, []
    alphas = tuple(float(a) for a in cfg.alphas)
    for (base, proc), members in _pipeline_groups(cfg.methods).items():
        t0 = time.perf_counter()
        mcfg = MethodConfig(method="PS1" if base == "PS" else base, procedure=proc,
                            seed=seed_r, pvalue_mode=cfg.pvalue_mode, calibration=cfg.calibration)
        sp = task.adaptive if proc == "adaptive" else task.fixed
        pipe = fit_pipeline(ds, mcfg, sp)
        targets = [(task.dataset, sp.test)]
        if proc == "fixed":
            targets += list(task.extra_tests.items())
        results = []
        for name, idx in targets:
            X, codes = ds.features[idx], ds.codes[idx]
            for m in members:
                if base == "PS":
                    out = pipe.evaluate(X, codes, idx, alphas, add_missing=(m == "PS2"))
                else:
                    out = pipe.evaluate(X, codes, idx, alphas)
                results.append((name, m, out))
        lam = {a: pipe.lambda_star(a) for a in alphas}
        elapsed = time.perf_counter() - t0 if cfg.timing else None
        for name, m, out in results:
            for a in alphas:
                hit, size = out[a]
                rows.append(Row(name, m.split("-")[0], proc, a, r, float(hit.mean()),
                                float(size.mean()), lam[a], elapsed))
    return rows


def _replication_job(args):
    cfg, r, files = args
    try:
        return r, run_replication(cfg, r, files), None
    except Exception as exc:  # one bad replication must not sink the run
        return r, [], f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Run all replications and optionally write the CSV outputs.

    Replications are farmed out to `cfg.workers` processes; results are
    reduced in replication order so output does not depend on scheduling.
    """
    files = _read_files(cfg) if cfg.source == "files" else None
    c = files[0].c if files else cfg.sim_c
    jobs = [(cfg, r, files) for r in range(cfg.replications)]
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_replication_job, jobs))
    else:
        results = [_replication_job(j) for j in jobs]
    report = ExperimentReport()
    for r, rows, err in sorted(results, key=lambda t: t[0]):
        if err is not None:
            log.error("replication %d failed: %s", r, err)
            report.failures.append((r, err))
            continue
        report.rows.extend(rows)
    report.n_labels = {name: c for name in sorted({row.dataset for row in report.rows})}
    if write:
        write_outputs(report, cfg.output_dir)
    return report


def write_outputs(report: ExperimentReport, outdir) -> dict:
    os.makedirs(outdir, exist_ok=True)
    paths = {k: os.path.join(outdir, f"{k}.csv") for k in ("results", "summary", "lambda", "labels")}
    report.write_csv(paths["results"])
    report.write_summary(paths["summary"])
    write_lambda_csv(lambda_diagnostics(report), paths["lambda"])
    write_labels_csv(report.n_labels, paths["labels"])
    if report.failures:
        paths["failures"] = os.path.join(outdir, "failures.csv")
        with open(paths["failures"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replication", "reason"])
            w.writerows(report.failures)
    return paths
