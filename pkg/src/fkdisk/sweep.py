"""Batch runs over (N, alpha, n) and the figure/table data derived from them.

Layout of an output directory::

    cases/<case_id>.json        one record per case (atomic write)
    traces/<case_id>_n<n>.csv   continuation traces
    fields/<case_id>.csv        near-critical surface dumps (designated cases)
    critical.csv                per-n and extrapolated lambda_cr^2, sorted by (N, alpha, n)
    scaling.json                per-N power-law fits
    summary.json                case status list
    fig2.csv fig3.csv fig4.csv figures.json
    run.log                     timings; the only non-deterministic file
"""
from __future__ import annotations

import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .analysis import (
    InsufficientRange,
    NoCore,
    analyze_core,
    core_deviation,
    fit_scaling_law,
)
from .continuation import (
    RetryCapExceeded,
    StepPolicy,
    default_grid_mode,
    extrapolate_in_n,
)
from .geometry import BoundaryKind, BoundarySpec, parse_fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CORE_NOTE = "Lambda_sq uses the extrapolated lambda_cr^2 with the finest-grid near-critical field"


class MissingData(FileNotFoundError):
    pass


def fmt(x) -> str:
    """CSV number format: 12 significant digits, '.' decimal point."""
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{float(x):.12g}"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class CaseConfig:
    spec: BoundarySpec
    n_list: tuple = (64, 128, 256)
    grid_mode: str | None = None
    surface: bool = False

    @property
    def case_id(self) -> str:
        return self.spec.case_id

    @property
    def sort_key(self):
        return (self.spec.fold if self.spec.kind is BoundaryKind.PERIODIC else 0, self.spec.alpha, self.spec.kind.value)


@dataclass
class SweepConfig:
    cases: list
    output_dir: Path
    policy: StepPolicy = field(default_factory=StepPolicy)
    parallelism: int = 1
    fit_tol: float = 1e-3
    retry_cap: int = 2
    scaling_alpha_max: Fraction = Fraction(1)
    surface_case: str | None = None

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        if not self.cases:
            raise ValueError("sweep configuration has no cases")
        ids = [c.case_id for c in self.cases]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValueError(f"duplicate case identifiers: {', '.join(dup)}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        if self.surface_case is not None and self.surface_case not in ids:
            raise ValueError(f"surface case {self.surface_case!r} is not among the cases")

    @classmethod
    def from_dict(cls, data: dict, output_dir=None, jobs=None) -> "SweepConfig":
        solver = dict(data.get("solver", {}))
        n_default = tuple(solver.pop("n_list", (64, 128, 256)))
        fit_tol = float(solver.pop("fit_tol", 1e-3))
        retry_cap = int(solver.pop("retry_cap", 2))
        mode_default = solver.pop("grid_mode", None)
        unknown = sorted(set(solver) - set(StepPolicy.__dataclass_fields__))
        if unknown:
            raise ValueError(f"unknown [solver] keys: {', '.join(unknown)}")
        policy = StepPolicy(**solver)
        surface = data.get("figures", {}).get("surface_case")
        cases = []
        for entry in data.get("cases", []):
            kind = BoundaryKind(entry.get("kind", "Periodic"))
            alphas = entry.get("alpha", 1)
            alphas = alphas if isinstance(alphas, list) else [alphas]
            segs = entry.get("N", 1)
            segs = segs if isinstance(segs, list) else [segs]
            for N in segs:
                for a in alphas:
                    spec = BoundarySpec(kind, parse_fraction(a), N)
                    cases.append(
                        CaseConfig(
                            spec,
                            tuple(int(n) for n in entry.get("n_list", n_default)),
                            entry.get("grid_mode", mode_default),
                            surface=spec.case_id == surface,
                        )
                    )
        out = output_dir if output_dir is not None else data.get("output_dir", "runs/sweep")
        return cls(
            cases=cases,
            output_dir=Path(out),
            policy=policy,
            parallelism=int(jobs if jobs is not None else data.get("jobs", 1)),
            fit_tol=fit_tol,
            retry_cap=retry_cap,
            scaling_alpha_max=parse_fraction(data.get("scaling", {}).get("alpha_max", 1)),
            surface_case=surface,
        )

    @classmethod
    def load(cls, path, output_dir=None, jobs=None) -> "SweepConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh), output_dir, jobs)


# ---------------------------------------------------------------------------
# one case


def run_case(case: CaseConfig, config: SweepConfig) -> dict:
    """Run the full pipeline for one case and write its files; returns the record."""
    out = config.output_dir
    spec = case.spec
    record = {
        "schema_version": SCHEMA_VERSION,
        "case_id": case.case_id,
        "spec": spec.to_record(),
        "n_list": list(case.n_list),
        "grid_mode": case.grid_mode or default_grid_mode(spec),
        "status": "ok",
        "diagnostics": [],
        "estimate": None,
        "core": None,
    }
    try:
        est = extrapolate_in_n(
            spec,
            case.n_list,
            config.policy,
            case.grid_mode,
            tol=config.fit_tol,
            retry_cap=config.retry_cap,
            keep_traces="all",
        )
    except RetryCapExceeded as exc:
        record["status"] = "retry_cap_exceeded"
        record["diagnostics"].append(str(exc))
        est = exc.estimate
    except Exception as exc:  # noqa: BLE001 - per-case failures are recorded, not fatal
        record["status"] = "failed"
        record["diagnostics"].append(f"{type(exc).__name__}: {exc}")
        est = None

    if est is not None:
        record["estimate"] = est.to_record()
        for p in est.per_n:
            if p.trace is not None:
                write_atomic(out / "traces" / f"{case.case_id}_n{p.n}.csv", p.trace.to_csv())
        finest = est.finest.trace.last_field
        record["near_critical_lambda_sq"] = finest.lam_sq
        try:
            core = analyze_core(finest, lambda_sq=est.extrapolated_lambda_cr_sq)
            record["core"] = core.to_record()
            record["core"]["boundary_layer_thickness"] = core.boundary_layer
            record["core"]["deviation_from_radial"] = core_deviation(finest, core)
            record["core_note"] = CORE_NOTE
        except NoCore as exc:
            record["diagnostics"].append(f"NoCore: {exc}")
            if record["status"] == "ok":
                record["status"] = "no_core"
        if case.surface:
            write_atomic(out / "fields" / f"{case.case_id}.csv", finest.to_csv())
    write_atomic(out / "cases" / f"{case.case_id}.json", dump_json(record))
    return record


def _run_case_job(args):
    case, config = args
    t0 = time.perf_counter()
    rec = run_case(case, config)
    return case.case_id, rec, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepReport:
    output_dir: Path
    records: dict
    scaling: list
    skipped: list

    @property
    def failures(self) -> list:
        return sorted(cid for cid, r in self.records.items() if r["status"] != "ok")

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0

    def lambda_cr_sq(self, case_id: str) -> float:
        return self.records[case_id]["estimate"]["extrapolated_lambda_cr_sq"]


def _run_logger(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("fkdisk").addHandler(handler)
    return handler


def run_sweep(config: SweepConfig, force: bool = False, dry_run: bool = False) -> SweepReport | None:
    """Run every case of ``config``; completed cases are reused unless ``force``.

    With ``dry_run`` the configuration is validated and nothing is written.
    """
    cases = sorted(config.cases, key=lambda c: c.sort_key)
    if dry_run:
        for c in cases:
            log.info("would run %s with n=%s", c.case_id, list(c.n_list))
        return None
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    handler = _run_logger(out)
    try:
        records, skipped, todo = {}, [], []
        for c in cases:
            path = out / "cases" / f"{c.case_id}.json"
            if path.exists() and not force:
                records[c.case_id] = json.loads(path.read_text())
                skipped.append(c.case_id)
            else:
                todo.append(c)
        jobs = [(c, config) for c in todo]
        if config.parallelism > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
                results = list(pool.map(_run_case_job, jobs))
        else:
            results = [_run_case_job(j) for j in jobs]
        for cid, rec, seconds in results:
            records[cid] = rec
            log.info("case %s: %s in %.1f s", cid, rec["status"], seconds)
        scaling = _scaling_fits(records, config.scaling_alpha_max)
        _write_tables(out, records, scaling)
        emit_figures(out, surface_case=config.surface_case)
    finally:
        logging.getLogger("fkdisk").removeHandler(handler)
        handler.close()
    return SweepReport(out, records, scaling, skipped)


def _scaling_fits(records: dict, alpha_max: Fraction) -> list:
    by_n: dict[int, list] = {}
    for rec in records.values():
        spec = BoundarySpec.from_record(rec["spec"])
        if spec.kind is not BoundaryKind.PERIODIC or rec["status"] not in ("ok", "no_core") or spec.alpha > alpha_max:
            continue
        by_n.setdefault(spec.segments, []).append(
            (spec.alpha, rec["estimate"]["extrapolated_lambda_cr_sq"])
        )
    fits = []
    for N in sorted(by_n):
        pts = sorted(by_n[N])
        try:
            fit = fit_scaling_law([(float(a), v) for a, v in pts], N)
        except InsufficientRange as exc:
            log.info("no scaling fit for N=%d: %s", N, exc)
            continue
        fits.append(fit.to_record())
    return fits


def _sort_key_record(rec):
    spec = BoundarySpec.from_record(rec["spec"])
    return (spec.fold if spec.kind is BoundaryKind.PERIODIC else 0, spec.alpha, spec.kind.value)


def _write_tables(out: Path, records: dict, scaling: list) -> None:
    lines = ["case_id,kind,N,alpha,alpha_effective,n,lambda_cr_sq,fit_rms,status"]
    summary = []
    for rec in sorted(records.values(), key=_sort_key_record):
        s = rec["spec"]
        summary.append({"case_id": rec["case_id"], "status": rec["status"], "diagnostics": rec["diagnostics"]})
        est = rec["estimate"]
        if est is None:
            continue
        alpha = float(Fraction(s["alpha"]))
        for p in est["per_n"]:
            a_eff = float(Fraction(p["grid"]["alpha_effective"]))
            lines.append(
                ",".join(
                    [rec["case_id"], s["kind"], str(s["N"]), fmt(alpha), fmt(a_eff), str(p["n"]),
                     fmt(p["lambda_cr_sq"]), fmt(p["fold_fit"]["rms_relative_residual"]), rec["status"]]
                )
            )
        lines.append(
            ",".join(
                [rec["case_id"], s["kind"], str(s["N"]), fmt(alpha), fmt(float(Fraction(est["alpha_effective"]))),
                 "inf", fmt(est["extrapolated_lambda_cr_sq"]), fmt(est["fit_quality"]), rec["status"]]
            )
        )
    write_atomic(out / "critical.csv", "\n".join(lines) + "\n")
    write_atomic(out / "scaling.json", dump_json({"schema_version": SCHEMA_VERSION, "fits": scaling}))
    write_atomic(out / "summary.json", dump_json({"schema_version": SCHEMA_VERSION, "cases": summary}))


# ---------------------------------------------------------------------------
# figure data


def load_records(report_dir) -> dict:
    report_dir = Path(report_dir)
    case_dir = report_dir / "cases"
    records = {}
    if case_dir.is_dir():
        for path in sorted(case_dir.glob("*.json")):
            rec = json.loads(path.read_text())
            records[rec["case_id"]] = rec
    summary = report_dir / "summary.json"
    if summary.exists():
        missing = [c["case_id"] for c in json.loads(summary.read_text())["cases"] if c["case_id"] not in records]
        if missing:
            raise MissingData(f"case records missing for: {', '.join(missing)}")
    if not records:
        raise MissingData(f"no case records under {case_dir}")
    return records


def emit_figures(report_dir, surface_case: str | None = None) -> list[Path]:
    """Write fig2.csv, fig3.csv, fig4.csv and figures.json from sweep output.

    fig2: ``inv_alpha, lambda_cr_sq, N``; fig4: ``inv_alpha, Lambda_sq, N``
    (one series per N, periodic cases only); fig3: the ``rho, theta, u``
    surface of ``surface_case`` (default: the first case with a dump).
    """
    report_dir = Path(report_dir)
    records = load_records(report_dir)
    fig2 = ["inv_alpha,lambda_cr_sq,N"]
    fig4 = ["inv_alpha,Lambda_sq,N"]
    for rec in sorted(records.values(), key=_sort_key_record):
        spec = BoundarySpec.from_record(rec["spec"])
        if spec.kind is not BoundaryKind.PERIODIC or rec["estimate"] is None:
            continue
        inv = fmt(float(1 / spec.alpha))
        fig2.append(f"{inv},{fmt(rec['estimate']['extrapolated_lambda_cr_sq'])},{spec.segments}")
        if rec["core"] is not None:
            fig4.append(f"{inv},{fmt(rec['core']['Lambda_sq'])},{spec.segments}")
    written = []
    for name, lines in (("fig2.csv", fig2), ("fig4.csv", fig4)):
        write_atomic(report_dir / name, "\n".join(lines) + "\n")
        written.append(report_dir / name)

    dumps = sorted((report_dir / "fields").glob("*.csv")) if (report_dir / "fields").is_dir() else []
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "fig2.csv": {"x": "inv_alpha", "y": "lambda_cr_sq", "series": "N", "xscale": "log"},
        "fig4.csv": {"x": "inv_alpha", "y": "Lambda_sq", "series": "N", "xscale": "log", "reference_line": 2.0},
    }
    if surface_case is not None:
        src = report_dir / "fields" / f"{surface_case}.csv"
        if not src.exists():
            raise MissingData(f"no surface dump for {surface_case}")
    elif dumps:
        src, surface_case = dumps[0], dumps[0].stem
    else:
        src = None
    if src is not None:
        text = src.read_text().splitlines()
        write_atomic(report_dir / "fig3.csv", "\n".join(text[1:]) + "\n")
        written.append(report_dir / "fig3.csv")
        manifest["fig3.csv"] = {"columns": ["rho", "theta", "u"], "case_id": surface_case, "header": text[0]}
    write_atomic(report_dir / "figures.json", dump_json(manifest))
    written.append(report_dir / "figures.json")
    return written
