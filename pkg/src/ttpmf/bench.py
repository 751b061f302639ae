"""Benchmark harness: filter comparison runs, dimension sweeps, CSV output.

All filters in a run see identical simulated trajectories.  Per-run random
streams derive from one master seed by a fixed splitting rule:
``numpy.random.SeedSequence((master_seed, run_index, purpose))`` with
purpose 0 for trajectory simulation and purpose 1 for the particle filter;
the cross solver uses its own configured seed.  Every statistical output is
therefore a pure function of the configuration, and the emitted CSV files
are byte-identical across executions.  Wall-clock timings can never be, so
the ``ms_per_step`` column in ``summary.csv`` is left empty and the
measured values go to a companion ``timings.txt`` instead; in-memory
reports carry the numbers.

Timing methodology: median of per-step wall-clock times over all steps and
runs, excluding trajectory simulation and file output.  Storage numbers are
read from the actual data structures; only filters skipped by the memory
guard report formula-based figures, marked ``estimated:`` in the CSV.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from ttpmf.filters import (
    GridConfig,
    bootstrap_pf_step,
    dense_fft_pmf_step,
    dense_pmf_step,
    initial_particles,
    initial_pmd_dense,
    initial_pmd_tt,
    tt_fft_pmf_step,
    tt_pmf_step,
)
from ttpmf.grids import MomentEstimate
from ttpmf.models import (
    linear_gaussian_1d,
    radar_identity_model,
    radar_model,
    scaling_model,
    simulate,
)
from ttpmf.tt_algorithms import CrossConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "FilterOutcome",
    "RunReport",
    "config_from_mapping",
    "load_config",
    "run_compare",
    "run_scaling",
    "emit_csv",
    "FILTER_NAMES",
    "COMPARE_SCENARIOS",
    "DENSE_GUARD_BYTES",
]

FILTER_NAMES = ("dense", "fft", "tt", "ttfft", "pf")
COMPARE_SCENARIOS = ("radar", "linear1d", "linear2d")
DENSE_GUARD_BYTES = 4 * 1024**3
_FLOAT_BYTES = 8


class ConfigError(ValueError):
    """Invalid benchmark configuration: bad file, unknown key, or bad value."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Everything a benchmark execution depends on."""

    scenario: str
    filters: tuple[str, ...] = FILTER_NAMES
    runs: int = 10
    k_f: int = 10
    master_seed: int = 2024
    n_per_axis: int = 33
    sigma_mult: float = 4.0
    round_tol: float = 1e-8
    cross_tol: float = 1e-2
    cross_max_rank: int = 150
    cross_seed: int = 0
    pf_particles: int = 10_000
    out_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        if not self.scenario:
            raise ConfigError("scenario must be a non-empty string")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.k_f < 1:
            raise ConfigError("k_f must be >= 1")
        if self.n_per_axis < 3 or self.n_per_axis % 2 == 0:
            raise ConfigError("n_per_axis must be odd and >= 3")
        for name in ("sigma_mult", "round_tol", "cross_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.cross_max_rank < 1:
            raise ConfigError("cross max_rank must be >= 1")
        if self.pf_particles < 1:
            raise ConfigError("pf particles must be >= 1")
        unknown = [f for f in self.filters if f not in FILTER_NAMES]
        if unknown:
            raise ConfigError(
                f"unknown filters {unknown}; available: {list(FILTER_NAMES)}"
            )

    def grid_config(self) -> GridConfig:
        return GridConfig(
            n_per_axis=self.n_per_axis,
            sigma_mult=self.sigma_mult,
            round_tol=self.round_tol,
        )

    def cross_config(self) -> CrossConfig:
        return CrossConfig(
            tol=self.cross_tol,
            max_rank=self.cross_max_rank,
            rng_seed=self.cross_seed,
        )


_TOP_KEYS = {
    "scenario", "filters", "runs", "k_f", "master_seed", "out_dir",
    "grid", "cross", "pf",
}
_SECTION_KEYS = {
    "grid": {"n_per_axis", "sigma_mult", "round_tol"},
    "cross": {"tol", "max_rank", "rng_seed"},
    "pf": {"particles"},
}
_SECTION_FIELDS = {
    ("grid", "n_per_axis"): ("n_per_axis", int),
    ("grid", "sigma_mult"): ("sigma_mult", float),
    ("grid", "round_tol"): ("round_tol", float),
    ("cross", "tol"): ("cross_tol", float),
    ("cross", "max_rank"): ("cross_max_rank", int),
    ("cross", "rng_seed"): ("cross_seed", int),
    ("pf", "particles"): ("pf_particles", int),
}


def _coerce(value, kind, context: str):
    try:
        if kind is int:
            out = int(value)
            if out != float(value):
                raise ValueError
            return out
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{context}: expected {kind.__name__}, got {value!r}") from None


def _parse_filters(value) -> tuple[str, ...]:
    if isinstance(value, str):
        names = [v.strip() for v in value.split(",") if v.strip()]
    elif isinstance(value, Sequence):
        names = [str(v) for v in value]
    else:
        raise ConfigError(f"filters: expected list or comma string, got {value!r}")
    return tuple(names)


def config_from_mapping(data) -> RunConfig:
    """Build a :class:`RunConfig` from parsed nested key-value sections."""
    if not isinstance(data, Mapping):
        raise ConfigError("configuration root must be a mapping")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; allowed: {sorted(_TOP_KEYS)}")
    if "scenario" not in data:
        raise ConfigError("config is missing required key 'scenario'")
    kwargs: dict = {"scenario": str(data["scenario"])}
    if "filters" in data:
        kwargs["filters"] = _parse_filters(data["filters"])
    for key, kind in (("runs", int), ("k_f", int), ("master_seed", int)):
        if key in data:
            kwargs[key] = _coerce(data[key], kind, key)
    if "out_dir" in data:
        kwargs["out_dir"] = str(data["out_dir"])
    for section, allowed in _SECTION_KEYS.items():
        if section not in data:
            continue
        body = data[section]
        if not isinstance(body, Mapping):
            raise ConfigError(f"section '{section}' must be a mapping")
        bad = sorted(set(body) - allowed)
        if bad:
            raise ConfigError(
                f"unknown keys {bad} in section '{section}'; allowed: {sorted(allowed)}"
            )
        for key, value in body.items():
            field_name, kind = _SECTION_FIELDS[(section, key)]
            kwargs[field_name] = _coerce(value, kind, f"{section}.{key}")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    """Read a YAML configuration file into a validated :class:`RunConfig`."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {p} is not valid YAML: {exc}") from None
    return config_from_mapping(data)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterOutcome:
    """Aggregated result of one filter over all Monte Carlo runs."""

    name: str
    dim: int
    rmse: tuple[float, ...] | None
    rel_diff_pct: float | None
    bytes_tpm: int
    bytes_pmd: int
    storage_estimated: bool
    ms_per_step: float | None
    clipped_mass: float | None
    max_mass_dev: float | None
    failure: str | None
    skipped: str | None
    diagnostics: tuple[tuple[str, float], ...]
    trace: tuple[tuple[float, ...], ...] | None


@dataclass(frozen=True)
class RunReport:
    """All filter outcomes of one benchmark execution."""

    scenario: str
    runs: int
    k_f: int
    rows: tuple[FilterOutcome, ...]

    @property
    def failures(self) -> tuple[FilterOutcome, ...]:
        return tuple(r for r in self.rows if r.failure is not None)

    def row(self, name: str, dim: int | None = None) -> FilterOutcome:
        for r in self.rows:
            if r.name == name and (dim is None or r.dim == dim):
                return r
        raise KeyError(f"no outcome for filter {name!r} (dim {dim})")

    @staticmethod
    def merge(reports: Sequence["RunReport"]) -> "RunReport":
        """Combine a report series into one multi-dimension report.

        Traces are dropped: a single trace file per filter cannot represent
        several dimensions at once.
        """
        if not reports:
            raise ValueError("cannot merge an empty report series")
        rows = tuple(
            replace(r, trace=None) for rep in reports for r in rep.rows
        )
        first = reports[0]
        return RunReport("scaling", first.runs, first.k_f, rows)


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def _scenario_model(cfg: RunConfig):
    radar_prior = MomentEstimate(np.array([20.0, 20.0]), np.diag([9.0, 9.0]))
    if cfg.scenario == "radar":
        return radar_model(), radar_prior
    if cfg.scenario == "linear2d":
        return radar_identity_model(), radar_prior
    if cfg.scenario == "linear1d":
        return linear_gaussian_1d(), MomentEstimate(np.zeros(1), 2.0 * np.eye(1))
    raise ConfigError(
        f"unknown compare scenario {cfg.scenario!r}; available: {list(COMPARE_SCENARIOS)}"
    )


def _trajectories(cfg: RunConfig, model, prior: MomentEstimate):
    return [
        simulate(
            model,
            prior.mean,
            prior.cov,
            cfg.k_f,
            seed=np.random.SeedSequence((cfg.master_seed, r, 0)),
        )
        for r in range(cfg.runs)
    ]


def _run_grid_filter(name, model, prior, trajs, cfg: RunConfig) -> FilterOutcome:
    gcfg = cfg.grid_config()
    ccfg = cfg.cross_config()
    if name in ("dense", "fft"):
        p0 = initial_pmd_dense(prior, gcfg)
        dense_step = dense_pmf_step if name == "dense" else dense_fft_pmf_step

        def do_step(state, z):
            return dense_step(state, model, z, gcfg)
    else:
        p0 = initial_pmd_tt(prior, gcfg, ccfg)
        tt_step = tt_pmf_step if name == "tt" else tt_fft_pmf_step

        def do_step(state, z):
            return tt_step(state, model, z, gcfg, ccfg)

    times: list[float] = []
    errors: list[np.ndarray] = []
    bytes_tpm = bytes_pmd = 0
    clipped = mass_dev = before_dev = 0.0
    cross_err_max = 0.0
    cross_calls = 0
    cross_unconverged = 0
    trace: tuple[tuple[float, ...], ...] | None = None
    for r, traj in enumerate(trajs):
        state = p0
        rows = []
        for k in range(cfg.k_f):
            z = np.asarray(traj.measurements[k], dtype=float)
            t0 = time.perf_counter()
            state = do_step(state, z)
            times.append(time.perf_counter() - t0)
            diag = state.diag
            mean = diag.filt_moments.mean
            err = mean - traj.states[k]
            errors.append(err)
            bytes_tpm = max(bytes_tpm, diag.tpm_bytes)
            bytes_pmd = max(bytes_pmd, diag.pmd_bytes)
            clipped = max(clipped, diag.clipped_mass)
            mass_dev = max(mass_dev, abs(state.mass() - 1.0))
            if math.isfinite(diag.mass_before_norm):
                before_dev = max(before_dev, abs(diag.mass_before_norm - 1.0))
            for achieved, calls, _sweeps, converged in diag.cross_info.values():
                cross_err_max = max(cross_err_max, achieved)
                cross_calls += calls
                cross_unconverged += 0 if converged else 1
            if r == 0:
                rows.append(
                    (float(k), *traj.states[k], *mean, *err)
                )
        if r == 0:
            trace = tuple(rows)
    rmse = tuple(
        float(v) for v in np.sqrt(np.mean(np.square(np.array(errors)), axis=0))
    )
    diagnostics = (
        ("cross_achieved_max", cross_err_max),
        ("cross_calls_total", float(cross_calls)),
        ("cross_unconverged_steps", float(cross_unconverged)),
        ("max_mass_before_norm_dev", before_dev),
    )
    return FilterOutcome(
        name=name,
        dim=model.dim_x,
        rmse=rmse,
        rel_diff_pct=None,
        bytes_tpm=bytes_tpm,
        bytes_pmd=bytes_pmd,
        storage_estimated=False,
        ms_per_step=1000.0 * statistics.median(times),
        clipped_mass=clipped,
        max_mass_dev=mass_dev,
        failure=None,
        skipped=None,
        diagnostics=diagnostics,
        trace=trace,
    )


def _run_particle_filter(model, prior, trajs, cfg: RunConfig) -> FilterOutcome:
    times: list[float] = []
    errors: list[np.ndarray] = []
    bytes_pmd = 0
    mass_dev = 0.0
    trace: tuple[tuple[float, ...], ...] | None = None
    for r, traj in enumerate(trajs):
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.master_seed, r, 1))
        )
        ps = initial_particles(prior, cfg.pf_particles, rng)
        rows = []
        for k in range(cfg.k_f):
            z = np.asarray(traj.measurements[k], dtype=float)
            t0 = time.perf_counter()
            ps, moments = bootstrap_pf_step(ps, model, z, rng)
            times.append(time.perf_counter() - t0)
            err = moments.mean - traj.states[k]
            errors.append(err)
            bytes_pmd = max(bytes_pmd, ps.storage_bytes())
            mass_dev = max(mass_dev, abs(float(ps.weights.sum()) - 1.0))
            if r == 0:
                rows.append((float(k), *traj.states[k], *moments.mean, *err))
        if r == 0:
            trace = tuple(rows)
    rmse = tuple(
        float(v) for v in np.sqrt(np.mean(np.square(np.array(errors)), axis=0))
    )
    return FilterOutcome(
        name="pf",
        dim=model.dim_x,
        rmse=rmse,
        rel_diff_pct=None,
        bytes_tpm=0,
        bytes_pmd=bytes_pmd,
        storage_estimated=False,
        ms_per_step=1000.0 * statistics.median(times),
        clipped_mass=0.0,
        max_mass_dev=mass_dev,
        failure=None,
        skipped=None,
        diagnostics=(("particles", float(cfg.pf_particles)),),
        trace=trace,
    )


def _failed_outcome(name: str, dim: int, exc: Exception) -> FilterOutcome:
    return FilterOutcome(
        name=name,
        dim=dim,
        rmse=None,
        rel_diff_pct=None,
        bytes_tpm=0,
        bytes_pmd=0,
        storage_estimated=False,
        ms_per_step=None,
        clipped_mass=None,
        max_mass_dev=None,
        failure=f"{type(exc).__name__}: {exc}",
        skipped=None,
        diagnostics=(),
        trace=None,
    )


def _run_filter(name, model, prior, trajs, cfg: RunConfig) -> FilterOutcome:
    try:
        if name == "pf":
            return _run_particle_filter(model, prior, trajs, cfg)
        return _run_grid_filter(name, model, prior, trajs, cfg)
    except Exception as exc:  # a failing filter must not kill the comparison
        return _failed_outcome(name, model.dim_x, exc)


def _with_rel_diffs(rows: Sequence[FilterOutcome]) -> tuple[FilterOutcome, ...]:
    """Relative RMSE difference against the dense baseline, in percent.

    The reported figure is the worst over state components of
    |rmse_filter - rmse_dense| / rmse_dense; it measures agreement with the
    baseline, not estimation quality (a filter can beat the baseline and
    still show a large difference).
    """
    dense = next(
        (r for r in rows if r.name == "dense" and r.rmse is not None), None
    )
    out = []
    for r in rows:
        if r.rmse is None or dense is None:
            out.append(r)
        elif r.name == "dense":
            out.append(replace(r, rel_diff_pct=0.0))
        else:
            rel = 100.0 * max(
                abs(a - b) / b for a, b in zip(r.rmse, dense.rmse)
            )
            out.append(replace(r, rel_diff_pct=rel))
    return tuple(out)


def run_compare(cfg: RunConfig) -> RunReport:
    """Run every configured filter on the configured scenario.

    All filters see identical trajectories; a filter failure is recorded in
    its outcome row and the remaining filters still run.
    """
    model, prior = _scenario_model(cfg)
    trajs = _trajectories(cfg, model, prior)
    rows = [_run_filter(name, model, prior, trajs, cfg) for name in cfg.filters]
    return RunReport(cfg.scenario, cfg.runs, cfg.k_f, _with_rel_diffs(rows))


def run_scaling(cfg: RunConfig, dims: Sequence[int]) -> list[RunReport]:
    """Dimension sweep over the synthetic tracking family.

    The state dimension grows by embedding the 2D tracking dynamics block
    diagonally (a trailing odd dimension gets a scalar 0.95 block) with unit
    process noise and a range-plus-bearing measurement.  Filters whose dense
    transition tensor would exceed the memory guard are skipped with
    formula-based storage figures marked as estimates.
    """
    reports = []
    for dim in dims:
        if dim < 2:
            raise ConfigError(f"scaling dimensions must be >= 2, got {dim}")
        model = scaling_model(dim)
        prior = MomentEstimate(20.0 * np.ones(dim), 9.0 * np.eye(dim))
        trajs = _trajectories(cfg, model, prior)
        dense_tpm_bytes = _FLOAT_BYTES * cfg.n_per_axis ** (2 * dim)
        dense_pmd_bytes = _FLOAT_BYTES * cfg.n_per_axis**dim
        rows = []
        for name in cfg.filters:
            if name in ("dense", "fft") and dense_tpm_bytes > DENSE_GUARD_BYTES:
                rows.append(
                    FilterOutcome(
                        name=name,
                        dim=dim,
                        rmse=None,
                        rel_diff_pct=None,
                        bytes_tpm=(
                            dense_tpm_bytes if name == "dense" else dense_pmd_bytes
                        ),
                        bytes_pmd=dense_pmd_bytes,
                        storage_estimated=True,
                        ms_per_step=None,
                        clipped_mass=None,
                        max_mass_dev=None,
                        failure=None,
                        skipped=(
                            "memory guard: dense transition tensor needs "
                            f"{dense_tpm_bytes} bytes (limit {DENSE_GUARD_BYTES})"
                        ),
                        diagnostics=(),
                        trace=None,
                    )
                )
                continue
            rows.append(_run_filter(name, model, prior, trajs, cfg))
        reports.append(
            RunReport(f"scaling-{dim}", cfg.runs, cfg.k_f, _with_rel_diffs(rows))
        )
    return reports


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

_SUMMARY_HEADER = (
    "filter,d,rmse_x,rmse_y,rel_diff_pct,bytes_tpm,bytes_pmd,ms_per_step,clipped_mass"
)


def _axis_label(i: int) -> str:
    return ("x", "y")[i] if i < 2 else f"x{i + 1}"


def _fmt(value: float | None, spec: str) -> str:
    return "" if value is None else format(value, spec)


def _bytes_field(value: int, estimated: bool) -> str:
    return f"estimated:{value}" if estimated else str(value)


def _write_text(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_csv(report: RunReport, out_dir) -> list[Path]:
    """Write ``summary.csv``, per-filter trace files, and ``timings.txt``.

    The CSV contents are fully determined by configuration and seeds.  The
    one quantity that cannot be — measured wall-clock time — is left empty
    in the summary and written to ``timings.txt`` instead.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    lines = [_SUMMARY_HEADER]
    for r in report.rows:
        rmse_x = _fmt(r.rmse[0] if r.rmse else None, ".6f")
        rmse_y = _fmt(
            r.rmse[1] if r.rmse is not None and len(r.rmse) > 1 else None, ".6f"
        )
        lines.append(
            ",".join(
                [
                    r.name,
                    str(r.dim),
                    rmse_x,
                    rmse_y,
                    _fmt(r.rel_diff_pct, ".4f"),
                    _bytes_field(r.bytes_tpm, r.storage_estimated),
                    _bytes_field(r.bytes_pmd, r.storage_estimated),
                    "",
                    _fmt(r.clipped_mass, ".3e"),
                ]
            )
        )
    summary = out / "summary.csv"
    _write_text(summary, "\n".join(lines) + "\n")
    written.append(summary)

    for r in report.rows:
        if r.trace is None:
            continue
        labels = [_axis_label(i) for i in range(r.dim)]
        header = ",".join(
            ["k"]
            + [f"true_{lab}" for lab in labels]
            + [f"est_{lab}" for lab in labels]
            + [f"err_{lab}" for lab in labels]
        )
        rows = [header]
        for row in r.trace:
            rows.append(
                ",".join([str(int(row[0]))] + [format(v, ".9g") for v in row[1:]])
            )
        path = out / f"trace_{r.name}.csv"
        _write_text(path, "\n".join(rows) + "\n")
        written.append(path)

    timing_lines = [
        "# median per-step wall clock in milliseconds (filter steps only);",
        "# measured anew each execution, deliberately not part of the",
        "# deterministic CSV outputs",
    ]
    for r in report.rows:
        value = "skipped" if r.skipped else _fmt(r.ms_per_step, ".3f") or "failed"
        timing_lines.append(f"{r.name} d={r.dim} {value}")
    timings = out / "timings.txt"
    _write_text(timings, "\n".join(timing_lines) + "\n")
    written.append(timings)
    return written
