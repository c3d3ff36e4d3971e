"""Scenario presets and the simulate -> histogram -> fit -> verdict pipeline.

A Scenario bundles a full SimulationConfig with a measurement plan:
either a fringe scan (a list of analyzer settings, each simulated
with its own derived seed), a coincidence-window sweep, or a pump-rate
sweep (the last two are closed-form, no Monte Carlo).  run_scenario
executes the plan and returns a RunReport; emit_outputs writes the
report and its delimited-text companions with deterministic bytes, so
identical scenario + seed reproduce identical files.  Wall-clock time
is kept on the report object but never written into output files.

Config files are strict JSON mirroring the dataclass fields (units in
the key names); unknown keys are rejected with the offending path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .budget import (RatePrediction, WindowOptimization, predict_rates,
                     predict_visibility, optimize_window)
from .errors import FitDegenerate, FitNotConverged, ParseError, \
    ValidationError
from .montecarlo import (SimDiagnostics, SimulationConfig, TimingDriftSpec,
                         derive_seed, iter_click_buckets)
from .physics import (AnalyzerSpec, ChannelSpec, CoincidenceWindowSpec,
                      DetectorSpec, SourceSpec, chsh_from_visibility)
from .tia import (DelayHistogram, FringeScan, HistogramAccumulator,
                  VisibilityEstimate, count_in_window, fit_fringe,
                  write_scan_csv)

__all__ = [
    "CALIBRATION_TARGET_VISIBILITY", "FringePointResult", "MuScanRow",
    "PRESET_NAMES", "RunReport", "ScanPlan", "Scenario",
    "calibrate_contrast", "config_hash", "emit_outputs", "load_config",
    "phase_grid", "preset", "run_scenario", "run_scenarios", "save_config",
]

# Stock link parameters shared by the shipped presets: 50 km of 0.2 dB/km
# fiber per arm behind 10 dB of pre-fiber coupling loss, 5 dB analyzers,
# asymmetric detector efficiencies, 100 Hz dark rates, and a 65 ps FWHM
# coincidence-peak jitter budget split evenly between the two detectors
# (each contributes 65/sqrt(2) since the pair delay adds them in
# quadrature).
_STOCK_PRE_FIBER_DB = 10.0
_STOCK_FIBER_KM = 50.0
_STOCK_QE = {"signal": 0.007, "idler": 0.021}
_STOCK_DARK_HZ = 100.0
_PER_DETECTOR_JITTER_FWHM_PS = 65.0 / math.sqrt(2.0)

#: Back-to-back fringe visibility the analyzer contrast is calibrated to.
CALIBRATION_TARGET_VISIBILITY = 0.8358

PRESET_NAMES = ("paper-100km", "back-to-back", "ideal", "window-sweep",
                "mu-sweep")

_NAME_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*")


def phase_grid(n_points: int) -> Tuple[float, ...]:
    """n_points phases evenly covering [0, 2*pi)."""
    if not isinstance(n_points, int) or isinstance(n_points, bool) \
            or n_points < 1:
        raise ValidationError("n_points must be a positive integer")
    return tuple(2.0 * math.pi * k / n_points for k in range(n_points))


@dataclass(frozen=True)
class ScanPlan:
    """Fringe-scan plan: which analyzer is swept, through which
    settings, and for how long per point.

    ``abscissa`` is "phase" (settings in radians) or "temperature"
    (settings in deg C; the swept analyzer must then carry a
    phase_per_kelvin_rad calibration)."""

    settings: Tuple[float, ...]
    acquisition_s_per_point: float
    abscissa: str = "phase"
    scanned: str = "signal"

    def __post_init__(self):
        if self.abscissa not in ("phase", "temperature"):
            raise ValidationError(
                f"abscissa must be 'phase' or 'temperature', "
                f"got {self.abscissa!r}")
        if self.scanned not in ("signal", "idler"):
            raise ValidationError(
                f"scanned must be 'signal' or 'idler', got {self.scanned!r}")
        settings = tuple(float(s) for s in self.settings)
        if not settings:
            raise ValidationError("a fringe scan needs at least one point")
        if not all(math.isfinite(s) for s in settings):
            raise ValidationError("scan settings must be finite")
        object.__setattr__(self, "settings", settings)
        if not (self.acquisition_s_per_point > 0.0
                and math.isfinite(self.acquisition_s_per_point)):
            raise ValidationError("acquisition_s_per_point must be > 0")


@dataclass(frozen=True)
class Scenario:
    """One named run: a config plus exactly one measurement plan
    (fringe scan, window sweep, or pump-rate sweep)."""

    name: str
    config: SimulationConfig
    plan: Optional[ScanPlan] = None
    window_grid_ps: Optional[Tuple[float, ...]] = None
    mu_grid: Optional[Tuple[float, ...]] = None
    window_objective: str = "s_value"
    emit_histograms: bool = False

    def __post_init__(self):
        if not isinstance(self.name, str) or not _NAME_RE.fullmatch(self.name):
            raise ValidationError(
                f"scenario name {self.name!r} must match "
                f"{_NAME_RE.pattern} (it becomes a file name)")
        modes = [self.plan is not None, self.window_grid_ps is not None,
                 self.mu_grid is not None]
        if sum(modes) != 1:
            raise ValidationError(
                "exactly one of plan / window_grid_ps / mu_grid must be set")
        for attr in ("window_grid_ps", "mu_grid"):
            grid = getattr(self, attr)
            if grid is None:
                continue
            grid = tuple(float(g) for g in grid)
            if not grid or not all(math.isfinite(g) and g > 0 for g in grid):
                raise ValidationError(
                    f"{attr} must be a non-empty tuple of positive values")
            object.__setattr__(self, attr, grid)
        if self.window_objective not in ("s_value", "rate_weighted"):
            raise ValidationError(
                f"window_objective must be 's_value' or 'rate_weighted', "
                f"got {self.window_objective!r}")
        if self.plan is not None:
            analyzer = getattr(self.config, f"analyzer_{self.plan.scanned}")
            if self.plan.abscissa == "phase" \
                    and analyzer.phase_rad is None:
                raise ValidationError(
                    f"phase scan over analyzer_{self.plan.scanned} needs a "
                    f"phase-driven analyzer (phase_rad set)")
            if self.plan.abscissa == "temperature" \
                    and analyzer.phase_per_kelvin_rad is None:
                raise ValidationError(
                    f"temperature scan over analyzer_{self.plan.scanned} "
                    f"needs phase_per_kelvin_rad on that analyzer")

    @property
    def mode(self) -> str:
        if self.plan is not None:
            return "fringe"
        if self.window_grid_ps is not None:
            return "window-sweep"
        return "mu-sweep"


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _stock_config(fiber_km: float, window_ps: float, contrast: float,
                  drift: Optional[TimingDriftSpec] = None,
                  master_seed: int = 0) -> SimulationConfig:
    analyzer = AnalyzerSpec(delay_ps=100.0, insertion_loss_db=5.0,
                            phase_rad=0.0, contrast=contrast)
    return SimulationConfig(
        source=SourceSpec(),
        channel_signal=ChannelSpec(fiber_length_km=fiber_km,
                                   pre_fiber_loss_db=_STOCK_PRE_FIBER_DB),
        channel_idler=ChannelSpec(fiber_length_km=fiber_km,
                                  pre_fiber_loss_db=_STOCK_PRE_FIBER_DB),
        analyzer_signal=analyzer,
        analyzer_idler=analyzer,
        detector_signal=DetectorSpec(
            quantum_efficiency=_STOCK_QE["signal"],
            dark_rate_hz=_STOCK_DARK_HZ,
            jitter_fwhm_ps=_PER_DETECTOR_JITTER_FWHM_PS),
        detector_idler=DetectorSpec(
            quantum_efficiency=_STOCK_QE["idler"],
            dark_rate_hz=_STOCK_DARK_HZ,
            jitter_fwhm_ps=_PER_DETECTOR_JITTER_FWHM_PS),
        tia=CoincidenceWindowSpec(window_ps=window_ps, histogram_bin_ps=10.0),
        drift=TimingDriftSpec() if drift is None else drift,
        acquisition_time_s=1.0,
        master_seed=master_seed,
    )


def calibrate_contrast() -> float:
    """Per-analyzer contrast that brings the predicted back-to-back
    fringe visibility (side-peak-corrected) to the calibration target.

    The single overall-contrast factor c enters the fringe as
    V = c * V(c=1), so c = target / V(c=1); each of the two analyzers
    carries sqrt(c)."""
    base = _stock_config(fiber_km=0.0, window_ps=60.0, contrast=1.0)
    v_unit = predict_visibility(base).visibility
    c_total = CALIBRATION_TARGET_VISIBILITY / v_unit
    if not (0.0 < c_total <= 1.0):
        raise ValidationError(
            f"calibration target {CALIBRATION_TARGET_VISIBILITY} is not "
            f"reachable: needs overall contrast {c_total:.4f}")
    return math.sqrt(c_total)


def preset(name: str, master_seed: int = 0) -> Scenario:
    """Built-in scenarios.  See PRESET_NAMES."""
    if name == "ideal":
        cfg = SimulationConfig(
            source=SourceSpec(mean_pairs_per_window=1e-4),
            channel_signal=ChannelSpec(fiber_length_km=0.0),
            channel_idler=ChannelSpec(fiber_length_km=0.0),
            analyzer_signal=AnalyzerSpec(insertion_loss_db=0.0),
            analyzer_idler=AnalyzerSpec(insertion_loss_db=0.0),
            detector_signal=DetectorSpec(quantum_efficiency=1.0,
                                         dark_rate_hz=0.0,
                                         jitter_fwhm_ps=0.0),
            detector_idler=DetectorSpec(quantum_efficiency=1.0,
                                        dark_rate_hz=0.0,
                                        jitter_fwhm_ps=0.0),
            tia=CoincidenceWindowSpec(window_ps=60.0, histogram_bin_ps=10.0),
            master_seed=master_seed,
        )
        return Scenario(name="ideal", config=cfg,
                        plan=ScanPlan(settings=phase_grid(16),
                                      acquisition_s_per_point=0.1))

    contrast = calibrate_contrast()
    if name == "paper-100km":
        cfg = _stock_config(_STOCK_FIBER_KM, 100.0, contrast, master_seed=master_seed)
        return Scenario(name="paper-100km", config=cfg,
                        plan=ScanPlan(settings=phase_grid(16),
                                      acquisition_s_per_point=2400.0))
    if name == "back-to-back":
        cfg = _stock_config(0.0, 60.0, contrast, master_seed=master_seed)
        return Scenario(name="back-to-back", config=cfg,
                        plan=ScanPlan(settings=phase_grid(16),
                                      acquisition_s_per_point=120.0))
    if name == "window-sweep":
        drift = TimingDriftSpec(enabled=True, channel="idler",
                                offset_ps=40.0)
        cfg = _stock_config(_STOCK_FIBER_KM, 100.0, contrast, drift=drift,
                            master_seed=master_seed)
        return Scenario(name="window-sweep", config=cfg,
                        window_grid_ps=tuple(float(w)
                                             for w in range(60, 150, 10)))
    if name == "mu-sweep":
        cfg = _stock_config(0.0, 60.0, contrast, master_seed=master_seed)
        return Scenario(name="mu-sweep", config=cfg,
                        mu_grid=(0.001, 0.002, 0.005, 0.01, 0.02,
                                 0.05, 0.1, 0.2))
    raise ValidationError(
        f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


# ---------------------------------------------------------------------------
# Config files (strict JSON, units in key names)
# ---------------------------------------------------------------------------

_SECTION_TYPES = {
    "source": SourceSpec,
    "channel_signal": ChannelSpec,
    "channel_idler": ChannelSpec,
    "analyzer_signal": AnalyzerSpec,
    "analyzer_idler": AnalyzerSpec,
    "detector_signal": DetectorSpec,
    "detector_idler": DetectorSpec,
    "tia": CoincidenceWindowSpec,
    "drift": TimingDriftSpec,
}

# Fields where JSON null is a meaningful value rather than a mistake.
_NULLABLE = {"phase_rad", "temperature_c", "phase_per_kelvin_rad",
             "beta2_ps2_per_km"}

_FIELD_KINDS = {bool: "bool", int: "int", float: "float", str: "str"}


def _coerce_scalar(value, kind: str, path: str):
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise ValidationError(f"{path}: expected true/false, "
                              f"got {value!r}")
    if kind == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ValidationError(f"{path}: expected an integer, got {value!r}")
    if kind == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ValidationError(f"{path}: expected a number, got {value!r}")
    if kind == "str":
        if isinstance(value, str):
            return value
        raise ValidationError(f"{path}: expected a string, got {value!r}")
    raise AssertionError(kind)


def _build_spec(cls, data, path: str):
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}: unknown key "
                              f"(valid keys: {', '.join(sorted(fields))})")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}"
        if value is None:
            if name in _NULLABLE:
                kwargs[name] = None
                continue
            raise ValidationError(f"{sub}: null is not a valid value")
        declared = str(fields[name].type)
        if "bool" in declared:
            kind = "bool"
        elif "int" in declared:
            kind = "int"
        elif "str" in declared:
            kind = "str"
        else:
            kind = "float"
        kwargs[name] = _coerce_scalar(value, kind, sub)
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _build_config(data, path: str = "config") -> SimulationConfig:
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected an object")
    valid = set(_SECTION_TYPES) | {"acquisition_time_s", "master_seed"}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}: unknown key "
                              f"(valid keys: {', '.join(sorted(valid))})")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}"
        if key in _SECTION_TYPES:
            kwargs[key] = _build_spec(_SECTION_TYPES[key], value, sub)
        elif key == "acquisition_time_s":
            kwargs[key] = _coerce_scalar(value, "float", sub)
        else:
            kwargs[key] = _coerce_scalar(value, "int", sub)
    try:
        return SimulationConfig(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _build_plan(data, path: str) -> ScanPlan:
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected an object")
    valid = {"settings", "acquisition_s_per_point", "abscissa", "scanned"}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}: unknown key "
                              f"(valid keys: {', '.join(sorted(valid))})")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}"
        if key == "settings":
            if not isinstance(value, list):
                raise ValidationError(f"{sub}: expected an array")
            kwargs[key] = tuple(
                _coerce_scalar(v, "float", f"{sub}[{i}]")
                for i, v in enumerate(value))
        elif key == "acquisition_s_per_point":
            kwargs[key] = _coerce_scalar(value, "float", sub)
        else:
            kwargs[key] = _coerce_scalar(value, "str", sub)
    try:
        return ScanPlan(**kwargs)
    except TypeError as exc:  # missing required field
        raise ValidationError(f"{path}: {exc}") from exc
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _build_scenario(data, path: str = "scenario") -> Scenario:
    valid = {"name", "config", "plan", "window_grid_ps", "mu_grid",
             "window_objective", "emit_histograms"}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}: unknown key "
                              f"(valid keys: {', '.join(sorted(valid))})")
    kwargs: Dict[str, object] = {}
    for key, value in data.items():
        sub = f"{path}.{key}"
        if key == "name":
            kwargs[key] = _coerce_scalar(value, "str", sub)
        elif key == "config":
            kwargs[key] = _build_config(value, sub)
        elif key == "plan":
            kwargs[key] = None if value is None else _build_plan(value, sub)
        elif key in ("window_grid_ps", "mu_grid"):
            if value is None:
                kwargs[key] = None
            elif isinstance(value, list):
                kwargs[key] = tuple(
                    _coerce_scalar(v, "float", f"{sub}[{i}]")
                    for i, v in enumerate(value))
            else:
                raise ValidationError(f"{sub}: expected an array or null")
        elif key == "window_objective":
            kwargs[key] = _coerce_scalar(value, "str", sub)
        else:
            kwargs[key] = _coerce_scalar(value, "bool", sub)
    if "name" not in kwargs or "config" not in kwargs:
        missing = {"name", "config"} - set(kwargs)
        raise ValidationError(
            f"{path}.{sorted(missing)[0]}: required key missing")
    try:
        return Scenario(**kwargs)  # type: ignore[arg-type]
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def load_config(path) -> Union[SimulationConfig, Scenario]:
    """Parse a strict-JSON config or scenario file.

    A top-level "config" key marks a scenario document; anything else
    is read as a bare simulation config.  Unknown keys anywhere are
    rejected with their dotted path; syntax errors carry line:column."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be an object")
    if "config" in data:
        return _build_scenario(data, path="scenario")
    return _build_config(data, path="config")


def save_config(obj: Union[SimulationConfig, Scenario], path) -> None:
    """Write a config or scenario as strict JSON; load_config round-trips
    it to an equal object."""
    if isinstance(obj, Scenario):
        doc = dataclasses.asdict(obj)
    elif isinstance(obj, SimulationConfig):
        doc = dataclasses.asdict(obj)
    else:
        raise ValidationError(
            f"can only save SimulationConfig or Scenario, got {type(obj)}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(config: SimulationConfig) -> str:
    """12-hex-digit digest of the full parameter set (seed included)."""
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True,
                         separators=(",", ":"))
    return hashlib.sha256(payload.encode("ascii")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class FringePointResult:
    """One fringe point: windowed coincidences plus bookkeeping."""

    setting: float
    point_seed: int
    counts_central: int
    counts_side_early: int
    counts_side_late: int
    singles_signal: int
    singles_idler: int
    pairs_generated: int
    histogram: Optional[DelayHistogram] = None


@dataclass(frozen=True)
class MuScanRow:
    mean_pairs_per_window: float
    visibility: float
    s_value: float
    violates: bool
    central_max_in_window_hz: float
    accidental_in_window_hz: float


@dataclass
class RunReport:
    """Everything one scenario run produced.  wall_clock_s is
    diagnostic only and never written to output files."""

    scenario_name: str
    config_hash: str
    master_seed: int
    mode: str
    predicted_rates: RatePrediction
    predicted_visibility: float
    predicted_visibility_raw: float
    abscissa: Optional[str] = None
    acquisition_s_per_point: Optional[float] = None
    points: Optional[List[FringePointResult]] = None
    scan: Optional[FringeScan] = None
    estimate: Optional[VisibilityEstimate] = None
    fit_degenerate: bool = False
    s_value: Optional[float] = None
    violates: Optional[bool] = None
    window_table: Optional[WindowOptimization] = None
    mu_table: Optional[List[MuScanRow]] = None
    events_generated: int = 0
    wall_clock_s: float = 0.0


def _histogram_range_ps(config: SimulationConfig) -> float:
    # side peaks sit at +/- the analyzer delay; keep a full window of
    # margin beyond them so count_in_window never clips
    return config.analyzer_signal.delay_ps + config.tia.window_ps


def _run_fringe_point(config: SimulationConfig, plan: ScanPlan,
                      index: int) -> FringePointResult:
    setting = plan.settings[index]
    analyzer = getattr(config, f"analyzer_{plan.scanned}")
    if plan.abscissa == "phase":
        analyzer = replace(analyzer, phase_rad=setting, temperature_c=None)
    else:
        analyzer = replace(analyzer, phase_rad=None, temperature_c=setting)
    seed = derive_seed(config.master_seed, index)
    cfg = replace(config, **{f"analyzer_{plan.scanned}": analyzer},
                  acquisition_time_s=plan.acquisition_s_per_point,
                  master_seed=seed)
    diag = SimDiagnostics()
    acc = HistogramAccumulator(cfg.tia.histogram_bin_ps,
                               _histogram_range_ps(cfg))
    for bucket_hi, sig_t, _, idl_t, _ in iter_click_buckets(cfg, diag):
        acc.add_bucket(sig_t, idl_t, bucket_hi)
    hist = acc.finalize()
    w = cfg.tia.window_ps
    delay = cfg.analyzer_signal.delay_ps
    return FringePointResult(
        setting=setting,
        point_seed=seed,
        counts_central=count_in_window(hist, 0.0, w),
        counts_side_early=count_in_window(hist, -delay, w),
        counts_side_late=count_in_window(hist, +delay, w),
        singles_signal=diag.photon_clicks_signal + diag.dark_clicks_signal,
        singles_idler=diag.photon_clicks_idler + diag.dark_clicks_idler,
        pairs_generated=diag.pairs_generated,
        histogram=hist,
    )


def run_scenario(scenario: Scenario,
                 progress: Optional[Callable[[int, int], None]] = None,
                 ) -> RunReport:
    """Execute a scenario and assemble its report.

    Fringe points are simulated with independently derived seeds
    (derive_seed(master, point_index)), so each point's result is the
    same whether points run alone, in order, or in parallel; results
    are always assembled in point order."""
    t_start = time.perf_counter()
    cfg = scenario.config
    rates = predict_rates(cfg)
    v_corr = predict_visibility(cfg).visibility
    v_raw = predict_visibility(cfg, include_side_leak=True).visibility
    report = RunReport(
        scenario_name=scenario.name,
        config_hash=config_hash(cfg),
        master_seed=cfg.master_seed,
        mode=scenario.mode,
        predicted_rates=rates,
        predicted_visibility=v_corr,
        predicted_visibility_raw=v_raw,
    )

    if scenario.mode == "fringe":
        plan = scenario.plan
        assert plan is not None
        points = []
        for k in range(len(plan.settings)):
            points.append(_run_fringe_point(cfg, plan, k))
            if progress is not None:
                progress(k + 1, len(plan.settings))
        report.abscissa = plan.abscissa
        report.acquisition_s_per_point = plan.acquisition_s_per_point
        report.events_generated = sum(p.pairs_generated for p in points)
        if not scenario.emit_histograms:
            for p in points:
                p.histogram = None
        report.points = points
        report.scan = FringeScan(
            settings=np.array([p.setting for p in points]),
            counts=np.array([p.counts_central for p in points]),
            acquisition_s=plan.acquisition_s_per_point,
            singles_a=np.array([p.singles_signal for p in points]),
            singles_b=np.array([p.singles_idler for p in points]),
        )
        if len(points) >= 5:  # the 4-parameter fit needs headroom
            try:
                report.estimate = fit_fringe(report.scan)
            except (FitDegenerate, FitNotConverged) as exc:
                report.fit_degenerate = True
                report.estimate = getattr(exc, "estimate", None)
        else:
            report.fit_degenerate = True
        if report.estimate is not None:
            s, violates = chsh_from_visibility(report.estimate.visibility)
            report.s_value = float(s)
            report.violates = bool(violates)
    elif scenario.mode == "window-sweep":
        report.window_table = optimize_window(
            cfg, scenario.window_grid_ps, scenario.window_objective)
    else:
        rows = []
        for mu in scenario.mu_grid:
            cfg_mu = replace(cfg, source=replace(
                cfg.source, mean_pairs_per_window=mu))
            pred = predict_visibility(cfg_mu)
            s, violates = chsh_from_visibility(pred.visibility)
            r = predict_rates(cfg_mu)
            rows.append(MuScanRow(
                mean_pairs_per_window=mu,
                visibility=pred.visibility,
                s_value=s,
                violates=violates,
                central_max_in_window_hz=r.central_max_in_window_hz,
                accidental_in_window_hz=r.accidental_in_window_hz,
            ))
        report.mu_table = rows

    report.wall_clock_s = time.perf_counter() - t_start
    return report


def run_scenarios(scenarios: Sequence[Scenario],
                  progress: Optional[Callable[[int, int], None]] = None,
                  ) -> List[RunReport]:
    """Run several scenarios; names must be unique so their output
    files cannot collide."""
    names = [s.name for s in scenarios]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValidationError(
            f"scenario names must be unique within a run; "
            f"duplicated: {', '.join(dupes)}")
    return [run_scenario(s, progress=progress) for s in scenarios]


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------

def _native(obj):
    """Recursively convert report pieces to plain JSON-ready values."""
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_native(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_native(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)  # "inf"/"nan" as strings: report stays valid JSON
    return obj


def _report_document(report: RunReport) -> Dict[str, object]:
    doc: Dict[str, object] = {
        "scenario_name": report.scenario_name,
        "config_hash": report.config_hash,
        "master_seed": report.master_seed,
        "mode": report.mode,
        "events_generated": report.events_generated,
        "predicted": {
            "rates": dataclasses.asdict(report.predicted_rates),
            "visibility": report.predicted_visibility,
            "visibility_raw_windowed": report.predicted_visibility_raw,
        },
    }
    if report.mode == "fringe":
        doc["abscissa"] = report.abscissa
        doc["acquisition_s_per_point"] = report.acquisition_s_per_point
        doc["points"] = [{
            "setting": p.setting,
            "point_seed": p.point_seed,
            "counts_central": p.counts_central,
            "counts_side_early": p.counts_side_early,
            "counts_side_late": p.counts_side_late,
            "singles_signal": p.singles_signal,
            "singles_idler": p.singles_idler,
            "pairs_generated": p.pairs_generated,
        } for p in (report.points or [])]
        doc["fit_degenerate"] = report.fit_degenerate
        if report.estimate is not None:
            est = report.estimate
            doc["fit"] = {
                "visibility": est.visibility,
                "sigma_visibility": est.sigma_visibility,
                "amplitude_hz": est.amplitude_hz,
                "mean_level_hz": est.mean_level_hz,
                "phase_offset_rad": est.phase_offset_rad,
                "frequency": est.frequency,
                "chi2": est.chi2,
                "dof": est.dof,
            }
            doc["bell"] = {
                "s_value": report.s_value,
                "violates": report.violates,
                "margin": None if report.s_value is None
                else report.s_value - 2.0,
            }
    elif report.mode == "window-sweep":
        table = report.window_table
        assert table is not None
        doc["window_sweep"] = {
            "objective": table.objective,
            "best_window_ps": table.best_window_ps,
            "entries": [dataclasses.asdict(e) for e in table.entries],
        }
    else:
        doc["mu_sweep"] = [dataclasses.asdict(r)
                           for r in (report.mu_table or [])]
    return _native(doc)


def emit_outputs(report: RunReport, out_dir, fmt: str = "csv",
                 ) -> List[str]:
    """Write the report files into out_dir and return their paths.

    Always writes {name}_report.json; fmt="csv" adds the delimited
    companions (scan / window / mu tables, histograms when retained).
    Bytes are a pure function of the report content — wall-clock time
    never enters any file."""
    import os

    if fmt not in ("csv", "json"):
        raise ValidationError(f"fmt must be 'csv' or 'json', got {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    base = report.scenario_name
    written: List[str] = []

    def target(suffix: str) -> str:
        return os.path.join(out_dir, f"{base}{suffix}")

    path = target("_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_report_document(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)

    if fmt != "csv":
        return written

    stamp = f"config_hash={report.config_hash}"
    if report.mode == "fringe" and report.scan is not None:
        path = target("_scan.csv")
        write_scan_csv(report.scan, path, header_comment=stamp)
        written.append(path)
        if any(p.histogram is not None for p in (report.points or [])):
            path = target("_hist.csv")
            with open(path, "w", encoding="ascii") as fh:
                fh.write(f"# {stamp}\n")
                fh.write("point,setting,center_ps,counts\n")
                for k, p in enumerate(report.points or []):
                    if p.histogram is None:
                        continue
                    centers = p.histogram.centers()
                    for c, n in zip(centers, p.histogram.counts):
                        fh.write(f"{k},{p.setting!r},{float(c)!r},"
                                 f"{int(n)}\n")
            written.append(path)
    elif report.mode == "window-sweep" and report.window_table is not None:
        path = target("_windows.csv")
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"# {stamp}\n")
            fh.write("window_ps,visibility,s_value,"
                     "central_max_in_window_hz,score\n")
            for e in report.window_table.entries:
                fh.write(f"{e.window_ps!r},{e.visibility!r},{e.s_value!r},"
                         f"{e.central_max_in_window_hz!r},{e.score!r}\n")
        written.append(path)
    elif report.mode == "mu-sweep" and report.mu_table is not None:
        path = target("_mu.csv")
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"# {stamp}\n")
            fh.write("mean_pairs_per_window,visibility,s_value,violates,"
                     "central_max_in_window_hz,accidental_in_window_hz\n")
            for r in report.mu_table:
                fh.write(f"{r.mean_pairs_per_window!r},{r.visibility!r},"
                         f"{r.s_value!r},{int(r.violates)},"
                         f"{r.central_max_in_window_hz!r},"
                         f"{r.accidental_in_window_hz!r}\n")
        written.append(path)
    return written
