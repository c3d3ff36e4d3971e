"""Start-stop coincidence analysis: delay histograms, windowed counts,
fringe fitting, visibility.

Conventions:

* delay = stop - start (idler minus signal), integer picoseconds;
* a histogram covers the half-open interval [-range_ps, +range_ps)
  with bins of integer width, so bin assignment is exact integer
  arithmetic and no pair is ever split or double counted;
* windowed counts include every bin whose *center* falls inside the
  closed window [center - w/2, center + w/2];
* counts are Poisson-weighted in fits, with sigma = sqrt(max(n, 1)).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from .errors import FitDegenerate, FitNotConverged, ValidationError

_MAX_PAIRS = int(2e8)   # guard for the all-pairs expansion


# ---------------------------------------------------------------------------
# Histogram container
# ---------------------------------------------------------------------------

@dataclass
class DelayHistogram:
    """Binned start-stop delays.  counts[i] covers
    [-range_ps + i*bin_ps, -range_ps + (i+1)*bin_ps)."""

    bin_ps: int
    range_ps: int
    counts: np.ndarray            # int64, length 2*range_ps/bin_ps
    n_starts: int = 0
    n_stops: int = 0

    @property
    def total_pairs(self) -> int:
        return int(self.counts.sum())

    def centers(self) -> np.ndarray:
        """Bin centers in ps (exact halves when bin_ps is odd)."""
        edges = -self.range_ps + self.bin_ps * np.arange(self.counts.size)
        return edges + self.bin_ps / 2.0


def _as_sorted_int64(arr, name: str) -> np.ndarray:
    out = np.asarray(arr)
    if out.dtype != np.int64:
        if not np.issubdtype(out.dtype, np.integer):
            raise ValidationError(f"{name} must be integer picoseconds")
        out = out.astype(np.int64)
    if out.size > 1 and np.any(np.diff(out) < 0):
        raise ValidationError(f"{name} must be sorted ascending")
    return out


def _normalize_binning(bin_ps, range_ps) -> Tuple[int, int]:
    b = int(bin_ps)
    if b != bin_ps or b < 1:
        raise ValidationError(
            f"bin_ps must be a positive integer, got {bin_ps!r}")
    r = int(math.ceil(range_ps))
    if r < b:
        raise ValidationError(
            f"range_ps must be at least one bin, got {range_ps!r}")
    if r % b:
        r += b - r % b   # round up so the bin grid tiles the range
    return b, r


def _pair_deltas(starts: np.ndarray, stops: np.ndarray,
                 range_ps: int) -> np.ndarray:
    """stop - start for every pair within [-range, +range), vectorized."""
    lo = np.searchsorted(stops, starts - range_ps, side="left")
    hi = np.searchsorted(stops, starts + range_ps, side="left")
    lengths = hi - lo
    total = int(lengths.sum())
    if total > _MAX_PAIRS:
        raise ValidationError(
            f"{total} start-stop pairs in range; narrow range_ps")
    if total == 0:
        return np.empty(0, dtype=np.int64)
    start_rep = np.repeat(starts, lengths)
    first = np.repeat(lo, lengths)
    offsets = np.arange(total, dtype=np.int64) \
        - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return stops[first + offsets] - start_rep


def build_histogram(starts, stops, bin_ps, range_ps) -> DelayHistogram:
    """Histogram every stop within +-range_ps of every start.

    All starts and stops participate (no first-match pairing), which
    keeps the estimator linear in rates.  For a three-peak delay
    structure choose range_ps of at least twice the analyzer delay so
    both side peaks are visible.
    """
    starts = _as_sorted_int64(starts, "starts")
    stops = _as_sorted_int64(stops, "stops")
    b, r = _normalize_binning(bin_ps, range_ps)
    deltas = _pair_deltas(starts, stops, r)
    nbins = 2 * r // b
    idx = (deltas + r) // b
    counts = np.bincount(idx, minlength=nbins).astype(np.int64)
    return DelayHistogram(bin_ps=b, range_ps=r, counts=counts,
                          n_starts=int(starts.size),
                          n_stops=int(stops.size))


class HistogramAccumulator:
    """Streaming build_histogram over time-ordered click buckets.

    Feed buckets in order with their upper time edge; the result is
    bit-identical to build_histogram on the concatenated streams.  A
    start is binned only once all stops inside its window can have
    arrived, so bucket boundaries never split or duplicate pairs.
    """

    def __init__(self, bin_ps, range_ps):
        self.bin_ps, self.range_ps = _normalize_binning(bin_ps, range_ps)
        self._nbins = 2 * self.range_ps // self.bin_ps
        self._counts = np.zeros(self._nbins, dtype=np.int64)
        self._pending = np.empty(0, dtype=np.int64)
        self._stop_tail = np.empty(0, dtype=np.int64)
        self._n_starts = 0
        self._n_stops = 0
        self._last_hi: Optional[int] = None

    def _bin_into(self, starts: np.ndarray, stops: np.ndarray) -> None:
        if starts.size == 0:
            return
        deltas = _pair_deltas(starts, stops, self.range_ps)
        if deltas.size:
            idx = (deltas + self.range_ps) // self.bin_ps
            self._counts += np.bincount(idx, minlength=self._nbins)

    def add_bucket(self, starts, stops, bucket_hi_ps: int) -> None:
        if self._last_hi is not None and bucket_hi_ps <= self._last_hi:
            raise ValidationError("buckets must arrive in time order")
        self._last_hi = int(bucket_hi_ps)
        starts = _as_sorted_int64(starts, "starts")
        stops = _as_sorted_int64(stops, "stops")
        self._n_starts += int(starts.size)
        self._n_stops += int(stops.size)
        all_starts = np.concatenate([self._pending, starts])
        all_stops = np.concatenate([self._stop_tail, stops])
        ready = all_starts + self.range_ps <= bucket_hi_ps
        self._bin_into(all_starts[ready], all_stops)
        self._pending = all_starts[~ready]
        # keep stops any pending or future start could still pair with
        self._stop_tail = all_stops[all_stops >= bucket_hi_ps
                                    - 2 * self.range_ps]

    def finalize(self) -> DelayHistogram:
        self._bin_into(self._pending, self._stop_tail)
        self._pending = np.empty(0, dtype=np.int64)
        return DelayHistogram(bin_ps=self.bin_ps, range_ps=self.range_ps,
                              counts=self._counts.copy(),
                              n_starts=self._n_starts,
                              n_stops=self._n_stops)


def count_in_window(hist: DelayHistogram, center_ps: float,
                    window_ps: float) -> int:
    """Total counts of bins whose centers lie inside the closed window
    [center - w/2, center + w/2]."""
    if window_ps < hist.bin_ps:
        raise ValidationError(
            f"window_ps={window_ps!r} is narrower than one "
            f"{hist.bin_ps} ps bin")
    centers = hist.centers()
    mask = (centers >= center_ps - window_ps / 2.0) \
        & (centers <= center_ps + window_ps / 2.0)
    return int(hist.counts[mask].sum())


# ---------------------------------------------------------------------------
# Fringe containers
# ---------------------------------------------------------------------------

@dataclass
class FringeScan:
    """Coincidence counts versus analyzer setting (phase in rad, or
    any unit proportional to phase — the fit recovers the scale)."""

    settings: np.ndarray
    counts: np.ndarray
    acquisition_s: float
    singles_a: Optional[np.ndarray] = None
    singles_b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.settings = np.asarray(self.settings, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.settings.ndim != 1 or self.settings.size == 0:
            raise ValidationError("settings must be a non-empty 1-d array")
        if self.counts.shape != self.settings.shape:
            raise ValidationError("counts must match settings in shape")
        if np.any(self.counts < 0):
            raise ValidationError("counts must be non-negative")
        if not (self.acquisition_s > 0.0):
            raise ValidationError("acquisition_s must be > 0")
        for name in ("singles_a", "singles_b"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != self.settings.shape:
                    raise ValidationError(f"{name} must match settings")
                setattr(self, name, v)


@dataclass
class VisibilityEstimate:
    """Fringe visibility with its 1-sigma statistical uncertainty."""

    visibility: float
    sigma_visibility: float
    amplitude_hz: float = math.nan
    mean_level_hz: float = math.nan
    phase_offset_rad: Optional[float] = None
    frequency: Optional[float] = None   # rad per setting unit
    chi2: Optional[float] = None
    dof: Optional[int] = None


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _linear_fringe_solve(x, rates, weights, freq):
    design = np.column_stack([np.ones_like(x),
                              np.cos(freq * x), np.sin(freq * x)])
    wd = design * weights[:, None]
    wr = rates * weights
    coef, *_ = np.linalg.lstsq(wd, wr, rcond=None)
    resid = (design @ coef - rates) * weights
    return coef, float(resid @ resid)


def fit_fringe(scan: FringeScan) -> VisibilityEstimate:
    """Weighted sinusoid fit: rate = a0 + a1 cos(k x) + a2 sin(k x).

    The frequency k is scanned on a log grid (capped at the Nyquist
    limit of the setting spacing) for the linear sub-problem, then
    polished together with the amplitudes.  Visibility is
    hypot(a1, a2)/a0, clamped to [0, 1]; its sigma comes from the
    weighted-fit covariance through the delta method.

    Raises FitDegenerate (estimate attached) when no significant
    modulation exists, FitNotConverged if the polish stalls.
    """
    x = scan.settings
    if x.size < 5:
        raise ValidationError(
            f"need at least 5 scan points to fit, got {x.size}")
    rates = scan.counts / scan.acquisition_s
    sigma = np.sqrt(np.maximum(scan.counts, 1.0)) / scan.acquisition_s
    weights = 1.0 / sigma

    gaps = np.diff(np.sort(x))
    gaps = gaps[gaps > 0.0]
    if gaps.size == 0:
        raise ValidationError("settings must not all coincide")
    spacing = float(np.median(gaps))
    nyquist = math.pi / spacing
    grid = np.geomspace(0.05, max(nyquist, 0.06), 64)
    grid = np.unique(np.append(grid, min(1.0, nyquist)))

    best = min((_linear_fringe_solve(x, rates, weights, f) + (f,)
                for f in grid), key=lambda t: t[1])
    coef0, _, f0 = best

    def residuals(p):
        a0, a1, a2, f = p
        model = a0 + a1 * np.cos(f * x) + a2 * np.sin(f * x)
        return (model - rates) * weights

    res = least_squares(residuals, np.append(coef0, f0),
                        bounds=([-np.inf, -np.inf, -np.inf, 1e-12],
                                [np.inf, np.inf, np.inf, np.inf]),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=500)
    if res.status <= 0:
        raise FitNotConverged(f"fringe fit stalled: {res.message}")
    a0, a1, a2, freq = res.x
    jtj = res.jac.T @ res.jac
    cov = np.linalg.pinv(jtj)
    amp = math.hypot(a1, a2)
    chi2 = float(res.fun @ res.fun)
    dof = int(x.size - 4)

    if amp > 0.0:
        g_amp = np.array([a1 / amp, a2 / amp])
        sigma_amp = float(np.sqrt(g_amp @ cov[1:3, 1:3] @ g_amp))
    else:
        sigma_amp = float(np.sqrt(max(cov[1, 1], cov[2, 2])))

    def build(v, sv):
        return VisibilityEstimate(
            visibility=v, sigma_visibility=sv, amplitude_hz=amp,
            mean_level_hz=a0,
            phase_offset_rad=math.atan2(-a2, a1) % (2.0 * math.pi),
            frequency=freq, chi2=chi2, dof=dof)

    if a0 <= 0.0 or amp < 2.0 * sigma_amp:
        raise FitDegenerate(
            "no statistically significant fringe modulation "
            f"(amplitude {amp:.3g} +- {sigma_amp:.3g})",
            estimate=build(0.0, math.inf))

    g = np.array([-amp / a0 ** 2, a1 / (amp * a0), a2 / (amp * a0)])
    var_v = float(g @ cov[:3, :3] @ g)
    v = amp / a0
    return build(min(v, 1.0), math.sqrt(max(var_v, 0.0)))


def visibility_from_extrema(c_max: float, c_min: float,
                            acquisition_s: float = 1.0) -> VisibilityEstimate:
    """(max - min)/(max + min) from two count readings, with the
    Poisson-propagated sigma (counts of 0 contribute unit variance)."""
    if c_max < 0 or c_min < 0:
        raise ValidationError("counts must be non-negative")
    if c_max + c_min <= 0:
        raise ValidationError("need at least one nonzero count")
    if not (acquisition_s > 0.0):
        raise ValidationError("acquisition_s must be > 0")
    total = c_max + c_min
    v = (c_max - c_min) / total
    sigma = (2.0 / total ** 2) * math.sqrt(
        c_min ** 2 * max(c_max, 1.0) + c_max ** 2 * max(c_min, 1.0))
    return VisibilityEstimate(
        visibility=v, sigma_visibility=sigma,
        amplitude_hz=(c_max - c_min) / (2.0 * acquisition_s),
        mean_level_hz=total / (2.0 * acquisition_s))


# ---------------------------------------------------------------------------
# Scan CSV
# ---------------------------------------------------------------------------

_SCAN_FIELDS = ["setting", "counts", "acquisition_s", "singles_a",
                "singles_b"]


def write_scan_csv(scan: FringeScan, path,
                   header_comment: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(_SCAN_FIELDS)
        for k in range(scan.settings.size):
            writer.writerow([
                repr(float(scan.settings[k])),
                int(scan.counts[k]),
                repr(float(scan.acquisition_s)),
                "" if scan.singles_a is None else int(scan.singles_a[k]),
                "" if scan.singles_b is None else int(scan.singles_b[k]),
            ])


def read_scan_csv(path) -> FringeScan:
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        while header is not None and header \
                and header[0].lstrip().startswith("#"):
            header = next(reader, None)
        if header != _SCAN_FIELDS:
            raise ValidationError(
                f"{path}: unexpected scan CSV header {header!r}")
        rows = [row for row in reader if row]
    if not rows:
        raise ValidationError(f"{path}: scan CSV has no data rows")
    settings = np.array([float(r[0]) for r in rows])
    counts = np.array([float(r[1]) for r in rows])
    acq = {float(r[2]) for r in rows}
    if len(acq) != 1:
        raise ValidationError(
            f"{path}: per-point acquisition times differ: {sorted(acq)}")
    have_singles = all(r[3] != "" and r[4] != "" for r in rows)
    singles_a = np.array([float(r[3]) for r in rows]) if have_singles \
        else None
    singles_b = np.array([float(r[4]) for r in rows]) if have_singles \
        else None
    return FringeScan(settings=settings, counts=counts,
                      acquisition_s=acq.pop(),
                      singles_a=singles_a, singles_b=singles_b)
