"""Closed-form link budget: losses, rates, coincidence-peak shape,
predicted visibility and Bell margin, and coincidence-window choice.

Every quantity here has a Monte Carlo counterpart; the pair is kept
consistent (see the rate/visibility tests) so the budget can be
trusted for fast what-if scans and the simulation for everything the
closed forms cannot capture.

Counting conventions used throughout:

* a "detectable" photon survived its arm's optical losses *and* the
  detector efficiency: q = 10**(-dB/10) * eta;
* only the monitored analyzer port is instrumented, so singles carry
  a factor 1/2 (the phase-free marginal), while the both-detectable
  pair rate R*q_s*q_i carries no port factor of its own — the port
  bookkeeping of joint outcomes lives in the 1/8 and 1/16 peak
  weights;
* accidental coincidences follow the flat-background product
  singles_a * singles_b * window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import ValidationError
from .montecarlo import SimulationConfig
from .physics import (AnalyzerSpec, ChannelSpec, accidental_rate,
                      chsh_from_visibility, dispersion_broaden,
                      sigma_from_fwhm)

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Loss ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LedgerEntry:
    label: str
    loss_db: float


@dataclass(frozen=True)
class LossLedger:
    """Ordered dB contributions of one arm; totals are exact sums."""

    arm: str
    entries: Tuple[LedgerEntry, ...]

    @property
    def total_db(self) -> float:
        return math.fsum(e.loss_db for e in self.entries)

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.total_db / 10.0)


def build_arm_ledger(arm: str, channel: ChannelSpec,
                     analyzer: AnalyzerSpec) -> LossLedger:
    entries = []
    if channel.pre_fiber_loss_db > 0.0:
        entries.append(LedgerEntry("source coupling + filters",
                                   channel.pre_fiber_loss_db))
    if channel.fiber_length_km > 0.0:
        entries.append(LedgerEntry(
            f"fiber ({channel.fiber_length_km:g} km @ "
            f"{channel.fiber_loss_db_per_km:g} dB/km)",
            channel.fiber_loss_db))
    if analyzer.insertion_loss_db > 0.0:
        entries.append(LedgerEntry("analyzer insertion",
                                   analyzer.insertion_loss_db))
    return LossLedger(arm=arm, entries=tuple(entries))


def build_ledger(config: SimulationConfig) -> Dict[str, LossLedger]:
    """Per-arm optical loss ledgers (detector efficiency is not a dB
    entry; it multiplies separately as q = T * eta)."""
    return {
        "signal": build_arm_ledger("signal", config.channel_signal,
                                   config.analyzer_signal),
        "idler": build_arm_ledger("idler", config.channel_idler,
                                  config.analyzer_idler),
    }


def loss_reading_note(config: SimulationConfig) -> str:
    """How to compare this budget against a quoted link-loss figure."""
    led = build_ledger(config)
    s, i = led["signal"].total_db, led["idler"].total_db
    return (f"per-arm optical losses: signal {s:g} dB, idler {i:g} dB; "
            f"two-photon (summed) loss {s + i:g} dB. A single quoted "
            "link figure must be read as the summed two-photon loss "
            "and split across the arms before building specs; reading "
            "it as per-arm double-counts it.")


# ---------------------------------------------------------------------------
# Coincidence-peak shape
# ---------------------------------------------------------------------------

def _gauss_mass(center: float, sigma: float, lo: float, hi: float) -> float:
    """Mass of N(center, sigma^2) inside [lo, hi]."""
    if sigma <= 0.0:
        return 1.0 if lo <= center <= hi else 0.0
    a = (lo - center) / (sigma * _SQRT2)
    b = (hi - center) / (sigma * _SQRT2)
    return 0.5 * (math.erf(b) - math.erf(a))


@dataclass(frozen=True)
class CoincidencePeakModel:
    """Gaussian model of the start-stop delay peaks.

    Each photon's arrival spreads by its broadened duration plus the
    detector jitter; the delay (stop - start) adds both channels in
    quadrature, plus the time-averaged variance of any slow random
    walk.  A constant drift offset displaces all three peaks
    together: +offset when the idler (stop) channel drifts, -offset
    for the signal.
    """

    sigma_delta_ps: float
    center_ps: float
    analyzer_delay_ps: float

    @classmethod
    def from_config(cls, config: SimulationConfig) -> "CoincidencePeakModel":
        def channel_sigma(channel, detector):
            fwhm = dispersion_broaden(config.source.photon_fwhm_ps,
                                      channel.beta2_ps2_per_km,
                                      channel.fiber_length_km)
            return math.hypot(sigma_from_fwhm(fwhm),
                              sigma_from_fwhm(detector.jitter_fwhm_ps))

        var = channel_sigma(config.channel_signal,
                            config.detector_signal) ** 2 \
            + channel_sigma(config.channel_idler,
                            config.detector_idler) ** 2
        center = 0.0
        if config.drift.enabled:
            sign = +1.0 if config.drift.channel == "idler" else -1.0
            center = sign * config.drift.offset_ps
            if config.drift.walk_step_ps > 0.0:
                # variance of the walk at a uniformly random time in
                # the acquisition: step^2 * (T / interval) / 2
                steps = config.acquisition_time_s * 1e12 \
                    / config.drift.walk_interval_ps
                var += config.drift.walk_step_ps ** 2 * steps / 2.0
        return cls(sigma_delta_ps=math.sqrt(var), center_ps=center,
                   analyzer_delay_ps=config.analyzer_signal.delay_ps)

    def capture_fraction(self, window_ps: float) -> float:
        """Central-peak mass inside the window centered at delay 0."""
        if not (window_ps > 0.0):
            raise ValidationError("window_ps must be > 0")
        return _gauss_mass(self.center_ps, self.sigma_delta_ps,
                           -window_ps / 2.0, window_ps / 2.0)

    def side_leak_fractions(self, window_ps: float) -> Tuple[float, float]:
        """Mass of each displaced side peak (at center -/+ delay)
        leaking into the central window."""
        if not (window_ps > 0.0):
            raise ValidationError("window_ps must be > 0")
        lo, hi = -window_ps / 2.0, window_ps / 2.0
        tau = self.analyzer_delay_ps
        return (_gauss_mass(self.center_ps - tau, self.sigma_delta_ps,
                            lo, hi),
                _gauss_mass(self.center_ps + tau, self.sigma_delta_ps,
                            lo, hi))

    def side_capture_fractions(self, window_ps: float) -> Tuple[float, float]:
        """Mass of each side peak inside windows centered on -/+ delay."""
        tau = self.analyzer_delay_ps
        return (_gauss_mass(self.center_ps - tau, self.sigma_delta_ps,
                            -tau - window_ps / 2.0, -tau + window_ps / 2.0),
                _gauss_mass(self.center_ps + tau, self.sigma_delta_ps,
                            tau - window_ps / 2.0, tau + window_ps / 2.0))


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatePrediction:
    """Closed-form rate summary for one configuration."""

    generated_pair_rate_hz: float
    transmission_signal: float
    transmission_idler: float
    q_signal: float
    q_idler: float
    singles_signal_hz: float        # monitored port + darks
    singles_idler_hz: float
    both_rate_hz: float             # both photons detectable (any port)
    window_ps: float
    capture_fraction: float
    central_max_in_window_hz: float     # fringe maximum, central window
    central_at_config_phase_hz: float   # at the configured phases
    accidental_in_window_hz: float
    accidental_parts_hz: Dict[str, float]
    side_leak_in_window_hz: float
    loss_note: str

    @property
    def total_central_window_hz(self) -> float:
        """Everything a counter on the central window sees at the
        configured phases."""
        return (self.central_at_config_phase_hz
                + self.side_leak_in_window_hz
                + self.accidental_in_window_hz)


def predict_rates(config: SimulationConfig,
                  window_ps: Optional[float] = None) -> RatePrediction:
    rate = config.generated_pair_rate_hz()
    led = build_ledger(config)
    t_s, t_i = led["signal"].transmission, led["idler"].transmission
    q_s, q_i = config.arm_q("signal"), config.arm_q("idler")
    w = config.tia.window_ps if window_ps is None else window_ps
    if not (w > 0.0):
        raise ValidationError("window_ps must be > 0")

    photon_singles_s = rate * q_s / 2.0
    photon_singles_i = rate * q_i / 2.0
    singles_s = photon_singles_s + config.detector_signal.dark_rate_hz
    singles_i = photon_singles_i + config.detector_idler.dark_rate_hz

    both = rate * q_s * q_i
    peak = CoincidencePeakModel.from_config(config)
    capture = peak.capture_fraction(w)
    c_tot = (config.analyzer_signal.contrast
             * config.analyzer_idler.contrast)
    x = config.interference_x()
    central_max = both * (1.0 + c_tot) / 8.0 * capture
    central_now = both * (1.0 + x) / 8.0 * capture
    leak_l, leak_r = peak.side_leak_fractions(w)
    side_leak = both * (leak_l + leak_r) / 16.0

    parts = {
        "photon-photon": accidental_rate(photon_singles_s,
                                         photon_singles_i, w),
        "photon-dark": accidental_rate(
            photon_singles_s, config.detector_idler.dark_rate_hz, w),
        "dark-photon": accidental_rate(
            config.detector_signal.dark_rate_hz, photon_singles_i, w),
        "dark-dark": accidental_rate(config.detector_signal.dark_rate_hz,
                                     config.detector_idler.dark_rate_hz, w),
    }
    return RatePrediction(
        generated_pair_rate_hz=rate,
        transmission_signal=t_s, transmission_idler=t_i,
        q_signal=q_s, q_idler=q_i,
        singles_signal_hz=singles_s, singles_idler_hz=singles_i,
        both_rate_hz=both, window_ps=w, capture_fraction=capture,
        central_max_in_window_hz=central_max,
        central_at_config_phase_hz=central_now,
        accidental_in_window_hz=math.fsum(parts.values()),
        accidental_parts_hz=parts,
        side_leak_in_window_hz=side_leak,
        loss_note=loss_reading_note(config),
    )


# ---------------------------------------------------------------------------
# Visibility and Bell margin
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VisibilityPrediction:
    visibility: float
    contrast_total: float
    mean_central_hz: float      # phase-averaged windowed central rate
    background_hz: float        # phase-flat dilution folded into the fit
    capture_fraction: float


def predict_visibility(config: SimulationConfig,
                       window_ps: Optional[float] = None,
                       include_side_leak: bool = False
                       ) -> VisibilityPrediction:
    """Fitted-fringe visibility a scan of this link would measure.

    The windowed rate vs summed phase is
    mean*(1 + c*cos) + leak + accidentals with mean = both*capture/8;
    the phase-flat accidental background always dilutes the fringe.

    Side-peak leakage is just as phase-flat, but an analysis that
    references the side windows subtracts it, so by default it is
    excluded here (and it is a percent-level effect at sane windows).
    Pass include_side_leak=True to model a *raw* windowed fringe fit
    with no side correction — that is what fitting this package's own
    simulated histograms yields.
    """
    rates = predict_rates(config, window_ps)
    c_tot = (config.analyzer_signal.contrast
             * config.analyzer_idler.contrast)
    mean_central = rates.both_rate_hz * rates.capture_fraction / 8.0
    background = rates.accidental_in_window_hz
    if include_side_leak:
        background += rates.side_leak_in_window_hz
    if mean_central + background <= 0.0:
        return VisibilityPrediction(0.0, c_tot, mean_central, background,
                                    rates.capture_fraction)
    v = c_tot * mean_central / (mean_central + background)
    return VisibilityPrediction(v, c_tot, mean_central, background,
                                rates.capture_fraction)


@dataclass(frozen=True)
class BellVerdict:
    visibility: float
    s_value: float
    violates: bool
    margin: float  # s_value - 2


def bell_verdict(config: SimulationConfig,
                 window_ps: Optional[float] = None) -> BellVerdict:
    v = predict_visibility(config, window_ps).visibility
    s, violates = chsh_from_visibility(v)
    return BellVerdict(visibility=v, s_value=s, violates=violates,
                       margin=s - 2.0)


# ---------------------------------------------------------------------------
# Window optimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowScore:
    window_ps: float
    visibility: float
    s_value: float
    central_max_in_window_hz: float
    score: float


@dataclass(frozen=True)
class WindowOptimization:
    objective: str
    best_window_ps: float
    entries: Tuple[WindowScore, ...]


def optimize_window(config: SimulationConfig,
                    window_grid_ps: Sequence[float],
                    objective: str = "s_value") -> WindowOptimization:
    """Pick the coincidence window from a candidate grid.

    ``s_value`` maximizes the predicted CHSH S (statistics-blind:
    with negligible darks it degenerates to a tie and the smallest
    window wins).  ``rate_weighted`` maximizes V^2 * central rate,
    the figure of merit of the Bell margin per unit acquisition
    time — with no dark counts it grows with capture, so the widest
    candidate wins.  Ties go to the smallest window.  Windows of at
    least twice the analyzer delay would swallow the side peaks and
    are rejected.
    """
    if objective not in ("s_value", "rate_weighted"):
        raise ValidationError(
            f"unknown objective {objective!r}; use 's_value' or "
            "'rate_weighted'")
    grid = sorted(float(w) for w in window_grid_ps)
    if not grid:
        raise ValidationError("empty window grid")
    tau4 = config.analyzer_signal.delay_ps
    for w in grid:
        if not (0.0 < w < 2.0 * tau4):
            raise ValidationError(
                f"window {w} ps invalid: must be positive and below "
                f"twice the analyzer delay ({2.0 * tau4:g} ps) to keep "
                "the side peaks out")
    entries: List[WindowScore] = []
    best: Optional[WindowScore] = None
    for w in grid:
        rates = predict_rates(config, w)
        vis = predict_visibility(config, w)
        s, _ = chsh_from_visibility(vis.visibility)
        if objective == "s_value":
            score = s
        else:
            score = vis.visibility ** 2 * rates.central_max_in_window_hz
        entry = WindowScore(window_ps=w, visibility=vis.visibility,
                            s_value=s,
                            central_max_in_window_hz=
                            rates.central_max_in_window_hz,
                            score=score)
        entries.append(entry)
        if best is None or entry.score > best.score:
            best = entry
    return WindowOptimization(objective=objective,
                              best_window_ps=best.window_ps,
                              entries=tuple(entries))
