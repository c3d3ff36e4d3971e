"""Link-budget tests.

Reference values for the two canonical links (attenuated back-to-back
and 2 x 50 km) were derived by hand from the closed forms and are
frozen here as oracles; the budget-vs-simulation consistency test
closes the loop against the event-level engine.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from fransonsim import (AnalyzerSpec, ChannelSpec, CoincidencePeakModel,
                        CoincidenceWindowSpec, DetectorSpec,
                        SimulationConfig, SourceSpec, TimingDriftSpec,
                        ValidationError, accidental_rate, bell_verdict,
                        build_histogram, build_ledger, count_in_window,
                        optimize_window, predict_rates, predict_visibility,
                        run_simulation)

PAIR_JITTER = 65.0 / math.sqrt(2.0)   # per detector; 65 ps at pair level
CAL_CONTRAST = 0.9756419240289781     # per analyzer; 0.9518772 total


def paper_link(fiber_km, window_ps, contrast=1.0, **kw):
    defaults = dict(
        source=SourceSpec(),
        channel_signal=ChannelSpec(fiber_length_km=fiber_km,
                                   pre_fiber_loss_db=10.0),
        channel_idler=ChannelSpec(fiber_length_km=fiber_km,
                                  pre_fiber_loss_db=10.0),
        analyzer_signal=AnalyzerSpec(contrast=contrast),
        analyzer_idler=AnalyzerSpec(contrast=contrast),
        detector_signal=DetectorSpec(quantum_efficiency=0.007,
                                     jitter_fwhm_ps=PAIR_JITTER),
        detector_idler=DetectorSpec(quantum_efficiency=0.021,
                                    jitter_fwhm_ps=PAIR_JITTER),
        tia=CoincidenceWindowSpec(window_ps=window_ps),
        acquisition_time_s=1.0,
    )
    defaults.update(kw)
    return SimulationConfig(**defaults)


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------

def test_ledger_totals_are_exact_sums():
    cfg = paper_link(50.0, 100.0)
    led = build_ledger(cfg)
    for arm in ("signal", "idler"):
        entries = led[arm].entries
        assert [e.label.split(" ")[0] for e in entries] == \
            ["source", "fiber", "analyzer"]
        assert led[arm].total_db == math.fsum(e.loss_db for e in entries)
        assert abs(led[arm].total_db - 25.0) < 1e-12
        assert abs(led[arm].transmission - 10.0 ** -2.5) < 1e-15
    b2b = build_ledger(paper_link(0.0, 60.0))
    assert abs(b2b["signal"].total_db - 15.0) < 1e-12
    assert len(b2b["signal"].entries) == 2   # no fiber line at 0 km


# ---------------------------------------------------------------------------
# frozen rate oracles
# ---------------------------------------------------------------------------

def test_back_to_back_rate_oracles():
    rates = predict_rates(paper_link(0.0, 60.0))
    assert abs(rates.generated_pair_rate_hz - 8.333333333e8) < 1e0
    assert abs(rates.both_rate_hz - 122.5) < 1e-6
    assert abs(rates.singles_signal_hz - 92333.1) < 0.05
    assert abs(rates.singles_idler_hz - 276799.3) < 0.05
    assert abs(rates.capture_fraction - 0.721079) < 1e-6
    assert abs(rates.central_max_in_window_hz - 22.083058) < 1e-5
    assert abs(rates.accidental_in_window_hz - 1.533464) < 1e-5
    assert "per-arm" in rates.loss_note


def test_hundred_km_rate_oracles():
    rates = predict_rates(paper_link(50.0, 100.0))
    assert abs(rates.both_rate_hz - 1.225) < 1e-8
    assert abs(rates.singles_signal_hz - 9323.3) < 0.05
    assert abs(rates.singles_idler_hz - 27769.9) < 0.05
    assert abs(rates.capture_fraction - 0.888444) < 1e-6
    assert abs(rates.central_max_in_window_hz - 0.272086) < 1e-6
    assert abs(rates.accidental_in_window_hz - 0.025891) < 1e-6


def test_accidental_breakdown_sums_to_product():
    rates = predict_rates(paper_link(0.0, 60.0))
    total = accidental_rate(rates.singles_signal_hz,
                            rates.singles_idler_hz, rates.window_ps)
    parts = math.fsum(rates.accidental_parts_hz.values())
    assert abs(parts - total) < 1e-12 * total
    assert set(rates.accidental_parts_hz) == {
        "photon-photon", "photon-dark", "dark-photon", "dark-dark"}


# ---------------------------------------------------------------------------
# peak model
# ---------------------------------------------------------------------------

def test_peak_widths():
    b2b = CoincidencePeakModel.from_config(paper_link(0.0, 60.0))
    assert abs(b2b.sigma_delta_ps - 27.7073) < 1e-3
    km = CoincidencePeakModel.from_config(paper_link(50.0, 100.0))
    assert abs(km.sigma_delta_ps - 31.4220) < 1e-3
    assert b2b.center_ps == 0.0


def test_capture_is_monotone_and_bounded():
    peak = CoincidencePeakModel.from_config(paper_link(0.0, 60.0))
    widths = np.arange(10.0, 200.0, 10.0)
    caps = [peak.capture_fraction(w) for w in widths]
    assert all(0.0 < c <= 1.0 for c in caps)
    assert all(b > a for a, b in zip(caps, caps[1:]))
    # centered peaks: side windows capture exactly like the central one
    side_l, side_r = peak.side_capture_fractions(60.0)
    assert abs(side_l - peak.capture_fraction(60.0)) < 1e-15
    assert abs(side_r - side_l) < 1e-15


def test_drift_offset_and_walk_reduce_capture():
    base = paper_link(50.0, 100.0)
    centered = CoincidencePeakModel.from_config(base)
    offset = CoincidencePeakModel.from_config(replace(
        base, drift=TimingDriftSpec(enabled=True, channel="idler",
                                    offset_ps=40.0)))
    assert offset.center_ps == 40.0
    assert offset.capture_fraction(100.0) < centered.capture_fraction(100.0)
    signal_side = CoincidencePeakModel.from_config(replace(
        base, drift=TimingDriftSpec(enabled=True, channel="signal",
                                    offset_ps=40.0)))
    assert signal_side.center_ps == -40.0
    walked = CoincidencePeakModel.from_config(replace(
        base, drift=TimingDriftSpec(enabled=True, channel="idler",
                                    walk_step_ps=10.0,
                                    walk_interval_ps=1e9),
        acquisition_time_s=100.0))
    assert walked.sigma_delta_ps > centered.sigma_delta_ps
    assert walked.capture_fraction(100.0) < centered.capture_fraction(100.0)


def test_side_leakage_stays_below_three_percent_of_central():
    # 65 ps coincidence jitter, peaks 100 ps apart, 100 ps window:
    # leaked side mass relative to fringe-max central counts
    cfg = paper_link(0.0, 100.0)
    rates = predict_rates(cfg)
    ratio = rates.side_leak_in_window_hz / rates.central_max_in_window_hz
    assert abs(ratio - 0.0192) < 2e-3
    assert ratio < 0.03


# ---------------------------------------------------------------------------
# visibility predictions
# ---------------------------------------------------------------------------

def test_visibility_oracles_at_unit_contrast():
    assert abs(predict_visibility(paper_link(0.0, 60.0)).visibility
               - 0.878054) < 1e-6
    assert abs(predict_visibility(paper_link(50.0, 100.0)).visibility
               - 0.840115) < 1e-6


def test_visibility_oracles_at_calibrated_contrast():
    b2b = paper_link(0.0, 60.0, contrast=CAL_CONTRAST)
    km = paper_link(50.0, 100.0, contrast=CAL_CONTRAST)
    assert abs(predict_visibility(b2b).visibility - 0.8358) < 1e-9
    assert abs(predict_visibility(km).visibility - 0.799686) < 1e-6
    # raw windowed fits also see the flat side-peak leakage
    assert abs(predict_visibility(b2b, include_side_leak=True).visibility
               - 0.8299782) < 1e-6
    assert abs(predict_visibility(km, include_side_leak=True).visibility
               - 0.7596219) < 1e-6


def test_visibility_decreases_with_mu_while_rate_grows():
    base = paper_link(0.0, 60.0)
    vs, rates = [], []
    for mu in np.geomspace(1e-3, 0.2, 10):
        cfg = replace(base, source=SourceSpec(
            mean_pairs_per_window=float(mu)))
        vs.append(predict_visibility(cfg).visibility)
        rates.append(predict_rates(cfg).central_max_in_window_hz)
    assert all(b < a for a, b in zip(vs, vs[1:]))
    assert all(b > a for a, b in zip(rates, rates[1:]))


def test_mu_quoted_after_losses_scales_generation():
    plain = paper_link(0.0, 60.0)
    scaled = replace(plain, source=SourceSpec(
        mu_measured_after_losses=True))
    ratio = scaled.generated_pair_rate_hz() / plain.generated_pair_rate_hz()
    assert abs(ratio - 100.0) < 1e-9   # two 10 dB pre-fiber sections


def test_bell_verdict_chain():
    km = paper_link(50.0, 100.0, contrast=CAL_CONTRAST)
    verdict = bell_verdict(km)
    assert verdict.violates and verdict.margin > 0.25
    assert abs(verdict.s_value - 2.0 * math.sqrt(2.0)
               * verdict.visibility) < 1e-12
    dull = paper_link(50.0, 100.0, contrast=0.8)
    assert not bell_verdict(dull).violates


# ---------------------------------------------------------------------------
# window optimization
# ---------------------------------------------------------------------------

def test_window_choice_with_displaced_peak():
    cfg = paper_link(50.0, 100.0, contrast=CAL_CONTRAST,
                     drift=TimingDriftSpec(enabled=True, channel="idler",
                                           offset_ps=40.0))
    opt = optimize_window(cfg, list(range(60, 150, 10)))
    assert opt.best_window_ps == 100.0
    by_w = {e.window_ps: e.s_value for e in opt.entries}
    assert abs(by_w[60.0] - 2.10322) < 1e-3
    assert abs(by_w[100.0] - 2.11742) < 1e-3
    assert abs(by_w[120.0] - 2.11114) < 1e-3
    assert abs(by_w[140.0] - 2.09481) < 1e-3
    assert all(e.s_value > 2.0 for e in opt.entries)


def test_window_choice_centered_prefers_smallest():
    cfg = paper_link(50.0, 100.0, contrast=CAL_CONTRAST)
    opt = optimize_window(cfg, [60, 80, 100, 120, 140])
    assert opt.best_window_ps == 60.0


def test_window_choice_rate_weighted_noise_free_prefers_largest():
    cfg = paper_link(0.0, 60.0,
                     source=SourceSpec(mean_pairs_per_window=1e-3),
                     detector_signal=DetectorSpec(quantum_efficiency=0.007,
                                                  dark_rate_hz=0.0,
                                                  jitter_fwhm_ps=PAIR_JITTER),
                     detector_idler=DetectorSpec(quantum_efficiency=0.021,
                                                 dark_rate_hz=0.0,
                                                 jitter_fwhm_ps=PAIR_JITTER))
    opt = optimize_window(cfg, [60, 80, 100, 120, 140],
                          objective="rate_weighted")
    assert opt.best_window_ps == 140.0
    scores = [e.score for e in opt.entries]
    assert all(b > a for a, b in zip(scores, scores[1:]))


def test_window_grid_validation():
    cfg = paper_link(0.0, 60.0)
    with pytest.raises(ValidationError):
        optimize_window(cfg, [])
    with pytest.raises(ValidationError):
        optimize_window(cfg, [60.0, 200.0])   # >= 2 * delay
    with pytest.raises(ValidationError):
        optimize_window(cfg, [0.0, 60.0])
    with pytest.raises(ValidationError):
        optimize_window(cfg, [60.0], objective="fastest")


# ---------------------------------------------------------------------------
# budget vs Monte Carlo
# ---------------------------------------------------------------------------

def test_predictions_match_simulation():
    cfg = SimulationConfig(
        source=SourceSpec(mean_pairs_per_window=3e-3),
        channel_signal=ChannelSpec(fiber_length_km=0.0,
                                   pre_fiber_loss_db=10.0),
        channel_idler=ChannelSpec(fiber_length_km=0.0,
                                  pre_fiber_loss_db=10.0),
        analyzer_signal=AnalyzerSpec(insertion_loss_db=0.0),
        analyzer_idler=AnalyzerSpec(insertion_loss_db=0.0),
        detector_signal=DetectorSpec(quantum_efficiency=0.02,
                                     jitter_fwhm_ps=PAIR_JITTER),
        detector_idler=DetectorSpec(quantum_efficiency=0.05,
                                    jitter_fwhm_ps=PAIR_JITTER),
        tia=CoincidenceWindowSpec(window_ps=60.0, histogram_bin_ps=10.0),
        acquisition_time_s=10.0,
        master_seed=2024,
    )
    rates = predict_rates(cfg)
    sig, idl, diag = run_simulation(cfg)
    t = cfg.acquisition_time_s

    want_both = rates.both_rate_hz * t
    assert abs(diag.pairs_both_detectable - want_both) \
        < 4.0 * math.sqrt(want_both)
    for stream, singles, dark in (
            (sig, rates.singles_signal_hz,
             cfg.detector_signal.dark_rate_hz),
            (idl, rates.singles_idler_hz,
             cfg.detector_idler.dark_rate_hz)):
        want_photon = (singles - dark) * t
        assert abs(stream.true_count - want_photon) \
            < 4.0 * math.sqrt(want_photon)
        assert abs(stream.dark_count - dark * t) \
            < 4.0 * math.sqrt(dark * t)

    hist = build_histogram(sig.times_ps, idl.times_ps, 10, 300)
    central = count_in_window(hist, 0.0, 60.0)
    want_central = rates.total_central_window_hz * t
    assert abs(central - want_central) < 5.0 * math.sqrt(want_central)

    for sign in (-1.0, +1.0):
        side = count_in_window(hist, sign * 100.0, 60.0)
        cap_l, cap_r = CoincidencePeakModel.from_config(cfg) \
            .side_capture_fractions(60.0)
        cap = cap_l if sign < 0 else cap_r
        want_side = (rates.both_rate_hz / 16.0 * cap
                     + rates.accidental_in_window_hz) * t
        assert abs(side - want_side) < 5.0 * math.sqrt(want_side)
