"""Seeded event-level Monte Carlo of the full entanglement link.

The chain being simulated, per arm:

    pair source -> lumped pre-fiber loss -> fiber (loss + dispersion)
    -> unbalanced MZI (insertion loss, short/long split, phase)
    -> detector (efficiency, Gaussian jitter, darks, dead time)

Interference is handled by *joint-outcome sampling*: the analytic
four-outcome law of ``franson_bin_probabilities`` fixes the joint
(port, short/long) distribution of a coincident pair, and single
surviving photons follow its phase-free marginal (uniform port and
branch).  Per-photon independent path choices cannot reproduce
two-photon fringes without also creating single-photon fringes, so
they are never used.

Reproducibility model
---------------------
The acquisition span is cut into fixed 10-second generation slices.
Every (stage, slice) pair owns an independent child RNG stream,
derived from the master seed, so

* identical configs give bit-identical click streams,
* slices can be generated in any order (results are order-free), and
* the signal stream never consumes idler-stage randomness: changing
  idler-side parameters cannot perturb signal clicks.

To keep the per-event cost sane at ~1e9 pairs/s, pairs are generated
directly in three exact Poisson classes instead of literally thinning
every emission: signal-detectable pairs at R*q_s (each one also
idler-detectable with probability q_i, decided on the idler stream),
idler-only-detectable pairs at R*q_i*(1-q_s), and an undetectable
remainder that is only counted.  Here q = (arm transmission) x
(quantum efficiency).  This decomposition is distribution-exact for
independent thinning, and efficiency folding commutes with the MZI
because port selection is independent of survival.

Timestamps are integer picoseconds end to end (exact sorting and
bit-stable merges); sub-ps structure is rounded at click assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ValidationError
from .physics import (AnalyzerSpec, ChannelSpec, CoincidenceWindowSpec,
                      DetectorSpec, PathOutcome, SourceSpec, db_to_linear,
                      dispersion_broaden, franson_bin_probabilities,
                      sigma_from_fwhm)

# Fixed generation-slice width.  Part of the sampling definition:
# changing it would change every drawn number, so it is a constant,
# not a knob.
SLICE_PS = 10_000_000_000_000  # 10 s

# Clicks may leave their generation slice by analyzer delay + timing
# spreads + drift.  Anything further than this is a config error.
_MAX_SPILL_PS = SLICE_PS // 4

# Per-slice event budget (memory guard, ~GB scale if exceeded).
_MAX_EVENTS_PER_SLICE = 1.2e8

# Stage ids for per-(stage, slice) RNG streams.
_ST_SIGNAL = 0        # signal-class count, outcomes, times, spreads
_ST_IDLER_COND = 1    # idler-detectable thinning + conditional outcome
_ST_IDLER_ONLY = 2    # idler-only class
_ST_SIGNAL_JITTER = 3
_ST_IDLER_JITTER = 4
_ST_SIGNAL_DARKS = 5
_ST_IDLER_DARKS = 6
_ST_DRIFT = 7
_ST_REMAINDER = 8

# Joint-outcome codes for sample_pair_paths.
CENTRAL = 0
SIDE_EARLY = 1   # signal long, idler short: stop precedes start
SIDE_LATE = 2    # signal short, idler long
NO_JOINT_CLICK = 3


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingDriftSpec:
    """Slow arrival-time drift of one channel's photons.

    ``offset_ps`` is a constant displacement (delay accumulated since
    the coincidence window was last centered); the optional random
    walk adds Normal(0, walk_step_ps) to the displacement every
    ``walk_interval_ps``.  The walk is evaluated at the pair's
    emission time — it models fiber-delay drift on millisecond and
    slower scales, static over a photon's flight.  Dark counts are
    detector-local and are not displaced.
    """

    enabled: bool = False
    channel: str = "idler"
    offset_ps: float = 0.0
    walk_step_ps: float = 0.0
    walk_interval_ps: float = 1.0e9  # 1 ms

    def __post_init__(self):
        if self.channel not in ("signal", "idler"):
            raise ValidationError(
                f"drift channel must be 'signal' or 'idler', "
                f"got {self.channel!r}")
        if not math.isfinite(self.offset_ps):
            raise ValidationError("offset_ps must be finite")
        if not (self.walk_step_ps >= 0.0):
            raise ValidationError("walk_step_ps must be >= 0")
        if not (self.walk_interval_ps >= 1.0e6):
            # the walk is a *slow* drift; tiny intervals would also
            # blow up the per-slice step count
            raise ValidationError("walk_interval_ps must be >= 1e6 (1 us)")
        if float(self.walk_interval_ps) != int(self.walk_interval_ps):
            raise ValidationError("walk_interval_ps must be integer-valued")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything one Monte Carlo run needs, plus the master seed."""

    source: SourceSpec = field(default_factory=SourceSpec)
    channel_signal: ChannelSpec = field(default_factory=ChannelSpec)
    channel_idler: ChannelSpec = field(default_factory=ChannelSpec)
    analyzer_signal: AnalyzerSpec = field(default_factory=AnalyzerSpec)
    analyzer_idler: AnalyzerSpec = field(default_factory=AnalyzerSpec)
    detector_signal: DetectorSpec = field(
        default_factory=lambda: DetectorSpec(quantum_efficiency=0.007))
    detector_idler: DetectorSpec = field(
        default_factory=lambda: DetectorSpec(quantum_efficiency=0.021))
    tia: CoincidenceWindowSpec = field(default_factory=CoincidenceWindowSpec)
    drift: TimingDriftSpec = field(default_factory=TimingDriftSpec)
    acquisition_time_s: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        if not (self.acquisition_time_s > 0.0):
            raise ValidationError("acquisition_time_s must be > 0")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ValidationError("master_seed must be a non-negative int")
        tau1 = self.source.pump_coherence_fwhm_ps
        tau2 = self.source.photon_fwhm_ps
        tau4 = self.analyzer_signal.delay_ps
        if self.analyzer_idler.delay_ps != tau4:
            raise ValidationError(
                "analyzer delays must match: unequal delays make the "
                "short-short and long-long paths distinguishable and "
                "the interference model does not apply "
                f"(got {tau4} vs {self.analyzer_idler.delay_ps})")
        # Franson timescale hierarchy: tau1 >> tau4 > tau2, tau3
        if not tau1 > 100.0 * tau4:
            raise ValidationError(
                "Franson condition violated: need pump coherence >> "
                f"analyzer delay (pump_coherence_fwhm_ps={tau1}, "
                f"delay_ps={tau4})")
        if not tau4 > tau2:
            raise ValidationError(
                "Franson condition violated: analyzer delay must exceed "
                f"the photon duration (delay_ps={tau4}, "
                f"photon_fwhm_ps={tau2})")
        for label, det in (("signal", self.detector_signal),
                           ("idler", self.detector_idler)):
            if not tau4 > det.jitter_fwhm_ps:
                raise ValidationError(
                    "Franson condition violated: analyzer delay must "
                    f"exceed the {label} detector jitter "
                    f"(delay_ps={tau4}, "
                    f"jitter_fwhm_ps={det.jitter_fwhm_ps})")

    # -- derived quantities ------------------------------------------------

    def arm_loss_db(self, arm: str) -> float:
        ch = self.channel_signal if arm == "signal" else self.channel_idler
        an = self.analyzer_signal if arm == "signal" else self.analyzer_idler
        return ch.pre_fiber_loss_db + ch.fiber_loss_db + an.insertion_loss_db

    def arm_q(self, arm: str) -> float:
        """Per-photon survival: transmission x quantum efficiency."""
        det = self.detector_signal if arm == "signal" else self.detector_idler
        return db_to_linear(self.arm_loss_db(arm)) * det.quantum_efficiency

    def generated_pair_rate_hz(self) -> float:
        """Pairs/s at the source output.

        If mu was quoted downstream of the pre-fiber losses, scale
        back up by both arms' pre-fiber transmissions.
        """
        rate = self.source.pair_rate_hz
        if self.source.mu_measured_after_losses:
            rate /= (db_to_linear(self.channel_signal.pre_fiber_loss_db)
                     * db_to_linear(self.channel_idler.pre_fiber_loss_db))
        return rate

    def span_ps(self) -> int:
        return int(round(self.acquisition_time_s * 1e12))

    def interference_x(self) -> float:
        """contrast_total * cos(theta_s + theta_i + pump offset)."""
        theta = (self.analyzer_signal.effective_phase_rad()
                 + self.analyzer_idler.effective_phase_rad()
                 + self.source.pump_phase_offset_rad)
        c_tot = self.analyzer_signal.contrast * self.analyzer_idler.contrast
        return c_tot * math.cos(theta)


@dataclass(frozen=True)
class PairEmission:
    """One pair traced through the link (reference pipeline record)."""

    emission_time_ps: float
    signal_survived: bool
    idler_survived: bool
    outcome: Optional[PathOutcome]      # None if no joint monitored click
    signal_arrival_ps: Optional[float]  # None if lost / unmonitored port
    idler_arrival_ps: Optional[float]


@dataclass
class ClickStream:
    """Sorted detector clicks for one channel over the acquisition."""

    channel: str
    times_ps: np.ndarray          # int64, strictly increasing
    span_ps: int
    true_count: int = 0
    dark_count: int = 0

    def assert_valid(self) -> None:
        t = self.times_ps
        if t.dtype != np.int64:
            raise ValidationError("click timestamps must be int64 ps")
        if t.size:
            if t[0] < 0 or t[-1] > self.span_ps:
                raise ValidationError(
                    f"clicks outside [0, span]: {t[0]}..{t[-1]} "
                    f"span={self.span_ps}")
            if np.any(np.diff(t) <= 0):
                raise ValidationError("click timestamps must be strictly "
                                      "increasing")


@dataclass
class SimDiagnostics:
    """Per-run bookkeeping: generated pairs, per-stage survivors,
    click provenance."""

    pairs_generated: int = 0
    pairs_signal_detectable: int = 0
    pairs_idler_only_detectable: int = 0
    pairs_both_detectable: int = 0
    photon_clicks_signal: int = 0
    photon_clicks_idler: int = 0
    dark_clicks_signal: int = 0
    dark_clicks_idler: int = 0
    clicks_dropped_out_of_span: int = 0


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

def _stream(master_seed: int, stage: int, slice_idx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed,
                                spawn_key=(stage, slice_idx))
    return np.random.Generator(np.random.PCG64DXSM(ss))


def derive_seed(master_seed: int, index: int) -> int:
    """A decorrelated 64-bit child seed (per fringe point etc.)."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(ss.generate_state(2, np.uint64)[0])


# ---------------------------------------------------------------------------
# Spec-level operations (also usable standalone / at small scale)
# ---------------------------------------------------------------------------

def generate_emissions(rate_hz: float, span_ps: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson emission times (sorted float64 ps)."""
    if rate_hz < 0.0:
        raise ValidationError("rate_hz must be >= 0")
    if not span_ps > 0.0:
        raise ValidationError("span_ps must be > 0")
    mean = rate_hz * span_ps * 1e-12
    if mean > _MAX_EVENTS_PER_SLICE:
        raise ValidationError(
            f"expected {mean:.3g} emissions in one call; reduce the span "
            "or the rate")
    n = rng.poisson(mean)
    times = rng.random(n) * span_ps
    times.sort()
    return times


def thin_by_loss(emissions: np.ndarray, transmission: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Independent survival with the given probability."""
    if not (0.0 <= transmission <= 1.0):
        raise ValidationError(
            f"transmission must lie in [0, 1], got {transmission!r}")
    if transmission == 1.0:
        return np.asarray(emissions).copy()
    if transmission == 0.0:
        return np.asarray(emissions)[:0].copy()
    emissions = np.asarray(emissions)
    return emissions[rng.random(emissions.size) < transmission]


def sample_pair_paths(theta_s: float, theta_i: float, pump_phase: float,
                      contrast: float, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Joint path outcomes for n coincident pairs at the monitored ports.

    Codes: CENTRAL (short-short / long-long, unresolved),
    SIDE_EARLY (long-short), SIDE_LATE (short-long), NO_JOINT_CLICK.
    Sampled directly from the analytic distribution — interference
    lives here, never in per-photon coin flips.
    """
    p_c, p_e, p_l = franson_bin_probabilities(theta_s, theta_i,
                                              pump_phase, contrast)
    edges = np.cumsum([p_c, p_e, p_l])
    return np.searchsorted(edges, rng.random(n), side="right").astype(np.int8)


def resolve_central_paths(codes: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    """Assign concrete PathOutcome values to sampled joint codes.

    The central peak's short-short and long-long contributions are
    indistinguishable in the start-stop difference; for absolute-time
    bookkeeping they are split 50/50, which leaves every observable
    statistic of the stationary emission process unchanged.
    Returns an object array (None where no joint click).
    """
    out = np.empty(codes.shape, dtype=object)
    central = codes == CENTRAL
    flips = rng.random(int(central.sum())) < 0.5
    picks = np.empty(flips.size, dtype=object)
    picks[flips] = PathOutcome.LONG_LONG
    picks[~flips] = PathOutcome.SHORT_SHORT
    out[central] = picks
    out[codes == SIDE_EARLY] = PathOutcome.LONG_SHORT
    out[codes == SIDE_LATE] = PathOutcome.SHORT_LONG
    out[codes == NO_JOINT_CLICK] = None
    return out


def dispersive_spread(arrivals: np.ndarray, fwhm_in_ps: float,
                      beta2_ps2_per_km: float, length_km: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Add the fiber's excess Gaussian timing spread.

    The input is assumed to already carry the intrinsic fwhm_in
    spread; this op adds zero-mean noise with variance
    (out^2 - in^2) in 1/e-width terms so the total per-photon FWHM
    equals dispersion_broaden(fwhm_in, beta2, length).
    """
    fwhm_out = dispersion_broaden(fwhm_in_ps, beta2_ps2_per_km, length_km)
    arrivals = np.asarray(arrivals, dtype=np.float64)
    if fwhm_out == fwhm_in_ps:
        return arrivals.copy()
    sigma = math.sqrt(sigma_from_fwhm(fwhm_out) ** 2
                      - sigma_from_fwhm(fwhm_in_ps) ** 2)
    return arrivals + rng.normal(0.0, sigma, arrivals.size)


def _dedupe_sorted_merge(times: np.ndarray,
                         is_dark: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Time-sort labeled clicks; on equal-ps collisions (digitizer
    resolution) keep a single click, photon label winning."""
    order = np.lexsort((is_dark, times))
    t = times[order]
    d = is_dark[order]
    if t.size:
        keep = np.empty(t.size, dtype=bool)
        keep[0] = True
        np.not_equal(t[1:], t[:-1], out=keep[1:])
        t, d = t[keep], d[keep]
    return t, d


def _dead_time_filter(times: np.ndarray, is_dark: np.ndarray,
                      dead_ps: int, carry_last: int
                      ) -> Tuple[np.ndarray, np.ndarray, int]:
    """Non-paralyzable dead time: drop clicks within dead_ps after an
    accepted click.  carry_last is the previous accepted timestamp
    (or a large negative sentinel)."""
    if dead_ps <= 0 or times.size == 0:
        last = int(times[-1]) if times.size else carry_last
        return times, is_dark, last
    keep = np.zeros(times.size, dtype=bool)
    last = carry_last
    tl = times.tolist()
    for i, t in enumerate(tl):
        if t - last >= dead_ps:
            keep[i] = True
            last = t
    return times[keep], is_dark[keep], last


def detect(arrivals: np.ndarray, spec: DetectorSpec, span_ps: float,
           rng: np.random.Generator, channel: str = "det") -> ClickStream:
    """Detector response for a sorted arrival-time array.

    Efficiency thinning, Gaussian jitter of FWHM jitter_fwhm_ps,
    Poissonian dark clicks over the span, merge/sort, dead-time
    filtering, and clipping to [0, span].
    """
    arrivals = np.asarray(arrivals, dtype=np.float64)
    if arrivals.size > 1 and np.any(np.diff(arrivals) < 0):
        raise ValidationError("detect() requires sorted arrivals")
    span = int(round(span_ps))
    kept = thin_by_loss(arrivals, spec.quantum_efficiency, rng)
    if spec.jitter_fwhm_ps > 0.0 and kept.size:
        kept = kept + rng.normal(0.0, sigma_from_fwhm(spec.jitter_fwhm_ps),
                                 kept.size)
    darks = generate_emissions(spec.dark_rate_hz, span, rng) \
        if spec.dark_rate_hz > 0.0 else np.empty(0)
    times = np.concatenate([np.rint(kept), np.rint(darks)]).astype(np.int64)
    is_dark = np.zeros(times.size, dtype=bool)
    is_dark[kept.size:] = True
    inside = (times >= 0) & (times <= span)
    times, is_dark = times[inside], is_dark[inside]
    times, is_dark = _dedupe_sorted_merge(times, is_dark)
    times, is_dark, _ = _dead_time_filter(
        times, is_dark, int(round(spec.dead_time_ps)), -2 ** 62)
    stream = ClickStream(channel=channel, times_ps=times, span_ps=span,
                         true_count=int((~is_dark).sum()),
                         dark_count=int(is_dark.sum()))
    stream.assert_valid()
    return stream


def reference_pair_table(config: SimulationConfig, span_ps: float,
                         rng: np.random.Generator) -> List[PairEmission]:
    """Literal per-pair pipeline at small scale (debug/cross-check).

    Generates every emission, thins each arm, samples the joint path
    outcome for doubly-surviving pairs and the uniform marginal for
    lone survivors.  O(pairs) in Python objects — keep spans tiny.
    """
    emissions = generate_emissions(config.generated_pair_rate_hz(),
                                   span_ps, rng)
    if emissions.size > 200_000:
        raise ValidationError("reference_pair_table is for small spans")
    q_s, q_i = config.arm_q("signal"), config.arm_q("idler")
    theta_s = config.analyzer_signal.effective_phase_rad()
    theta_i = config.analyzer_idler.effective_phase_rad()
    pump = config.source.pump_phase_offset_rad
    c_tot = config.analyzer_signal.contrast * config.analyzer_idler.contrast
    tau4 = config.analyzer_signal.delay_ps
    sig_int = sigma_from_fwhm(config.source.photon_fwhm_ps)
    out: List[PairEmission] = []
    for t0 in emissions:
        s_ok = rng.random() < q_s
        i_ok = rng.random() < q_i
        outcome = None
        t_s = t_i = None
        if s_ok and i_ok:
            code = sample_pair_paths(theta_s, theta_i, pump, c_tot, 1, rng)
            outcome = resolve_central_paths(code, rng)[0]
            if outcome is not None:
                t_s = t0 + tau4 * outcome.signal_delay_units \
                    + rng.normal(0.0, sig_int)
                t_i = t0 + tau4 * outcome.idler_delay_units \
                    + rng.normal(0.0, sig_int)
        elif s_ok:
            if rng.random() < 0.5:  # monitored port, marginal is uniform
                t_s = t0 + tau4 * (rng.random() < 0.5) \
                    + rng.normal(0.0, sig_int)
        elif i_ok:
            if rng.random() < 0.5:
                t_i = t0 + tau4 * (rng.random() < 0.5) \
                    + rng.normal(0.0, sig_int)
        out.append(PairEmission(t0, s_ok, i_ok, outcome, t_s, t_i))
    return out


# ---------------------------------------------------------------------------
# Fast engine: per-slice generation
# ---------------------------------------------------------------------------

class _DriftWalk:
    """Evaluates offset + random walk at emission times, slice by
    slice, with deterministic per-slice increments."""

    def __init__(self, config: SimulationConfig):
        d = config.drift
        self.active = d.enabled
        self.channel = d.channel
        self.offset = d.offset_ps
        self.step = d.walk_step_ps
        self.itv = int(d.walk_interval_ps)
        self.seed = config.master_seed
        self._carry = 0.0            # walk value before this slice's steps
        self._values = np.empty(0)   # cumulative values of slice steps
        self._m_start = 0

    def advance(self, slice_idx: int, lo: int, hi: int) -> None:
        if not (self.active and self.step > 0.0):
            return
        m_start = lo // self.itv + 1
        m_end = (hi - 1) // self.itv  # inclusive
        n = max(0, m_end - m_start + 1)
        rng = _stream(self.seed, _ST_DRIFT, slice_idx)
        inc = rng.normal(0.0, self.step, n)
        if self._values.size:
            self._carry = float(self._values[-1])
        self._values = self._carry + np.cumsum(inc)
        self._m_start = m_start

    def apply(self, channel: str, emission_ps: np.ndarray,
              arrivals: np.ndarray) -> np.ndarray:
        if not self.active or channel != self.channel:
            return arrivals
        shifted = arrivals + self.offset
        if self.step > 0.0 and emission_ps.size:
            pos = (emission_ps.astype(np.int64) // self.itv) - self._m_start
            vals = np.where(pos < 0, self._carry,
                            self._values[np.clip(pos, 0, None)]
                            if self._values.size else self._carry)
            shifted = shifted + vals
        return shifted


def _require_slice_budget(config: SimulationConfig, dt_s: float) -> None:
    rate = config.generated_pair_rate_hz()
    q_s, q_i = config.arm_q("signal"), config.arm_q("idler")
    expected = rate * dt_s * (q_s + q_i * (1.0 - q_s))
    if expected > _MAX_EVENTS_PER_SLICE:
        raise ValidationError(
            f"~{expected:.3g} detectable pairs per generation slice "
            "exceeds the engine budget; lower mu, add loss, or shorten "
            "the acquisition")


def _gen_slice(config: SimulationConfig, slice_idx: int, lo: int, hi: int,
               drift: _DriftWalk, diag: SimDiagnostics,
               ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """All click candidates whose generating process lives in
    [lo, hi): returns (sig_times, sig_dark, idl_times, idl_dark),
    int64, unsorted."""
    dt_s = (hi - lo) * 1e-12
    rate = config.generated_pair_rate_hz()
    q_s, q_i = config.arm_q("signal"), config.arm_q("idler")
    x = config.interference_x()
    tau4 = config.analyzer_signal.delay_ps
    sig_int = sigma_from_fwhm(config.source.photon_fwhm_ps)
    drift.advance(slice_idx, lo, hi)

    def excess_sigma(ch: ChannelSpec) -> float:
        fwhm_out = dispersion_broaden(config.source.photon_fwhm_ps,
                                      ch.beta2_ps2_per_km, ch.fiber_length_km)
        if fwhm_out == config.source.photon_fwhm_ps:
            return 0.0
        return math.sqrt(sigma_from_fwhm(fwhm_out) ** 2 - sig_int ** 2)

    exc_s = excess_sigma(config.channel_signal)
    exc_i = excess_sigma(config.channel_idler)

    # --- stage: signal-detectable class ---------------------------------
    rng = _stream(config.master_seed, _ST_SIGNAL, slice_idx)
    n_s = int(rng.poisson(rate * q_s * dt_s))
    pb_s = rng.integers(0, 4, size=n_s, dtype=np.uint8)
    port_m_s = (pb_s & 1) == 0
    branch_s = (pb_s >> 1).astype(np.float64)     # 0 short, 1 long
    n_m = int(port_m_s.sum())
    # emission times only where a signal click can exist; the
    # idler-conditional stage draws times for its own orphans
    t0_m = lo + rng.random(n_m) * (hi - lo)
    eps = rng.normal(0.0, sig_int, n_m) if sig_int > 0.0 else 0.0
    if exc_s > 0.0:
        eps = eps + rng.normal(0.0, exc_s, n_m)
    arr_sig = t0_m + branch_s[port_m_s] * tau4 + eps

    # --- stage: idler side of signal-class pairs ------------------------
    rng = _stream(config.master_seed, _ST_IDLER_COND, slice_idx)
    both = rng.random(n_s) < q_i
    n_b = int(both.sum())
    # emission times for both-pairs whose signal went to the
    # unmonitored port (no signal click exists to anchor them)
    orphan = both & ~port_m_s
    t0_orphan = lo + rng.random(int(orphan.sum())) * (hi - lo)
    # conditional idler outcome given the signal's (port, branch):
    # same branch with prob 1/2; if same, idler takes the monitored
    # port with prob (1 +/- x)/2 (+ iff signal was monitored); if
    # opposite, ports are uncorrelated.
    same = rng.random(n_b) < 0.5
    pm = np.where(port_m_s[both], (1.0 + x) / 2.0, (1.0 - x) / 2.0)
    u_port = rng.random(n_b)
    idl_port_m = np.where(same, u_port < pm, u_port < 0.5)
    sig_branch_b = branch_s[both]
    idl_branch = np.where(same, sig_branch_b, 1.0 - sig_branch_b)
    # emission times of both-pairs: monitored-signal ones were drawn
    # in the signal stage (in signal-index order), orphans here
    t0_b = np.empty(n_b)
    pos_in_m = np.cumsum(port_m_s) - 1          # index into t0_m
    b_monitored = port_m_s[both]
    t0_b[b_monitored] = t0_m[pos_in_m[both & port_m_s]]
    t0_b[~b_monitored] = t0_orphan
    keep = idl_port_m
    n_ib = int(keep.sum())
    eps_i = rng.normal(0.0, sig_int, n_ib) if sig_int > 0.0 else 0.0
    if exc_i > 0.0:
        eps_i = eps_i + rng.normal(0.0, exc_i, n_ib)
    arr_idl_pair = t0_b[keep] + idl_branch[keep] * tau4 + eps_i
    t0_idl_pair = t0_b[keep]

    # --- stage: idler-only class ----------------------------------------
    rng = _stream(config.master_seed, _ST_IDLER_ONLY, slice_idx)
    n_io = int(rng.poisson(rate * q_i * (1.0 - q_s) * dt_s))
    pb_io = rng.integers(0, 4, size=n_io, dtype=np.uint8)
    port_m_io = (pb_io & 1) == 0
    n_iom = int(port_m_io.sum())
    t0_io = lo + rng.random(n_iom) * (hi - lo)
    eps_io = rng.normal(0.0, sig_int, n_iom) if sig_int > 0.0 else 0.0
    if exc_i > 0.0:
        eps_io = eps_io + rng.normal(0.0, exc_i, n_iom)
    arr_idl_only = t0_io + (pb_io >> 1)[port_m_io] * tau4 + eps_io

    # --- drift (photon arrivals of one channel, darks untouched) --------
    arr_sig = drift.apply("signal", t0_m, arr_sig)
    idl_t0 = np.concatenate([t0_idl_pair, t0_io])
    arr_idl = drift.apply("idler", idl_t0,
                          np.concatenate([arr_idl_pair, arr_idl_only]))

    # --- detector jitter --------------------------------------------------
    jit_s = sigma_from_fwhm(config.detector_signal.jitter_fwhm_ps)
    if jit_s > 0.0 and arr_sig.size:
        rng = _stream(config.master_seed, _ST_SIGNAL_JITTER, slice_idx)
        arr_sig = arr_sig + rng.normal(0.0, jit_s, arr_sig.size)
    jit_i = sigma_from_fwhm(config.detector_idler.jitter_fwhm_ps)
    if jit_i > 0.0 and arr_idl.size:
        rng = _stream(config.master_seed, _ST_IDLER_JITTER, slice_idx)
        arr_idl = arr_idl + rng.normal(0.0, jit_i, arr_idl.size)

    # --- dark counts -------------------------------------------------------
    def darks(stage: int, rate_hz: float) -> np.ndarray:
        if rate_hz <= 0.0:
            return np.empty(0)
        rng = _stream(config.master_seed, stage, slice_idx)
        n = rng.poisson(rate_hz * dt_s)
        return lo + rng.random(n) * (hi - lo)

    dk_s = darks(_ST_SIGNAL_DARKS, config.detector_signal.dark_rate_hz)
    dk_i = darks(_ST_IDLER_DARKS, config.detector_idler.dark_rate_hz)

    # --- diagnostics ---------------------------------------------------------
    rng = _stream(config.master_seed, _ST_REMAINDER, slice_idx)
    n_rem = int(rng.poisson(rate * (1.0 - q_s) * (1.0 - q_i) * dt_s))
    diag.pairs_generated += n_s + n_io + n_rem
    diag.pairs_signal_detectable += n_s
    diag.pairs_idler_only_detectable += n_io
    diag.pairs_both_detectable += n_b

    sig_times = np.concatenate([np.rint(arr_sig),
                                np.rint(dk_s)]).astype(np.int64)
    sig_dark = np.zeros(sig_times.size, dtype=bool)
    sig_dark[arr_sig.size:] = True
    idl_times = np.concatenate([np.rint(arr_idl),
                                np.rint(dk_i)]).astype(np.int64)
    idl_dark = np.zeros(idl_times.size, dtype=bool)
    idl_dark[arr_idl.size:] = True

    for t, label in ((sig_times, "signal"), (idl_times, "idler")):
        if t.size and (int(t.min()) < lo - _MAX_SPILL_PS
                       or int(t.max()) >= hi + _MAX_SPILL_PS):
            raise ValidationError(
                f"{label} clicks spilled more than {_MAX_SPILL_PS} ps "
                "out of their generation slice (drift too large?)")
    return sig_times, sig_dark, idl_times, idl_dark


def iter_click_buckets(config: SimulationConfig,
                       diag: Optional[SimDiagnostics] = None,
                       ) -> Iterator[Tuple[int, np.ndarray, np.ndarray,
                                           np.ndarray, np.ndarray]]:
    """Yield (upper_edge_ps, sig_times, sig_dark, idl_times, idl_dark)
    per time bucket, in time order, deduped and dead-time filtered.
    Every click of the bucket satisfies t < upper_edge_ps, and later
    buckets hold no earlier clicks — ready for streaming consumers.

    Buckets partition the acquisition on SLICE_PS boundaries (the
    last one keeps its closed upper edge at the span); concatenating
    them reproduces run_simulation's streams bit for bit.
    """
    if diag is None:
        diag = SimDiagnostics()
    span = config.span_ps()
    _require_slice_budget(config, min(span, SLICE_PS) * 1e-12)
    n_slices = max(1, -(-span // SLICE_PS))
    drift = _DriftWalk(config)
    pools: List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
    dead_s = int(round(config.detector_signal.dead_time_ps))
    dead_i = int(round(config.detector_idler.dead_time_ps))
    carry = {"signal": -2 ** 62, "idler": -2 ** 62}
    empty = (np.empty(0, np.int64), np.empty(0, bool),
             np.empty(0, np.int64), np.empty(0, bool))

    for k in range(n_slices + 1):
        if k < n_slices:
            lo, hi = k * SLICE_PS, min(span, (k + 1) * SLICE_PS)
            pools.append(_gen_slice(config, k, lo, hi, drift, diag))
        else:
            pools.append(empty)
        if len(pools) > 3:
            pools.pop(0)
        b = k - 1
        if b < 0:
            continue
        blo = b * SLICE_PS
        # last bucket takes a closed upper edge so t == span survives
        bhi = (b + 1) * SLICE_PS if b < n_slices - 1 else span + 1
        out: List[np.ndarray] = []
        for ch_off, channel, dead in ((0, "signal", dead_s),
                                      (2, "idler", dead_i)):
            t = np.concatenate([p[ch_off] for p in pools])
            d = np.concatenate([p[ch_off + 1] for p in pools])
            sel = (t >= max(blo, 0)) & (t < bhi)
            if b == 0:
                dropped_low = int((t < 0).sum())
            else:
                dropped_low = 0
            if b == n_slices - 1:
                dropped_high = int((t > span).sum())
            else:
                dropped_high = 0
            diag.clicks_dropped_out_of_span += dropped_low + dropped_high
            tt, dd = _dedupe_sorted_merge(t[sel], d[sel])
            tt, dd, carry[channel] = _dead_time_filter(tt, dd, dead,
                                                       carry[channel])
            if channel == "signal":
                diag.photon_clicks_signal += int((~dd).sum())
                diag.dark_clicks_signal += int(dd.sum())
            else:
                diag.photon_clicks_idler += int((~dd).sum())
                diag.dark_clicks_idler += int(dd.sum())
            out.extend((tt, dd))
        yield (bhi, out[0], out[1], out[2], out[3])


def run_simulation(config: SimulationConfig,
                   ) -> Tuple[ClickStream, ClickStream, SimDiagnostics]:
    """Materialize both click streams for the whole acquisition."""
    diag = SimDiagnostics()
    sig_t, sig_d, idl_t, idl_d = [], [], [], []
    for _, ts, ds, ti, di in iter_click_buckets(config, diag):
        sig_t.append(ts)
        sig_d.append(ds)
        idl_t.append(ti)
        idl_d.append(di)
    span = config.span_ps()

    def assemble(channel, chunks_t, chunks_d):
        t = np.concatenate(chunks_t) if chunks_t else np.empty(0, np.int64)
        d = np.concatenate(chunks_d) if chunks_d else np.empty(0, bool)
        stream = ClickStream(channel=channel, times_ps=t, span_ps=span,
                             true_count=int((~d).sum()),
                             dark_count=int(d.sum()))
        stream.assert_valid()
        return stream

    return (assemble("signal", sig_t, sig_d),
            assemble("idler", idl_t, idl_d), diag)


# ---------------------------------------------------------------------------
# Click-stream text export
# ---------------------------------------------------------------------------

_EXPORT_MAGIC = "# fransonsim clicks v1"


def write_click_stream(stream: ClickStream, path, seed: Optional[int] = None,
                       config_hash: str = "") -> None:
    """One channel per file: commented header, then ascending integer
    picosecond timestamps, one per line."""
    stream.assert_valid()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{_EXPORT_MAGIC}\n")
        fh.write(f"# channel: {stream.channel}\n")
        fh.write(f"# span_ps: {stream.span_ps}\n")
        fh.write(f"# seed: {'' if seed is None else seed}\n")
        fh.write(f"# config_hash: {config_hash}\n")
        fh.write(f"# true_count: {stream.true_count}\n")
        fh.write(f"# dark_count: {stream.dark_count}\n")
        np.savetxt(fh, stream.times_ps, fmt="%d")


def read_click_stream(path) -> Tuple[ClickStream, Dict[str, str]]:
    meta: Dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        first = fh.readline().rstrip("\n")
        if first != _EXPORT_MAGIC:
            raise ValidationError(f"{path}: not a fransonsim click file")
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        times = np.loadtxt(fh, dtype=np.int64, ndmin=1)
    stream = ClickStream(channel=meta.get("channel", "?"), times_ps=times,
                         span_ps=int(meta["span_ps"]),
                         true_count=int(meta.get("true_count", 0)),
                         dark_count=int(meta.get("dark_count", 0)))
    stream.assert_valid()
    return stream, meta
