"""Time-tag ingestion and click-pattern nonclassicality witnesses.

The Poisson-binomial witness compares the observed variance of the
number-of-bins-fired distribution against the variance of independent bins
with the same (generally unequal) click probabilities; negativity is a
sufficient condition for nonclassical light. Dropping the bin-probability
spread term gives the plain binomial witness, which falsely flags
classical light whenever the bin probabilities are unequal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllDegenerate, DegenerateDenominator, NoSyncRecords, UnsortedStream
from .models import ClickHistogram, ClickPatternStats, LoopConfig, TimeTagStream

__all__ = [
    "IngestResult",
    "ingest_time_tags",
    "q_pb",
    "q_b",
    "BootstrapResult",
    "bootstrap_sigma",
]


@dataclass(frozen=True)
class IngestResult:
    """Gated statistics of a time-tag stream; unpacks as (histogram, pattern_stats).

    ``n_discarded`` tallies detector records that fell outside every gate.
    """

    histogram: ClickHistogram
    pattern_stats: ClickPatternStats
    n_discarded: int

    def __iter__(self):
        return iter((self.histogram, self.pattern_stats))


def ingest_time_tags(stream: TimeTagStream, config: LoopConfig) -> IngestResult:
    """Gate a time-tag stream into per-pulse, per-bin clicks.

    For each sync record, bin j spans a window of ``gate_width_ps`` centred
    on ``t_sync + j * loop_delay_ps`` (left edge inclusive, right edge
    exclusive); a bin fires when at least one detector record falls inside.
    Detector records outside every gate are discarded and tallied.
    """
    times = stream.times_ps
    if len(times) > 1:
        bad = np.nonzero(np.diff(times) < 0)[0]
        if len(bad):
            raise UnsortedStream(int(bad[0]) + 1)

    sync_times = times[stream.channels == stream.sync_channel]
    if len(sync_times) == 0:
        raise NoSyncRecords("stream contains no sync records")
    det_times = times[stream.channels == stream.detector_channel]

    n_bins = config.n_bins
    delay = config.loop_delay_ps
    gate = config.gate_width_ps

    pulse = np.searchsorted(sync_times, det_times, side="right") - 1
    offset = det_times - sync_times[np.clip(pulse, 0, None)]
    j = (offset + delay // 2) // delay
    residual = offset - j * delay
    in_gate = (
        (pulse >= 0)
        & (j >= 1)
        & (j <= n_bins)
        & (2 * residual >= -gate)
        & (2 * residual < gate)
    )
    n_discarded = int(len(det_times) - in_gate.sum())

    # deduplicate multiple records inside one gate
    keys = np.unique(pulse[in_gate] * n_bins + (j[in_gate] - 1))
    bin_of = (keys % n_bins).astype(np.int64)
    pulse_of = keys // n_bins

    clicks = np.bincount(bin_of, minlength=n_bins)
    fired_per_pulse = np.bincount(pulse_of, minlength=len(sync_times))
    k_counts = np.bincount(fired_per_pulse, minlength=n_bins + 1)

    hist = ClickHistogram.from_clicks(clicks, len(sync_times))
    stats = ClickPatternStats.from_counts(k_counts, hist.p_hat)
    return IngestResult(histogram=hist, pattern_stats=stats, n_discarded=n_discarded)


def _pattern_moments(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(c.shape[-1], dtype=float)
    mean = c @ k
    var = c @ k**2 - mean**2
    return mean, var


def q_pb(stats: ClickPatternStats, n_bins: int | None = None) -> float:
    """Poisson-binomial nonclassicality witness of a click-pattern distribution.

    ``n_bins`` defaults to the natural bin count of ``stats``; it is exposed
    because the witness value depends on how many bins are counted (e.g.
    whether trailing noise-floor bins are kept). The pattern distribution and
    the bin-probability moments in ``stats`` must refer to the same bin set.
    """
    N = stats.n_bins if n_bins is None else n_bins
    denom = stats.mean_c * (N - stats.mean_c) - N**2 * stats.sigma2
    if denom <= 0:
        raise DegenerateDenominator(
            f"<c>(N - <c>) - N^2 sigma^2 = {denom} is not positive"
        )
    return float(N * stats.var_c / denom - 1.0)


def q_b(stats: ClickPatternStats, n_bins: int | None = None) -> float:
    """Binomial witness: the uniform-splitting special case of :func:`q_pb`.

    Ignores the spread of the per-bin probabilities, so exponentially
    decaying bins make classical light look falsely nonclassical.
    """
    N = stats.n_bins if n_bins is None else n_bins
    denom = stats.mean_c * (N - stats.mean_c)
    if denom <= 0:
        raise DegenerateDenominator(f"<c>(N - <c>) = {denom} is not positive")
    return float(N * stats.var_c / denom - 1.0)


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap witness uncertainties; unpacks as (sigma_qpb, sigma_qb)."""

    sigma_qpb: float
    sigma_qb: float
    n_degenerate_qpb: int
    n_degenerate_qb: int

    def __iter__(self):
        return iter((self.sigma_qpb, self.sigma_qb))


def bootstrap_sigma(
    stats: ClickPatternStats,
    n_bins: int | None = None,
    trials_observed: int = 1,
    iterations: int = 10000,
    seed: int = 0,
) -> BootstrapResult:
    """Parametric bootstrap uncertainties of both witnesses.

    Each iteration redraws ``trials_observed`` pulses from a multinomial over
    the measured pattern distribution c_k and recomputes both witnesses; the
    returned sigmas are the (population) standard deviations across
    iterations. The bin-probability moments entering the Poisson-binomial
    witness stay fixed at their measured values, since the pattern
    distribution alone carries no per-bin information. Degenerate iterations
    are excluded and tallied.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if trials_observed < 1:
        raise ValueError(f"trials_observed must be >= 1, got {trials_observed}")
    N = stats.n_bins if n_bins is None else n_bins

    rng = np.random.Generator(np.random.Philox(key=seed))
    c_resampled = rng.multinomial(trials_observed, stats.c, size=iterations) / trials_observed
    mean, var = _pattern_moments(c_resampled)

    denom_pb = mean * (N - mean) - N**2 * stats.sigma2
    denom_b = mean * (N - mean)
    ok_pb = denom_pb > 0
    ok_b = denom_b > 0
    if not ok_pb.any() and not ok_b.any():
        raise AllDegenerate("every bootstrap iteration had a degenerate denominator")

    with np.errstate(divide="ignore", invalid="ignore"):
        qpb_vals = N * var / denom_pb - 1.0
        qb_vals = N * var / denom_b - 1.0
    sigma_qpb = float(np.std(qpb_vals[ok_pb])) if ok_pb.any() else float("nan")
    sigma_qb = float(np.std(qb_vals[ok_b])) if ok_b.any() else float("nan")
    return BootstrapResult(
        sigma_qpb=sigma_qpb,
        sigma_qb=sigma_qb,
        n_degenerate_qpb=int((~ok_pb).sum()),
        n_degenerate_qb=int((~ok_b).sum()),
    )
