"""High-dynamic-range photon-number calibration of a loop click detector.

Pipeline: fit the loop parameters on an attenuated coherent run, invert
every bin of a bright run into an independent estimate of the mean output
photon number, propagate all uncertainties per bin, and combine the bins
into an inverse-variance weighted mean. Referencing the result against a
power-meter reading yields the system detection efficiency and the dynamic
range of the detector.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Iterable, Optional

import numpy as np
from scipy import constants
from scipy.optimize import least_squares

from . import analytic
from .errors import (
    BelowNoise,
    FitDiverged,
    NoValidBins,
    SaturatedBin,
    SaturatedFirstBin,
)
from .models import CalibrationResult, ClickHistogram, FitResult, LoopConfig, Mode

__all__ = [
    "power_to_photons",
    "estimate_nout_per_bin",
    "nout_partial_derivatives",
    "propagate_sigma_nout",
    "weighted_mean_nout",
    "fit_loop_params",
    "system_detection_efficiency",
    "dynamic_range_db",
    "max_usable_bins",
    "calibrate",
]

_EPS = float(np.finfo(float).eps)


def power_to_photons(power_watts: float, rep_rate_hz: float, wavelength_m: float) -> float:
    """Mean photons per pulse corresponding to an average power reading."""
    if rep_rate_hz <= 0:
        raise ValueError(f"rep_rate_hz must be positive, got {rep_rate_hz}")
    if wavelength_m <= 0:
        raise ValueError(f"wavelength_m must be positive, got {wavelength_m}")
    if power_watts < 0:
        raise ValueError(f"power_watts must be non-negative, got {power_watts}")
    photon_energy = constants.h * constants.c / wavelength_m
    return power_watts / (photon_energy * rep_rate_hz)


def _inversion_coefficient(config: LoopConfig, j: int) -> float:
    """Maps ln[(1-nu)/(1-p_j)] to the total mean output photon number.

    Equals (total output fraction) / q_j; for an active loop it depends on
    R and eta only through their product.
    """
    return analytic.output_fraction(config) / analytic.bin_exit_prob(config, j)


def _log_ratio(p_j: float, nu: float) -> float:
    # ln[(1-nu)/(1-p_j)], stable for p_j close to nu
    return math.log1p((p_j - nu) / (1.0 - p_j))


def estimate_nout_per_bin(config: LoopConfig, p_j: float, j: int) -> float:
    """Per-bin estimate of the total mean output photon number.

    Inverts the coherent-state click probability of bin j, so a coherent
    input is assumed. Raises ``SaturatedBin`` when p_j is too close to 1 for
    the logarithm to be meaningful and ``BelowNoise`` when p_j is under the
    dark-count floor.
    """
    if 1.0 - p_j <= _EPS:
        raise SaturatedBin(f"bin {j}: p = {p_j} is saturated")
    if p_j < config.nu:
        raise BelowNoise(f"bin {j}: p = {p_j} is below the dark-count floor {config.nu}")
    return _inversion_coefficient(config, j) * _log_ratio(p_j, config.nu)


def _central_diff(f, x: float, lo: float, hi: float, rel_step: float = 6e-6) -> float:
    h = rel_step * max(abs(x), 1e-3)
    a = max(lo, x - h)
    b = min(hi, x + h)
    return (f(b) - f(a)) / (b - a)


def nout_partial_derivatives(config: LoopConfig, p_j: float, j: int) -> dict[str, float]:
    """Partial derivatives of the per-bin estimate wrt p_j, R, eta, nu.

    The passive j >= 2 branch uses closed-form log-derivatives of the
    inversion formula (the R terms are grouped so the expression stays
    finite at R = 1/2); every other branch differentiates the inversion
    numerically.
    """
    nout = estimate_nout_per_bin(config, p_j, j)
    coeff = _inversion_coefficient(config, j)
    d_p = coeff / (1.0 - p_j)
    d_nu = -coeff / (1.0 - config.nu)
    R, eta = config.R, config.eta
    if config.mode is Mode.PASSIVE and j >= 2:
        denom = R + eta - 2.0 * R * eta
        d_r = nout * (
            (1.0 - j) / R
            + 1.0 / (R * (1.0 - R * eta))
            + (1.0 + R - 2.0 * R * eta) / (denom * (1.0 - R))
        )
        d_eta = nout * (
            (1.0 - j) / eta + (1.0 - R) ** 2 / (denom * (1.0 - R * eta))
        )
    else:
        d_r = _central_diff(
            lambda r: estimate_nout_per_bin(replace(config, R=r), p_j, j), R, 0.0, 1.0
        )
        d_eta = _central_diff(
            lambda e: estimate_nout_per_bin(replace(config, eta=e), p_j, j), eta, 0.0, 1.0
        )
    return {"p": d_p, "R": d_r, "eta": d_eta, "nu": d_nu}


def propagate_sigma_nout(config: LoopConfig, p_j: float, sigma_p: float, j: int) -> float:
    """Gaussian-propagated uncertainty of the per-bin photon-number estimate.

    Four-term quadrature over the uncertainties of the click probability
    (``sigma_p``) and of R, eta, nu (taken from ``config``).
    """
    d = nout_partial_derivatives(config, p_j, j)
    return math.sqrt(
        (d["p"] * sigma_p) ** 2
        + (d["R"] * config.sigma_R) ** 2
        + (d["eta"] * config.sigma_eta) ** 2
        + (d["nu"] * config.sigma_nu) ** 2
    )


def weighted_mean_nout(
    estimates: Iterable[tuple[float, float]], j_min: int = 1
) -> tuple[float, float]:
    """Inverse-variance weighted mean of per-bin estimates from bin j_min on.

    ``estimates[k]`` belongs to bin j = k + 1. Bins with non-finite values or
    non-positive sigma are skipped. Returns (mean, sigma) with
    sigma = 1/sqrt(sum of weights).
    """
    values, weights = [], []
    for j, (x, s) in enumerate(estimates, start=1):
        if j < j_min or not (math.isfinite(x) and math.isfinite(s)) or s <= 0:
            continue
        values.append(x)
        weights.append(1.0 / s**2)
    if not values:
        raise NoValidBins(f"no usable per-bin estimate at or above bin {j_min}")
    values = np.asarray(values)
    weights = np.asarray(weights)
    return float((weights @ values) / weights.sum()), float(1.0 / math.sqrt(weights.sum()))


def _coherent_model_passive(
    R: float, eta: float, nbar: float, nu: float, n_bins: int
) -> np.ndarray:
    j = np.arange(2, n_bins + 1)
    q = np.empty(n_bins)
    q[0] = R
    q[1:] = (1.0 - R) ** 2 * R ** (j - 2) * eta ** (j - 1)
    return 1.0 - (1.0 - nu) * np.exp(-q * nbar)


def _coherent_model_active(s: float, amp: float, nu: float, n_bins: int) -> np.ndarray:
    j = np.arange(1, n_bins + 1)
    return 1.0 - (1.0 - nu) * np.exp(-amp * s ** (j - 1.0))


def _decay_slope(log_l: np.ndarray, js: np.ndarray) -> float:
    if len(js) < 2:
        return math.log(0.5)
    return float(np.polyfit(js, log_l, 1)[0])


def _fit_starts(x0: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> list[np.ndarray]:
    rng = np.random.Generator(np.random.Philox(key=20240712))
    starts = [x0]
    for _ in range(4):
        jitter = rng.normal(0.0, 0.1, size=len(x0))
        starts.append(np.clip(x0 * np.exp(jitter), lo, hi))
    return starts


def fit_loop_params(hist: ClickHistogram, config_prior: LoopConfig) -> FitResult:
    """Weighted nonlinear least squares of the coherent click model.

    Fits (R, eta, nbar) for a passive loop. For an active loop the data
    constrain only the product R*eta and the overall brightness, so the fit
    is performed in those coordinates, ``r_eta_hat`` carries the product and
    the individual parameters are reported as NaN with ``identifiable``
    False. ``nu`` is held fixed at the separately measured value from
    ``config_prior``.

    Weighting is inverse-variance and iteratively refined: the first pass
    uses the confidence widths of the measured click probabilities, later
    passes use binomial variances evaluated on the fitted curve. Reweighting
    on the model removes the bias that data-derived weights introduce
    (upward-fluctuating near-saturated bins would otherwise get
    systematically smaller errors and larger weights).
    """
    p_hat = hist.p_hat
    if p_hat[0] > 0.99:
        raise SaturatedFirstBin(
            f"first-bin click probability {p_hat[0]:.4f} > 0.99; attenuate the input"
        )
    nu = config_prior.nu
    n_bins = hist.n_bins
    sigma = np.maximum(hist.sigma_p(), 1e-12)

    # exact per-bin exponents L_j = q_j * nbar seed the start values
    usable = (p_hat > nu + 3.0 * sigma) & (p_hat < 1.0 - 1e-6)
    L = np.full(n_bins, np.nan)
    ok = 1.0 - p_hat > _EPS
    L[ok] = np.log1p((p_hat[ok] - nu) / (1.0 - p_hat[ok]))
    decay = usable.copy()
    decay[0] = False
    js = np.nonzero(decay)[0] + 1
    slope = _decay_slope(np.log(L[decay]), js) if decay.sum() >= 2 else math.log(0.5)
    s0 = min(max(math.exp(slope), 1e-3), 0.999)

    if config_prior.mode is Mode.PASSIVE:
        if usable[0] and usable[1]:
            ratio = L[1] / L[0]
            r0 = 1.0 / (1.0 + math.sqrt(max(ratio / s0, 1e-12)))
        else:
            r0 = 0.5
        eta0 = min(max(s0 / r0, 1e-3), 1.0)
        nbar0 = L[0] / r0 if usable[0] else max(np.nanmax(L), 0.1)
        x0 = np.array([r0, eta0, max(nbar0, 1e-6)])
        lo = np.array([1e-9, 1e-9, 0.0])
        hi = np.array([1.0 - 1e-9, 1.0, np.inf])
        model = lambda x: _coherent_model_passive(x[0], x[1], x[2], nu, n_bins)
    else:
        amp0 = L[0] if usable[0] else max(np.nanmax(L), 0.1)
        x0 = np.array([s0, max(amp0, 1e-6)])
        lo = np.array([1e-9, 0.0])
        hi = np.array([1.0 - 1e-9, np.inf])
        model = lambda x: _coherent_model_active(x[0], x[1], nu, n_bins)

    best = None
    for start in _fit_starts(x0, lo, hi):
        try:
            res = least_squares(
                lambda x: (model(x) - p_hat) / sigma, start, bounds=(lo, hi), method="trf"
            )
        except Exception:
            continue
        if res.success and math.isfinite(res.cost) and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FitDiverged("least-squares failed from every start point")

    for _ in range(2):
        p_model = model(best.x)
        sigma = np.sqrt(
            np.maximum(p_model * (1.0 - p_model), 1.0 / hist.trials) / hist.trials
        )
        try:
            res = least_squares(
                lambda x: (model(x) - p_hat) / sigma, best.x, bounds=(lo, hi), method="trf"
            )
        except Exception:
            break
        if not (res.success and math.isfinite(res.cost)):
            break
        best = res

    jac = best.jac
    cov = np.linalg.pinv(jac.T @ jac)
    perr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    residual_norm = float(2.0 * best.cost)
    dof = n_bins - len(x0)

    if config_prior.mode is Mode.PASSIVE:
        r, eta, nbar = best.x
        var_prod = (
            (eta * perr[0]) ** 2 + (r * perr[1]) ** 2 + 2.0 * r * eta * cov[0, 1]
        )
        return FitResult(
            R_hat=float(r),
            eta_hat=float(eta),
            nbar_hat=float(nbar),
            sigma_R=float(perr[0]),
            sigma_eta=float(perr[1]),
            sigma_nbar=float(perr[2]),
            residual_norm=residual_norm,
            dof=dof,
            r_eta_hat=float(r * eta),
            sigma_r_eta=float(math.sqrt(max(var_prod, 0.0))),
            identifiable=True,
        )
    s, _amp = best.x
    nan = float("nan")
    return FitResult(
        R_hat=nan,
        eta_hat=nan,
        nbar_hat=nan,
        sigma_R=nan,
        sigma_eta=nan,
        sigma_nbar=nan,
        residual_norm=residual_norm,
        dof=dof,
        r_eta_hat=float(s),
        sigma_r_eta=float(perr[0]),
        identifiable=False,
    )


def system_detection_efficiency(n_measured: float, n_dark: float, n_pm: float) -> float:
    """Detected over incident mean photon number, referenced to a power meter."""
    if n_pm <= 0:
        raise ValueError(f"n_pm must be positive, got {n_pm}")
    return (n_measured - n_dark) / n_pm


def dynamic_range_db(n_bar: float, nu: float) -> float:
    """Dynamic range 10*log10(n_bar / nu) in dB."""
    if n_bar <= 0:
        raise ValueError(f"n_bar must be positive, got {n_bar}")
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    return 10.0 * math.log10(n_bar / nu)


def max_usable_bins(
    config: LoopConfig, n_max: float, decay_base: Optional[float] = None
) -> float:
    """Approximate number of bins occupied above the noise floor.

    Uses log10(nu / n_max) / log10(decay_base) with the default base
    eta*(1-R). The per-bin tail of the click probabilities actually decays
    with ratio R*eta, which can be passed explicitly as ``decay_base`` as an
    alternative estimate; the two coincide at R = 1/2.
    """
    if not n_max > config.nu > 0:
        raise ValueError(f"need n_max > nu > 0, got n_max={n_max}, nu={config.nu}")
    base = config.eta * (1.0 - config.R) if decay_base is None else decay_base
    if not 0.0 < base < 1.0:
        raise ValueError(f"decay base must be in (0, 1), got {base}")
    return math.log10(config.nu / n_max) / math.log10(base)


def _auto_j_min(per_bin: np.ndarray) -> int:
    """Smallest bin whose estimate agrees with the weighted mean of later bins.

    Guards against systematically undercounting early bins (e.g. from
    back-reflection dead time): a bin is accepted once it deviates from the
    running tail mean by less than twice its own sigma.
    """
    valid = [
        j
        for j in range(1, len(per_bin) + 1)
        if math.isfinite(per_bin[j - 1, 0]) and per_bin[j - 1, 1] > 0
    ]
    for idx, j in enumerate(valid):
        tail = valid[idx + 1 :]
        if not tail:
            return j
        wm, _ = weighted_mean_nout(
            [(per_bin[t - 1, 0], per_bin[t - 1, 1]) for t in tail]
        )
        if abs(per_bin[j - 1, 0] - wm) < 2.0 * per_bin[j - 1, 1]:
            return j
    return valid[-1] if valid else 1


def calibrate(
    hist_bright: ClickHistogram,
    fit: FitResult,
    config: LoopConfig,
    n_pm: Optional[float] = None,
    sigma_n_pm: float = 0.0,
    j_min: Optional[int] = None,
    n_dark: float = 0.0,
    min_misses: int = 100,
) -> CalibrationResult:
    """Full bright-run calibration from a histogram and fitted loop parameters.

    Every bin of the bright histogram is inverted into an estimate of the
    mean output photon number with its propagated sigma; saturated and
    below-noise bins are excluded and reported. A bin counts as saturated
    unless at least ``min_misses`` pulses produced no click in it: the
    inversion goes through log(1/(1 - p)), and with fewer misses the log of
    the noisy miss rate is both unstable and systematically biased high.
    Bins from ``j_min`` on enter the weighted mean (``j_min=None`` selects
    it automatically, see :func:`_auto_j_min`). When a power-meter photon
    number ``n_pm`` is given, the system detection efficiency (with
    uncertainty) and the dynamic range are attached; otherwise the dynamic
    range is referenced to the measured photon number.
    """
    if fit.identifiable:
        cal_cfg = replace(
            config,
            R=fit.R_hat,
            eta=fit.eta_hat,
            sigma_R=fit.sigma_R,
            sigma_eta=fit.sigma_eta,
        )
    else:
        # active loop: the inversion depends only on the product R*eta, so
        # fold the fitted product into R and pin eta at 1
        cal_cfg = replace(
            config, R=fit.r_eta_hat, eta=1.0, sigma_R=fit.sigma_r_eta, sigma_eta=0.0
        )

    n_bins = hist_bright.n_bins
    sigma_p = hist_bright.sigma_p()
    per_bin = np.full((n_bins, 2), np.nan)
    saturated: list[int] = []
    below_noise: list[int] = []
    for j in range(1, n_bins + 1):
        p = float(hist_bright.p_hat[j - 1])
        if hist_bright.clicks[j - 1] > hist_bright.trials - min_misses:
            saturated.append(j)
            continue
        try:
            est = estimate_nout_per_bin(cal_cfg, p, j)
            sig = propagate_sigma_nout(cal_cfg, p, float(sigma_p[j - 1]), j)
        except SaturatedBin:
            saturated.append(j)
            continue
        except BelowNoise:
            below_noise.append(j)
            continue
        per_bin[j - 1] = (est, sig)

    if not np.isfinite(per_bin[:, 0]).any():
        raise NoValidBins("every bin is saturated or below the noise floor")
    if j_min is None:
        j_min = _auto_j_min(per_bin)

    n_measured, sigma_n = weighted_mean_nout(
        [(per_bin[j - 1, 0], per_bin[j - 1, 1]) for j in range(1, n_bins + 1)],
        j_min=j_min,
    )
    included = tuple(
        j
        for j in range(j_min, n_bins + 1)
        if math.isfinite(per_bin[j - 1, 0]) and per_bin[j - 1, 1] > 0
    )

    sde = sigma_sde = None
    if n_pm is not None:
        sde = system_detection_efficiency(n_measured, n_dark, n_pm)
        sigma_sde = (
            math.sqrt((sigma_n / n_pm) ** 2 + ((n_measured - n_dark) * sigma_n_pm / n_pm**2) ** 2)
        )

    dr = None
    dr_ref = n_pm if n_pm is not None else n_measured
    if config.nu > 0 and dr_ref > 0:
        dr = dynamic_range_db(dr_ref, config.nu)

    return CalibrationResult(
        n_out_per_bin=per_bin,
        j_min=j_min,
        n_measured=n_measured,
        sigma_n_measured=sigma_n,
        included_bins=included,
        saturated_bins=tuple(saturated),
        below_noise_bins=tuple(below_noise),
        sde=sde,
        sigma_sde=sigma_sde,
        dynamic_range_db=dr,
    )
