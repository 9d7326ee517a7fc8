"""Forecast diagnostics: error curves, derivative densities, spectra, correlations, profiles.

All functions are pure numpy and work on plain arrays (a :class:`Trajectory`
is accepted wherever a time-major array is). Reductions go through numpy's
pairwise summation, so aggregates do not depend on how samples were batched.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError
from .gledfile import Trajectory


def _arr(x) -> np.ndarray:
    return np.asarray(x.states if isinstance(x, Trajectory) else x, dtype=np.float64)


def relative_error(pred, truth) -> np.ndarray:
    """``e(t) = ||truth_t - pred_t||^2 / ||truth_t||^2`` along axis 0 of time-major arrays.

    Leading axes beyond time are allowed: ``(..., T, *state)`` with ``state_axes``
    inferred as everything after axis ``-state_ndim``. States with zero truth
    norm are flagged as NaN so that ``np.nanmean`` leaves them out.
    """
    p, t = _arr(pred), _arr(truth)
    if p.shape != t.shape:
        raise ContractError(f"prediction shape {p.shape} does not match truth shape {t.shape}")
    if p.ndim < 2:
        raise ContractError("need a time axis and at least one state axis")
    axes = tuple(range(1, p.ndim)) if p.ndim == 2 else tuple(range(2, p.ndim))
    num = ((t - p) ** 2).sum(axis=axes)
    den = (t**2).sum(axis=axes)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = num / den
    e[den == 0] = np.nan
    return e


def mean_error_curve(pred, truth) -> np.ndarray:
    """Average of :func:`relative_error` over a batch ``(B, T, *state)``, ignoring flagged entries."""
    e = relative_error(pred, truth)
    if e.ndim != 2:
        return e
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-flagged columns stay NaN
        return np.nanmean(e, axis=0)


def spectral_derivatives(u, length: float, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of periodic samples along ``axis`` (domain ``[0, length)``)."""
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[axis]
    k = 2.0 * np.pi / length * np.fft.fftfreq(n, d=1.0 / n)
    shape = [1] * u.ndim
    shape[axis] = n
    k = k.reshape(shape)
    uh = np.fft.fft(u, axis=axis)
    k1 = k.copy()
    if n % 2 == 0:
        k1.flat[n // 2] = 0.0  # odd derivative of the Nyquist mode is not representable
    ux = np.fft.ifft(1j * k1 * uh, axis=axis).real
    uxx = np.fft.ifft(-(k**2) * uh, axis=axis).real
    return ux, uxx


@dataclass
class Histogram2D:
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    normalized: bool = True

    @property
    def bin_area(self) -> np.ndarray:
        return np.outer(np.diff(self.x_edges), np.diff(self.y_edges))

    @property
    def probabilities(self) -> np.ndarray:
        tot = self.counts.sum()
        return self.counts / tot if tot > 0 else np.zeros_like(self.counts, dtype=float)

    @property
    def density(self) -> np.ndarray:
        """Counts scaled so that ``sum(density * bin_area) == 1``."""
        return self.probabilities / self.bin_area


def default_ranges(truth_fields, length: float, lo: float = 1.0, hi: float = 99.0):
    """Symmetric ``u_x`` and ``u_xx`` ranges covering the ``lo``-``hi`` percentiles of the truth data."""
    ux, uxx = spectral_derivatives(truth_fields, length)
    a = max(abs(np.percentile(ux, lo)), abs(np.percentile(ux, hi)))
    b = max(abs(np.percentile(uxx, lo)), abs(np.percentile(uxx, hi)))
    return (-a, a), (-b, b)


def ux_uxx_density(fields, length: float, bins: int | tuple[int, int] = 50, ranges=None) -> Histogram2D:
    """Joint histogram of ``(u_x, u_xx)`` over every grid point of every state.

    ``fields`` is any array whose last axis is the periodic space axis. Points
    outside ``ranges`` are dropped before normalisation.
    """
    u = _arr(fields)
    if u.size == 0:
        raise ContractError("u_x-u_xx density of an empty field set")
    ux, uxx = spectral_derivatives(u, length)
    if ranges is None:
        ranges = default_ranges(u, length)
    counts, xe, ye = np.histogram2d(ux.ravel(), uxx.ravel(), bins=bins, range=ranges)
    return Histogram2D(xe, ye, counts)


def histogram_distance(h1: Histogram2D, h2: Histogram2D) -> float:
    """Total-variation distance ``0.5 * sum |p - q|`` between two histograms on identical bins."""
    if (
        h1.counts.shape != h2.counts.shape
        or not np.array_equal(h1.x_edges, h2.x_edges)
        or not np.array_equal(h1.y_edges, h2.y_edges)
    ):
        raise ContractError("histograms use different binning")
    return float(0.5 * np.abs(h1.probabilities - h2.probabilities).sum())


def _check_axis(u: np.ndarray, axis: int) -> int:
    if not -u.ndim <= axis < u.ndim:
        raise ContractError(f"axis {axis} out of range for {u.ndim}-d fields")
    return axis % u.ndim


def energy_spectrum(fields, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """One-sided spectrum ``E(k) = <|u_hat(k)|^2>`` for ``k = 1..n/2``, averaged over all other axes.

    ``u_hat`` is the FFT divided by ``n``; the Nyquist bin is halved so that
    ``2 * sum(E) + <mean^2> = <u^2>``.
    """
    u = _arr(fields)
    axis = _check_axis(u, axis)
    n = u.shape[axis]
    uh = np.fft.rfft(u, axis=axis) / n
    power = np.moveaxis(np.abs(uh) ** 2, axis, -1).reshape(-1, n // 2 + 1).mean(axis=0)
    spec = power[1:].copy()
    if n % 2 == 0:
        spec[-1] *= 0.5
    return np.arange(1, len(spec) + 1), spec


def _fluctuation(u: np.ndarray, axis: int) -> np.ndarray:
    """Deviation from the mean over the sample axis (0) and ``axis``."""
    axes = (0, axis) if u.ndim > 1 and axis != 0 else (axis,)
    return u - u.mean(axis=axes, keepdims=True)


def spatial_correlation(fields, axis: int = -1) -> np.ndarray:
    """Periodic two-point correlation ``R(r) = <u'(x) u'(x+r)> / <u'^2>`` for ``r = 0..n-1`` grid shifts.

    Evaluated through the power spectrum; averages run over samples and the
    transverse coordinates.
    """
    u = _arr(fields)
    axis = _check_axis(u, axis)
    f = _fluctuation(u, axis)
    var = np.mean(f**2)
    if not var > 0:
        raise ContractError("spatial correlation of a zero-variance field")
    n = u.shape[axis]
    fh = np.fft.fft(f, axis=axis)
    cov = np.fft.ifft(np.abs(fh) ** 2, axis=axis).real / n
    cov = np.moveaxis(cov, axis, -1).reshape(-1, n).mean(axis=0)
    r = cov / var
    r[0] = 1.0
    return np.clip(r, -1.0, 1.0)


def spatial_correlation_direct(fields, axis: int = -1) -> np.ndarray:
    """Same quantity as :func:`spatial_correlation` by explicit lag averaging (O(n^2))."""
    u = _arr(fields)
    axis = _check_axis(u, axis)
    f = _fluctuation(u, axis)
    var = np.mean(f**2)
    if not var > 0:
        raise ContractError("spatial correlation of a zero-variance field")
    n = u.shape[axis]
    return np.array([np.mean(f * np.roll(f, -r, axis=axis)) for r in range(n)]) / var


def temporal_correlation(series, max_lag: int) -> np.ndarray:
    """Normalised autocorrelation of the fluctuation of a probe signal, lags ``0..max_lag``.

    ``series`` is ``(T,)`` or ``(T, n_probes)``; with several probes the lagged
    products are pooled. Each lag is a Pearson-type ratio of the overlapping
    segments, hence bounded by 1 in magnitude.
    """
    x = _arr(series)
    if x.ndim == 1:
        x = x[:, None]
    t = x.shape[0]
    if max_lag < 0 or t <= max_lag:
        raise ContractError(f"series of length {t} too short for max lag {max_lag}")
    f = x - x.mean(axis=0, keepdims=True)
    if not np.any(f != 0):
        raise ContractError("temporal correlation of a constant series")
    out = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        a, b = f[: t - lag], f[lag:]
        den = np.sqrt((a * a).sum() * (b * b).sum())
        out[lag] = (a * b).sum() / den if den > 0 else 0.0
    out[0] = 1.0
    return np.clip(out, -1.0, 1.0)


@dataclass
class ProfileSet:
    coordinate: np.ndarray
    mean: np.ndarray  # (n_comp, n)
    rms: np.ndarray  # (n_comp, n)
    stress: np.ndarray  # (n,) shear stress <u'v'> of components 0 and 1 (zeros for a single component)
    sample_count: int

    def to_columns(self) -> dict[str, np.ndarray]:
        cols = {"coordinate": self.coordinate}
        for c in range(self.mean.shape[0]):
            cols[f"mean_{c}"] = self.mean[c]
            cols[f"rms_{c}"] = self.rms[c]
        cols["stress_01"] = self.stress
        return cols


def mean_rms_stress(fields, homogeneous_axes: Sequence[int], coordinate=None) -> ProfileSet:
    """Mean, rms and shear-stress profiles.

    ``fields``: ``(n_samples, n_comp, *spatial)``. ``homogeneous_axes`` index the
    spatial axes (0-based) that are averaged together with the sample axis;
    exactly one spatial axis must remain.
    """
    u = _arr(fields)
    if u.ndim < 3:
        raise ContractError("fields must be (n_samples, n_comp, *spatial)")
    if u.shape[0] < 2:
        raise ContractError("profiles need at least 2 samples")
    n_sp = u.ndim - 2
    hom = sorted({int(a) % n_sp for a in homogeneous_axes})
    remaining = [a for a in range(n_sp) if a not in hom]
    if len(remaining) != 1:
        raise ContractError(f"exactly one non-averaged spatial axis required, got {len(remaining)}")
    axes = (0,) + tuple(2 + a for a in hom)
    mean = u.mean(axis=axes, keepdims=True)
    f = u - mean
    var = (f**2).mean(axis=axes)
    prof_shape = (u.shape[1], u.shape[2 + remaining[0]])
    mean_p = mean.reshape(prof_shape)
    rms_p = np.sqrt(var).reshape(prof_shape)
    if u.shape[1] >= 2:
        stress = (f[:, 0:1] * f[:, 1:2]).mean(axis=axes).reshape(-1)
    else:
        stress = np.zeros(prof_shape[1])
    coord = np.arange(prof_shape[1], dtype=float) if coordinate is None else np.asarray(coordinate, dtype=float)
    return ProfileSet(coord, mean_p, rms_p, stress, u.shape[0])


def wall_units(profile: ProfileSet, nu: float, component: int = 0):
    """Friction velocity from the wall gradient of the mean profile at ``coordinate[0]``.

    Returns ``(u_tau, y_plus, u_plus)``.
    """
    y = profile.coordinate - profile.coordinate[0]
    u = profile.mean[component]
    dudy = abs((u[1] - u[0]) / (y[1] - y[0]))
    u_tau = np.sqrt(nu * dudy)
    return u_tau, y * u_tau / nu, u / u_tau


def write_csv(path: str | Path, columns: Mapping[str, Sequence[float]]) -> Path:
    """One header line, then rows; column order is the mapping's insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = [np.asarray(columns[c]).ravel() for c in names]
    rows = max((len(d) for d in data), default=0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(rows):
            w.writerow([repr(float(d[i])) if i < len(d) else "" for d in data])
    return path
