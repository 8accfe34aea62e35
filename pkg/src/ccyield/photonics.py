"""Frequency responses of lossless photonic filters and spectral metrics.

Frequencies are in GHz relative to the band centre. Responses cover exactly
one free spectral range, [-FSR/2, FSR/2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C_LIGHT = 299_792_458.0
RING_RADIUS = 10e-6
RING_NG = 4.19
RING_NEFF = 2.44
RING_FSR_GHZ = C_LIGHT / (RING_NG * 2 * np.pi * RING_RADIUS) / 1e9
MZI_FSR_GHZ = 1000.0
MZI_GAP_DECAY_NM = 260.0


class MetricError(ValueError):
    """A spectrum violates a metric's preconditions."""


@dataclass(frozen=True)
class SpectralResponse:
    """Port power transmissions on a frequency grid (GHz)."""

    freq: np.ndarray
    through: np.ndarray
    drop: np.ndarray
    fsr: float

    def port(self, name: str) -> np.ndarray:
        if name in ("drop", "cross"):
            return self.drop
        if name in ("through", "bar"):
            return self.through
        raise KeyError(name)


def frequency_grid(fsr: float, n_points: int = 2001) -> np.ndarray:
    """n_points spanning exactly one FSR, symmetric about zero."""
    half = (n_points - 1) // 2
    k = np.arange(-half, n_points - half)
    return k * (fsr / (n_points - 1))


def coupler(kappa: float) -> np.ndarray:
    """Lossless symmetric 2x2 coupler [[t, i k], [i k, t]]."""
    t = np.sqrt(1.0 - kappa * kappa)
    return np.array([[t, 1j * kappa], [1j * kappa, t]])


# ---------------------------------------------------------------- rings


def ring_field_transfer(kappas: np.ndarray, freq: np.ndarray, fsr: float = RING_FSR_GHZ):
    """Complex through and drop fields of serially coupled identical rings.

    ``kappas`` holds the n+1 field coupling coefficients of n rings, bus to
    bus. Each coupler maps its (upper-in, upper-out) fields to (lower-out,
    lower-in); each ring contributes half a round trip in each direction.
    """
    kappas = np.asarray(kappas, dtype=float)
    theta = 2.0 * np.pi * np.asarray(freq, dtype=float) / fsr
    half = np.exp(-0.5j * theta)
    nf = theta.size
    # T[f] as 2x2 stack, start from the first coupler
    T = np.broadcast_to(_coupler_transfer(kappas[0]), (nf, 2, 2)).copy()
    for kap in kappas[1:]:
        Q = np.zeros((nf, 2, 2), dtype=complex)
        Q[:, 0, 0] = half
        Q[:, 1, 1] = 1.0 / half
        T = _coupler_transfer(kap)[None] @ (Q @ T)
    through = -T[:, 1, 0] / T[:, 1, 1]
    drop = T[:, 0, 0] + T[:, 0, 1] * through
    return through, drop


def _coupler_transfer(kappa: float) -> np.ndarray:
    t = np.sqrt(1.0 - kappa * kappa)
    return np.array([[-1.0, t], [-t, 1.0]]) / (1j * kappa)


def ring_field_oracle(kappas: np.ndarray, f: float, fsr: float = RING_FSR_GHZ):
    """Same fields as :func:`ring_field_transfer` from one direct linear solve.

    Unknowns are the four port fields of every coupler (upper-in, upper-out,
    lower-in, lower-out); equations are the coupler scattering relations,
    half-ring propagation between neighbouring couplers, unit input and zero
    add-port input.
    """
    kappas = np.asarray(kappas, dtype=float)
    nc = kappas.size
    half = np.exp(-0.5j * 2 * np.pi * f / fsr)
    n = 4 * nc
    A = np.zeros((n, n), dtype=complex)
    b = np.zeros(n, dtype=complex)
    ui, uo, li, lo = (lambda j: 4 * j), (lambda j: 4 * j + 1), (lambda j: 4 * j + 2), (lambda j: 4 * j + 3)
    row = 0
    for j, kap in enumerate(kappas):
        t = np.sqrt(1 - kap * kap)
        # upper_out = t upper_in + i k lower_in
        A[row, uo(j)] = 1
        A[row, ui(j)] = -t
        A[row, li(j)] = -1j * kap
        row += 1
        # lower_out = i k upper_in + t lower_in
        A[row, lo(j)] = 1
        A[row, ui(j)] = -1j * kap
        A[row, li(j)] = -t
        row += 1
    for j in range(nc - 1):
        # ring j sits between coupler j (its upper side) and coupler j+1
        A[row, ui(j + 1)] = 1
        A[row, lo(j)] = -half
        row += 1
        A[row, li(j)] = 1
        A[row, uo(j + 1)] = -half
        row += 1
    A[row, ui(0)] = 1
    b[row] = 1
    row += 1
    A[row, li(nc - 1)] = 1
    row += 1
    sol = np.linalg.solve(A, b)
    return sol[uo(0)], sol[lo(nc - 1)]


def microring_response(
    kappas: np.ndarray, n_points: int = 2001, fsr: float = RING_FSR_GHZ
) -> SpectralResponse:
    freq = frequency_grid(fsr, n_points)
    through, drop = ring_field_transfer(kappas, freq, fsr)
    return SpectralResponse(freq, np.abs(through) ** 2, np.abs(drop) ** 2, fsr)


# ---------------------------------------------------------------- MZI lattice


def gap_to_kappa(gap_nm):
    return np.exp(-np.asarray(gap_nm, dtype=float) / MZI_GAP_DECAY_NM)


def mzi_field_transfer(kappas: np.ndarray, freq: np.ndarray, fsr: float = MZI_FSR_GHZ) -> np.ndarray:
    """2x2 lattice transfer C(k_n) D C(k_{n-1}) ... D C(k_1) per frequency, shape (nf, 2, 2)."""
    phi = 2.0 * np.pi * np.asarray(freq, dtype=float) / fsr
    nf = phi.size
    H = np.broadcast_to(coupler(kappas[0]), (nf, 2, 2)).astype(complex)
    for kap in kappas[1:]:
        D = np.zeros((nf, 2, 2), dtype=complex)
        D[:, 0, 0] = np.exp(1j * phi)
        D[:, 1, 1] = 1.0
        H = coupler(kap)[None] @ (D @ H)
    return H


def mzi_response(kappas: np.ndarray, n_points: int = 2001, fsr: float = MZI_FSR_GHZ) -> SpectralResponse:
    freq = frequency_grid(fsr, n_points)
    H = mzi_field_transfer(kappas, freq, fsr)
    cross = np.abs(H[:, 1, 0]) ** 2
    bar = np.abs(H[:, 0, 0]) ** 2
    return SpectralResponse(freq, bar, cross, fsr)


# ---------------------------------------------------------------- metrics


def to_db(power: np.ndarray) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(power, 1e-300))


def _peak_index(power: np.ndarray, freq: np.ndarray, ties: str) -> int:
    top = power.max()
    tied = np.flatnonzero(power >= top * (1 - 1e-12))
    if tied.size > 1 and np.any(np.diff(tied) > 1):
        # several separate maxima; they only conflict if a >3 dB dip separates them
        level = top * 10 ** (-0.3)
        groups = _contiguous_groups(np.flatnonzero(power >= level))
        owners = {g for i in tied for g, grp in enumerate(groups) if grp[0] <= i <= grp[-1]}
        if len(owners) > 1:
            if ties == "error":
                raise MetricError("response has several equal global maxima in separate bands")
            return int(tied[np.argmin(np.abs(freq[tied]))])
    if tied.size > 1:
        return int(tied[np.argmin(np.abs(freq[tied]))])
    # a nearly flat top can hide its true maximum between grid points, so
    # near-top local maxima compete on their refined values
    db = to_db(power)
    inner = np.flatnonzero((db[1:-1] >= db[:-2]) & (db[1:-1] >= db[2:])) + 1
    inner = inner[db[inner] >= db[tied[0]] - 0.1]
    if inner.size > 1:
        return int(max(inner, key=lambda i: _refined_max(db, i)[1]))
    return int(tied[0])


def _contiguous_groups(idx: np.ndarray) -> list[np.ndarray]:
    if idx.size == 0:
        return []
    return np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)


def passband(response: SpectralResponse, port: str = "drop", ties: str = "error"):
    """3 dB band around the global peak: (f_low, f_high, i_low, i_high, i_peak).

    Edges are linearly interpolated in dB between the last in-band and first
    out-of-band grid points. ``ties`` decides what happens when the global
    maximum is attained in two disjoint bands: "error" or "center" (take the
    one nearest zero frequency).
    """
    power = response.port(port)
    freq = response.freq
    db = to_db(power)
    n = freq.size
    peak = _peak_index(power, freq, ties)
    level = db[peak] - 3.0
    if np.all(db >= level):
        return freq[0], freq[-1], 0, n - 1, peak
    if peak == 0 or peak == n - 1:
        raise MetricError("peak lies on the grid boundary; centre the grid on the passband")
    i_lo = peak
    while i_lo > 0 and db[i_lo - 1] >= level:
        i_lo -= 1
    i_hi = peak
    while i_hi < n - 1 and db[i_hi + 1] >= level:
        i_hi += 1
    f_lo = freq[0] if i_lo == 0 else _cross(freq[i_lo - 1], freq[i_lo], db[i_lo - 1], db[i_lo], level)
    f_hi = freq[-1] if i_hi == n - 1 else _cross(freq[i_hi], freq[i_hi + 1], db[i_hi], db[i_hi + 1], level)
    return f_lo, f_hi, i_lo, i_hi, peak


def _cross(f0, f1, y0, y1, level):
    return f0 + (level - y0) * (f1 - f0) / (y1 - y0)


def bandwidth_3db(response: SpectralResponse, port: str = "drop", ties: str = "error") -> float:
    f_lo, f_hi, *_ = passband(response, port, ties)
    return float(f_hi - f_lo)


def _refined_max(db: np.ndarray, i: int) -> tuple[float, float]:
    """Offset (in grid steps) and value of a sampled local maximum, refined by a parabola."""
    if 0 < i < db.size - 1:
        y0, y1, y2 = db[i - 1], db[i], db[i + 1]
        curv = y0 - 2.0 * y1 + y2
        if y1 >= y0 and y1 >= y2 and curv < 0:
            return float(0.5 * (y0 - y2) / curv), float(y1 - (y0 - y2) ** 2 / (8.0 * curv))
    return 0.0, float(db[i])


def _peak_db(response: SpectralResponse, db: np.ndarray, peak: int) -> tuple[float, float]:
    """Refined frequency and dB value of the peak at grid index ``peak``."""
    shift, value = _refined_max(db, peak)
    f = response.freq
    return float(f[peak] + shift * (f[1] - f[0])), value


def _stopband(response: SpectralResponse, f_peak: float) -> np.ndarray:
    d = np.abs(response.freq - f_peak) % response.fsr
    d = np.minimum(d, response.fsr - d)
    mask = d >= response.fsr / 4
    if not mask.any():
        raise MetricError("empty stopband")
    return mask


def _stopband_max_db(response: SpectralResponse, db: np.ndarray, f_peak: float) -> float:
    """Largest dB in the stopband, including the interpolated values at its two edges.

    The stopband starts FSR/4 from the refined peak frequency, so its edges
    do not jump with the grid step. An interior maximum is refined like the
    peak.
    """
    mask = _stopband(response, f_peak)
    idx = np.flatnonzero(mask)
    j = int(idx[np.argmax(db[idx])])
    inner = 0 < j < db.size - 1 and mask[j - 1] and mask[j + 1]
    top = _refined_max(db, j)[1] if inner else float(db[j])
    f, fsr = response.freq, response.fsr
    for edge in (f_peak - fsr / 4, f_peak + fsr / 4):
        e = (edge - f[0]) % fsr + f[0]
        if f[0] <= e <= f[-1]:
            top = max(top, float(np.interp(e, f, db)))
    return float(top)


def extinction_ratio(response: SpectralResponse, port: str = "drop", ties: str = "error") -> float:
    """Peak dB minus the largest dB at least FSR/4 away from the peak."""
    db = to_db(response.port(port))
    peak = _peak_index(response.port(port), response.freq, ties)
    f_peak, top = _peak_db(response, db, peak)
    return float(top - _stopband_max_db(response, db, f_peak))


def roughness(response: SpectralResponse, port: str = "drop", ties: str = "error") -> float:
    """Standard deviation of the dB transmission across the 3 dB passband.

    The band is treated as a continuum and integrated with the trapezoid
    rule out to the interpolated band edges. The stretch between the last
    in-band sample and each edge is extrapolated with the in-band slope
    (clamped to the 3 dB window), so smooth spectra are insensitive to the
    grid step and an ideal flat-top band gives exactly zero.
    """
    f_lo, f_hi, i_lo, i_hi, peak = passband(response, port, ties)
    db = to_db(response.port(port))
    if f_hi <= f_lo:
        raise MetricError("empty passband")
    level, top = db[peak] - 3.0, db[peak]
    f = response.freq[i_lo : i_hi + 1]
    y = db[i_lo : i_hi + 1]
    if f.size > 1:
        s_lo = (y[1] - y[0]) / (f[1] - f[0])
        s_hi = (y[-1] - y[-2]) / (f[-1] - f[-2])
    else:
        s_lo = s_hi = 0.0
    if f_lo < f[0]:
        y_edge = float(np.clip(y[0] + s_lo * (f_lo - f[0]), level, top))
        f = np.concatenate([[f_lo], f])
        y = np.concatenate([[y_edge], y])
    if f_hi > f[-1]:
        y_edge = float(np.clip(y[-1] + s_hi * (f_hi - f[-1]), level, top))
        f = np.concatenate([f, [f_hi]])
        y = np.concatenate([y, [y_edge]])
    span = f[-1] - f[0]
    mean = np.trapezoid(y, f) / span
    var = np.trapezoid((y - mean) ** 2, f) / span
    return float(np.sqrt(max(var, 0.0)))


def crosstalk(response: SpectralResponse, port: str = "cross", ties: str = "error") -> float:
    """Largest cross-port dB at least FSR/4 from the peak."""
    peak = _peak_index(response.port(port), response.freq, ties)
    db = to_db(response.port(port))
    return float(_stopband_max_db(response, db, _peak_db(response, db, peak)[0]))


def attenuation(response: SpectralResponse, port: str = "cross") -> float:
    """Loss of the peak transmission in dB (positive)."""
    db = to_db(response.port(port))
    return float(-_refined_max(db, int(np.argmax(db)))[1])
