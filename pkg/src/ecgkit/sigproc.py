"""Signal preprocessing stages and their manager.

Every stage is a pure function ``(signal [L, T], fs) -> (signal, fs)``;
only resampling may change the length or the sampling frequency.  A
:class:`PreprocConfig` lists stages in order, optionally shuffled by a
seeded permutation, and :func:`run_preproc` applies them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal as _scipy_signal

from .errors import (
    ConfigError,
    DegenerateSignal,
    InvalidBand,
    SignalTooShort,
    UnstableSection,
    WindowTooLarge,
)

NORMALIZE_KINDS = ("naive", "z_score", "min_max")


def _as2d(sig) -> tuple[np.ndarray, bool]:
    arr = np.asarray(sig, dtype=np.float64)
    if arr.ndim == 1:
        return arr[np.newaxis, :], True
    if arr.ndim != 2:
        raise ConfigError(f"expected a [lead, time] matrix, got ndim={arr.ndim}")
    return arr, False


def _restore(arr: np.ndarray, was1d: bool) -> np.ndarray:
    return arr[0] if was1d else arr


def resample(sig, fs_in: float, fs_out: float) -> tuple[np.ndarray, float]:
    """Linear-interpolation resampling to ``fs_out``.

    Output length is ``round(T * fs_out / fs_in)``; sample k is taken at
    input position ``k * fs_in / fs_out`` and the grid is clamped to the
    last input sample.
    """
    if fs_in <= 0 or fs_out <= 0:
        raise ConfigError("sampling frequencies must be positive")
    arr, was1d = _as2d(sig)
    t = arr.shape[1]
    if t < 2:
        raise DegenerateSignal(f"cannot resample a signal of length {t}")
    if fs_out == fs_in:
        return _restore(arr.copy(), was1d), fs_in
    out_len = int(round(t * fs_out / fs_in))
    pos = np.arange(out_len) * (fs_in / fs_out)
    grid = np.arange(t, dtype=np.float64)
    out = np.empty((arr.shape[0], out_len), dtype=np.float64)
    for i in range(arr.shape[0]):
        out[i] = np.interp(pos, grid, arr[i])
    return _restore(out, was1d), fs_out


def design_fir_bandpass(fs: float, low: float, high: float, taps: int) -> np.ndarray:
    """Hamming-windowed sinc-difference band-pass coefficients.

    Both component lowpasses are normalized to unit DC gain before
    differencing, which places an exact null at DC even for very low
    cutoffs where the truncated sinc would otherwise leak.  The center
    tap is the analytic ``sinc(0)`` limit.  Coefficients are symmetric
    (linear phase).
    """
    if not (0 < low < high < fs / 2):
        raise InvalidBand(f"need 0 < low < high < fs/2, got low={low}, high={high}, fs={fs}")
    if taps < 3 or taps % 2 == 0:
        raise InvalidBand(f"taps must be odd and >= 3, got {taps}")
    m = np.arange(taps) - (taps - 1) / 2
    window = np.hamming(taps)

    def unit_lowpass(fc):
        h = (2 * fc / fs) * np.sinc(2 * fc / fs * m) * window
        return h / h.sum()

    return unit_lowpass(high) - unit_lowpass(low)


def default_fir_taps(fs: float) -> int:
    """Default tap count: round(fs) + 1, forced odd."""
    taps = int(round(fs)) + 1
    return taps + 1 if taps % 2 == 0 else taps


def _fir_zero_phase_pass(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    pad = len(b) - 1
    xp = np.concatenate([x[1 : pad + 1][::-1], x, x[-2 : -pad - 2 : -1]])
    y = np.convolve(xp, b, mode="valid")
    d = pad // 2
    return y[d : d + len(x)]


def filtfilt(sig, taps) -> np.ndarray:
    """Forward-backward FIR filtering with mirror edge padding (zero phase)."""
    b = np.asarray(taps, dtype=np.float64)
    if b.ndim != 1 or len(b) < 1 or len(b) % 2 == 0:
        raise InvalidBand("taps must be a 1-D odd-length coefficient vector")
    arr, was1d = _as2d(sig)
    if arr.shape[1] <= 3 * len(b):
        raise SignalTooShort(
            f"signal length {arr.shape[1]} must exceed 3 x taps ({3 * len(b)})"
        )
    out = np.empty_like(arr)
    for i in range(arr.shape[0]):
        fwd = _fir_zero_phase_pass(arr[i], b)
        out[i] = _fir_zero_phase_pass(fwd[::-1], b)[::-1]
    return _restore(out, was1d)


def butterworth_bandpass(order: int, low: float, high: float, fs: float) -> np.ndarray:
    """Design a Butterworth band-pass as second-order sections.

    Analog prototype -> band transform -> bilinear transform with
    frequency pre-warping (scipy).  Every pole must sit strictly inside
    the unit circle.
    """
    if not (0 < low < high < fs / 2):
        raise InvalidBand(f"need 0 < low < high < fs/2, got low={low}, high={high}, fs={fs}")
    if not (1 <= order <= 8):
        raise InvalidBand(f"order must be in [1, 8], got {order}")
    sos = _scipy_signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    for section in sos:
        poles = np.roots(section[3:])
        if np.any(np.abs(poles) >= 1.0):
            raise UnstableSection(f"section {section} has a pole on/outside the unit circle")
    return sos


def apply_sos(sig, sections: np.ndarray) -> np.ndarray:
    """Apply second-order sections forward-backward (zero phase)."""
    arr, was1d = _as2d(sig)
    sos = np.asarray(sections, dtype=np.float64)
    padlen = 3 * (2 * sos.shape[0] + 1)
    if arr.shape[1] <= padlen:
        raise SignalTooShort(f"signal length {arr.shape[1]} must exceed {padlen}")
    out = _scipy_signal.sosfiltfilt(sos, arr, axis=-1)
    return _restore(np.ascontiguousarray(out), was1d)


def detrend_median(sig, window_s: float, fs: float) -> np.ndarray:
    """Subtract a running median (reflected edges) from each lead."""
    window = int(round(window_s * fs))
    if window % 2 == 0:
        window += 1
    if window < 3:
        raise ConfigError(f"median window {window_s} s at {fs} Hz is below 3 samples")
    arr, was1d = _as2d(sig)
    if window > arr.shape[1]:
        raise WindowTooLarge(f"median window {window} exceeds signal length {arr.shape[1]}")
    baseline = ndimage.median_filter(arr, size=(1, window), mode="reflect")
    return _restore(arr - baseline, was1d)


@dataclass
class NormalizeSpec:
    """Parameters of the three normalization flavors.

    naive:    (x - m) / s
    z_score:  ((x - mean(x)) / (std(x) + eps)) * s + m
    min_max:  (x - min(x)) / (max(x) - min(x) + eps)

    Statistics are computed per lead.
    """

    kind: str = "z_score"
    m: float = 0.0
    s: float = 1.0
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in NORMALIZE_KINDS:
            raise ConfigError(f"unknown normalize kind {self.kind!r}; expected one of {NORMALIZE_KINDS}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.kind == "naive" and self.s == 0:
            raise ConfigError("naive normalization needs s != 0")


def normalize(sig, spec: NormalizeSpec) -> np.ndarray:
    arr, was1d = _as2d(sig)
    if spec.kind == "naive":
        out = (arr - spec.m) / spec.s
    elif spec.kind == "z_score":
        mean = arr.mean(axis=-1, keepdims=True)
        std = arr.std(axis=-1, keepdims=True)
        out = ((arr - mean) / (std + spec.eps)) * spec.s + spec.m
    else:
        lo = arr.min(axis=-1, keepdims=True)
        hi = arr.max(axis=-1, keepdims=True)
        out = (arr - lo) / (hi - lo + spec.eps)
    return _restore(out, was1d)


# --- stages and manager ------------------------------------------------------

@dataclass
class Resample:
    fs_out: float

    def apply(self, sig, fs):
        return resample(sig, fs, self.fs_out)


@dataclass
class BandpassFir:
    low: float
    high: float
    taps: int | None = None  # None -> default_fir_taps(fs)

    def apply(self, sig, fs):
        taps = self.taps if self.taps is not None else default_fir_taps(fs)
        return filtfilt(sig, design_fir_bandpass(fs, self.low, self.high, taps)), fs


@dataclass
class BandpassButter:
    low: float
    high: float
    order: int = 2

    def apply(self, sig, fs):
        return apply_sos(sig, butterworth_bandpass(self.order, self.low, self.high, fs)), fs


@dataclass
class DetrendMedian:
    window_s: float = 0.6

    def apply(self, sig, fs):
        return detrend_median(sig, self.window_s, fs), fs


@dataclass
class Normalize:
    spec: NormalizeSpec = field(default_factory=NormalizeSpec)

    def apply(self, sig, fs):
        return normalize(sig, self.spec), fs


PreprocStage = Resample | BandpassFir | BandpassButter | DetrendMedian | Normalize

_STAGE_NAMES = {
    Resample: "resample",
    BandpassFir: "bandpass_fir",
    BandpassButter: "bandpass_butter",
    DetrendMedian: "detrend_median",
    Normalize: "normalize",
}


def stage_name(stage: PreprocStage) -> str:
    return _STAGE_NAMES[type(stage)]


@dataclass
class PreprocConfig:
    stages: list[PreprocStage] = field(default_factory=list)
    random_order: bool = False

    def __post_init__(self):
        n_resample = sum(isinstance(s, Resample) for s in self.stages)
        if n_resample > 1:
            raise ConfigError(f"at most one resample stage allowed, found {n_resample}")


def preproc_config_from_dict(doc: dict) -> PreprocConfig:
    """Parse the JSON form {"random_order": bool, "stages": [{"type": ..., ...}]}."""
    if not isinstance(doc, dict):
        raise ConfigError("preprocessing config must be a JSON object")
    stages = []
    for i, raw in enumerate(doc.get("stages", [])):
        try:
            stages.append(_stage_from_dict(raw))
        except (ConfigError, InvalidBand, TypeError, KeyError) as exc:
            raise ConfigError(f"stage {i}: {exc}") from None
    return PreprocConfig(stages=stages, random_order=bool(doc.get("random_order", False)))


def _stage_from_dict(raw: dict) -> PreprocStage:
    kind = raw.get("type")
    params = {k: v for k, v in raw.items() if k != "type"}
    if kind == "resample":
        return Resample(**params)
    if kind == "bandpass_fir":
        return BandpassFir(**params)
    if kind == "bandpass_butter":
        return BandpassButter(**params)
    if kind == "detrend_median":
        return DetrendMedian(**params)
    if kind == "normalize":
        return Normalize(spec=NormalizeSpec(**params))
    raise ConfigError(f"unknown stage type {kind!r}")


def preproc_config_to_dict(config: PreprocConfig) -> dict:
    stages = []
    for stage in config.stages:
        entry: dict = {"type": stage_name(stage)}
        if isinstance(stage, Normalize):
            entry.update(kind=stage.spec.kind, m=stage.spec.m, s=stage.spec.s, eps=stage.spec.eps)
        else:
            entry.update(vars(stage))
        stages.append(entry)
    return {"random_order": config.random_order, "stages": stages}


def run_preproc(sig, fs: float, config: PreprocConfig, seed: int | None = None):
    """Apply all stages; with ``random_order`` the order is a seeded permutation."""
    out, fs_out, _ = run_preproc_timed(sig, fs, config, seed)
    return out, fs_out


def run_preproc_timed(sig, fs: float, config: PreprocConfig, seed: int | None = None):
    """Like :func:`run_preproc` but also returns [(stage_name, seconds), ...]."""
    arr = np.asarray(sig, dtype=np.float64)
    if not config.stages:
        return arr.copy(), fs, []
    order = list(range(len(config.stages)))
    if config.random_order:
        order = list(np.random.default_rng(seed).permutation(len(order)))
    timings = []
    for idx in order:
        stage = config.stages[idx]
        t0 = time.perf_counter()
        arr, fs = stage.apply(arr, fs)
        timings.append((stage_name(stage), time.perf_counter() - t0))
    return arr, fs, timings
