"""Batch-level stochastic augmenters and their manager.

All augmenters share one contract: they take a :class:`Batch`, decide
per sample (Bernoulli with the stage's ``prob``) whether to touch it,
and never change tensor shapes.  Randomness is derived from a single
seed through counter-based (Philox) streams keyed by stage index and
sample index, so results do not depend on evaluation order and each
sample can be reproduced in isolation.

Label smoothing, when configured, always runs last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .sigproc import resample as _linear_resample

_MASK64 = (1 << 64) - 1
_MANAGER_SLOT = 0  # sample slot reserved for stage-ordering draws


@dataclass
class Batch:
    """Aligned sample tensors: signals [B, L, T], labels [B, K] or [B, T, K]."""

    signals: np.ndarray
    labels: np.ndarray
    extra: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.extra = [np.asarray(t) for t in self.extra]
        if self.signals.ndim != 3:
            raise ConfigError(f"signals must be [batch, lead, time], got ndim={self.signals.ndim}")
        if self.labels.ndim not in (2, 3):
            raise ConfigError(f"labels must be [B, K] or [B, T, K], got ndim={self.labels.ndim}")
        b = self.signals.shape[0]
        for name, arr in [("labels", self.labels)] + [(f"extra[{i}]", t) for i, t in enumerate(self.extra)]:
            if arr.shape[0] != b:
                raise ConfigError(f"{name} leading dimension {arr.shape[0]} != batch size {b}")
        if not (np.all(np.isfinite(self.signals)) and np.all(np.isfinite(self.labels))):
            raise ConfigError("batch contains non-finite values")

    @property
    def size(self) -> int:
        return self.signals.shape[0]

    def copy(self) -> "Batch":
        return Batch(self.signals.copy(), self.labels.copy(), [t.copy() for t in self.extra])


def sample_stream(seed: int, stage_idx: int, sample_idx: int) -> np.random.Generator:
    """Independent Philox stream for one (stage, sample) pair."""
    key = np.array(
        [seed & _MASK64, (((stage_idx + 1) << 32) | (sample_idx + 1)) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _manager_stream(seed: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, _MANAGER_SLOT], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _selected(stream: np.random.Generator, prob: float) -> bool:
    return stream.uniform() < prob


# --- deterministic cores (take explicit draws; used by the stochastic ops) ---

def mixup_apply(batch: Batch, selected, alphas, partners) -> Batch:
    """x_i <- a*x_i + (1-a)*x_j and y_i likewise, for each selected i."""
    out = batch.copy()
    src = batch  # partners always read pre-stage data
    for i in range(batch.size):
        if not selected[i]:
            continue
        a, j = float(alphas[i]), int(partners[i])
        out.signals[i] = a * src.signals[i] + (1 - a) * src.signals[j]
        out.labels[i] = a * src.labels[i] + (1 - a) * src.labels[j]
    return out


def cutmix_apply(batch: Batch, selected, alphas, partners, starts) -> Batch:
    """Splice a contiguous segment from the partner; blend labels with the
    realized self-proportion (exact ones-count over T)."""
    out = batch.copy()
    src = batch
    t = batch.signals.shape[2]
    seg_labels = batch.labels.ndim == 3
    for i in range(batch.size):
        if not selected[i]:
            continue
        a, j = float(alphas[i]), int(partners[i])
        ones = int(math.floor(a * t + 0.5))
        cut = t - ones
        if cut == 0:
            continue
        s = int(starts[i])
        out.signals[i, :, s : s + cut] = src.signals[j, :, s : s + cut]
        if seg_labels:
            out.labels[i, s : s + cut, :] = src.labels[j, s : s + cut, :]
        else:
            a_hat = ones / t
            out.labels[i] = a_hat * src.labels[i] + (1 - a_hat) * src.labels[j]
    return out


def cutmix_ones(alpha: float, t: int) -> int:
    """Number of self samples kept by cutmix for a given draw."""
    return int(math.floor(alpha * t + 0.5))


def _draw_partner(stream: np.random.Generator, i: int, b: int) -> int:
    j = int(stream.integers(0, b - 1))
    return j + 1 if j >= i else j


# --- stochastic operations ----------------------------------------------------

def mixup(batch: Batch, beta_a: float, beta_b: float, prob: float, seed: int,
          stage_idx: int = 0) -> Batch:
    b = batch.size
    if b < 2:
        return batch.copy()
    selected = np.zeros(b, dtype=bool)
    alphas = np.ones(b)
    partners = np.zeros(b, dtype=int)
    for i in range(b):
        st = sample_stream(seed, stage_idx, i)
        if _selected(st, prob):
            selected[i] = True
            alphas[i] = st.beta(beta_a, beta_b)
            partners[i] = _draw_partner(st, i, b)
    return mixup_apply(batch, selected, alphas, partners)


def cutmix(batch: Batch, beta_a: float, beta_b: float, prob: float, seed: int,
           stage_idx: int = 0) -> Batch:
    b, _, t = batch.signals.shape
    if b < 2:
        return batch.copy()
    selected = np.zeros(b, dtype=bool)
    alphas = np.ones(b)
    partners = np.zeros(b, dtype=int)
    starts = np.zeros(b, dtype=int)
    for i in range(b):
        st = sample_stream(seed, stage_idx, i)
        if _selected(st, prob):
            selected[i] = True
            alphas[i] = st.beta(beta_a, beta_b)
            partners[i] = _draw_partner(st, i, b)
            cut = t - cutmix_ones(alphas[i], t)
            starts[i] = int(st.integers(0, t - cut + 1)) if cut > 0 else 0
    return cutmix_apply(batch, selected, alphas, partners, starts)


def random_flip(batch: Batch, prob: float, seed: int, stage_idx: int = 0) -> Batch:
    out = batch.copy()
    for i in range(batch.size):
        st = sample_stream(seed, stage_idx, i)
        if _selected(st, prob):
            out.signals[i] = -out.signals[i]
    return out


def add_gaussian_noise(batch: Batch, sigma_rel: float, prob: float, seed: int,
                       stage_idx: int = 0) -> Batch:
    out = batch.copy()
    n_lead, t = batch.signals.shape[1:]
    for i in range(batch.size):
        st = sample_stream(seed, stage_idx, i)
        if _selected(st, prob):
            sigma = sigma_rel * batch.signals[i].std(axis=-1)
            out.signals[i] += st.normal(size=(n_lead, t)) * sigma[:, np.newaxis]
    return out


def add_sine_noise(batch: Batch, amp_rel: float, freq_range, prob: float, seed: int,
                   fs: float, stage_idx: int = 0) -> Batch:
    lo, hi = freq_range
    if not (0 < lo <= hi):
        raise ConfigError(f"bad sine frequency range {freq_range}")
    out = batch.copy()
    n_lead, t = batch.signals.shape[1:]
    tgrid = np.arange(t) / fs
    for i in range(batch.size):
        st = sample_stream(seed, stage_idx, i)
        if _selected(st, prob):
            for lead in range(n_lead):
                amp = amp_rel * batch.signals[i, lead].std()
                freq = st.uniform(lo, hi)
                phase = st.uniform(0.0, 2 * np.pi)
                out.signals[i, lead] += amp * np.sin(2 * np.pi * freq * tgrid + phase)
    return out


def random_mask(batch: Batch, window_s: float, n_windows: int, fill: float,
                critical_points, pad_s: float, prob: float, seed: int, fs: float,
                stage_idx: int = 0) -> Batch:
    """Zero (or ``fill``) out ``n_windows`` windows per selected sample.

    Without critical points, window starts are uniform.  With them, each
    window is centered on a randomly chosen point and enlarged by
    ``pad_s`` on each side.  Windows are clipped at the boundaries.
    """
    out = batch.copy()
    t = batch.signals.shape[2]
    window = int(round(window_s * fs))
    pad = int(round(pad_s * fs))
    for i in range(batch.size):
        st = sample_stream(seed, stage_idx, i)
        if not _selected(st, prob) or n_windows == 0 or window <= 0:
            continue
        points = None if critical_points is None else list(critical_points[i])
        for _ in range(n_windows):
            if points is not None:
                if not points:
                    break
                center = int(points[int(st.integers(0, len(points)))])
                span = window + 2 * pad
                start = center - window // 2 - pad
            else:
                span = window
                start = int(st.integers(0, max(t - span, 0) + 1))
            a, b = max(start, 0), min(start + span, t)
            if a < b:
                out.signals[i, :, a:b] = fill
    return out


def stretch_compress(batch: Batch, ratio_range, prob: float, seed: int,
                     stage_idx: int = 0) -> Batch:
    """Time-scale selected samples by a log-uniform ratio, then crop or
    zero-pad symmetrically back to the original length."""
    lo, hi = ratio_range
    if not (0 < lo <= hi):
        raise ConfigError(f"bad stretch ratio range {ratio_range}")
    out = batch.copy()
    t = batch.signals.shape[2]
    seg_labels = batch.labels.ndim == 3
    for i in range(batch.size):
        st = sample_stream(seed, stage_idx, i)
        if not _selected(st, prob):
            continue
        ratio = math.exp(st.uniform(math.log(lo), math.log(hi)))
        new_len = int(round(t * ratio))
        if new_len == t or new_len < 2:
            continue
        scaled, _ = _linear_resample(batch.signals[i], 1.0, new_len / t)
        out.signals[i] = _fit_to_length(scaled, t)
        if seg_labels:
            pos = np.arange(new_len) * (t / new_len)
            idx = np.clip(np.rint(pos).astype(int), 0, t - 1)
            scaled_labels = batch.labels[i][idx, :]  # nearest neighbor
            out.labels[i] = _fit_to_length(scaled_labels.T, t).T
    return out


def _fit_to_length(arr: np.ndarray, t: int) -> np.ndarray:
    """Center-crop (too long) or symmetrically zero-pad (too short) along axis -1."""
    cur = arr.shape[-1]
    if cur == t:
        return arr
    if cur > t:
        off = (cur - t) // 2
        return arr[..., off : off + t]
    out = np.zeros(arr.shape[:-1] + (t,), dtype=arr.dtype)
    left = (t - cur) // 2
    out[..., left : left + cur] = arr
    return out


def label_smooth(labels: np.ndarray, epsilon: float, k: int | None = None) -> np.ndarray:
    """Soft labels: (1 - eps) * y + eps / K."""
    labels = np.asarray(labels, dtype=np.float64)
    if not (0 <= epsilon < 1):
        raise ConfigError(f"epsilon must be in [0, 1), got {epsilon}")
    kk = labels.shape[-1] if k is None else k
    return (1.0 - epsilon) * labels + epsilon / kk


# --- stages and manager -------------------------------------------------------

@dataclass
class GaussianNoise:
    sigma_rel: float = 0.05
    prob: float = 0.5

    def apply(self, batch, seed, stage_idx, fs):
        return add_gaussian_noise(batch, self.sigma_rel, self.prob, seed, stage_idx)


@dataclass
class SineNoise:
    amp_rel: float = 0.05
    freq_range: tuple[float, float] = (0.01, 0.3)
    prob: float = 0.5

    def apply(self, batch, seed, stage_idx, fs):
        if fs is None:
            raise ConfigError("sine_noise needs the batch sampling frequency")
        return add_sine_noise(batch, self.amp_rel, self.freq_range, self.prob, seed, fs, stage_idx)


@dataclass
class RandomFlip:
    prob: float = 0.5

    def apply(self, batch, seed, stage_idx, fs):
        return random_flip(batch, self.prob, seed, stage_idx)


@dataclass
class Mixup:
    beta_a: float = 0.5
    beta_b: float = 0.5
    prob: float = 0.5

    def __post_init__(self):
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise ConfigError("Beta shape parameters must be positive")

    def apply(self, batch, seed, stage_idx, fs):
        return mixup(batch, self.beta_a, self.beta_b, self.prob, seed, stage_idx)


@dataclass
class CutMix:
    beta_a: float = 0.5
    beta_b: float = 0.5
    prob: float = 0.5

    def __post_init__(self):
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise ConfigError("Beta shape parameters must be positive")

    def apply(self, batch, seed, stage_idx, fs):
        return cutmix(batch, self.beta_a, self.beta_b, self.prob, seed, stage_idx)


@dataclass
class Mask:
    window_s: float = 0.2
    n_windows: int = 1
    fill: float = 0.0
    pad_s: float = 0.0
    critical_points: list | None = None  # runtime data, not serialized
    prob: float = 0.5

    def apply(self, batch, seed, stage_idx, fs):
        if fs is None:
            raise ConfigError("mask needs the batch sampling frequency")
        return random_mask(batch, self.window_s, self.n_windows, self.fill,
                           self.critical_points, self.pad_s, self.prob, seed, fs, stage_idx)


@dataclass
class Stretch:
    ratio_range: tuple[float, float] = (0.8, 1.25)
    prob: float = 0.5

    def apply(self, batch, seed, stage_idx, fs):
        return stretch_compress(batch, self.ratio_range, self.prob, seed, stage_idx)


@dataclass
class LabelSmooth:
    epsilon: float = 0.1
    k: int | None = None
    prob: float = 1.0

    def __post_init__(self):
        if not (0 <= self.epsilon < 1):
            raise ConfigError(f"epsilon must be in [0, 1), got {self.epsilon}")

    def apply(self, batch, seed, stage_idx, fs):
        out = batch.copy()
        smoothed = label_smooth(batch.labels, self.epsilon, self.k)
        for i in range(batch.size):
            st = sample_stream(seed, stage_idx, i)
            if _selected(st, self.prob):
                out.labels[i] = smoothed[i]
        return out


AugmentStage = (GaussianNoise | SineNoise | RandomFlip | Mixup | CutMix
                | Mask | Stretch | LabelSmooth)

_STAGE_NAMES = {
    GaussianNoise: "gaussian_noise",
    SineNoise: "sine_noise",
    RandomFlip: "random_flip",
    Mixup: "mixup",
    CutMix: "cutmix",
    Mask: "mask",
    Stretch: "stretch",
    LabelSmooth: "label_smooth",
}


def stage_name(stage) -> str:
    return _STAGE_NAMES[type(stage)]


@dataclass
class AugmentConfig:
    stages: list[AugmentStage] = field(default_factory=list)
    random_order: bool = False


def augment_config_from_dict(doc: dict) -> AugmentConfig:
    """Parse the JSON form {"random_order": bool, "stages": [{"type": ..., "prob": p, ...}]}."""
    if not isinstance(doc, dict):
        raise ConfigError("augmentation config must be a JSON object")
    by_name = {v: k for k, v in _STAGE_NAMES.items()}
    stages = []
    for i, raw in enumerate(doc.get("stages", [])):
        kind = raw.get("type")
        if kind not in by_name:
            raise ConfigError(f"stage {i}: unknown stage type {kind!r}")
        params = {k: v for k, v in raw.items() if k != "type"}
        for tup_key in ("freq_range", "ratio_range"):
            if tup_key in params:
                params[tup_key] = tuple(params[tup_key])
        try:
            stage = by_name[kind](**params)
            if not (0 <= stage.prob <= 1):
                raise ConfigError(f"prob must be in [0, 1], got {stage.prob}")
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"stage {i}: {exc}") from None
        stages.append(stage)
    return AugmentConfig(stages=stages, random_order=bool(doc.get("random_order", False)))


def augment_config_to_dict(config: AugmentConfig) -> dict:
    stages = []
    for stage in config.stages:
        entry = {"type": stage_name(stage)}
        for key, value in vars(stage).items():
            if key == "critical_points":
                continue
            entry[key] = list(value) if isinstance(value, tuple) else value
        stages.append(entry)
    return {"random_order": config.random_order, "stages": stages}


def run_augment(batch: Batch, config: AugmentConfig, seed: int,
                fs: float | None = None) -> Batch:
    """Apply all stages in (optionally shuffled) order; label smoothing last.

    Fully deterministic given ``seed``; an empty config returns the batch
    unchanged.
    """
    if not config.stages:
        return batch.copy()
    regular = [i for i, s in enumerate(config.stages) if not isinstance(s, LabelSmooth)]
    smoothing = [i for i, s in enumerate(config.stages) if isinstance(s, LabelSmooth)]
    if config.random_order and len(regular) > 1:
        perm = _manager_stream(seed).permutation(len(regular))
        regular = [regular[p] for p in perm]
    for idx in regular + smoothing:
        batch = config.stages[idx].apply(batch, seed, idx, fs)
    return batch
