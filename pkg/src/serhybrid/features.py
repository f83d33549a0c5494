"""Frame-level pitch / energy / MFCC extraction and fixed-length aggregation.

The aggregated vector has 37 dimensions, frozen in DIMENSIONS:
6 pitch statistics (over voiced frames), 5 energy statistics, and
mean + std of 13 MFCCs. A vector can be turned into a qualitative
structured description (z-scored against corpus statistics) for the
reasoning prompts.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import EmptySeries, MissingStats, SignalTooShort

UNVOICED = math.nan

SCHEMA_TAG = "serhybrid-features-v1"

N_MFCC = 13

DIMENSIONS = (
    "pitch_mean", "pitch_std", "pitch_min", "pitch_max", "pitch_range",
    "voiced_ratio",
    "energy_mean", "energy_std", "energy_min", "energy_max", "energy_range",
    *[f"mfcc{i}_mean" for i in range(N_MFCC)],
    *[f"mfcc{i}_std" for i in range(N_MFCC)],
)

DIM_INDEX = {name: i for i, name in enumerate(DIMENSIONS)}

LEVELS = ("very low", "low", "moderate", "high", "very high")

# summary lines rendered into prompts: (display name, dimension)
SUMMARY_DIMS = (
    ("pitch level", "pitch_mean"),
    ("pitch variability", "pitch_std"),
    ("energy level", "energy_mean"),
    ("energy variability", "energy_std"),
    ("voiced ratio", "voiced_ratio"),
)


def is_unvoiced(pitch):
    return math.isnan(pitch)


@dataclass(frozen=True)
class FrameSeries:
    """Per-frame streams; pitch uses UNVOICED (NaN) for aperiodic frames."""

    pitch_hz: np.ndarray
    energy_rms: np.ndarray
    mfcc: np.ndarray  # (n_frames, N_MFCC)
    frame_ms: float
    hop_ms: float

    def __post_init__(self):
        n = len(self.pitch_hz)
        if len(self.energy_rms) != n or self.mfcc.shape[0] != n:
            raise ValueError("pitch, energy and mfcc streams must have equal frame counts")


@dataclass(frozen=True)
class FeatureVector:
    """Fixed 37-dimensional feature aggregation, ordered per DIMENSIONS."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(DIMENSIONS),):
            raise ValueError(f"expected {len(DIMENSIONS)} dimensions, got {self.values.shape}")

    def __getitem__(self, name):
        return float(self.values[DIM_INDEX[name]])

    def as_dict(self):
        return {name: float(v) for name, v in zip(DIMENSIONS, self.values)}

    def to_json(self):
        return json.dumps({"schema": SCHEMA_TAG, "features": self.as_dict()})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(np.array([doc["features"][name] for name in DIMENSIONS], dtype=np.float64))


def write_features_csv(path, rows):
    """Write (sample_id, FeatureVector) pairs as CSV with a schema column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schema", "sample_id", *DIMENSIONS])
        for sample_id, vec in rows:
            writer.writerow([SCHEMA_TAG, sample_id, *[repr(float(v)) for v in vec.values]])


def read_features_csv(path):
    """Read the CSV written by write_features_csv; returns {sample_id: FeatureVector}."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["schema", "sample_id", *DIMENSIONS]
        if header != expected:
            raise ValueError(f"{path}: unexpected feature CSV header")
        for row in reader:
            out[row[1]] = FeatureVector(np.array([float(v) for v in row[2:]], dtype=np.float64))
    return out


def frame_signal(signal, frame_ms=25.0, hop_ms=10.0):
    """Slice a standardized signal into overlapping frames (unwindowed).

    Frame count is 1 + floor((N - frame_len) / hop_len). Raises
    SignalTooShort when the signal does not cover one frame.
    """
    x = np.asarray(signal.samples, dtype=np.float64)
    frame_len = int(round(frame_ms * signal.sample_rate / 1000.0))
    hop_len = int(round(hop_ms * signal.sample_rate / 1000.0))
    if len(x) < frame_len:
        raise SignalTooShort(f"signal has {len(x)} samples, frame needs {frame_len}")
    n_frames = 1 + (len(x) - frame_len) // hop_len
    idx = np.arange(frame_len)[None, :] + hop_len * np.arange(n_frames)[:, None]
    return x[idx]


def rms_energy(frame):
    """Root-mean-square of an unwindowed frame."""
    x = np.asarray(frame, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def estimate_pitch(frame, sample_rate, fmin=60.0, fmax=400.0, clarity_threshold=0.6):
    """Fundamental frequency via normalized autocorrelation.

    The lag of the highest normalized-autocorrelation peak in
    [1/fmax, 1/fmin] is refined with parabolic interpolation. Frames whose
    peak clarity falls below ``clarity_threshold`` return UNVOICED.
    """
    x = np.asarray(frame, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    if not np.any(x):
        return UNVOICED
    lag_min = max(1, int(sample_rate / fmax))
    lag_max = min(n - 1, int(math.ceil(sample_rate / fmin)))
    if lag_max <= lag_min:
        return UNVOICED
    # raw autocorrelation via FFT
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[:n]
    # normalization: r[t] / sqrt(e0[t] * e1[t]) with e0, e1 the energies of
    # the two overlapping windows of length n - t
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    lags = np.arange(n)
    e0 = csum[n - lags] - csum[0]
    e1 = csum[n] - csum[lags]
    denom = np.sqrt(e0 * e1)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.where(denom > 0, acf / denom, 0.0)
    window = norm[lag_min:lag_max + 1]
    peak_val = float(np.max(window))
    if peak_val < clarity_threshold:
        return UNVOICED
    # a periodic signal repeats at every multiple of its period, so the
    # global maximum may sit on a subharmonic; take the smallest lag that
    # is a local maximum within 10% of the peak
    near = np.flatnonzero(window >= 0.9 * peak_val)
    best = None
    for k in near:
        lag_k = k + lag_min
        if norm[lag_k] >= norm[lag_k - 1] and norm[lag_k] >= norm[min(lag_k + 1, n - 1)]:
            best = lag_k
            break
    if best is None:
        best = int(np.argmax(window)) + lag_min
    clarity = norm[best]
    if clarity < clarity_threshold:
        return UNVOICED
    # parabolic interpolation around the peak
    lag = float(best)
    if 1 <= best < n - 1:
        a, b, c = norm[best - 1], norm[best], norm[best + 1]
        denom2 = a - 2.0 * b + c
        if denom2 != 0.0:
            delta = 0.5 * (a - c) / denom2
            if abs(delta) < 1.0:
                lag = best + delta
    return sample_rate / lag


def mel_scale(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, nfft, sample_rate, fmin, fmax):
    """Triangular mel filterbank over rfft bins; shape (n_mels, nfft//2 + 1)."""
    mel_pts = np.linspace(mel_scale(fmin), mel_scale(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mfcc(frame, sample_rate, n_mels=26, n_coeffs=N_MFCC, fmin=0.0, fmax=8000.0):
    """MFCCs of a windowed frame: orthonormal DCT-II of log mel energies.

    FFT size is the next power of two >= frame length; log floor is 1e-10.
    Coefficient 0 is retained.
    """
    x = np.asarray(frame, dtype=np.float64)
    nfft = 1 << (len(x) - 1).bit_length()
    power = np.abs(np.fft.rfft(x, nfft)) ** 2
    fb = mel_filterbank(n_mels, nfft, sample_rate, fmin, fmax)
    energies = fb @ power
    log_e = np.log(np.maximum(energies, 1e-10))
    coeffs = scipy.fft.dct(log_e, type=2, norm="ortho")
    return coeffs[:n_coeffs]


def extract_series(signal, frame_ms=25.0, hop_ms=10.0, fmin=60.0, fmax=400.0,
                   clarity_threshold=0.6, n_mels=26, n_coeffs=N_MFCC):
    """Run the three frame-level extractors over a standardized signal.

    Pitch and energy see raw frames; the MFCC path applies a Hann window.
    """
    frames = frame_signal(signal, frame_ms, hop_ms)
    window = np.hanning(frames.shape[1])
    pitch = np.array([estimate_pitch(f, signal.sample_rate, fmin, fmax, clarity_threshold)
                      for f in frames])
    energy = np.sqrt(np.mean(frames * frames, axis=1))
    mfccs = np.array([mfcc(f * window, signal.sample_rate, n_mels, n_coeffs)
                      for f in frames])
    return FrameSeries(pitch_hz=pitch, energy_rms=energy, mfcc=mfccs,
                       frame_ms=frame_ms, hop_ms=hop_ms)


def aggregate(series):
    """Collapse a FrameSeries into the 37-dimensional FeatureVector.

    Pitch statistics cover voiced frames only; with zero voiced frames
    they are 0 and voiced_ratio is 0. Stds are population stds.
    """
    n = len(series.pitch_hz)
    if n == 0:
        raise EmptySeries("cannot aggregate an empty frame series")
    voiced = series.pitch_hz[~np.isnan(series.pitch_hz)]
    if voiced.size:
        p = [voiced.mean(), voiced.std(), voiced.min(), voiced.max(),
             voiced.max() - voiced.min(), voiced.size / n]
    else:
        p = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    e = series.energy_rms
    en = [e.mean(), e.std(), e.min(), e.max(), e.max() - e.min()]
    m_mean = series.mfcc.mean(axis=0)
    m_std = series.mfcc.std(axis=0)
    values = np.array([*p, *en, *m_mean, *m_std], dtype=np.float64)
    return FeatureVector(values)


@dataclass(frozen=True)
class CorpusStats:
    """Per-dimension mean/std over a reference corpus, for z-scoring.

    Dimensions with zero variance are flagged and their std clamped so
    z-scores stay finite.
    """

    mean: np.ndarray
    std: np.ndarray
    zero_variance: tuple

    @classmethod
    def from_vectors(cls, vectors):
        X = np.stack([v.values for v in vectors])
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        flagged = tuple(DIMENSIONS[i] for i in np.flatnonzero(std == 0.0))
        std = np.maximum(std, 1e-8)
        return cls(mean=mean, std=std, zero_variance=flagged)

    def z_scores(self, vector):
        return (vector.values - self.mean) / self.std

    def z_score(self, vector, dimension):
        i = DIM_INDEX[dimension]
        return float((vector.values[i] - self.mean[i]) / self.std[i])

    def to_json(self):
        return json.dumps({
            "schema": "serhybrid-stats-v1",
            "mean": {d: repr(float(v)) for d, v in zip(DIMENSIONS, self.mean)},
            "std": {d: repr(float(v)) for d, v in zip(DIMENSIONS, self.std)},
            "zero_variance": list(self.zero_variance),
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        missing = [d for d in DIMENSIONS if d not in doc["mean"] or d not in doc["std"]]
        if missing:
            raise MissingStats(f"corpus stats missing dimensions: {missing}")
        mean = np.array([float(doc["mean"][d]) for d in DIMENSIONS])
        std = np.array([float(doc["std"][d]) for d in DIMENSIONS])
        return cls(mean=mean, std=std, zero_variance=tuple(doc.get("zero_variance", ())))


def level_for_z(z):
    """Map a z-score to a qualitative level at fixed cut points."""
    if z < -1.5:
        return "very low"
    if z < -0.5:
        return "low"
    if z <= 0.5:
        return "moderate"
    if z <= 1.5:
        return "high"
    return "very high"


@dataclass(frozen=True)
class StructuredDescription:
    """Qualitative rendering of a feature vector against corpus statistics.

    ``entries`` covers all 37 dimensions; ``text`` is the deterministic
    block embedded in prompts (the five summary cues, with z-scores)."""

    entries: tuple  # of (dimension, level, z)
    text: str


def describe(vector, stats):
    """z-score ``vector`` against ``stats`` and render the summary block."""
    if stats.mean.shape != (len(DIMENSIONS),):
        raise MissingStats("corpus stats do not cover the feature schema")
    z = stats.z_scores(vector)
    entries = tuple((name, level_for_z(zi), float(zi)) for name, zi in zip(DIMENSIONS, z))
    by_name = {name: (level, zi) for name, level, zi in entries}
    lines = ["Acoustic profile of the utterance:"]
    for display, dim in SUMMARY_DIMS:
        level, zi = by_name[dim]
        lines.append(f"- {display} [{dim}]: {level} (z={zi:+.2f})")
    return StructuredDescription(entries=entries, text="\n".join(lines))
