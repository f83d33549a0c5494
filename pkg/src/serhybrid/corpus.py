"""Manifests, stratified splits, and the synthetic corpus generator.

The generator produces tone complexes, not speech: pitch and loudness
trajectories are analytically controlled per class (calm = stable and
quiet, angry = loud with raised pitch, panic = strongly modulated pitch
and energy), so feature-level ground truth is checkable. An ``overlap``
fraction of angry and panic samples is drawn from recipes blended halfway
toward the other class, which is the ambiguity dial the confidence router
is evaluated against.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import AudioSignal, save_wav
from .errors import DuplicateId, MissingGold, SchemaError
from .labels import CLASSES

MANIFEST_FIELDS = ("sample_id", "audio_path", "gold", "annotator_a",
                   "annotator_b", "annotator_c", "split", "source_kind",
                   "duration_s")

SPLITS = ("set1", "set2", "set3", "test", "unassigned")

SOURCE_KINDS = ("movie", "entertainment", "interview", "synthetic")

# default split fractions reproduce the published 706/691/696/671 sizes
# over 2,764 samples
DEFAULT_FRACTIONS = (0.2555, 0.2500, 0.2518, 0.2427)


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    audio_path: str = ""
    gold: str = None
    annotator_a: str = None
    annotator_b: str = None
    annotator_c: str = None
    split: str = "unassigned"
    source_kind: str = "synthetic"
    duration_s: float = 0.0


def _validate_entry(entry, where):
    for label in (entry.gold, entry.annotator_a, entry.annotator_b, entry.annotator_c):
        if label is not None and label not in CLASSES:
            raise SchemaError(f"{where}: unknown label {label!r}")
    if entry.split not in SPLITS:
        raise SchemaError(f"{where}: unknown split {entry.split!r}")
    if entry.source_kind not in SOURCE_KINDS:
        raise SchemaError(f"{where}: unknown source kind {entry.source_kind!r}")
    return entry


def _entry_from_dict(doc, where):
    unknown = set(doc) - set(MANIFEST_FIELDS)
    if unknown:
        raise SchemaError(f"{where}: unknown columns {sorted(unknown)}")
    if not doc.get("sample_id"):
        raise SchemaError(f"{where}: missing sample_id")
    clean = {}
    for key in MANIFEST_FIELDS:
        value = doc.get(key)
        if value == "":
            value = None
        clean[key] = value
    clean["split"] = clean["split"] or "unassigned"
    clean["source_kind"] = clean["source_kind"] or "synthetic"
    clean["audio_path"] = clean["audio_path"] or ""
    clean["duration_s"] = float(clean["duration_s"] or 0.0)
    return _validate_entry(ManifestEntry(**clean), where)


def load_manifest(path):
    """Parse a CSV or JSONL manifest; duplicate sample ids are rejected."""
    path = str(path)
    entries = []
    if path.endswith(".jsonl"):
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc})")
                entries.append(_entry_from_dict(doc, f"{path}:{lineno}"))
    else:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "sample_id" not in reader.fieldnames:
                raise SchemaError(f"{path}: missing manifest header")
            for lineno, row in enumerate(reader, 2):
                entries.append(_entry_from_dict(row, f"{path}:{lineno}"))
    seen = set()
    for entry in entries:
        if entry.sample_id in seen:
            raise DuplicateId(f"{path}: duplicate sample_id {entry.sample_id!r}")
        seen.add(entry.sample_id)
    return entries


def save_manifest(path, entries):
    path = str(path)
    if path.endswith(".jsonl"):
        with open(path, "w") as fh:
            for e in entries:
                fh.write(json.dumps({k: getattr(e, k) for k in MANIFEST_FIELDS}) + "\n")
    else:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
            writer.writeheader()
            for e in entries:
                row = {k: getattr(e, k) for k in MANIFEST_FIELDS}
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})


def _largest_remainder(n, fractions):
    """Integer allocation of n items over fractions, preserving the total."""
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    short = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def stratified_split(entries, fractions=DEFAULT_FRACTIONS, seed=0):
    """Assign set1/set2/set3/test preserving per-class proportions.

    Deterministic given the seed; every entry lands in exactly one split.
    """
    if any(e.gold is None for e in entries):
        missing = [e.sample_id for e in entries if e.gold is None][:3]
        raise MissingGold(f"entries without gold labels (e.g. {missing})")
    names = SPLITS[:len(fractions)]
    assignment = {}
    for ci, cls_label in enumerate(CLASSES):
        idxs = [i for i, e in enumerate(entries) if e.gold == cls_label]
        rng = np.random.default_rng([seed, ci])
        idxs = [idxs[j] for j in rng.permutation(len(idxs))]
        counts = _largest_remainder(len(idxs), fractions)
        pos = 0
        for name, count in zip(names, counts):
            for i in idxs[pos:pos + count]:
                assignment[i] = name
            pos += count
    return [replace(e, split=assignment[i]) for i, e in enumerate(entries)]


@dataclass(frozen=True)
class ClassRecipe:
    base_pitch_hz: float
    pitch_jitter: float       # relative pitch modulation depth
    energy_level: float       # carrier amplitude
    energy_jitter: float      # relative amplitude modulation depth
    modulation_rate_hz: float
    # relative per-sample spreads of the parameters above
    pitch_var: float = 0.03
    jitter_var: float = 0.15        # spread of the pitch modulation depth
    energy_var: float = 0.08
    ejitter_var: float = 0.15       # spread of the amplitude modulation depth
    rate_var: float = 0.10
    # per-sample random harmonic richness: 2nd/3rd harmonic gains are drawn
    # uniformly from [0, harmonics], RMS-normalized so loudness is unchanged
    harmonics: float = 0.5
    # pitch modulator shape: "sine", or "flat" (saturated sine, which spends
    # more time near the excursion extremes and so decouples the pitch
    # spread from the pitch range)
    pitch_waveform: str = "sine"

    def blend(self, other, weight):
        mixed = {name: (1 - weight) * getattr(self, name) + weight * getattr(other, name)
                 for name in ("base_pitch_hz", "pitch_jitter", "energy_level",
                              "energy_jitter", "modulation_rate_hz", "pitch_var",
                              "jitter_var", "energy_var", "ejitter_var",
                              "rate_var", "harmonics")}
        return ClassRecipe(pitch_waveform=self.pitch_waveform, **mixed)


@dataclass(frozen=True)
class SynthRecipe:
    classes: dict = None      # label -> ClassRecipe
    overlap: float = 0.0      # fraction of angry/panic samples blended halfway
    seed: int = 0
    duration_s: float = 2.0
    n_per_class: int = 50
    sample_rate: int = 16000
    # optional planted variants: label -> ClassRecipe used verbatim for the
    # first ceil(variant_fraction * n_per_class) samples of that label
    variants: dict = None
    variant_fraction: float = 0.0

    def __post_init__(self):
        if self.classes is None:
            object.__setattr__(self, "classes", dict(DEFAULT_CLASS_RECIPES))
        if self.variants is None:
            object.__setattr__(self, "variants", {})
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must be in [0, 1]")
        if not 0.0 <= self.variant_fraction <= 1.0:
            raise ValueError("variant_fraction must be in [0, 1]")


DEFAULT_CLASS_RECIPES = {
    "calm": ClassRecipe(base_pitch_hz=110.0, pitch_jitter=0.02,
                        energy_level=0.10, energy_jitter=0.05,
                        modulation_rate_hz=1.5),
    "angry": ClassRecipe(base_pitch_hz=250.0, pitch_jitter=0.06,
                         energy_level=0.46, energy_jitter=0.12,
                         modulation_rate_hz=3.0),
    "panic": ClassRecipe(base_pitch_hz=270.0, pitch_jitter=0.18,
                         energy_level=0.30, energy_jitter=0.45,
                         modulation_rate_hz=7.0),
}

# every synthetic file starts with one full-scale reference sample so peak
# normalization applies the same gain everywhere and relative loudness
# between files survives standardization
PEAK_REFERENCE = 0.98


def _synthesize(recipe, rng, duration_s, sample_rate):
    """One tone complex following a ClassRecipe, with per-sample variation."""
    n = int(duration_s * sample_rate)
    t = np.arange(n) / sample_rate
    base = recipe.base_pitch_hz * (1.0 + recipe.pitch_var * rng.standard_normal())
    p_jit = max(0.0, recipe.pitch_jitter * (1.0 + recipe.jitter_var * rng.standard_normal()))
    energy = max(0.01, recipe.energy_level * (1.0 + recipe.energy_var * rng.standard_normal()))
    e_jit = max(0.0, recipe.energy_jitter * (1.0 + recipe.ejitter_var * rng.standard_normal()))
    rate = max(0.2, recipe.modulation_rate_hz * (1.0 + recipe.rate_var * rng.standard_normal()))
    phi_p, phi_e = rng.uniform(0, 2 * np.pi, size=2)
    h2, h3 = rng.uniform(0.0, recipe.harmonics, size=2)
    phi_h2, phi_h3 = rng.uniform(0, 2 * np.pi, size=2)
    modulator = np.sin(2 * np.pi * rate * t + phi_p)
    if recipe.pitch_waveform == "flat":
        modulator = np.tanh(2.5 * modulator) / np.tanh(2.5)
    freq = base * (1.0 + p_jit * modulator)
    freq = np.clip(freq, 65.0, 395.0)
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    carrier = (np.sin(phase) + h2 * np.sin(2 * phase + phi_h2)
               + h3 * np.sin(3 * phase + phi_h3))
    carrier /= math.sqrt(1.0 + h2 * h2 + h3 * h3)
    amp = energy * (1.0 + e_jit * np.sin(2 * np.pi * rate * 1.3 * t + phi_e))
    amp = np.maximum(amp, 0.02 * energy)
    x = amp * carrier + 0.002 * rng.standard_normal(n)
    x = np.clip(x, -PEAK_REFERENCE + 1e-6, PEAK_REFERENCE - 1e-6)
    x[0] = PEAK_REFERENCE
    return x


def generate_synthetic_corpus(recipe, out_dir):
    """Write per-class WAVs plus a manifest; deterministic given the seed.

    Returns the manifest entries. The first ceil(overlap * n) samples of
    the angry and panic classes are drawn from recipes blended halfway
    toward the other class.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    n_blend = int(round(recipe.overlap * recipe.n_per_class))
    n_variant = int(math.ceil(recipe.variant_fraction * recipe.n_per_class))
    blend_partner = {"angry": "panic", "panic": "angry"}
    for ci, label in enumerate(CLASSES):
        class_recipe = recipe.classes[label]
        for i in range(recipe.n_per_class):
            active = class_recipe
            if label in recipe.variants and i < n_variant:
                active = recipe.variants[label]
            elif label in blend_partner and i < n_blend:
                active = class_recipe.blend(recipe.classes[blend_partner[label]], 0.5)
            rng = np.random.default_rng([recipe.seed, ci, i])
            x = _synthesize(active, rng, recipe.duration_s, recipe.sample_rate)
            sample_id = f"{label}_{i:03d}"
            path = os.path.join(out_dir, sample_id + ".wav")
            save_wav(path, AudioSignal(x, recipe.sample_rate, source_id=sample_id))
            entries.append(ManifestEntry(
                sample_id=sample_id, audio_path=path, gold=label,
                source_kind="synthetic", duration_s=recipe.duration_s))
    manifest_path = os.path.join(out_dir, "manifest.csv")
    save_manifest(manifest_path, entries)
    return entries
