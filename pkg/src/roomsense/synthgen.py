"""Synthetic labelled corpus: parametric room responses, speech-like excitation, ambience.

Every artifact is a pure function of (spec, seed). A clip is a seeded burst
excitation convolved with an image-source + stochastic-tail response, plus
band-limited, amplitude-modulated ambience, peak-normalized to 0.9.
"""
from __future__ import annotations

import csv
import os
import tempfile
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import AudioClip, write_wav
from .errors import DataError

SPEED_OF_SOUND = 343.0
PEAK = 0.9
MANIFEST_HEADER = ["path", "label", "room_id", "building_id", "seed"]


@dataclass(frozen=True)
class AmbienceBand:
    center_hz: float
    bandwidth_hz: float
    level_db: float  # relative to the reverberant speech RMS
    am_rate_hz: float = 0.0


@dataclass(frozen=True)
class RoomSpec:
    label: str
    rt60: float
    dims: tuple[float, float, float]
    # x0, x1, y0, y1, z0, z1 walls
    reflectivity: tuple[float, ...] = (0.7,) * 6
    ambience: tuple[AmbienceBand, ...] = ()
    tail_gain: float = 0.5
    # each clip draws its own offset in [-clip_level_db, +clip_level_db] per ambience band
    clip_level_db: float = 0.0

    def __post_init__(self):
        if self.rt60 <= 0:
            raise ValueError("rt60 must be positive")
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise ValueError("dims must be three positive lengths")
        if len(self.reflectivity) != 6 or not all(0 <= r < 1 for r in self.reflectivity):
            raise ValueError("reflectivity needs six coefficients in [0, 1)")
        if not all(np.isfinite(b.level_db) for b in self.ambience):
            raise ValueError("ambience levels must be finite")


def default_specs() -> list[RoomSpec]:
    """Five room archetypes with distinct reverberation and ambience."""
    return [
        RoomSpec(
            "bathroom", rt60=0.9, dims=(2.4, 2.0, 2.5), reflectivity=(0.93,) * 6,
            ambience=(AmbienceBand(5000, 4000, -14, 6.0), AmbienceBand(150, 80, -24, 0.0)),
            tail_gain=0.8,
        ),
        RoomSpec(
            "lecture_hall", rt60=1.5, dims=(18.0, 14.0, 6.0), reflectivity=(0.8, 0.8, 0.8, 0.8, 0.6, 0.85),
            ambience=(AmbienceBand(120, 150, -18, 0.2), AmbienceBand(600, 400, -30, 0.5)),
            tail_gain=0.6,
        ),
        RoomSpec(
            "office", rt60=0.45, dims=(4.5, 3.5, 2.7), reflectivity=(0.55, 0.6, 0.5, 0.55, 0.3, 0.7),
            ambience=(AmbienceBand(1200, 200, -26, 0.0), AmbienceBand(3000, 2000, -28, 9.0)),
            tail_gain=0.35,
        ),
        RoomSpec(
            "pantry", rt60=0.6, dims=(3.5, 3.0, 2.7), reflectivity=(0.7, 0.7, 0.65, 0.65, 0.6, 0.75),
            ambience=(AmbienceBand(100, 60, -18, 0.0), AmbienceBand(2500, 300, -26, 1.0)),
            tail_gain=0.45,
        ),
        RoomSpec(
            "classroom", rt60=0.9, dims=(10.0, 8.0, 3.0), reflectivity=(0.6, 0.6, 0.6, 0.6, 0.4, 0.7),
            ambience=(AmbienceBand(800, 1200, -20, 3.5), AmbienceBand(250, 200, -28, 0.3)),
            tail_gain=0.5,
        ),
    ]


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def positions(spec: RoomSpec, seed: int):
    """Seeded source and microphone positions, 0.5-1.2 m apart, inside the room."""
    rng = _rng(seed, 1)
    dims = np.asarray(spec.dims)
    src = dims * rng.uniform(0.25, 0.75, 3)
    src[2] = min(1.5, 0.6 * dims[2])
    for _ in range(100):
        direction = rng.normal(size=3)
        direction[2] *= 0.2
        mic = src + direction / np.linalg.norm(direction) * rng.uniform(0.5, 1.2)
        if np.all(mic > 0.1 * dims) and np.all(mic < 0.9 * dims):
            return src, mic
    return src, np.clip(src + np.array([0.5, 0.0, 0.0]), 0.1 * dims, 0.9 * dims)


def image_source_response(spec: RoomSpec, src, mic, sample_rate: int, n_samples: int, max_order: int = 3) -> np.ndarray:
    """Early reflections of a shoebox room, direct path normalized to amplitude 1."""
    L = np.asarray(spec.dims, dtype=np.float64)
    beta = np.asarray(spec.reflectivity, dtype=np.float64).reshape(3, 2)
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    grid = np.arange(-max_order, max_order + 1)
    n = np.stack(np.meshgrid(grid, grid, grid, indexing="ij"), -1).reshape(-1, 1, 3)
    u = np.array(list(np.ndindex(2, 2, 2))).reshape(1, -1, 3)
    hits_lo = np.abs(n - u)
    hits_hi = np.abs(n) + 0 * u
    keep = (hits_lo + hits_hi).sum(-1) <= max_order
    images = ((1 - 2 * u) * src + 2 * n * L)[keep]
    gains = np.prod(beta[:, 0] ** hits_lo[keep] * beta[:, 1] ** hits_hi[keep], axis=-1)
    dist = np.linalg.norm(images - mic, axis=-1)
    idx = np.round(dist / SPEED_OF_SOUND * sample_rate).astype(int)
    inside = idx < n_samples
    h = np.zeros(n_samples)
    d_direct = np.linalg.norm(src - mic)
    np.add.at(h, idx[inside], gains[inside] * d_direct / np.maximum(dist[inside], 1e-3))
    return h


def decay_rate(rt60: float) -> float:
    """Amplitude decay constant a with 20*log10(exp(-a * rt60)) = -60."""
    return 3.0 * np.log(10.0) / rt60


def synth_rir(spec: RoomSpec, sample_rate: int, seed: int, length_s: float | None = None) -> np.ndarray:
    """Image-source early part plus an exponentially decaying Gaussian tail."""
    length_s = 1.2 * spec.rt60 + 0.05 if length_s is None else length_s
    n = max(1, int(round(length_s * sample_rate)))
    src, mic = positions(spec, seed)
    h = image_source_response(spec, src, mic, sample_rate, n)
    onset = int(np.argmax(h > 0)) if np.any(h > 0) else 0
    t = np.arange(n - onset) / sample_rate
    noise = _rng(seed, 2).standard_normal(n - onset)
    scale = spec.tail_gain * float(np.mean(spec.reflectivity)) * np.sqrt(1000.0 / sample_rate)
    h[onset:] += scale * noise * np.exp(-decay_rate(spec.rt60) * t)
    return h


def _resonator(x, freq, bw, sample_rate):
    r = np.exp(-np.pi * bw / sample_rate)
    theta = 2 * np.pi * freq / sample_rate
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return signal.lfilter([1.0 - r], a, x)


def speech_like(duration_s: float, sample_rate: int, seed: int) -> np.ndarray:
    """Voiced/unvoiced syllable bursts separated by pauses (sparse in time)."""
    rng = _rng(seed, 3)
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    f0_base = rng.uniform(95, 220)
    t = rng.uniform(0.02, 0.2)
    while t < duration_s - 0.05:
        seg_len = rng.uniform(0.08, 0.25)
        start = int(t * sample_rate)
        m = min(int(seg_len * sample_rate), n - start)
        if m <= 8:
            break
        if rng.random() < 0.8:
            f0 = f0_base * rng.uniform(0.85, 1.15)
            period = sample_rate / f0
            src = np.zeros(m)
            pos = 0.0
            while pos < m:
                src[int(pos)] = 1.0
                pos += period * rng.uniform(0.97, 1.03)
            src += 0.02 * rng.standard_normal(m)
            formants = (rng.uniform(300, 900), rng.uniform(900, 2400), rng.uniform(2400, 3600))
            seg = sum(_resonator(src, f, rng.uniform(60, 160), sample_rate) * g for f, g in zip(formants, (1.0, 0.6, 0.3)))
        else:
            sos = signal.butter(2, min(0.95, 3000 / (sample_rate / 2)), btype="high", output="sos")
            seg = signal.sosfilt(sos, rng.standard_normal(m)) * 0.3
        out[start : start + m] += seg * np.hanning(m) * rng.uniform(0.5, 1.0)
        t += seg_len + (rng.uniform(0.3, 0.7) if rng.random() < 0.15 else rng.uniform(0.05, 0.3))
    return out


def ambience(bands, n: int, sample_rate: int, seed: int) -> list[np.ndarray]:
    """One unit-RMS band-limited, optionally amplitude-modulated noise per band."""
    rng = _rng(seed, 4)
    nyq = sample_rate / 2
    t = np.arange(n) / sample_rate
    out = []
    for band in bands:
        lo = max(20.0, band.center_hz - band.bandwidth_hz / 2)
        hi = min(nyq * 0.98, band.center_hz + band.bandwidth_hz / 2)
        sos = signal.butter(2, [lo / nyq, hi / nyq], btype="band", output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n + 2048))[2048:]
        if band.am_rate_hz > 0:
            x *= 1.0 + 0.8 * np.sin(2 * np.pi * band.am_rate_hz * t + rng.uniform(0, 2 * np.pi))
        out.append(x / (np.sqrt(np.mean(x**2)) + 1e-12))
    return out


@dataclass
class SynthClip:
    clip: AudioClip
    rir: np.ndarray


def synth_clip(spec: RoomSpec, duration_s: float = 3.0, seed: int = 0, sample_rate: int = 16000) -> SynthClip:
    if duration_s < 1.0:
        raise ValueError("clip duration must be at least 1 s")
    n = int(round(duration_s * sample_rate))
    rir = synth_rir(spec, sample_rate, seed)
    speech = signal.fftconvolve(speech_like(duration_s, sample_rate, seed), rir)[:n]
    mix = speech.copy()
    rms = np.sqrt(np.mean(speech**2))
    offsets = _rng(seed, 5).uniform(-spec.clip_level_db, spec.clip_level_db, len(spec.ambience))
    for band, noise, off in zip(spec.ambience, ambience(spec.ambience, n, sample_rate, seed), offsets):
        mix += noise * rms * 10.0 ** ((band.level_db + off) / 20.0)
    peak = np.max(np.abs(mix))
    if peak > 0:
        mix *= PEAK / peak
    return SynthClip(AudioClip(mix, sample_rate), rir)


def jitter_spec(spec: RoomSpec, rng: np.random.Generator, rt60=0.2, dims=0.15, level_db=3.0) -> RoomSpec:
    return replace(
        spec,
        rt60=spec.rt60 * rng.uniform(1 - rt60, 1 + rt60),
        dims=tuple(float(d * rng.uniform(1 - dims, 1 + dims)) for d in spec.dims),
        ambience=tuple(replace(b, level_db=b.level_db + rng.uniform(-level_db, level_db)) for b in spec.ambience),
    )


def room_spec(spec: RoomSpec, room_id: str, building_id: str, seed: int) -> RoomSpec:
    """Per-room jitter seeded by (label, room id), on top of a milder building jitter."""
    building = jitter_spec(spec, _rng(seed, _name_key(building_id), _name_key(spec.label)), 0.1, 0.05, 1.5)
    return jitter_spec(building, _rng(seed, _name_key(spec.label), _name_key(room_id)))


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    room_id: str
    building_id: str
    seed: int


@dataclass
class CorpusManifest:
    rows: list[ManifestRow]
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.rows)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.root / p

    @property
    def labels(self) -> list[str]:
        return sorted({r.label for r in self.rows})

    def subset(self, keep) -> "CorpusManifest":
        return CorpusManifest([r for r in self.rows if keep(r)], self.root)


def write_manifest(manifest: CorpusManifest, path) -> None:
    """Write the CSV atomically (temp file + rename)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_HEADER)
            for r in manifest.rows:
                w.writerow([r.path, r.label, r.room_id, r.building_id, r.seed])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(MANIFEST_HEADER[:3]) - set(reader.fieldnames or [])
            if missing:
                raise DataError(f"{path}: manifest lacks columns {sorted(missing)}")
            rows = [
                ManifestRow(
                    d["path"], d["label"], d["room_id"], d.get("building_id") or "",
                    int(d["seed"]) if d.get("seed") else 0,
                )
                for d in reader
            ]
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return CorpusManifest(rows, path.parent)


def building_names(buildings) -> list[str]:
    if isinstance(buildings, int):
        return [f"B{i + 1}" for i in range(buildings)]
    return list(buildings)


def corpus_rows(specs, rooms_per_label: int, clips_per_room: int, buildings, seed: int):
    """Yield (row, jittered spec) for every clip, in manifest order."""
    names = building_names(buildings)
    for spec in specs:
        for r in range(rooms_per_label):
            room_id = f"{spec.label}-{r:02d}"
            building = names[r % len(names)]
            rspec = room_spec(spec, room_id, building, seed)
            for c in range(clips_per_room):
                clip_seed = int(np.random.SeedSequence([seed, _name_key(room_id), c]).generate_state(1)[0])
                path = f"{spec.label}/{room_id}_{c:03d}.wav"
                yield ManifestRow(path, spec.label, room_id, building, clip_seed), rspec


def synth_corpus(
    specs, out_dir, rooms_per_label: int = 4, clips_per_room: int = 25, buildings=3,
    seed: int = 0, duration_s: float = 3.0, sample_rate: int = 16000,
) -> CorpusManifest:
    """Write WAVs under ``out_dir`` plus ``manifest.csv``; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for row, rspec in corpus_rows(specs, rooms_per_label, clips_per_room, buildings, seed):
        target = out_dir / row.path
        target.parent.mkdir(parents=True, exist_ok=True)
        clip = synth_clip(rspec, duration_s, row.seed, sample_rate).clip
        write_wav(target, clip)
        rows.append(row)
    manifest = CorpusManifest(rows, out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
