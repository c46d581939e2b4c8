from dataclasses import replace

import numpy as np
import pytest
from scipy import signal

from roomsense import dsp, nmfd, synthgen
from roomsense.errors import DataError

SR = 16000
SPECS = {s.label: s for s in synthgen.default_specs()}


def band_energy_db(h, sr=SR, band_s=0.05):
    m = int(band_s * sr)
    n = len(h) // m
    e = np.sum(h[: n * m].reshape(n, m) ** 2, axis=1)
    return 10 * np.log10(e), (np.arange(n) + 0.5) * band_s


def tail_fit(h, start_s=0.1, stop_s=None):
    """Least-squares line through the band energies (dB) of the tail: (slope, intercept, band times)."""
    db, t = band_energy_db(h)
    keep = (t >= start_s) & (t <= (stop_s or t[-1]))
    slope, icpt = np.polyfit(t[keep], db[keep], 1)
    return slope, icpt, t[keep]


@pytest.mark.parametrize("label", ["bathroom", "office", "pantry"])
def test_tail_energy_falls_sixty_db_over_rt60(label):
    spec = SPECS[label]
    slope, *_ = tail_fit(synthgen.synth_rir(spec, SR, seed=3), stop_s=spec.rt60)
    assert abs(slope * spec.rt60 + 60.0) <= 1.0


def test_two_seeds_share_the_decay_envelope():
    spec = SPECS["bathroom"]
    sa, ia, t = tail_fit(synthgen.synth_rir(spec, SR, seed=1), stop_s=spec.rt60)
    sb, ib, _ = tail_fit(synthgen.synth_rir(spec, SR, seed=2), stop_s=spec.rt60)
    # fitted envelopes agree within 1 dB in every 50 ms band
    assert np.max(np.abs((sa * t + ia) - (sb * t + ib))) <= 1.0
    assert not np.array_equal(synthgen.synth_rir(spec, SR, 1), synthgen.synth_rir(spec, SR, 2))


def test_zero_reflectivity_leaves_the_direct_path():
    spec = replace(SPECS["office"], reflectivity=(0.0,) * 6)
    h = synthgen.synth_rir(spec, SR, seed=0)
    nz = np.flatnonzero(h)
    assert len(nz) == 1 and h[nz[0]] == 1.0


def test_empty_ambience_clip_is_the_normalized_reverberant_excitation():
    spec = replace(SPECS["pantry"], ambience=())
    sc = synthgen.synth_clip(spec, 1.5, seed=4)
    n = int(1.5 * SR)
    wet = signal.fftconvolve(synthgen.speech_like(1.5, SR, 4), synthgen.synth_rir(spec, SR, 4))[:n]
    np.testing.assert_allclose(sc.clip.samples, wet * synthgen.PEAK / np.max(np.abs(wet)), rtol=0, atol=1e-12)


def test_clip_is_deterministic_and_normalized():
    spec = SPECS["classroom"]
    a, b = synthgen.synth_clip(spec, 1.0, seed=5), synthgen.synth_clip(spec, 1.0, seed=5)
    assert a.clip.samples.tobytes() == b.clip.samples.tobytes()
    assert np.max(np.abs(a.clip.samples)) == pytest.approx(synthgen.PEAK, abs=1e-12)
    assert a.clip.samples.tobytes() != synthgen.synth_clip(spec, 1.0, seed=6).clip.samples.tobytes()


def test_clip_level_jitter_changes_only_the_ambience():
    spec = replace(SPECS["office"], clip_level_db=6.0)
    a = synthgen.synth_clip(spec, 1.0, seed=7).clip.samples
    b = synthgen.synth_clip(replace(spec, clip_level_db=0.0), 1.0, seed=7).clip.samples
    assert not np.array_equal(a, b)
    assert np.corrcoef(a, b)[0, 1] > 0.9


def test_speech_like_excitation_is_sparse_in_time():
    x = synthgen.speech_like(3.0, SR, seed=8)
    frames = x[: len(x) // 512 * 512].reshape(-1, 512)
    energy = np.sum(frames**2, axis=1)
    assert np.mean(energy < 1e-3 * energy.max()) > 0.1


def test_spec_validation():
    with pytest.raises(ValueError):
        replace(SPECS["office"], rt60=0.0)
    with pytest.raises(ValueError):
        replace(SPECS["office"], reflectivity=(1.0,) * 6)
    with pytest.raises(ValueError):
        synthgen.synth_clip(SPECS["office"], 0.5)


def _column_energy_db(M):
    return 10 * np.log10(np.maximum(np.sum(M**2, axis=0), 1e-30))


@pytest.mark.parametrize("label", sorted(SPECS))
def test_nmfd_recovers_the_response_decay_profile(label):
    sc = synthgen.synth_clip(SPECS[label], 3.0, seed=11)
    spec = dsp.stft(sc.clip)
    cfg = nmfd.NmfdConfig()
    est = nmfd.estimate_rir(spec.values, cfg).rir
    padded = np.concatenate([sc.rir, np.zeros(2 * spec.n_fft)])
    truth = dsp.stft(dsp.AudioClip(padded, SR)).values[:, : cfg.K]
    t, e = _column_energy_db(truth), _column_energy_db(est)
    keep = t >= t.max() - 60.0
    assert np.corrcoef(t[keep], e[keep])[0, 1] > 0.8


def test_corpus_counts_and_structure(tmp_path):
    rows = [r for r, _ in synthgen.corpus_rows(synthgen.default_specs(), 4, 10, 3, seed=0)]
    assert len(rows) == 200
    assert len({r.path for r in rows}) == 200
    assert {r.building_id for r in rows} == {"B1", "B2", "B3"}
    # a room never spans buildings
    for room in {r.room_id for r in rows}:
        assert len({r.building_id for r in rows if r.room_id == room}) == 1


def test_corpus_is_byte_identical_for_a_seed(tmp_path):
    specs = synthgen.default_specs()[:2]
    a = synthgen.synth_corpus(specs, tmp_path / "a", rooms_per_label=2, clips_per_room=2, seed=1, duration_s=1.0)
    synthgen.synth_corpus(specs, tmp_path / "b", rooms_per_label=2, clips_per_room=2, seed=1, duration_s=1.0)
    for name in [r.path for r in a.rows] + ["manifest.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back = synthgen.read_manifest(tmp_path / "a" / "manifest.csv")
    assert back.rows == a.rows
    for r in back.rows:
        clip = dsp.read_wav(back.resolve(r))
        assert clip.sample_rate == SR and np.max(np.abs(clip.samples)) <= 1.0


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        synthgen.read_manifest(tmp_path / "none.csv")
    (tmp_path / "bad.csv").write_text("path,label\nx.wav,a\n")
    with pytest.raises(DataError, match="room_id"):
        synthgen.read_manifest(tmp_path / "bad.csv")


def test_labels_are_more_distinct_than_rooms():
    """Mean MFCC centroids: between-label distance exceeds within-label room-to-room distance."""
    centroids = {}
    for row, rspec in synthgen.corpus_rows(synthgen.default_specs(), 3, 3, 3, seed=0):
        clip = synthgen.synth_clip(rspec, 2.0, row.seed).clip
        feats = dsp.mfcc(dsp.stft(clip))[:, :20]
        centroids.setdefault(row.label, {}).setdefault(row.room_id, []).append(feats.mean(axis=0))
    rooms = {c: np.array([np.mean(v, axis=0) for v in by_room.values()]) for c, by_room in centroids.items()}
    within = np.mean([np.linalg.norm(a - b) for r in rooms.values() for i, a in enumerate(r) for b in r[i + 1:]])
    labels = sorted(rooms)
    label_c = {c: rooms[c].mean(axis=0) for c in labels}
    between = np.mean([np.linalg.norm(label_c[a] - label_c[b]) for i, a in enumerate(labels) for b in labels[i + 1:]])
    assert between > within
