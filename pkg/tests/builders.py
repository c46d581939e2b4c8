"""Random but valid model objects for serialization tests."""
import numpy as np

from roomsense import fusion, gmm, svm
from roomsense.persistence import ModelBundle


def random_mixture(rng, n, d):
    w = rng.random(n) + 0.05
    floor = np.full(d, 1e-4)
    return gmm.GaussianMixture(w / w.sum(), rng.normal(0, 5, (n, d)), floor + rng.exponential(1.0, (n, d)), floor)


def random_svm(rng, m, d):
    cbox = float(2.0 ** rng.integers(-3, 8))
    coef = rng.uniform(-cbox, cbox, m)
    return svm.SvmModel(rng.normal(size=(m, d)), coef, float(rng.normal()), float(2.0 ** rng.integers(-9, 2)), cbox,
                        rng.normal(size=d), rng.uniform(0.1, 3, d), float(-rng.exponential()), float(rng.normal()))


def random_detector(rng, label, frame_dim=6, rir_dim=8, n_sv=5):
    return fusion.RoomDetector(
        label,
        gmm.ScenePair(random_mixture(rng, 3, frame_dim), random_mixture(rng, 3, frame_dim)),
        random_svm(rng, n_sv, rir_dim),
        float(rng.uniform()),
        float(rng.normal()),
        fusion.ScoreDistributions(random_mixture(rng, 4, 1), random_mixture(rng, 4, 1)),
        float(rng.uniform(0.5, 8)),
    )


def random_bundle(seed, n_labels=3, **kw):
    rng = np.random.default_rng(seed)
    dets = [random_detector(rng, f"label_{i}", **kw) for i in range(n_labels)]
    return ModelBundle(dets, {"seed": seed, "note": "random bundle", "scale": 0.1})


def detector_arrays(det):
    """Every numeric field of a detector, in a fixed order."""
    out = []
    for m in (det.scene.in_model, det.scene.out_model, det.dists.pos, det.dists.neg):
        out += [m.weights, m.means, m.variances, m.var_floor]
    s = det.rir
    out += [s.support_vectors, s.dual_coef, s.mean, s.scale,
            np.array([s.bias, s.gamma, s.cbox, s.platt_a, s.platt_b, det.alpha, det.t_c, det.omega])]
    return out


def bitwise_equal(a: ModelBundle, b: ModelBundle) -> bool:
    if a.labels != b.labels or a.metadata != b.metadata:
        return False
    for da, db in zip(a.detectors, b.detectors):
        for x, y in zip(detector_arrays(da), detector_arrays(db)):
            if x.shape != y.shape or x.tobytes() != y.tobytes():
                return False
    return True
