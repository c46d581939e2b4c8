"""Versioned, bit-exact serialization of detector banks and confidence ledgers.

A ``.roommodel`` file is two parts separated by the first newline:

1. a header ``{"format": "roommodel", "version": 1, "sha256": <hex digest of part 2>}``
2. a canonical JSON body (sorted keys, no whitespace) in which every float is a
   ``float.hex`` string and every array is ``{"shape": [...], "data": [...]}``.

The header is validated (format, then version) before the body is touched; the
digest then guards against truncation and bit flips, and finally every decoded
sub-model is checked against its invariants. Ledger files use the same layout
with format ``"roomledger"``. The body schema is published in docs/.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fusion, gmm, svm
from .errors import CorruptModel, DataError, InvariantError, UnsupportedVersion

MODEL_FORMAT = "roommodel"
LEDGER_FORMAT = "roomledger"
VERSION = 1


@dataclass(frozen=True, eq=False)
class ModelBundle:
    detectors: list
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def labels(self) -> list:
        return [d.label for d in self.detectors]


# -- encoding -----------------------------------------------------------------

def _f(x: float) -> str:
    return float(x).hex()


def _arr(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [v.hex() for v in a.ravel().tolist()]}


def _mixture(m: gmm.GaussianMixture) -> dict:
    return {"weights": _arr(m.weights), "means": _arr(m.means), "variances": _arr(m.variances), "var_floor": _arr(m.var_floor)}


def _svm(m: svm.SvmModel) -> dict:
    return {
        "support_vectors": _arr(m.support_vectors), "dual_coef": _arr(m.dual_coef), "bias": _f(m.bias),
        "gamma": _f(m.gamma), "cbox": _f(m.cbox), "mean": _arr(m.mean), "scale": _arr(m.scale),
        "platt_a": _f(m.platt_a), "platt_b": _f(m.platt_b),
    }


def _detector(d: fusion.RoomDetector) -> dict:
    return {
        "label": d.label,
        "scene_in": _mixture(d.scene.in_model), "scene_out": _mixture(d.scene.out_model),
        "svm": _svm(d.rir), "alpha": _f(d.alpha), "t_c": _f(d.t_c),
        "score_pos": _mixture(d.dists.pos), "score_neg": _mixture(d.dists.neg), "omega": _f(d.omega),
    }


def _pack(fmt: str, body: dict) -> bytes:
    payload = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    header = json.dumps({"format": fmt, "version": VERSION, "sha256": hashlib.sha256(payload).hexdigest()},
                        sort_keys=True, separators=(",", ":")).encode()
    return header + b"\n" + payload


def encode_bundle(bundle: ModelBundle) -> bytes:
    for d in bundle.detectors:
        _check_detector(d)
    return _pack(MODEL_FORMAT, {"metadata": bundle.metadata, "detectors": [_detector(d) for d in bundle.detectors]})


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise DataError(f"cannot write {path}: {exc}") from exc


def save(bundle: ModelBundle, path) -> None:
    _atomic_write(path, encode_bundle(bundle))


# -- decoding -----------------------------------------------------------------

def _unpack(data: bytes, fmt: str) -> dict:
    head, sep, payload = data.partition(b"\n")
    try:
        header = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"corrupt model: unreadable header ({exc})") from exc
    if not isinstance(header, dict) or header.get("format") != fmt:
        raise CorruptModel(f"corrupt model: not a {fmt} file")
    version = header.get("version")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version: file has version {version!r}, this build reads version {VERSION}")
    if not sep or hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CorruptModel("corrupt model: checksum mismatch (truncated or modified file)")
    try:
        body = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"corrupt model: unreadable body ({exc})") from exc
    if not isinstance(body, dict):
        raise CorruptModel("corrupt model: body is not an object")
    return body


def _float(s) -> float:
    if not isinstance(s, str):
        raise CorruptModel(f"corrupt model: expected a hex float string, got {type(s).__name__}")
    try:
        return float.fromhex(s)
    except ValueError as exc:
        raise CorruptModel(f"corrupt model: bad float literal {s!r}") from exc


def _array(d, ndim: int) -> np.ndarray:
    if not isinstance(d, dict) or not isinstance(d.get("shape"), list) or not isinstance(d.get("data"), list):
        raise CorruptModel("corrupt model: malformed array")
    shape = d["shape"]
    if len(shape) != ndim or not all(isinstance(n, int) and n >= 0 for n in shape) or math.prod(shape) != len(d["data"]):
        raise CorruptModel(f"corrupt model: array shape {shape} does not match its data")
    return np.array([_float(v) for v in d["data"]], dtype=np.float64).reshape(shape)


def _get(d: dict, key: str):
    if not isinstance(d, dict) or key not in d:
        raise CorruptModel(f"corrupt model: missing field {key!r}")
    return d[key]


def _decode_mixture(d) -> gmm.GaussianMixture:
    return gmm.GaussianMixture(
        _array(_get(d, "weights"), 1), _array(_get(d, "means"), 2),
        _array(_get(d, "variances"), 2), _array(_get(d, "var_floor"), 1),
    )


def _decode_svm(d) -> svm.SvmModel:
    return svm.SvmModel(
        _array(_get(d, "support_vectors"), 2), _array(_get(d, "dual_coef"), 1), _float(_get(d, "bias")),
        _float(_get(d, "gamma")), _float(_get(d, "cbox")), _array(_get(d, "mean"), 1),
        _array(_get(d, "scale"), 1), _float(_get(d, "platt_a")), _float(_get(d, "platt_b")),
    )


def _check_detector(det: fusion.RoomDetector) -> None:
    checks = [
        ("scene in-class mixture", det.scene.in_model.check),
        ("scene out-of-class mixture", det.scene.out_model.check),
        ("response SVM", det.rir.check),
        ("positive score mixture", det.dists.pos.check),
        ("negative score mixture", det.dists.neg.check),
    ]
    for name, check in checks:
        try:
            check()
        except InvariantError as exc:
            raise CorruptModel(f"corrupt model: detector {det.label!r}, {name}: {exc}") from exc
    if det.scene.in_model.dim != det.scene.out_model.dim:
        raise CorruptModel(f"corrupt model: detector {det.label!r} scene mixtures disagree on dimension")
    if det.dists.pos.dim != 1 or det.dists.neg.dim != 1:
        raise CorruptModel(f"corrupt model: detector {det.label!r} score mixtures are not one-dimensional")
    if not (0.0 <= det.alpha <= 1.0 and math.isfinite(det.t_c) and det.omega > 0 and math.isfinite(det.omega)):
        raise CorruptModel(f"corrupt model: detector {det.label!r} has alpha, t_c or omega out of range")


def _decode_detector(d) -> fusion.RoomDetector:
    label = _get(d, "label")
    if not isinstance(label, str):
        raise CorruptModel("corrupt model: detector label is not a string")
    try:
        det = fusion.RoomDetector(
            label,
            gmm.ScenePair(_decode_mixture(_get(d, "scene_in")), _decode_mixture(_get(d, "scene_out"))),
            _decode_svm(_get(d, "svm")),
            _float(_get(d, "alpha")),
            _float(_get(d, "t_c")),
            fusion.ScoreDistributions(_decode_mixture(_get(d, "score_pos")), _decode_mixture(_get(d, "score_neg"))),
            _float(_get(d, "omega")),
        )
    except CorruptModel:
        raise
    except DataError as exc:
        raise CorruptModel(f"corrupt model: detector {label!r}: {exc}") from exc
    _check_detector(det)
    return det


def decode_bundle(data: bytes) -> ModelBundle:
    body = _unpack(data, MODEL_FORMAT)
    metadata = _get(body, "metadata")
    detectors = _get(body, "detectors")
    if not isinstance(metadata, dict) or not isinstance(detectors, list):
        raise CorruptModel("corrupt model: malformed metadata or detector list")
    dets = [_decode_detector(d) for d in detectors]
    if len({d.label for d in dets}) != len(dets):
        raise CorruptModel("corrupt model: duplicate detector labels")
    return ModelBundle(dets, metadata)


def load(path) -> ModelBundle:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    return decode_bundle(data)


# -- ledgers --------------------------------------------------------------------

def encode_ledger(ledger: fusion.ConfidenceLedger, recordings: int = 0) -> bytes:
    entries = {
        c: {"n": e.n, "sum_log_pos": _f(e.sum_log_pos), "sum_log_neg": _f(e.sum_log_neg), "omega": _f(e.omega)}
        for c, e in ledger.entries.items()
    }
    return _pack(LEDGER_FORMAT, {"recordings": recordings, "entries": entries})


def save_ledger(ledger: fusion.ConfidenceLedger, path, recordings: int = 0) -> None:
    _atomic_write(path, encode_ledger(ledger, recordings))


def decode_ledger(data: bytes) -> tuple[fusion.ConfidenceLedger, int]:
    body = _unpack(data, LEDGER_FORMAT)
    entries, recordings = _get(body, "entries"), _get(body, "recordings")
    if not isinstance(entries, dict) or not isinstance(recordings, int):
        raise CorruptModel("corrupt model: malformed ledger")
    out = {}
    for c, e in entries.items():
        n = _get(e, "n")
        values = [_float(_get(e, k)) for k in ("sum_log_pos", "sum_log_neg", "omega")]
        if not isinstance(n, int) or n < 0 or not all(math.isfinite(v) for v in values) or values[2] <= 0:
            raise CorruptModel(f"corrupt model: ledger entry {c!r} violates its invariants")
        out[c] = fusion.LedgerEntry(n, *values)
    return fusion.ConfidenceLedger(out), recordings


def load_ledger(path) -> tuple[fusion.ConfidenceLedger, int]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read ledger {path}: {exc}") from exc
    return decode_ledger(data)
