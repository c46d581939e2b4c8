"""``roomsense`` command line: synth, train, infer, eval.

Every config field is also a flag named by its dotted path, e.g.
``--features.nmfd.K 16`` or ``--svm.cbox 1 2 4``. Flags override ``--config``.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import fcntl
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import fusion, nmfd, persistence, pipeline, synthgen
from .config import RunConfig
from .dsp import read_wav, stft
from .errors import DataError, InvariantError, RoomSenseError

log = logging.getLogger("roomsense")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# -- config plumbing -------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (flags below override it)")
    p.add_argument("--dump-config", metavar="PATH", help="write the effective configuration as JSON")
    group = p.add_argument_group("configuration fields")
    for name, tp, default in config_mod.flat_fields():
        dest = "cfg__" + name.replace(".", "__")
        if tp is tuple:
            elem = type(default[0]) if default else str
            group.add_argument(f"--{name}", dest=dest, nargs="+", type=elem, metavar="V", help=f"default: {list(default)}")
        else:
            group.add_argument(f"--{name}", dest=dest, type=tp, metavar="V", help=f"default: {default}")


def resolve_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else RunConfig()
    overrides = {
        key[5:].replace("__", "."): value
        for key, value in vars(args).items()
        if key.startswith("cfg__") and value is not None
    }
    cfg = config_mod.with_overrides(cfg, overrides)
    if args.dump_config:
        try:
            Path(args.dump_config).write_text(config_mod.dumps(cfg))
        except OSError as exc:
            raise DataError(f"cannot write config {args.dump_config}: {exc}") from exc
    return cfg


# -- commands ---------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out_dir) -> synthgen.CorpusManifest:
    s = cfg.synth
    try:
        return synthgen.synth_corpus(
            synthgen.default_specs(), out_dir, s.rooms_per_label, s.clips_per_room, s.buildings,
            cfg.seed, s.duration_s, s.sample_rate,
        )
    except OSError as exc:
        raise DataError(f"cannot write corpus to {out_dir}: {exc}") from exc


def _manifest_rows_checked(manifest):
    if not manifest.rows:
        raise DataError("manifest is empty")
    return manifest


def cmd_train(manifest_path, cfg: RunConfig, model_out) -> persistence.ModelBundle:
    manifest = _manifest_rows_checked(synthgen.read_manifest(manifest_path))
    items = pipeline.load_items(manifest, cfg.features)
    bank = pipeline.train_bank(items, cfg)
    metadata = {
        "seed": cfg.seed,
        "config": config_mod.to_dict(cfg),
        "labels": [d.label for d in bank],
        "train_buildings": sorted({r.building_id for r in manifest.rows}),
    }
    bundle = persistence.ModelBundle(bank, metadata)
    persistence.save(bundle, model_out)
    return bundle


def _model_features(bundle: persistence.ModelBundle, fallback: RunConfig):
    try:
        return config_mod.from_dict(RunConfig, bundle.metadata["config"]).features
    except (KeyError, DataError):
        return fallback.features


def _dump_nmfd(out_dir: Path, index: int, clip, feature_cfg) -> None:
    spec = stft(clip, feature_cfg.window_s, feature_cfg.hop_s)
    res = nmfd.estimate_rir(spec.values, feature_cfg.nmfd)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.savetxt(out_dir / f"{index:05d}_source.csv", res.source, delimiter=",", fmt="%.17g")
    np.savetxt(out_dir / f"{index:05d}_rir.csv", res.rir, delimiter=",", fmt="%.17g")
    np.savetxt(out_dir / f"{index:05d}_trace.csv", res.trace, delimiter=",", fmt="%.17g")


@contextlib.contextmanager
def ledger_lock(ledger_file):
    """Advisory exclusive lock on ``<ledger>.lock`` for the duration of an update."""
    if not ledger_file:
        yield
        return
    lock_path = Path(str(ledger_file) + ".lock")
    try:
        fh = open(lock_path, "a")
    except OSError as exc:
        raise DataError(f"cannot lock ledger {ledger_file}: {exc}") from exc
    with fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError as exc:
            raise DataError(f"ledger {ledger_file} is in use by another process") from exc
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def cmd_infer(model_path, wavs, cfg: RunConfig, ledger_file=None, trace_out=None, nmfd_debug=None):
    """Returns (ledger, trace rows, error rows)."""
    with ledger_lock(ledger_file):
        return _infer(model_path, wavs, cfg, ledger_file, trace_out, nmfd_debug)


def _infer(model_path, wavs, cfg: RunConfig, ledger_file, trace_out, nmfd_debug):
    bundle = persistence.load(model_path)
    feature_cfg = _model_features(bundle, cfg)
    if ledger_file and Path(ledger_file).exists():
        ledger, recordings = persistence.load_ledger(ledger_file)
        missing = set(bundle.labels) - set(ledger.entries)
        if missing:
            raise DataError(f"ledger {ledger_file} lacks labels {sorted(missing)} of the model")
    else:
        ledger = fusion.ConfidenceLedger.fresh(bundle.labels, {d.label: d.omega for d in bundle.detectors})
        recordings = 0
    trace, errors = [], []
    for wav in wavs:
        recordings += 1
        try:
            clip = read_wav(wav)
        except (OSError, RoomSenseError) as exc:
            log.warning("recording %d (%s) skipped: %s", recordings, wav, exc)
            errors.append((recordings, str(wav), "", str(exc)))
            continue
        ledger, outcomes = fusion.infer_recording(bundle.detectors, clip, ledger, feature_cfg)
        for o in outcomes:
            if o.error is None:
                trace.append((recordings, o.label, o.p, o.p_shifted, o.confidence))
            else:
                log.warning("recording %d (%s), label %s: %s", recordings, wav, o.label, o.error)
                errors.append((recordings, str(wav), o.label, o.error))
        if nmfd_debug:
            _dump_nmfd(Path(nmfd_debug), recordings, clip, feature_cfg)
    header = ("recording_index", "label", "p_i", "p_i_shifted", "confidence")
    if trace_out:
        write_csv(trace_out, header, trace)
        if errors:
            write_csv(str(trace_out) + ".errors.csv", ("recording_index", "path", "label", "error"), errors)
    if ledger_file:
        persistence.save_ledger(ledger, ledger_file, recordings)
    return ledger, trace, errors


def write_report(report: pipeline.EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "eer.csv", ("label", "scene_eer", "rir_eer", "fused_eer"), report.eer_rows)
    write_csv(out / "sweep.csv", ("alpha", "total_eer"), report.sweep)
    write_csv(
        out / "confusion.csv", ("true_label", "candidate_label", "mean_confidence"),
        [(t, c, report.confusion[i, j]) for i, t in enumerate(report.labels) for j, c in enumerate(report.labels)],
    )
    for t in report.traces:
        write_csv(out / "traces" / f"{t.room_id}.csv", ("recording_index", "label", "p_i", "p_i_shifted", "confidence"), t.rows)
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")


def cmd_eval(manifest_path, cfg: RunConfig, mode: str, out_dir, model_path=None) -> pipeline.EvalReport:
    manifest = _manifest_rows_checked(synthgen.read_manifest(manifest_path))
    if mode == "cv":
        if model_path:
            raise UsageError("--model is only used in unseen-building mode (cv retrains per fold)")
        items = pipeline.load_items(manifest, cfg.features)
        report = pipeline.run_cv(items, cfg)
    elif mode == "unseen-building":
        bank = None
        feature_cfg = cfg.features
        if model_path:
            bundle = persistence.load(model_path)
            leaked = set(bundle.metadata.get("train_buildings", [])) & set(cfg.eval.test_buildings)
            if leaked:
                raise DataError(f"unseen-building evaluation refused: model was trained on {sorted(leaked)}")
            bank, feature_cfg = bundle.detectors, _model_features(bundle, cfg)
            rows = [r for r in manifest.rows if r.building_id in set(cfg.eval.test_buildings)]
            manifest = synthgen.CorpusManifest(rows, manifest.root)
        items = pipeline.load_items(manifest, feature_cfg)
        report = pipeline.run_unseen(items, cfg, bank)
    else:
        raise UsageError(f"unknown mode {mode!r}")
    write_report(report, out_dir)
    return report


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roomsense", description=__doc__.split("\n")[0])
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a labelled synthetic corpus")
    s.add_argument("--out", required=True, help="output directory (WAVs + manifest.csv)")
    _add_config_flags(s)

    t = sub.add_parser("train", help="train a detector bank from a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--model-out", required=True)
    _add_config_flags(t)

    i = sub.add_parser("infer", help="accumulate confidence over a list of recordings")
    i.add_argument("--model", required=True)
    i.add_argument("wavs", nargs="*", help="WAV files, processed in order")
    i.add_argument("--wav-list", help="text file with one WAV path per line (appended after positional WAVs)")
    i.add_argument("--ledger", help="ledger file to resume from and save to")
    i.add_argument("--trace-out", help="confidence trace CSV")
    i.add_argument("--nmfd-debug", metavar="DIR", help="dump per-clip NMFD source, response and objective trace as CSV")
    _add_config_flags(i)

    e = sub.add_parser("eval", help="cross-validated or unseen-building evaluation")
    e.add_argument("--manifest", required=True)
    e.add_argument("--mode", choices=["cv", "unseen-building"], default="cv")
    e.add_argument("--out", required=True, help="directory for metric CSVs")
    e.add_argument("--model", help="pre-trained bundle (unseen-building mode only)")
    _add_config_flags(e)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            m = cmd_synth(cfg, args.out)
            print(f"wrote {len(m)} recordings to {args.out}")
        elif args.command == "train":
            b = cmd_train(args.manifest, cfg, args.model_out)
            print(f"trained {len(b.detectors)} detectors -> {args.model_out}")
        elif args.command == "infer":
            wavs = list(args.wavs)
            if args.wav_list:
                try:
                    lines = Path(args.wav_list).read_text().splitlines()
                except OSError as exc:
                    raise DataError(f"cannot read wav list: {exc}") from exc
                wavs += [ln.strip() for ln in lines if ln.strip()]
            ledger, _, _ = cmd_infer(args.model, wavs, cfg, args.ledger, args.trace_out, args.nmfd_debug)
            print("label,n,confidence")
            for label, entry in ledger.entries.items():
                print(f"{label},{entry.n},{fusion.confidence(ledger, label)!r}")
        elif args.command == "eval":
            r = cmd_eval(args.manifest, cfg, args.mode, args.out, args.model)
            print(json.dumps(r.summary(), indent=2, sort_keys=True))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
