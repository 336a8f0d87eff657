"""Command-line entry point: ``lfvtc <group> <command> [options]``.

Every command takes ``--config`` (a JSON file), ``--seed``, ``--json`` and
``--jobs``. Option values resolve as flag > config file > built-in default;
config keys use the option's destination name (``--n-recordings`` ->
``n_recordings``). Nested sections ``encoder``, ``pretrain``, ``driver`` and
``finetune`` override training settings.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import features as feat
from .checkpoint import file_sha256
from .corpus import (CorpusManifest, child_disjoint_split, corpus_stats, entries_by_recording,
                     read_rttm, write_rttm)
from .metrics import format_table, reports_to_json
from .timeline import Timeline

logger = logging.getLogger("longform_vtc")

SPEECH_LABEL = "SPEECH"
NORM_FILE = "norm.json"
RUN_MANIFEST = "run-manifest.json"


class UsageError(Exception):
    """Bad flags or arguments (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- option registry: flag > config > default ---------------------------------------

_DEFAULTS: Dict[str, Dict[str, object]] = {}


def _opt(p: argparse.ArgumentParser, *flags, default=None, **kw):
    """Register an option whose built-in default is applied after the config file."""
    action = p.add_argument(*flags, default=None, **kw)
    _DEFAULTS.setdefault(p.prog, {})[action.dest] = default
    return action


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    _opt(p, "--seed", type=int, default=0)
    _opt(p, "--jobs", type=int, default=1, help="worker processes for per-file work")
    p.add_argument("--json", action="store_true", help="print one JSON result line")
    p.add_argument("-v", "--verbose", action="store_true")


def _resolve(args: argparse.Namespace, prog: str) -> dict:
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {args.config} is not valid JSON: {e}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
    for dest, default in _DEFAULTS.get(prog, {}).items():
        if getattr(args, dest, None) is None:
            setattr(args, dest, cfg.get(dest, default))
    return cfg


def _require(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


# -- helpers ---------------------------------------------------------------------------


def _feature_path(root: Path, rec_id: str, kind: str) -> Path:
    return Path(root) / f"{rec_id}.{kind}"


def _load_features(root: Path, rec_id: str, kind: str) -> np.ndarray:
    path = _feature_path(root, rec_id, kind)
    if not path.exists():
        raise FileNotFoundError(f"missing features {path}")
    return feat.FrameMatrix.load(path).data


def _load_norm(root: Path) -> Optional[feat.NormStats]:
    path = Path(root) / NORM_FILE
    if not path.exists():
        return None
    d = json.loads(path.read_text())
    return feat.NormStats(np.array(d["mean"]), np.array(d["std"]))


def _segments_by_recording(path: Path) -> Dict[str, Timeline]:
    out = {}
    for rec_id, items in entries_by_recording(read_rttm(path)).items():
        out[rec_id] = Timeline(rec_id, SPEECH_LABEL, [seg for _, seg in items])
    return out


def _sha_config(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_run_manifest(where: Path, command: str, resolved: dict, seed: int, artifacts: Sequence[Path]) -> Path:
    where.mkdir(parents=True, exist_ok=True)
    checks = {}
    for a in sorted({Path(p) for p in artifacts}, key=str):
        if a.is_file():
            checks[str(a)] = file_sha256(a)
    doc = {
        "command": command,
        "config": resolved,
        "config_sha256": _sha_config(resolved),
        "seed": seed,
        "artifacts": checks,
    }
    path = where / RUN_MANIFEST
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _map(fn: Callable, items: List, jobs: int) -> List:
    """Ordered map; ``jobs == 1`` runs in-process and is the determinism reference."""
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _settings(cls, cfg: dict, section: str, **overrides):
    d = dict(cfg.get(section, {}))
    d.update({k: v for k, v in overrides.items() if v is not None})
    return cls.from_dict(d)


# -- synth ---------------------------------------------------------------------------


def cmd_synth_generate(args, cfg):
    from .synth import SynthSpec, generate_corpus

    _require(args, "out")
    spec = SynthSpec(n_recordings=args.n_recordings, duration_each=args.duration, speech_fraction=args.speech_fraction,
                     overlap_prob=args.overlap_prob, seed=args.seed, dataset_name=args.dataset_name,
                     children_per_recording=args.children_per_recording)
    out = Path(args.out)
    corpus = generate_corpus(spec, out)
    artifacts = [out / "manifest.json", out / "reference.rttm"] + [out / r.audio_path for r in corpus.manifest.recordings]
    result = {"recordings": len(corpus.manifest.recordings), "total_s": corpus.manifest.total_duration,
              "speech_s": sum(ev.offset - ev.onset for evs in corpus.events.values() for ev in evs),
              "manifest": str(out / "manifest.json")}
    return result, out, artifacts


# -- corpus ----------------------------------------------------------------------------


def cmd_corpus_stats(args, cfg):
    _require(args, "manifest")
    stats = corpus_stats([CorpusManifest.load(m) for m in args.manifest])
    if not args.json:
        print(stats.to_table())
    return stats.to_dict(), None, []


def cmd_corpus_split(args, cfg):
    import warnings

    _require(args, "manifest", "out")
    ratios = tuple(float(r) for r in args.ratios)
    manifest = CorpusManifest.load(args.manifest)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        parts = child_disjoint_split(manifest, ratios, seed=args.seed)
    for w in caught:
        logger.warning("%s", w.message)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, artifacts = {}, []
    for name, part in zip(("train", "val", "test"), parts):
        path = out / f"{name}.json"
        part.save(path)
        artifacts.append(path)
        result[name] = {"recordings": part.recording_ids, "duration_s": part.total_duration}
    return result, out, artifacts


# -- segments ----------------------------------------------------------------------------


def cmd_segments_preprocess(args, cfg):
    from .segmenter import non_speech_ratio, preprocess_pipeline

    _require(args, "manifest", "out")
    manifest = CorpusManifest.load(args.manifest)
    vad = _segments_by_recording(Path(args.vad)) if args.vad else {}
    entries, ratios = [], {}
    for rec in manifest.recordings:
        speech = vad.get(rec.id, Timeline(rec.id, SPEECH_LABEL, [])) if args.vad else manifest.timeline(rec.id)
        segs = preprocess_pipeline(speech, rec, args.min_len, args.max_gap, args.max_len)
        entries.extend((rec.id, SPEECH_LABEL, s) for s in segs.segments)
        ratios[rec.id] = non_speech_ratio(segs, manifest.timeline(rec.id))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_rttm(entries))
    total = sum(s.duration for _, _, s in entries)
    noise = sum(ratios[r.id] * sum(s.duration for rid, _, s in entries if rid == r.id) for r in manifest.recordings)
    result = {"segments": len(entries), "total_s": total,
              "non_speech_ratio": noise / total if total else 0.0, "per_recording": ratios}
    return result, out.parent, [out]


# -- features ----------------------------------------------------------------------------


def _extract_one(job):
    from .synth import read_wav

    rec_id, wav, kind, out = job
    fm = feat.extract(read_wav(wav), kind)
    fm.save(_feature_path(Path(out), rec_id, kind))
    return rec_id, fm.n_frames


def cmd_features_extract(args, cfg):
    _require(args, "manifest", "out")
    manifest = CorpusManifest.load(args.manifest)
    root = Path(args.audio_root) if args.audio_root else Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for r in manifest.recordings:
        if not r.audio_path:
            raise ValueError(f"recording {r.id} has no audio_path")
        jobs.append((r.id, str(root / r.audio_path), args.kind, str(out)))
    frames = dict(_map(_extract_one, jobs, args.jobs))
    artifacts = [_feature_path(out, r, args.kind) for r in frames]
    if args.normalize:
        fit_ids = CorpusManifest.load(args.normalize).recording_ids
        stats = feat.NormStats.fit([_load_features(out, r, args.kind) for r in fit_ids])
        for rid in frames:
            fm = feat.FrameMatrix.load(_feature_path(out, rid, args.kind))
            feat.normalize(fm, stats).save(_feature_path(out, rid, args.kind))
        (out / NORM_FILE).write_text(json.dumps({"kind": args.kind, "fit_on": fit_ids, "mean": stats.mean.tolist(),
                                                 "std": stats.std.tolist()}) + "\n")
        artifacts.append(out / NORM_FILE)
    return {"kind": args.kind, "frames": frames, "normalized": bool(args.normalize)}, out, artifacts


# -- kmeans ---------------------------------------------------------------------------------


def _pooled_frames(manifest: CorpusManifest, root: Path, kind: str, segments: Optional[Path]):
    from .recipe import frame_ranges

    segs = _segments_by_recording(segments) if segments else None
    pool = []
    for rid in manifest.recording_ids:
        x = _load_features(root, rid, kind)
        if segs is None:
            pool.append(x)
        else:
            pool.extend(x[a:b] for a, b in frame_ranges(segs.get(rid, Timeline(rid, SPEECH_LABEL, [])), len(x)))
    return pool


def cmd_kmeans_fit(args, cfg):
    from .quantizer import kmeans_fit, sample_features

    _require(args, "manifest", "features", "out")
    manifest = CorpusManifest.load(args.manifest)
    pool = _pooled_frames(manifest, Path(args.features), args.kind, Path(args.segments) if args.segments else None)
    total = sum(len(p) for p in pool)
    if args.k > total:
        raise ValueError(f"K={args.k} exceeds the number of frames ({total}); K must be <= frame count")
    sample = sample_features(pool, min(args.budget, total), seed=args.seed, origin=args.kind.upper())
    cb = kmeans_fit(sample, args.k, args.mode.upper(), seed=args.seed, max_iters=args.max_iters,
                    batch_size=args.batch_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cb.save(out)
    result = {"K": cb.K, "dim": cb.dim, "frames_sampled": int(sample.n_frames),
              "inertia": cb.inertia_history[-1] if cb.inertia_history else None}
    return result, out.parent, [out, Path(str(out) + ".json")]


def cmd_kmeans_assign(args, cfg):
    from .quantizer import Codebook, assign, save_labels

    _require(args, "manifest", "features", "codebook", "out")
    manifest = CorpusManifest.load(args.manifest)
    cb = Codebook.load(args.codebook)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts, counts = [], {}
    for rid in manifest.recording_ids:
        labels = assign(cb, _load_features(Path(args.features), rid, args.kind))
        path = out / f"{rid}.labels"
        save_labels(labels, path, cb.K)
        artifacts.append(path)
        counts[rid] = int(len(labels))
    return {"K": cb.K, "frames": counts}, out, artifacts


# -- pretrain --------------------------------------------------------------------------------


def cmd_pretrain_run(args, cfg):
    from .recipe import frame_ranges
    from .ssl.driver import DriverSettings, PretrainRecording, layer_teacher, run_iteration
    from .ssl.encoder import EncoderConfig, load_encoder, save_encoder
    from .ssl.train import save_curve
    from .synth import frame_classes

    _require(args, "manifest", "features", "segments", "out")
    if args.iteration not in (1, 2):
        raise UsageError("--iteration must be 1 or 2")
    if args.iteration == 1:
        _require(args, "teacher")
    else:
        _require(args, "previous")
    manifest = CorpusManifest.load(args.manifest)
    segs = _segments_by_recording(Path(args.segments))
    recs = []
    for rid in manifest.recording_ids:
        x = _load_features(Path(args.features), rid, "logmel")
        teacher = _load_features(Path(args.teacher), rid, "mfcc") if args.iteration == 1 else x
        ranges = frame_ranges(segs.get(rid, Timeline(rid, SPEECH_LABEL, [])), len(x))
        truth = frame_classes(manifest, rid, len(x)) if manifest.annotations.get(rid) else None
        recs.append(PretrainRecording(rid, x, teacher, ranges, truth))

    overrides = {k: getattr(args, k) for k in ("steps", "batch_size", "crop_frames", "peak_lr")}
    pre = {**cfg.get("pretrain", {}), **{k: v for k, v in overrides.items() if v is not None}}
    driver = DriverSettings.from_dict({**cfg.get("driver", {}), "pretrain": pre})
    if args.k is not None:
        driver.n_clusters = args.k
    enc_cfg = EncoderConfig.from_dict({**cfg.get("encoder", {}), "input_dim": recs[0].inputs.shape[1]})
    if args.iteration == 1:
        teacher, origin = [r.teacher for r in recs], "MFCC"
    else:
        previous, _, _ = load_encoder(args.previous)
        teacher = layer_teacher(previous, recs)
        origin = f"ENCODER_LAYER({previous.config.layer_tap})"
    res = run_iteration(args.iteration, recs, teacher, origin, enc_cfg, driver, args.seed + (args.iteration - 1))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_encoder(out, res.state, {"iteration": args.iteration, "feature_origin": origin, "seed": args.seed})
    curve_path = Path(str(out) + ".curve.csv")
    save_curve(res.curve, curve_path)
    cb_path = Path(str(out) + ".codebook")
    res.codebook.save(cb_path)
    return res.report(), out.parent, [out, curve_path, cb_path, Path(str(cb_path) + ".json")]


def cmd_pretrain_gradcheck(args, cfg):
    from .ssl.gradcheck import TINY, grad_check

    reports = {}
    for n_layers in args.layers:
        rep = grad_check(TINY.replace(n_layers=n_layers), seed=args.seed)
        reports[f"L{n_layers}"] = rep.to_dict()
    passed = all(r["passed"] for r in reports.values())
    if not args.json:
        for name, r in reports.items():
            worst = max(r["group_errors"].values())
            print(f"{name}: {'PASS' if r['passed'] else 'FAIL'} (max relative error {worst:.2e})")
    if not passed:
        raise RuntimeError("gradient check failed: " + json.dumps(
            {k: [g for g, e in r["group_errors"].items() if e > r["tolerance"]] for k, r in reports.items()}))
    return {"passed": passed, "reports": reports}, None, []


# -- vtc ---------------------------------------------------------------------------------


def cmd_vtc_finetune(args, cfg):
    from .ssl.encoder import load_encoder
    from .vtc import FinetuneSettings, LabeledRecording, finetune, init_heads, rasterize, save_vtc_model

    _require(args, "checkpoint", "train", "features", "out")
    mode = args.mode.upper()
    state, _, _ = load_encoder(args.checkpoint)
    root = Path(args.features)

    def labeled(path):
        m = CorpusManifest.load(path)
        out = []
        for rid in m.recording_ids:
            x = _load_features(root, rid, "logmel")
            out.append(LabeledRecording(x, rasterize(m.class_timelines(rid), len(x)), rid))
        return out

    settings = _settings(FinetuneSettings, cfg, "finetune", lr=args.lr, max_steps=args.max_steps,
                         batch_size=args.batch_size)
    heads = init_heads(state.config.d_model, seed=args.seed, dropout_prob=settings.dropout_prob, dtype=state.dtype)
    res = finetune(state, heads, labeled(args.train), labeled(args.val) if args.val else [], mode, settings,
                   seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_vtc_model(out, res.state, res.heads, _load_norm(root), {"mode": mode, "best_step": res.best_step})
    result = {"mode": mode, "best_step": res.best_step, "best_val_loss": res.best_val_loss,
              "final_train_loss": res.train_curve[-1][1] if res.train_curve else None}
    return result, out.parent, [out]


def _infer_one(job):
    from .vtc import decode_timeline, infer_frames, load_vtc_model

    model, x_path, rec_id, thresholds, min_on, min_off = job
    state, heads, _, _ = load_vtc_model(model)
    x = feat.FrameMatrix.load(x_path).data
    scores = infer_frames(state, heads, x)
    tls = decode_timeline(scores, thresholds, min_on, min_off, recording_id=rec_id)
    return [(rec_id, vt, s) for vt, tl in tls.items() for s in tl.segments]


def cmd_vtc_infer(args, cfg):
    _require(args, "model", "manifest", "features", "out")
    manifest = CorpusManifest.load(args.manifest)
    thresholds = args.threshold if len(args.threshold) > 1 else args.threshold[0]
    jobs = [(str(args.model), str(_feature_path(Path(args.features), rid, "logmel")), rid, thresholds,
             args.min_duration_on, args.min_duration_off) for rid in manifest.recording_ids]
    for j in jobs:
        if not Path(j[1]).exists():
            raise FileNotFoundError(f"missing features {j[1]}")
    entries = [e for part in _map(_infer_one, jobs, args.jobs) for e in part]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_rttm(entries))
    return {"segments": len(entries), "hypothesis": str(out)}, out.parent, [out]


def cmd_vtc_eval(args, cfg):
    from .metrics import evaluate_corpus

    _require(args, "reference", "hypothesis")
    reference = CorpusManifest.load(args.reference)
    extra = [CorpusManifest.load(p) for p in (args.extra_reference or [])]
    reports = evaluate_corpus(reference, read_rttm(args.hypothesis), args.group, extra)
    if not args.json:
        print(format_table(reports))
    result = json.loads(reports_to_json(reports))
    artifacts = []
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(reports_to_json(reports) + "\n")
        artifacts.append(out)
    return result, (Path(args.out).parent if args.out else None), artifacts


# -- parser -------------------------------------------------------------------------------


def build_parser() -> _Parser:
    _DEFAULTS.clear()
    root = _Parser(prog="lfvtc", description="Long-form voice type classification pipeline.")
    groups = root.add_subparsers(dest="_group", metavar="GROUP", parser_class=_Parser)
    groups.required = True

    def command(group_parsers, name, fn, help_):
        p = group_parsers.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        _common(p)
        return p

    synth = groups.add_parser("synth", help="synthetic corpora").add_subparsers(dest="_cmd", metavar="CMD")
    synth.required = True
    p = command(synth, "generate", cmd_synth_generate, "render a synthetic long-form corpus")
    _opt(p, "--out")
    _opt(p, "--n-recordings", type=int, default=4)
    _opt(p, "--duration", type=float, default=600.0, help="seconds per recording")
    _opt(p, "--speech-fraction", type=float, default=0.2)
    _opt(p, "--overlap-prob", type=float, default=0.0)
    _opt(p, "--dataset-name", default="synthetic")
    _opt(p, "--children-per-recording", type=int, default=1)

    corpus = groups.add_parser("corpus", help="manifests and splits").add_subparsers(dest="_cmd", metavar="CMD")
    corpus.required = True
    p = command(corpus, "stats", cmd_corpus_stats, "total and effective hours per dataset")
    _opt(p, "--manifest", nargs="+")
    p = command(corpus, "split", cmd_corpus_split, "child-disjoint train/val/test split")
    _opt(p, "--manifest")
    _opt(p, "--out")
    _opt(p, "--ratios", nargs=3, type=float, default=[0.8, 0.1, 0.1])

    segments = groups.add_parser("segments", help="pre-training segments").add_subparsers(dest="_cmd", metavar="CMD")
    segments.required = True
    p = command(segments, "preprocess", cmd_segments_preprocess, "merge, extend and cap VAD output")
    _opt(p, "--manifest")
    _opt(p, "--vad", help="VAD RTTM (default: pooled reference annotations)")
    _opt(p, "--out")
    _opt(p, "--min-len", type=float, default=2.0)
    _opt(p, "--max-gap", type=float, default=2.0)
    _opt(p, "--max-len", type=float, default=30.0)

    features = groups.add_parser("features", help="acoustic features").add_subparsers(dest="_cmd", metavar="CMD")
    features.required = True
    p = command(features, "extract", cmd_features_extract, "log-mel or MFCC frames per recording")
    _opt(p, "--manifest")
    _opt(p, "--audio-root", help="directory audio paths are relative to (default: manifest directory)")
    _opt(p, "--kind", choices=["logmel", "mfcc"], default="logmel")
    _opt(p, "--normalize", help="manifest whose recordings provide the normalisation statistics")
    _opt(p, "--out")

    kmeans = groups.add_parser("kmeans", help="frame clustering").add_subparsers(dest="_cmd", metavar="CMD")
    kmeans.required = True
    p = command(kmeans, "fit", cmd_kmeans_fit, "fit a codebook")
    _opt(p, "--manifest")
    _opt(p, "--features")
    _opt(p, "--kind", default="mfcc")
    _opt(p, "--segments", help="restrict sampling to these segments (RTTM)")
    _opt(p, "--k", type=int, default=32)
    _opt(p, "--mode", choices=["lloyd", "minibatch", "LLOYD", "MINIBATCH"], default="minibatch")
    _opt(p, "--budget", type=int, default=20000)
    _opt(p, "--max-iters", type=int, default=50)
    _opt(p, "--batch-size", type=int, default=1024)
    _opt(p, "--out")
    p = command(kmeans, "assign", cmd_kmeans_assign, "label every frame with its nearest centroid")
    _opt(p, "--manifest")
    _opt(p, "--features")
    _opt(p, "--kind", default="mfcc")
    _opt(p, "--codebook")
    _opt(p, "--out")

    pretrain = groups.add_parser("pretrain", help="masked-prediction pre-training").add_subparsers(dest="_cmd",
                                                                                                   metavar="CMD")
    pretrain.required = True
    p = command(pretrain, "run", cmd_pretrain_run, "cluster targets and train one encoder")
    _opt(p, "--iteration", type=int, choices=[1, 2], default=1)
    _opt(p, "--manifest")
    _opt(p, "--features", help="normalised log-mel directory")
    _opt(p, "--teacher", help="normalised MFCC directory (iteration 1)")
    _opt(p, "--previous", help="iteration-1 encoder checkpoint (iteration 2)")
    _opt(p, "--segments")
    _opt(p, "--k", type=int)
    _opt(p, "--steps", type=int)
    _opt(p, "--batch-size", type=int)
    _opt(p, "--crop-frames", type=int)
    _opt(p, "--peak-lr", type=float)
    _opt(p, "--out")
    p = command(pretrain, "gradcheck", cmd_pretrain_gradcheck, "finite-difference gradient check")
    _opt(p, "--layers", type=int, nargs="+", default=[1, 2])

    vtc = groups.add_parser("vtc", help="voice type classifier").add_subparsers(dest="_cmd", metavar="CMD")
    vtc.required = True
    p = command(vtc, "finetune", cmd_vtc_finetune, "train classification heads")
    _opt(p, "--mode", choices=["frozen", "full", "FROZEN", "FULL"], default="full")
    _opt(p, "--checkpoint")
    _opt(p, "--train")
    _opt(p, "--val")
    _opt(p, "--features")
    _opt(p, "--lr", type=float)
    _opt(p, "--max-steps", type=int)
    _opt(p, "--batch-size", type=int)
    _opt(p, "--out")
    p = command(vtc, "infer", cmd_vtc_infer, "write an RTTM hypothesis")
    _opt(p, "--model")
    _opt(p, "--manifest")
    _opt(p, "--features")
    _opt(p, "--threshold", type=float, nargs="+", default=[0.5], help="one value or one per class")
    _opt(p, "--min-duration-on", type=float, default=0.0)
    _opt(p, "--min-duration-off", type=float, default=0.0)
    _opt(p, "--out")
    p = command(vtc, "eval", cmd_vtc_eval, "precision / recall / F per voice type")
    _opt(p, "--reference")
    _opt(p, "--hypothesis")
    _opt(p, "--extra-reference", nargs="+")
    _opt(p, "--group", choices=["global", "file", "dataset"], default="global")
    _opt(p, "--out")
    return root


_VALIDATION_ERRORS = (UsageError, ValueError, FileNotFoundError)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        prog = f"lfvtc {args._group} {args._cmd}"
        cfg = _resolve(args, prog)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    resolved = {k: v for k, v in sorted(vars(args).items()) if not k.startswith("_") and k not in ("func", "json", "verbose", "config")}
    resolved = json.loads(json.dumps(resolved, default=str))
    resolved.update({k: cfg[k] for k in ("encoder", "pretrain", "driver", "finetune") if k in cfg})
    try:
        result, where, artifacts = args.func(args, cfg)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    _write_run_manifest(Path(where) if where is not None else Path.cwd(), prog, resolved, args.seed, artifacts)
    if args.json:
        print(json.dumps(result, sort_keys=True, default=str))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
