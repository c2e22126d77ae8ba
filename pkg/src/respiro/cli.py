"""Command-line entry points.

Every subcommand prints a single JSON document on stdout; logs and
per-file failures go to stderr. Exit codes: 0 success, 1 usage or config,
2 data, 3 capacity or integrity, 4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import plotting
from .audio import Waveform, fix_duration, load_wav, resample, write_wav
from .classifier import AftBatch, AftClassifier, fit, load_classifier, predict, save_classifier
from .config import flat_json, load_config
from .corpus import LABELS, MixPolicy, SampleRecord, build_mixed, load_manifest, write_manifest
from .diffusion import build_fast_schedule, sample_array
from .errors import ArgumentError, DataError, RespiroError
from .features import (
    CLASSIFIER_FBANK,
    VOCODER_MEL,
    classifier_features,
    vocoder_mel,
    write_pgm,
)
from .metrics import aggregate_seeds, confusion, confusion_csv, icbhi_metrics
from .serialize import atomic_write, load_cache, save_cache
from .vocoder import Vocoder, load_vocoder, save_vocoder, train_vocoder

log = logging.getLogger("respiro")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ArgumentError(message)


def _threads():
    raw = os.environ.get("RESPIRO_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ArgumentError(f"RESPIRO_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ArgumentError("RESPIRO_THREADS must be >= 1")
    return n


def _map(fn, items, parallel=True):
    n = _threads() if parallel else 1
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def _write_json(path, obj):
    atomic_write(path, (_dumps(obj) + "\n").encode("utf-8"))


def _write_text(path, text):
    atomic_write(path, text.encode("utf-8"))


def _resolve(manifest_path, record_path):
    if os.path.isabs(record_path):
        return record_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), record_path)


def _read_manifest(path):
    try:
        return load_manifest(path)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None


def _save_config(out_dir, cfg):
    _write_json(os.path.join(out_dir, "config.json"), flat_json(cfg))


# -- feature preparation ------------------------------------------------------


def _feature_configs(cfg):
    sr = cfg.dsp.sample_rate
    return replace(VOCODER_MEL, sample_rate=sr), replace(CLASSIFIER_FBANK, sample_rate=sr)


def _prepare(path, pipeline, cfg):
    """Cache arrays for one clip: ``[waveform, mel]`` or ``[features]``."""
    voc_cfg, clf_cfg = _feature_configs(cfg)
    w = resample(load_wav(path), cfg.dsp.sample_rate)
    if pipeline == "vocoder":
        w = fix_duration(w, cfg.dsp.vocoder_seconds)
        mel = vocoder_mel(w, voc_cfg).values
        return [w.samples[: len(mel) * voc_cfg.hop_length], mel]
    w = fix_duration(w, cfg.dsp.classifier_seconds)
    return [classifier_features(w, clf_cfg)]


def _cached(record, manifest, pipeline, cfg, feature_dir):
    if feature_dir:
        cache = os.path.join(feature_dir, f"{record.id}.{pipeline}.rsf")
        if os.path.exists(cache):
            return load_cache(cache)
    return _prepare(_resolve(manifest, record.path), pipeline, cfg)


# -- subcommands --------------------------------------------------------------


def cmd_featurize(args, cfg):
    _feature_configs(cfg)  # config faults fail once here, not once per file
    records = _read_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)

    def work(record):
        audio = _resolve(args.manifest, record.path)
        cache = os.path.join(args.out, f"{record.id}.{args.pipeline}.rsf")
        try:
            if os.path.exists(cache) and os.path.getmtime(cache) >= os.path.getmtime(audio):
                return "skipped", record.id, None
            save_cache(cache, _prepare(audio, args.pipeline, cfg))
            return "written", record.id, None
        except (RespiroError, OSError) as exc:
            return "failed", record.id, str(exc)

    results = _map(work, records)
    failed = [(rid, msg) for status, rid, msg in results if status == "failed"]
    for rid, msg in failed:
        print(f"featurize: {rid}: {msg}", file=sys.stderr)
    report = {
        "pipeline": args.pipeline,
        "written": sum(1 for s, _, _ in results if s == "written"),
        "skipped": sum(1 for s, _, _ in results if s == "skipped"),
        "failed": [rid for rid, _ in failed],
    }
    return report, (2 if failed else 0)


def _vocoder_model_config(cfg, mel_bins):
    model = cfg.vocoder.model
    if model.n_mels != mel_bins:
        raise ArgumentError(f"vocoder expects {model.n_mels} mel bins, features have {mel_bins}")
    return model


def cmd_train_vocoder(args, cfg):
    manifest = args.manifest or cfg.corpus.manifest
    if not manifest:
        raise ArgumentError("train-vocoder needs --manifest or corpus.manifest in the config")
    feature_dir = args.features or cfg.corpus.feature_dir
    records = [r for r in _read_manifest(manifest) if r.split == "train" and r.source == "real"]
    if not records:
        raise DataError("no real training records in the manifest")
    arrays = _map(lambda r: _cached(r, manifest, "vocoder", cfg, feature_dir), records)
    waves = np.stack([a[0] for a in arrays])
    mels = np.stack([a[1] for a in arrays])
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    steps = args.steps
    if steps < 1:
        raise ArgumentError("--steps must be >= 1")
    schedule = cfg.diffusion.schedule()
    model = Vocoder(_vocoder_model_config(cfg, mels.shape[2]), seed=seed)
    voc = cfg.vocoder
    losses = train_vocoder(
        model, waves, mels, schedule, steps, np.random.default_rng(seed),
        lr=voc.lr, batch_size=voc.batch_size, crop_frames=voc.crop_frames, log_every=voc.log_every,
    )
    os.makedirs(args.out, exist_ok=True)
    extra = {"fast/betas": np.asarray(cfg.diffusion.fast_betas, dtype=np.float32)}
    save_vocoder(os.path.join(args.out, "vocoder.rck"), model, schedule, extra)
    every = max(1, min(voc.log_every or steps, steps))
    rows, points = [], []
    for end in range(every, steps + 1, every):
        mean = float(np.mean(losses[end - every : end]))
        rows.append(json.dumps({"step": end, "loss": mean}))
        points.append((end, mean))
    _write_text(os.path.join(args.out, "vocoder_log.jsonl"), "".join(r + "\n" for r in rows))
    if points:
        plotting.loss_curve(*zip(*points), os.path.join(args.out, "vocoder_loss.png"))
    _save_config(args.out, cfg)
    head = float(np.mean(losses[: min(every, steps)]))
    tail = float(np.mean(losses[-min(every, steps):]))
    return {
        "checkpoint": "vocoder.rck",
        "records": len(records),
        "steps": steps,
        "seed": seed,
        "parameters": model.num_parameters(),
        "initial_loss": head,
        "final_loss": tail,
    }, 0


def _parse_counts(text):
    counts = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        label, sep, value = part.partition("=")
        if not sep or label not in LABELS:
            raise ArgumentError(f"bad per-class count {part!r}; expected label=count with label in {LABELS}")
        try:
            n = int(value)
        except ValueError:
            raise ArgumentError(f"count for {label!r} is not an integer: {value!r}") from None
        if n < 0:
            raise ArgumentError(f"count for {label!r} must be >= 0")
        counts[label] = n
    return counts


def _sampler(tensors, schedule, cfg, full):
    if full or not cfg.diffusion.fast:
        return None
    betas = tensors.get("fast/betas")
    betas = cfg.diffusion.fast_betas if betas is None else betas.astype(np.float64)
    return build_fast_schedule(schedule, betas)


def cmd_generate(args, cfg):
    counts = _parse_counts(args.per_class_counts)
    model, schedule, tensors = load_vocoder(args.checkpoint)
    fast = _sampler(tensors, schedule, cfg, args.full)
    records = _read_manifest(args.manifest)
    pools = {}
    for label, n in counts.items():
        pool = sorted(
            (r for r in records if r.label == label and r.split == "train" and r.source == "real"),
            key=lambda r: r.id,
        )
        if n and not pool:
            raise DataError(f"no real training records of class {label!r} to condition on")
        order = np.random.default_rng([args.seed, LABELS.index(label)]).permutation(len(pool))
        pools[label] = [pool[i] for i in order]
    jobs = [
        (label, i, pools[label][i % len(pools[label])])
        for label in LABELS
        for i in range(counts.get(label, 0))
    ]
    wav_dir = os.path.join(args.out, "wav")
    os.makedirs(wav_dir, exist_ok=True)
    mel_cache = {}

    def conditioning(record):
        if record.id not in mel_cache:
            mel_cache[record.id] = _cached(record, args.manifest, "vocoder", cfg, args.features)[1]
        return mel_cache[record.id]

    def work(job):
        label, i, cond = job
        rng = np.random.default_rng([args.seed, LABELS.index(label), i])
        audio = sample_array(model, conditioning(cond), schedule, rng, fast=fast)
        sample_id = f"syn-{label}-{i:05d}"
        rel = f"wav/{sample_id}.wav"
        write_wav(os.path.join(args.out, rel), Waveform(audio, cfg.dsp.sample_rate))
        return SampleRecord(sample_id, rel, label, "train", "synthetic"), cond.id

    results = _map(work, jobs)
    write_manifest(os.path.join(args.out, "synthetic.jsonl"), [r for r, _ in results])
    _save_config(args.out, cfg)
    return {
        "manifest": "synthetic.jsonl",
        "counts": {label: counts.get(label, 0) for label in LABELS},
        "conditioning": {r.id: cond for r, cond in results},
        "sampler": "ancestral" if fast is None else "fast",
        "seed": args.seed,
    }, 0


def cmd_mix(args, cfg):
    real = _read_manifest(args.real_manifest)
    synth = _read_manifest(args.synth_manifest)
    out_dir = os.path.dirname(os.path.abspath(args.out))

    def rebase(records, manifest):
        return [
            replace(r, path=os.path.relpath(_resolve(manifest, r.path), out_dir)) for r in records
        ]

    mixed, stats = build_mixed(
        rebase(real, args.real_manifest), rebase(synth, args.synth_manifest), MixPolicy(args.n)
    )
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(args.out, mixed)
    ratio = stats.synthetic_ratio()
    report = {
        "n": args.n,
        "row": [ratio[label] for label in LABELS],
        "synthetic_ratio": ratio,
        "train_counts": {
            label: sum(stats.counts[label]["train"].values()) for label in LABELS
        },
        "records": len(mixed),
    }
    stem = os.path.splitext(args.out)[0]
    _write_json(stem + ".stats.json", stats.to_json())
    return report, 0


def _load_split(records, manifest, cfg, feature_dir):
    if not records:
        return AftBatch(np.zeros((0, 1, 1), np.float32), np.zeros(0), np.zeros(0))
    arrays = _map(lambda r: _cached(r, manifest, "classifier", cfg, feature_dir)[0], records)
    return AftBatch(
        np.stack(arrays),
        [r.label_index for r in records],
        [r.domain_index for r in records],
    )


def _clf_model_config(cfg, features):
    model = cfg.classifier.model
    shape = features.shape[1:]
    if shape != (model.n_frames, model.n_mels):
        raise ArgumentError(
            f"classifier expects {model.n_frames} x {model.n_mels} features, got {shape[0]} x {shape[1]}"
        )
    return model


def _write_confusion(out_dir, prefix, cm, title):
    _write_text(os.path.join(out_dir, prefix + ".csv"), confusion_csv(cm))
    write_pgm(cm.astype(np.float64), os.path.join(out_dir, prefix + ".pgm"), spectrogram=False)
    plotting.confusion_matrix(cm, os.path.join(out_dir, prefix + ".png"), title)


def cmd_train_clf(args, cfg):
    manifest = args.manifest or cfg.corpus.manifest
    if not manifest:
        raise ArgumentError("train-clf needs --manifest or corpus.manifest in the config")
    feature_dir = args.features or cfg.corpus.feature_dir
    records = _read_manifest(manifest)
    train = _load_split([r for r in records if r.split == "train"], manifest, cfg, feature_dir)
    test = _load_split([r for r in records if r.split == "test"], manifest, cfg, feature_dir)
    if len(train) == 0:
        raise DataError("no training records in the manifest")
    model_cfg = _clf_model_config(cfg, train.features)
    train_cfg = cfg.classifier.train
    if args.aft is not None:
        train_cfg = replace(train_cfg, aft=args.aft)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    seeds = args.seeds if args.seeds else cfg.seeds
    cfg.seeds = list(seeds)
    cfg.classifier = replace(cfg.classifier, train=train_cfg)
    os.makedirs(args.out, exist_ok=True)

    def run(seed):
        model = AftClassifier(model_cfg, seed=seed)
        history, best = fit(model, train, train_cfg, seed, test=test if len(test) else None)
        model.load_state_dict(best)
        seed_dir = os.path.join(args.out, f"seed{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        _write_text(
            os.path.join(seed_dir, "log.jsonl"),
            "".join(json.dumps(row, sort_keys=True) + "\n" for row in history),
        )
        save_classifier(os.path.join(seed_dir, "best.rck"), model)
        plotting.training_curves(history, os.path.join(seed_dir, "curves.png"), f"seed {seed}")
        if not len(test):
            return None
        cm = confusion(predict(model, test.features).argmax(1), test.labels)
        _write_confusion(seed_dir, "confusion", cm, f"seed {seed}")
        report = icbhi_metrics(cm)
        _write_json(os.path.join(seed_dir, "metrics.json"), report.to_json())
        return report

    parallel = args.parallel_seeds
    reports = _map(run, list(seeds), parallel=parallel)
    _save_config(args.out, cfg)
    summary = {"aft": train_cfg.aft, "epochs": train_cfg.epochs, "seeds": list(seeds)}
    if reports and reports[0] is not None:
        summary["metrics"] = aggregate_seeds(reports).to_json()
        summary["per_seed"] = {str(s): r.to_json() for s, r in zip(seeds, reports)}
    _write_json(os.path.join(args.out, "report.json"), summary)
    return summary, 0


def cmd_eval(args, cfg):
    model = load_classifier(args.checkpoint)
    records = [r for r in _read_manifest(args.manifest) if r.split == "test"]
    if not records:
        raise DataError("no test records in the manifest")
    data = _load_split(records, args.manifest, cfg, args.features)
    cm = confusion(predict(model, data.features).argmax(1), data.labels)
    report = icbhi_metrics(cm).to_json()
    report["confusion"] = cm.tolist()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_confusion(args.out, "confusion", cm, "test split")
        _write_json(os.path.join(args.out, "metrics.json"), report)
    return report, 0


def cmd_spectrogram_dump(args, cfg):
    ids = [i for i in (p.strip() for p in args.ids.split(",")) if i]
    if not ids:
        raise ArgumentError("--ids must name at least one record")
    model, schedule, tensors = load_vocoder(args.checkpoint)
    fast = _sampler(tensors, schedule, cfg, args.full)
    by_id = {r.id: r for r in _read_manifest(args.manifest)}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"ids not in manifest: {missing}")
    voc_cfg, _ = _feature_configs(cfg)
    os.makedirs(args.out, exist_ok=True)
    written = {}
    for k, rid in enumerate(ids):
        real = _cached(by_id[rid], args.manifest, "vocoder", cfg, args.features)[1]
        audio = sample_array(model, real, schedule, np.random.default_rng([args.seed, k]), fast=fast)
        generated = vocoder_mel(Waveform(audio, cfg.dsp.sample_rate), voc_cfg).values
        names = [f"{rid}.real.pgm", f"{rid}.generated.pgm", f"{rid}.png"]
        write_pgm(real, os.path.join(args.out, names[0]))
        write_pgm(generated, os.path.join(args.out, names[1]))
        plotting.spectrogram_pair(real, generated, os.path.join(args.out, names[2]), rid)
        corr = float(np.corrcoef(real.ravel(), generated.ravel())[0, 1])
        written[rid] = {"files": names, "pearson": corr}
    return {"ids": written, "seed": args.seed}, 0


# -- wiring -------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="respiro", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.set_defaults(fn=fn)
        return p

    p = add("featurize", cmd_featurize, "write per-record feature caches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pipeline", choices=("vocoder", "classifier"), required=True)
    p.add_argument("--out", required=True)

    p = add("train-vocoder", cmd_train_vocoder, "train the diffusion vocoder")
    p.add_argument("--manifest")
    p.add_argument("--features", help="directory of vocoder caches")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("generate", cmd_generate, "synthesize class-conditioned samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="directory of vocoder caches")
    p.add_argument("--per-class-counts", required=True, help="e.g. both=137,wheeze=0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true", help="use all training steps instead of the fast ladder")
    p.add_argument("--out", required=True)

    p = add("mix", cmd_mix, "build a Mixed-N manifest")
    p.add_argument("--real-manifest", required=True)
    p.add_argument("--synth-manifest", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="output manifest path")

    p = add("train-clf", cmd_train_clf, "train the classifier over seeds")
    p.add_argument("--manifest")
    p.add_argument("--features", help="directory of classifier caches")
    aft = p.add_mutually_exclusive_group()
    aft.add_argument("--aft", dest="aft", action="store_true", default=None)
    aft.add_argument("--no-aft", dest="aft", action="store_false")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--parallel-seeds", action="store_true")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate a classifier checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="directory of classifier caches")
    p.add_argument("--out", help="directory for confusion CSV/PGM/PNG")

    p = add("spectrogram-dump", cmd_spectrogram_dump, "real vs generated mel images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="directory of vocoder caches")
    p.add_argument("--ids", required=True, help="comma-separated record ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ArgumentError as exc:
        print(f"respiro: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        report, code = args.fn(args, cfg)
    except RespiroError as exc:
        print(f"respiro: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"respiro: error: {exc}", file=sys.stderr)
        return 2
    print(_dumps(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
