"""Command-line front end.

Every subcommand reads its options from an optional JSON ``--config`` file
(flat keys, optionally overridden by a section named after the subcommand),
then from command-line flags, which win. The merged configuration is written
next to each artifact as ``<artifact>.config.json`` and JSON artifacts carry a
``provenance`` block with the config digest and seed.

Exit codes: 0 success, 2 invalid input or usage, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from ._seeding import config_digest
from .attention import AttentionModel, AttentionTrainConfig, train_attention
from .calibration import CalibrationResult, calibrate
from .captions import (Vocabulary, build_vocabulary, encode_one_hot, save_encoded,
                       select_fusion_weight, to_csr, train_text_classifier)
from .data import load_caption_store, load_feature_store, load_manifest, unfold
from .evaluation import (EvalReport, SyntheticConfig, format_report, generate_synthetic,
                         recognize_gallery, run_shuffled_eval, synthetic_captions)
from .exceptions import GalleryEventError
from .linear import LinearModel, TrainConfig, predict_scores, train_linear
from .segmentation import DistanceMetric, SegmentationConfig, detect_boundaries, metric_kind


class UsageError(Exception):
    pass


def print_report(report: EvalReport) -> str:
    """One-line ``mean ± std (repeats=R)`` summary in percent."""
    return format_report(report)


# (flag, key, type, default, help). type "flag" is a boolean switch.
_SEED = ("--seed", "seed", int, 0, "top-level random seed")
_OUT = ("--out", "out", str, None, "output path")
_MANIFEST = ("--manifest", "manifest", str, None, "gallery manifest (JSON)")
_FEATURES = ("--features", "features", str, None, "feature store (CSV)")
_CLASSIFIER = ("--classifier", "classifier", str, None, "linear model (JSON)")
_ATTENTION = ("--attention", "attention", str, None, "attention model (JSON)")
_CAPTIONS = ("--captions", "captions", str, None, "caption store (TSV)")
_LINEAR_OPTS = [
    ("--l2", "l2_penalty", float, 1e-4, "L2 penalty"),
    ("--lr", "learning_rate", float, 0.05, "learning rate"),
    ("--epochs", "max_epochs", int, 200, "maximum epochs"),
    ("--patience", "early_stop_patience", int, 10, "early-stopping patience"),
]
_SEG_OPTS = [
    ("--metric", "metric", str, "euclidean", "l2/euclidean or chi2/chi_squared"),
    ("--space", "space", str, "scores", "scores or embeddings"),
    ("--normalize", "normalize", "flag", False, "L2-normalise compared vectors"),
    ("--location-weight", "location_weight", float, 0.0, "weight of the km distance term"),
]
_THRESHOLD_OPTS = [
    ("--threshold", "threshold", float, None, "segmentation threshold"),
    ("--calibration", "calibration", str, None, "calibration JSON supplying the threshold"),
]

COMMANDS = {
    "synth": ("write a synthetic manifest, feature CSV and captions", [
        ("--classes", "num_classes", int, 5, "number of classes"),
        ("--dim", "dim", int, 16, "feature dimension"),
        ("--albums-per-class", "albums_per_class", int, 8, "albums per class"),
        ("--min-size", "min_size", int, 8, "smallest album"),
        ("--max-size", "max_size", int, 15, "largest album"),
        ("--separation", "class_separation", float, 1.0, "class separation"),
        ("--noise", "noise_scale", float, 0.1, "per-photo noise scale"),
        ("--irrelevant", "irrelevant_fraction", float, 0.0, "fraction of irrelevant photos"),
        ("--locations", "with_locations", "flag", False, "attach coordinates"),
        ("--no-captions", "no_captions", "flag", False, "skip captions.tsv"),
        _SEED, ("--out", "out", str, None, "output directory"),
    ], ["out"]),
    "train-linear": ("train the per-photo classifier", [
        _MANIFEST, _FEATURES, *_LINEAR_OPTS, _SEED, _OUT,
    ], ["manifest", "features", "out"]),
    "train-attention": ("train the attention pooling network", [
        _MANIFEST, _FEATURES,
        ("--subset-size", "subset_size", int, 10, "photos per training subset"),
        ("--lr", "learning_rate", float, 0.001, "learning rate"),
        ("--epochs", "max_epochs", int, 10, "maximum epochs"),
        ("--patience", "early_stop_patience", int, 2, "early-stopping patience"),
        ("--subsets-per-album", "subsets_per_album", int, 1, "subsets drawn per album"),
        ("--batch-size", "batch_size", int, 32, "minibatch size"),
        _SEED, _OUT,
    ], ["manifest", "features", "out"]),
    "build-vocab": ("build the caption vocabulary from training photos", [
        _MANIFEST, _CAPTIONS,
        ("--max-size", "max_size", int, 5000, "vocabulary size"),
        ("--stopwords", "stopwords", str, None, "stop-word file, one word per line"),
        ("--encoded-out", "encoded_out", str, None, "also write encoded captions (JSON lines)"),
        _SEED, ("--out", "out", str, None, "vocabulary file"),
    ], ["manifest", "captions", "out"]),
    "train-text": ("train the caption classifier", [
        _MANIFEST, _CAPTIONS, ("--vocab", "vocab", str, None, "vocabulary file"),
        *_LINEAR_OPTS, _SEED, _OUT,
    ], ["manifest", "captions", "vocab", "out"]),
    "calibrate": ("learn the segmentation threshold on training albums", [
        _MANIFEST, _FEATURES, _CLASSIFIER, _ATTENTION, *_SEG_OPTS,
        ("--repeats", "repeats", int, 1, "permutations averaged"),
        _SEED, _OUT,
    ], ["manifest", "features", "classifier", "attention"]),
    "segment": ("detect album boundaries in an ordered gallery", [
        _FEATURES, _CLASSIFIER, *_SEG_OPTS, *_THRESHOLD_OPTS,
        ("--manifest", "manifest", str, None, "manifest supplying photo locations"),
        _SEED, _OUT,
    ], ["features", "out"]),
    "predict": ("label every photo of an ordered gallery", [
        _FEATURES, _CLASSIFIER, _ATTENTION, *_SEG_OPTS, *_THRESHOLD_OPTS,
        ("--manifest", "manifest", str, None, "manifest supplying photo locations"),
        _SEED, _OUT,
    ], ["features", "classifier", "attention", "out"]),
    "fuse-weight": ("select the late-fusion weight on validation albums", [
        _MANIFEST, _FEATURES, _CAPTIONS, _CLASSIFIER,
        ("--text-classifier", "text_classifier", str, None, "caption model (JSON)"),
        ("--vocab", "vocab", str, None, "vocabulary file"),
        ("--grid-step", "grid_step", float, 0.01, "weight grid step"),
        _SEED, _OUT,
    ], ["manifest", "features", "captions", "classifier", "text_classifier", "vocab", "out"]),
    "evaluate": ("shuffled-gallery evaluation", [
        _MANIFEST, _FEATURES, _CLASSIFIER, _ATTENTION, *_SEG_OPTS, *_THRESHOLD_OPTS,
        ("--repeats", "repeats", int, 10, "shuffled repeats"),
        ("--method", "method", str, "pipeline", "pipeline or baseline"),
        _SEED, _OUT,
    ], ["manifest", "features", "classifier", "attention", "out"]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="galleryevent", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (help_text, opts, _) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file; flags override its values")
        for flag, key, typ, default, text in opts:
            text = f"{text} (default: {default})" if default not in (None, False) else text
            if typ == "flag":
                p.add_argument(flag, dest=key, action="store_true", default=argparse.SUPPRESS,
                               help=text)
            else:
                p.add_argument(flag, dest=key, type=typ, default=argparse.SUPPRESS, help=text)
    return parser


def effective_config(command, args) -> dict:
    """Defaults, then config-file values, then flags."""
    _, opts, required = COMMANDS[command]
    cfg = {key: default for _, key, _, default, _ in opts}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON at line {exc.lineno}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: top level must be an object")
        section = doc.get(command, {})
        for source in (doc, section if isinstance(section, dict) else {}):
            for key, value in source.items():
                if key in cfg:
                    cfg[key] = value
    for _, key, _, _, _ in opts:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    missing = [k for k in required if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join(
            "--" + k.replace("_", "-") for k in missing))
    return cfg


def _provenance(command, cfg):
    return {"command": command, "config_digest": config_digest(cfg), "seed": int(cfg["seed"])}


def _write_json(path, doc, command, cfg):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(doc, provenance=_provenance(command, cfg))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_config(path, command, cfg)


def _write_config(path, command, cfg):
    path = Path(path)
    doc = {"command": command, "config": cfg, "config_digest": config_digest(cfg)}
    path.with_name(path.name + ".config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _segmentation(cfg, threshold=0.0):
    return SegmentationConfig(DistanceMetric(metric_kind(cfg["metric"]), bool(cfg["normalize"])),
                              cfg["space"], threshold, float(cfg["location_weight"]))


def _threshold(cfg):
    if cfg.get("threshold") is not None:
        return float(cfg["threshold"])
    if cfg.get("calibration"):
        return CalibrationResult.load(cfg["calibration"]).threshold
    raise UsageError("one of --threshold or --calibration is required")


def _gallery_locations(cfg, photo_ids):
    if not cfg.get("manifest"):
        return None
    locs = load_manifest(cfg["manifest"]).locations()
    return [locs.get(pid) for pid in photo_ids]


def _manifest_and_store(cfg):
    manifest = load_manifest(cfg["manifest"])
    return manifest, load_feature_store(cfg["features"], manifest)


def _caption_matrix(manifest, captions, vocab):
    return to_csr([encode_one_hot(captions.get(pid, ()), vocab) for pid in manifest.photo_ids],
                  len(vocab))


def cmd_synth(cfg):
    config = SyntheticConfig(
        num_classes=cfg["num_classes"], dim=cfg["dim"], albums_per_class=cfg["albums_per_class"],
        album_size_range=(cfg["min_size"], cfg["max_size"]),
        class_separation=cfg["class_separation"], noise_scale=cfg["noise_scale"],
        irrelevant_fraction=cfg["irrelevant_fraction"], seed=cfg["seed"],
        with_locations=bool(cfg["with_locations"]),
    )
    manifest, store = generate_synthetic(config)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", manifest.to_dict(), "synth", cfg)
    store.save(out / "features.csv", manifest.photo_ids)
    _write_config(out / "features.csv", "synth", cfg)
    if not cfg["no_captions"]:
        synthetic_captions(manifest, cfg["seed"]).save(out / "captions.tsv")
        _write_config(out / "captions.tsv", "synth", cfg)
    return f"wrote {manifest.num_photos} photos in {len(manifest.albums)} albums to {out}"


def _train_config(cfg, multi_label):
    return TrainConfig(float(cfg["l2_penalty"]), float(cfg["learning_rate"]),
                       int(cfg["max_epochs"]), int(cfg["early_stop_patience"]), int(cfg["seed"]),
                       multi_label)


def cmd_train_linear(cfg):
    manifest, store = _manifest_and_store(cfg)
    model = train_linear(unfold(manifest, store), _train_config(cfg, manifest.is_multi_label),
                         manifest.num_classes)
    _write_json(cfg["out"], model.to_dict(), "train-linear", cfg)
    return f"linear model ({model.num_classes} classes, dim {model.dim}) -> {cfg['out']}"


def cmd_train_attention(cfg):
    manifest, store = _manifest_and_store(cfg)
    config = AttentionTrainConfig(
        subset_size=int(cfg["subset_size"]), learning_rate=float(cfg["learning_rate"]),
        max_epochs=int(cfg["max_epochs"]), early_stop_patience=int(cfg["early_stop_patience"]),
        seed=int(cfg["seed"]), subsets_per_album=int(cfg["subsets_per_album"]),
        batch_size=int(cfg["batch_size"]),
    )
    model = train_attention(manifest, store, config)
    _write_json(cfg["out"], model.to_dict(), "train-attention", cfg)
    return f"attention model ({model.num_classes} classes, dim {model.dim}) -> {cfg['out']}"


def cmd_build_vocab(cfg):
    manifest = load_manifest(cfg["manifest"])
    captions = load_caption_store(cfg["captions"])
    stop = None
    if cfg.get("stopwords"):
        stop = Path(cfg["stopwords"]).read_text(encoding="utf-8").split()
    vocab = build_vocabulary(captions, manifest.photo_ids, int(cfg["max_size"]), stop)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    _write_config(out, "build-vocab", cfg)
    if cfg.get("encoded_out"):
        ids = manifest.photo_ids
        save_encoded(cfg["encoded_out"], ids, [encode_one_hot(captions.get(p, ()), vocab)
                                               for p in ids])
        _write_config(cfg["encoded_out"], "build-vocab", cfg)
    return f"vocabulary of {len(vocab)} words -> {out}"


def cmd_train_text(cfg):
    manifest = load_manifest(cfg["manifest"])
    captions = load_caption_store(cfg["captions"])
    vocab = Vocabulary.load(cfg["vocab"])
    ids = manifest.photo_ids
    encoded = [encode_one_hot(captions.get(pid, ()), vocab) for pid in ids]
    labels = [a.labels for a in manifest.albums for _ in a.photos]
    model = train_text_classifier(encoded, labels, _train_config(cfg, manifest.is_multi_label),
                                  manifest.num_classes)
    _write_json(cfg["out"], model.to_dict(), "train-text", cfg)
    return f"text model ({model.num_classes} classes, vocabulary {model.dim}) -> {cfg['out']}"


def cmd_calibrate(cfg):
    manifest, store = _manifest_and_store(cfg)
    result = calibrate(manifest, store, LinearModel.load(cfg["classifier"]),
                       AttentionModel.load(cfg["attention"]), _segmentation(cfg),
                       int(cfg["seed"]), int(cfg["repeats"]))
    out = cfg["out"] or str(Path(cfg["manifest"]).with_name("calibration.json"))
    _write_json(out, result.to_dict(), "calibrate", dict(cfg, out=out))
    return f"threshold {result.threshold:.6g}, training accuracy {100 * result.accuracy:.2f}%"


def cmd_segment(cfg):
    store = load_feature_store(cfg["features"])
    X = store.matrix()
    seg = _segmentation(cfg, _threshold(cfg))
    if seg.space == "scores":
        if not cfg.get("classifier"):
            raise UsageError("--classifier is required when --space scores")
        X = predict_scores(LinearModel.load(cfg["classifier"]), X)
    boundaries = detect_boundaries(X, _gallery_locations(cfg, store.photo_ids), seg)
    _write_json(cfg["out"], boundaries.to_dict(seg), "segment", cfg)
    return f"{boundaries.num_albums} albums in {len(X)} photos -> {cfg['out']}"


def cmd_predict(cfg):
    store = load_feature_store(cfg["features"])
    ids = store.photo_ids
    classifier = LinearModel.load(cfg["classifier"])
    seg = _segmentation(cfg, _threshold(cfg))
    labels, boundaries = recognize_gallery(store.matrix(), classifier,
                                           AttentionModel.load(cfg["attention"]), seg,
                                           _gallery_locations(cfg, ids), return_boundaries=True)
    doc = {"photo_ids": ids, "labels": labels.tolist(), **boundaries.to_dict(seg)}
    _write_json(cfg["out"], doc, "predict", cfg)
    return f"labelled {len(ids)} photos in {boundaries.num_albums} albums -> {cfg['out']}"


def cmd_fuse_weight(cfg):
    manifest, store = _manifest_and_store(cfg)
    captions = load_caption_store(cfg["captions"])
    vocab = Vocabulary.load(cfg["vocab"])
    p_emb = predict_scores(LinearModel.load(cfg["classifier"]), store.matrix(manifest.photo_ids))
    text_model = LinearModel.load(cfg["text_classifier"])
    if text_model.dim != len(vocab):
        raise UsageError(f"text model expects {text_model.dim} words, vocabulary has {len(vocab)}")
    p_txt = predict_scores(text_model, _caption_matrix(manifest, captions, vocab))
    labels = [a.labels for a in manifest.albums for _ in a.photos]
    w, acc = select_fusion_weight(p_emb, p_txt, labels, float(cfg["grid_step"]),
                                  return_accuracy=True)
    _write_json(cfg["out"], {"weight": w, "accuracy": acc, "grid_step": cfg["grid_step"]},
                "fuse-weight", cfg)
    return f"fusion weight {w:.2f}, validation accuracy {100 * acc:.2f}%"


def cmd_evaluate(cfg):
    manifest, store = _manifest_and_store(cfg)
    seg = _segmentation(cfg, _threshold(cfg) if cfg["method"] == "pipeline" else 0.0)
    report = run_shuffled_eval(manifest, store, LinearModel.load(cfg["classifier"]),
                               AttentionModel.load(cfg["attention"]), seg, int(cfg["repeats"]),
                               int(cfg["seed"]), cfg["method"])
    _write_json(cfg["out"], report.to_dict(), "evaluate", cfg)
    return print_report(report)


HANDLERS = {
    "synth": cmd_synth, "train-linear": cmd_train_linear, "train-attention": cmd_train_attention,
    "build-vocab": cmd_build_vocab, "train-text": cmd_train_text, "calibrate": cmd_calibrate,
    "segment": cmd_segment, "predict": cmd_predict, "fuse-weight": cmd_fuse_weight,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = effective_config(args.command, args)
        message = HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"galleryevent {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (GalleryEventError, ValueError, OSError) as exc:
        print(f"galleryevent {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"galleryevent {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
