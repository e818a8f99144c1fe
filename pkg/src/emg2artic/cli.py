"""Command line driver: synth, preprocess, train, eval, ablate, report.

Every command that produces a directory drops a run_manifest.json beside
its outputs (preprocess mutates the corpus in place and writes
preprocess_manifest.json instead, so the corpus generator's manifest
survives). Wall-clock timings live under the manifest's "timings" key;
everything else in the manifest, and all data outputs, are deterministic
for a fixed command line.

Config files are JSON with a config_version of 1 and one object per
section; unknown sections or keys are errors, not warnings. Verbosity
comes from the EMG2ARTIC_LOG environment variable (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import __version__, corpus
from .ablation import (
    HEATMAP_CSV,
    read_sweep,
    run_condition,
    run_sweep,
    select_subset,
    subset_condition,
)
from .eval_metrics import (
    REPORT_JSON,
    UtterancePrediction,
    evaluate,
    read_report,
    write_report,
)
from .model import EncoderConfig, LossWeights
from .nn_core import fnv1a64
from .report import (
    correlation_summary,
    heatmap_summary,
    render_correlation_svg,
    svg_heatmap,
)
from .signal_prep import PreprocessConfig, RawEmgRecording, preprocess_recording
from .synth_data import DependencyMatrix, SynthConfig, gen_corpus
from .trainer import (
    TrainConfig,
    load_checkpoint,
    make_train_item,
    predict_items,
    save_checkpoint,
    train,
)

LOG = logging.getLogger("emg2artic")

MANIFEST_FILE = "run_manifest.json"
CONFIG_VERSION = 1


class CliError(Exception):
    """User-facing failure; main() turns it into exit code 1."""


def _setup_logging() -> None:
    name = os.environ.get("EMG2ARTIC_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if name not in levels:
        name = "error"
    logging.basicConfig(
        level=levels[name],
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_config(path, allowed_sections) -> dict:
    """Parse a config file; only config_version plus allowed sections."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{p}: invalid JSON ({exc})")
    if not isinstance(payload, dict):
        raise CliError(f"{p}: top level must be a JSON object")
    if payload.get("config_version") != CONFIG_VERSION:
        raise CliError(f"{p}: config_version must be {CONFIG_VERSION}")
    unknown = sorted(set(payload) - {"config_version"} - set(allowed_sections))
    if unknown:
        raise CliError(f"{p}: unknown config sections {unknown}")
    return payload


def _from_section(cls, section: dict, where: str):
    """Build a config dataclass, rejecting unknown keys by name."""
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise CliError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{where}: {exc}")


def _manifest(out_dir, command, argv, seed, paths: dict, timings: dict,
              filename: str = MANIFEST_FILE) -> None:
    ident = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "tool_version": __version__,
    }
    ident.update(paths)
    run_id = f"{fnv1a64(json.dumps(ident, sort_keys=True)):016x}"
    payload = dict(ident)
    payload["config_version"] = CONFIG_VERSION
    payload["run_id"] = run_id
    payload["timings"] = {k: round(float(v), 3) for k, v in timings.items()}
    _write_json(Path(out_dir) / filename, payload)


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args, argv) -> int:
    out = Path(args.out)
    if not out.parent.exists():
        raise CliError(f"parent directory does not exist: {out.parent}")
    payload = load_config(args.config, {"synth"})
    section = dict(payload.get("synth", {}))
    if "duration_range_s" in section:
        section["duration_range_s"] = tuple(section["duration_range_s"])
    if "dependency" in section and section["dependency"] is not None:
        section["dependency"] = DependencyMatrix.from_json(section["dependency"])
    cfg = _from_section(SynthConfig, section, "synth section")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    t0 = time.perf_counter()
    gen_corpus(cfg, out)
    dt = time.perf_counter() - t0
    _manifest(out, "synth", argv, cfg.seed,
              {"config_path": _opt(args.config), "corpus_path": str(out)},
              {"total_s": dt})
    print(
        f"synth: wrote {cfg.n_train} train / {cfg.n_val} val / "
        f"{cfg.n_test} test utterances to {out} ({dt:.1f}s)"
    )
    return 0


def _opt(p) -> str | None:
    return None if p is None else str(p)


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args, argv) -> int:
    corpus_dir = Path(args.corpus)
    payload = load_config(args.config, {"preprocess"})
    cfg = _from_section(
        PreprocessConfig, payload.get("preprocess", {}), "preprocess section"
    )
    done, skipped, failures = 0, 0, []
    t0 = time.perf_counter()
    for split in corpus.SPLITS:
        try:
            utt_dirs = corpus.list_utterances(corpus_dir, split)
        except FileNotFoundError as exc:
            raise CliError(str(exc))
        for utt_dir in utt_dirs:
            if corpus.has_preprocessed(utt_dir) and not args.force:
                skipped += 1
                continue
            try:
                utt = corpus.load_utterance(utt_dir)
                rec = RawEmgRecording(
                    samples=utt.emg.astype("float64"),
                    sample_rate_hz=utt.sample_rate_hz,
                    utterance_id=utt.utterance_id,
                )
                prep = preprocess_recording(rec, cfg)
                corpus.save_preprocessed(
                    utt_dir, prep.samples, prep.sample_rate_hz, utt.utterance_id
                )
                done += 1
                LOG.debug("preprocessed %s", utt_dir.name)
            except Exception as exc:  # keep going; report all bad utterances
                failures.append(f"{utt_dir}: {exc}")
                LOG.error("%s: %s", utt_dir, exc)
    dt = time.perf_counter() - t0
    _manifest(corpus_dir, "preprocess", argv, None,
              {"config_path": _opt(args.config), "corpus_path": str(corpus_dir)},
              {"total_s": dt}, filename="preprocess_manifest.json")
    print(
        f"preprocess: {done} processed, {skipped} skipped, "
        f"{len(failures)} failed ({dt:.1f}s)"
    )
    for line in failures:
        print(f"  failed {line}", file=sys.stderr)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# train


def _load_model_configs(config_path, seed_override=None, epochs_override=None):
    payload = load_config(config_path, {"model", "train", "loss_weights"})
    model_cfg = _from_section(EncoderConfig, payload.get("model", {}), "model section")
    train_cfg = _from_section(TrainConfig, payload.get("train", {}), "train section")
    weights = _from_section(
        LossWeights, payload.get("loss_weights", {}), "loss_weights section"
    )
    if seed_override is not None:
        train_cfg = replace(train_cfg, seed=seed_override)
    if epochs_override is not None:
        train_cfg = replace(train_cfg, n_epochs=epochs_override)
    return model_cfg, train_cfg, weights


def _load_split_items(corpus_dir, split):
    items = []
    for utt_dir in corpus.list_utterances(Path(corpus_dir), split):
        try:
            utt = corpus.load_utterance(utt_dir, want_prep=True)
        except FileNotFoundError as exc:
            raise CliError(f"{exc} (run the preprocess command first)")
        items.append(make_train_item(utt))
    if not items:
        raise CliError(f"no utterances in split '{split}' of {corpus_dir}")
    return items


def cmd_train(args, argv) -> int:
    model_cfg, train_cfg, weights = _load_model_configs(
        args.config, args.seed, args.epochs
    )
    train_items = _load_split_items(args.corpus, "train")
    val_items = _load_split_items(args.corpus, "val")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = train(
        train_items, val_items, model_cfg, train_cfg, weights=weights, log=LOG.info
    )
    dt = time.perf_counter() - t0
    save_checkpoint(result.best, model_cfg, weights, out / "best")
    save_checkpoint(result.final, model_cfg, weights, out / "final")
    (out / "history.csv").write_text(result.history.to_csv())
    _write_json(
        out / "train_config.json",
        {
            "config_version": CONFIG_VERSION,
            "model": asdict(model_cfg),
            "train": asdict(train_cfg),
            "loss_weights": asdict(weights),
        },
    )
    _manifest(out, "train", argv, train_cfg.seed,
              {"config_path": _opt(args.config), "corpus_path": str(args.corpus)},
              {"total_s": dt})
    print(
        f"train: {train_cfg.n_epochs} epochs on {len(train_items)} utterances, "
        f"best epoch {result.best_epoch}; checkpoints in {out} ({dt:.1f}s)"
    )
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args, argv) -> int:
    items = _load_split_items(args.corpus, args.split)
    if args.oracle:
        preds = [
            UtterancePrediction(
                utterance_id=it.utterance_id,
                ema_pred=it.ema.copy(),
                ema_true=it.ema.copy(),
                pitch_pred=it.pitch.copy(),
                pitch_true=it.pitch.copy(),
                loudness_pred=it.loudness.copy(),
                loudness_true=it.loudness.copy(),
            )
            for it in items
        ]
    else:
        if args.checkpoint is None:
            raise CliError("--checkpoint is required unless --oracle is given")
        try:
            mp, model_cfg, _ = load_checkpoint(args.checkpoint)
        except (FileNotFoundError, ValueError) as exc:
            raise CliError(f"cannot load checkpoint: {exc}")
        preds = predict_items(items, mp, model_cfg)
    t0 = time.perf_counter()
    report = evaluate(preds, seed=args.seed if args.seed is not None else 0)
    dt = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    _manifest(out, "eval", argv, args.seed,
              {"config_path": None, "corpus_path": str(args.corpus),
               "checkpoint_path": _opt(args.checkpoint)},
              {"total_s": dt})
    print(correlation_summary(report), end="")
    print(f"eval: report written to {out}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _parse_subset(text: str) -> list:
    try:
        ids = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise CliError(f"bad --subset value '{text}': expected ids like 2,4")
    if not ids:
        raise CliError("--subset needs at least one electrode id")
    return ids


def cmd_ablate(args, argv) -> int:
    model_cfg, train_cfg, weights = _load_model_configs(args.config, args.seed)
    subset_ids = None if args.subset is None else _parse_subset(args.subset)
    families = {
        "remove": ("remove",),
        "useonly": ("useonly",),
        "both": ("remove", "useonly"),
    }[args.family]
    train_items = _load_split_items(args.corpus, "train")
    val_items = _load_split_items(args.corpus, "val")
    test_items = _load_split_items(args.corpus, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sweep = run_sweep(
        train_items,
        val_items,
        test_items,
        model_cfg,
        train_cfg,
        weights=weights,
        families=families,
        workers=args.workers,
        out_dir=out,
        log=LOG.info,
    )
    for kind, hm in sweep.heatmaps.items():
        unit = "drop rate" if kind == "remove" else "correlation"
        (out / f"heatmap_{kind}.svg").write_text(
            svg_heatmap(hm, f"electrode {kind} ({unit})")
        )
    if "useonly" in families:
        selection = select_subset(sweep.family("useonly"), k=args.select_k)
        _write_json(
            out / "subset_selection.json",
            {
                "config_version": CONFIG_VERSION,
                "k": args.select_k,
                "ids": list(selection.ids),
                "justifications": list(selection.justifications),
            },
        )
        for line in selection.justifications:
            print(f"ablate: {line}")
    if subset_ids is not None:
        cond = subset_condition(subset_ids)
        report = run_condition(
            train_items, val_items, test_items, cond, model_cfg, train_cfg,
            weights=weights, out_dir=out / "subset" / cond.name, log=LOG.info,
        )
        print(
            f"ablate: {cond.name} ema_mean r={report.r('ema_mean'):.4f} "
            f"loudness r={report.r('loudness'):.4f}"
        )
    dt = time.perf_counter() - t0
    _manifest(out, "ablate", argv, train_cfg.seed,
              {"config_path": _opt(args.config), "corpus_path": str(args.corpus)},
              {"total_s": dt})
    print(
        f"ablate: {len(sweep.conditions)} conditions "
        f"({', '.join(families)}); outputs in {out} ({dt:.1f}s)"
    )
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args, argv) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise CliError(f"not a directory: {run_dir}")
    wrote = []
    if (run_dir / REPORT_JSON).exists():
        rep = read_report(run_dir)
        svg_path = run_dir / "correlation_report.svg"
        svg_path.write_text(
            render_correlation_svg(rep, "test-set correlation by feature")
        )
        wrote.append(svg_path)
        print(correlation_summary(rep), end="")
    elif (run_dir / "ablation_report.json").exists():
        sweep = read_sweep(run_dir)
        for kind, hm in sweep.heatmaps.items():
            unit = "drop rate" if kind == "remove" else "correlation"
            svg_path = run_dir / f"heatmap_{kind}.svg"
            svg_path.write_text(svg_heatmap(hm, f"electrode {kind} ({unit})"))
            wrote.append(svg_path)
            print(heatmap_summary(hm), end="")
        full = sweep.report_for("full")
        svg_path = run_dir / "full_condition.svg"
        svg_path.write_text(
            render_correlation_svg(full, "all-electrode baseline correlation")
        )
        wrote.append(svg_path)
    else:
        raise CliError(
            f"no correlation_report.json or ablation_report.json in {run_dir}"
        )
    print(f"report: wrote {', '.join(p.name for p in wrote)} in {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="emg2artic",
        description="articulatory feature prediction from surface EMG",
    )
    p.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--out", required=True, help="corpus directory to create")
    sp.add_argument("--config", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("preprocess", help="filter and resample raw EMG in place")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--force", action="store_true",
                    help="redo utterances that already have preprocessed EMG")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train the encoder on a preprocessed corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None,
                    help="override epoch count; 0 writes the initial state only")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="correlation report for a checkpoint")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", default=None,
                    help="checkpoint directory (e.g. runs/train/best)")
    sp.add_argument("--split", default="test", choices=list(corpus.SPLITS))
    sp.add_argument("--seed", type=int, default=None,
                    help="bootstrap resampling seed (default 0)")
    sp.add_argument("--oracle", action="store_true",
                    help="score the targets against themselves (pipeline check)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="per-electrode retraining sweep")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--family", default="both",
                    choices=["remove", "useonly", "both"])
    sp.add_argument("--subset", default=None,
                    help="also train one subset condition, e.g. 2,4")
    sp.add_argument("--select-k", type=int, default=4, dest="select_k",
                    help="electrodes to pick from use-only-one scores")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="render figures for a finished run")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return int(args.func(args, argv))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
