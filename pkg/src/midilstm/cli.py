"""Command-line entry point.

Commands: ingest, train, generate, eval, variants, gradcheck, roundtrip.
Every run is reproducible from its manifest: one --seed flag fans out to
named sub-seeds (init, shuffle, dropout, sampling.N, seedwin) by a fixed
derivation, resolved configuration is echoed into the manifest, and inputs
are recorded by content hash. Exit codes: 0 success, 1 usage error, 2 data
error, 3 check failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    DEFAULT_MAX_DUR,
    DEFAULT_WINDOW,
    CorpusFile,
    load_corpus,
    save_corpus,
    tokenize,
)
from .errors import DataError, NoUsableFiles, VocabMismatch
from .generator import GenConfig, emit, generate, pick_seed
from .lstm import ModelConfig, grad_check, reference_check_config
from .midi_io import events_equivalent, parse_midi, write_midi
from .numerics import Rng, derive_seed
from .score import DEFAULT_GRID, events_to_piece, piece_to_midi
from .trainer import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    run_variants,
    train,
    write_metrics,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3

MIDI_SUFFIXES = (".mid", ".midi")


class UsageError(ValueError):
    """Bad flags, config keys, or values. Subclasses ValueError so argparse
    turns it into a normal usage failure when raised from a type= parser."""


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise UsageError(f"bad hidden sizes {text!r} (want e.g. 512,512,512)") from None
    if not sizes or any(s < 1 for s in sizes):
        raise UsageError(f"bad hidden sizes {text!r}")
    return sizes


# every key a config file may carry, with its parser
CONFIG_KEYS = {
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "optimizer": str,
    "clip_norm": float,
    "checkpoint_every": int,
    "holdout": float,
    "hidden": _parse_hidden,
    "dropout": float,
    "window_len": int,
    "grid": int,
    "max_dur": int,
    "length": int,
    "temperature": float,
    "mode": str,
    "repeat_cap": int,
    "count": int,
}


def load_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {value.strip()!r}") from None
    return values


def resolve_config(args, defaults: dict) -> dict:
    """defaults < config file < explicit CLI flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        resolved.update(load_config_file(args.config))
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _relative_to(path, root) -> str:
    try:
        return str(Path(path).resolve().relative_to(Path(root).resolve()))
    except ValueError:
        return Path(path).name


def write_manifest(out_dir, command: str, config: dict, inputs, outputs,
                   seed: int, sub_seeds, extra: dict | None = None) -> Path:
    """Reproducibility record; deliberately contains no timestamps or
    absolute paths, so identical runs write identical manifests."""
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(config.items())},
        "inputs": [{"name": Path(p).name, "sha256": _sha256(p)} for p in inputs],
        "outputs": [_relative_to(p, out_dir) for p in outputs],
        "seeds": {"master": seed, **{label: derive_seed(seed, label) for label in sub_seeds}},
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / f"{command}_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ---

def cmd_ingest(args) -> int:
    cfg = resolve_config(args, {
        "grid": DEFAULT_GRID, "window_len": DEFAULT_WINDOW, "max_dur": DEFAULT_MAX_DUR,
    })
    midi_dir = Path(args.midi_dir)
    if not midi_dir.is_dir():
        raise NoUsableFiles(f"{midi_dir} is not a directory")
    paths = sorted(p for p in midi_dir.iterdir() if p.suffix.lower() in MIDI_SUFFIXES)

    corpus = CorpusFile(cfg["grid"], cfg["window_len"], cfg["max_dur"])
    used = []
    skipped = 0
    dangling_total = 0
    for path in paths:
        try:
            piece, dangling = events_to_piece(parse_midi(path.read_bytes()), cfg["grid"])
        except DataError as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            skipped += 1
            continue
        if dangling:
            print(f"warning: {path.name}: {dangling} unmatched note-on(s) closed at "
                  f"end of track", file=sys.stderr)
            dangling_total += dangling
        corpus.songs.append(tokenize(piece, cfg["max_dur"]))
        used.append(path)
    if not corpus.songs:
        raise NoUsableFiles(f"no parseable MIDI files in {midi_dir}")

    out = _out_dir(args)
    corpus_path = out / "corpus.txt"
    save_corpus(corpus_path, corpus)
    note_vocab, dur_vocab = corpus.build_vocabs()
    n_tokens = sum(len(s[0]) for s in corpus.songs)
    print(f"songs: {len(corpus.songs)}  skipped: {skipped}  tokens: {n_tokens}  "
          f"note vocab: {len(note_vocab)}  duration vocab: {len(dur_vocab)}")
    write_manifest(out, "ingest", cfg, used, [corpus_path], args.seed, [],
                   extra={"skipped_files": skipped, "dangling_note_ons": dangling_total})
    return EXIT_OK


def _train_config_from(cfg: dict, corpus: CorpusFile, note_vocab, dur_vocab,
                       seed: int) -> TrainConfig:
    if cfg.get("grid") is not None and cfg["grid"] != corpus.grid:
        raise VocabMismatch(f"config grid {cfg['grid']} != corpus grid {corpus.grid}")
    if cfg.get("window_len") is not None and cfg["window_len"] != corpus.window_len:
        raise VocabMismatch(
            f"config window_len {cfg['window_len']} != corpus L {corpus.window_len}")
    model = ModelConfig(
        note_vocab_size=len(note_vocab),
        dur_vocab_size=len(dur_vocab),
        hidden_sizes=cfg["hidden"],
        dropout=cfg["dropout"],
        window_len=corpus.window_len,
    )
    return TrainConfig(
        model=model,
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        optimizer=cfg["optimizer"],
        seed=seed,
        clip_norm=cfg["clip_norm"],
        checkpoint_every=cfg["checkpoint_every"],
        holdout=cfg["holdout"],
    )


_TRAIN_DEFAULTS = {
    "epochs": 10, "batch_size": 64, "lr": 1e-3, "optimizer": "adam",
    "clip_norm": 5.0, "checkpoint_every": 10, "holdout": 0.0,
    "hidden": (512, 512, 512), "dropout": 0.3, "grid": None, "window_len": None,
}


def cmd_train(args) -> int:
    cfg = resolve_config(args, _TRAIN_DEFAULTS)
    corpus = load_corpus(args.corpus)
    note_vocab, dur_vocab = corpus.build_vocabs()
    dataset = corpus.to_dataset(note_vocab, dur_vocab)
    train_config = _train_config_from(cfg, corpus, note_vocab, dur_vocab, args.seed)

    out = _out_dir(args)
    result = train(dataset, train_config, note_vocab, dur_vocab, out_dir=out,
                   on_epoch=lambda row: print(
                       f"epoch {row.epoch}: loss {row.loss:.4f}  "
                       f"note_acc {row.note_acc:.3f}  dur_acc {row.dur_acc:.3f}"))
    metrics_path = out / "metrics.csv"
    write_metrics(metrics_path, result.metrics)
    if result.holdout_metrics is not None:
        h = result.holdout_metrics
        print(f"holdout: loss {h.loss:.4f}  note_acc {h.note_acc:.3f}  "
              f"dur_acc {h.dur_acc:.3f}  note_ppl {h.note_ppl:.2f}")
    outputs = [metrics_path] + [Path(p) for p in result.checkpoint_paths]
    write_manifest(out, "train", cfg, [args.corpus], outputs, args.seed,
                   ["init", "shuffle", "dropout"])
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return EXIT_OK


_GEN_DEFAULTS = {
    "count": 1, "length": 500, "temperature": 1.0, "mode": "sample", "repeat_cap": 8,
}


def _resolve_seed_window(args, corpus: CorpusFile, dataset, seed: int):
    """Returns (seed_notes, seed_durs, description dict)."""
    L = corpus.window_len
    if args.seed_window:
        song_text, sep, off_text = args.seed_window.partition(":")
        try:
            song, offset = int(song_text), int(off_text)
        except ValueError:
            sep = ""
        if not sep:
            raise UsageError("--seed-window wants SONG:OFFSET")
        if not 0 <= song < len(corpus.songs) or offset < 0 \
                or offset + L > len(corpus.songs[song][0]):
            raise DataError(f"seed window {song}:{offset} out of range")
        source = {"source": "explicit", "song": song, "offset": offset}
    elif args.seed_file:
        from .corpus import parse_song_line
        lines = [l for l in Path(args.seed_file).read_text(encoding="utf-8").splitlines()
                 if l.strip() and not l.startswith("#")]
        notes, durs = [], []
        for line in lines:
            n, d = parse_song_line(line)
            notes.extend(n)
            durs.extend(d)
        if len(notes) < L:
            from .errors import CorpusTooShort
            raise CorpusTooShort(f"seed file has {len(notes)} tokens, need {L}")
        return notes[-L:], durs[-L:], {"source": "file", "name": Path(args.seed_file).name}
    else:
        rng = Rng(derive_seed(seed, "seedwin"))
        song, offset = pick_seed(dataset, rng)
        source = {"source": "random", "song": song, "offset": offset}
    notes = corpus.songs[song][0][offset:offset + L]
    durs = corpus.songs[song][1][offset:offset + L]
    return notes, durs, source


def cmd_generate(args) -> int:
    cfg = resolve_config(args, _GEN_DEFAULTS)
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    note_vocab, dur_vocab = corpus.build_vocabs()
    if note_vocab != ckpt.note_vocab or dur_vocab != ckpt.dur_vocab:
        raise VocabMismatch("corpus vocabularies differ from the checkpoint's")
    dataset = corpus.to_dataset(note_vocab, dur_vocab)

    seed_notes, seed_durs, window_info = _resolve_seed_window(args, corpus, dataset, args.seed)
    gen_config = GenConfig(length=cfg["length"], temperature=cfg["temperature"],
                           mode=cfg["mode"], repeat_cap=cfg["repeat_cap"])

    out = _out_dir(args)
    files = []
    saturations = 0
    for i in range(cfg["count"]):
        rng = Rng(derive_seed(args.seed, f"sampling.{i}"))
        result = generate(ckpt.params, ckpt.config.model, note_vocab, dur_vocab,
                          seed_notes, seed_durs, gen_config, rng)
        saturations += result.guard_saturations
        piece = emit(result.notes, result.durs, corpus.grid)
        path = out / f"out_{i:03d}.mid"
        path.write_bytes(write_midi(piece_to_midi(piece)))
        if args.tokens:
            token_path = out / f"out_{i:03d}.tokens"
            from .corpus import format_song
            token_path.write_text(format_song(result.notes, result.durs) + "\n",
                                  encoding="utf-8")
            files.append(token_path)
        files.append(path)
        print(f"wrote {path} ({len(result.notes)} events)")
    if saturations:
        print(f"warning: repetition guard saturated {saturations} time(s)", file=sys.stderr)
    write_manifest(out, "generate", cfg, [args.checkpoint, args.corpus], files,
                   args.seed, [f"sampling.{i}" for i in range(cfg["count"])],
                   extra={"seed_window": window_info})
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    note_vocab, dur_vocab = corpus.build_vocabs()
    if note_vocab != ckpt.note_vocab or dur_vocab != ckpt.dur_vocab:
        raise VocabMismatch("corpus vocabularies differ from the checkpoint's")
    dataset = corpus.to_dataset(note_vocab, dur_vocab)
    row = evaluate(ckpt.params, ckpt.config.model, dataset, note_vocab, dur_vocab,
                   epoch=ckpt.epoch)
    print(row.CSV_HEADER)
    print(row.csv_line())
    return EXIT_OK


def cmd_variants(args) -> int:
    cfg = resolve_config(args, _TRAIN_DEFAULTS | _GEN_DEFAULTS | {"count": 5})
    if not args.variant:
        raise UsageError("need at least one --variant NAME:key=value,...")
    corpus = load_corpus(args.corpus)
    note_vocab, dur_vocab = corpus.build_vocabs()
    base = _train_config_from(cfg, corpus, note_vocab, dur_vocab, args.seed)

    variants = []
    for variant_text in args.variant:
        name, sep, overrides_text = variant_text.partition(":")
        if not sep or not name:
            raise UsageError(f"bad --variant {variant_text!r} (want NAME:key=value,...)")
        overrides = {}
        if overrides_text:
            for item in overrides_text.split(","):
                key, eq, value = item.partition("=")
                key = key.strip()
                if not eq or key not in CONFIG_KEYS:
                    raise UsageError(f"bad variant override {item!r}")
                try:
                    overrides[key] = CONFIG_KEYS[key](value.strip())
                except ValueError:
                    raise UsageError(f"bad value in variant override {item!r}") from None
        vcfg = dict(cfg)
        vcfg.update(overrides)
        variants.append((name, _train_config_from(vcfg, corpus, note_vocab, dur_vocab,
                                                  args.seed)))

    gen_config = GenConfig(length=cfg["length"], temperature=cfg["temperature"],
                           mode=cfg["mode"], repeat_cap=cfg["repeat_cap"])
    out = _out_dir(args)
    manifest = run_variants(base, variants, corpus, out, n_songs=cfg["count"],
                            gen_config=gen_config)
    for name, entry in sorted(manifest["variants"].items()):
        loss = entry["final_loss"]
        loss_text = f"{loss:.4f}" if loss is not None else "n/a"
        print(f"{name}: final loss {loss_text}  {len(entry['files'])} song(s)")
    all_files = [out / f for v in manifest["variants"].values() for f in v["files"]]
    write_manifest(out, "variants", cfg, [args.corpus], all_files, args.seed,
                   ["seedwin"] + [f"sampling.{i}" for i in range(cfg["count"])],
                   extra={"seed_window": manifest["seed_window"],
                          "n_songs": manifest["n_songs"],
                          "variants": manifest["variants"]})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = reference_check_config()
    if args.hidden:
        config = ModelConfig(note_vocab_size=config.note_vocab_size,
                             dur_vocab_size=config.dur_vocab_size,
                             hidden_sizes=args.hidden, dropout=0.0,
                             window_len=config.window_len)
    report = grad_check(config, Rng(derive_seed(args.seed, "init")),
                        tolerance=args.tolerance)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status}: max relative error {report.max_rel_err:.3e} over "
          f"{report.n_params} parameters (tolerance {report.tolerance:.0e}, "
          f"worst {report.worst_param})")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_roundtrip(args) -> int:
    failures = 0
    for path in args.files:
        data = Path(path).read_bytes()
        try:
            parsed = parse_midi(data)
            canonical = write_midi(parsed)
            reparsed = parse_midi(canonical)
            if not events_equivalent(parsed, reparsed):
                print(f"FAIL {path}: reparse is not event-equivalent")
                failures += 1
                continue
            if write_midi(reparsed) != canonical:
                print(f"FAIL {path}: canonical form is not a write fixed point")
                failures += 1
                continue
            print(f"PASS {path}")
        except DataError as exc:
            print(f"ERROR {path}: {type(exc).__name__}: {exc}")
            return EXIT_DATA
    return EXIT_CHECK if failures else EXIT_OK


# --- argument plumbing ---

class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", default="out", help="output directory (default ./out)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="midilstm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a directory of MIDI files to a corpus file")
    p.add_argument("--midi-dir", required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--window-len", dest="window_len", type=int)
    p.add_argument("--max-dur", dest="max_dur", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--holdout", type=float,
                   help="fraction of trailing windows per song reserved for eval")
    p.add_argument("--hidden", type=_parse_hidden, help="e.g. 512,512,512")
    p.add_argument("--dropout", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample MIDI files from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="corpus file providing seed windows")
    p.add_argument("--count", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--mode", choices=("sample", "argmax"))
    p.add_argument("--repeat-cap", dest="repeat_cap", type=int)
    p.add_argument("--seed-window", help="explicit SONG:OFFSET seed window")
    p.add_argument("--seed-file", help="token-text file supplying the seed window")
    p.add_argument("--tokens", action="store_true",
                   help="also write generated token text next to each MIDI file")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="teacher-forced metrics for a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("variants", help="train config variants and generate comparable songs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--variant", action="append", default=[],
                   metavar="NAME:key=value,...",
                   help="variant name plus config overrides (repeatable)")
    p.add_argument("--count", type=int, help="songs per variant (default 5)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=_parse_hidden)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--mode", choices=("sample", "argmax"))
    p.add_argument("--repeat-cap", dest="repeat_cap", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("gradcheck", help="verify BPTT against finite differences")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--hidden", type=_parse_hidden)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("roundtrip", help="verify parse/write round trips on MIDI files")
    p.add_argument("files", nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_roundtrip)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:  # UsageError and bad config values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
