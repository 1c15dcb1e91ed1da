"""Command-line interface: ``redimnet {info,extract,score,eval,train}``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.  Diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from collections import OrderedDict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import io, metrics
from . import tensor as T
from .errors import ConfigError, FormatError, ReDimNetError, UsageError
from .features import extract_features, read_wav
from .losses import ClassifierHead
from .model import analytic_params, build, count_macs, format_stage_table

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PRECISIONS = {"f32": np.float32, "f64": np.float64}

log = logging.getLogger("redimnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--precision", choices=sorted(PRECISIONS), default="f32", help="floating-point precision")
    p.add_argument("--threads", type=int, default=None, help="limit BLAS threads")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="redimnet", description="ReDimNet speaker embeddings: inspect, extract, score, evaluate, train.")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("info", help="stage shapes, parameter count and MACs of a config")
    p.add_argument("--config", required=True, help="YAML file or shipped config name")
    p.add_argument("--seconds", type=float, default=2.0, help="input length for the MAC count")
    _common(p)

    p = sub.add_parser("extract", help="embed full-length utterances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav-list", required=True, help="lines of '<id> <path>' or '<path>' (id = file stem)")
    p.add_argument("--out", required=True, help="embedding store to write")
    _common(p)

    p = sub.add_parser("score", help="cosine-score a trial list, optionally with AS-Norm")
    p.add_argument("--enroll-store", required=True)
    p.add_argument("--test-store", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cohort-store", default=None)
    p.add_argument("--topk", type=int, default=300)
    _common(p)

    p = sub.add_parser("eval", help="EER and minDCF of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--p-target", type=float, default=0.01)
    _common(p)

    p = sub.add_parser("train", help="pretrain or large-margin finetune")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", choices=("pretrain", "lm"), default="pretrain")
    p.add_argument("--data", required=True, help="'toy' or a directory of <speaker>/<utt>.wav")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--init", default=None, help="checkpoint to start from (required for lm)")
    p.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    p.add_argument("--noise-dir", default=None, help="<dir>/{noise,music,babble}/*.wav; synthetic if omitted")
    p.add_argument("--rir-dir", default=None, help="directory of impulse-response WAVs; synthetic if omitted")
    p.add_argument("--toy-speakers", type=int, default=20)
    p.add_argument("--toy-utts", type=int, default=10)
    p.add_argument("--toy-seconds", type=float, default=3.0)
    _common(p)
    return ap


# -- verbs --------------------------------------------------------------------

def cmd_info(args) -> int:
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, model=replace(cfg.model, seed=args.seed))
    m = cfg.model
    print(format_stage_table(m))
    print()
    print(f"C={m.c} F={m.f} width={m.width} reduced={m.reduced} embedding={m.embedding_dim}")
    params = analytic_params(m)
    macs = count_macs(m, args.seconds)
    print(f"params {params} ({params / 1e6:.3f}M)")
    print(f"MACs@{args.seconds:g}s {macs} ({macs / 1e9:.4f}G)")
    return EXIT_OK


def read_wav_list(path) -> list[tuple[str, Path]]:
    base = Path(path).parent
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) == 1:
            p = Path(parts[0])
            uid = p.stem
        elif len(parts) == 2:
            uid, p = parts[0], Path(parts[1])
        else:
            raise ConfigError(f"{path}:{n}: expected '<id> <path>' or '<path>', got {line!r}")
        out.append((uid, p if p.is_absolute() else base / p))
    if not out:
        raise ConfigError(f"{path}: empty wav list")
    ids = [u for u, _ in out]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: duplicate utterance ids")
    return out


def cmd_extract(args) -> int:
    model, _, _ = io.load_model(args.checkpoint)
    dtype = PRECISIONS[args.precision]
    model.to(dtype)
    model.eval()
    ids, rows = [], []
    for uid, path in read_wav_list(args.wav_list):
        feats = extract_features(read_wav(path), dtype=dtype)
        rows.append(model.embed(feats[None])[0])
        ids.append(uid)
    io.save_embeddings(args.out, ids, np.stack(rows).astype(dtype))
    print(f"wrote {len(ids)} embeddings of dim {model.cfg.embedding_dim} to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    enroll = io.load_embeddings(args.enroll_store)
    test = enroll if args.test_store == args.enroll_store else io.load_embeddings(args.test_store)
    trials = metrics.read_trials(args.trials)
    cohort = None
    if args.cohort_store is not None:
        cohort = np.stack(list(io.load_embeddings(args.cohort_store).values()))
        if args.topk > cohort.shape[0]:
            raise ConfigError(f"--topk {args.topk} exceeds cohort size {cohort.shape[0]}")
    ss = metrics.score_trials(trials, enroll, test, cohort, args.topk)
    out = ss.normalized if ss.normalized is not None else ss.scores
    metrics.write_scores(args.out, trials, out)
    print(f"scored {len(trials)} trials{' with AS-Norm' if cohort is not None else ''} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scores = metrics.read_scores(args.scores)
    trials = metrics.read_trials(args.trials)
    if len(scores) != len(trials):
        raise FormatError(f"{len(scores)} scores for {len(trials)} trials")
    for i, (tr, (e, t, _)) in enumerate(zip(trials, scores), 1):
        if (tr.enroll, tr.test) != (e, t):
            raise FormatError(f"line {i}: score is for ({e}, {t}) but trial is ({tr.enroll}, {tr.test})")
    ss = metrics.ScoreSet([tr.label for tr in trials], [s for _, _, s in scores])
    e = metrics.eer(ss)
    d = metrics.min_dcf(ss, p_target=args.p_target)
    print(f"EER {100 * e:.4f}% minDCF {d:.4f}")
    return EXIT_OK


def _dir_corpus(root: Path):
    from .toy import ToyCorpus
    speakers = sorted(p for p in root.iterdir() if p.is_dir())
    if len(speakers) < 2:
        raise ConfigError(f"{root}: need at least 2 speaker subdirectories")
    waves, labels = [], []
    for s, d in enumerate(speakers):
        files = sorted(d.glob("*.wav"))
        if not files:
            raise ConfigError(f"{d}: no WAV files")
        for f in files:
            waves.append(read_wav(f))
            labels.append(s)
    return ToyCorpus(len(speakers), 0, [], waves, np.asarray(labels), np.empty((0, 0)), np.empty(0, dtype=np.int64))


def cmd_train(args) -> int:
    from .augment import NoiseBank, RirBank
    from .toy import make_toy_corpus
    from .train import n_classes, train

    cfg = config_mod.load(args.config)
    tcfg = replace(cfg.train, stage=args.stage)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs, warmup_epochs=min(tcfg.warmup_epochs, max(0, args.epochs - 1)))
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    mcfg = cfg.model if args.seed is None else replace(cfg.model, seed=args.seed)
    if args.stage == "lm" and args.init is None:
        raise UsageError("--stage lm requires --init <pretrained checkpoint>")
    dtype = PRECISIONS[args.precision]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.data == "toy":
        corpus = make_toy_corpus(args.toy_speakers, args.toy_utts, args.toy_seconds, seed=tcfg.seed)
    else:
        root = Path(args.data)
        if not root.is_dir():
            raise ConfigError(f"--data must be 'toy' or a directory, got '{args.data}'")
        corpus = _dir_corpus(root)

    classes = n_classes(corpus.n_speakers, tcfg)
    head = None
    if args.init is not None:
        model, meta, rest = io.load_model(args.init)
        model.to(dtype)
        head = ClassifierHead(classes, model.cfg.embedding_dim, cfg.loss, seed=tcfg.seed)
        head.to(dtype)
        w = rest.get("loss.weight")
        rows = classes * head.k
        if w is not None and w.shape[0] >= rows and w.shape[1] == model.cfg.embedding_dim:
            head.weight.data = w[:rows].astype(dtype)
        else:
            log.warning("init checkpoint has no compatible classifier; starting it fresh")
        if "loss.bias" in rest and hasattr(head, "bias"):
            head.bias.data = rest["loss.bias"].astype(dtype)
    else:
        with T.default_dtype(dtype):
            model = build(mcfg)

    noise = NoiseBank.from_dir(args.noise_dir) if args.noise_dir else None
    rirs = RirBank.from_dir(args.rir_dir) if args.rir_dir else None
    extra = {"stage": tcfg.stage, "train": tcfg.to_dict(), "loss": cfg.loss.to_dict(),
             "n_speakers": corpus.n_speakers}

    def save(path, model, head, epoch):
        tensors = OrderedDict((f"loss.{k}", v) for k, v in head.state_dict().items())
        io.save_model(path, model, tensors, {**extra, "epoch": epoch})

    def on_epoch(s):
        print(f"epoch {s['epoch']:3d} loss {s['loss']:.6f} lr {s['lr']:.6g} margin {s['margin']:.4f}", flush=True)

    res = train(model, corpus, tcfg, cfg.loss, head, cfg.features, noise, rirs, log_path=out / "metrics.jsonl",
                checkpoint_fn=lambda e, m, h: save(out / f"epoch_{e:03d}.rdnc", m, h, e), epoch_fn=on_epoch)
    save(out / "final.rdnc", res.model, res.head, tcfg.epochs)
    print(f"wrote {out / 'final.rdnc'}")
    return EXIT_OK


COMMANDS = {"info": cmd_info, "extract": cmd_extract, "score": cmd_score, "eval": cmd_eval, "train": cmd_train}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"redimnet: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    limiter = contextlib.nullcontext()
    if args.threads is not None:
        if args.threads < 1:
            print("redimnet: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(args.threads)
    try:
        with limiter, T.default_dtype(PRECISIONS[args.precision]):
            return COMMANDS[args.verb](args)
    except (UsageError, ConfigError) as e:
        print(f"redimnet {args.verb}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ReDimNetError, ValueError, ArithmeticError, OSError) as e:
        print(f"redimnet {args.verb}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
