"""``stenlab`` command line: gen-data, train, eval, predict.

Exit codes: 0 success, 1 usage, 2 I/O, 3 validation.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys
import tempfile
import time

from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import dataclass_to_kv, format_kv, parse_kv
from .dataset import pad_and_truncate, parse_tsv, write_tsv
from .errors import CompatibilityError, ConfigError, StenError
from .metrics import EvalReport
from .model import ABLATIONS, ModelConfig, StEN
from .synth import SynthConfig, synth_generate
from .training import TrainConfig, train_loop

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3

# fields that decide how raw TSV rows become model inputs
FEATURIZATION_KEYS = ("table_size", "seq_len", "period_starts", "t_clamp")


class UsageError(StenError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _write_text_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"{path}: directory is not writable")


# ---------------------------------------------------------------- gen-data
def cmd_gen_data(args):
    overrides = {}
    if args.shuffle_periods:
        overrides["shuffle_periods"] = True
    cfg = SynthConfig(seed=args.seed, n_users=args.n_users, n_items=args.n_items, n_train=args.n_train, n_test=args.n_test, **overrides)
    if min(cfg.n_users, cfg.n_items, cfg.n_train) < 1 or cfg.n_test < 0:
        raise ConfigError("gen-data sizes must be positive (n-test may be 0)")
    _ensure_dir(args.out)
    data = synth_generate(**dataclasses.asdict(cfg))
    write_tsv(data.train, os.path.join(args.out, "train.tsv"))
    write_tsv(data.test, os.path.join(args.out, "test.tsv"))
    manifest = {f"generator.{k}": v for k, v in dataclass_to_kv(cfg).items()}
    manifest.update({"train.lines": str(len(data.train)), "test.lines": str(len(data.test))})
    _write_text_atomic(os.path.join(args.out, "manifest.txt"), format_kv(manifest))
    print(f"wrote {len(data.train)} train and {len(data.test)} test samples to {args.out}")
    return EXIT_OK


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return parse_kv(fh.read())


# ------------------------------------------------------------------- train
def _split_config(mapping):
    model_keys = set(ModelConfig.__dataclass_fields__)
    train_keys = set(TrainConfig.__dataclass_fields__)
    unknown = set(mapping) - model_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    m = {k: v for k, v in mapping.items() if k in model_keys}
    t = {k: v for k, v in mapping.items() if k in train_keys}
    return m, t


def _parse_overrides(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _parse_ablation(text):
    names = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in names if a not in ABLATIONS]
    if bad or not names:
        raise UsageError(f"invalid --ablation {text!r}; valid names: {', '.join(ABLATIONS)}")
    return tuple(dict.fromkeys(names))


def _data_files(path):
    """``path`` is a directory holding train.tsv/test.tsv, or a single TSV."""
    if os.path.isdir(path):
        train = os.path.join(path, "train.tsv")
        test = os.path.join(path, "test.tsv")
        if not os.path.exists(train):
            raise FileNotFoundError(f"{train}: no such file")
        return train, (test if os.path.exists(test) else None)
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path}: no such file or directory")
    return path, None


def _eval_file(path):
    if os.path.isdir(path):
        test = os.path.join(path, "test.tsv")
        if not os.path.exists(test):
            raise FileNotFoundError(f"{test}: no such file")
        return test
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path}: no such file or directory")
    return path


def _featurize(samples, cfg: ModelConfig):
    return pad_and_truncate(samples, cfg.seq_len, cfg.table_size, cfg.period_starts, cfg.t_clamp)


def resolve_run_config(config_path=None, overrides=None, baseline=False, ablation=None):
    mapping = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            mapping.update(parse_kv(fh.read()))
    mapping.update(overrides or {})
    m_kv, t_kv = _split_config(mapping)
    model_cfg = ModelConfig.from_kv(m_kv)
    if baseline and ablation:
        raise UsageError("--baseline and --ablation are mutually exclusive")
    if baseline:
        model_cfg = model_cfg.with_variant(())
    elif ablation:
        model_cfg = model_cfg.with_variant(ablation)
    return model_cfg, TrainConfig.from_kv(t_kv)


def cmd_train(args):
    ablation = _parse_ablation(args.ablation) if args.ablation else None
    overrides = _parse_overrides(args.set)
    for flag, key in (("steps", "total_steps"), ("seed", "seed"), ("batch_size", "batch_size"), ("warmup_steps", "warmup_steps")):
        if getattr(args, flag) is not None:
            overrides[key] = str(getattr(args, flag))
    model_cfg, train_cfg = resolve_run_config(args.config, overrides, args.baseline, ablation)

    # validate everything before touching the run directory
    train_path, test_path = _data_files(args.data)
    train_samples = parse_tsv(train_path).samples
    if not train_samples:
        raise ConfigError(f"{train_path}: training data is empty")
    test_samples = parse_tsv(test_path).samples if test_path else []
    train_batch = _featurize(train_samples, model_cfg)
    val_batch = _featurize(test_samples, model_cfg) if test_samples else None

    _ensure_dir(args.out)
    effective = {**model_cfg.to_kv(), **train_cfg.to_kv()}
    _write_text_atomic(os.path.join(args.out, "config.txt"), format_kv(effective))
    model = StEN(model_cfg)
    t0 = time.perf_counter()
    with open(os.path.join(args.out, "metrics.tsv"), "w", encoding="utf-8", newline="\n") as log:
        losses = train_loop(model, train_batch, train_cfg, val=val_batch, log=log)
    elapsed = time.perf_counter() - t0
    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(model, ckpt)
    manifest = {
        "variant": model_cfg.variant,
        "train_data": os.path.abspath(train_path),
        "train_sha256": _sha256(train_path),
        "train_samples": str(len(train_batch)),
        "test_data": os.path.abspath(test_path) if test_path else "",
        "test_samples": str(len(val_batch) if val_batch is not None else 0),
        "steps": str(train_cfg.total_steps),
        "final_loss": repr(float(losses[-1])) if len(losses) else "",
        "elapsed_seconds": f"{elapsed:.3f}",
        "kernel_backend": kernels.BACKEND,
        "checkpoint": "checkpoint.bin",
        "checkpoint_sha256": _sha256(ckpt),
    }
    _write_text_atomic(os.path.join(args.out, "manifest.txt"), format_kv(manifest))
    print(f"trained {model_cfg.variant} for {train_cfg.total_steps} steps in {elapsed:.1f}s -> {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------- eval
def check_compatible(model, base):
    a, b = model.config.to_kv(), base.config.to_kv()
    diff = [k for k in FEATURIZATION_KEYS if a[k] != b[k]]
    if diff:
        detail = ", ".join(f"{k}: {a[k]} vs {b[k]}" for k in diff)
        raise CompatibilityError(f"checkpoints featurize data differently ({detail})")


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    base = load_checkpoint(args.base_checkpoint) if args.base_checkpoint else None
    if base is not None:
        check_compatible(model, base)
    path = _eval_file(args.data)
    samples = parse_tsv(path).samples
    if not samples:
        raise ConfigError(f"{path}: evaluation data is empty")
    batch = _featurize(samples, model.config)
    scores = model.predict(batch)
    base_scores = base.predict(_featurize(samples, base.config)) if base is not None else None
    report = EvalReport.compute(scores, batch.labels, base_scores)
    sys.stdout.write(str(report))
    return EXIT_OK


# ----------------------------------------------------------------- predict
def cmd_predict(args):
    model = load_checkpoint(args.checkpoint)
    samples = parse_tsv(args.input, strict=True).samples
    scores = model.predict(_featurize(samples, model.config)) if samples else []
    out_dir = os.path.dirname(os.path.abspath(args.output))
    if not os.path.isdir(out_dir):
        raise FileNotFoundError(f"{out_dir}: no such directory")
    _write_text_atomic(args.output, "".join(f"{float(s)!r}\n" for s in scores))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="stenlab", description="Spatiotemporal CTR laboratory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic train/test split")
    d = SynthConfig()
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--out", required=True)
    g.add_argument("--n-train", type=int, default=d.n_train)
    g.add_argument("--n-test", type=int, default=d.n_test)
    g.add_argument("--n-users", type=int, default=d.n_users)
    g.add_argument("--n-items", type=int, default=d.n_items)
    g.add_argument("--shuffle-periods", action="store_true", help="scramble recorded request hours (control set)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model variant")
    t.add_argument("--config", help="key = value file with model/training settings")
    t.add_argument("--data", required=True, help="directory with train.tsv[/test.tsv] or a TSV file")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--ablation", help=f"comma list of modules added to BaseModel ({','.join(ABLATIONS)})")
    t.add_argument("--baseline", action="store_true", help="train BaseModel")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--warmup-steps", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="AUC and log loss of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="TSV file, or a directory holding test.tsv")
    e.add_argument("--base-checkpoint", help="also report RelaImpr against this model")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="score a TSV file")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StenError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
