"""Command-line entry point: ``dualdual <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Output directories come from the command's flag, then
the ``DUALDUAL_OUT`` environment variable, then the configuration file.
"""
import argparse
import hashlib
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .signal_io import SignalFormatError

log = logging.getLogger("dualdual")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "DUALDUAL_OUT"


class DataError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    import numba
    import scipy
    return {"dualdual": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_run_manifest(path, command, argv, inputs=(), cfg=None, seed=None, extra=None):
    """JSON record with everything needed to re-run ``command``."""
    record = {"command": command, "argv": list(argv), "seed": seed, "versions": versions(),
              "inputs": {os.path.abspath(p): file_sha256(p) for p in inputs}}
    if cfg is not None:
        record["config_sha256"] = cfg.digest()
        record["config"] = cfg.to_text()
    record.update(extra or {})
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def resolve_out(flag, default):
    return flag or os.environ.get(OUT_ENV) or default


def parse_sets(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError([f"--set expects section.key=value, got {item!r}"])
        out[key.strip()] = val
    return out


def build_config(args, extra=None):
    overrides = parse_sets(getattr(args, "set", None))
    overrides.update({k: str(v) for k, v in (extra or {}).items() if v is not None})
    if args.config:
        cfg = load_config(args.config, overrides)
        if cfg.data.manifest and not os.path.isabs(cfg.data.manifest):
            cfg.data.manifest = os.path.join(os.path.dirname(os.path.abspath(args.config)), cfg.data.manifest)
        return cfg
    cfg = RunConfig()
    apply_overrides(cfg, overrides)
    return cfg.validate()


def _spec(cfg):
    from .transition import TransitionSpec
    return TransitionSpec(rho=cfg.transition.rho, target_len=cfg.transition.target_len or None)


def dataset_from(cfg, synthetic, seed):
    """(pairs, input files) from a manifest, or ``synthetic`` generated pairs."""
    from .signal_io import synthesize_dataset

    if synthetic:
        return synthesize_dataset(synthetic, seed, transition=_spec(cfg)), []
    if not cfg.data.manifest:
        raise DataError("no dataset: set data.manifest in the config, pass --manifest, or use --synthetic N")
    return load_manifest_pairs(cfg.data.manifest, cfg)


def load_manifest_pairs(manifest, cfg):
    from .signal_io import load_pairs, read_manifest

    if not os.path.exists(manifest):
        raise DataError(f"manifest {manifest} not found")
    entries = read_manifest(manifest)
    if not entries:
        raise DataError(f"manifest {manifest} lists no pairs")
    pairs = load_pairs(manifest, cfg.data.model_rate, cfg.data.channel_list, transition=_spec(cfg),
                       bandpass=cfg.data.bandpass)
    inputs = [manifest] + [p for e in entries for p in (e.eeg_path, e.wav_path)]
    return pairs, inputs


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    from .signal_io import (MONTAGE_24, TEMPORAL_CHANNELS, ManifestEntry, SynthConfig, synthesize_pair,
                            write_eeg_csv, write_manifest, write_wav)

    out = resolve_out(args.out, "synth")
    os.makedirs(os.path.join(out, "eeg"), exist_ok=True)
    os.makedirs(os.path.join(out, "wav"), exist_ok=True)
    scfg = SynthConfig(n_samples=args.samples)
    entries = []
    for i in range(args.pairs):
        pair = synthesize_pair(args.seed, scfg, i)
        # the non-temporal electrodes carry unrelated noise; averaging the temporal four recovers u
        rng = np.random.default_rng([args.seed, i, 1])
        chans = {name: (pair.u.samples if name in TEMPORAL_CHANNELS else rng.normal(scale=0.5, size=pair.u.samples.size))
                 for name in MONTAGE_24}
        eeg = os.path.join(out, "eeg", f"{pair.id}.csv")
        wav = os.path.join(out, "wav", f"{pair.id}.wav")
        write_eeg_csv(eeg, chans, pair.u.sample_rate)
        write_wav(wav, pair.v.samples, pair.v.sample_rate, fmt="float32")
        entries.append(ManifestEntry(pair.id, eeg, wav, pair.group_label))
    manifest = os.path.join(out, "manifest.tsv")
    write_manifest(manifest, entries)
    write_run_manifest(os.path.join(out, "run_manifest.json"), "synth", sys.argv, seed=args.seed,
                       extra={"pairs": args.pairs, "samples": args.samples})
    print(manifest)
    return EXIT_OK


def cmd_train(args):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .networks import build_model
    from .trainer import NumericalError, init_loss_log, train, to_matrices

    cfg = build_config(args, {"run.steps": args.steps, "run.seed": args.seed, "data.manifest": args.manifest})
    out = resolve_out(args.out, cfg.run.out_dir)
    os.makedirs(out, exist_ok=True)
    pairs, inputs = dataset_from(cfg, args.synthetic, cfg.run.seed)
    manifest_hash = hashlib.sha256("".join(file_sha256(p) for p in inputs).encode()).hexdigest() if inputs else ""
    loss_log = os.path.join(out, "loss.csv")
    if args.resume:
        state = load_checkpoint(args.resume)
        inputs = inputs + [args.resume]
        # architecture and optimizer settings come from the checkpoint; the step budget from this call
        steps = cfg.run.steps
        cfg = state.config
        cfg.run.steps = steps
        if not os.path.exists(loss_log):
            init_loss_log(loss_log)
    else:
        state = None
        init_loss_log(loss_log)
    model = state.model if state else build_model(cfg, cfg.run.seed)
    data = to_matrices(pairs, cfg.generator.depth)
    every = cfg.run.checkpoint_every

    def periodic(st):
        if every > 0 and st.step % every == 0:
            save_checkpoint(st, os.path.join(out, f"ckpt_step{st.step:06d}.ddgn"), manifest_hash)

    write_run_manifest(os.path.join(out, "run_manifest.json"), "train", sys.argv, inputs, cfg, cfg.run.seed,
                       extra={"steps": cfg.run.steps, "resume": args.resume})
    try:
        state = train(pairs, model, cfg.run.steps, cfg.run.seed, cfg, state=state, loss_log=loss_log,
                      dump_dir=out, callback=periodic, data=data)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    final = os.path.join(out, "checkpoint.ddgn")
    save_checkpoint(state, final, manifest_hash)
    print(final)
    return EXIT_OK


def _load_eeg(path, cfg, channels):
    from .signal_io import load_eeg_csv, normalize, resample_record

    u = load_eeg_csv(path, channels or cfg.data.channel_list, bandpass=cfg.data.bandpass)
    return normalize(resample_record(u, cfg.data.model_rate))


def cmd_translate(args):
    from .checkpoint import load_checkpoint
    from .networks import translator
    from .signal_io import matrix_side, write_wav

    state = load_checkpoint(args.ckpt)
    cfg = state.config
    u = _load_eeg(args.eeg, cfg, _channels(args.channels))
    depth = cfg.generator.depth
    v_hat = translator(state.model, depth, matrix_side(u.samples.size, depth))(u)
    write_wav(args.out, v_hat, cfg.data.model_rate, fmt=args.format)
    write_run_manifest(args.out + ".manifest.json", "translate", sys.argv, [args.ckpt, args.eeg], cfg, None)
    print(args.out)
    return EXIT_OK


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .metrics import translation_accuracy
    from .networks import translator
    from .trainer import dataset_side

    state = load_checkpoint(args.ckpt)
    cfg = state.config
    pairs, inputs = load_manifest_pairs(args.manifest, cfg)
    depth = cfg.generator.depth
    report = translation_accuracy(translator(state.model, depth, dataset_side(pairs, depth)), pairs, cfg.mel,
                                  seed=cfg.run.seed, config=cfg.as_dict())
    out = resolve_out(args.report, "eval")
    report.write(out)
    write_run_manifest(os.path.join(out, "run_manifest.json"), "eval", sys.argv, [args.ckpt] + inputs, cfg, None)
    s = report.summary()
    print(f"accuracy={s['accuracy']:.6f} hits={s['hits']}/{s['n_pairs']} "
          f"mean_pcc={s['mean_pcc']:.6f} mean_mcd_db={s['mean_mcd_db']:.6f}")
    return EXIT_OK


def cmd_sweep(args):
    from .transition import proportion_sweep

    extra = {"sweep.train_budget": args.budget, "sweep.proportions": args.proportions,
             "run.seed": args.seed, "data.manifest": args.manifest}
    cfg = build_config(args, extra)
    out = resolve_out(args.out, cfg.run.out_dir)
    os.makedirs(out, exist_ok=True)
    pairs, inputs = dataset_from(cfg, args.synthetic, cfg.run.seed)
    path = os.path.join(out, "sweep.csv")
    text = proportion_sweep(pairs, cfg.sweep.proportion_list, cfg.sweep.train_budget, cfg.run.seed, cfg, path)
    write_run_manifest(os.path.join(out, "run_manifest.json"), "sweep", sys.argv, inputs, cfg, cfg.run.seed)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_attention(args):
    from .attention import scan
    from .signal_io import load_eeg_csv

    sig = load_eeg_csv(args.eeg, _channels(args.channels) or ("T3", "T4", "T5", "T6"), sample_rate=args.rate)
    rows = scan(sig, args.threshold, args.window, args.segment)
    if not rows:
        raise DataError(f"{args.eeg}: shorter than one {args.window} s observation window")
    lines = [f"{t:.3f},{p:.6g},{d}" for t, p, d in rows]
    print("\n".join(lines))
    out = resolve_out(args.out, None)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "attention.csv"), "w") as fh:
            fh.write("t_start,P,decision\n" + "\n".join(lines) + "\n")
        write_run_manifest(os.path.join(out, "run_manifest.json"), "attention-check", sys.argv, [args.eeg],
                           extra={"threshold": args.threshold, "window_sec": args.window})
    return EXIT_OK


def _channels(text):
    return [c.strip() for c in text.split(",") if c.strip()] if text else None


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="dualdual", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic paired corpus (EEG CSV + WAV + manifest)")
    s.add_argument("--pairs", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--samples", type=int, default=256, help="samples per signal")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    def config_args(q):
        q.add_argument("--config", help="key = value config file with [sections]")
        q.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
        q.add_argument("--manifest")
        q.add_argument("--synthetic", type=int, default=0, metavar="N", help="train on N generated pairs")
        q.add_argument("--seed", type=int)
        q.add_argument("--out")

    s = sub.add_parser("train", help="train a model")
    config_args(s)
    s.add_argument("--steps", type=int)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="EEG CSV -> synthesized speech WAV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--eeg", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--channels")
    s.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("eval", help="accuracy / PCC / MCD report over a manifest")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train and score one model per cascade proportion")
    config_args(s)
    s.add_argument("--budget", type=int)
    s.add_argument("--proportions", help="comma-separated EEG fractions")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("attention-check", help="per-window attention index and gate decision")
    s.add_argument("--eeg", required=True)
    s.add_argument("--threshold", type=float, default=60.0)
    s.add_argument("--window", type=float, default=3.0)
    s.add_argument("--segment", type=float, default=1.0)
    s.add_argument("--rate", type=float)
    s.add_argument("--channels")
    s.add_argument("--out")
    s.set_defaults(func=cmd_attention)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SignalFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # checkpoint/metric/transition/band errors are all input problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
