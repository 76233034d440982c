"""Command-line entry point: synth, train, cancel, baseline, eval,
spectrogram, grad-check."""

import argparse
import os
import sys

AECTK_CONFIG_ENV = "AECTK_CONFIG"


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", default=None, help="generation config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel record workers")


def _add_train(sub):
    p = sub.add_parser("train", help="train the canceller network")
    p.add_argument("--config", default=None, help="model+train config file")
    p.add_argument("--data", required=True, help="training manifest")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--resume", default=None, help="checkpoint_last.aeck to resume from")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--quiet", action="store_true")


def _add_cancel(sub):
    p = sub.add_parser("cancel", help="run the trained canceller on one pair")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--mix", required=True, help="microphone mixture WAV")
    p.add_argument("--far", required=True, help="far-end reference WAV")
    p.add_argument("--out", required=True, help="output estimated near-end WAV")
    p.add_argument("--classes-out", default=None,
                   help="optional path for per-frame class bytes")


def _add_baseline(sub):
    p = sub.add_parser("baseline", help="run a linear adaptive-filter canceller")
    p.add_argument("--algo", required=True, choices=("nlms", "fdaf"))
    p.add_argument("--mix", required=True)
    p.add_argument("--far", required=True)
    p.add_argument("--out", required=True, help="output residual WAV")
    p.add_argument("--taps", type=int, default=1024, help="NLMS filter length")
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--block", type=int, default=256, help="FDAF block length")
    p.add_argument("--partitions", type=int, default=8)


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a canceller over a manifest")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--out", required=True, help="report path")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="checkpoint path")
    group.add_argument("--algo", choices=("nlms", "fdaf"))
    group.add_argument("--oracle", action="store_true",
                       help="debug: perfect canceller (s_hat := near-end)")
    group.add_argument("--identity", action="store_true",
                       help="debug: pass-through canceller (s_hat := mixture)")
    p.add_argument("--taps", type=int, default=1024)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--block", type=int, default=256)
    p.add_argument("--partitions", type=int, default=8)


def _add_spectrogram(sub):
    p = sub.add_parser("spectrogram", help="render a log-magnitude spectrogram")
    p.add_argument("--in", dest="input", required=True, help="input WAV")
    p.add_argument("--out", required=True, help="output PGM image")


def _add_grad_check(sub):
    p = sub.add_parser("grad-check", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aectk",
                                     description="waveform-domain acoustic echo "
                                                 "cancellation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for adder in (_add_synth, _add_train, _add_cancel, _add_baseline, _add_eval,
                  _add_spectrogram, _add_grad_check):
        adder(sub)
    return parser


def _config_path(flag_value):
    if flag_value is not None:
        return flag_value
    return os.environ.get(AECTK_CONFIG_ENV)


def _cmd_synth(args) -> int:
    from .synth import GenerationConfig, build_dataset, parse_generation_config
    path = _config_path(args.config)
    cfg = parse_generation_config(path) if path else GenerationConfig()
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    manifest = build_dataset(cfg, args.out, jobs=args.jobs)
    print(f"wrote {len(manifest)} training records to {args.out}/manifest.txt "
          f"(+ test manifest)")
    return 0


def _cmd_train(args) -> int:
    from .model import ModelConfig
    from .training import TrainConfig, parse_training_config, train
    path = _config_path(args.config)
    if path:
        model_cfg, train_cfg = parse_training_config(path)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    if args.seed is not None:
        from dataclasses import replace
        train_cfg = replace(train_cfg, seed=args.seed)
    log_fn = None if args.quiet else print
    result = train(args.data, model_cfg, train_cfg, args.out,
                   resume_from=args.resume, log_fn=log_fn)
    print(f"best checkpoint: {result.checkpoint_path}")
    print(f"loss history: {result.history_path}")
    return 0


def _cmd_cancel(args) -> int:
    from . import audio_io
    from .metrics import make_model_canceller
    from .training import load_model
    params, model_cfg = load_model(args.model)
    mixture = audio_io.read_wav(args.mix)
    far = audio_io.read_wav(args.far)
    if len(mixture) != len(far):
        raise ValueError("mixture and far-end lengths differ")
    run = make_model_canceller(params, model_cfg)
    s_hat, classes = run(mixture, far, None)
    audio_io.write_wav(args.out, s_hat)
    if args.classes_out:
        audio_io.write_labels(args.classes_out, classes)
    print(f"wrote {args.out}")
    return 0


def _cmd_baseline(args) -> int:
    from . import audio_io
    from .baselines import FdafConfig, fdaf_cancel, nlms_cancel
    mixture = audio_io.read_wav(args.mix)
    far = audio_io.read_wav(args.far)
    if args.algo == "nlms":
        _, residual, _ = nlms_cancel(far, mixture, taps=args.taps, mu=args.mu,
                                     eps=args.eps)
    else:
        _, residual = fdaf_cancel(far, mixture,
                                  FdafConfig(block_len=args.block,
                                             partitions=args.partitions,
                                             mu=args.mu, eps=args.eps))
    audio_io.write_wav(args.out, residual)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import (evaluate, identity_canceller, make_baseline_canceller,
                          make_model_canceller, oracle_canceller)
    model_hop = None
    if args.model:
        from .training import load_model
        params, model_cfg = load_model(args.model)
        canceller = make_model_canceller(params, model_cfg)
        model_hop = model_cfg.hop
    elif args.algo == "nlms":
        canceller = make_baseline_canceller("nlms", taps=args.taps, mu=args.mu,
                                            eps=args.eps)
    elif args.algo == "fdaf":
        canceller = make_baseline_canceller("fdaf", block_len=args.block,
                                            partitions=args.partitions,
                                            mu=args.mu, eps=args.eps)
    elif args.oracle:
        canceller = oracle_canceller
    else:
        canceller = identity_canceller
    report = evaluate(args.data, canceller, out_path=args.out, model_hop=model_hop)
    for name, value in (("ERLE", report.erle_db), ("SI-SNR", report.si_snr_db),
                        ("DTD accuracy", report.dtd_accuracy)):
        if value is not None:
            print(f"{name}: {value:.2f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_spectrogram(args) -> int:
    from . import audio_io
    from .metrics import spectrogram_image
    spectrogram_image(audio_io.read_wav(args.input), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    from .diagnostics import run_grad_check_suite
    results = run_grad_check_suite(seed=args.seed)
    failed = False
    for name, err in results:
        status = "PASS" if err < args.threshold else "FAIL"
        failed = failed or status == "FAIL"
        print(f"{name:<24} max_rel_err={err:.3e}  {status}")
    return 1 if failed else 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "cancel": _cmd_cancel,
    "baseline": _cmd_baseline,
    "eval": _cmd_eval,
    "spectrogram": _cmd_spectrogram,
    "grad-check": _cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
