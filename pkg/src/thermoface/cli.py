"""Command-line entry point: ``thermoface {denoise,summary,train,evaluate}``.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric divergence.
Any subcommand accepts ``--config FILE`` holding ``key = value`` lines
(``#`` comments allowed); keys are long option names and explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import imageio, kalman, models, training

log = logging.getLogger("thermoface")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class UsageError(Exception):
    pass


def _odd_window(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be an integer, got {text!r}") from None
    if value < 1 or value % 2 == 0:
        raise argparse.ArgumentTypeError(f"window must be odd and >= 1, got {value}")
    return value


def _r_value(text: str) -> float | str:
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"r must be a number or 'auto', got {text!r}") from None


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "yes", "1"):
        return True
    if text.lower() in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermoface", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("denoise", help="Kalman-denoise a PGM image")
    p.add_argument("--config")
    p.add_argument("--in", dest="input", required=True, help="input PGM (P5)")
    p.add_argument("--out", required=True, help="output PGM")
    p.add_argument("--q", type=float, default=1e-4, help="process-noise variance")
    p.add_argument("--r", type=_r_value, default="auto", help="measurement-noise variance or 'auto'")
    p.add_argument("--init-p", type=float, default=1.0)
    p.add_argument("--window", type=_odd_window, default=3)
    p.add_argument("--clean", help="clean reference PGM for PSNR reporting")
    p.add_argument("--report-psnr", action="store_true", help="print PSNR before/after (needs --clean)")

    p = sub.add_parser("summary", help="print a layer table and parameter counts")
    p.add_argument("--config")
    p.add_argument("--model", choices=sorted(models.BUILDERS), default="vgg19")
    p.add_argument("--input-size", type=int, default=128)
    p.add_argument("--num-outputs", type=int, default=1)

    p = sub.add_parser("train", help="train a model and write history, weights and metrics")
    p.add_argument("--config")
    p.add_argument("--model", choices=sorted(models.BUILDERS), default="small")
    p.add_argument("--train-dir")
    p.add_argument("--test-dir")
    p.add_argument("--synth", help="synthetic data CxNxS (classes x per-class x side)")
    p.add_argument("--noise", type=float, default=0.1, help="synthetic noise sd")
    p.add_argument("--input-size", type=int, help="default: synthetic side, 32 for small, else 128")
    p.add_argument("--num-outputs", type=int, help="default: number of training classes")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--denoise", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--weights", help="initial weights (transfer); base is frozen unless --freeze-base off")
    p.add_argument("--freeze-base", type=_on_off, default=None, metavar="on|off")
    p.add_argument("--save", help="output weight file")
    p.add_argument("--history", help="output history CSV")
    p.add_argument("--json", help="write the final metrics report as JSON")

    p = sub.add_parser("evaluate", help="evaluate saved weights on a test set")
    p.add_argument("--config")
    p.add_argument("--model", choices=sorted(models.BUILDERS))
    p.add_argument("--weights", required=True)
    p.add_argument("--test-dir")
    p.add_argument("--synth", help="synthetic data CxNxS")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0, help="seed for --synth")
    p.add_argument("--input-size", type=int)
    p.add_argument("--num-outputs", type=int)
    p.add_argument("--denoise", type=_on_off, default=None, metavar="on|off")
    p.add_argument("--json", help="write the metrics report as JSON")
    return parser


def read_config(path, sub: argparse.ArgumentParser) -> list[str]:
    """Turn a ``key = value`` file into argv tokens for ``sub``."""
    by_flag = {}
    for a in sub._actions:  # noqa: SLF001
        for opt in a.option_strings:
            if opt.startswith("--"):
                by_flag[opt[2:].replace("-", "_")] = (opt, a)
    tokens = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        norm = key.replace("-", "_")
        if norm in ("config", "help") or norm not in by_flag:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        opt, action = by_flag[norm]
        if action.nargs == 0:
            if _on_off(value):
                tokens.append(opt)
        else:
            tokens += [opt, value]
    return tokens


def _with_config(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser.subcommands[args.command]
        idx = argv.index(args.command) + 1
        args = parser.parse_args(argv[:idx] + read_config(args.config, sub) + argv[idx:])
    return args


# --- subcommands ------------------------------------------------------------

def cmd_denoise(args) -> int:
    img = imageio.read_pgm(args.input)
    cfg = kalman.KalmanConfig(q=args.q, r=args.r, init_p=args.init_p, window=args.window)
    out = kalman.denoise_image(img, cfg)
    imageio.write_pgm(args.out, out)
    if args.report_psnr or args.clean:
        if not args.clean:
            raise UsageError("--report-psnr needs --clean")
        clean = imageio.read_pgm(args.clean)
        print(f"psnr_before {kalman.psnr(img, clean):.4f} dB")
        print(f"psnr_after {kalman.psnr(out, clean):.4f} dB")
    return EXIT_OK


def cmd_summary(args) -> int:
    m = models.build_model(args.model, args.input_size, args.num_outputs)
    pc = models.count_params(m)
    print(models.summarize(m))
    print(f"trainable={pc.trainable} non_trainable={pc.non_trainable} total={pc.total}")
    return EXIT_OK


def _synth_pair(spec, noise, seed):
    c, n, s = imageio.parse_synth_spec(spec)
    train_seq, test_seq = np.random.SeedSequence(seed).spawn(2)
    tr = imageio.synth_thermal(c, n, s, noise, int(train_seq.generate_state(1)[0]))
    te = imageio.synth_thermal(c, n, s, noise, int(test_seq.generate_state(1)[0]))
    return tr, te


def _meta_path(weights) -> Path:
    return Path(str(weights) + ".json")


def cmd_train(args) -> int:
    if args.synth:
        train_set, test_set = _synth_pair(args.synth, args.noise, args.seed)
        side = imageio.parse_synth_spec(args.synth)[2]
    else:
        if not args.train_dir or not args.test_dir:
            raise UsageError("give --train-dir and --test-dir, or --synth CxNxS")
        side = None
    input_size = args.input_size or side or (32 if args.model == "small" else 128)
    if not args.synth:
        train_set = imageio.load_image_folder(args.train_dir, input_size)
        test_set = imageio.load_image_folder(args.test_dir, input_size)
    k = len(train_set.class_names)
    num_outputs = args.num_outputs or k
    model = models.build_model(args.model, input_size, num_outputs,
                               in_channels=models.DEFAULT_CHANNELS[args.model])
    freeze = args.freeze_base
    if args.weights:
        model.initialize(args.seed)
        report = models.load_weights(model, args.weights, allow_partial=True)
        log.info("%s", report.describe())
        if freeze is None:
            freeze = True
    cfg = training.TrainConfig(epochs=args.epochs, batch_size=args.batch, optimizer=args.optimizer,
                            learning_rate=args.lr, momentum=args.momentum, seed=args.seed,
                            denoise=args.denoise, freeze_base=bool(freeze))
    model, history = training.train(model, train_set, test_set, cfg)
    if args.history:
        training.write_history_csv(history, args.history)
    if args.save:
        models.save_weights(model, args.save)
        meta = {"model": args.model, "input_size": input_size, "num_outputs": num_outputs,
                "in_channels": model.input_shape[0], "class_names": model.class_names,
                "denoise": args.denoise}
        _meta_path(args.save).write_text(json.dumps(meta, indent=2) + "\n")
    last = history.rows[-1]
    print(f"final train_loss={last.train_loss:.6f} train_acc={last.train_acc:.6f} "
          f"test_loss={last.test_loss:.6f} test_acc={last.test_acc:.6f}")
    report = training.evaluate(model, test_set, denoise=args.denoise)
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    meta_file = _meta_path(args.weights)
    meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
    kind = args.model or meta.get("model")
    if kind is None:
        raise UsageError("--model is required when the weights have no metadata file")
    if meta.get("model") not in (None, kind):
        log.warning("weights were trained for %s, evaluating as %s", meta["model"], kind)
        meta = {}
    if args.synth:
        _, test_set = _synth_pair(args.synth, args.noise, args.seed)
        side = imageio.parse_synth_spec(args.synth)[2]
    elif args.test_dir:
        side = None
    else:
        raise UsageError("give --test-dir or --synth CxNxS")
    input_size = args.input_size or meta.get("input_size") or side or (32 if kind == "small" else 128)
    if args.test_dir:
        test_set = imageio.load_image_folder(args.test_dir, input_size)
    num_outputs = args.num_outputs or meta.get("num_outputs") or len(test_set.class_names)
    model = models.build_model(kind, input_size, num_outputs,
                               in_channels=meta.get("in_channels", models.DEFAULT_CHANNELS[kind]))
    model.initialize(0)
    report = models.load_weights(model, args.weights)
    if report.missing:
        raise models.WeightMismatchError("weight file lacks model tensors:\n  " + "\n  ".join(report.missing))
    model.class_names = meta.get("class_names")
    denoise = args.denoise if args.denoise is not None else meta.get("denoise", False)
    metrics = training.evaluate(model, test_set, denoise=denoise)
    print(metrics.to_text())
    if args.json:
        Path(args.json).write_text(metrics.to_json() + "\n")
    return EXIT_OK


COMMANDS = {"denoise": cmd_denoise, "summary": cmd_summary, "train": cmd_train, "evaluate": cmd_evaluate}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _with_config(parser, argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_USAGE if exc.code else EXIT_OK
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except training.DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
