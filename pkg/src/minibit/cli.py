"""Command-line entry point: ``minibit <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage/config/dataset error,
3 I/O or checkpoint error.
"""

import argparse
import json
import logging
import sys

from minibit import gradcheck, hyperrule, synth
from minibit.checkpoint import checkpoint_load
from minibit.data import load_dataset_dir
from minibit.errors import (CheckpointError, ConfigError, DatasetError, LoadMismatchError,
                            NumericError, OracleError, ParseError, RegistryError, TrainingError)
from minibit.harness import TrainConfig, evaluate, finetune, pretrain
from minibit.model import Model, ResNetConfig
from minibit.tensor import Prng

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("minibit")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Apply ``dot.path=value`` to a nested dict in place."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"--set {path}: {k!r} is not a config section")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"--set {path}: unknown key {keys[-1]!r}")
    node[keys[-1]] = _parse_value(raw)
    return cfg


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc


def _deep_merge(base, extra, where="config"):
    for k, v in extra.items():
        if k not in base:
            raise ConfigError(f"{where}: unknown key {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _deep_merge(base[k], v, f"{where}.{k}")
        else:
            base[k] = v
    return base


def build_config(args, mode):
    """defaults <- --config file <- explicit flags <- --set overrides."""
    cfg = TrainConfig(mode=mode).to_dict()
    touched_model = False
    if args.config:
        extra = _read_json(args.config)
        touched_model = "model" in extra
        _deep_merge(cfg, extra)
    for flag, key in (("train_dir", "train_dir"), ("val_dir", "val_dir"), ("seed", "seed"),
                      ("checkpoint_in", "checkpoint_in"), ("checkpoint_out", "checkpoint_out"),
                      ("metrics_csv", "metrics_csv"), ("batch_size", "batch_size"),
                      ("steps", "steps"), ("epochs", None)):
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key is None:
            cfg["schedule"]["total_epochs"] = value
        else:
            cfg[key] = value
    for assignment in args.set or []:
        touched_model |= assignment.startswith("model.")
        apply_override(cfg, assignment)
    cfg["mode"] = mode
    if mode == "finetune" and not touched_model and cfg.get("checkpoint_in"):
        # the body architecture comes from the checkpoint unless configured explicitly
        cfg["model"] = dict(checkpoint_load(cfg["checkpoint_in"]).model_config)
    return TrainConfig.from_dict(cfg)


def _echo(cfg):
    print(json.dumps(cfg.to_dict(), sort_keys=True))
    sys.stdout.flush()


def _summary(result):
    last = result.rows[-1] if result.rows else None
    out = {"epochs": len(result.rows), "initial_loss": result.initial_loss}
    if last is not None:
        out.update(final_train_loss=last.train_loss, final_val_acc=last.val_acc)
    if result.decision is not None:
        out["hyperrule"] = result.decision.to_json_dict()
    print(json.dumps(out, sort_keys=True))


def cmd_synth(args):
    synth.generate(args.task, args.out, args.n, args.seed, args.val_n, args.size, args.balance)
    print(json.dumps({"task": args.task, "out": args.out, "n": args.n, "val_n": args.val_n,
                      "seed": args.seed}, sort_keys=True))
    return EXIT_OK


def cmd_pretrain(args):
    cfg = build_config(args, "pretrain")
    _echo(cfg)
    _summary(pretrain(cfg))
    return EXIT_OK


def cmd_finetune(args):
    cfg = build_config(args, "finetune")
    _echo(cfg)
    _summary(finetune(cfg))
    return EXIT_OK


def cmd_eval(args):
    dataset = load_dataset_dir(args.data, "validation")
    ckpt = checkpoint_load(args.checkpoint)
    model = Model(ResNetConfig.from_dict(ckpt.model_config), Prng(0))
    model.load_params(ckpt.params)
    res = evaluate(model, dataset, args.batch_size, args.resolution or None)
    out = {"examples": len(dataset), "loss": res.loss, "accuracy": res.accuracy}
    if res.confusion is not None:
        c = res.confusion
        out["confusion"] = {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_hyperrule(args):
    decision = hyperrule.decide(hyperrule.DatasetProfile(args.num_examples, args.shorter_side,
                                                         args.num_classes))
    print(json.dumps(decision.to_json_dict(), sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    names = [args.layer] if args.layer else list(gradcheck.CHECKS)
    seeds = [args.seed] if args.seed is not None else list(range(args.seeds))
    reports = [gradcheck.check_layer(n, s, args.tol) for n in names for s in seeds]
    if len(reports) == 1:
        print(reports[0].table())
    else:
        width = max(len(n) for n in names)
        print(f"{'layer':<{width}}  {'seeds':>5}  {'worst_rel':>10}  {'tol':>8}  status")
        for n in names:
            rs = [r for r in reports if r.layer == n]
            ok = all(r.passed for r in rs)
            print(f"{n:<{width}}  {len(rs):>5}  {max(r.worst for r in rs):>10.3e}  "
                  f"{rs[0].tolerance:>8.1e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_inspect(args):
    ckpt = checkpoint_load(args.checkpoint)
    total = sum(int(v.size) for v in ckpt.params.values())
    print(json.dumps({"model": ckpt.model_config, "position": ckpt.position,
                      "format_version": ckpt.format_version}, sort_keys=True))
    width = max(len(k) for k in ckpt.params) if ckpt.params else 4
    for name, arr in ckpt.params.items():
        print(f"{name:<{width}}  {list(arr.shape)}")
    print(f"total_params {total}")
    return EXIT_OK


def _train_flags(p, finetune_mode):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dot-path override, e.g. model.base_width=16 (repeatable)")
    p.add_argument("--train-dir")
    p.add_argument("--val-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-out")
    p.add_argument("--metrics-csv")
    if finetune_mode:
        p.add_argument("--checkpoint-in")
        p.add_argument("--steps", type=int, help="override the decided step budget")
    else:
        p.add_argument("--epochs", type=int, help="schedule.total_epochs")


def make_parser():
    parser = argparse.ArgumentParser(prog="minibit", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic PPM dataset")
    p.add_argument("--task", required=True, choices=sorted(synth.TASKS))
    p.add_argument("--n", type=int, required=True, help="training images")
    p.add_argument("--val-n", type=int, default=0, help="validation images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--balance", type=float, default=0.5, help="class-1 share (2-class task)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train from scratch (upstream)")
    _train_flags(p, False)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint with the HyperRule")
    _train_flags(p, True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--resolution", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hyperrule", help="print the fine-tuning decision for a dataset profile")
    p.add_argument("--num-examples", type=int, required=True)
    p.add_argument("--shorter-side", type=int, required=True)
    p.add_argument("--num-classes", type=int, default=2)
    p.set_defaults(func=cmd_hyperrule)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--layer", choices=sorted(gradcheck.CHECKS) + [gradcheck.NEGATIVE_CONTROL])
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=20, help="seeds 0..N-1 when --seed is absent")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="print checkpoint config and parameter shapes")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ParseError, RegistryError, LoadMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, NumericError, OracleError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
