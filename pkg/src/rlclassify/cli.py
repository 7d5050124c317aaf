"""Command-line entry point: ``rlclassify {train,eval,sweep,export-gradients}``.

Exit codes: 0 success, 1 usage/configuration error, 2 data or I/O error.
The default CIFAR-10 directory comes from ``$RLCLS_DATA_DIR``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import runconfig
from .attacks import AttackConfig, parse_fraction
from .data_io import Dataset, load_checkpoint, load_cifar10, make_synthetic
from .errors import ConfigError, FormatError, InputError
from .evaluation import adversarial_accuracy, epsilon_sweep, export_gradients, natural_accuracy
from .trainer import ADV_MODES, TrainConfig, restore, train

DATA_ENV = "RLCLS_DATA_DIR"
log = logging.getLogger("rlclassify")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=os.environ.get(DATA_ENV),
                   help=f"CIFAR-10 binary directory (default: ${DATA_ENV})")
    p.add_argument("--synthetic", action="store_true",
                   help="use the seeded synthetic dataset instead of CIFAR-10")
    p.add_argument("--synthetic-size", type=int, default=64,
                   help="number of synthetic training samples (default: 64)")
    p.add_argument("--limit", type=int, default=None,
                   help="use only the first N samples of the evaluated/trained split")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")


def _add_attack_flags(p: argparse.ArgumentParser, eps_default: Optional[str] = "8/255") -> None:
    p.add_argument("--eps", default=eps_default, help="L-inf budget, fractions allowed (default: 8/255)")
    p.add_argument("--step-size", default="2/255", help="PGD step size (default: 2/255)")
    p.add_argument("--num-steps", type=int, default=5, help="PGD iterations (default: 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rlclassify", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model", description="Train with CE or RL loss, optionally adversarially.")
    t.add_argument("--config", help="flat key = value run-config file; flags override it")
    t.add_argument("--loss", choices=["ce", "rl"], help="training objective (required unless set in --config)")
    t.add_argument("--adv-train", choices=list(ADV_MODES), help="adversarial example generator (default: fgsm)")
    t.add_argument("--eps", help="attack budget for adversarial training, e.g. 8/255")
    t.add_argument("--step-size", help="PGD step size for --adv-train pgd")
    t.add_argument("--num-steps", type=int, help="PGD iterations for --adv-train pgd")
    t.add_argument("--epochs", type=int, help="number of epochs (default: 220)")
    t.add_argument("--batch-size", type=int, help="batch size (default: 32)")
    t.add_argument("--lr", help="RMSprop learning rate (default: 1e-4)")
    t.add_argument("--decay", help="per-update learning-rate decay (default: 1e-6)")
    t.add_argument("--seed", type=int, help="seed for initialization, shuffling and sampling")
    t.add_argument("--checkpoint-every", type=int, help="checkpoint/measurement interval in epochs (default: 20)")
    t.add_argument("--resume", help="continue from this checkpoint file")
    t.add_argument("--out", required=True, help="output directory")
    _add_data_flags(t)

    e = sub.add_parser("eval", help="natural and adversarial accuracy of a checkpoint",
                       description="Report natural accuracy and, unless --attack none, adversarial accuracy.")
    e.add_argument("--checkpoint", required=True, help="checkpoint file (.rck)")
    e.add_argument("--attack", choices=["none", "fgsm", "pgd", "ensemble"], default="fgsm",
                   help="attack used for adversarial accuracy (default: fgsm)")
    e.add_argument("--batch-size", type=int, default=256, help="evaluation batch size")
    _add_attack_flags(e)
    _add_data_flags(e)

    s = sub.add_parser("sweep", help="adversarial accuracy over several budgets",
                       description="Write an epsilon,adv_acc CSV for the given budgets.")
    s.add_argument("--checkpoint", required=True, help="checkpoint file (.rck)")
    s.add_argument("--attack", choices=["fgsm", "pgd", "ensemble"], default="fgsm", help="attack (default: fgsm)")
    s.add_argument("--eps-list", required=True, help="comma-separated ascending budgets starting at 0, e.g. 0,1/255,8/255")
    s.add_argument("--step-size", default="2/255", help="PGD step size (default: 2/255)")
    s.add_argument("--num-steps", type=int, default=5, help="PGD iterations (default: 5)")
    s.add_argument("--batch-size", type=int, default=256, help="evaluation batch size")
    s.add_argument("--out", help="CSV path (default: stdout)")
    _add_data_flags(s)

    g = sub.add_parser("export-gradients", help="dump FGSM input-gradient images",
                       description="Write original / sign-gradient / adversarial PNGs for N test samples.")
    g.add_argument("--checkpoint", required=True, help="checkpoint file (.rck)")
    g.add_argument("--n", type=int, default=8, help="number of test samples (default: 8)")
    g.add_argument("--seed", type=int, default=0, help="seed selecting the samples (default: 0)")
    g.add_argument("--eps", default="8/255", help="FGSM budget for the adversarial image (default: 8/255)")
    g.add_argument("--out", required=True, help="output directory")
    _add_data_flags(g)
    return parser


def _datasets(args, seed: int = 0) -> tuple[Dataset, Dataset]:
    if args.synthetic:
        n = args.synthetic_size
        train_set = make_synthetic(n, 10, seed, "train")
        test_set = make_synthetic(max(n // 2, 10), 10, seed + 10_000, "test")
    else:
        if not args.data:
            raise UsageError(f"no data: pass --data DIR, set ${DATA_ENV}, or use --synthetic")
        train_set, test_set = load_cifar10(args.data)
    if args.limit is not None:
        train_set, test_set = train_set.subset(args.limit), test_set.subset(args.limit)
    return train_set, test_set


def _resolve_train_config(args) -> TrainConfig:
    flat = runconfig.load(args.config) if args.config else {}
    overrides = {
        "loss_mode": args.loss,
        "adv_mode": args.adv_train,
        "attack.epsilon": args.eps,
        "attack.step_size": args.step_size,
        "attack.num_steps": args.num_steps,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "decay": args.decay,
        "seed": args.seed,
        "checkpoint_every": args.checkpoint_every,
    }
    flat.update({k: str(v) for k, v in overrides.items() if v is not None})
    if "loss_mode" not in flat:
        raise UsageError("--loss is required (choose from ce, rl)")
    if flat["loss_mode"] not in ("ce", "rl"):
        raise UsageError(f"invalid loss {flat['loss_mode']!r} (choose from ce, rl)")
    if flat.get("data_dir") == "synthetic":
        args.synthetic = True
    elif args.data is None and flat.get("data_dir"):
        args.data = flat["data_dir"]
    return runconfig.from_flat(flat)


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    train_set, test_set = _datasets(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_desc = "synthetic" if args.synthetic else str(args.data)
    (out / "config.txt").write_text(runconfig.dumps(cfg, data_desc))
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(cfg, train_set, test_set, out, resume=resume)
    last = result.metrics[-1] if result.metrics else None
    if last is not None:
        print(f"epoch {last.epoch}: train_acc={last.train_acc:.4f} test_acc={last.test_acc:.4f} "
              f"adv_fgsm_acc={last.adv_fgsm_acc:.4f}")
    return 0


def _attack_cfg(args) -> AttackConfig:
    return AttackConfig(epsilon=parse_fraction(args.eps), step_size=parse_fraction(args.step_size),
                        num_steps=args.num_steps)


def _load_net(path):
    net, _, _ = restore(load_checkpoint(path))
    return net


def cmd_eval(args) -> int:
    net = _load_net(args.checkpoint)
    _, test_set = _datasets(args)
    nat = natural_accuracy(net, test_set, args.batch_size)
    print(f"natural_accuracy={nat:.6f}")
    if args.attack != "none":
        cfg = _attack_cfg(args)
        adv = adversarial_accuracy(net, test_set, args.attack, cfg, args.batch_size)
        print(f"adversarial_accuracy[{args.attack}, eps={cfg.epsilon:.6f}]={adv:.6f}")
    return 0


def cmd_sweep(args) -> int:
    eps_list = [parse_fraction(v) for v in args.eps_list.split(",") if v.strip()]
    if not eps_list:
        raise UsageError("--eps-list is empty")
    net = _load_net(args.checkpoint)
    _, test_set = _datasets(args)
    base = AttackConfig(step_size=parse_fraction(args.step_size), num_steps=args.num_steps)
    result = epsilon_sweep(net, test_set, args.attack, eps_list, base, args.batch_size)
    text = result.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_export_gradients(args) -> int:
    net = _load_net(args.checkpoint)
    _, test_set = _datasets(args)
    if not 1 <= args.n <= len(test_set):
        raise UsageError(f"--n must be between 1 and {len(test_set)}")
    idx = np.sort(np.random.default_rng(args.seed).choice(len(test_set), size=args.n, replace=False))
    files = export_gradients(net, test_set.images[idx], test_set.labels[idx], args.out, parse_fraction(args.eps))
    print(f"wrote {len(files)} files to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "export-gradients": cmd_export_gradients,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError, InputError) as exc:
        print(f"rlclassify {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"rlclassify {args.command}: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
