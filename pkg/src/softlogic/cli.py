"""Command-line interface.

Subcommands: train, attack, verify, eval, run (full experiment grid),
export (formula/network/box triple).  Dataset flags accept either a
synthetic spec (--blobs / --multilabel) or an IDX pair (--images /
--labels, resolved against $SOFTLOGIC_DATA_DIR when relative).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .backends import parse_backend
from .constraints import build_constraint, parse_constraint
from .data import gen_blobs, gen_multilabel, load_idx
from .experiment import parse_config, run_experiment
from .models import forward, init_network, load_network, save_network
from .training import TrainConfig, make_box, train
from .verify import c_acc, c_sat, c_sec, export_problem

DATA_DIR_ENV = "SOFTLOGIC_DATA_DIR"


def _data_path(path: str) -> str:
    if os.path.isabs(path) or os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV, "")
    return os.path.join(base, path) if base else path


def _kv(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if part.strip():
            k, _, v = part.partition("=")
            out[k.strip()] = v.strip()
    return out


def _load_data(args):
    if getattr(args, "blobs", None):
        kv = _kv(args.blobs)
        return gen_blobs(int(kv.get("seed", 7)), int(kv.get("points", 60)),
                         int(kv.get("classes", 3)), int(kv.get("dim", 2)),
                         float(kv.get("separation", 4.0)))
    if getattr(args, "multilabel", None):
        kv = _kv(args.multilabel)
        return gen_multilabel(int(kv.get("seed", 7)), int(kv.get("points", 120)),
                              int(kv.get("pairs", 2)), int(kv.get("dim", 2)))
    if getattr(args, "images", None):
        if not args.labels:
            raise SystemExit("--images needs --labels")
        return load_idx(_data_path(args.images), _data_path(args.labels),
                        args.downsample or None)
    raise SystemExit("no dataset given (use --blobs, --multilabel, or --images/--labels)")


def _add_data_flags(p):
    p.add_argument("--blobs", help="synthetic blobs, e.g. seed=7,points=60,classes=3,dim=2,separation=4")
    p.add_argument("--multilabel", help="synthetic multi-label set, e.g. seed=7,points=120,pairs=2,dim=2")
    p.add_argument("--images", help="IDX image file")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--downsample", type=int, default=0, help="block-average images to NxN")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="qll:p=5")
    p.add_argument("--constraint", default="cr:labels=0,1,2")
    p.add_argument("--arch", default="2,16,16,3", help="layer sizes, e.g. 64,32,10")
    p.add_argument("--eps", type=float, default=0.05)


def _arch(text: str) -> tuple:
    return tuple(int(s) for s in text.split(","))


def cmd_train(args) -> int:
    data = _load_data(args)
    backend = parse_backend(args.backend)
    spec = None if backend.kind == "baseline" else parse_constraint(args.constraint)
    net = init_network(_arch(args.arch), args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, weight_decay=args.weight_decay,
                      alpha=args.alpha, eps=args.eps, pgd_steps=args.pgd_steps,
                      pgd_restarts=args.pgd_restarts, seed=args.seed,
                      backend=backend, constraint=spec)
    trained, log = train(net, data, cfg)
    save_network(trained, args.out, seed=args.seed)
    print("epoch,loss_pred,loss_constraint,lambda,train_acc")
    for row in log:
        print(f"{row['epoch']},{row['loss_pred']!r},{row['loss_constraint']!r},"
              f"{row['lambda']!r},{row['train_acc']!r}")
    print(f"saved {args.out}")
    return 0


def cmd_attack(args) -> int:
    data = _load_data(args)
    net = load_network(args.net)
    spec = parse_constraint(args.constraint)
    pct, flags = c_sec(net, data.inputs, data.labels, spec, args.eps,
                       args.steps, args.restarts, 2.5 * args.eps / max(args.steps, 1),
                       seed=args.seed, oracle_backend=parse_backend(args.backend))
    print(f"secure: {sum(1 for f in flags if f)}/{len(flags)} ({pct:.2f}%)")
    return 0


def cmd_verify(args) -> int:
    data = _load_data(args)
    net = load_network(args.net)
    spec = parse_constraint(args.constraint)
    counts = c_sat(net, data.inputs, data.labels, spec, args.eps, args.budget)
    lines = ["sample_id,verdict,witness"]
    for i, v in enumerate(counts.per_sample):
        wit = "" if v.witness is None else ";".join(repr(float(x)) for x in v.witness)
        lines.append(f"{i},{v.kind},{wit}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    print(f"verified {counts.verified} falsified {counts.falsified} "
          f"unknown {counts.unknown} of {counts.total}")
    return 0


def cmd_eval(args) -> int:
    data = _load_data(args)
    net = load_network(args.net)
    spec = parse_constraint(args.constraint)
    outs = forward(net, data.inputs)
    if data.multilabel:
        pacc = 100.0 * float(np.mean(np.all((outs <= 0.0) == (data.labels > 0), axis=1)))
    else:
        pacc = 100.0 * float(np.mean(np.argmax(outs, axis=1) == data.labels))
    cacc, _ = c_acc(net, data.inputs, data.labels, spec, args.eps, args.samples,
                    seed=args.seed)
    print(f"pacc {pacc:.2f}% cacc {cacc:.2f}%")
    return 0


def cmd_run(args) -> int:
    configs = parse_config(args.config)
    if args.experiment:
        configs = [c for c in configs if c.name == args.experiment]
        if not configs:
            raise SystemExit(f"no section [{args.experiment}] in {args.config}")
    for cfg in configs:
        res = run_experiment(cfg, args.out)
        print(f"[{cfg.name}]")
        for entry in res.summary():
            mean, std = entry["csat_verified"]
            pm, ps = entry["pacc"]
            print(f"  {entry['backend']}: pacc {pm:.1f}+-{ps:.1f} "
                  f"csat-verified {mean:.1f}+-{std:.1f}")
        for path in res.files:
            print(f"  wrote {path}")
    return 0


def cmd_export(args) -> int:
    net = load_network(args.net)
    spec = parse_constraint(args.constraint)
    mode = "simplified" if args.true_class is not None else "full"
    phi = build_constraint(spec, mode, true_class=args.true_class)
    x = np.array([float(v) for v in args.center.split(",")])
    box = make_box(x, args.eps)
    for path in export_problem(net, box, phi, args.out):
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="softlogic",
                                 description="differentiable-logic training and verification")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="property-driven training")
    _add_data_flags(p)
    _add_common(p)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--pgd-steps", type=int, default=5)
    p.add_argument("--pgd-restarts", type=int, default=1)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack", help="constraint security under attack")
    _add_data_flags(p)
    _add_common(p)
    p.add_argument("--net", required=True)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--restarts", type=int, default=2)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("verify", help="verified constraint satisfaction")
    _add_data_flags(p)
    _add_common(p)
    p.add_argument("--net", required=True)
    p.add_argument("--budget", type=int, default=300)
    p.add_argument("--out", help="verdict CSV path (stdout when omitted)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("eval", help="prediction and constraint accuracy")
    _add_data_flags(p)
    _add_common(p)
    p.add_argument("--net", required=True)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="full experiment grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--experiment", help="run only this section")
    p.add_argument("--out", default="results")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("export", help="write the (network, box, formula) triple")
    p.add_argument("--net", required=True)
    p.add_argument("--constraint", required=True)
    p.add_argument("--true-class", type=int, default=None)
    p.add_argument("--center", required=True, help="comma-separated input point")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(fn=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
