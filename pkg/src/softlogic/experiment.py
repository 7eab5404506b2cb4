"""Experiment orchestration: train/evaluate grids of (backend, seed) cells
and emit deterministic CSV files.

A config file is flat ``key = value`` text with one section per
experiment (INI syntax; see README for the grammar).  Every cell trains
one network, then reports prediction accuracy, constraint accuracy
(random sampling), constraint security under the self and fixed-oracle
attacks, and verified constraint satisfaction, on a subset of the test
set shared by all cells.

Per evaluated point the metric chain is asserted: a verified point must
be secure under every attack and satisfied at every random sample.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

from .backends import Backend, backend_name, parse_backend
from .constraints import ConstraintSpec, constraint_name, parse_constraint
from .data import Dataset, gen_blobs, gen_multilabel, load_idx
from .models import Network, forward, init_network, save_network
from .rng import stream
from .training import TrainConfig, train
from .verify import FALSIFIED, VERIFIED, c_acc, c_sat, c_sec

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "ExperimentResult",
    "MetricChainError",
    "parse_config",
    "load_dataset",
    "run_cell",
    "run_experiment",
]


class MetricChainError(AssertionError):
    """A verified point failed a weaker metric: the verifier or an attack
    is unsound somewhere."""


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: str = "blobs"               # blobs | multilabel | idx
    data_seed: int = 7
    points_per_class: int = 60
    test_points_per_class: int = 25
    classes: int = 3
    dim: int = 2
    separation: float = 4.0
    points: int = 200                    # multilabel datasets
    pairs: int = 2
    images: str = ""                     # idx datasets
    idx_labels: str = ""
    test_images: str = ""
    test_idx_labels: str = ""
    downsample: int = 0
    arch: tuple = (2, 16, 16, 3)
    constraint: str = "cr:labels=0,1,2"
    backends: tuple = ("baseline", "qll:p=5")
    seeds: tuple = (1,)
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    alpha: float = 0.5
    eps: float = 0.05
    pgd_steps: int = 5
    pgd_restarts: int = 1
    eval_points: int = 25
    cacc_samples: int = 200
    attack_steps: int = 20
    attack_restarts: int = 2
    csat_budget: int = 300
    oracle: str = "qll:p=5"

    def spec(self) -> ConstraintSpec:
        return parse_constraint(self.constraint)


def _parse_tuple(text: str, conv):
    return tuple(conv(part.strip()) for part in text.split(",") if part.strip())


def parse_config(path: str) -> list:
    """Read experiment sections from a flat key = value config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)
    configs = []
    for section in parser.sections():
        raw = dict(parser[section])
        kwargs = {"name": section}
        for key, value in raw.items():
            if key in ("dataset", "constraint", "oracle", "images", "idx_labels",
                       "test_images", "test_idx_labels"):
                kwargs[key] = value
            elif key == "backends":
                kwargs[key] = tuple(b.strip() for b in value.split(","))
            elif key in ("seeds",):
                kwargs[key] = _parse_tuple(value, int)
            elif key == "arch":
                kwargs[key] = _parse_tuple(value, int)
            elif key in ("separation", "learning_rate", "weight_decay", "alpha", "eps"):
                kwargs[key] = float(value)
            elif key in ("data_seed", "points_per_class", "test_points_per_class",
                         "classes", "dim", "points", "pairs", "downsample", "epochs",
                         "batch_size", "pgd_steps", "pgd_restarts", "eval_points",
                         "cacc_samples", "attack_steps", "attack_restarts",
                         "csat_budget"):
                kwargs[key] = int(value)
            else:
                raise ValueError(f"unknown config key {key!r} in [{section}]")
        configs.append(ExperimentConfig(**kwargs))
    return configs


def load_dataset(cfg: ExperimentConfig):
    """Returns (train set, test set) per the config's dataset block."""
    if cfg.dataset == "blobs":
        tr = gen_blobs(cfg.data_seed, cfg.points_per_class, cfg.classes, cfg.dim,
                       cfg.separation)
        te = gen_blobs(cfg.data_seed + 1000003, cfg.test_points_per_class, cfg.classes,
                       cfg.dim, cfg.separation)
        return tr, te
    if cfg.dataset == "multilabel":
        tr = gen_multilabel(cfg.data_seed, cfg.points, cfg.pairs, cfg.dim)
        te = gen_multilabel(cfg.data_seed + 1000003, max(cfg.points // 4, 8),
                            cfg.pairs, cfg.dim)
        return tr, te
    if cfg.dataset == "idx":
        down = cfg.downsample or None
        tr = load_idx(cfg.images, cfg.idx_labels, down)
        te = load_idx(cfg.test_images or cfg.images,
                      cfg.test_idx_labels or cfg.idx_labels, down)
        return tr, te
    raise ValueError(f"unknown dataset kind {cfg.dataset!r}")


@dataclass
class RunResult:
    backend: str
    seed: int
    pacc: float
    cacc: float
    csec_self: float | None
    csec_oracle: float
    csat_verified: float
    csat_falsified: float
    csat_unknown: float


@dataclass
class ExperimentResult:
    name: str
    rows: list
    files: list = field(default_factory=list)

    def summary(self) -> list:
        """Per-backend mean and population std across seeds."""
        order = []
        groups: dict = {}
        for r in self.rows:
            if r.backend not in groups:
                order.append(r.backend)
            groups.setdefault(r.backend, []).append(r)
        out = []
        for b in order:
            rows = groups[b]

            def stats(getter):
                vals = [getter(r) for r in rows]
                if any(v is None for v in vals):
                    return None, None
                return float(np.mean(vals)), float(np.std(vals))
            out.append({
                "backend": b,
                "pacc": stats(lambda r: r.pacc),
                "cacc": stats(lambda r: r.cacc),
                "csec_self": stats(lambda r: r.csec_self),
                "csec_oracle": stats(lambda r: r.csec_oracle),
                "csat_verified": stats(lambda r: r.csat_verified),
                "csat_falsified": stats(lambda r: r.csat_falsified),
                "csat_unknown": stats(lambda r: r.csat_unknown),
            })
        return out


def prediction_accuracy(net: Network, data: Dataset) -> float:
    outs = forward(net, data.inputs)
    if data.multilabel:
        return 100.0 * float(np.mean(np.all((outs <= 0.0) == (data.labels > 0), axis=1)))
    # argmax breaks ties toward the lowest index
    return 100.0 * float(np.mean(np.argmax(outs, axis=1) == data.labels))


def _eval_subset(cfg: ExperimentConfig, test: Dataset):
    take = min(cfg.eval_points, len(test))
    idx = stream(cfg.data_seed, "eval-subset").choice(len(test), size=take, replace=False)
    idx = np.sort(idx)
    return test.inputs[idx], test.labels[idx]


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def run_cell(cfg: ExperimentConfig, backend: Backend, seed: int, train_set: Dataset,
             test_set: Dataset, out_dir: str | None = None):
    """Train and evaluate one (backend, seed) cell.

    Returns (RunResult, per-point records, epoch log, trained network).
    """
    spec = cfg.spec()
    net = init_network(cfg.arch, seed)
    tc = TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay, alpha=cfg.alpha, eps=cfg.eps,
        pgd_steps=cfg.pgd_steps, pgd_restarts=cfg.pgd_restarts, seed=seed,
        backend=backend, constraint=None if backend.kind == "baseline" else spec)
    trained, epoch_log = train(net, train_set, tc)

    pacc = prediction_accuracy(trained, test_set)
    X, y = _eval_subset(cfg, test_set)
    step = 2.5 * cfg.eps / max(cfg.attack_steps, 1)
    cacc_pct, fracs = c_acc(trained, X, y, spec, cfg.eps, cfg.cacc_samples,
                            seed=cfg.data_seed)
    if backend.kind == "baseline":
        csec_self_pct, secure_self = None, [None] * len(X)
    else:
        csec_self_pct, secure_self = c_sec(
            trained, X, y, spec, cfg.eps, cfg.attack_steps, cfg.attack_restarts,
            step, seed=cfg.data_seed, oracle_backend=backend)
    oracle = parse_backend(cfg.oracle)
    csec_oracle_pct, secure_oracle = c_sec(
        trained, X, y, spec, cfg.eps, cfg.attack_steps, cfg.attack_restarts,
        step, seed=cfg.data_seed, oracle_backend=oracle)
    counts = c_sat(trained, X, y, spec, cfg.eps, cfg.csat_budget)

    points = []
    for i, verdict in enumerate(counts.per_sample):
        if verdict.kind == VERIFIED:
            attacks_ok = all(s for s in (secure_self[i], secure_oracle[i])
                             if s is not None)
            if not (attacks_ok and fracs[i] == 1.0):
                raise MetricChainError(
                    f"point {i}: verified but secure_self={secure_self[i]} "
                    f"secure_oracle={secure_oracle[i]} cacc={fracs[i]}")
        points.append({
            "sample_id": i,
            "verdict": verdict.kind,
            "secure_self": secure_self[i],
            "secure_oracle": secure_oracle[i],
            "cacc_fraction": fracs[i],
            "witness": ("" if verdict.witness is None
                        else ";".join(repr(float(v)) for v in verdict.witness)),
        })

    result = RunResult(
        backend=backend_name(backend), seed=seed, pacc=pacc, cacc=cacc_pct,
        csec_self=csec_self_pct, csec_oracle=csec_oracle_pct,
        csat_verified=counts.rate("verified"), csat_falsified=counts.rate("falsified"),
        csat_unknown=counts.rate("unknown"))

    if out_dir is not None:
        tag = f"{_safe(backend_name(backend))}_{seed}"
        save_network(trained, os.path.join(out_dir, f"net_{tag}.txt"), seed=seed)
        _write_csv(os.path.join(out_dir, f"train_{tag}.csv"),
                   ["epoch", "loss_pred", "loss_constraint", "lambda", "train_acc"],
                   [[row["epoch"], _fmt(row["loss_pred"]), _fmt(row["loss_constraint"]),
                     _fmt(row["lambda"]), _fmt(row["train_acc"])] for row in epoch_log])
        _write_csv(os.path.join(out_dir, f"points_{tag}.csv"),
                   ["sample_id", "verdict", "secure_self", "secure_oracle",
                    "cacc_fraction", "witness"],
                   [[p["sample_id"], p["verdict"],
                     "" if p["secure_self"] is None else int(p["secure_self"]),
                     int(p["secure_oracle"]), _fmt(p["cacc_fraction"]), p["witness"]]
                    for p in points])
    return result, points, epoch_log, trained


def _safe(name: str) -> str:
    return name.replace(":", "-").replace("=", "-").replace(",", "-").replace(".", "_")


def _write_csv(path: str, header: list, rows: list) -> str:
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    return path


def run_experiment(cfg: ExperimentConfig, out_dir: str) -> ExperimentResult:
    """Run the full (backend x seed) grid of one experiment section."""
    exp_dir = os.path.join(out_dir, _safe(cfg.name))
    os.makedirs(exp_dir, exist_ok=True)
    train_set, test_set = load_dataset(cfg)
    rows = []
    files = []
    for btext in cfg.backends:
        backend = parse_backend(btext)
        for seed in cfg.seeds:
            result, _, _, _ = run_cell(cfg, backend, seed, train_set, test_set, exp_dir)
            rows.append(result)
    res = ExperimentResult(cfg.name, rows)

    results_path = os.path.join(exp_dir, "results.csv")
    _write_csv(results_path,
               ["backend", "seed", "pacc", "cacc", "csec_self", "csec_oracle",
                "csat_verified", "csat_falsified", "csat_unknown"],
               [[r.backend, r.seed, _fmt(r.pacc), _fmt(r.cacc), _fmt(r.csec_self),
                 _fmt(r.csec_oracle), _fmt(r.csat_verified), _fmt(r.csat_falsified),
                 _fmt(r.csat_unknown)] for r in rows])
    files.append(results_path)

    summary_path = os.path.join(exp_dir, "summary.csv")
    header = ["backend"]
    for metric in ("pacc", "cacc", "csec_self", "csec_oracle", "csat_verified",
                   "csat_falsified", "csat_unknown"):
        header += [f"{metric}_mean", f"{metric}_std"]
    srows = []
    for entry in res.summary():
        row = [entry["backend"]]
        for metric in ("pacc", "cacc", "csec_self", "csec_oracle", "csat_verified",
                       "csat_falsified", "csat_unknown"):
            mean, std = entry[metric]
            row += [_fmt(mean), _fmt(std)]
        srows.append(row)
    _write_csv(summary_path, header, srows)
    files.append(summary_path)
    res.files = files
    return res
