"""Command-line entry point: train / eval / gradcheck / synth / cmc.

Options can come from a json config file (--config); explicit flags win.
All randomness flows from one --seed, split deterministically per consumer.
Exit codes: 0 success, 1 runtime failure (divergence, gradcheck threshold),
2 invalid configuration or unreadable input.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import evaluation
from .data import FeatureParseError, load_features, make_pairs, save_features
from .metric import distance_matrix
from .modelio import ModelFileError, load_model, save_model
from .pca import fit_pca
from .training import (Hyperparams, TrainingDiverged, gradcheck, train)
from .utils import atomic_write_text, configure_logging, log

SUMMARY_RANKS = (1, 5, 10, 20)


class CliError(Exception):
    """User-facing configuration/input error -> exit 2."""


def main(argv=None) -> int:
    configure_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (CliError, FeatureParseError, ModelFileError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser():
    p = argparse.ArgumentParser(prog="nlml",
                                description="nonlinear local metric learning")
    sub = p.add_subparsers(dest="command")
    p.set_defaults(command=None)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="json config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1,
                        help="worker cap; results are identical for any value")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("--k", type=int, help="number of local regions")
    hyper.add_argument("--beta", type=float)
    hyper.add_argument("--mu", type=float, help="learning rate")
    hyper.add_argument("--lambda", dest="lam", type=float)
    hyper.add_argument("--tau", type=float)
    hyper.add_argument("--c", dest="margin_c", type=float)
    hyper.add_argument("--gamma", type=float)
    hyper.add_argument("--epsilon", type=float)
    hyper.add_argument("--iters", type=int)
    hyper.add_argument("--pretrain-iters", type=int)
    hyper.add_argument("--recluster-every", type=int)
    hyper.add_argument("--activation", choices=["linear", "tanh", "relu", "scaled_tanh"])
    hyper.add_argument("--hidden-dims", help="comma list, e.g. 500,400,300")

    t = sub.add_parser("train", parents=[common, hyper],
                       help="train a model from a feature file")
    t.add_argument("--features", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--pca-dim", type=int)
    t.add_argument("--pair-mode", choices=["all", "balanced"])
    t.add_argument("--neg-ratio", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common],
                       help="CMC evaluation of a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--out", required=True, help="output CMC csv path")
    e.add_argument("--repeats", type=int, default=1)
    e.add_argument("--multi-shot", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", parents=[common, hyper],
                       help="finite-difference gradient verification")
    g.add_argument("--threshold", type=float, default=1e-5)
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", parents=[common],
                       help="generate the synthetic benchmark feature file")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["csv", "binary"], default="csv")
    s.add_argument("--regions", type=int)
    s.add_argument("--identities", type=int, help="identities per region")
    s.add_argument("--samples", type=int, help="samples per identity")
    s.add_argument("--dim", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--separation", type=float)
    s.add_argument("--distortion", type=float)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("cmc", parents=[common],
                       help="CMC curve from a precomputed distance csv")
    c.add_argument("--distances", required=True,
                   help="csv: header ',gid,...'; rows 'pid,dist,...'")
    c.add_argument("--out", required=True)
    c.add_argument("--multi-shot", action="store_true")
    c.set_defaults(func=cmd_cmc)
    return p


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {args.config}: {exc}")
        if not isinstance(cfg, dict):
            raise CliError(f"config file {args.config}: expected a json object")
    return cfg


def _pick(args, cfg, flag, key, default):
    v = getattr(args, flag, None)
    if v is not None:
        return v
    return cfg.get(key, default)


def _hyperparams(args, cfg) -> Hyperparams:
    base = Hyperparams()
    dims = _pick(args, cfg, "hidden_dims", "hidden_dims", base.hidden_dims)
    if isinstance(dims, str):
        try:
            dims = tuple(int(v) for v in dims.split(","))
        except ValueError:
            raise CliError(f"bad --hidden-dims value: {dims!r}")
    try:
        return Hyperparams(
            K=_pick(args, cfg, "k", "k", base.K),
            beta=_pick(args, cfg, "beta", "beta", base.beta),
            lam=_pick(args, cfg, "lam", "lambda", base.lam),
            gamma=_pick(args, cfg, "gamma", "gamma", base.gamma),
            tau=_pick(args, cfg, "tau", "tau", base.tau),
            c=_pick(args, cfg, "margin_c", "c", base.c),
            mu=_pick(args, cfg, "mu", "mu", base.mu),
            pretrain_mu=cfg.get("pretrain_mu", _pick(args, cfg, "mu", "mu", base.mu)),
            iters=_pick(args, cfg, "iters", "iters", base.iters),
            pretrain_iters=_pick(args, cfg, "pretrain_iters", "pretrain_iters",
                                 base.pretrain_iters),
            epsilon=_pick(args, cfg, "epsilon", "epsilon", base.epsilon),
            seed=_pick(args, cfg, "seed", "seed", base.seed),
            recluster_every=_pick(args, cfg, "recluster_every", "recluster_every",
                                  base.recluster_every),
            hidden_dims=tuple(dims),
            activation=_pick(args, cfg, "activation", "activation", base.activation),
        )
    except ValueError as exc:
        raise CliError(str(exc))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    hp = _hyperparams(args, cfg)
    features, labels = load_features(args.features)
    pair_mode = _pick(args, cfg, "pair_mode", "pair_mode", "all")
    neg_ratio = _pick(args, cfg, "neg_ratio", "neg_ratio", 1.0)
    pca_dim = _pick(args, cfg, "pca_dim", "pca_dim", None)

    pca = fit_pca(features, pca_dim) if pca_dim else None
    reduced = pca.transform(features) if pca else features
    pairs = make_pairs(labels, mode=pair_mode, ratio=neg_ratio, seed=hp.seed)
    model, report = train(reduced, pairs, hp)
    model.pca = pca

    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.nlml")
    save_model(model_path, model, hp)
    report.to_csv(os.path.join(args.out, "train_report.csv"))
    print(f"trained {report.iterations} iterations ({report.stop_reason}); "
          f"model -> {model_path}")
    return 0


def cmd_eval(args) -> int:
    model, hp = load_model(args.model)
    features, labels = load_features(args.features)
    expect = model.pca.in_dim if model.pca is not None else model.bank.in_dim
    if features.dim != expect:
        raise CliError(f"model expects {expect}-dim features, file has {features.dim}")

    curves = []
    all_idx = np.arange(features.count)
    for rep in range(max(1, args.repeats)):
        rng = np.random.default_rng((args.seed or 0) + rep)
        probe_idx, gallery_idx = evaluation._probe_gallery_split(labels, all_idx, rng)
        Xp = model.reduce(features.take(probe_idx))
        Xg = model.reduce(features.take(gallery_idx))
        dist = distance_matrix(model, Xp, Xg)
        curves.append(evaluation.cmc(dist, labels.labels[probe_idx],
                                     labels.labels[gallery_idx],
                                     multi_shot=args.multi_shot))
    rates = np.stack([c.rates for c in curves])
    mean, std = rates.mean(axis=0), rates.std(axis=0)
    _write_cmc_csv(args.out, mean, std)
    print(" ".join(f"rank{r}={mean[min(r, mean.size) - 1]:.4f}" for r in SUMMARY_RANKS))
    return 0


def _write_cmc_csv(path, mean, std):
    lines = ["rank,mean_rate,std_rate"]
    for r in range(mean.size):
        lines.append(f"{r + 1},{float(mean[r])!r},{float(std[r])!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    hp = _hyperparams(args, cfg)
    # keep the instance small regardless of the configured architecture
    if int(np.prod([d for d in hp.hidden_dims])) > 10 ** 4 or max(hp.hidden_dims) > 16:
        hp = replace(hp, hidden_dims=(8, 6, 4))
    hp = replace(hp, K=min(hp.K, 3))
    rep = gradcheck(hp, seed=hp.seed, corrupt=args.corrupt)
    print(f"gradcheck: {rep.n_params} params, max rel error {rep.max_rel_error:.3e}, "
          f"mean {rep.mean_rel_error:.3e}")
    return 0 if rep.max_rel_error < args.threshold else 1


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    base = evaluation.SynthSpec()
    try:
        spec = evaluation.SynthSpec(
            regions=_pick(args, cfg, "regions", "regions", base.regions),
            identities_per_region=_pick(args, cfg, "identities", "identities",
                                        base.identities_per_region),
            samples_per_identity=_pick(args, cfg, "samples", "samples",
                                       base.samples_per_identity),
            dim=_pick(args, cfg, "dim", "dim", base.dim),
            noise=_pick(args, cfg, "noise", "noise", base.noise),
            region_separation=_pick(args, cfg, "separation", "separation",
                                    base.region_separation),
            distortion=_pick(args, cfg, "distortion", "distortion", base.distortion),
            seed=_pick(args, cfg, "seed", "seed", base.seed),
        )
    except ValueError as exc:
        raise CliError(str(exc))
    X, labels = evaluation.synth_generate(spec)
    save_features(args.out, X, labels, format=args.format)
    print(f"wrote {X.count} samples of dim {X.dim} -> {args.out}")
    return 0


def cmd_cmc(args) -> int:
    probe_ids, gallery_ids, dist = _read_distance_csv(args.distances)
    curve = evaluation.cmc(dist, probe_ids, gallery_ids, multi_shot=args.multi_shot)
    _write_cmc_csv(args.out, curve.rates, np.zeros_like(curve.rates))
    print(" ".join(f"rank{r}={curve.rank(r):.4f}" for r in SUMMARY_RANKS))
    return 0


def _read_distance_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) < 2 or header[0] != "":
            raise CliError(f"{path}: first line must be ',gallery_id,...'")
        try:
            gallery_ids = np.array([int(v) for v in header[1:]])
        except ValueError:
            raise CliError(f"{path}: gallery ids must be integers")
        probe_ids, rows = [], []
        for ln, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.strip().split(",")
            if len(fields) != gallery_ids.size + 1:
                raise CliError(f"{path}:{ln}: expected {gallery_ids.size + 1} fields")
            try:
                probe_ids.append(int(fields[0]))
                rows.append([float(v) for v in fields[1:]])
            except ValueError:
                raise CliError(f"{path}:{ln}: unparseable value")
    if not rows:
        raise CliError(f"{path}: no probe rows")
    return np.array(probe_ids), gallery_ids, np.array(rows)


if __name__ == "__main__":
    sys.exit(main())
