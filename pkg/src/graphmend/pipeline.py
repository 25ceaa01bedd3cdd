"""End-to-end correction loop and the batch command-line interface.

Each outer epoch: (1) re-split the dataset on the latest embedding
features, (2) refresh ensemble branch parameters as a random convex mix
of the corrected-branch and noisy-branch parameters, (3) run one
training pass, (4) build one k-NN graph per ensemble branch from its
hidden-layer features, (5) propagate every branch's label planes
through every graph, (6) vote, renormalize confidence, and update the
corrected labels, (7) write the epoch report.  Epoch 1 splits on the
ingested features, starts from corrected = noisy with confidence 1, and
trains all branches from one shared random initialization.
"""

import argparse
import json
import os
import sys

import numpy as np

from .branches import (
    BranchModel,
    ModelSet,
    TrainConfig,
    forward,
    init_model,
    save_model,
    train_epoch,
)
from .core import (
    CorrectionReport,
    FeatureMatrix,
    GraphmendError,
    LabelState,
    ValidationError,
    check_pairing,
    ensure_dir,
    load_features,
    load_label_columns,
    save_features,
    save_labels,
    save_report,
)
from .correct import VoteOutcome, apply_correction, decide_all, normalize_confidence
from .graph import GraphConfig, build_adjacency, normalize_graph
from .propagate import (
    PropagationConfig,
    SuggestionTensor,
    build_partial_labels,
    certainty_weights,
    diffusion_oracle,
    solve_propagation,
    suggest_labels,
)
from .splitter import SplitConfig, mix_parameters, split_dataset
from .synth import SynthConfig, make_noisy_dataset

# substream tags for the master seed; keeping them distinct means no
# phase can consume another phase's randomness
TAG_INIT = 0
TAG_SPLIT = 1
TAG_MIX = 2
TAG_TRAIN = 3


class PipelineConfig:
    def __init__(
        self,
        split=None,
        graph=None,
        prop=None,
        train=None,
        outer_epochs=15,
        resplit_each_epoch=True,
        seed=0,
        n_classes=None,
        use_oracle=False,
        oracle_iters=1000,
        dump_suggestions=False,
        early_stop=False,
        sweep_m=None,
        sweep_b=None,
    ):
        self.split = split if split is not None else SplitConfig()
        self.graph = graph if graph is not None else GraphConfig()
        self.prop = prop if prop is not None else PropagationConfig()
        self.train = train if train is not None else TrainConfig()
        if outer_epochs < 1:
            raise ValidationError("outer_epochs must be >= 1")
        self.outer_epochs = int(outer_epochs)
        self.resplit_each_epoch = bool(resplit_each_epoch)
        self.seed = int(seed)
        self.n_classes = None if n_classes is None else int(n_classes)
        self.use_oracle = bool(use_oracle)
        self.oracle_iters = int(oracle_iters)
        self.dump_suggestions = bool(dump_suggestions)
        self.early_stop = bool(early_stop)
        self.sweep_m = list(sweep_m) if sweep_m else []
        self.sweep_b = list(sweep_b) if sweep_b else []


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _write_run_config(path, cfg, n_classes):
    """Echo every resolved setting; the file reads back as a config file."""
    values = [
        ("n_branches", cfg.split.n_branches),
        ("packages_per_class_per_branch", cfg.split.packages_per_class_per_branch),
        ("rng_seed", cfg.split.rng_seed),
        ("k_graph", cfg.graph.k_graph),
        ("gamma", cfg.graph.gamma),
        ("alpha_prop", cfg.prop.alpha_prop),
        ("cg_tolerance", cfg.prop.cg_tolerance),
        ("cg_max_iters", cfg.prop.cg_max_iters),
        ("learning_rate", cfg.train.learning_rate),
        ("momentum", cfg.train.momentum),
        ("lr_decay", cfg.train.lr_decay),
        ("lr_decay_every", cfg.train.lr_decay_every),
        ("epochs", cfg.train.epochs),
        ("batch_size", cfg.train.batch_size),
        ("l2_weight", cfg.train.l2_weight),
        ("hidden_width", cfg.train.hidden_width),
        ("alpha_smooth", cfg.train.alpha_smooth),
        ("pair_sample_count", cfg.train.pair_sample_count),
        ("outer_epochs", cfg.outer_epochs),
        ("resplit_each_epoch", "true" if cfg.resplit_each_epoch else "false"),
        ("seed", cfg.seed),
        ("n_classes", n_classes),
        ("oracle_iters", cfg.oracle_iters),
    ]
    with open(path, "w") as fh:
        for key, value in values:
            fh.write("%s = %s\n" % (key, value))


def evaluate(noisy, corrected, clean):
    """Correction quality against known clean labels."""
    noisy = np.asarray(noisy, dtype=np.int64)
    corrected = np.asarray(corrected, dtype=np.int64)
    clean = np.asarray(clean, dtype=np.int64)
    if not (noisy.shape == corrected.shape == clean.shape):
        raise ValidationError("label arrays differ in length")
    flipped = noisy != clean
    restored = corrected == clean
    out = {
        "correction_accuracy": float(restored[flipped].mean()) if flipped.any() else 1.0,
        "clean_preservation": (
            float((corrected == noisy)[~flipped].mean()) if (~flipped).any() else 1.0
        ),
        "residual_noise_rate": float((corrected != clean).mean()),
    }
    return out


def save_suggestions(path, suggestions):
    """Debug dump of every (graph, label set, sample, plane) suggestion."""
    with open(path, "w") as fh:
        fh.write("MLCT v1\n")
        fh.write(
            "n_branches %d\nn_samples %d\nn_classes %d\n"
            % (suggestions.n_branches, suggestions.n_samples, suggestions.n_classes)
        )
        fh.write("columns m j sample plane label weight\n")
        M, n = suggestions.n_branches, suggestions.n_samples
        for m in range(M):
            for j in range(M):
                for i in range(n):
                    for q in range(2):
                        fh.write(
                            "%d %d %d %d %d %s\n"
                            % (
                                m,
                                j,
                                i,
                                q,
                                suggestions.labels[m, j, i, q],
                                repr(float(suggestions.weights[m, j, i, q])),
                            )
                        )


def run_correction(cfg, features=None, labels=None, clean=None, output_dir=None):
    """Run the full iterative correction; returns the per-epoch reports."""
    if features is None or labels is None:
        raise ValidationError("run_correction needs features and labels")
    labels = np.asarray(labels, dtype=np.int64)
    check_pairing(features, labels)
    if labels.size == 0:
        raise ValidationError("label file is empty")
    C = cfg.n_classes
    if C is None:
        C = int(labels.max()) + 1
        if clean is not None:
            C = max(C, int(np.asarray(clean).max()) + 1)
    M = cfg.split.n_branches
    n = labels.shape[0]
    if not cfg.graph.k_graph < n:
        raise ValidationError("k_graph must be smaller than the sample count")

    state = LabelState(labels, labels.copy(), np.ones(n), C)
    dim = features.dim
    H = cfg.train.hidden_width
    base = init_model(dim, H, C, _stream(cfg.seed, TAG_INIT))
    models = ModelSet(
        [base.clone() for _ in range(M)], base.clone(), base.clone()
    )

    if output_dir is not None:
        ensure_dir(output_dir)
        _write_run_config(os.path.join(output_dir, "run_config.txt"), cfg, C)
    split_features = features
    assignment = None
    reports = []
    prev_corrected = state.corrected.copy()
    for epoch in range(1, cfg.outer_epochs + 1):
        if assignment is None or cfg.resplit_each_epoch:
            assignment = split_dataset(
                split_features,
                state.noisy,
                cfg.split,
                rng=np.random.SeedSequence(cfg.seed, spawn_key=(TAG_SPLIT, epoch)),
                n_classes=C,
            )
        if epoch >= 2:
            mix_rng = _stream(cfg.seed, TAG_MIX, epoch)
            for m in range(M):
                alpha_m = float(mix_rng.uniform())
                theta = mix_parameters(
                    models.corrected.theta, models.noisy.theta, alpha_m
                )
                models.ensemble[m] = BranchModel(dim, H, C, theta)
        train_epoch(
            models,
            assignment,
            features,
            state,
            cfg.train,
            _stream(cfg.seed, TAG_TRAIN, epoch),
            epoch=epoch,
        )

        graphs = []
        for m in range(M):
            hidden, _ = forward(models.ensemble[m], features.data)
            graphs.append(
                normalize_graph(build_adjacency(FeatureMatrix(hidden), cfg.graph))
            )
        planes = [build_partial_labels(assignment, j, state) for j in range(M)]
        sug_labels = np.empty((M, M, n, 2), dtype=np.int64)
        sug_weights = np.empty((M, M, n, 2))
        for m in range(M):
            for j in range(M):
                if cfg.use_oracle:
                    Z = diffusion_oracle(
                        graphs[m], planes[j], cfg.prop.alpha_prop, cfg.oracle_iters
                    )
                else:
                    Z = solve_propagation(graphs[m], planes[j], cfg.prop)
                sug_labels[m, j] = suggest_labels(Z)
                sug_weights[m, j] = certainty_weights(Z)
        suggestions = SuggestionTensor(sug_labels, sug_weights, C)

        winners, counts, omega_hat, ties = decide_all(suggestions)
        omega_bar = normalize_confidence(omega_hat)
        outcomes = [
            VoteOutcome(winners[i], counts[i], omega_hat[i], ties[i])
            for i in range(n)
        ]
        state = apply_correction(state, outcomes, omega_bar)

        accuracy = None
        if clean is not None:
            accuracy = evaluate(state.noisy, state.corrected, clean)[
                "correction_accuracy"
            ]
        report = CorrectionReport(
            epoch, state.noisy, state.corrected, state.confidence, accuracy
        )
        reports.append(report)
        if output_dir is not None:
            edir = ensure_dir(os.path.join(output_dir, "epoch_%d" % epoch))
            save_report(os.path.join(edir, "report.txt"), report)
            if cfg.dump_suggestions:
                save_suggestions(os.path.join(edir, "suggestions.txt"), suggestions)
            save_model(os.path.join(edir, "corrected_model.bin"), models.corrected)
            save_model(os.path.join(edir, "noisy_model.bin"), models.noisy)

        hidden, _ = forward(models.noisy, features.data)
        split_features = FeatureMatrix(hidden)
        changed = int((state.corrected != prev_corrected).sum())
        prev_corrected = state.corrected.copy()
        if cfg.early_stop and changed == 0:
            break
    if output_dir is not None:
        fdir = ensure_dir(os.path.join(output_dir, "final"))
        save_labels(os.path.join(fdir, "labels.csv"), state.corrected)
        save_model(os.path.join(fdir, "corrected_model.bin"), models.corrected)
    return reports


def run_sweep(cfg, features=None, labels=None, clean=None, output_dir=None):
    """One full run per (M, B) combination; returns sorted result rows."""
    if not cfg.sweep_m or not cfg.sweep_b:
        raise ValidationError("sweep needs nonempty sweep_m and sweep_b lists")
    rows = []
    for M in sorted(cfg.sweep_m):
        for B in sorted(cfg.sweep_b):
            sub = PipelineConfig(
                split=SplitConfig(M, B, cfg.split.rng_seed),
                graph=cfg.graph,
                prop=cfg.prop,
                train=cfg.train,
                outer_epochs=cfg.outer_epochs,
                resplit_each_epoch=cfg.resplit_each_epoch,
                seed=cfg.seed,
                n_classes=cfg.n_classes,
                use_oracle=cfg.use_oracle,
                oracle_iters=cfg.oracle_iters,
                early_stop=cfg.early_stop,
            )
            subdir = None
            if output_dir is not None:
                subdir = os.path.join(output_dir, "sweep_M%d_B%d" % (M, B))
            reports = run_correction(
                sub, features=features, labels=labels, clean=clean, output_dir=subdir
            )
            final = reports[-1]
            if clean is not None:
                metrics = evaluate(final.noisy, final.corrected, clean)
                rows.append(
                    (
                        M,
                        B,
                        metrics["correction_accuracy"],
                        metrics["residual_noise_rate"],
                    )
                )
            else:
                rows.append((M, B, None, None))
    if output_dir is not None:
        ensure_dir(output_dir)
        with open(os.path.join(output_dir, "sweep.csv"), "w") as fh:
            fh.write("M,B,correction_accuracy,residual_noise_rate\n")
            for M, B, acc, resid in rows:
                fh.write(
                    "%d,%d,%s,%s\n"
                    % (
                        M,
                        B,
                        "" if acc is None else repr(acc),
                        "" if resid is None else repr(resid),
                    )
                )
    return rows


# ---------------------------------------------------------------- CLI

CONFIG_KEYS = {
    "n_branches": int,
    "packages_per_class_per_branch": int,
    "rng_seed": int,
    "k_graph": int,
    "gamma": float,
    "alpha_prop": float,
    "cg_tolerance": float,
    "cg_max_iters": int,
    "learning_rate": float,
    "momentum": float,
    "lr_decay": float,
    "lr_decay_every": int,
    "epochs": int,
    "batch_size": int,
    "l2_weight": float,
    "hidden_width": int,
    "alpha_smooth": float,
    "pair_sample_count": int,
    "outer_epochs": int,
    "resplit_each_epoch": bool,
    "seed": int,
    "n_classes": int,
    "oracle_iters": int,
    "sweep_m": list,
    "sweep_b": list,
}


def parse_config_file(path):
    """Read `key = value` lines; # starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError("expected key = value", row=lineno)
            key, _, text = line.partition("=")
            key = key.strip()
            text = text.strip()
            if key not in CONFIG_KEYS:
                raise ValidationError("unknown config key %r" % key, row=lineno)
            kind = CONFIG_KEYS[key]
            try:
                if kind is bool:
                    if text.lower() not in ("true", "false"):
                        raise ValueError(text)
                    values[key] = text.lower() == "true"
                elif kind is list:
                    values[key] = [int(v) for v in text.split(",") if v.strip()]
                else:
                    values[key] = kind(text)
            except ValueError:
                raise ValidationError(
                    "bad value %r for config key %r" % (text, key), row=lineno
                )
    return values


def build_config(values):
    """Assemble a PipelineConfig from a flat key -> value mapping."""
    seed = values.get("seed", 0)
    split = SplitConfig(
        values.get("n_branches", 5),
        values.get("packages_per_class_per_branch", 4),
        values.get("rng_seed", seed),
    )
    graph = GraphConfig(values.get("k_graph", 50), values.get("gamma", 3.0))
    prop = PropagationConfig(
        values.get("alpha_prop", 0.99),
        values.get("cg_tolerance", 1e-6),
        values.get("cg_max_iters", 200),
    )
    train = TrainConfig(
        learning_rate=values.get("learning_rate", 0.01),
        momentum=values.get("momentum", 0.9),
        lr_decay=values.get("lr_decay", 0.1),
        lr_decay_every=values.get("lr_decay_every", 5),
        epochs=values.get("epochs", 15),
        batch_size=values.get("batch_size", 64),
        l2_weight=values.get("l2_weight", 5e-3),
        hidden_width=values.get("hidden_width", 64),
        alpha_smooth=values.get("alpha_smooth", 1.0),
        pair_sample_count=values.get("pair_sample_count", 256),
    )
    return PipelineConfig(
        split=split,
        graph=graph,
        prop=prop,
        train=train,
        outer_epochs=values.get("outer_epochs", 15),
        resplit_each_epoch=values.get("resplit_each_epoch", True),
        seed=seed,
        n_classes=values.get("n_classes"),
        oracle_iters=values.get("oracle_iters", 1000),
        sweep_m=values.get("sweep_m"),
        sweep_b=values.get("sweep_b"),
    )


def _load_inputs(args):
    features = load_features(args.features)
    noisy, clean = load_label_columns(args.labels)
    check_pairing(features, noisy)
    return features, noisy, clean


def _config_from_args(args):
    values = {}
    if getattr(args, "config", None):
        values = parse_config_file(args.config)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
        values.setdefault("rng_seed", args.seed)
    cfg = build_config(values)
    if getattr(args, "oracle", False):
        cfg.use_oracle = True
    if getattr(args, "no_resplit", False):
        cfg.resplit_each_epoch = False
    if getattr(args, "dump_suggestions", False):
        cfg.dump_suggestions = True
    if getattr(args, "early_stop", False):
        cfg.early_stop = True
    return cfg


def _cmd_synth(args):
    cfg = SynthConfig(
        n_classes=args.classes,
        per_class=args.per_class,
        dim=args.dim,
        class_separation=args.separation,
        noise_rate=args.noise_rate,
        noise_kind=args.noise_kind,
        rng_seed=args.seed,
    )
    mapping = None
    if args.mapping:
        mapping = {}
        for part in args.mapping.split(","):
            src, _, dst = part.partition(":")
            mapping[int(src)] = int(dst)
    features, noisy, clean = make_noisy_dataset(cfg, mapping=mapping)
    save_features(args.out_features, features)
    save_labels(args.out_labels, noisy, clean)
    print(
        "wrote %d samples (%d flipped) to %s / %s"
        % (
            features.n_samples,
            int((noisy != clean).sum()),
            args.out_features,
            args.out_labels,
        )
    )
    return 0


def _cmd_split(args):
    features, noisy, _ = _load_inputs(args)
    cfg = SplitConfig(args.branches, args.packages, args.seed or 0)
    assignment = split_dataset(features, noisy, cfg)
    with open(args.out, "w") as fh:
        fh.write("MLCS v1\n")
        fh.write(
            "n_samples %d\nn_branches %d\nn_packages %d\n"
            % (assignment.n_samples, assignment.n_branches, len(assignment.packages))
        )
        fh.write("columns index branch package\n")
        for i in range(assignment.n_samples):
            fh.write(
                "%d %d %d\n" % (i, assignment.branch_of[i], assignment.package_of[i])
            )
    print("wrote split of %d samples to %s" % (assignment.n_samples, args.out))
    return 0


def _cmd_correct(args):
    features, noisy, clean = _load_inputs(args)
    cfg = _config_from_args(args)
    reports = run_correction(
        cfg, features=features, labels=noisy, clean=clean, output_dir=args.out
    )
    final = reports[-1]
    line = {
        "epochs_run": len(reports),
        "n_changed": final.n_changed,
        "mean_confidence": final.mean_confidence,
    }
    if final.correction_accuracy is not None:
        line["correction_accuracy"] = final.correction_accuracy
    print(json.dumps(line, sort_keys=True))
    return 0


def _cmd_sweep(args):
    features, noisy, clean = _load_inputs(args)
    cfg = _config_from_args(args)
    if args.sweep_m:
        cfg.sweep_m = [int(v) for v in args.sweep_m.split(",")]
    if args.sweep_b:
        cfg.sweep_b = [int(v) for v in args.sweep_b.split(",")]
    rows = run_sweep(
        cfg, features=features, labels=noisy, clean=clean, output_dir=args.out
    )
    for M, B, acc, resid in rows:
        print(
            "M=%d B=%d correction_accuracy=%s residual_noise_rate=%s"
            % (M, B, acc, resid)
        )
    return 0


def _cmd_eval(args):
    noisy, clean = load_label_columns(args.labels)
    if clean is None:
        raise ValidationError("eval needs a two-column label file (noisy,clean)")
    corrected = np.asarray(
        load_label_columns(args.corrected)[0], dtype=np.int64
    )
    metrics = evaluate(noisy, corrected, clean)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="graphmend",
        description="Correct noisy labels via multi-graph propagation and voting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a noisy blob dataset")
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise-rate", type=float, default=0.3)
    p.add_argument("--noise-kind", choices=["uniform", "confusing", "asymmetric", "none"],
                   default="confusing")
    p.add_argument("--mapping", help="asymmetric arrows, e.g. 0:1,1:0")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="write one package split")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--branches", type=int, default=5)
    p.add_argument("--packages", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("correct", help="run the full correction loop")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--oracle", action="store_true",
                   help="solve propagation by fixed-point diffusion instead of CG")
    p.add_argument("--no-resplit", action="store_true")
    p.add_argument("--dump-suggestions", action="store_true")
    p.add_argument("--early-stop", action="store_true")
    p.set_defaults(func=_cmd_correct)

    p = sub.add_parser("sweep", help="run the (M, B) sweep grid")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--sweep-m")
    p.add_argument("--sweep-b")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--no-resplit", action="store_true")
    p.add_argument("--early-stop", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eval", help="score corrected labels against clean ones")
    p.add_argument("--labels", required=True,
                   help="two-column label file with noisy,clean rows")
    p.add_argument("--corrected", required=True)
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GraphmendError as err:
        print("error: %s" % err, file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print("error: %s" % err, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
