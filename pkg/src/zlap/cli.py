"""Command line interface.

Stages communicate through files, so each one can be rerun on its own::

    zlap synth --out data/ --seed 0 --queries-per-class 20
    zlap build-graph --images data/images.zlap --classes data/classes.zlap --out g.zlgr
    zlap transductive --graph g.zlgr --labels data/labels.txt --out preds.tsv
    zlap precompute --graph g.zlgr --out y.zlpy
    zlap sparsify --yhat y.zlpy --out ys.zlpy
    zlap predict --yhat ys.zlpy --queries data/queries.zlap --images data/images.zlap \\
        --classes data/classes.zlap --out qpreds.tsv
    zlap eval --predictions qpreds.tsv --labels data/query_labels.txt

Exit codes: 0 success, 1 validation, 2 I/O or file format, 3 numerical.
"""
import argparse
import logging
import os
import sys
import time

import numpy as np

from . import embeddings, graph, harness, inference
from .errors import ValidationError, ZlapError
from .solver import LaplacianOperator, SolveConfig, dense_solve_oracle

log = logging.getLogger("zlap")

TEXT_DEFAULTS = {"k": 5, "gamma": 5.0, "alpha": 0.3}
PROXY_DEFAULTS = {"k": 10, "gamma": 3.0, "alpha": 0.3}
UNIT_NORM_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment; keys use flag spelling."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


# -- argument groups ------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="key=value file; explicit flags take precedence")
    p.add_argument("--threads", type=int, help="worker cap (default: $ZLAP_THREADS or all cores)")
    p.add_argument("-v", "--verbose", action="store_true")


def _graph_flags(p):
    p.add_argument("--k", type=int, help="image neighbours (default 5, proxy mode 10)")
    p.add_argument("--k-class", type=int, help="class neighbours (default: --k)")
    p.add_argument("--gamma", type=float, help="cross-modal power (default 5.0, proxy mode 3.0)")
    p.add_argument("--proxy-mode", action="store_true", help="class proxies: min-max normalize edge weights")
    p.add_argument("--knn-mode", choices=graph.KNN_MODES, default="separate")


def _solve_flags(p):
    p.add_argument("--alpha", type=float, help="propagation weight (default 0.3)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=1000)


def build_parser():
    parser = _Parser(prog="zlap", description="Zero-shot classification by label propagation over embeddings.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic bimodal dataset")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--queries-per-class", type=int, default=0, help="extra held-out images per class")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--spread", type=float, default=3.0)
    p.add_argument("--gap", type=float, default=0.8)
    p.add_argument("--intrinsic-dim", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("normalize", help="L2-normalize features or average class prompts")
    _common(p)
    p.add_argument("--images", help="feature file to normalize")
    p.add_argument("--prompts", help="C*P prompt features, class-major")
    p.add_argument("--prompts-per-class", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("build-graph", help="build the bimodal kNN adjacency")
    _common(p)
    _graph_flags(p)
    p.add_argument("--images", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="ground truth, needed for --diagnose-paths")
    p.add_argument("--diagnose-paths", type=int, metavar="N", help="print shortest-path coverage up to N hops")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("transductive", help="label every image node of a graph")
    _common(p)
    _solve_flags(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.add_argument("--proxy-mode", action="store_true", help="only selects the proxy alpha default")
    p.add_argument("--oracle", action="store_true", help="dense closed-form solve (N <= 2000)")
    p.set_defaults(func=cmd_transductive)

    p = sub.add_parser("precompute", help="solve for all class columns of Y_hat")
    _common(p)
    _solve_flags(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--proxy-mode", action="store_true", help="only selects the proxy alpha default")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("sparsify", help="keep the largest Y_hat entries")
    _common(p)
    p.add_argument("--yhat", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sparsify-mode", choices=("row", "column", "global"), default="row")
    p.add_argument("--xi", type=int, default=1)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("predict", help="inductive prediction for new queries")
    _common(p)
    _graph_flags(p)
    _solve_flags(p)
    p.add_argument("--queries", required=True, help="query feature file")
    p.add_argument("--images", required=True, help="image features the graph was built from")
    p.add_argument("--classes", required=True)
    p.add_argument("--yhat", help="precomputed (optionally sparsified) Y_hat: fast path")
    p.add_argument("--graph", help="graph file: dual path (one solve per query)")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="query ground truth for an accuracy report")
    p.add_argument("--timing", action="store_true", help="report per-query latency")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="accuracy of a predictions file")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--class-names")
    p.set_defaults(func=cmd_eval)
    return parser


# -- helpers --------------------------------------------------------------


def _resolved(args, key):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return (PROXY_DEFAULTS if getattr(args, "proxy_mode", False) else TEXT_DEFAULTS)[key]


def graph_config(args):
    k = _resolved(args, "k")
    return graph.GraphConfig(
        k_image=k,
        k_class=args.k_class if args.k_class is not None else k,
        gamma=_resolved(args, "gamma"),
        alpha=_resolved(args, "alpha"),
        minmax_cross_modal=args.proxy_mode,
    )


def solve_config(args):
    return SolveConfig(rel_tolerance=args.tol, max_iterations=args.max_iters)


def _alpha(args):
    alpha = _resolved(args, "alpha")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"--alpha must lie in (0, 1), got {alpha}")
    return alpha


def _load_unit(path, name):
    m = embeddings.load_features(path)
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
    if bad.size:
        raise ValidationError(f"{name} row {bad[0]} has norm {norms[bad[0]]:.6g}; run `zlap normalize` first")
    return m


def _operator(graph_path, alpha):
    adj = graph.load_graph(graph_path)
    return LaplacianOperator(graph.normalized_graph(adj), alpha), adj


def _report(labels_path, predicted, num_classes):
    labels = embeddings.validate_labels(embeddings.load_labels(labels_path), num_classes, len(predicted))
    report = harness.accuracy(predicted, labels, num_classes)
    print(report.format())
    return report


# -- commands -------------------------------------------------------------


def cmd_synth(args):
    per_class = args.per_class + args.queries_per_class
    cfg = harness.SynthConfig(
        classes=args.num_classes,
        images_per_class=per_class,
        dim=args.dim,
        cluster_spread=args.spread,
        modality_gap=args.gap,
        seed=args.seed,
        intrinsic_dim=args.intrinsic_dim,
    )
    images, classes, labels = harness.generate_bimodal(cfg)
    in_graph = np.tile(np.arange(per_class) < args.per_class, args.num_classes)
    os.makedirs(args.out, exist_ok=True)
    embeddings.write_features(os.path.join(args.out, "images.zlap"), images[in_graph])
    embeddings.write_labels(os.path.join(args.out, "labels.txt"), labels[in_graph])
    embeddings.write_features(os.path.join(args.out, "classes.zlap"), classes)
    if args.queries_per_class:
        embeddings.write_features(os.path.join(args.out, "queries.zlap"), images[~in_graph])
        embeddings.write_labels(os.path.join(args.out, "query_labels.txt"), labels[~in_graph])
    print(f"wrote {int(in_graph.sum())} images, {args.num_classes} classes, "
          f"{int((~in_graph).sum())} queries to {args.out}")
    return 0


def cmd_normalize(args):
    if args.prompts:
        if not args.prompts_per_class:
            raise ValidationError("--prompts requires --prompts-per-class")
        prompts = embeddings.l2_normalize(embeddings.load_features(args.prompts))
        out = embeddings.average_class_prompts(prompts, args.prompts_per_class)
    elif args.images:
        out = embeddings.l2_normalize(embeddings.load_features(args.images))
    else:
        raise ValidationError("give --images or --prompts")
    embeddings.write_features(args.out, out)
    print(f"wrote {out.shape[0]}x{out.shape[1]} normalized features to {args.out}")
    return 0


def cmd_build_graph(args):
    cfg = graph_config(args)
    images = _load_unit(args.images, "images")
    classes = _load_unit(args.classes, "classes")
    adj = graph.build_bimodal_adjacency(images, classes, cfg, knn_mode=args.knn_mode, threads=args.threads)
    graph.write_graph(args.out, adj)
    cross = adj.cross_modal_count()
    print(f"nodes: {adj.node_count} ({adj.num_classes} class, {adj.num_images} image)")
    print(f"directed edges: {adj.nnz} ({adj.nnz - cross} image-to-image, {cross} image-to-text)")
    if args.diagnose_paths:
        if not args.labels:
            raise ValidationError("--diagnose-paths requires --labels")
        labels = embeddings.validate_labels(embeddings.load_labels(args.labels), adj.num_classes, adj.num_images)
        coverage = graph.shortest_path_coverage(graph.symmetrize(adj), labels, args.diagnose_paths)
        print("n\timages within n hops of their class node (%)")
        for n, pct in enumerate(coverage, 1):
            print(f"{n}\t{pct:.1f}")
    return 0


def cmd_transductive(args):
    op, adj = _operator(args.graph, _alpha(args))
    c = adj.num_classes
    flags = None
    if args.oracle:
        rhs = np.zeros((op.n, c))
        rhs[np.arange(c), np.arange(c)] = 1.0
        scores = dense_solve_oracle(op.s_hat, op.alpha, rhs)[c:]
    else:
        result = inference.transductive_predict(op, c, solve_config(args), threads=args.threads)
        scores = result.image_scores()
        if not result.scores.converged.all():
            bad = np.flatnonzero(~result.scores.converged)
            log.warning("solver did not converge for classes %s", bad.tolist())
            flags = ["nonconverged"] * len(scores)
    labels = np.argmax(scores, axis=1)
    inference.write_predictions(args.out, labels, scores[np.arange(len(labels)), labels], flags)
    print(f"wrote {len(labels)} predictions to {args.out}")
    if args.labels:
        _report(args.labels, labels, c)
    return 0


def cmd_precompute(args):
    op, adj = _operator(args.graph, _alpha(args))
    Y = inference.precompute_Y(op, adj.num_classes, solve_config(args), threads=args.threads)
    if not Y.converged.all():
        log.warning("solver did not converge for classes %s", np.flatnonzero(~Y.converged).tolist())
    inference.write_Y(args.out, Y)
    print(f"wrote dense Y_hat {Y.shape[0]}x{Y.shape[1]} to {args.out}")
    return 0


def cmd_sparsify(args):
    if args.xi < 1:
        raise ValidationError(f"--xi must be >= 1, got {args.xi}")
    Y = inference.load_Y(args.yhat)
    if Y.is_sparse:
        Y = inference.PropagatedScores(Y.toarray())
    Ys = inference.sparsify_Y(Y, args.sparsify_mode, args.xi)
    inference.write_Y(args.out, Ys)
    print(f"kept {Ys.matrix.nnz} of {Y.shape[0] * Y.shape[1]} entries ({100 * Ys.density():.2f}%)")
    return 0


def cmd_predict(args):
    if bool(args.yhat) == bool(args.graph):
        raise ValidationError("give exactly one of --yhat (fast path) or --graph (dual path)")
    cfg = graph_config(args)
    queries = _load_unit(args.queries, "queries")
    images = _load_unit(args.images, "images")
    classes = _load_unit(args.classes, "classes")
    c = classes.shape[0]
    indicators = inference.build_indicators(queries, images, classes, cfg, threads=args.threads)
    degenerate = np.diff(indicators.indptr) == 0
    degenerate |= np.asarray(abs(indicators).sum(axis=1)).ravel() == 0

    t0 = time.perf_counter()
    if args.yhat:
        Y = inference.load_Y(args.yhat)
        if Y.shape != (indicators.shape[1], c):
            raise ValidationError(f"Y_hat shape {Y.shape} does not match {indicators.shape[1]} nodes x {c} classes")
        scores = inference.fast_inductive_scores(indicators, Y)
        converged = np.ones(len(scores), bool)
        path = f"fast ({Y.layout} Y_hat)"
    else:
        op, adj = _operator(args.graph, _alpha(args))
        if adj.num_classes != c or adj.node_count != indicators.shape[1]:
            raise ValidationError("graph does not match the given images/classes")
        scores, converged = inference.dual_inductive_scores(op, indicators, c, solve_config(args), args.threads)
        path = "dual"
    elapsed = time.perf_counter() - t0

    labels = np.argmax(scores, axis=1)
    flags = None
    if degenerate.any() or not converged.all():
        flags = ["degenerate" if d else ("ok" if ok else "nonconverged") for d, ok in zip(degenerate, converged)]
    inference.write_predictions(args.out, labels, scores[np.arange(len(labels)), labels], flags)
    print(f"wrote {len(labels)} predictions to {args.out}")
    if args.timing:
        print(f"{path}: {1e3 * elapsed / max(len(labels), 1):.4f} ms per query ({len(labels)} queries)")
    if args.labels:
        _report(args.labels, labels, c)
    return 0


def cmd_eval(args):
    predicted = inference.load_predictions(args.predictions)
    labels = embeddings.load_labels(args.labels)
    names = embeddings.load_class_names(args.class_names) if args.class_names else None
    c = len(names) if names else int(max(predicted.max(initial=0), labels.max(initial=0))) + 1
    labels = embeddings.validate_labels(labels, c, len(predicted))
    report = harness.accuracy(predicted, labels, c)
    print(report.format(names))
    return 0


# -- entry point ----------------------------------------------------------


def parse_args(parser, argv):
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in values.items():
            action = known.get(key)
            if action is None or key in ("config", "func", "help"):
                raise ValidationError(f"{args.config}: unknown key {key!r} for {args.command}")
            if action.nargs == 0:
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(raw) if action.type else raw
                if action.choices and defaults[key] not in action.choices:
                    raise ValidationError(f"{args.config}: {key} must be one of {list(action.choices)}")
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    parser = build_parser()
    try:
        args = parse_args(parser, argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s: %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except ZlapError as err:
        print(f"zlap: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"zlap: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
