"""Command-line front end: train, encode, eval, search, hist, toy2d, bench.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.
Every command validates its flags before it touches any input file, and every
command that takes --seed is bit-deterministic in all of its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio, hashcore, metrics, search, synth
from .dataio import FormatError
from .numopt import NonFiniteError

FIG3_PAIRS = "3:50,3:200,2:50,4:50"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NonFiniteError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrqhash", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a hashing model from a feature file")
    p.add_argument("--features", help="feature file (BHF1 binary or csv)")
    p.add_argument("--format", choices=["binary", "csv", "auto"], default="auto")
    p.add_argument("--bits", type=int, help="code length K")
    p.add_argument("--variant", choices=list(hashcore.VARIANTS), default="snrq")
    p.add_argument("--alpha", type=float, default=3.0, help="quantization weight (default 3)")
    p.add_argument("--beta", type=float, default=0.01, help="rigidness weight (default 0.01)")
    p.add_argument("--iters", type=int, default=70, help="outer iterations (default 70)")
    p.add_argument("--regularizer", choices=list(hashcore.REGULARIZERS), default="so")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="model output path (BHM1)")
    p.add_argument("--manifest", help="manifest output path (default: <out>.manifest.json)")
    p.add_argument("--from-manifest", help="re-run a previous training run from its manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode features into packed binary codes")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--format", choices=["binary", "csv", "auto"], default="auto")
    p.add_argument("--out", required=True, help="code output path (BHC1)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="retrieval metrics from codes and labels")
    p.add_argument("--queries", help="query code file (omit to sample queries from --db)")
    p.add_argument("--query-labels")
    p.add_argument("--db", required=True, help="database code file")
    p.add_argument("--db-labels", required=True)
    p.add_argument("--query-frac", type=float, help="sample this fraction of --db as queries")
    p.add_argument("--per-class", action="store_true", help="sample the fraction within each class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision-at", default="", help="comma-separated M values")
    p.add_argument("--macro", action="store_true", help="also report per-class macro-mAP")
    p.add_argument("--multilabel", action="store_true", help="relevant = any shared label")
    p.add_argument("--json", action="store_true", help="write a JSON document instead of key-value lines")
    p.add_argument("--out", help="report path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="rank a database against query codes")
    p.add_argument("--queries", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--top", type=int, help="keep only the closest N per query")
    p.add_argument("--out", help="csv output path (default: stdout)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("hist", help="dump all transformed values for histogramming")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--format", choices=["binary", "csv", "auto"], default="auto")
    p.add_argument("--out", required=True, help="one transformed value per line")
    p.add_argument("--bins", type=int, help="also write bin counts over this many equal bins")
    p.add_argument("--bins-out", help="bin-count csv path (default: <out>.bins.csv)")
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("toy2d", help="2-D toy clouds before/after the learned transforms")
    p.add_argument("--features", help="optional 2-D feature file; otherwise a seeded mixture is generated")
    p.add_argument("--format", choices=["binary", "csv", "auto"], default="auto")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--components", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=70)
    p.add_argument("--alpha", type=float, help="single-panel quantization weight")
    p.add_argument("--beta", type=float, help="single-panel rigidness weight")
    p.add_argument("--pairs", default=FIG3_PAIRS, help="alpha:beta panels (default %(default)s)")
    p.set_defaults(func=cmd_toy2d)

    p = sub.add_parser("bench", help="wall-clock training comparison across variants and bit widths")
    p.add_argument("--features", required=True)
    p.add_argument("--format", choices=["binary", "csv", "auto"], default="auto")
    p.add_argument("--bits", required=True, help="comma-separated code lengths")
    p.add_argument("--variants", default="nrq,snrq")
    p.add_argument("--iters", type=int, default=70)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    return parser


def _feature_format(path, fmt: str) -> str:
    if fmt != "auto":
        return fmt
    return "csv" if str(path).endswith(".csv") else "binary"


def _load_features(path, fmt: str):
    return dataio.load_features(path, _feature_format(path, fmt))


def _write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _parse_int_list(spec: str):
    return [int(tok) for tok in spec.split(",") if tok != ""]


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_train(args) -> int:
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        cfg_dict = manifest["config"]
        config = hashcore.TrainConfig(
            bits=cfg_dict["bits"],
            variant=cfg_dict["variant"],
            alpha=cfg_dict["alpha"],
            beta=cfg_dict["beta"],
            iterations=cfg_dict["iterations"],
            regularizer=cfg_dict["regularizer"],
            seed=cfg_dict["seed"],
        )
        features_path = manifest["inputs"]["features"]
        fmt = manifest["inputs"]["format"]
        out = args.out or manifest["outputs"]["model"]
    else:
        if args.features is None or args.bits is None or args.out is None:
            raise ValueError("train needs --features, --bits and --out (or --from-manifest)")
        config = hashcore.TrainConfig(
            bits=args.bits,
            variant=args.variant,
            alpha=args.alpha,
            beta=args.beta,
            iterations=args.iters,
            regularizer=args.regularizer,
            seed=args.seed,
        )
        features_path = args.features
        fmt = _feature_format(args.features, args.format)
        out = args.out
    config.validate()  # flag-level checks before any file is read

    features = dataio.load_features(features_path, fmt)
    centered = dataio.center(features)
    t0 = time.perf_counter()
    model, trace = hashcore.train(centered, config)
    seconds = time.perf_counter() - t0
    dataio.save_model(model, out)

    manifest_path = args.manifest or f"{out}.manifest.json"
    manifest = {
        "command": "train",
        "config": {
            "bits": config.bits,
            "variant": config.variant,
            "alpha": config.alpha,
            "beta": config.beta,
            "iterations": config.iterations,
            "regularizer": config.regularizer,
            "seed": config.seed,
        },
        "inputs": {"features": str(features_path), "format": fmt},
        "outputs": {"model": str(out)},
        "train_seconds": seconds,
        "loss_trace": [[rec.iteration, rec.objective, rec.quantization] for rec in trace],
    }
    _write_atomic(manifest_path, json.dumps(manifest, indent=2) + "\n")
    print(f"trained {config.variant} model: {out} ({seconds:.2f}s, final J={trace[-1].objective:.6g})")
    return 0


def cmd_encode(args) -> int:
    model = dataio.load_model(args.model)
    features = _load_features(args.features, args.format)
    if features.dim != model.dim:
        print(
            f"error: feature dimension {features.dim} does not match model dimension {model.dim}",
            file=sys.stderr,
        )
        return 3
    codes = hashcore.encode(model, features)
    dataio.save_codes(dataio.pack_codes(codes), args.out)
    print(f"encoded {features.n} samples at {model.bits} bits: {args.out}")
    return 0


def _split_queries(codes, labels, frac: float, per_class: bool, seed: int):
    if not 0.0 < frac < 1.0:
        raise ValueError(f"--query-frac must lie in (0, 1), got {frac}")
    rng = np.random.default_rng(seed)
    n = codes.n
    if per_class:
        if not labels.is_single_label():
            raise ValueError("--per-class sampling needs single-label data")
        flat = np.array([next(iter(s)) for s in labels.labels])
        picks = []
        for cls in np.unique(flat):
            positions = np.flatnonzero(flat == cls)
            k = max(1, int(round(frac * positions.size)))
            picks.append(rng.choice(positions, size=k, replace=False))
        query_idx = np.sort(np.concatenate(picks))
    else:
        k = max(1, int(round(frac * n)))
        query_idx = np.sort(rng.choice(n, size=k, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[query_idx] = True
    db_idx = np.flatnonzero(~mask)
    return query_idx, db_idx


def cmd_eval(args) -> int:
    marks = _parse_int_list(args.precision_at)
    if any(m < 1 for m in marks):
        raise ValueError("--precision-at values must be >= 1")
    rule = metrics.ANY_SHARED_LABEL if args.multilabel else metrics.SINGLE_LABEL
    if args.macro and args.multilabel:
        raise ValueError("--macro is only defined for single-label data")
    split_mode = args.query_frac is not None
    if not split_mode and (args.queries is None or args.query_labels is None):
        raise ValueError("eval needs --queries/--query-labels, or --query-frac to sample from --db")

    db_codes = dataio.load_codes(args.db)
    db_labels = dataio.load_labels(args.db_labels)
    if split_mode:
        query_idx, db_idx = _split_queries(db_codes, db_labels, args.query_frac, args.per_class, args.seed)
        query_codes = dataio.PackedCodes(db_codes.packed[query_idx], db_codes.nbits)
        query_labels = dataio.LabelSet(tuple(db_labels.labels[i] for i in query_idx))
        db_codes = dataio.PackedCodes(db_codes.packed[db_idx], db_codes.nbits)
        db_labels = dataio.LabelSet(tuple(db_labels.labels[i] for i in db_idx))
    else:
        query_codes = dataio.load_codes(args.queries)
        query_labels = dataio.load_labels(args.query_labels)

    if query_codes.nbits != db_codes.nbits:
        print(
            f"error: query codes have {query_codes.nbits} bits, database has {db_codes.nbits}",
            file=sys.stderr,
        )
        return 3
    db = search.CodeDatabase(db_codes, np.arange(db_codes.n))
    report = metrics.evaluate(
        query_codes, query_labels, db, db_labels, rule, precision_marks=marks, macro=args.macro
    )

    if args.json:
        doc = {
            "num_queries": report.num_queries,
            "num_queries_without_relevant": report.num_queries_without_relevant,
            "map": report.map,
            "precision_at": {str(m): v for m, v in report.precision_at.items()},
            "per_query_ap": {str(q): ap for q, ap in zip(report.included_queries, report.per_query_ap)},
        }
        if args.macro:
            doc["macro_map"] = report.macro_map
        text = json.dumps(doc, indent=2) + "\n"
    else:
        lines = [
            f"num_queries\t{report.num_queries}",
            f"num_queries_without_relevant\t{report.num_queries_without_relevant}",
            f"map\t{_fmt(report.map)}",
        ]
        if args.macro:
            lines.append(f"macro_map\t{_fmt(report.macro_map)}")
        for m in sorted(report.precision_at):
            lines.append(f"precision@{m}\t{_fmt(report.precision_at[m])}")
        for q, ap in zip(report.included_queries, report.per_query_ap):
            lines.append(f"ap[{q}]\t{_fmt(ap)}")
        text = "\n".join(lines) + "\n"

    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_search(args) -> int:
    if args.top is not None and args.top < 1:
        raise ValueError(f"--top must be >= 1, got {args.top}")
    query_codes = dataio.load_codes(args.queries)
    db_codes = dataio.load_codes(args.db)
    if query_codes.nbits != db_codes.nbits:
        print(
            f"error: query codes have {query_codes.nbits} bits, database has {db_codes.nbits}",
            file=sys.stderr,
        )
        return 3
    db = search.CodeDatabase(db_codes, np.arange(db_codes.n))
    keep = db.n if args.top is None else min(args.top, db.n)
    lines = []
    for qi in range(query_codes.n):
        ranking = search.rank_all(query_codes.packed[qi], db)
        for i in range(keep):
            lines.append(f"{qi},{int(ranking.ids[i])},{int(ranking.distances[i])}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _transformed_values(model, features):
    centered = dataio.apply_center(features, model.mean)
    return (centered.data @ model.projection) @ model.rotation


def cmd_hist(args) -> int:
    if args.bins is not None and args.bins < 1:
        raise ValueError(f"--bins must be >= 1, got {args.bins}")
    model = dataio.load_model(args.model)
    features = _load_features(args.features, args.format)
    if features.dim != model.dim:
        print(
            f"error: feature dimension {features.dim} does not match model dimension {model.dim}",
            file=sys.stderr,
        )
        return 3
    values = _transformed_values(model, features).ravel()
    _write_atomic(args.out, "\n".join(_fmt(v) for v in values) + "\n")
    if args.bins is not None:
        counts, edges = np.histogram(values, bins=args.bins)
        rows = [f"{_fmt(edges[i])},{_fmt(edges[i + 1])},{int(c)}" for i, c in enumerate(counts)]
        _write_atomic(args.bins_out or f"{args.out}.bins.csv", "\n".join(rows) + "\n")
    print(f"wrote {values.size} transformed values: {args.out}")
    return 0


def _parse_pairs(spec: str):
    pairs = []
    for tok in spec.split(","):
        if tok == "":
            continue
        a, _, b = tok.partition(":")
        pairs.append((float(a), float(b)))
    if not pairs:
        raise ValueError(f"no alpha:beta pairs in {spec!r}")
    return pairs


def _write_points(path, points) -> None:
    _write_atomic(path, "\n".join(f"{_fmt(p[0])},{_fmt(p[1])}" for p in points) + "\n")


def cmd_toy2d(args) -> int:
    if args.alpha is not None or args.beta is not None:
        if args.alpha is None or args.beta is None:
            raise ValueError("give both --alpha and --beta for a single panel")
        pairs = [(args.alpha, args.beta)]
    else:
        pairs = _parse_pairs(args.pairs)
    if args.n < 4 or args.components < 1 or args.iters < 0:
        raise ValueError("need --n >= 4, --components >= 1, --iters >= 0")

    if args.features:
        features = _load_features(args.features, args.format)
        if features.dim != 2:
            print(f"error: toy2d needs 2-D features, got D={features.dim}", file=sys.stderr)
            return 3
    else:
        data, _ = synth.gaussian_mixture(
            args.n, 2, components=args.components, seed=args.seed, center_spread=3.0, noise=0.6
        )
        features = dataio.FeatureMatrix(data)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_points(out_dir / "original.csv", features.data)

    centered = dataio.center(features)
    itq_cfg = hashcore.TrainConfig(bits=2, variant="itq", iterations=args.iters, seed=args.seed)
    itq_model, _ = hashcore.train(centered, itq_cfg)
    _write_points(out_dir / "itq.csv", _transformed_values(itq_model, features))

    for alpha, beta in pairs:
        cfg = hashcore.TrainConfig(
            bits=2, variant="snrq", alpha=alpha, beta=beta, iterations=args.iters, seed=args.seed
        )
        model, _ = hashcore.train(centered, cfg)
        name = f"snrq_a{alpha:g}_b{beta:g}.csv"
        _write_points(out_dir / name, _transformed_values(model, features))
    print(f"wrote toy panels to {out_dir}")
    return 0


def cmd_bench(args) -> int:
    bit_list = _parse_int_list(args.bits)
    variants = [v for v in args.variants.split(",") if v != ""]
    if not bit_list or any(b < 1 for b in bit_list):
        raise ValueError(f"--bits must be positive integers, got {args.bits!r}")
    for v in variants:
        if v not in hashcore.VARIANTS:
            raise ValueError(f"unknown variant {v!r} in --variants")
    if args.iters < 0:
        raise ValueError(f"--iters must be >= 0, got {args.iters}")

    features = _load_features(args.features, args.format)
    centered = dataio.center(features)
    rows = ["variant,bits,seconds,objective,quantization"]
    for bits in bit_list:
        for variant in variants:
            config = hashcore.TrainConfig(
                bits=bits, variant=variant, iterations=args.iters, seed=args.seed
            )
            t0 = time.perf_counter()
            _, trace = hashcore.train(centered, config)
            seconds = time.perf_counter() - t0
            rows.append(
                f"{variant},{bits},{_fmt(seconds)},{_fmt(trace[-1].objective)},{_fmt(trace[-1].quantization)}"
            )
            print(rows[-1])
    _write_atomic(args.out, "\n".join(rows) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
