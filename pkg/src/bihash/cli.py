"""Command-line interface: train, encode, eval, sweep and synth subcommands."""

from __future__ import annotations

import argparse
import csv
import functools
import gzip
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .baselines import BpbcModel, LshModel, bpbc_encode, bpbc_model, lsh_encode, lsh_model
from .encoder import encode
from .evaluation import evaluate_retrieval, write_metrics_csv, write_pr_csv
from .io import (
    B2F_MAGIC,
    FORMAT_VERSION,
    DataFormatError,
    load_any_model,
    load_b2f,
    load_codes,
    load_idx,
    save_b2f,
    save_bpbc_model,
    save_codes,
    save_lsh_model,
    save_model,
    split_dataset,
    synth_multilabel,
    write_manifest,
)
from .trainer import TrainConfig, train
from .types import BilinearHashModel, pack_codes

logger = logging.getLogger(__name__)

WORKERS_ENV = "BIHASH_WORKERS"

_IDX_IMAGE_NAMES = {
    "train": ["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
    "query": ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte",
              "test-images-idx3-ubyte"],
}
_IDX_LABEL_NAMES = {
    "train": ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    "query": ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte",
              "test-labels-idx1-ubyte"],
}


class CliError(ValueError):
    pass


def _sniff_magic(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:2] == b"\x1f\x8b":
        with gzip.open(path, "rb") as fh:
            head = fh.read(4)
    return head


def _find_idx_pair(directory, role):
    for name in _IDX_IMAGE_NAMES[role]:
        for suffix in ("", ".gz"):
            images = os.path.join(directory, name + suffix)
            if os.path.exists(images):
                for lname in _IDX_LABEL_NAMES[role]:
                    for lsuffix in ("", ".gz"):
                        labels = os.path.join(directory, lname + lsuffix)
                        if os.path.exists(labels):
                            return images, labels
    raise CliError(f"no {role} IDX image/label pair found in {directory}")


def _load_data_path(path, raw_pixels=False, labels_path=None, role="train"):
    """Resolve a dataset argument: a B2F file, an IDX images file (+ labels),
    or a directory holding a conventional IDX pair."""
    if path is None:
        raise CliError("no dataset path given")
    if os.path.isdir(path):
        images, labels = _find_idx_pair(path, role)
        feats, labs = load_idx(images, labels, scale=not raw_pixels)
        return feats, labs, {"images": images, "labels": labels,
                             "raw_pixels": raw_pixels}
    magic = _sniff_magic(path)
    if magic == B2F_MAGIC:
        feats, labs = load_b2f(path)
        return feats, labs, {"data": os.fspath(path)}
    if labels_path is not None:
        feats, labs = load_idx(path, labels_path, scale=not raw_pixels)
        return feats, labs, {"images": os.fspath(path),
                             "labels": os.fspath(labels_path),
                             "raw_pixels": raw_pixels}
    raise CliError(
        f"{path}: not a B2F file; for IDX data pass the labels file too (--labels)"
    )


def _factor_bits(bits, d1, d2):
    for k1 in range(int(np.sqrt(bits)), 0, -1):
        if bits % k1 == 0 and k1 <= d1 and bits // k1 <= d2:
            return k1, bits // k1
    raise CliError(f"cannot factor {bits} bits into rotations for {d1}x{d2} inputs")


def _encode_with(model, features):
    if isinstance(model, BilinearHashModel):
        return encode(features, model)
    if isinstance(model, BpbcModel):
        return bpbc_encode(features, model)
    if isinstance(model, LshModel):
        return lsh_encode(features, model)
    raise CliError(f"unsupported model type {type(model).__name__}")


def _method_name(model) -> str:
    return {BilinearHashModel: "bsdh", BpbcModel: "bpbc", LshModel: "lsh"}[type(model)]


def _common_manifest(args, extra=None) -> dict:
    entries = {"format_version": FORMAT_VERSION, "seed": args.seed}
    if extra:
        entries.update(extra)
    return entries


def cmd_train(args) -> int:
    features, labels, data_info = _load_data_path(
        args.data or args.images, args.raw_pixels, args.labels, role="train")
    os.makedirs(args.out, exist_ok=True)
    manifest = _common_manifest(args, data_info)
    manifest.update(command="train", method=args.method, n=features.n,
                    d1=features.d1, d2=features.d2)

    if args.method == "bsdh":
        if args.c1 is None or args.c2 is None:
            raise CliError("--c1 and --c2 are required for method bsdh")
        config = TrainConfig(lam=args.lam, mu=args.mu, bits=args.bits,
                             t2=args.t2, tol=args.tol, seed=args.seed,
                             center_projected=args.center)
        result = train(features, labels, config, args.c1, args.c2, t1=args.t1)
        model_path = os.path.join(args.out, "model.bsdh")
        save_model(result.model, model_path)
        save_codes(result.codes, os.path.join(args.out, "codes.b2c"))
        trace_path = os.path.join(args.out, "objective.csv")
        with open(trace_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective"])
            for i, value in enumerate(result.objective_trace):
                writer.writerow([i, repr(value)])
        manifest.update(bits=args.bits, c1=args.c1, c2=args.c2,
                        **{"lambda": repr(args.lam)}, mu=repr(args.mu),
                        t1=args.t1, t2=args.t2, tol=repr(args.tol),
                        converged=result.converged, iterations=result.iterations)
        print(f"trained bsdh: {args.bits} bits, {result.iterations} iterations, "
              f"converged={result.converged}")
    elif args.method == "bpbc":
        if args.c1 is not None and args.c2 is not None:
            k1, k2 = args.c1, args.c2
        else:
            k1, k2 = _factor_bits(args.bits, features.d1, features.d2)
        model = bpbc_model(features.d1, features.d2, k1, k2, args.seed)
        codes = bpbc_encode(features, model)
        save_bpbc_model(model, os.path.join(args.out, "model.bpbc"))
        save_codes(codes, os.path.join(args.out, "codes.b2c"))
        manifest.update(bits=k1 * k2, k1=k1, k2=k2)
        print(f"trained bpbc: {k1}x{k2} rotation codes")
    elif args.method == "lsh":
        model = lsh_model(features.d1, features.d2, args.bits, args.seed)
        codes = lsh_encode(features, model)
        save_lsh_model(model, os.path.join(args.out, "model.lsh"))
        save_codes(codes, os.path.join(args.out, "codes.b2c"))
        manifest.update(bits=args.bits)
        print(f"trained lsh: {args.bits} bits")
    else:
        raise CliError(f"unknown method {args.method!r}")

    write_manifest(os.path.join(args.out, "manifest.txt"), manifest)
    return 0


def cmd_encode(args) -> int:
    model = load_any_model(args.model)
    features, _, data_info = _load_data_path(
        args.data or args.images, args.raw_pixels, args.labels, role="query")
    codes = _encode_with(model, features)
    save_codes(codes, args.out)
    write_manifest(args.out + ".manifest.txt",
                   {"command": "encode", "model": os.fspath(args.model),
                    "format_version": FORMAT_VERSION, **data_info})
    print(f"encoded {codes.n} samples at {codes.c} bits")
    return 0


def cmd_eval(args) -> int:
    model = load_any_model(args.model)
    db_feats, db_labels, db_info = _load_data_path(
        args.database, args.raw_pixels, role="train")
    q_feats, q_labels, q_info = _load_data_path(
        args.queries, args.raw_pixels, role="query")
    if args.db_codes:
        db_codes = load_codes(args.db_codes)
        if db_codes.n != db_feats.n:
            raise CliError(
                f"{args.db_codes}: {db_codes.n} codes for {db_feats.n} database samples"
            )
    else:
        db_codes = pack_codes(_encode_with(model, db_feats))
    q_codes = pack_codes(_encode_with(model, q_feats))
    if q_codes.bits != db_codes.bits:
        raise CliError(
            f"query codes are {q_codes.bits}-bit but database codes are {db_codes.bits}-bit"
        )

    k_grid = args.k_grid or [1, 5, 10, 50, 100, 500, 1000]
    report = evaluate_retrieval(q_codes, db_codes, q_labels, db_labels, k_grid)

    os.makedirs(args.out, exist_ok=True)
    method = _method_name(model)
    bits = db_codes.bits
    rows = [(method, bits, "map", "", repr(report["map"]))]
    for k, value in report["precision_at"].items():
        rows.append((method, bits, "precision", k, repr(value)))
    for k, value in report["recall_at"].items():
        rows.append((method, bits, "recall", k, repr(value)))
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), rows)
    write_pr_csv(os.path.join(args.out, "pr_curve.csv"), report["pr_curve"])
    write_manifest(os.path.join(args.out, "manifest.txt"),
                   {"command": "eval", "model": os.fspath(args.model),
                    "method": method, "bits": bits,
                    "queries_evaluated": report["queries_evaluated"],
                    "queries_skipped": report["queries_skipped"],
                    "format_version": FORMAT_VERSION,
                    **{f"db_{k}": v for k, v in db_info.items()},
                    **{f"query_{k}": v for k, v in q_info.items()}})
    print(f"map={report['map']:.6f} over {report['queries_evaluated']} queries")
    return 0


@functools.lru_cache(maxsize=4)
def _cached_dataset(path, raw_pixels, role):
    return _load_data_path(path, raw_pixels, role=role)


def _sweep_cell(payload):
    """One (lambda, mu, c1, c2, bits) cell; returns the key and its MAP."""
    (key, train_path, query_path, raw_pixels, t1, t2, tol, seeds) = payload
    lam, mu, c1, c2, bits = key
    feats, labels, _ = _cached_dataset(train_path, raw_pixels, "train")
    q_feats, q_labels, _ = _cached_dataset(query_path, raw_pixels, "query")
    maps = []
    for seed in seeds:
        config = TrainConfig(lam=lam, mu=mu, bits=bits, t2=t2, tol=tol, seed=seed)
        result = train(feats, labels, config, c1, c2, t1=t1)
        db_codes = pack_codes(result.codes)
        q_codes = pack_codes(encode(q_feats, result.model))
        report = evaluate_retrieval(q_codes, db_codes, q_labels, labels, [1])
        maps.append(report["map"])
    return key, float(np.mean(maps))


def _cell_key_str(key):
    lam, mu, c1, c2, bits = key
    return (repr(float(lam)), repr(float(mu)), str(c1), str(c2), str(bits))


def cmd_sweep(args) -> int:
    feats, _, data_info = _cached_dataset(args.data, args.raw_pixels, "train")
    _cached_dataset(args.queries, args.raw_pixels, "query")

    lambdas = args.lambdas or [args.lam]
    mus = args.mus or [args.mu]
    c1s = args.c1_list or ([args.c1] if args.c1 else [])
    c2s = args.c2_list or ([args.c2] if args.c2 else [])
    bits_list = args.bits_list or [args.bits]
    if not c1s or not c2s:
        raise CliError("sweep needs --c1/--c1-list and --c2/--c2-list")
    for c1, c2 in itertools.product(c1s, c2s):
        if not (1 <= c1 <= feats.d1 and 1 <= c2 <= feats.d2):
            raise CliError(
                f"grid entry c1={c1}, c2={c2} out of range for "
                f"{feats.d1}x{feats.d2} inputs"
            )
    for value in itertools.chain(lambdas, mus):
        if value <= 0:
            raise CliError("lambda and mu grid values must be > 0")
    if min(bits_list) < 1:
        raise CliError("bits grid values must be >= 1")

    if args.repeats > 1:
        seeds = [int(s) for s in
                 np.random.SeedSequence(args.seed).generate_state(args.repeats)]
    else:
        seeds = [args.seed]

    os.makedirs(args.out, exist_ok=True)
    results_path = os.path.join(args.out, "results.csv")
    errors_path = os.path.join(args.out, "errors.csv")
    done = set()
    if os.path.exists(results_path):
        with open(results_path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                done.add((row["lambda"], row["mu"], row["c1"], row["c2"],
                          row["bits"]))
    else:
        with open(results_path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerow(["lambda", "mu", "c1", "c2", "bits", "map"])

    cells = [(float(lam), float(mu), int(c1), int(c2), int(bits))
             for lam, mu, c1, c2, bits
             in itertools.product(lambdas, mus, c1s, c2s, bits_list)]
    pending = [key for key in cells if _cell_key_str(key) not in done]
    logger.info("sweep: %d cells, %d already done", len(cells), len(cells) - len(pending))

    payloads = [(key, args.data, args.queries, args.raw_pixels,
                 args.t1, args.t2, args.tol, seeds) for key in pending]
    workers = args.workers or int(os.environ.get(WORKERS_ENV, "1"))
    failures = 0

    def record(key, value, error=None):
        nonlocal failures
        if error is None:
            with open(results_path, "a", encoding="utf-8", newline="") as fh:
                csv.writer(fh).writerow([*_cell_key_str(key), repr(value)])
        else:
            failures += 1
            new = not os.path.exists(errors_path)
            with open(errors_path, "a", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                if new:
                    writer.writerow(["lambda", "mu", "c1", "c2", "bits", "error"])
                writer.writerow([*_cell_key_str(key), error])
            logger.warning("sweep cell %s failed: %s", key, error)

    if workers > 1 and payloads:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for payload, outcome in zip(payloads, pool.map(_sweep_cell_safe, payloads)):
                key, value, error = outcome
                record(key, value, error)
    else:
        for payload in payloads:
            key, value, error = _sweep_cell_safe(payload)
            record(key, value, error)

    write_manifest(os.path.join(args.out, "manifest.txt"),
                   {"command": "sweep", "seed": args.seed,
                    "repeats": args.repeats,
                    "lambdas": ",".join(repr(float(v)) for v in lambdas),
                    "mus": ",".join(repr(float(v)) for v in mus),
                    "c1_list": ",".join(str(v) for v in c1s),
                    "c2_list": ",".join(str(v) for v in c2s),
                    "bits_list": ",".join(str(v) for v in bits_list),
                    "t1": args.t1, "t2": args.t2, "tol": repr(args.tol),
                    "format_version": FORMAT_VERSION,
                    **data_info})
    print(f"sweep: {len(pending)} cells run, {failures} failed, "
          f"{len(cells) - len(pending)} skipped")
    return 0 if failures == 0 else 1


def _sweep_cell_safe(payload):
    key = payload[0]
    try:
        key, value = _sweep_cell(payload)
        return key, value, None
    except Exception as exc:  # cell failures must not kill the sweep
        return key, None, f"{type(exc).__name__}: {exc}"


def cmd_synth(args) -> int:
    total = args.n + args.queries_n
    features, labels = synth_multilabel(total, args.d1, args.d2, args.classes,
                                        args.labels_per_sample, args.noise,
                                        args.seed)
    manifest = {"command": "synth", "n": args.n, "d1": args.d1, "d2": args.d2,
                "classes": args.classes,
                "labels_per_sample": args.labels_per_sample,
                "noise": repr(args.noise), "seed": args.seed,
                "format_version": FORMAT_VERSION}
    if args.queries_n:
        train_f, train_l, query_f, query_l, info = split_dataset(
            features, labels, args.n, args.queries_n, args.seed)
        save_b2f(args.out, train_f, train_l)
        save_b2f(args.queries_out, query_f, query_l)
        manifest.update(info, queries_out=os.fspath(args.queries_out))
        print(f"wrote {args.n} train + {args.queries_n} query samples")
    else:
        save_b2f(args.out, features, labels)
        print(f"wrote {args.n} samples")
    write_manifest(args.out + ".manifest.txt", manifest)
    return 0


def _add_data_options(sub, with_labels=True):
    sub.add_argument("--data", help="B2F file or directory with an IDX pair")
    sub.add_argument("--images", help="IDX images file (with --labels)")
    if with_labels:
        sub.add_argument("--labels", help="IDX labels file")
    sub.add_argument("--raw-pixels", action="store_true",
                     help="keep IDX pixels in 0-255 instead of scaling to [0,1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bihash",
        description="Supervised bilinear hashing: training, encoding and "
                    "Hamming-ranking retrieval evaluation.")
    commands = parser.add_subparsers(dest="command", required=True)

    p_train = commands.add_parser("train", help="fit a hasher and write its artifacts")
    _add_data_options(p_train)
    p_train.add_argument("--method", choices=["bsdh", "bpbc", "lsh"], default="bsdh")
    p_train.add_argument("--bits", type=int, default=32, help="code length")
    p_train.add_argument("--c1", type=int, help="projected row size")
    p_train.add_argument("--c2", type=int, help="projected column size")
    p_train.add_argument("--lambda", dest="lam", type=float, default=1e-5,
                         help="classifier ridge weight")
    p_train.add_argument("--mu", type=float, default=1e-1,
                         help="quantization loss weight")
    p_train.add_argument("--t1", type=int, default=5, help="projection fit rounds")
    p_train.add_argument("--t2", type=int, default=10, help="max outer iterations")
    p_train.add_argument("--tol", type=float, default=1e-5,
                         help="relative objective stopping tolerance")
    p_train.add_argument("--center", action="store_true",
                         help="center projected features before the code regression")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_encode = commands.add_parser("encode", help="hash a dataset with a trained model")
    _add_data_options(p_encode)
    p_encode.add_argument("--model", required=True)
    p_encode.add_argument("--out", required=True, help="output codes file")
    p_encode.set_defaults(func=cmd_encode)

    p_eval = commands.add_parser("eval", help="Hamming-ranking retrieval metrics")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--database", required=True,
                        help="database dataset (B2F file or IDX directory)")
    p_eval.add_argument("--queries", required=True, help="query dataset")
    p_eval.add_argument("--db-codes", help="precomputed packed codes for the database")
    p_eval.add_argument("--k-grid", type=lambda s: [int(v) for v in s.split(",")],
                        help="comma-separated cut-offs for precision/recall tables")
    p_eval.add_argument("--raw-pixels", action="store_true")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = commands.add_parser("sweep", help="grid-search MAP over hyper-parameters")
    p_sweep.add_argument("--data", required=True, help="training dataset")
    p_sweep.add_argument("--queries", required=True, help="query dataset")
    p_sweep.add_argument("--lambdas", type=_float_list)
    p_sweep.add_argument("--mus", type=_float_list)
    p_sweep.add_argument("--bits-list", type=_int_list)
    p_sweep.add_argument("--c1-list", type=_int_list)
    p_sweep.add_argument("--c2-list", type=_int_list)
    p_sweep.add_argument("--lambda", dest="lam", type=float, default=1e-5)
    p_sweep.add_argument("--mu", type=float, default=1e-1)
    p_sweep.add_argument("--bits", type=int, default=32)
    p_sweep.add_argument("--c1", type=int)
    p_sweep.add_argument("--c2", type=int)
    p_sweep.add_argument("--t1", type=int, default=5)
    p_sweep.add_argument("--t2", type=int, default=10)
    p_sweep.add_argument("--tol", type=float, default=1e-5)
    p_sweep.add_argument("--repeats", type=int, default=1,
                         help="trainings averaged per cell, seeds derived from --seed")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--workers", type=int,
                         help=f"parallel cell workers (or ${WORKERS_ENV})")
    p_sweep.add_argument("--raw-pixels", action="store_true")
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_synth = commands.add_parser("synth", help="generate a synthetic B2F dataset")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--d1", type=int, required=True)
    p_synth.add_argument("--d2", type=int, required=True)
    p_synth.add_argument("--classes", type=int, required=True)
    p_synth.add_argument("--labels-per-sample", type=int, default=1)
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--queries-n", type=int, default=0,
                         help="also split off this many query samples")
    p_synth.add_argument("--queries-out", help="query output file")
    p_synth.add_argument("--out", required=True, help="output B2F file")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def _float_list(text):
    return [float(v) for v in text.split(",")]


def _int_list(text):
    return [int(v) for v in text.split(",")]


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "synth" and args.queries_n and not args.queries_out:
        print("error: --queries-n needs --queries-out", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliError, DataFormatError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
