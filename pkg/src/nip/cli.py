"""Command-line pipeline: synth -> pool -> (fit-pca / apply-pca) -> fit-hash -> hash -> eval.

Exit codes: 0 success, 1 validation or input failure, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__, formats
from .baselines import PcaHashModel, itq_fit, lsh_fit, pcahash_fit
from .container import file_digest
from .errors import DimError, NipError, NumericalError, ValidationError
from .orbit_store import OrbitStore, OrbitTensor, load_ground_truth, validate_store, write_ground_truth, write_store
from .pooling import nip_descriptors, parse_sequence
from .postproc import apply_pca_whitening, fit_median_threshold, fit_pca_whitening, fixed_threshold, l2_normalize
from .rbmh import TrainConfig, fit_rbmh
from .retrieval import DescriptorTable, HashIndex, bit_stats, evaluate
from .synth import SynthSpec, synth_descriptors, synth_orbits

log = logging.getLogger("nip")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def derive_seed(seed: int, name: str) -> int:
    """Per-module seed drawn from the top-level ``--seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, np.uint64)[0])


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("NIP_THREADS")
    return int(env) if env else (os.cpu_count() or 1)


def _provenance(args, inputs=()) -> dict:
    meta = {"producer": f"nip {__version__}", "command": args.command}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command", "verbose"):
            continue
        meta[f"arg.{key}"] = value
    for label, path in inputs:
        meta[f"input.{label}"] = f"{Path(path).name} sha256={file_digest(path)}"
    return meta


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


# --- subcommands --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    shape = _parse_ints(args.shape) if args.dim is None else None
    spec = SynthSpec(args.clusters, args.items, shape, args.dim, args.noise, args.seed)
    meta = _provenance(args)
    if spec.dim is None:
        records, gt = synth_orbits(spec)
        write_store(records, args.out, meta)
    else:
        X, ids, gt = synth_descriptors(spec)
        formats.write_descriptors(args.out, ids, X, meta)
    write_ground_truth(gt, args.gt)
    log.info("wrote %d items to %s and ground truth to %s", spec.n_items, args.out, args.gt)
    return EXIT_OK


def cmd_convert(args) -> int:
    src = Path(args.input)
    if src.is_dir():
        records = [OrbitTensor(p.stem, np.load(p)) for p in sorted(src.glob("*.npy"))]
    else:
        with np.load(src) as npz:
            records = [OrbitTensor(k, npz[k]) for k in sorted(npz.files)]
    write_store(records, args.out, _provenance(args))
    log.info("converted %d orbits", len(records))
    return EXIT_OK


def cmd_validate(args) -> int:
    report = validate_store(args.store)
    print("\n".join(report.lines()))
    if args.gt:
        gt = load_ground_truth(args.gt)
        missing = gt.missing_ids(OrbitStore(args.store).ids) if report.n_records else set()
        for image_id in sorted(missing):
            print(f"ground-truth\t{image_id}\tid not in store")
        if missing:
            return EXIT_INVALID
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_pool(args) -> int:
    store = OrbitStore(args.store)
    if len(store) == 0:
        raise ValidationError(f"{args.store} contains no images")
    seq = parse_sequence(args.sequence)
    descs = []
    try:
        descs = nip_descriptors(store, seq, threads=_threads(args))
    except NipError as exc:
        raise type(exc)(f"pooling {args.store}: {exc}") from exc
    X = np.stack([d.values for d in descs])
    if args.l2norm:
        X = l2_normalize(X)
    meta = _provenance(args, [("store", args.store)])
    meta["sequence"] = str(seq)
    formats.write_descriptors(args.out, [d.image_id for d in descs], X, meta)
    log.info("pooled %d images to %d-D descriptors", X.shape[0], X.shape[1])
    return EXIT_OK


def cmd_fit_pca(args) -> int:
    ds = formats.read_descriptors(args.descriptors)
    model = fit_pca_whitening(ds.values, args.out_dim, args.epsilon)
    formats.save_model(args.out, model, _provenance(args, [("descriptors", args.descriptors)]))
    return EXIT_OK


def cmd_apply_pca(args) -> int:
    model, _ = formats.load_model(args.model)
    ds = formats.read_descriptors(args.descriptors)
    if ds.dim != model.in_dim:
        raise DimError(f"pca model {args.model} expects {model.in_dim}-D input, "
                       f"descriptors {args.descriptors} are {ds.dim}-D")
    X = apply_pca_whitening(model, ds.values)
    if args.l2norm:
        X = l2_normalize(X)
    meta = _provenance(args, [("model", args.model), ("descriptors", args.descriptors)])
    formats.write_descriptors(args.out, ds.ids, X, meta)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        cd_k=args.cd_k,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lam=args.lam,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        seed=derive_seed(args.seed, "rbmh"),
    )


def cmd_fit_hash(args) -> int:
    ds = formats.read_descriptors(args.descriptors)
    X = ds.values.astype(np.float64)
    meta = _provenance(args, [("descriptors", args.descriptors)])
    if args.method == "rbmh":
        model, history = fit_rbmh(X, args.bits, _train_config(args))
        if history.recon_error:
            meta["final_recon_error"] = f"{history.recon_error[-1]:.6g}"
            meta["final_bit_mean_std"] = f"{float(np.std(history.bit_means[-1])):.6g}"
        meta["visible_model"] = "binary logistic, mean-field negative phase, inputs min/max-scaled to [0,1]"
    elif args.method == "lsh":
        model = lsh_fit(X.shape[1], args.bits, derive_seed(args.seed, "lsh"))
    elif args.method == "pcahash":
        model = PcaHashModel(pcahash_fit(X, args.bits))
    elif args.method == "itq":
        model = itq_fit(X, args.bits, args.itq_iterations, derive_seed(args.seed, "itq"))
    elif args.method == "threshold":
        if args.threshold_mode == "median":
            model = fit_median_threshold(X)
        else:
            model = fixed_threshold(X.shape[1], args.threshold_value)
        if args.bits not in (None, X.shape[1]):
            raise DimError(f"threshold binarization yields {X.shape[1]} bits (descriptor dim), not {args.bits}")
        meta["binarization"] = f"d_j > threshold_j, mode={args.threshold_mode}"
    else:  # argparse restricts choices
        raise ValueError(args.method)
    meta["method"] = args.method
    formats.save_model(args.out, model, meta)
    return EXIT_OK


def cmd_hash(args) -> int:
    model, model_meta = formats.load_model(args.model)
    ds = formats.read_descriptors(args.descriptors)
    in_dim, n_bits = formats.model_dims(model)
    if ds.dim != in_dim:
        raise DimError(f"hasher {args.model} expects {in_dim}-D input, "
                       f"descriptors {args.descriptors} are {ds.dim}-D")
    codes = model.hash(ds.values.astype(np.float64))
    meta = _provenance(args, [("model", args.model), ("descriptors", args.descriptors)])
    meta["method"] = model_meta.get("method", type(model).__name__)
    formats.write_hashes(args.out, ds.ids, codes, n_bits, meta)
    return EXIT_OK


def _load_table(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"NIPH":
        hs = formats.read_hashes(path)
        return HashIndex(hs.ids, hs.codes, hs.n_bits), hs.as_dict()
    ds = formats.read_descriptors(path)
    return DescriptorTable(ds.ids, ds.values), ds.as_dict()


def cmd_eval(args) -> int:
    db, db_items = _load_table(args.db)
    if args.queries:
        qdb, queries = _load_table(args.queries)
        if type(qdb) is not type(db):
            raise DimError(f"queries {args.queries} and database {args.db} are different kinds of file")
    else:
        queries = db_items
    gt = load_ground_truth(args.gt)
    report = evaluate(queries, db, gt, include_self=args.include_self, recall_at=_parse_ints(args.recall_at))
    inputs = [("db", args.db), ("gt", args.gt)] + ([("queries", args.queries)] if args.queries else [])
    meta = _provenance(args, inputs)
    kv = "".join(f"# {k}={v}\n" for k, v in meta.items()) + report.to_kv()
    if args.out_tsv:
        Path(args.out_tsv).write_text(report.to_tsv())
    if args.out_kv:
        Path(args.out_kv).write_text(kv)
    for k, v in report.summary().items():
        print(f"{k}={v}")
    return EXIT_OK


def cmd_stats(args) -> int:
    hs = formats.read_hashes(args.hashes)
    stats = bit_stats(hs.codes, hs.n_bits)
    if args.out:
        Path(args.out).write_text(stats.to_csv())
    print(f"bits={hs.n_bits} items={len(hs.ids)} mean_of_means={stats.means.mean():.6f} "
          f"std_across_bits={stats.spread:.6f}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nip", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a clustered synthetic orbit store (or descriptor file)")
    p.add_argument("--clusters", type=int, default=100)
    p.add_argument("--items", type=int, default=4, help="items per cluster")
    p.add_argument("--shape", default="6,3,64,3,3", help="orbit shape n_rot,n_scale,C,H,W")
    p.add_argument("--dim", type=int, default=None, help="emit descriptors of this dim instead of orbits")
    p.add_argument("--noise", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", required=True, help="ground-truth TSV to write")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="pack .npy orbits (directory) or an .npz archive into a store")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("validate", help="check an orbit store (and optionally a ground-truth file)")
    p.add_argument("--store", required=True)
    p.add_argument("--gt")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("pool", help="compute NIP descriptors from an orbit store")
    p.add_argument("--store", required=True)
    p.add_argument("--sequence", default="A_S,S_T,M_R")
    p.add_argument("--l2norm", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("fit-pca", help="fit PCA whitening on descriptors")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--out-dim", type=int, default=256)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_pca)

    p = sub.add_parser("apply-pca", help="whiten descriptors with a fitted PCA model")
    p.add_argument("--model", required=True)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--l2norm", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply_pca)

    p = sub.add_parser("fit-hash", help="fit a hasher (rbmh, lsh, pcahash, itq, threshold)")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--method", choices=["rbmh", "lsh", "pcahash", "itq", "threshold"], default="rbmh")
    p.add_argument("--bits", type=int, default=None)
    defaults = TrainConfig()
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--cd-k", type=int, default=defaults.cd_k)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lambda", dest="lam", type=float, default=defaults.lam)
    p.add_argument("--momentum", type=float, default=defaults.momentum)
    p.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    p.add_argument("--itq-iterations", type=int, default=50)
    p.add_argument("--threshold-mode", choices=["median", "fixed"], default="median")
    p.add_argument("--threshold-value", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_hash)

    p = sub.add_parser("hash", help="hash descriptors with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hash)

    p = sub.add_parser("eval", help="exhaustive retrieval evaluation (mAP, recall@R)")
    p.add_argument("--db", required=True, help="descriptor (L2) or hash (Hamming) file")
    p.add_argument("--queries", help="query file of the same kind; default: the database itself")
    p.add_argument("--gt", required=True)
    p.add_argument("--include-self", action="store_true", help="keep the query in its own ranking (UKB style)")
    p.add_argument("--recall-at", default="1,4,10")
    p.add_argument("--out-tsv")
    p.add_argument("--out-kv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="per-bit activation means of a hash file (CSV)")
    p.add_argument("--hashes", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "fit-hash" and args.bits is None and args.method != "threshold":
        print("nip fit-hash: --bits is required for this method", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"nip {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NipError, OSError, ValueError) as exc:
        print(f"nip {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
