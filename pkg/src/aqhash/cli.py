"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, mismatched
dimensions, malformed configs), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from . import checkpoint as ck
from . import manifest as mf
from . import retrieval as rt
from . import synthgen
from . import training as tr
from .errors import AQHashError, DataError, NumericalError
from .extractor import LevelSpec

_CONFIG_SCHEMA = {
    "k": int, "d": int, "heads": int, "branches": int,
    "beta": float, "gamma": float,
    "learning_rate": float, "momentum": float, "weight_decay": float,
    "batch_size": int, "samples_per_epoch": int,
    "outer_iterations": int, "inner_epochs": int, "seed": int,
}


def load_train_config(path: Path) -> tr.TrainConfig:
    """Parse a flat key=value config file; unknown or duplicate keys error."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected key=value, got '{body}'")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_SCHEMA:
            raise DataError(f"{path}:{lineno}: unknown key '{key}'")
        if key in values:
            raise DataError(f"{path}:{lineno}: duplicate key '{key}'")
        try:
            values[key] = _CONFIG_SCHEMA[key](value)
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse '{value}' as "
                            f"{_CONFIG_SCHEMA[key].__name__}")
    for required in ("k", "d"):
        if required not in values:
            raise DataError(f"{path}: missing required key '{required}'")
    return tr.TrainConfig(**values)


def _parse_levels(text: str) -> tuple[LevelSpec, ...]:
    """Parse 'CxWxH,CxWxH,...' into level specs."""
    specs = []
    for part in text.split(","):
        dims = part.lower().split("x")
        if len(dims) != 3:
            raise DataError(f"bad level '{part}', expected CxWxH")
        try:
            specs.append(LevelSpec(*(int(v) for v in dims)))
        except ValueError:
            raise DataError(f"bad level '{part}', expected integers CxWxH")
    return tuple(specs)


def _load_model_and_dataset(args):
    model, meta = ck.load_checkpoint(args.checkpoint)
    dataset = mf.ingest(args.manifest)
    if tuple(dataset.specs) != model.config.levels:
        raise DataError(f"dataset geometry {tuple(dataset.specs)} does not match "
                        f"checkpoint geometry {model.config.levels}")
    return model, meta, dataset


def _indices_or_all(args, dataset, attr="indices") -> np.ndarray:
    path = getattr(args, attr, None)
    if path is None:
        return np.arange(dataset.count)
    idx = mf.read_indices(path)
    if idx.size and (idx.min() < 0 or idx.max() >= dataset.count):
        raise DataError(f"index file {path}: values outside [0, {dataset.count})")
    return idx


# --- subcommands -----------------------------------------------------------

def cmd_synth(args) -> int:
    spec = synthgen.SynthSpec(classes=args.classes, attributes=args.attributes,
                              images_per_class=args.images_per_class,
                              noise=args.noise, levels=_parse_levels(args.levels),
                              seed=args.seed)
    out = Path(args.out)
    manifest_path, result = synthgen.generate(spec, out, name=args.name)
    query, gallery = synthgen.split(result.labels, args.query_fraction, args.seed)
    mf.write_indices(out / "query.idx", query)
    mf.write_indices(out / "gallery.idx", gallery)
    print(f"wrote {manifest_path} ({result.count} images, {spec.classes} classes)")
    print(f"split: {query.size} query / {gallery.size} gallery")
    return 0


def cmd_train(args) -> int:
    config = load_train_config(args.config)
    dataset = mf.ingest(args.manifest)
    gallery = _indices_or_all(args, dataset)
    model, history, _ = tr.train(dataset, gallery, config)
    ck.save_checkpoint(args.out, model,
                       ck.CheckpointMeta(config.beta, config.gamma, config.seed,
                                         config.outer_iterations))
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    log_path.write_text("".join(rec.line() + "\n" for rec in history))
    last = history[-1].loss if history else float("nan")
    print(f"wrote {args.out} ({len(history)} epochs, final loss {last:.6f})")
    print(f"metrics log: {log_path}")
    return 0


def cmd_encode(args) -> int:
    model, _, dataset = _load_model_and_dataset(args)
    indices = _indices_or_all(args, dataset)
    packed = rt.encode_database(model, dataset, indices)
    rt.save_codes(args.out, packed)
    print(f"wrote {args.out} ({packed.count} codes, k={packed.k})")
    return 0


def cmd_retrieve(args) -> int:
    queries = rt.load_codes(args.query_codes)
    gallery = rt.load_codes(args.gallery_codes)
    dist = rt.hamming(queries, gallery)
    order = np.argsort(dist, axis=1, kind="stable")
    with open(args.out, "w") as fh:
        fh.write("query,rank,gallery,distance\n")
        for q in range(queries.count):
            for rank, g in enumerate(order[q]):
                fh.write(f"{q},{rank},{g},{dist[q, g]}\n")
    print(f"wrote {args.out} ({queries.count} queries x {gallery.count} gallery)")
    return 0


def _read_rankings(path: Path) -> np.ndarray:
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise DataError(f"rankings file not found: {path}")
    if not lines or lines[0].strip() != "query,rank,gallery,distance":
        raise DataError(f"rankings file {path}: missing header")
    rows: dict[int, dict[int, int]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            q, rank, g, _ = line.split(",")
            rows.setdefault(int(q), {})[int(rank)] = int(g)
        except ValueError:
            raise DataError(f"rankings file {path}:{lineno}: malformed row")
    if not rows:
        raise DataError(f"rankings file {path}: no rankings")
    n_q = max(rows) + 1
    size = len(rows[0])
    rankings = np.empty((n_q, size), dtype=np.int64)
    for q in range(n_q):
        if q not in rows or len(rows[q]) != size:
            raise DataError(f"rankings file {path}: query {q} incomplete")
        for rank, g in rows[q].items():
            rankings[q, rank] = g
        if not np.array_equal(np.sort(rankings[q]), np.arange(size)):
            raise DataError(f"rankings file {path}: query {q} is not a permutation")
    return rankings


def cmd_eval(args) -> int:
    dataset = mf.ingest(args.manifest)
    rankings = _read_rankings(args.rankings)
    query_idx = _indices_or_all(args, dataset, "query_indices")
    gallery_idx = _indices_or_all(args, dataset, "gallery_indices")
    value = rt.mean_average_precision(rankings, dataset.labels[query_idx],
                                      dataset.labels[gallery_idx])
    print(f"mAP={value:.6f}")
    return 0


def cmd_coherence(args) -> int:
    dataset = mf.ingest(args.manifest)
    indices = _indices_or_all(args, dataset)
    if args.checkpoint:
        model, _ = ck.load_checkpoint(args.checkpoint)
        if tuple(dataset.specs) != model.config.levels:
            raise DataError("dataset geometry does not match checkpoint")
        V = an.relaxed_class_codes(model, dataset, indices, seed=args.seed)
    else:
        packed = rt.load_codes(args.codes)
        if packed.count != indices.size:
            raise DataError(f"codes file has {packed.count} rows but {indices.size} "
                            "indices were given")
        labels = dataset.labels[indices]
        picks = an.representative_columns(labels, args.seed)
        V = rt.unpack(packed)[picks].T.astype(np.float64)
    print(an.coherence_report(V).as_text())
    return 0


def cmd_bound(args) -> int:
    print(f"{an.welch_lower_bound(args.classes, args.dims):.10f}")
    return 0


def cmd_landscape(args) -> int:
    if args.checkpoint:
        model, _ = ck.load_checkpoint(args.checkpoint)
        dataset = mf.ingest(args.manifest)
        if tuple(dataset.specs) != model.config.levels:
            raise DataError("dataset geometry does not match checkpoint")
        indices = _indices_or_all(args, dataset)
        V = an.relaxed_class_codes(model, dataset, indices, seed=args.seed)
    else:
        if args.classes is None or args.dims is None:
            raise DataError("landscape needs either --checkpoint or --classes/--dims")
        rng = np.random.default_rng(args.seed)
        V = rng.normal(size=(args.dims, args.classes))
        V /= np.linalg.norm(V, axis=0)
    grid = an.landscape_grid(V, resolution=args.resolution, extent=args.extent,
                             seed=args.seed)
    Path(args.out).write_text("\n".join(grid.csv_lines()) + "\n")
    print(f"wrote {args.out} (center loss {grid.center:.6f}, "
          f"min {grid.losses.min():.6f})")
    return 0


def cmd_attn(args) -> int:
    model, _, dataset = _load_model_and_dataset(args)
    if not 0 <= args.image < dataset.count:
        raise DataError(f"image index {args.image} out of range [0, {dataset.count})")
    weights, coords = an.attention_export(model, dataset.pyramid(args.image))
    Path(args.out).write_text("\n".join(an.attention_csv_lines(weights, coords)) + "\n")
    print(f"wrote {args.out} ({weights.shape[0]} queries x {weights.shape[1]} tokens)")
    return 0


def cmd_gradcheck(args) -> int:
    config = load_train_config(args.config)
    report = tr.pipeline_grad_check(config, step=args.step, tolerance=args.tolerance)
    print(report.summary())
    if not report.passed:
        raise NumericalError(f"gradient check failed: max relative error "
                             f"{report.max_error:.3e} >= {args.tolerance:.1e}")
    return 0


# --- parser ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aqhash",
                     description="Attribute-query hashing: train, encode, retrieve, analyze.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="emit a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=50)
    p.add_argument("--attributes", type=int, default=24)
    p.add_argument("--images-per-class", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--levels", default="32x8x8,16x16x16")
    p.add_argument("--query-fraction", type=float, default=0.5)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--indices", help="gallery index file (default: all images)")
    p.add_argument("--log", help="metrics log path (default: <out>.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="hash a dataset into an AQHC codes file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--indices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("retrieve", help="rank gallery codes for each query code")
    p.add_argument("--query-codes", required=True)
    p.add_argument("--gallery-codes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="mean average precision of rankings")
    p.add_argument("--rankings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--query-indices", dest="query_indices")
    p.add_argument("--gallery-indices", dest="gallery_indices")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("coherence", help="coherence report for codes or a checkpoint")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--codes")
    src.add_argument("--checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--indices")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("bound", help="coherence lower bound for (classes, dims)")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dims", type=int, required=True)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("landscape", help="objective landscape CSV grid")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--indices")
    p.add_argument("--classes", type=int)
    p.add_argument("--dims", type=int)
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("attn", help="per-query attention map CSV for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--image", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"aqhash: numerical failure: {e}", file=sys.stderr)
        return 3
    except (AQHashError, FileNotFoundError) as e:
        print(f"aqhash: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
