"""Command-line entry point: ``pccomplete <command> ...``.

Commands: gen-data, train, complete, eval, occlude-eval, interpolate.
Exit codes: 0 success, 2 usage, 3 data error, 4 numeric fault.
The default data root comes from ``PCCOMPLETE_DATA_ROOT`` (else ``./data``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import tensor as T
from .checkpoint import atomic_write_bytes
from .clouds import denormalize, load_pairs, normalize, read_cloud, write_cloud
from .config import TrainConfig, config_from_mapping, desk_config, dump_config, load_config, parse_overrides, toy_config
from .errors import (CheckpointError, ConfigError, ContractViolation, EmptyInputError,
                     NumericFault, ParseError)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATA_ROOT_ENV = "PCCOMPLETE_DATA_ROOT"
PRESETS = {"default": TrainConfig, "desk": desk_config, "toy": toy_config}

log = logging.getLogger("pccomplete")


class UsageError(Exception):
    pass


def data_root() -> str:
    return os.environ.get(DATA_ROOT_ENV, "data")


def _default_manifest(arg):
    return arg or os.path.join(data_root(), "manifest.tsv")


def _write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _check_resolution(cfg, resolution: int) -> None:
    supported = cfg.generator_config().resolutions
    if resolution not in supported:
        raise UsageError(f"unsupported resolution {resolution}; supported: "
                         + ", ".join(str(r) for r in supported))


def _load(checkpoint):
    from .trainer import load_model
    if not os.path.exists(checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    return load_model(checkpoint)


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .dataset import make_synthetic_dataset, write_dataset
    out = args.out or data_root()
    pairs = make_synthetic_dataset(args.per_category, args.n_complete, args.n_partial,
                                   args.test_fraction, args.seed, visibility=args.visibility)
    path = write_dataset(pairs, out)
    print(f"wrote {len(pairs)} pairs; manifest {path}")
    return EXIT_OK


def build_config(args, base: TrainConfig | None = None) -> TrainConfig:
    base = base or PRESETS[args.preset]()
    if args.config:
        cfg = load_config(args.config, base=base)
    else:
        cfg = base
    if args.set:
        cfg = config_from_mapping(parse_overrides(args.set), cfg)
    return cfg


def cmd_train(args) -> int:
    from .trainer import Trainer, checkpoint_config, pretrain_prior
    # a resumed run starts from the checkpoint's config; overrides may only
    # touch fields outside the config hash (steps, paths, logging)
    cfg = build_config(args, checkpoint_config(args.resume) if args.resume else None)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    manifest = cfg.manifest or _default_manifest(None)
    pairs = load_pairs(manifest)
    if not any(p.split == "train" for p in pairs):
        raise EmptyInputError(f"{manifest}: no training records")
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.pckp")
    trace_path = os.path.join(cfg.out_dir, "trace.tsv")
    T.set_default_dtype(np.float32 if cfg.dtype == "float32" else np.float64)
    if args.resume:
        trainer = Trainer.restore(args.resume, pairs, cfg)
    else:
        prior = pretrain_prior(cfg, pairs)
        trainer = Trainer(cfg, pairs, prior)
    _write_text(os.path.join(cfg.out_dir, "config.txt"), dump_config(cfg))

    def on_step(tr, report):
        if cfg.checkpoint_every and tr.step % cfg.checkpoint_every == 0:
            tr.save(ckpt_path)

    remaining = max(0, cfg.steps - trainer.step)
    trainer.run(remaining, trace_path=trace_path, on_step=on_step)
    trainer.save(ckpt_path)
    print(f"trained {trainer.step} steps; checkpoint {ckpt_path}; trace {trace_path}")
    return EXIT_OK


def _coarse_path(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}.coarse{ext}"


def cmd_complete(args) -> int:
    from .eval import complete_cloud
    cfg, G, _, prior = _load(args.checkpoint)
    _check_resolution(cfg, args.resolution)
    cloud = read_cloud(args.input, format=args.input_format)
    if args.normalize:
        cloud = normalize(cloud)
    coarse, fine = complete_cloud(G, prior, cfg, cloud.points, args.category, args.resolution)
    write_cloud(args.output, denormalize(fine, cloud.transform), args.format)
    print(f"wrote {fine.shape[0]} points to {args.output}")
    if args.coarse:
        path = _coarse_path(args.output)
        write_cloud(path, denormalize(coarse, cloud.transform), args.format)
        print(f"wrote {coarse.shape[0]} coarse points to {path}")
    return EXIT_OK


def _test_pairs(manifest, split):
    pairs = load_pairs(_default_manifest(manifest), split=split)
    if not pairs:
        raise EmptyInputError(f"no {split} records in {_default_manifest(manifest)}")
    return pairs


def cmd_eval(args) -> int:
    from .eval import evaluate
    cfg, G, _, prior = _load(args.checkpoint)
    _check_resolution(cfg, args.resolution)
    pairs = _test_pairs(args.manifest, args.split)
    expected = sorted(prior.table) if prior is not None else ()
    report = evaluate(G, prior, cfg, pairs, args.resolution, with_fpd=not args.no_fpd,
                      coarse_only=args.coarse_only, expected_categories=expected)
    if args.json:
        _write_text(args.json, report.to_json())
    if args.records:
        _write_text(args.records, report.records())
    sys.stdout.write(report.pretty())
    return EXIT_OK


def cmd_occlude_eval(args) -> int:
    from .eval import occlusion_sweep, sweep_table
    for p in args.p:
        if not 0 < p < 100:
            raise UsageError(f"occlusion percent must lie strictly between 0 and 100, got {p:g}")
    cfg, G, _, prior = _load(args.checkpoint)
    _check_resolution(cfg, args.resolution)
    pairs = _test_pairs(args.manifest, args.split)
    rows = occlusion_sweep(G, prior, cfg, pairs, args.p, args.resolution, args.seed)
    if args.json:
        payload = [{"p": r.p, "cd_t": r.cd_t, "cd_p": r.cd_p, "count": r.count} for r in rows]
        _write_text(args.json, json.dumps(payload, indent=2) + "\n")
    sys.stdout.write(sweep_table(rows))
    return EXIT_OK


def cmd_interpolate(args) -> int:
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    cfg, G, _, prior = _load(args.checkpoint)
    _check_resolution(cfg, args.resolution)
    a = read_cloud(args.cloud_a)
    b = read_cloud(args.cloud_b)
    dtype = T.get_default_dtype()
    use_prior = prior is not None and not cfg.no_mean_shape
    f_a = prior.vector(args.category_a) if use_prior else None
    f_b = prior.vector(args.category_b) if use_prior else None
    # "nearest" keeps each endpoint identical to a plain completion of its own input
    outputs = G.interpolate(a.points.astype(dtype), b.points.astype(dtype), args.steps,
                            args.resolution, f_a, f_b, conditioning="nearest")
    os.makedirs(args.out_dir, exist_ok=True)
    ext = ".xyz" if args.format == "xyz-ascii" else ".pcb"
    width = len(str(args.steps - 1))
    for i, (alpha, pts) in enumerate(outputs):
        path = os.path.join(args.out_dir, f"step_{i:0{width}d}{ext}")
        write_cloud(path, pts, args.format)
        print(f"{path}\talpha={alpha!r}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pccomplete", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic paired dataset and manifest")
    p.add_argument("--out", help=f"output directory (default ${DATA_ROOT_ENV} or ./data)")
    p.add_argument("--per-category", type=int, default=50)
    p.add_argument("--n-complete", type=int, default=2048)
    p.add_argument("--n-partial", type=int, default=256)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--visibility", choices=("halfspace", "hpr"), default="halfspace")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default",
                   help="base values the config file overrides")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--resume", help="continue from a trainer checkpoint (its config is the base)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("complete", help="complete one partial cloud")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--resolution", type=int, default=2048)
    p.add_argument("--category", help="mean-shape category (default: average over categories)")
    p.add_argument("--coarse", action="store_true", help="also write the coarse cloud to <output>.coarse<ext>")
    p.add_argument("--normalize", action="store_true",
                   help="normalize the input first and de-normalize the outputs")
    p.add_argument("--input-format", choices=("xyz-ascii", "pcb-binary"))
    p.add_argument("--format", choices=("xyz-ascii", "pcb-binary"), help="output format (default: from extension)")
    p.set_defaults(func=cmd_complete)

    for name, func, text in (("eval", cmd_eval, "per-category Chamfer table and FPD"),
                             ("occlude-eval", cmd_occlude_eval, "Chamfer vs. occlusion percentage")):
        p = sub.add_parser(name, help=text)
        p.add_argument("checkpoint")
        p.add_argument("--manifest", help=f"dataset manifest (default ${DATA_ROOT_ENV}/manifest.tsv)")
        p.add_argument("--split", default="test", choices=("train", "test"))
        p.add_argument("--resolution", type=int, default=2048)
        p.add_argument("--json", help="write machine-readable results here")
        if name == "eval":
            p.add_argument("--records", help="write per-instance records here")
            p.add_argument("--no-fpd", action="store_true")
            p.add_argument("--coarse-only", action="store_true",
                           help="zero the displacement head (lifting only tiles points)")
        else:
            p.add_argument("--p", type=float, nargs="+", default=[20, 30, 40, 50, 60, 70],
                           help="occlusion percentages")
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("interpolate", help="decode blends of two latent codes")
    p.add_argument("checkpoint")
    p.add_argument("cloud_a")
    p.add_argument("cloud_b")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resolution", type=int, default=2048)
    p.add_argument("--category-a")
    p.add_argument("--category-b")
    p.add_argument("--format", choices=("xyz-ascii", "pcb-binary"), default="pcb-binary")
    p.set_defaults(func=cmd_interpolate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pccomplete {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFault as exc:
        print(f"pccomplete {args.command}: numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ParseError, EmptyInputError, CheckpointError, ContractViolation) as exc:
        print(f"pccomplete {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
