"""Command line entry point.

Subcommands cover the whole pipeline: ``fit`` trains from a JSON run
configuration, ``bake`` freezes soft indices, ``encode``/``decode``
move between checkpoints and ``.vqad`` streams, ``stream`` simulates
progressive delivery (one render per level plus a rate-distortion CSV),
``eval`` writes metrics, ``baseline`` applies the post-hoc compressors,
and ``gradcheck`` runs the finite-difference oracle suite.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import gzip
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import baselines, codec, datasets, metrics, vq
from .field import FieldModel
from .grid import GridConfig, box_occupancy, dense_occupancy, sphere_occupancy
from .train import (
    TrainConfig,
    TrainedModel,
    bake_model,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["main", "ConfigError", "load_run_config"]


class ConfigError(ValueError):
    pass


# ------------------------------------------------------- configuration

_GRID_KEYS = {"levels", "base_resolution", "feature_width", "dim", "occupancy"}
_OCC_KEYS = {"kind", "radius", "center", "half_extents"}
_TRAIN_KEYS = {
    "epochs", "batch_size", "learning_rate", "grid_lr_multiplier", "seed",
    "lod_sampling", "hidden_width", "samples_per_cell", "dtype",
}
_TOP_KEYS = {"task", "dataset", "mode", "grid", "vq", "train", "background", "output"}
_DATASET_KEYS = {
    "image": {"image", "synthetic"},
    "sdf": {"shape", "params", "samples", "seed"},
    "volume": {"views_dir", "generate"},
}


def _reject_unknown(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_run_config(path) -> dict:
    """Parse and strictly validate a run configuration file."""
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, "config")

    for key in ("task", "dataset", "mode", "grid"):
        if key not in cfg:
            raise ConfigError(f"config is missing required key {key!r}")
    if cfg["task"] not in ("image", "sdf", "volume"):
        raise ConfigError(f"unknown task {cfg['task']!r}")
    if cfg["mode"] not in ("uncompressed", "vqad", "random-index"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")

    if not isinstance(cfg["dataset"], dict):
        raise ConfigError("dataset must be an object")
    _reject_unknown(cfg["dataset"], _DATASET_KEYS[cfg["task"]], "dataset")

    if not isinstance(cfg["grid"], dict):
        raise ConfigError("grid must be an object")
    _reject_unknown(cfg["grid"], _GRID_KEYS, "grid")
    occ = cfg["grid"].get("occupancy", {"kind": "dense"})
    if not isinstance(occ, dict) or "kind" not in occ:
        raise ConfigError("grid.occupancy must be an object with a 'kind'")
    _reject_unknown(occ, _OCC_KEYS, "grid.occupancy")
    if occ["kind"] not in ("dense", "sphere", "box"):
        raise ConfigError(f"unknown occupancy kind {occ['kind']!r}")

    if "vq" in cfg:
        _reject_unknown(cfg["vq"], {"bitwidth"}, "vq")
    if "train" in cfg:
        _reject_unknown(cfg["train"], _TRAIN_KEYS, "train")
    if "background" in cfg and len(cfg["background"]) != 3:
        raise ConfigError("background must be an [r, g, b] triple")
    return cfg


def _occupancy_from_config(occ: dict, dim: int):
    kind = occ.get("kind", "dense")
    if kind == "dense":
        return dense_occupancy()
    if kind == "sphere":
        return sphere_occupancy(
            radius=occ.get("radius", 0.8), center=occ.get("center")
        )
    return box_occupancy(
        half_extents=occ.get("half_extents", [0.8] * dim),
        center=occ.get("center"),
    )


def _grid_from_config(cfg: dict) -> GridConfig:
    grid = cfg["grid"]
    return GridConfig(
        levels=int(grid.get("levels", 4)),
        base_resolution=int(grid.get("base_resolution", 8)),
        feature_width=int(grid.get("feature_width", 8)),
        dim=int(grid.get("dim", 2 if cfg["task"] == "image" else 3)),
    )


def _dataset_from_config(cfg: dict, config_dir: Path):
    task = cfg["task"]
    spec = cfg["dataset"]
    background = np.asarray(cfg.get("background", [0.0, 0.0, 0.0]), dtype=np.float64)

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else config_dir / p

    if task == "image":
        if "image" in spec:
            image = datasets.load_png(resolve(spec["image"]), background)
        elif "synthetic" in spec:
            syn = dict(spec["synthetic"])
            image = datasets.synthetic_image(
                size=int(syn.get("size", 128)), seed=int(syn.get("seed", 7))
            )
        else:
            raise ConfigError("image dataset needs 'image' or 'synthetic'")
        dataset = datasets.make_image_dataset(image)
    elif task == "sdf":
        if "shape" not in spec:
            raise ConfigError("sdf dataset needs a 'shape'")
        dataset = datasets.make_sdf_dataset(
            shape=spec["shape"],
            n_samples=int(spec.get("samples", 20000)),
            seed=int(spec.get("seed", 0)),
            **spec.get("params", {}),
        )
    else:
        if "views_dir" not in spec:
            raise ConfigError("volume dataset needs a 'views_dir'")
        views_dir = resolve(spec["views_dir"])
        if "generate" in spec and not (views_dir / "cameras.json").exists():
            gen = dict(spec["generate"])
            datasets.make_volume_views(
                views_dir,
                n_views=int(gen.get("n_views", 8)),
                width=int(gen.get("width", 48)),
                height=int(gen.get("height", 48)),
                background=tuple(background),
            )
        dataset = datasets.load_volume_dataset(views_dir)

    grid = _grid_from_config(cfg)
    dataset.occupancy = _occupancy_from_config(
        cfg["grid"].get("occupancy", {"kind": "dense"}), grid.dim
    )
    return dataset


def _train_config_from(cfg: dict) -> TrainConfig:
    train_cfg = dict(cfg.get("train", {}))
    bitwidth = int(cfg.get("vq", {}).get("bitwidth", 4))
    return TrainConfig(mode=cfg["mode"], bitwidth=bitwidth, **train_cfg)


# ----------------------------------------------------------- commands


def _cmd_fit(args) -> int:
    cfg = load_run_config(args.config)
    config_dir = Path(args.config).resolve().parent
    dataset = _dataset_from_config(cfg, config_dir)
    grid_config = _grid_from_config(cfg)
    train_config = _train_config_from(cfg)
    trained = train(train_config, dataset, grid_config, run_config=cfg)
    out = Path(args.out or cfg.get("output", "model.ckpt.npz"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, trained)
    print(
        f"trained {cfg['mode']} model: final loss "
        f"{trained.final_metrics['final_loss']:.6f}, "
        f"train psnr {trained.final_metrics['train_psnr_db']:.2f} dB -> {out}"
    )
    return 0


def _cmd_bake(args) -> int:
    trained = load_checkpoint(args.checkpoint)
    baked = bake_model(trained)
    save_checkpoint(args.out, baked)
    print(f"baked indices -> {args.out}")
    return 0


def _cmd_encode(args) -> int:
    trained = load_checkpoint(args.checkpoint)
    inference = bake_model(trained)
    stream = codec.encode(inference.model)
    Path(args.out).write_bytes(stream)
    report = codec.size_report(inference.model)
    print(f"encoded {len(stream)} bytes -> {args.out}")
    print(json.dumps(report.as_dict(), indent=2))
    if args.gzip:
        gz_path = str(args.out) + ".gz"
        with gzip.open(gz_path, "wb") as fh:
            fh.write(stream)
        # Post-hoc byte compression is a convenience only; reported sizes
        # above intentionally exclude it.
        print(f"gzip copy ({Path(gz_path).stat().st_size} bytes) -> {gz_path}")
    return 0


def _cmd_decode(args) -> int:
    stream = Path(args.input).read_bytes()
    model = codec.decode(stream)
    trained = _wrap_decoded(model)
    save_checkpoint(args.out, trained)
    print(f"decoded {model.grid.levels} levels -> {args.out}")
    return 0


def _wrap_decoded(model: FieldModel) -> TrainedModel:
    vq_config = None
    if model.is_quantized:
        vq_config = vq.VQConfig(
            bitwidth=int(np.log2(model.codebooks[0].shape[0])),
            feature_width=model.grid.feature_width,
            levels=model.grid.levels,
        )
    return TrainedModel(
        model=model,
        config=TrainConfig(
            mode="vqad" if model.is_quantized else "uncompressed",
            bitwidth=vq_config.bitwidth if vq_config else 4,
        ),
        grid_config=model.grid,
        vq_config=vq_config,
        task=model.head,
        loss_history=[],
        final_metrics={},
        optimizer_state=None,
    )


def _eval_set_for(model: FieldModel, reference, size: int, samples_per_cell: int):
    if model.head == "image":
        if reference is not None:
            ref = datasets.load_png(reference, model.background)
        else:
            full = metrics.ImageEvalSet(reference=np.zeros((size, size, 3)))
            ref = full.render(model, lod=model.grid.levels - 1)
        return metrics.ImageEvalSet(reference=ref)
    if model.head == "radiance":
        if reference is not None:
            ds = datasets.load_volume_dataset(reference)
            cam = ds.cameras[0]
            ref = ds.targets[: cam.height * cam.width].reshape(
                cam.height, cam.width, 3
            )
        else:
            cam = datasets.orbit_cameras(1, width=size, height=size)[0]
            es = metrics.VolumeEvalSet(
                reference=np.zeros((size, size, 3)), camera=cam,
                samples_per_cell=samples_per_cell,
            )
            ref = es.render(model, lod=model.grid.levels - 1)
        return metrics.VolumeEvalSet(
            reference=ref, camera=cam, samples_per_cell=samples_per_cell
        )
    raise ConfigError("streaming renders support the image and radiance heads")


def _cmd_stream(args) -> int:
    stream = Path(args.input).read_bytes()
    model = codec.decode(stream)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    eval_set = _eval_set_for(model, args.reference, args.size, args.samples_per_cell)
    points = []
    sizes = codec.prefix_sizes(stream)
    for lv in range(model.grid.levels):
        sub = codec.decode_prefix(stream, lv + 1)
        image = eval_set.render(sub, lod=lv)
        datasets.save_png(out_dir / f"lod_{lv}.png", image)
        points.append(
            metrics.RDPoint(
                lod=lv,
                bytes_streamed=sizes[lv],
                psnr_db=metrics.psnr(image, eval_set.reference),
                ssim=metrics.ssim(image, eval_set.reference),
            )
        )
    csv_path = out_dir / "rate_distortion.csv"
    csv_path.write_text(metrics.rd_points_to_csv(points))
    for p in points:
        print(f"lod {p.lod}: {p.bytes_streamed} bytes, {p.psnr_db:.2f} dB")
    print(f"wrote {model.grid.levels} renders and {csv_path}")
    return 0


def _cmd_eval(args) -> int:
    stream = Path(args.input).read_bytes()
    model = codec.decode(stream)
    eval_set = _eval_set_for(model, args.reference, args.size, args.samples_per_cell)
    points = metrics.rate_distortion(model, eval_set, stream)
    Path(args.out).write_text(metrics.rd_points_to_csv(points))
    print(metrics.rd_points_to_csv(points), end="")
    return 0


def _cmd_baseline(args) -> int:
    trained = load_checkpoint(args.checkpoint)
    if args.kind == "klt":
        return _baseline_klt(trained, args)
    if args.kind == "kmvq":
        return _baseline_kmvq(trained, args)
    return _baseline_randidx(trained, args)


def _baseline_klt(trained: TrainedModel, args) -> int:
    if trained.model.pyramid.storage_kind != "raw":
        raise ConfigError("klt baseline needs an uncompressed checkpoint")
    retained = args.retained
    pyramid = trained.model.pyramid
    new_levels = []
    for lv, rows in enumerate(pyramid.levels):
        transform = baselines.klt_fit(rows)
        approx = baselines.klt_truncate(rows, transform, retained)
        mse = float(np.mean((approx - rows) ** 2))
        print(f"level {lv}: kept {retained}/{transform.width} coefficients, "
              f"mse {mse:.3e}")
        new_levels.append(approx.astype(rows.dtype))
    pyramid.set_storage("raw", new_levels)
    trained.model.invalidate_cache()
    k = trained.grid_config.feature_width
    print(f"coefficient payload scales by {retained}/{k} = {retained / k:.3f} "
          f"of the raw grid ({k / retained:.1f}x)")
    save_checkpoint(args.out, trained)
    print(f"klt-compressed checkpoint -> {args.out}")
    return 0


def _baseline_kmvq(trained: TrainedModel, args) -> int:
    if trained.model.pyramid.storage_kind != "raw":
        raise ConfigError("kmvq baseline needs an uncompressed checkpoint")
    bitwidth = args.bitwidth
    pyramid = trained.model.pyramid
    codebooks, indices = [], []
    for lv, rows in enumerate(pyramid.levels):
        result = baselines.kmeans_vq(
            rows.astype(np.float32), bitwidth, seed=trained.config.seed + lv
        )
        codebooks.append(result.codebook.astype(rows.dtype))
        indices.append(result.assignments)
        print(f"level {lv}: {1 << bitwidth} clusters, inertia {result.inertia:.4e}")
    baked = pyramid.copy_structure()
    baked.set_storage("baked", indices)
    model = FieldModel(
        grid=trained.grid_config,
        pyramid=baked,
        codebooks=codebooks,
        decoder=trained.model.decoder,
        background=trained.model.background,
    )
    out = TrainedModel(
        model=model,
        config=trained.config,
        grid_config=trained.grid_config,
        vq_config=vq.VQConfig(
            bitwidth=bitwidth,
            feature_width=trained.grid_config.feature_width,
            levels=trained.grid_config.levels,
        ),
        task=trained.task,
        loss_history=trained.loss_history,
        final_metrics=trained.final_metrics,
        run_config=trained.run_config,
    )
    save_checkpoint(args.out, out)
    print(f"kmvq checkpoint -> {args.out}")
    return 0


def _baseline_randidx(trained: TrainedModel, args) -> int:
    if trained.run_config is None:
        raise ConfigError(
            "randidx baseline re-trains and needs a checkpoint produced by "
            "'fit' (with an embedded run config)"
        )
    cfg = dict(trained.run_config)
    cfg["mode"] = "random-index"
    cfg.setdefault("vq", {})["bitwidth"] = args.bitwidth
    dataset = _dataset_from_config(cfg, Path.cwd())
    retrained = train(
        _train_config_from(cfg), dataset, _grid_from_config(cfg), run_config=cfg
    )
    save_checkpoint(args.out, retrained)
    print(
        f"random-index model (b={args.bitwidth}): train psnr "
        f"{retrained.final_metrics['train_psnr_db']:.2f} dB -> {args.out}"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    from .oracle import run_gradcheck_suite

    results = run_gradcheck_suite(n_seeds=args.seeds)
    failed = False
    for name, err, tol in results:
        status = "ok" if err < tol else "FAIL"
        failed |= err >= tol
        print(f"{name:30s} max rel err {err:.3e} (tol {tol:.0e}) {status}")
    if failed:
        print("gradcheck failed", file=sys.stderr)
        return 2
    print(f"all {len(results)} checks passed")
    return 0


# -------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    # Usage errors exit 1 (argparse default is 2, which this tool
    # reserves for data errors).
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vqad", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="checkpoint path")
    p.set_defaults(fn=_cmd_fit)

    p = sub.add_parser("bake", help="freeze soft indices to integers")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_bake)

    p = sub.add_parser("encode", help="write a .vqad bitstream from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gzip", action="store_true",
                   help="also write a gzip copy (not counted in sizes)")
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("decode", help="read a .vqad bitstream into a checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("stream", help="simulate progressive delivery per level")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--reference", default=None,
                   help="ground truth (PNG or views dir); defaults to the "
                        "full-model render")
    p.add_argument("--size", type=int, default=128, help="render size fallback")
    p.add_argument("--samples-per-cell", type=int, default=16)
    p.set_defaults(fn=_cmd_stream)

    p = sub.add_parser("eval", help="write the rate-distortion CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--reference", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--samples-per-cell", type=int, default=16)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("baseline", help="post-hoc compressors on a checkpoint")
    p.add_argument("kind", choices=["klt", "kmvq", "randidx"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--retained", type=int, default=8,
                   help="klt: retained coefficients")
    p.add_argument("--bitwidth", type=int, default=4,
                   help="kmvq/randidx: codebook bitwidth")
    p.set_defaults(fn=_cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference oracle suite")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, codec.BitstreamError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
