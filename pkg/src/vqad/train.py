"""Stochastic training of the field, quantized or not.

One optimizer drives two parameter groups: the decoder at the base
learning rate, and the grid payload (features, or logits plus
codebooks) at a multiplied rate. Every batch samples a level of detail,
builds a gradient tape for the corresponding forward map, and applies
one Adam step. Runs are bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import vq
from .autodiff import Tape
from .datasets import IdentityDataset, VolumeDataset
from .field import (
    DecoderMLP,
    FieldModel,
    VIEW_EMBED_DIM,
    apply_head,
    decode_point,
    init_decoder,
    mlp_forward,
    positional_encode,
    render_rays,
    sample_segments,
)
from .grid import FeatureGridPyramid, GridConfig, OccupancyMask, build_pyramid

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "TrainingDivergedError",
    "sample_lod",
    "evaluate_loss",
    "train",
    "bake_model",
    "save_checkpoint",
    "load_checkpoint",
]

MODES = ("uncompressed", "vqad", "random-index")
LOD_SAMPLING = ("weighted", "finest-only")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "uncompressed"
    epochs: int = 50
    batch_size: int = 4096
    learning_rate: float = 1e-3
    grid_lr_multiplier: float = 100.0
    bitwidth: int = 4
    seed: int = 0
    lod_sampling: str = "weighted"
    hidden_width: int = 128
    samples_per_cell: int = 16
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lod_sampling not in LOD_SAMPLING:
            raise ValueError(f"lod_sampling must be one of {LOD_SAMPLING}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.grid_lr_multiplier < 1.0:
            raise ValueError("grid_lr_multiplier must be >= 1")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class TrainedModel:
    model: FieldModel
    config: TrainConfig
    grid_config: GridConfig
    vq_config: vq.VQConfig | None
    task: str
    loss_history: list[float]
    final_metrics: dict
    optimizer_state: dict | None = None
    run_config: dict | None = None  # CLI config snapshot when available


def sample_lod(levels: int, rng) -> int:
    """Draw a level with probability proportional to 2^level.

    Finer levels are sampled more often; with L levels the coarsest has
    weight 1 and each step finer doubles it.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    weights = 2.0 ** np.arange(levels)
    cum = np.cumsum(weights / weights.sum())
    return int(np.searchsorted(cum, rng.random(), side="right"))


# ------------------------------------------------------------------ Adam


class Adam:
    def __init__(self, lrs: dict[str, float], beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = lrs
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name].astype(p.dtype)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            p -= (self.lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

    def state(self):
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state(self, state):
        self.t = int(state["t"])
        self.m = dict(state["m"])
        self.v = dict(state["v"])


# ------------------------------------------------------------- the loop


class _Trainer:
    def __init__(self, config: TrainConfig, dataset, grid_config: GridConfig,
                 vq_config: vq.VQConfig | None):
        self.config = config
        self.dataset = dataset
        self.grid_config = grid_config
        self.dtype = config.np_dtype
        if config.mode != "uncompressed":
            self.vq_config = vq_config or vq.VQConfig(
                bitwidth=config.bitwidth,
                feature_width=grid_config.feature_width,
                levels=grid_config.levels,
            )
        else:
            self.vq_config = None

        ss = np.random.SeedSequence(config.seed)
        grid_rng, dec_rng, vq_rng, self.loop_rng = [
            np.random.default_rng(s) for s in ss.spawn(4)
        ]

        occupancy = getattr(dataset, "occupancy", None)
        self.pyramid = build_pyramid(
            grid_config, occupancy=occupancy, seed=grid_rng, dtype=self.dtype
        )
        self.head = "radiance" if isinstance(dataset, VolumeDataset) else dataset.head
        self.decoder = init_decoder(
            grid_config.feature_width, self.head, hidden=config.hidden_width,
            seed=dec_rng, dtype=self.dtype,
        )

        self.params: dict[str, np.ndarray] = {
            "w1": self.decoder.w1,
            "b1": self.decoder.b1,
            "w2": self.decoder.w2,
            "b2": self.decoder.b2,
        }
        lr, mult = config.learning_rate, config.grid_lr_multiplier
        self.lrs = {name: lr for name in self.params}

        self.fixed_indices: list[np.ndarray] | None = None
        if config.mode == "uncompressed":
            for lv, feats in enumerate(self.pyramid.levels):
                self.params[f"features{lv}"] = feats
                self.lrs[f"features{lv}"] = lr * mult
        else:
            codebooks = vq.init_codebooks(self.vq_config, seed=vq_rng, dtype=self.dtype)
            self.codebooks = codebooks
            for lv, book in enumerate(codebooks):
                self.params[f"codebook{lv}"] = book
                self.lrs[f"codebook{lv}"] = lr * mult
            if config.mode == "vqad":
                logits = vq.init_logits(
                    self.pyramid.vertex_counts, self.vq_config, seed=vq_rng,
                    dtype=self.dtype,
                )
                self.logits = logits
                for lv, lg in enumerate(logits):
                    self.params[f"logits{lv}"] = lg
                    self.lrs[f"logits{lv}"] = lr * mult
            else:  # random-index
                from .baselines import random_index_grid

                self.fixed_indices = [
                    random_index_grid(m, self.vq_config.bitwidth, seed=config.seed + lv)
                    for lv, m in enumerate(self.pyramid.vertex_counts)
                ]

        self.optimizer = Adam(self.lrs)
        self._prepare_task()

    # ------------------------------------------------------- preparation

    def _prepare_task(self):
        ds = self.dataset
        if isinstance(ds, IdentityDataset):
            self.coords = np.asarray(ds.coords, dtype=np.float64)
            self.targets = np.asarray(ds.targets, dtype=self.dtype)
            self.plans = self.pyramid.gather_plan(
                self.coords, self.grid_config.levels - 1
            )
            self.n_items = len(ds)
        elif isinstance(ds, VolumeDataset):
            self.origins = np.asarray(ds.origins, dtype=np.float64)
            self.dirs = np.asarray(ds.directions, dtype=np.float64)
            self.targets = np.asarray(ds.targets, dtype=self.dtype)
            self.ray_emb = positional_encode(self.dirs).astype(self.dtype)
            self.background = np.asarray(ds.background, dtype=self.dtype)
            self.n_items = len(ds)
        else:
            raise TypeError(f"unsupported dataset type {type(ds).__name__}")

    # ---------------------------------------------------- feature lookup

    def _feature_node(self, tape: Tape, nodes, level, rows, weights, n):
        corners = rows.shape[1]
        k = self.grid_config.feature_width
        if self.config.mode == "uncompressed":
            gathered = tape.gather_rows(nodes[f"features{level}"], rows.reshape(-1))
        elif self.config.mode == "vqad":
            logit_rows = tape.gather_rows(nodes[f"logits{level}"], rows.reshape(-1))
            gathered = vq.ste_lookup(tape, logit_rows, nodes[f"codebook{level}"])
        else:
            idx = self.fixed_indices[level][rows.reshape(-1)]
            gathered = tape.gather_rows(nodes[f"codebook{level}"], idx)
        stacked = tape.reshape(gathered, (n, corners, k))
        w_const = tape.constant(weights.astype(self.dtype))
        return tape.weighted_sum(w_const, stacked)

    def _interp_node(self, tape, nodes, plans, lod, n):
        out = None
        for level in range(lod + 1):
            rows, weights = plans[level]
            contrib = self._feature_node(tape, nodes, level, rows, weights, n)
            out = contrib if out is None else tape.add(out, contrib)
        return out

    # ----------------------------------------------------------- batches

    def _identity_loss(self, tape, nodes, batch_idx, lod):
        n = len(batch_idx)
        plans = [
            (rows[batch_idx], weights[batch_idx]) for rows, weights in self.plans
        ]
        feat = self._interp_node(tape, nodes, plans, lod, n)
        hidden = tape.relu(tape.affine(feat, nodes["w1"], nodes["b1"]))
        out = tape.affine(hidden, nodes["w2"], nodes["b2"])
        pred = tape.sigmoid(out) if self.head == "image" else out
        target = tape.constant(self.targets[batch_idx])
        diff = tape.sub(pred, target)
        return tape.mean_all(tape.mul(diff, diff))

    def _volume_loss(self, tape, nodes, batch_idx, lod):
        positions, deltas, _ = sample_segments(
            self.grid_config,
            self.origins[batch_idx],
            self.dirs[batch_idx],
            samples_per_cell=self.config.samples_per_cell,
        )
        n, s, _ = positions.shape
        flat = positions.reshape(-1, self.grid_config.dim)
        plans = self.pyramid.gather_plan(flat, lod)
        feat = self._interp_node(tape, nodes, plans, lod, n * s)
        emb = np.repeat(self.ray_emb[batch_idx], s, axis=0)
        hidden = tape.relu(tape.affine([feat, emb], nodes["w1"], nodes["b1"]))
        out = tape.affine(hidden, nodes["w2"], nodes["b2"])

        density = tape.reshape(tape.relu(tape.slice_cols(out, 0, 1)), (n, s))
        rgb = tape.reshape(tape.sigmoid(tape.slice_cols(out, 1, 4)), (n, s, 3))
        tau = tape.mul(density, tape.constant(deltas.astype(self.dtype)))
        trans = tape.exp(tape.scale(tape.cumsum_exclusive(tau, axis=1), -1.0))
        alpha = tape.sub(
            tape.constant(np.ones((n, s), dtype=self.dtype)),
            tape.exp(tape.scale(tau, -1.0)),
        )
        weights = tape.mul(alpha, trans)
        color = tape.weighted_sum(weights, rgb)
        t_final = tape.exp(tape.scale(tape.sum_axis(tau, axis=1), -1.0))
        bg_tile = tape.constant(np.tile(self.background, (n, 1)))
        pred = tape.add(color, tape.scale_rows(bg_tile, t_final))
        target = tape.constant(self.targets[batch_idx])
        diff = tape.sub(pred, target)
        return tape.mean_all(tape.mul(diff, diff))

    def step(self, batch_idx, lod):
        tape = Tape()
        nodes = {name: tape.param(name, value) for name, value in self.params.items()}
        if isinstance(self.dataset, VolumeDataset):
            loss = self._volume_loss(tape, nodes, batch_idx, lod)
        else:
            loss = self._identity_loss(tape, nodes, batch_idx, lod)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"non-finite loss {value} at optimizer step {self.optimizer.t + 1} "
                f"(lod={lod}, batch={len(batch_idx)})"
            )
        grads = tape.backward(loss)
        self.optimizer.step(self.params, grads)
        return value

    def run(self) -> list[float]:
        levels = self.grid_config.levels
        history = []
        batches = max(1, math.ceil(self.n_items / self.config.batch_size))
        for _ in range(self.config.epochs):
            perm = self.loop_rng.permutation(self.n_items)
            for b in range(batches):
                batch = perm[b * self.config.batch_size : (b + 1) * self.config.batch_size]
                if len(batch) == 0:
                    continue
                if self.config.lod_sampling == "finest-only":
                    lod = levels - 1
                else:
                    lod = sample_lod(levels, self.loop_rng)
                history.append(self.step(batch, lod))
        return history

    # ------------------------------------------------------------ export

    def to_model(self) -> FieldModel:
        if self.config.mode == "uncompressed":
            self.pyramid.set_storage(
                "raw", [self.params[f"features{lv}"] for lv in range(self.grid_config.levels)]
            )
            codebooks = None
        elif self.config.mode == "vqad":
            self.pyramid.set_storage(
                "soft", [self.params[f"logits{lv}"] for lv in range(self.grid_config.levels)]
            )
            codebooks = [self.params[f"codebook{lv}"] for lv in range(self.grid_config.levels)]
        else:
            self.pyramid.set_storage("baked", list(self.fixed_indices))
            codebooks = [self.params[f"codebook{lv}"] for lv in range(self.grid_config.levels)]
        background = getattr(self, "background", np.zeros(3, dtype=self.dtype))
        return FieldModel(
            grid=self.grid_config,
            pyramid=self.pyramid,
            codebooks=codebooks,
            decoder=self.decoder,
            background=np.asarray(background, dtype=np.float64),
        )


def evaluate_loss(model: FieldModel, batch, lod: int | None = None,
                  samples_per_cell: int = 16) -> float:
    """Mean squared error of the model against a dataset (or a slice of one)."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    lod = model.grid.levels - 1 if lod is None else lod
    if isinstance(batch, VolumeDataset):
        pred, _ = render_rays(
            model, batch.origins, batch.directions, lod=lod,
            samples_per_cell=samples_per_cell,
        )
        return float(np.mean((pred - batch.targets) ** 2))
    pred = decode_point(model, batch.coords, lod=lod)
    return float(np.mean((pred - np.asarray(batch.targets)) ** 2))


def train(
    config: TrainConfig,
    dataset,
    grid_config: GridConfig,
    vq_config: vq.VQConfig | None = None,
    run_config: dict | None = None,
) -> TrainedModel:
    """Fit a field to a dataset and return the trained model plus history."""
    trainer = _Trainer(config, dataset, grid_config, vq_config)
    history = trainer.run()
    model = trainer.to_model()
    final_mse = evaluate_loss(
        model, dataset, samples_per_cell=config.samples_per_cell
    )
    metrics = {
        "final_loss": history[-1] if history else float("nan"),
        "final_mse": final_mse,
        "train_psnr_db": float(10.0 * np.log10(1.0 / final_mse)) if final_mse > 0 else 99.0,
    }
    task = "radiance" if isinstance(dataset, VolumeDataset) else dataset.head
    return TrainedModel(
        model=model,
        config=config,
        grid_config=grid_config,
        vq_config=trainer.vq_config,
        task=task,
        loss_history=history,
        final_metrics=metrics,
        optimizer_state=trainer.optimizer.state(),
        run_config=run_config,
    )


def bake_model(trained: TrainedModel) -> TrainedModel:
    """Freeze soft logits into integer indices (idempotent on baked models)."""
    model = trained.model
    if model.pyramid.storage_kind == "soft":
        baked = model.pyramid.copy_structure()
        baked.set_storage("baked", [vq.bake(lg) for lg in model.pyramid.levels])
        model = FieldModel(
            grid=model.grid,
            pyramid=baked,
            codebooks=model.codebooks,
            decoder=model.decoder,
            background=model.background,
        )
    return TrainedModel(
        model=model,
        config=trained.config,
        grid_config=trained.grid_config,
        vq_config=trained.vq_config,
        task=trained.task,
        loss_history=trained.loss_history,
        final_metrics=trained.final_metrics,
        optimizer_state=trained.optimizer_state,
        run_config=trained.run_config,
    )


# ------------------------------------------------------------ checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, trained: TrainedModel):
    """Write a versioned container: compressed bitstream + training sidecar.

    The embedded bitstream always describes the inference view of the
    model (soft logits are baked for it); full-precision parameters and
    optimizer moments ride alongside so training state is not lost.
    """
    from . import codec

    inference = bake_model(trained)
    payload: dict[str, np.ndarray] = {
        "format_version": np.asarray(CHECKPOINT_VERSION),
        "bitstream": np.frombuffer(
            codec.encode(inference.model, task=trained.task), dtype=np.uint8
        ),
        "task": np.asarray(trained.task),
        "mode": np.asarray(trained.config.mode),
        "train_config_json": np.asarray(json.dumps(asdict(trained.config))),
        "grid_config_json": np.asarray(json.dumps(asdict(trained.grid_config))),
        "loss_history": np.asarray(trained.loss_history, dtype=np.float64),
        "final_metrics_json": np.asarray(json.dumps(trained.final_metrics)),
        "background": np.asarray(trained.model.background, dtype=np.float64),
    }
    if trained.run_config is not None:
        payload["run_config_json"] = np.asarray(json.dumps(trained.run_config))
    if trained.vq_config is not None:
        payload["vq_config_json"] = np.asarray(json.dumps(asdict(trained.vq_config)))

    pyramid = trained.model.pyramid
    payload["storage_kind"] = np.asarray(pyramid.storage_kind)
    for lv, cells in enumerate(pyramid.mask.cells):
        payload[f"occupancy{lv}"] = np.packbits(cells)
    for lv, arr in enumerate(pyramid.levels):
        payload[f"level{lv}"] = arr
    if trained.model.codebooks is not None:
        for lv, book in enumerate(trained.model.codebooks):
            payload[f"codebook{lv}"] = book
    dec = trained.model.decoder
    payload.update({"w1": dec.w1, "b1": dec.b1, "w2": dec.w2, "b2": dec.b2})

    if trained.optimizer_state is not None:
        payload["adam_t"] = np.asarray(trained.optimizer_state["t"])
        for name, arr in trained.optimizer_state["m"].items():
            payload[f"adam_m/{name}"] = arr
        for name, arr in trained.optimizer_state["v"].items():
            payload[f"adam_v/{name}"] = arr

    buf = io.BytesIO()
    np.savez(buf, **payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> TrainedModel:
    data = np.load(path, allow_pickle=False)
    version = int(data["format_version"])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")

    config = TrainConfig(**json.loads(str(data["train_config_json"])))
    grid_config = GridConfig(**json.loads(str(data["grid_config_json"])))
    vq_config = None
    if "vq_config_json" in data:
        vq_config = vq.VQConfig(**json.loads(str(data["vq_config_json"])))
    task = str(data["task"])

    cells = []
    for lv, res in enumerate(grid_config.resolutions):
        n_cells = res**grid_config.dim
        cells.append(np.unpackbits(data[f"occupancy{lv}"])[:n_cells].astype(bool))
    mask = OccupancyMask(resolutions=grid_config.resolutions, dim=grid_config.dim,
                         cells=cells)
    pyramid = FeatureGridPyramid(grid_config, mask)
    kind = str(data["storage_kind"])
    pyramid.set_storage(
        kind, [data[f"level{lv}"] for lv in range(grid_config.levels)]
    )
    codebooks = None
    if "codebook0" in data:
        codebooks = [data[f"codebook{lv}"] for lv in range(grid_config.levels)]

    decoder = DecoderMLP(data["w1"], data["b1"], data["w2"], data["b2"],
                         head=task if task in ("image", "sdf") else "radiance")
    model = FieldModel(
        grid=grid_config,
        pyramid=pyramid,
        codebooks=codebooks,
        decoder=decoder,
        background=np.asarray(data["background"]),
    )

    optimizer_state = None
    if "adam_t" in data:
        m = {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith("adam_m/")}
        v = {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith("adam_v/")}
        optimizer_state = {"t": int(data["adam_t"]), "m": m, "v": v}

    run_config = None
    if "run_config_json" in data:
        run_config = json.loads(str(data["run_config_json"]))

    return TrainedModel(
        model=model,
        config=config,
        grid_config=grid_config,
        vq_config=vq_config,
        task=task,
        loss_history=list(np.asarray(data["loss_history"])),
        final_metrics=json.loads(str(data["final_metrics_json"])),
        optimizer_state=optimizer_state,
        run_config=run_config,
    )
