"""Finite-difference oracle suite.

Each entry builds a small randomized instance of one differentiable
path (a single tape primitive, the quantized lookup, interpolation, a
point decode, or a full ray render) and compares the tape gradients
against central finite differences in float64. The suite backs both the
``gradcheck`` CLI subcommand and the acceptance tests.

The straight-through lookup needs care: its forward value is locally
constant in the logits, so differencing the training loss itself would
report zero. Its entries therefore difference the softmax-mixture
function the backward pass is defined to follow (with a linear readout,
where the two gradients agree exactly), and the end-to-end quantized
checks run at saturated logits where the mixture and the hard lookup
coincide to rounding.
"""

from __future__ import annotations

import numpy as np

from . import vq
from .autodiff import backward, finite_diff, grad_check
from .datasets import IdentityDataset, VolumeDataset
from .grid import GridConfig
from .train import TrainConfig, _Trainer

__all__ = ["run_gradcheck_suite", "PRIMITIVE_TOL", "COMPOSITE_TOL"]

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4


def _readout(tape, node, cotangent):
    """Contract against a fixed cotangent so the loss is scalar."""
    return tape.mean_all(tape.mul(node, tape.constant(cotangent)))


# ---------------------------------------------------------- primitives


def _check_binary(op_name):
    def make(rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        c = rng.normal(size=(3, 4))

        def build(t, p):
            return _readout(t, getattr(t, op_name)(p["a"], p["b"]), c)

        return build, {"a": a, "b": b}

    return make


def _check_unary(op_name, sampler):
    def make(rng):
        x = sampler(rng)
        c = rng.normal(size=x.shape)

        def build(t, p):
            return _readout(t, getattr(t, op_name)(p["x"]), c)

        return build, {"x": x}

    return make


def _check_scale(rng):
    x = rng.normal(size=(3, 4))
    factor = float(rng.uniform(0.5, 2.0))
    c = rng.normal(size=x.shape)

    def build(t, p):
        return _readout(t, t.scale(p["x"], factor), c)

    return build, {"x": x}


def _check_scale_rows(rng):
    x = rng.normal(size=(4, 3))
    s = rng.normal(size=(4,))
    c = rng.normal(size=x.shape)

    def build(t, p):
        return _readout(t, t.scale_rows(p["x"], p["s"]), c)

    return build, {"x": x, "s": s}


def _check_affine(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=(5,))
    c = rng.normal(size=(3, 5))

    def build(t, p):
        return _readout(t, t.affine(p["x"], p["w"], p["b"]), c)

    return build, {"x": x, "w": w, "b": b}


def _check_affine_blocks(rng):
    x = rng.normal(size=(3, 2))
    const = rng.normal(size=(3, 3))
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=(4,))
    c = rng.normal(size=(3, 4))

    def build(t, p):
        return _readout(t, t.affine([p["x"], const], p["w"], p["b"]), c)

    return build, {"x": x, "w": w, "b": b}


def _check_gather(rng):
    x = rng.normal(size=(6, 3))
    idx = rng.integers(0, 6, size=8)
    c = rng.normal(size=(8, 3))

    def build(t, p):
        return _readout(t, t.gather_rows(p["x"], idx), c)

    return build, {"x": x}


def _check_slice(rng):
    x = rng.normal(size=(3, 6))
    c = rng.normal(size=(3, 3))

    def build(t, p):
        return _readout(t, t.slice_cols(p["x"], 1, 4), c)

    return build, {"x": x}


def _check_reshape(rng):
    x = rng.normal(size=(4, 6))
    c = rng.normal(size=(2, 2, 6))

    def build(t, p):
        return _readout(t, t.reshape(p["x"], (2, 2, 6)), c)

    return build, {"x": x}


def _check_weighted_sum(rng):
    w = rng.normal(size=(3, 4))
    x = rng.normal(size=(3, 4, 2))
    c = rng.normal(size=(3, 2))

    def build(t, p):
        return _readout(t, t.weighted_sum(p["w"], p["x"]), c)

    return build, {"w": w, "x": x}


def _check_sum_axis(rng):
    x = rng.normal(size=(3, 5))
    c = rng.normal(size=(3,))

    def build(t, p):
        return _readout(t, t.sum_axis(p["x"], axis=1), c)

    return build, {"x": x}


def _check_cumsum(rng):
    x = rng.normal(size=(3, 5))
    c = rng.normal(size=(3, 5))

    def build(t, p):
        return _readout(t, t.cumsum_exclusive(p["x"], axis=1), c)

    return build, {"x": x}


def _check_sum_all(rng):
    x = rng.normal(size=(3, 4))

    def build(t, p):
        return t.sum_all(t.mul(p["x"], p["x"]))

    return build, {"x": x}


def _check_mean_all(rng):
    x = rng.normal(size=(3, 4))

    def build(t, p):
        return t.mean_all(t.mul(p["x"], p["x"]))

    return build, {"x": x}


def _away_from_kink(rng, margin=0.2, shape=(3, 4)):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


# ------------------------------------------------- straight-through


def _ste_builds(rng):
    bitwidth, k, n = 3, 2, 4
    logits = rng.normal(size=(n, 1 << bitwidth))
    codebook = rng.normal(size=(1 << bitwidth, k))
    c = rng.normal(size=(n, k))

    def linear_readout(t, node):
        return t.mean_all(t.mul(node, t.constant(c)))

    def build_ste(t, p):
        return linear_readout(t, vq.ste_lookup(t, p["logits"], p["codebook"]))

    def build_soft(t, p):
        weights = t.softmax_rows(p["logits"])
        return linear_readout(t, t.affine(weights, p["codebook"]))

    return build_ste, build_soft, {"logits": logits, "codebook": codebook}


def _check_ste_soft_path(rng):
    _, build_soft, point = _ste_builds(rng)
    return build_soft, point


def _cross_check(build_analytic, build_fd, point, eps=1e-5):
    """Backward grads of one build vs finite differences of another."""
    from .autodiff import Tape

    tape = Tape()
    params = {k: tape.param(k, v) for k, v in point.items()}
    loss = build_analytic(tape, params)
    analytic = backward(tape, loss)
    fd = finite_diff(build_fd, point, eps)
    err = 0.0
    for name in point:
        denom = np.maximum(
            np.maximum(np.abs(analytic[name]), np.abs(fd[name])), 1e-8
        )
        err = max(err, float((np.abs(analytic[name] - fd[name]) / denom).max()))
    return err


# -------------------------------------------------------- composites


def _tiny_identity_trainer(rng, mode):
    coords = rng.uniform(-0.95, 0.95, size=(8, 2))
    targets = rng.uniform(0.2, 0.8, size=(8, 3))
    dataset = IdentityDataset(coords=coords, targets=targets, head="image")
    config = TrainConfig(
        mode=mode, epochs=1, batch_size=8, bitwidth=2, seed=int(rng.integers(1 << 16)),
        hidden_width=8, dtype="float64",
    )
    grid = GridConfig(levels=2, base_resolution=2, feature_width=2, dim=2)
    trainer = _Trainer(config, dataset, grid, None)
    _de_kink(trainer, rng)
    return trainer


def _tiny_volume_trainer(rng, mode):
    dirs = rng.normal(size=(2, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = -2.2 * dirs + rng.normal(scale=0.05, size=(2, 3))
    targets = rng.uniform(0.2, 0.8, size=(2, 3))
    dataset = VolumeDataset(
        origins=origins, directions=dirs, targets=targets,
        background=np.array([0.1, 0.2, 0.3]),
    )
    config = TrainConfig(
        mode=mode, epochs=1, batch_size=2, bitwidth=2, seed=int(rng.integers(1 << 16)),
        hidden_width=8, samples_per_cell=2, dtype="float64",
    )
    grid = GridConfig(levels=2, base_resolution=2, feature_width=2, dim=3)
    trainer = _Trainer(config, dataset, grid, None)
    _de_kink(trainer, rng)
    return trainer


def _de_kink(trainer, rng):
    # Push ReLU pre-activations away from zero so the differences are
    # taken on a smooth patch of the loss.
    trainer.params["b1"] += 0.5 + 0.1 * rng.random(trainer.params["b1"].shape)
    if trainer.head == "radiance":
        trainer.params["b2"][0] += 0.8
    if trainer.config.mode == "vqad":
        for lv in range(trainer.grid_config.levels):
            logits = trainer.params[f"logits{lv}"]
            winners = rng.integers(0, logits.shape[1], size=logits.shape[0])
            logits[:] = -12.0
            logits[np.arange(logits.shape[0]), winners] = 12.0


def _trainer_check(trainer, loss_kind, fd_params, eps=1e-4):
    # eps is chosen so FD roundoff stays below the 1e-8 relative-error
    # floor for coordinates whose true gradient is tiny.
    batch = np.arange(trainer.n_items)
    lod = trainer.grid_config.levels - 1

    held = {
        name: value for name, value in trainer.params.items() if name not in fd_params
    }

    def build(t, p):
        nodes = dict(p)
        for name, value in held.items():
            nodes[name] = t.constant(value)
        if loss_kind == "volume":
            return trainer._volume_loss(t, nodes, batch, lod)
        return trainer._identity_loss(t, nodes, batch, lod)

    point = {name: trainer.params[name].copy() for name in fd_params}
    return grad_check(build, point, eps=eps).max_rel_err


def _check_interpolate(rng):
    trainer = _tiny_identity_trainer(rng, "uncompressed")
    c = rng.normal(size=(trainer.n_items, trainer.grid_config.feature_width))
    batch = np.arange(trainer.n_items)

    def build(t, p):
        plans = [(rows[batch], w[batch]) for rows, w in trainer.plans]
        nodes = dict(p)
        feat = trainer._interp_node(t, nodes, plans, trainer.grid_config.levels - 1,
                                    trainer.n_items)
        return t.mean_all(t.mul(feat, t.constant(c)))

    point = {
        name: trainer.params[name].copy()
        for name in trainer.params
        if name.startswith("features")
    }
    return grad_check(build, point).max_rel_err


def _check_decode_point(rng):
    trainer = _tiny_identity_trainer(rng, "uncompressed")
    return _trainer_check(trainer, "identity", list(trainer.params))


def _check_decode_point_vq(rng):
    trainer = _tiny_identity_trainer(rng, "vqad")
    fd_params = [n for n in trainer.params if not n.startswith("logits")]
    return _trainer_check(trainer, "identity", fd_params)


def _check_render(rng):
    trainer = _tiny_volume_trainer(rng, "uncompressed")
    return _trainer_check(trainer, "volume", list(trainer.params))


def _check_render_vq(rng):
    trainer = _tiny_volume_trainer(rng, "vqad")
    fd_params = [n for n in trainer.params if not n.startswith("logits")]
    return _trainer_check(trainer, "volume", fd_params)


# -------------------------------------------------------------- suite


_PRIMITIVES = [
    ("add", _check_binary("add")),
    ("sub", _check_binary("sub")),
    ("mul", _check_binary("mul")),
    ("scale", _check_scale),
    ("scale_rows", _check_scale_rows),
    ("affine", _check_affine),
    ("affine_blocks", _check_affine_blocks),
    ("relu", _check_unary("relu", _away_from_kink)),
    ("sigmoid", _check_unary("sigmoid", lambda r: r.normal(size=(3, 4)))),
    ("exp", _check_unary("exp", lambda r: r.normal(size=(3, 4)))),
    ("softmax_rows", _check_unary("softmax_rows", lambda r: r.normal(size=(3, 5)))),
    ("gather_rows", _check_gather),
    ("slice_cols", _check_slice),
    ("reshape", _check_reshape),
    ("weighted_sum", _check_weighted_sum),
    ("sum_axis", _check_sum_axis),
    ("cumsum_exclusive", _check_cumsum),
    ("sum_all", _check_sum_all),
    ("mean_all", _check_mean_all),
]

_COMPOSITES = [
    ("interpolate", _check_interpolate),
    ("decode_point", _check_decode_point),
    ("decode_point_vq", _check_decode_point_vq),
    ("render_ray", _check_render),
    ("render_ray_vq", _check_render_vq),
]


def run_gradcheck_suite(n_seeds: int = 20):
    """Run every oracle across seeds; returns (name, max rel err, tol) rows."""
    results = []
    for name, make in _PRIMITIVES:
        worst = 0.0
        for seed in range(n_seeds):
            rng = np.random.default_rng(1000 + seed)
            build, point = make(rng)
            worst = max(worst, grad_check(build, point).max_rel_err)
        results.append((name, worst, PRIMITIVE_TOL))

    worst_soft, worst_cross = 0.0, 0.0
    for seed in range(n_seeds):
        rng = np.random.default_rng(2000 + seed)
        build_ste, build_soft, point = _ste_builds(rng)
        worst_soft = max(worst_soft, grad_check(build_soft, point).max_rel_err)
        worst_cross = max(worst_cross, _cross_check(build_ste, build_soft, point))
    results.append(("ste_soft_path", worst_soft, PRIMITIVE_TOL))
    results.append(("ste_vs_soft_fd", worst_cross, PRIMITIVE_TOL))

    for name, check in _COMPOSITES:
        worst = 0.0
        for seed in range(n_seeds):
            rng = np.random.default_rng(3000 + seed)
            worst = max(worst, check(rng))
        results.append((name, worst, COMPOSITE_TOL))
    return results
