"""Scratch experiment: image-content sweep for the acceptance orderings."""
import sys
import time

import numpy as np

from vqad import datasets, metrics
from vqad.baselines import kmeans_vq
from vqad.field import FieldModel, decode_point
from vqad.grid import GridConfig
from vqad.train import TrainConfig, train


def img_a(size, seed=7):
    """Aligned periodic texture modulated by a few flat color shapes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    tex = 0.55 + 0.35 * np.sin(8 * np.pi * xx) * np.sin(8 * np.pi * yy)
    img = np.stack([0.8 * tex, 0.9 * tex, tex], -1)
    palette = np.array([[0.95, 0.3, 0.25], [0.25, 0.8, 0.35], [0.25, 0.4, 0.95],
                        [0.95, 0.85, 0.3], [0.7, 0.3, 0.9], [0.9, 0.55, 0.2]])
    for i in range(7):
        cx, cy = rng.uniform(-0.7, 0.7, 2)
        r = rng.uniform(0.15, 0.35)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        img[mask] = palette[i % len(palette)] * tex[mask][:, None]
    return np.clip(img, 0, 1)


def img_b(size, seed=7):
    """Smooth color field plus aligned texture, fewer hard edges."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    tex = 0.3 * np.sin(8 * np.pi * xx) + 0.3 * np.sin(8 * np.pi * yy)
    img = np.zeros((size, size, 3))
    img[..., 0] = 0.55 + 0.3 * np.sin(1.5 * np.pi * xx)
    img[..., 1] = 0.55 + 0.3 * np.cos(1.2 * np.pi * yy)
    img[..., 2] = 0.5 + 0.2 * xx * yy
    img += tex[..., None] * 0.4
    palette = np.array([[0.95, 0.3, 0.25], [0.25, 0.8, 0.35], [0.25, 0.4, 0.95]])
    for i in range(4):
        cx, cy = rng.uniform(-0.6, 0.6, 2)
        r = rng.uniform(0.2, 0.35)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        img[mask] = palette[i % 3] + tex[mask][:, None] * 0.3
    return np.clip(img, 0, 1)


def img_c(size, seed=7):
    return datasets.synthetic_image(size, seed)  # current diverse content


GENS = {"a": img_a, "b": img_b, "c": img_c}


def sweep(gen_name, size, base_res, epochs, seed=0):
    img = GENS[gen_name](size)
    ds = datasets.make_image_dataset(img)
    gc = GridConfig(levels=4, base_resolution=base_res, feature_width=8, dim=2)

    def psnr_of(model):
        rec = decode_point(model, ds.coords).reshape(img.shape)
        return metrics.psnr(rec, img)

    def run(mode, b):
        cfg = TrainConfig(mode=mode, epochs=epochs, batch_size=4096, bitwidth=b, seed=seed)
        t0 = time.time()
        tr = train(cfg, ds, gc)
        return tr, psnr_of(tr.model), time.time() - t0

    out = {}
    tr_u, out["uncomp"], dt = run("uncompressed", 4)
    for b in (4, 6):
        books, idxs = [], []
        for rows in tr_u.model.pyramid.levels:
            r = kmeans_vq(rows.astype(np.float32), b, seed=0)
            books.append(r.codebook.astype(np.float32))
            idxs.append(r.assignments)
        baked = tr_u.model.pyramid.copy_structure()
        baked.set_storage("baked", idxs)
        km = FieldModel(grid=gc, pyramid=baked, codebooks=books,
                        decoder=tr_u.model.decoder, background=tr_u.model.background)
        out[f"kmvq{b}"] = psnr_of(km)
    _, out["vqad4"], _ = run("vqad", 4)
    _, out["vqad6"], _ = run("vqad", 6)
    _, out["rand8"], _ = run("random-index", 8)

    print(f"--- gen={gen_name} size={size} base={base_res} epochs={epochs}")
    for k, v in out.items():
        print(f"  {k:8s} {v:6.2f} dB")
    c3a = out["vqad4"] - out["kmvq4"]
    c3b = out["uncomp"] - out["vqad6"]
    c4 = out["vqad4"] - out["rand8"]
    print(f"  crit3: vqad4-kmvq4 = {c3a:+.2f} (need >= +1.0) | uncomp-vqad6 = {c3b:.2f} (need <= 3.0)")
    print(f"  crit4: vqad4-rand8 = {c4:+.2f} (need >= 0)")
    sys.stdout.flush()
    return out


def img_d(size, seed=7):
    """Cartoon content: smooth two-tone background, flat shapes, crisp edges."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    img = np.zeros((size, size, 3))
    img[..., 0] = 0.35 + 0.25 * xx
    img[..., 1] = 0.45 + 0.2 * yy
    img[..., 2] = 0.6 - 0.2 * xx
    palette = np.array([[0.92, 0.28, 0.22], [0.22, 0.75, 0.34], [0.23, 0.38, 0.9],
                        [0.95, 0.82, 0.25], [0.65, 0.28, 0.85], [0.12, 0.12, 0.14],
                        [0.9, 0.9, 0.92]])
    for i in range(9):
        kind = rng.integers(2)
        cx, cy = rng.uniform(-0.72, 0.72, 2)
        col = palette[i % len(palette)]
        if kind == 0:
            r = rng.uniform(0.1, 0.3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        else:
            w, h = rng.uniform(0.08, 0.3, 2)
            mask = (np.abs(xx - cx) < w) & (np.abs(yy - cy) < h)
        img[mask] = col
    return np.clip(img, 0, 1)

GENS["d"] = img_d



def img_e(size, seed=7):
    """Smooth ramps + flat shapes + grid-aligned high-frequency texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    img = np.zeros((size, size, 3))
    img[..., 0] = 0.45 + 0.25 * xx
    img[..., 1] = 0.5 + 0.2 * yy
    img[..., 2] = 0.55 - 0.2 * xx * yy
    palette = np.array([[0.92, 0.28, 0.22], [0.22, 0.75, 0.34], [0.23, 0.38, 0.9],
                        [0.95, 0.82, 0.25], [0.65, 0.28, 0.85], [0.9, 0.9, 0.92]])
    for i in range(7):
        kind = rng.integers(2)
        cx, cy = rng.uniform(-0.7, 0.7, 2)
        col = palette[i % len(palette)]
        if kind == 0:
            r = rng.uniform(0.12, 0.3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        else:
            w, h = rng.uniform(0.1, 0.28, 2)
            mask = (np.abs(xx - cx) < w) & (np.abs(yy - cy) < h)
        img[mask] = col
    tex = 0.18 * np.sin(16 * np.pi * xx) * np.sin(16 * np.pi * yy)
    img += tex[..., None]
    return np.clip(img, 0.02, 0.98)

GENS["e"] = img_e


def img_f(size, seed=7):
    """Soft-edged flat shapes over ramps, plus grid-aligned texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    img = np.zeros((size, size, 3))
    img[..., 0] = 0.45 + 0.25 * xx
    img[..., 1] = 0.5 + 0.2 * yy
    img[..., 2] = 0.55 - 0.2 * xx * yy
    palette = np.array([[0.92, 0.28, 0.22], [0.22, 0.75, 0.34], [0.23, 0.38, 0.9],
                        [0.95, 0.82, 0.25], [0.65, 0.28, 0.85], [0.9, 0.9, 0.92]])
    soft = 0.045  # edge half-width in coords (~3 px at 128)
    def sig(t):
        return 1.0 / (1.0 + np.exp(-t))
    for i in range(6):
        kind = rng.integers(2)
        cx, cy = rng.uniform(-0.65, 0.65, 2)
        col = palette[i % len(palette)]
        if kind == 0:
            r = rng.uniform(0.15, 0.32)
            dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            m = sig((r - dist) / soft)
        else:
            w, h = rng.uniform(0.12, 0.3, 2)
            m = sig((w - np.abs(xx - cx)) / soft) * sig((h - np.abs(yy - cy)) / soft)
        img = img * (1 - m[..., None]) + col * m[..., None]
    tex = 0.22 * np.sin(16 * np.pi * xx) * np.sin(16 * np.pi * yy)
    img += tex[..., None]
    return np.clip(img, 0.02, 0.98)

GENS["f"] = img_f


def img_g(size, seed=7):
    """img_f plus a per-pixel checker no grid configuration can represent."""
    img = img_f(size, seed)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    checker = (((ii + jj) % 2) * 2.0 - 1.0) * 0.05
    return np.clip(img + checker[..., None], 0.01, 0.99)

GENS["g"] = img_g

if __name__ == "__main__":
    gen = sys.argv[1] if len(sys.argv) > 1 else "a"
    size = int(sys.argv[2]) if len(sys.argv) > 2 else 64
    base = int(sys.argv[3]) if len(sys.argv) > 3 else 8
    epochs = int(sys.argv[4]) if len(sys.argv) > 4 else 100
    sweep(gen, size, base, epochs)
