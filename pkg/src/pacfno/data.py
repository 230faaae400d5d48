"""Datasets: procedural shapes, IDX/PPM I/O, multi-resolution views, corruptions."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .spectral import resize_matrix

__all__ = [
    "ShapeStyle",
    "DataError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "HeaderError",
    "LabeledImageSet",
    "MultiResDataset",
    "SHAPE_NAMES",
    "CORRUPTIONS",
    "SEVERITY",
    "gen_shapes",
    "load_idx",
    "write_idx",
    "make_multires",
    "resample_images",
    "corrupt",
    "corrupt_set",
    "plasma_fractal",
    "write_ppm",
    "read_ppm",
    "export_ppm_tree",
]


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class HeaderError(DataError):
    pass


@dataclass
class LabeledImageSet:
    """Images ``N x 3 x H x W`` in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    provenance: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DataError(f"images must be N x 3 x H x W, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.images.shape[2:])

    def subset(self, idx, split: str | None = None) -> "LabeledImageSet":
        return replace(self, images=self.images[idx], labels=self.labels[idx], split=split or self.split)


@dataclass
class MultiResDataset:
    """One labelled set materialised at several resolutions, index-aligned."""

    sets: dict[int, LabeledImageSet] = field(default_factory=dict)
    target: int = 0

    @property
    def resolutions(self) -> list[int]:
        return sorted(self.sets)

    @property
    def low_resolutions(self) -> list[int]:
        return [r for r in self.resolutions if r != self.target]

    def __getitem__(self, res: int) -> LabeledImageSet:
        return self.sets[res]


# ---------------------------------------------------------------- synthetic shapes

SHAPE_NAMES = ("circle", "square", "triangle", "cross", "ring", "bar", "diamond", "dot-grid")


def _box(px, py, hx, hy):
    dx = np.abs(px) - hx
    dy = np.abs(py) - hy
    outside = np.hypot(np.maximum(dx, 0), np.maximum(dy, 0))
    return outside + np.minimum(np.maximum(dx, dy), 0)


def _triangle(px, py, r):
    # equilateral, half side r, centroid at origin, apex up (+y)
    k = np.sqrt(3.0)
    px = np.abs(px) - r
    py = py + r / k
    flip = px + k * py > 0
    px, py = np.where(flip, (px - k * py) / 2, px), np.where(flip, (-k * px - py) / 2, py)
    px = px - np.clip(px, -2 * r, 0)
    return -np.hypot(px, py) * np.sign(py)


def _shape_sdf(kind: str, px, py, r):
    if kind == "circle":
        return np.hypot(px, py) - r
    if kind == "square":
        return _box(px, py, 0.8 * r, 0.8 * r)
    if kind == "triangle":
        return _triangle(px, -py, 0.95 * r)
    if kind == "cross":
        return np.minimum(_box(px, py, r, 0.25 * r), _box(px, py, 0.25 * r, r))
    if kind == "ring":
        return np.abs(np.hypot(px, py) - 0.75 * r) - 0.2 * r
    if kind == "bar":
        return _box(px, py, r, 0.3 * r)
    if kind == "diamond":
        return (np.abs(px) + np.abs(py) - r) / np.sqrt(2.0)
    if kind == "dot-grid":
        d = np.full(px.shape, np.inf)
        for gx in (-0.65, 0.0, 0.65):
            for gy in (-0.65, 0.0, 0.65):
                d = np.minimum(d, np.hypot(px - gx * r, py - gy * r) - 0.2 * r)
        return d
    raise DataError(f"unknown shape {kind!r}")


@dataclass(frozen=True)
class ShapeStyle:
    """Sampling ranges for procedural shapes (coordinates span [-1, 1])."""

    centre: float = 0.3
    radius: tuple[float, float] = (0.3, 0.6)
    rotation: float = np.pi / 12
    fg: tuple[float, float] = (0.5, 1.0)
    bg: tuple[float, float] = (0.0, 0.4)
    noise: float = 0.1


def _render(kind: str, size: int, rng: np.random.Generator, style: ShapeStyle = ShapeStyle()) -> np.ndarray:
    pixel = 2.0 / size
    coords = (np.arange(size) + 0.5) * pixel - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cx, cy = rng.uniform(-style.centre, style.centre, size=2)
    r = rng.uniform(*style.radius)
    theta = rng.uniform(-style.rotation, style.rotation)
    ct, st = np.cos(theta), np.sin(theta)
    px = ct * (xx - cx) + st * (yy - cy)
    py = -st * (xx - cx) + ct * (yy - cy)
    coverage = np.clip(0.5 - _shape_sdf(kind, px, py, r) / pixel, 0.0, 1.0)
    fg = rng.uniform(*style.fg, size=3)
    bg = rng.uniform(*style.bg, size=3)
    img = bg[:, None, None] + (fg - bg)[:, None, None] * coverage[None]
    img = img + rng.normal(0.0, style.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_shapes(
    seed: int, count: int, num_classes: int, size: int, split: str = "train", style: ShapeStyle | None = None
) -> LabeledImageSet:
    """Balanced set of anti-aliased shapes; image ``i`` draws from RNG stream ``(seed, i)``."""
    if not 1 <= num_classes <= len(SHAPE_NAMES):
        raise DataError(f"at most {len(SHAPE_NAMES)} shape classes, got {num_classes}")
    if size < 16:
        raise DataError(f"shape images need size >= 16, got {size}")
    style = style or ShapeStyle()
    labels = np.arange(count) % num_classes
    labels = np.random.default_rng([seed, 0x5EED]).permutation(labels)
    images = np.empty((count, 3, size, size))
    for i, y in enumerate(labels):
        images[i] = _render(SHAPE_NAMES[y], size, np.random.default_rng([seed, i]), style)
    return LabeledImageSet(images, labels, num_classes, split=split, provenance=f"shapes(seed={seed})")


# ---------------------------------------------------------------- IDX


_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(dims))
    if len(raw) - header < need:
        raise TruncatedFileError(f"{path}: payload has {len(raw) - header} bytes, header promises {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None, split: str = "train") -> LabeledImageSet:
    """Read an IDX image/label pair (MNIST layout); grey is replicated to 3 channels."""
    pixels = _read_idx(images_path, _IDX_IMAGES, 3)
    labels = _read_idx(labels_path, _IDX_LABELS, 1).astype(np.int64)
    if len(pixels) != len(labels):
        raise CountMismatchError(f"{len(pixels)} images but {len(labels)} labels")
    grey = pixels.astype(np.float64) / 255.0
    images = np.repeat(grey[:, None], 3, axis=1)
    k = num_classes if num_classes is not None else int(labels.max()) + 1 if len(labels) else 1
    return LabeledImageSet(images, labels, k, split=split, provenance=f"idx:{images_path}")


def write_idx(images_path, labels_path, pixels: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 ``N x H x W`` pixels and labels as an IDX pair."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I3I", _IDX_IMAGES, *pixels.shape))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _IDX_LABELS, len(labels)))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------- multi-resolution


def resample_images(images: np.ndarray, h: int, w: int, kind: str = "bilinear") -> np.ndarray:
    src_h, src_w = images.shape[-2:]
    if (src_h, src_w) == (h, w):
        return images
    mh = resize_matrix(src_h, h, kind)
    mw = resize_matrix(src_w, w, kind)
    return np.einsum("ph,...hw,qw->...pq", mh, images, mw, optimize=True)


def make_multires(src: LabeledImageSet, resolutions) -> MultiResDataset:
    """Bilinear downscales of ``src``; the source resolution is kept as the target."""
    h, w = src.resolution
    if h != w:
        raise DataError("multi-resolution sets assume square images")
    out = MultiResDataset(target=h)
    out.sets[h] = src
    for res in resolutions:
        if res > h:
            raise DataError(f"cannot derive {res}x{res} from a {h}x{h} source (no upscaling)")
        if res == h:
            continue
        out.sets[res] = replace(src, images=np.clip(resample_images(src.images, res, res), 0.0, 1.0))
    return out


# ---------------------------------------------------------------- corruptions

CORRUPTIONS = ("gaussian_noise", "brightness", "contrast", "pixelate", "fog")

# index 0 is the identity limit, kept for testing
SEVERITY = {
    "gaussian_noise": (0.0, 0.04, 0.06, 0.08, 0.09, 0.10),
    "brightness": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
    "contrast": (1.0, 0.75, 0.5, 0.4, 0.3, 0.15),
    "pixelate": (1.0, 1.25, 1.5, 2.0, 3.0, 4.0),
    "fog": (0.0, 0.15, 0.25, 0.35, 0.45, 0.5),
}


def plasma_fractal(size: int, rng: np.random.Generator, decay: float = 3.0) -> np.ndarray:
    """Diamond-square height map with wrap-around edges, normalised to [0, 1]."""
    mapsize = 1 << max(1, int(np.ceil(np.log2(max(size, 2)))))
    grid = np.zeros((mapsize, mapsize))
    step = mapsize
    wibble = 100.0

    def jitter(a):
        return a / 4 + wibble * rng.uniform(-wibble, wibble, a.shape)

    while step >= 2:
        half = step // 2
        corners = grid[0:mapsize:step, 0:mapsize:step]
        acc = corners + np.roll(corners, -1, axis=0)
        acc = acc + np.roll(acc, -1, axis=1)
        grid[half:mapsize:step, half:mapsize:step] = jitter(acc)
        centres = grid[half:mapsize:step, half:mapsize:step]
        corners = grid[0:mapsize:step, 0:mapsize:step]
        left = centres + np.roll(centres, 1, axis=0) + corners + np.roll(corners, -1, axis=1)
        grid[0:mapsize:step, half:mapsize:step] = jitter(left)
        top = centres + np.roll(centres, 1, axis=1) + corners + np.roll(corners, -1, axis=0)
        grid[half:mapsize:step, 0:mapsize:step] = jitter(top)
        step = half
        wibble /= decay
    grid = grid[:size, :size]
    grid = grid - grid.min()
    peak = grid.max()
    return grid / peak if peak > 0 else grid


def corrupt(x, kind: str, severity: int, seed: int = 0):
    """Apply one corruption at ``severity`` 1..5 (0 is the identity limit); output clamped to [0, 1]."""
    if kind not in SEVERITY:
        raise ValueError(f"unknown corruption {kind!r}; expected one of {CORRUPTIONS}")
    if not 0 <= severity <= 5:
        raise ValueError(f"severity must be in 1..5, got {severity}")
    as_tensor = isinstance(x, Tensor)
    img = np.asarray(x.data if as_tensor else x, dtype=np.float64)
    level = SEVERITY[kind][severity]
    rng = np.random.default_rng(seed)
    h, w = img.shape[-2:]
    if severity == 0:
        out = img.copy()
    elif kind == "gaussian_noise":
        out = img + rng.normal(0.0, level, img.shape)
    elif kind == "brightness":
        out = img + level
    elif kind == "contrast":
        mu = img.mean(axis=(-2, -1), keepdims=True)
        out = (img - mu) * level + mu
    elif kind == "pixelate":
        small_h, small_w = max(1, int(h / level)), max(1, int(w / level))
        small = resample_images(img, small_h, small_w, "bilinear")
        out = resample_images(small, h, w, "nearest")
    else:
        fog = plasma_fractal(max(h, w), rng)[:h, :w]
        out = img * (1.0 - level) + level * fog
    out = np.clip(out, 0.0, 1.0)
    return Tensor(out) if as_tensor else out


def corrupt_set(ds: LabeledImageSet, kind: str, severity: int, seed: int = 0) -> LabeledImageSet:
    """Corrupt every image, image ``i`` seeded from ``(seed, i)``."""
    images = np.stack(
        [corrupt(img, kind, severity, seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
         for i, img in enumerate(ds.images)]
    )
    return replace(ds, images=images, provenance=f"{ds.provenance}+{kind}@{severity}")


# ---------------------------------------------------------------- PPM


def write_ppm(x, path) -> None:
    """Binary P6, 8-bit; values are clamped to [0, 1] and rounded."""
    img = np.asarray(x.data if isinstance(x, Tensor) else x)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"write_ppm expects 3 x H x W, got {img.shape}")
    _, h, w = img.shape
    pixels = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())


def _ppm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise HeaderError("PPM header ended early")
        tok = raw[start:pos]
        if not tokens:
            if tok != b"P6":
                raise HeaderError(f"not a binary PPM (magic {tok!r})")
            tokens.append(6)
        else:
            try:
                tokens.append(int(tok))
            except ValueError as exc:
                raise HeaderError(f"bad PPM header field {tok!r}") from exc
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (_, w, h, maxval), offset = _ppm_tokens(raw, 4)
    if maxval != 255 or w < 1 or h < 1:
        raise HeaderError(f"unsupported PPM geometry {w}x{h} maxval {maxval}")
    need = 3 * w * h
    if len(raw) - offset < need:
        raise TruncatedFileError(f"{path}: {len(raw) - offset} payload bytes, need {need}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def export_ppm_tree(root, multires: MultiResDataset, split: str) -> int:
    """Write ``<root>/<split>/<resolution>/<index>_<label>.ppm``; returns files written."""
    written = 0
    for res in multires.resolutions:
        ds = multires[res]
        folder = Path(root) / split / str(res)
        os.makedirs(folder, exist_ok=True)
        for i, (img, y) in enumerate(zip(ds.images, ds.labels)):
            write_ppm(img, folder / f"{i}_{int(y)}.ppm")
            written += 1
    return written
