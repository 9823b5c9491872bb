"""Dataset ingestion, pixel preprocessing, occlusion masks, PNG grids and
flow-model files."""

from __future__ import annotations

import gzip
import hashlib
import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorruptModelError, FormatError, InvalidArgument, UnsupportedVersionError
from .projections import ImageShape

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_BELOW_ONE = np.nextafter(1.0, 0.0)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OcclusionSplit:
    """Partition of flat pixel indices into generated (X) and observed (Y) parts."""

    x_index: np.ndarray
    y_index: np.ndarray
    shape: ImageShape

    def split(self, images):
        images = np.asarray(images)
        return images[..., self.x_index], images[..., self.y_index]

    def recombine(self, x_part, y_part):
        x_part = np.asarray(x_part)
        out = np.empty(x_part.shape[:-1] + (self.shape.dim,),
                       dtype=np.result_type(x_part, y_part))
        out[..., self.x_index] = x_part
        out[..., self.y_index] = y_part
        return out


@dataclass
class DatasetView:
    x: np.ndarray
    y: np.ndarray
    shape: ImageShape | None = None
    raw_quantized: np.ndarray | None = None
    digest: bytes = b""
    labels: np.ndarray | None = None
    occlusion: OcclusionSplit | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        n = self.x.shape[0]
        if n < 1:
            raise InvalidArgument("dataset must contain at least one sample")
        self.y = np.zeros((n, 0)) if self.y is None else np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.y.shape[0] != n:
            raise InvalidArgument(f"{n} samples but {self.y.shape[0]} label rows")
        if not np.all(np.isfinite(self.x)):
            raise InvalidArgument("dataset contains non-finite values")
        if not self.digest:
            h = hashlib.sha256(self.x.tobytes())
            h.update(self.y.tobytes())
            self.digest = h.digest()

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def l(self) -> int:
        return self.y.shape[1]

    @property
    def num_classes(self) -> int:
        return self.l if self.labels is not None else 0

    def fresh_xy(self, rng=None):
        """X and Y for one simulation step, re-dequantized when raw pixels exist."""
        if rng is None or self.raw_quantized is None:
            return self.x, self.y
        pixels = dequantize_rescale(self.raw_quantized, rng)
        if self.occlusion is not None:
            return self.occlusion.split(pixels)
        return pixels, self.y

    def with_occlusion(self, spec: "OcclusionSpec") -> "DatasetView":
        """Inpainting view: X = occluded pixels, Y = observed pixels."""
        if self.shape is None or self.shape.dim != self.d:
            raise InvalidArgument("occlusion needs an image dataset")
        split = occlusion_split(spec)
        x, y = split.split(self.x)
        return replace(self, x=x, y=y, labels=None, occlusion=split)

    def subset(self, index) -> "DatasetView":
        index = np.asarray(index)
        raw = None if self.raw_quantized is None else self.raw_quantized[index]
        labels = None if self.labels is None else self.labels[index]
        h = hashlib.sha256(self.digest)
        h.update(index.astype(np.int64).tobytes())
        return replace(self, x=self.x[index], y=self.y[index], raw_quantized=raw,
                       labels=labels, digest=h.digest())


def one_hot(labels, num_classes=None):
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _open(path):
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_idx(path) -> np.ndarray:
    data = _open(path)
    if len(data) < 4:
        raise FormatError(f"{path}: too short for an IDX header", offset=0)
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code != 0x08:
        raise FormatError(f"{path}: bad IDX magic 0x{data[:4].hex()}", offset=0)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX dimensions", offset=4)
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims)) if dims else 0
    if len(data) - header != expected:
        raise FormatError(f"{path}: payload is {len(data) - header} bytes, dims {dims} "
                          f"need {expected}", offset=header)
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    head = struct.pack(">HBB", 0, 0x08, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload = head + arr.tobytes()
    if str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    Path(path).write_bytes(payload)


def load_dataset(path, format: str = "idx", shape: ImageShape | None = None,
                 labels_path=None, flip: bool = False) -> DatasetView:
    """Load a dataset.

    ``format`` is ``"idx"`` (``path`` = images, ``labels_path`` = optional
    labels), ``"csv"`` (header row, last column an integer class) or
    ``"f32"`` (raw little-endian float32, reshaped with ``shape``).
    ``flip`` appends horizontally mirrored copies of image data.
    """
    if format == "idx":
        raw = read_idx(path)
        if raw.ndim == 3:
            raw = raw[:, None]
        if raw.ndim != 4:
            raise FormatError(f"{path}: expected images of rank 3 or 4, got {raw.ndim}")
        img_shape = ImageShape(*raw.shape[1:])
        if shape is not None and shape != img_shape:
            raise FormatError(f"{path}: images are {img_shape}, expected {shape}", offset=4)
        digest = hashlib.sha256(_open(path))
        labels = None
        if labels_path is not None:
            labels = read_idx(labels_path).astype(np.int64)
            if labels.ndim != 1:
                raise FormatError(f"{labels_path}: labels must be rank 1")
            if labels.shape[0] != raw.shape[0]:
                raise InvalidArgument(
                    f"{raw.shape[0]} images but {labels.shape[0]} labels")
            digest.update(_open(labels_path))
        if flip:
            raw = np.concatenate([raw, raw[..., ::-1]])
            labels = None if labels is None else np.concatenate([labels, labels])
            digest.update(b"flip")
        flat = raw.reshape(raw.shape[0], -1)
        y = one_hot(labels, 10 if labels.max() < 10 else None) if labels is not None else None
        return DatasetView(x=dequantize_rescale(flat), y=y, shape=img_shape,
                           raw_quantized=flat, digest=digest.digest(), labels=labels)
    if format == "csv":
        text = Path(path).read_text()
        rows = np.genfromtxt(io.StringIO(text), delimiter=",", skip_header=1)
        if rows.ndim == 1:
            rows = rows[None]
        if rows.shape[1] < 2 or not np.all(np.isfinite(rows)):
            raise FormatError(f"{path}: expected numeric columns with a class column last")
        cls = rows[:, -1]
        if np.any(cls != np.round(cls)):
            raise FormatError(f"{path}: class column must hold integers")
        classes, labels = np.unique(cls.astype(np.int64), return_inverse=True)
        return DatasetView(x=rows[:, :-1], y=one_hot(labels, classes.size), shape=shape,
                           digest=hashlib.sha256(text.encode()).digest(), labels=labels)
    if format == "f32":
        if shape is None:
            raise InvalidArgument("f32 datasets need an explicit shape")
        data = Path(path).read_bytes()
        row = shape.dim * 4
        if len(data) % row:
            raise FormatError(f"{path}: {len(data)} bytes is not a multiple of {row}",
                              offset=len(data) - len(data) % row)
        x = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(-1, shape.dim)
        if flip:
            img = x.reshape((-1,) + shape.as_tuple())
            x = np.concatenate([img, img[..., ::-1]]).reshape(-1, shape.dim)
        return DatasetView(x=x, y=None, shape=shape, digest=hashlib.sha256(data).digest())
    raise InvalidArgument(f"unknown dataset format {format!r}")


def dequantize_rescale(raw, rng=None) -> np.ndarray:
    """Map 8-bit values to [-1, 1): ``2 * (raw + u) / 256 - 1`` with ``u ~ U[0, 1)``.

    Without ``rng`` the bin midpoint ``u = 0.5`` is used.
    """
    raw = np.asarray(raw)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise InvalidArgument("quantized values must lie in 0..255")
    if rng is None:
        return 2.0 * ((raw + 0.5) / 256.0) - 1.0
    out = rng.random(raw.shape)
    out += raw
    out *= 2.0 / 256.0  # power of two: same floats as 2 * (... / 256)
    out -= 1.0
    # 255 + u rounds up to 256 for u within 2^-45 of one
    np.minimum(out, _BELOW_ONE, out=out)
    return out


# ---------------------------------------------------------------------------
# occlusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OcclusionSpec:
    mask: np.ndarray = field(repr=False)
    kind: str = "custom"

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 3:
            raise InvalidArgument("occlusion mask must be C x H x W")
        if m.all() or not m.any():
            raise InvalidArgument("mask must contain both occluded and observed pixels")
        object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> ImageShape:
        return ImageShape(*self.mask.shape)

    @classmethod
    def named(cls, kind: str, shape: ImageShape) -> "OcclusionSpec":
        c, h, w = shape.as_tuple()
        mask = np.zeros((c, h, w), dtype=bool)
        if kind == "left-half":
            mask[:, :, : w // 2] = True
        elif kind == "bottom-half":
            mask[:, h - h // 2:, :] = True
        elif kind == "center-square":
            s0, s1 = h // 4, w // 4
            mask[:, s0:h - s0, s1:w - s1] = True
        else:
            raise InvalidArgument(f"unknown occlusion kind {kind!r}")
        return cls(mask, kind)


def occlusion_split(spec: OcclusionSpec) -> OcclusionSplit:
    flat = spec.mask.ravel()
    return OcclusionSplit(np.flatnonzero(flat), np.flatnonzero(~flat), spec.shape)


def make_occlusion(image, spec: OcclusionSpec):
    """Return the observed pixels of ``image`` and the X/Y index map."""
    image = np.asarray(image)
    if image.shape[-1] != spec.shape.dim:
        raise InvalidArgument(f"image has {image.shape[-1]} pixels, mask covers {spec.shape.dim}")
    split = occlusion_split(spec)
    return image[..., split.y_index], split


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def to_pixels(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.round(255.0 * (v + 1.0) / 2.0), 0, 255).astype(np.uint8)


def tile_grid(samples, shape: ImageShape, grid) -> np.ndarray:
    rows, cols = grid
    samples = np.asarray(samples)
    if rows * cols > samples.shape[0]:
        raise InvalidArgument(f"grid {rows}x{cols} needs {rows * cols} samples, "
                              f"have {samples.shape[0]}")
    c, h, w = shape.as_tuple()
    imgs = to_pixels(samples[: rows * cols]).reshape(rows, cols, c, h, w)
    return imgs.transpose(0, 3, 1, 4, 2).reshape(rows * h, cols * w, c)


def write_image_grid(samples, shape: ImageShape, grid, path) -> None:
    """Write ``rows x cols`` samples (values in [-1, 1]) as an 8-bit PNG."""
    canvas = tile_grid(samples, shape, grid)
    mode = "L" if shape.channels == 1 else "RGB"
    if shape.channels not in (1, 3):
        raise InvalidArgument("PNG output supports 1 or 3 channels")
    img = Image.fromarray(canvas[..., 0] if mode == "L" else canvas, mode=mode)
    img.save(path, format="PNG")


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img)


def write_scatter(points, path, size: int = 256, extent=None, groups=None) -> None:
    """Rasterise 2-D points into a grayscale PNG (white points on black).

    ``groups`` (per-point integer ids) shades each group differently.
    """
    pts = np.asarray(points, dtype=np.float64)[:, :2]
    if extent is None:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = 0.05 * np.maximum(hi - lo, 1e-9)
        extent = (lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1])
    x0, x1, y0, y1 = extent
    col = np.clip(((pts[:, 0] - x0) / (x1 - x0) * (size - 1)).round().astype(int), 0, size - 1)
    row = np.clip(((y1 - pts[:, 1]) / (y1 - y0) * (size - 1)).round().astype(int), 0, size - 1)
    canvas = np.zeros((size, size), dtype=np.uint8)
    shade = np.full(len(pts), 255, dtype=np.uint8)
    if groups is not None:
        g = np.asarray(groups)
        levels = np.unique(g)
        tones = np.linspace(255, 110, max(len(levels), 1)).astype(np.uint8)
        shade = tones[np.searchsorted(levels, g)]
    canvas[row, col] = shade
    Image.fromarray(canvas, mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# flow-model files
# ---------------------------------------------------------------------------
#
# little-endian layout
#   "CSWF" | u32 version
#   u64 d, l, K, H, M | f64 xi, eta (0 = per-entry default), lambda
#   u32 text length | utf-8 text block (config, layout, schedule)
#   32-byte dataset digest
#   u64 Q (0 = full tables) | u64 target table length | u64 particle table length
#   u8 value width (4 = f32, 8 = f64)
#   K x { u64 projection seed, H x (target table, particle table) }
#   u64 checksum (blake2b-64 of everything above)

MODEL_MAGIC = b"CSWF"
MODEL_VERSION = 1
_HEAD = struct.Struct("<4sI5Q3d")
_TABLE_HEAD = struct.Struct("<3QB")


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def model_bytes(model) -> bytes:
    cfg = model.config
    k = len(model.step_seeds)
    text = model.text_block().encode()
    width = 8 if model.quantiles is None else 4
    dtype = "<f8" if width == 8 else "<f4"
    t_len = model.target_tables[0].shape[1] if k else 0
    p_len = model.particle_tables[0].shape[1] if k else 0
    buf = io.BytesIO()
    buf.write(_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, model.d, model.l, k, cfg.projections,
                         model.m, float(cfg.amplifier), float(model.step_size or 0.0),
                         float(cfg.noise)))
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    digest = model.data_digest.ljust(32, b"\0")[:32]
    buf.write(digest)
    buf.write(_TABLE_HEAD.pack(model.quantiles or 0, t_len, p_len, width))
    for step in range(k):
        buf.write(struct.pack("<Q", int(model.step_seeds[step])))
        tables = np.concatenate([model.target_tables[step], model.particle_tables[step]], axis=1)
        buf.write(np.ascontiguousarray(tables, dtype=dtype).tobytes())
    payload = buf.getvalue()
    return payload + _checksum(payload)


def save_model(model, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path):
    from .flow import FlowModel

    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + 8:
        raise CorruptModelError(f"{path}: file truncated ({len(data)} bytes)")
    payload, check = data[:-8], data[-8:]
    magic, version = struct.unpack_from("<4sI", data)
    if magic != MODEL_MAGIC:
        raise CorruptModelError(f"{path}: not a flow-model file")
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, "
                                      f"this build reads {MODEL_VERSION}")
    if _checksum(payload) != check:
        raise CorruptModelError(f"{path}: checksum mismatch (truncated or corrupted)")
    _, _, d, l, k, h, m, xi, eta, lam = _HEAD.unpack_from(payload)
    off = _HEAD.size
    (tlen,) = struct.unpack_from("<I", payload, off)
    off += 4
    text = payload[off:off + tlen].decode()
    off += tlen
    digest = payload[off:off + 32]
    off += 32
    q, t_len, p_len, width = _TABLE_HEAD.unpack_from(payload, off)
    off += _TABLE_HEAD.size
    dtype = "<f8" if width == 8 else "<f4"
    block = h * (t_len + p_len) * width
    seeds, targets, parts = [], [], []
    for _ in range(k):
        (seed,) = struct.unpack_from("<Q", payload, off)
        off += 8
        tables = np.frombuffer(payload, dtype=dtype, count=h * (t_len + p_len), offset=off)
        tables = tables.reshape(h, t_len + p_len).astype(np.float64 if width == 8 else np.float32)
        off += block
        seeds.append(seed)
        targets.append(tables[:, :t_len])
        parts.append(tables[:, t_len:])
    if off != len(payload):
        raise CorruptModelError(f"{path}: {len(payload) - off} unexpected trailing bytes")
    return FlowModel.from_text_block(
        text, d=d, l=l, m=m, step_seeds=np.array(seeds, dtype=np.uint64),
        target_tables=targets, particle_tables=parts, data_digest=bytes(digest),
        quantiles=q or None, amplifier=xi, step_size=eta, noise=lam, projections=h)
