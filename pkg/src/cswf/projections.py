"""Projection directions for sliced flows.

Two families are provided: dense directions drawn uniformly from the sphere,
and locally-connected ones whose X-part only touches one ``S x S`` image patch.
A patch drawn at a working resolution ``h x w`` below the image size is
resampled to the full image grid (Lanczos-3 by default) and renormalised, so
every projection stays a unit vector of the full data space.

Pyramidal schedules list ``(resolution, [S1, ..., Sk])`` stages; they are
flattened into entries and simulation steps are split across the entries.
"""

from __future__ import annotations

import dataclasses
import functools
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InvalidArgument

LANCZOS_WINDOW = 3
PRESETS = ("mnist", "fashion", "cifar10", "celeba")


@dataclass(frozen=True)
class ImageShape:
    channels: int
    height: int
    width: int

    def __post_init__(self):
        if min(self.channels, self.height, self.width) <= 0:
            raise InvalidArgument(f"image shape must be positive, got {self}")

    @property
    def dim(self) -> int:
        return self.channels * self.height * self.width

    def as_tuple(self):
        return (self.channels, self.height, self.width)

    @classmethod
    def parse(cls, text: str) -> "ImageShape":
        parts = [int(p) for p in re.split(r"[x,\s]+", text.strip()) if p]
        if len(parts) == 2:
            parts = [1] + parts
        if len(parts) != 3:
            raise InvalidArgument(f"cannot parse image shape {text!r}; expected C,H,W")
        return cls(*parts)

    def __str__(self):
        return f"{self.channels}x{self.height}x{self.width}"


PRESET_SHAPES = {
    "mnist": ImageShape(1, 28, 28),
    "fashion": ImageShape(1, 28, 28),
    "cifar10": ImageShape(3, 32, 32),
    "celeba": ImageShape(3, 64, 64),
}


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def lanczos_kernel(x, a: int = LANCZOS_WINDOW):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)


@functools.lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int, method: str = "lanczos") -> np.ndarray:
    """Linear map (n_out, n_in) that upsamples a 1-D signal of length n_in.

    Sample centres are aligned (``u = (i + 0.5) * n_in / n_out - 0.5``).  For
    Lanczos the taps of each output row are renormalised to sum to one, which
    also handles the truncated kernel near the borders.
    """
    if n_in < 1 or n_out < 1:
        raise InvalidArgument("resize lengths must be positive")
    if n_out < n_in:
        raise InvalidArgument(f"only upsampling is supported ({n_in} -> {n_out})")
    if n_out == n_in:
        m = np.eye(n_in)
    elif method == "nearest":
        src = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(int)
        m = np.zeros((n_out, n_in))
        m[np.arange(n_out), np.minimum(src, n_in - 1)] = 1.0
    elif method == "lanczos":
        u = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        m = lanczos_kernel(u[:, None] - np.arange(n_in)[None, :])
        m /= m.sum(axis=1, keepdims=True)
    else:
        raise InvalidArgument(f"unknown upsampling method {method!r}")
    m.setflags(write=False)
    return m


def upsample_filter(weights, factor, method: str = "lanczos") -> np.ndarray:
    """Upsample a (C, S, S) filter by integer factors ``(f_h, f_w)``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    fh, fw = (factor, factor) if np.isscalar(factor) else factor
    if fh < 1 or fw < 1 or int(fh) != fh or int(fw) != fw:
        raise InvalidArgument(f"upsampling factor must be a positive integer, got {factor}")
    if (fh, fw) == (1, 1):
        return w.copy()
    rh = resize_matrix(w.shape[1], w.shape[1] * int(fh), method)
    rw = resize_matrix(w.shape[2], w.shape[2] * int(fw), method)
    return np.einsum("ia,cab,jb->cij", rh, w, rw)


# ---------------------------------------------------------------------------
# single projections
# ---------------------------------------------------------------------------

@dataclass
class Projection:
    """A unit direction over ``R^(d+l)``.

    ``dense`` projections keep the X-part in ``dense_weights``.  ``patch``
    projections keep a unit (C, S, S) ``patch_weights`` centred at ``position``
    on a ``resolution`` grid; the X-part is that patch embedded in zeros,
    resampled to ``image_shape`` and multiplied by ``x_scale``.
    """

    kind: str
    dense_weights: np.ndarray | None = None
    patch_weights: np.ndarray | None = None
    position: tuple[int, int] | None = None
    resolution: tuple[int, int] | None = None
    image_shape: ImageShape | None = None
    x_scale: float = 1.0
    y_weights: np.ndarray | None = None
    method: str = "lanczos"
    _footprint: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def patch_size(self) -> int:
        return self.patch_weights.shape[-1]

    @property
    def top_left(self) -> tuple[int, int]:
        off = (self.patch_size - 1) // 2
        return self.position[0] - off, self.position[1] - off

    @property
    def x_dim(self) -> int:
        return self.dense_weights.size if self.kind == "dense" else self.image_shape.dim

    def coarse_x(self) -> np.ndarray:
        """Unscaled patch embedded in a (C, h, w) zero grid."""
        h, w = self.resolution
        grid = np.zeros((self.image_shape.channels, h, w))
        t, l = self.top_left
        s = self.patch_size
        grid[:, t:t + s, l:l + s] = self.patch_weights
        return grid

    def footprint(self):
        """``(row0, col0, weights)``: the nonzero window of the dense X-part."""
        if self._footprint is None:
            shape = self.image_shape
            h, w = self.resolution
            t, l = self.top_left
            s = self.patch_size
            rh = resize_matrix(h, shape.height, self.method)[:, t:t + s]
            rw = resize_matrix(w, shape.width, self.method)[:, l:l + s]
            rows = np.flatnonzero(np.any(rh != 0, axis=1))
            cols = np.flatnonzero(np.any(rw != 0, axis=1))
            r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
            weights = np.einsum("ia,cab,jb->cij", rh[r0:r1], self.patch_weights, rw[c0:c1])
            self._footprint = (int(r0), int(c0), weights)
        r0, c0, weights = self._footprint
        return r0, c0, weights * self.x_scale

    def dense_x(self) -> np.ndarray:
        if self.kind == "dense":
            return np.asarray(self.dense_weights, dtype=np.float64)
        shape = self.image_shape
        out = np.zeros(shape.as_tuple())
        r0, c0, weights = self.footprint()
        out[:, r0:r0 + weights.shape[1], c0:c0 + weights.shape[2]] = weights
        return out.ravel()

    def vector(self) -> np.ndarray:
        """The full (d + l) direction."""
        y = self.y_weights if self.y_weights is not None else np.zeros(0)
        return np.concatenate([self.dense_x(), y])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector()))

    def dot_x(self, x) -> np.ndarray:
        """``theta_x . x`` for x of shape (..., d) using only the patch window."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "dense":
            return x @ self.dense_weights
        shape = self.image_shape
        r0, c0, weights = self.footprint()
        img = x.reshape(x.shape[:-1] + shape.as_tuple())
        window = img[..., :, r0:r0 + weights.shape[1], c0:c0 + weights.shape[2]]
        return np.tensordot(window, weights, axes=3)


def _unit(v):
    n = np.linalg.norm(v)
    if n == 0:
        raise InvalidArgument("cannot normalise a zero vector")
    return v / n


def sample_uniform_sphere(dim: int, rng) -> Projection:
    if dim < 1:
        raise InvalidArgument("sphere dimension must be >= 1")
    return Projection(kind="dense", dense_weights=_unit(rng.standard_normal(dim)))


def sample_locally_connected(shape: ImageShape, resolution, patch: int, rng,
                             method: str = "lanczos") -> Projection:
    """Draw a patch direction at ``resolution`` and lift it to ``shape``.

    The patch centre is uniform over positions where the whole patch fits.
    Working resolutions need not divide the image size: the resampling matrix
    handles any ratio >= 1.
    """
    h, w = resolution
    if patch < 1 or patch > min(h, w):
        raise InvalidArgument(f"patch size {patch} does not fit a {h}x{w} grid")
    if h > shape.height or w > shape.width:
        raise InvalidArgument(f"resolution {h}x{w} exceeds image {shape.height}x{shape.width}")
    c = shape.channels
    weights = _unit(rng.standard_normal(c * patch * patch)).reshape(c, patch, patch)
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    off = (patch - 1) // 2
    proj = Projection(kind="patch", patch_weights=weights, position=(top + off, left + off),
                      resolution=(h, w), image_shape=shape, method=method)
    if (h, w) != (shape.height, shape.width):
        _, _, fine = proj.footprint()
        proj.x_scale = 1.0 / float(np.linalg.norm(fine))
    return proj


def join_and_normalize(theta_x: Projection, theta_y) -> Projection:
    """Concatenate an X-direction with a Y-direction and rescale to unit norm."""
    ty = np.asarray(theta_y, dtype=np.float64).ravel()
    nx = float(np.linalg.norm(theta_x.dense_x()))
    ny = float(np.linalg.norm(ty))
    total = np.hypot(nx, ny)
    if total == 0:
        raise InvalidArgument("both projection parts are zero")
    if theta_x.kind == "dense":
        return dataclasses.replace(theta_x, dense_weights=theta_x.dense_weights / total,
                                   y_weights=ty / total)
    out = dataclasses.replace(theta_x, x_scale=theta_x.x_scale / total, y_weights=ty / total)
    out._footprint = theta_x._footprint
    return out


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class ProjectionBatch:
    """H projections sharing one working grid, stacked as a matrix.

    ``coarse`` holds the (already scaled) X-weights on the working grid, one
    row per projection.  When ``resize`` is set the grid is smaller than the
    image and ``(R_h, R_w)`` map it up; data are then pulled down with the
    adjoint instead of materialising the dense directions.
    """

    coarse: np.ndarray
    theta_y: np.ndarray | None = None
    resize: tuple[np.ndarray, np.ndarray] | None = None
    shape: ImageShape | None = None

    def __len__(self):
        return self.coarse.shape[0]

    def __getitem__(self, sl: slice) -> "ProjectionBatch":
        ty = None if self.theta_y is None else self.theta_y[sl]
        return ProjectionBatch(self.coarse[sl], ty, self.resize, self.shape)

    @classmethod
    def from_projections(cls, projections) -> "ProjectionBatch":
        projections = list(projections)
        if not projections:
            raise InvalidArgument("empty projection list")
        first = projections[0]
        has_y = first.y_weights is not None and first.y_weights.size > 0
        ty = np.stack([p.y_weights for p in projections]) if has_y else None
        if first.kind == "dense":
            return cls(np.stack([p.dense_weights for p in projections]), ty)
        shape = first.image_shape
        h, w = first.resolution
        if any(p.kind != "patch" or p.resolution != (h, w) for p in projections):
            raise InvalidArgument("a projection batch must share kind and resolution")
        coarse = np.stack([p.coarse_x().ravel() * p.x_scale for p in projections])
        resize = None
        if (h, w) != (shape.height, shape.width):
            resize = (resize_matrix(h, shape.height, first.method),
                      resize_matrix(w, shape.width, first.method))
        return cls(coarse, ty, resize, shape)

    def reduce(self, x: np.ndarray) -> np.ndarray:
        """Pull (n, d) data onto the working grid (adjoint of the upsampling)."""
        if self.resize is None:
            return x
        rh, rw = self.resize
        c, hh, ww = self.shape.as_tuple()
        img = x.reshape(-1, c, hh, ww)
        out = np.matmul(rh.T, np.matmul(img, rw))
        return out.reshape(x.shape[0], -1)

    def expand(self, v: np.ndarray) -> np.ndarray:
        """Push (n, P) working-grid vectors to the image grid."""
        if self.resize is None:
            return v
        rh, rw = self.resize
        c = self.shape.channels
        h, w = rh.shape[1], rw.shape[1]
        img = v.reshape(-1, c, h, w)
        out = np.matmul(rh, np.matmul(img, rw.T))
        return out.reshape(v.shape[0], -1)

    def project(self, reduced: np.ndarray, extra: np.ndarray | None = None) -> np.ndarray:
        """(H, n) projected values for reduced inputs and optional Y-part."""
        out = self.coarse @ reduced.T
        if extra is not None and self.theta_y is not None:
            out += self.theta_y @ extra.T
        return out

    def dense(self) -> np.ndarray:
        return self.expand(self.coarse)


def patch_step_size(channels: int, resolution, patch: int) -> float:
    """Euler step giving a unit step along the most-covered direction.

    For uniform directions on the sphere the second-moment matrix is I/d, so
    a step of d is one unit per direction on average.  A random S x S patch
    covers a given grid cell with probability p, and its weights have
    per-entry variance 1/(C S^2); the largest eigenvalue of the second
    moment is therefore p_max / (C S^2), and its inverse plays the role of d.
    """
    h, w = resolution
    rows, cols = h - patch + 1, w - patch + 1
    p_max = min(patch, rows) * min(patch, cols) / (rows * cols)
    return channels * patch * patch / p_max


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    resolution: tuple[int, int]
    patches: tuple[int, ...]


@dataclass(frozen=True)
class PyramidSchedule:
    stages: tuple[Stage, ...]
    image_shape: ImageShape

    def __post_init__(self):
        if not self.stages:
            raise InvalidArgument("schedule has no stages")
        prev = (0, 0)
        for st in self.stages:
            h, w = st.resolution
            if h < prev[0] or w < prev[1]:
                raise InvalidArgument(f"resolutions must be non-decreasing (at {h}x{w})")
            if not st.patches:
                raise InvalidArgument(f"stage {h}x{w} lists no patch sizes")
            for s in st.patches:
                if s < 1 or s > min(h, w):
                    raise InvalidArgument(f"patch {s} does not fit stage {h}x{w}")
            prev = (h, w)
        img = self.image_shape
        if self.stages[-1].resolution != (img.height, img.width):
            raise InvalidArgument(
                f"final stage {self.stages[-1].resolution} must equal image size "
                f"{(img.height, img.width)}")

    def entries(self) -> list[tuple[tuple[int, int], int]]:
        return [(st.resolution, s) for st in self.stages for s in st.patches]

    def to_text(self) -> str:
        return "".join(f"{st.resolution[0]}x{st.resolution[1]}: "
                       f"{','.join(map(str, st.patches))}\n" for st in self.stages)


_STAGE_RE = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*:\s*([\d,\s]+)$")


def parse_schedule(text: str, image_shape: ImageShape) -> PyramidSchedule:
    stages = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _STAGE_RE.match(line)
        if not m:
            raise InvalidArgument(f"schedule line {lineno}: expected 'HxW: S1,S2,...', got {raw!r}")
        patches = tuple(int(s) for s in m.group(3).replace(" ", "").split(",") if s)
        stages.append(Stage((int(m.group(1)), int(m.group(2))), patches))
    return PyramidSchedule(tuple(stages), image_shape)


def load_preset(name: str) -> PyramidSchedule:
    if name not in PRESETS:
        raise InvalidArgument(f"unknown schedule preset {name!r}; choose from {PRESETS}")
    text = resources.files("cswf.presets").joinpath(f"{name}.txt").read_text()
    return parse_schedule(text, PRESET_SHAPES[name])


@dataclass(frozen=True)
class StepAssignment:
    entries: list
    counts: tuple[int, ...]
    step_entry: np.ndarray  # entry index for each step

    def entry_for(self, step: int):
        return self.entries[int(self.step_entry[step])]

    def ranges(self):
        edges = np.concatenate([[0], np.cumsum(self.counts)])
        return [range(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def schedule_stages(schedule: PyramidSchedule, total_steps: int, counts=None) -> StepAssignment:
    """Assign ``total_steps`` steps to the flattened schedule entries in order.

    By default steps are split as evenly as possible with the remainder going
    to the earliest entries; ``counts`` overrides the split.
    """
    entries = schedule.entries()
    n = len(entries)
    if counts is None:
        if total_steps < n:
            raise InvalidArgument(f"{total_steps} steps cannot cover {n} schedule entries")
        base, extra = divmod(total_steps, n)
        counts = [base + (1 if i < extra else 0) for i in range(n)]
    else:
        counts = [int(c) for c in counts]
        if len(counts) != n or sum(counts) != total_steps or min(counts) < 0:
            raise InvalidArgument(
                f"step counts must be {n} nonnegative integers summing to {total_steps}")
    step_entry = np.repeat(np.arange(n), counts)
    return StepAssignment(entries, tuple(counts), step_entry)
