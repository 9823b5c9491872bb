"""Particle simulation of sliced-Wasserstein flows.

Each step draws H directions, builds the empirical CDFs of the projected
dataset and of the projected particles, and moves the X-part of every
particle along

    v(x, y) = -(1/H) * sum_h psi'_h(theta_hx . x + xi * theta_hy . y) * theta_hx

with ``psi'(z) = z - Q_data(F_particles(z))``.  The Y-part (labels or
observed pixels) never moves.  Setting ``xi = 0`` drops the Y-part from the
projections entirely, which is exactly the unconditional flow.

Work inside a step is split into fixed blocks of projections; blocks may run
on a thread pool but are reduced in block order, so results do not depend
on the number of threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .data_io import DatasetView, OcclusionSplit
from .errors import InvalidArgument, NumericError
from .projections import (ImageShape, ProjectionBatch, PyramidSchedule, join_and_normalize,
                          parse_schedule, patch_step_size, sample_locally_connected,
                          sample_uniform_sphere, schedule_stages)
from .sliced_ot import (_gather, _insert_positions, _potential_rows, _quantile_rows,
                        _self_cdf)

# independent random streams derived from the run seed
STREAM_PROJECTIONS = 0
STREAM_DEQUANTIZE = 1
STREAM_NOISE = 2
STREAM_INIT = 3


def derive_seed(seed: int, step: int, stream: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream, step))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class FlowConfig:
    amplifier: float = 0.0
    step_size: float | None = None  # None: per-entry default, see step_size_for
    steps: int = 100
    projections: int = 10000
    particles: int = 1000
    noise: float = 0.0
    particle_cdf_subset: int | None = None  # None: all particles
    seed: int = 0
    schedule: PyramidSchedule | None = None  # None: uniform directions on the sphere
    stage_steps: tuple[int, ...] | None = None
    resample: bool = True  # False: draw directions once before the loop
    upsample: str = "lanczos"
    quantiles: int | None = 1024  # knots per recorded CDF; None stores full tables
    dequantize: bool = True
    step_guard: bool = False  # cap each step at 1 / top eigenvalue of the drawn directions
    threads: int = 1
    block: int = 256

    def validate(self):
        self.amplifier, self.noise = float(self.amplifier), float(self.noise)
        if self.step_size is not None:
            self.step_size = float(self.step_size)
        checks = [
            ("amplifier", self.amplifier >= 0),
            ("step_size", self.step_size is None or self.step_size > 0),
            ("steps", self.steps >= 0),
            ("projections", self.projections >= 1),
            ("particles", self.particles >= 1),
            ("noise", self.noise >= 0),
            ("particle_cdf_subset",
             self.particle_cdf_subset is None or self.particle_cdf_subset >= 1),
            ("upsample", self.upsample in ("lanczos", "nearest")),
            ("quantiles", self.quantiles is None or self.quantiles >= 2),
            ("threads", self.threads >= 1),
            ("block", self.block >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise InvalidArgument(f"invalid config value {name}={getattr(self, name)!r}")
        if self.schedule is None and self.stage_steps is not None:
            raise InvalidArgument("stage_steps requires a schedule")
        if not self.resample and self.schedule is not None:
            raise InvalidArgument("pyramidal schedules need per-step projections (resample=true)")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "schedule":
                if v is not None:
                    lines.append(f"schedule = {v.to_text().strip().replace(chr(10), '; ')}")
                    lines.append(f"schedule_shape = {v.image_shape}")
                continue
            if f.name == "stage_steps" and v is not None:
                v = ",".join(map(str, v))
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict, base: "FlowConfig | None" = None) -> "FlowConfig":
        """Build a config from string values (config files, model headers)."""
        cfg = replace(base) if base is not None else cls()
        known = {f.name: f for f in fields(cls)}
        shape = values.get("schedule_shape")
        for key, raw in values.items():
            if key == "schedule_shape":
                continue
            if key not in known:
                raise InvalidArgument(f"unknown config key {key!r}")
            text = str(raw).strip()
            try:
                setattr(cfg, key, _parse_value(key, text, shape))
            except InvalidArgument:
                raise
            except ValueError as exc:
                raise InvalidArgument(f"bad value for {key}: {text!r} ({exc})") from None
        return cfg.validate()


def _parse_value(key, text, shape):
    if text.lower() in ("none", "all", "full", ""):
        if key in ("step_size", "particle_cdf_subset", "schedule", "stage_steps", "quantiles"):
            return None
    if key in ("amplifier", "step_size", "noise"):
        return float(text)
    if key in ("steps", "projections", "particles", "particle_cdf_subset", "seed",
               "quantiles", "threads", "block"):
        return int(text)
    if key in ("resample", "dequantize", "step_guard"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if key == "stage_steps":
        return tuple(int(s) for s in text.split(","))
    if key == "schedule":
        from .projections import PRESETS, load_preset
        if text in PRESETS:
            return load_preset(text)
        if shape is None:
            raise InvalidArgument("an inline schedule needs schedule_shape")
        return parse_schedule(text.replace(";", "\n"), ImageShape.parse(shape))
    return text


@dataclass
class ParticleSet:
    x: np.ndarray
    y: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.y is None:
            self.y = np.zeros((self.x.shape[0], 0))
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.y.shape[0] != self.x.shape[0]:
            raise InvalidArgument("x and y must have the same number of particles")

    @property
    def m(self):
        return self.x.shape[0]

    def copy(self):
        return ParticleSet(self.x.copy(), self.y.copy(), self.step)


@dataclass
class VelocityField:
    v: np.ndarray


@dataclass(frozen=True)
class Layout:
    """How particle X/Y parts map onto the space the projections live in.

    Without occlusion the projections act on X (an image of ``shape`` when
    one is given) plus an optional separate Y-part.  With occlusion they act
    on the whole image, X being the occluded and Y the observed pixels.
    """

    d: int
    l: int
    shape: ImageShape | None = None
    occlusion: OcclusionSplit | None = None

    @classmethod
    def of(cls, dataset: DatasetView) -> "Layout":
        return cls(dataset.d, dataset.l, dataset.shape if dataset.occlusion is None
                   else dataset.occlusion.shape, dataset.occlusion)

    @property
    def image_dim(self):
        return self.occlusion.shape.dim if self.occlusion is not None else self.d

    def inputs(self, x, y, amplifier):
        """(projection-space vectors, separate Y-part or None)."""
        if self.occlusion is not None:
            return self.occlusion.recombine(x, amplifier * y), None
        if self.l == 0 or amplifier == 0:
            return x, None
        return x, amplifier * y

    def x_part(self, v_image):
        if self.occlusion is not None:
            return v_image[:, self.occlusion.x_index]
        return v_image


def sample_projection_batch(cfg: FlowConfig, layout: Layout, seed: int, entry=None,
                            count: int | None = None) -> ProjectionBatch:
    """Draw one step's directions from ``seed``.

    ``entry`` is a ``(resolution, patch)`` schedule entry or None for
    uniform directions.
    """
    rng = np.random.default_rng(seed)
    count = cfg.projections if count is None else count
    joint_y = layout.occlusion is None and layout.l > 0 and cfg.amplifier != 0
    if entry is None:
        dim = layout.image_dim + (layout.l if joint_y else 0)
        theta = rng.standard_normal((count, dim))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        if joint_y:
            return ProjectionBatch(np.ascontiguousarray(theta[:, :layout.d]),
                                   np.ascontiguousarray(theta[:, layout.d:]))
        return ProjectionBatch(theta)
    if layout.shape is None:
        raise InvalidArgument("pyramidal schedules need image-shaped data")
    if layout.shape != cfg.schedule.image_shape:
        raise InvalidArgument(f"schedule is for {cfg.schedule.image_shape} images, "
                              f"data are {layout.shape}")
    resolution, patch = entry
    projs = []
    for _ in range(count):
        p = sample_locally_connected(layout.shape, resolution, patch, rng, cfg.upsample)
        if joint_y:
            p = join_and_normalize(p, sample_uniform_sphere(layout.l, rng).dense_weights)
        projs.append(p)
    return ProjectionBatch.from_projections(projs)


def _check_finite(values, step, offset):
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values))[0][0]) + offset
        raise NumericError(f"non-finite projected value at step {step}, projection {bad}",
                           step=step, projection=bad)


def _quantile_table(sorted_rows, q):
    if q is None:
        return sorted_rows
    levels = np.linspace(0.0, 1.0, q)
    return _quantile_rows(sorted_rows, np.broadcast_to(levels, sorted_rows.shape[:-1] + (q,)))


@dataclass
class _StepTables:
    target: list = field(default_factory=list)
    particles: list = field(default_factory=list)


def _block_velocity(block: ProjectionBatch, part_red, part_extra, data_red, data_extra,
                    subset, tables, step, offset, keep):
    """Unnormalised sum of psi' * theta over one block of projections.

    ``tables`` is None during simulation (CDFs are estimated here) or a pair
    of stored (target, particle) tables when replaying a model.
    """
    pp = block.project(part_red, part_extra)
    _check_finite(pp, step, offset)
    if tables is None:
        dp = block.project(data_red, data_extra)
        _check_finite(dp, step, offset)
        tsorted = np.sort(dp, axis=1)
        if subset is None:
            # every particle is a knot of its own CDF: work in sorted order, scatter back
            order = np.argsort(pp, axis=1)
            psorted = _gather(pp, order)
            psi_sorted = psorted - _quantile_rows(tsorted, _self_cdf(psorted))
            psi = np.empty_like(psi_sorted)
            offsets = (np.arange(order.shape[0]) * order.shape[1])[:, None]
            psi.reshape(-1)[order + offsets] = psi_sorted
        else:
            psorted = np.sort(pp[:, subset], axis=1)
            psi = _potential_rows(psorted, tsorted, pp, _insert_positions(psorted, pp))
        kept = (tsorted, psorted) if keep else None
    else:
        tsorted, psorted = tables
        psi = _potential_rows(psorted, tsorted, pp)
        kept = None
    return psi.T @ block.coarse, kept


class _Runner:
    def __init__(self, cfg: FlowConfig, layout: Layout):
        self.cfg = cfg
        self.layout = layout
        self.pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def velocity(self, batch, particles, amp, data_xy=None, tables=None, step=0,
                 subset=None, keep=None):
        cfg, layout = self.cfg, self.layout
        part_img, part_extra = layout.inputs(particles.x, particles.y, amp)
        part_red = batch.reduce(part_img)
        data_red = data_extra = None
        if data_xy is not None:
            data_img, data_extra = layout.inputs(data_xy[0], data_xy[1], amp)
            data_red = batch.reduce(data_img)
        h = len(batch)
        starts = range(0, h, cfg.block)

        def work(start):
            sl = slice(start, min(start + cfg.block, h))
            tab = None if tables is None else (tables[0][sl], tables[1][sl])
            return _block_velocity(batch[sl], part_red, part_extra, data_red, data_extra,
                                   subset, tab, step, start, keep is not None)

        results = list(self.pool.map(work, starts)) if self.pool else [work(s) for s in starts]
        total = results[0][0]
        for partial, _ in results[1:]:
            total = total + partial
        if keep is not None:
            q = cfg.quantiles
            keep.target.append(np.concatenate([_quantile_table(r[1][0], q) for r in results]))
            keep.particles.append(np.concatenate([_quantile_table(r[1][1], q) for r in results]))
        return layout.x_part(batch.expand(total)) * (-1.0 / h)


@dataclass
class FlowModel:
    """Everything needed to replay a simulated flow on new particles."""

    config: FlowConfig
    layout: Layout
    m: int
    step_size: float | None  # None: per-entry defaults
    conditional: bool
    step_seeds: np.ndarray
    target_tables: list
    particle_tables: list
    data_digest: bytes
    quantiles: int | None

    @property
    def d(self):
        return self.layout.d

    @property
    def l(self):
        return self.layout.l

    def text_block(self) -> str:
        lay = self.layout
        lines = [self.config.to_text().rstrip("\n"), f"conditional = {int(self.conditional)}"]
        if lay.shape is not None:
            lines.append(f"layout_shape = {lay.shape}")
        if lay.occlusion is not None:
            mask = np.zeros(lay.occlusion.shape.dim, dtype=bool)
            mask[lay.occlusion.x_index] = True
            lines.append(f"layout_mask = {np.packbits(mask).tobytes().hex()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text_block(cls, text, *, d, l, m, step_seeds, target_tables, particle_tables,
                        data_digest, quantiles, amplifier, step_size, noise, projections):
        values = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                values[k.strip()] = v.strip()
        conditional = values.pop("conditional", "1") == "1"
        shape = values.pop("layout_shape", None)
        mask_hex = values.pop("layout_mask", None)
        cfg = FlowConfig.from_mapping(values)
        cfg.amplifier, cfg.noise, cfg.projections = amplifier, noise, projections
        step_size = step_size or None
        cfg.step_size = step_size
        shape = ImageShape.parse(shape) if shape else None
        occlusion = None
        if mask_hex is not None:
            bits = np.unpackbits(np.frombuffer(bytes.fromhex(mask_hex), dtype=np.uint8))
            mask = bits[: shape.dim].astype(bool)
            occlusion = OcclusionSplit(np.flatnonzero(mask), np.flatnonzero(~mask), shape)
        return cls(cfg, Layout(d, l, shape, occlusion), m, step_size, conditional,
                   np.asarray(step_seeds, dtype=np.uint64), list(target_tables),
                   list(particle_tables), data_digest, quantiles)


def _plan(cfg: FlowConfig):
    if cfg.schedule is None:
        return None
    return schedule_stages(cfg.schedule, cfg.steps, cfg.stage_steps)


def step_size_for(cfg: FlowConfig, layout: Layout, entry=None) -> float:
    """Euler step for one schedule entry.

    An explicit ``cfg.step_size`` wins.  Otherwise uniform directions use the
    X-dimension d, and patch entries the analogous unit-step value from
    :func:`~cswf.projections.patch_step_size`.
    """
    if cfg.step_size is not None:
        return float(cfg.step_size)
    if entry is None:
        return float(layout.d)
    resolution, patch = entry
    return patch_step_size(layout.shape.channels, resolution, patch)


def top_second_moment(batch: ProjectionBatch, layout: Layout, iterations: int = 100) -> float:
    """Largest eigenvalue of ``(1/H) sum_h theta_hx theta_hx^T`` (X-part only).

    Power iteration from a fixed start, so the value is reproducible.
    """
    rows = batch.dense()
    if layout.occlusion is not None:
        rows = rows[:, layout.occlusion.x_index]
    h = rows.shape[0]
    gram = rows @ rows.T if h <= rows.shape[1] else rows.T @ rows
    v = np.linspace(1.0, 2.0, gram.shape[0])
    lam = 0.0
    for _ in range(iterations):
        w = gram @ v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam / h


def _guarded(cfg, layout, batch, eta):
    if not cfg.step_guard:
        return eta
    lam = top_second_moment(batch, layout)
    return eta if lam == 0.0 else min(eta, 1.0 / lam)


def _projection_seed(cfg, step):
    return derive_seed(cfg.seed, step if cfg.resample else 0, STREAM_PROJECTIONS)


def _step(particles: ParticleSet, v: np.ndarray, eta: float, noise=None) -> ParticleSet:
    with np.errstate(over="ignore", invalid="ignore"):
        x = particles.x + eta * v
        if noise is not None:
            x = x + noise
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite particle position after step {particles.step}",
                           step=particles.step)
    return ParticleSet(x, particles.y, particles.step + 1)


def _noise(cfg, step, eta, shape):
    if cfg.noise <= 0:
        return None
    rng = np.random.default_rng(derive_seed(cfg.seed, step, STREAM_NOISE))
    return math.sqrt(2.0 * cfg.noise * eta) * rng.standard_normal(shape)


def _subset_index(cfg, m):
    s = cfg.particle_cdf_subset
    if s is None or s >= m:
        return None
    return (np.arange(s) * m) // s


def _blas_limit(cfg):
    # BLAS threading could change reduction order; parallelism comes from our pool
    return threadpool_limits(1)


def simulate(cfg: FlowConfig, dataset: DatasetView, initial: ParticleSet, *,
             conditional: bool = True, record: bool = False, callback=None):
    """Run the particle flow; returns ``(particles, model_or_None)``.

    ``conditional=False`` is the unconditional flow: Y is ignored, the
    amplifier is forced to zero and the noise term ``sqrt(2 lambda eta) eps``
    is added.  ``callback(particles)`` is called after every step.
    """
    cfg.validate()
    layout = Layout.of(dataset)
    if not conditional:
        if layout.occlusion is not None:
            raise InvalidArgument("the unconditional flow does not take occluded data")
        layout = Layout(layout.d, 0, layout.shape)
        cfg = replace(cfg, amplifier=0.0)
        dataset = replace(dataset, y=np.zeros((dataset.n, 0)), labels=None)
        initial = ParticleSet(initial.x, None, initial.step)
    if initial.x.shape[1] != layout.d or initial.y.shape[1] != layout.l:
        raise InvalidArgument(f"particles are ({initial.x.shape[1]}, {initial.y.shape[1]})-"
                              f"dimensional, dataset is ({layout.d}, {layout.l})")
    plan = _plan(cfg)
    subset = _subset_index(cfg, initial.m)
    keep = _StepTables() if record else None
    seeds = []
    particles = initial.copy()
    runner = _Runner(cfg, layout)
    fixed = None
    try:
        with _blas_limit(cfg):
            for k in range(cfg.steps):
                seed = _projection_seed(cfg, k)
                seeds.append(seed)
                if fixed is None or cfg.resample:
                    entry = plan.entry_for(k) if plan is not None else None
                    batch = sample_projection_batch(cfg, layout, seed, entry)
                    eta = _guarded(cfg, layout, batch, step_size_for(cfg, layout, entry))
                    dq = (np.random.default_rng(derive_seed(cfg.seed, k, STREAM_DEQUANTIZE))
                          if cfg.dequantize else None)
                    data_xy = dataset.fresh_xy(dq)
                    fixed = (batch, data_xy)
                batch, data_xy = fixed
                v = runner.velocity(batch, particles, cfg.amplifier, data_xy=data_xy, step=k,
                                    subset=subset, keep=keep)
                noise = None if conditional else _noise(cfg, k, eta, particles.x.shape)
                particles = _step(particles, v, eta, noise)
                if callback is not None:
                    callback(particles)
    finally:
        runner.close()
    model = None
    if record:
        model = FlowModel(cfg, layout, initial.m, cfg.step_size, conditional,
                          np.array(seeds, dtype=np.uint64), keep.target, keep.particles,
                          dataset.digest, cfg.quantiles)
    return particles, model


def run_cswf(cfg: FlowConfig, dataset: DatasetView, initial: ParticleSet,
             record: bool = False, callback=None):
    """Conditional flow.  Returns ``(particles, model)``; model is None unless recording."""
    return simulate(cfg, dataset, initial, conditional=True, record=record, callback=callback)


def run_swf(cfg: FlowConfig, dataset: DatasetView, initial: ParticleSet,
            callback=None) -> ParticleSet:
    return simulate(cfg, dataset, initial, conditional=False, callback=callback)[0]


def sample_offline(model: FlowModel, initial: ParticleSet, callback=None) -> ParticleSet:
    """Replay a recorded flow on new particles using the stored CDF tables."""
    layout, cfg = model.layout, model.config
    if initial.x.shape[1] != layout.d or initial.y.shape[1] != layout.l:
        raise InvalidArgument(f"model expects ({layout.d}, {layout.l})-dimensional particles, "
                              f"got ({initial.x.shape[1]}, {initial.y.shape[1]})")
    plan = _plan(cfg)
    particles = initial.copy()
    runner = _Runner(cfg, layout)
    try:
        with _blas_limit(cfg):
            for k, seed in enumerate(model.step_seeds):
                entry = plan.entry_for(k) if plan is not None else None
                batch = sample_projection_batch(cfg, layout, int(seed), entry)
                eta = _guarded(cfg, layout, batch, step_size_for(cfg, layout, entry))
                tables = (np.asarray(model.target_tables[k], dtype=np.float64),
                          np.asarray(model.particle_tables[k], dtype=np.float64))
                v = runner.velocity(batch, particles, cfg.amplifier, tables=tables, step=k)
                noise = None if model.conditional else _noise(cfg, k, eta, particles.x.shape)
                particles = _step(particles, v, eta, noise)
                if callback is not None:
                    callback(particles)
    finally:
        runner.close()
    return particles


def init_particles(cfg: FlowConfig, d: int, *, labels=None, marginal=None,
                   dataset: DatasetView | None = None, rng=None) -> ParticleSet:
    """Gaussian X-parts with Y drawn from one label source.

    Exactly one of ``labels`` (an (M, l) array used as-is), ``marginal``
    (class probabilities, sampled as one-hot rows) or ``dataset`` (rows of
    ``dataset.y`` drawn with replacement) may be given; none means l = 0.
    """
    if rng is None:
        rng = np.random.default_rng(derive_seed(cfg.seed, 0, STREAM_INIT))
    m = cfg.particles
    sources = [s is not None for s in (labels, marginal, dataset)]
    if sum(sources) > 1:
        raise InvalidArgument("give at most one label source")
    x = rng.standard_normal((m, d))
    if labels is not None:
        y = np.array(labels, dtype=np.float64, copy=True)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != m:
            raise InvalidArgument(f"{y.shape[0]} label rows for {m} particles")
        if dataset is not None and y.shape[1] != dataset.l:
            raise InvalidArgument("label dimension does not match the dataset")
    elif marginal is not None:
        p = np.asarray(marginal, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise InvalidArgument("marginal must be a probability vector")
        cls = rng.choice(p.size, size=m, p=p)
        y = np.zeros((m, p.size))
        y[np.arange(m), cls] = 1.0
    elif dataset is not None:
        y = dataset.y[rng.integers(0, dataset.n, size=m)].copy()
    else:
        y = np.zeros((m, 0))
    return ParticleSet(x, y, 0)


def estimate_velocity(particles: ParticleSet, dataset: DatasetView, projections,
                      amplifier: float = 0.0, particle_cdf_subset: int | None = None,
                      block: int = 64) -> VelocityField:
    """Velocity of the X-parts for a given set of directions.

    ``projections`` is a list of :class:`~cswf.projections.Projection` or a
    :class:`~cswf.projections.ProjectionBatch`.
    """
    if isinstance(projections, ProjectionBatch):
        batch = projections
    else:
        if len(projections) == 0:
            raise InvalidArgument("no projections given")
        batch = ProjectionBatch.from_projections(projections)
    if len(batch) == 0:
        raise InvalidArgument("no projections given")
    layout = Layout.of(dataset)
    if particles.x.shape[1] != layout.d or particles.y.shape[1] != layout.l:
        raise InvalidArgument("particles and dataset dimensions differ")
    cfg = FlowConfig(amplifier=amplifier, particle_cdf_subset=particle_cdf_subset, block=block)
    runner = _Runner(cfg, layout)
    v = runner.velocity(batch, particles, amplifier, data_xy=(dataset.x, dataset.y),
                        step=particles.step, subset=_subset_index(cfg, particles.m))
    return VelocityField(v)


def step(particles: ParticleSet, velocity: VelocityField, eta: float) -> ParticleSet:
    """Euler update ``x <- x + eta * v``; Y is carried over untouched."""
    v = velocity.v if isinstance(velocity, VelocityField) else np.asarray(velocity)
    if v.shape != particles.x.shape:
        raise InvalidArgument(f"velocity shape {v.shape} != particle shape {particles.x.shape}")
    return _step(particles, v, eta)
