"""Command-line front end.

    cswf [--seed N] [--threads N] [--config FILE] COMMAND [options]

Commands: generate, conditional, inpaint, sample, toy2d, swdist.  Every
command that writes files also writes ``manifest.json`` next to them.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import (DatasetView, OcclusionSpec, dequantize_rescale, load_dataset, load_model,
                      read_idx, save_model, write_image_grid, write_scatter)
from .errors import CSWFError, FormatError, InvalidArgument, NumericError
from .evaluation import TraceRecorder, class_mean_report, write_trace_csv
from .flow import (FlowConfig, ParticleSet, init_particles, run_cswf, sample_offline, simulate)
from .projections import PRESET_SHAPES, PRESETS, ImageShape, load_preset, parse_schedule
from .sliced_ot import sw2_distance
from .toys import (TOY_STEP_SIZE, binary_conditions, conditional_gaussian, crossed_mixture)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# full-scale settings per dataset; K is not given per dataset in the source
# material beyond a 10k-20k range, so the lower resolutions get the lower end
PRESET_RUNS = {
    "mnist": dict(projections=10000, particles=250_000, steps=10_000),
    "fashion": dict(projections=10000, particles=250_000, steps=10_000),
    "cifar10": dict(projections=10000, particles=700_000, steps=20_000),
    "celeba": dict(projections=10000, particles=450_000, steps=20_000),
}
PRESET_FLIP = {"cifar10": True}


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@contextmanager
def data_stage(what):
    """Report any failure inside the block as a data error."""
    try:
        yield
    except CommandError:
        raise
    except (CSWFError, OSError, ValueError) as exc:
        raise CommandError(f"{what}: {exc}", EXIT_DATA) from exc


@dataclass
class RunManifest:
    command: str
    config: dict
    dataset: str | None
    dataset_digest: str
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    timestamp: str = ""
    version: str = __version__

    def write(self, out_dir: Path):
        if not self.timestamp:
            epoch = int(os.environ.get("SOURCE_DATE_EPOCH", time.time()))
            self.timestamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(epoch))
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="run seed")
    p.add_argument("--threads", type=int, default=d, help="worker threads (results do not depend on it)")
    p.add_argument("--config", type=Path, default=d, help="INI file with [flow], [data], [output]")


def _flow_flags(p):
    g = p.add_argument_group("flow")
    g.add_argument("--preset", choices=PRESETS, help="dataset preset: schedule, H, M and K")
    g.add_argument("--schedule", help="preset name, schedule file, or 'uniform'")
    g.add_argument("--steps", type=int, help="simulation steps K")
    g.add_argument("--projections", type=int, help="directions per step H")
    g.add_argument("--particles", type=int, help="number of particles M")
    g.add_argument("--step-size", type=float, help="Euler step (default: data dimension)")
    g.add_argument("--stage-steps", help="comma-separated steps per schedule entry")
    g.add_argument("--particle-subset", type=int, help="particles used for the particle CDF")
    g.add_argument("--quantiles", help="recorded knots per CDF, or 'full'")
    g.add_argument("--upsample", choices=("lanczos", "nearest"))
    g.add_argument("--no-dequantize", action="store_true", default=None,
                   help="use bin midpoints instead of fresh dequantization noise")
    g.add_argument("--block", type=int, help="projections per work block")
    g.add_argument("--step-guard", action="store_true", default=None,
                   help="cap each step by the spread of the drawn directions (small H)")


def _data_flags(p, labels=True):
    g = p.add_argument_group("data")
    g.add_argument("--data", type=Path, help="training data (IDX images, CSV or raw f32)")
    if labels:
        g.add_argument("--labels", type=Path, help="IDX labels for --data")
    g.add_argument("--format", choices=("idx", "csv", "f32"), help="data format (default: idx)")
    g.add_argument("--shape", help="image shape C,H,W (f32 data, or to check IDX)")
    g.add_argument("--flip", action="store_true", default=None, help="add mirrored images")
    g.add_argument("--heldout", type=Path, help="held-out samples for sliced-W2 metrics")


def _output_flags(p):
    g = p.add_argument_group("output")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--grid", help="image grid ROWSxCOLS")
    g.add_argument("--record-model", action="store_true", default=None,
                   help="store a replayable model file")
    g.add_argument("--trace-every", type=int, help="record sliced W2 to --heldout every N steps")
    g.add_argument("--trace-projections", type=int, help="directions for the trace (default 200)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cswf", description="Conditional sliced-Wasserstein flows.")
    _global_flags(ap, suppress=False)
    ap.add_argument("--version", action="version", version=f"cswf {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="unconditional samples")
    g.add_argument("--noise", type=float, help="entropic noise level lambda")
    for add in (_flow_flags, _data_flags, _output_flags):
        add(g)

    c = sub.add_parser("conditional", help="class-conditional samples")
    c.add_argument("--amplifier", type=float, help="condition amplifier (default 10)")
    c.add_argument("--label-source", choices=("cycle", "marginal", "dataset", "file"),
                   help="how particle labels are chosen (default: cycle through classes)")
    c.add_argument("--label-file", type=Path, help="one integer class per line")
    for add in (_flow_flags, _data_flags, _output_flags):
        add(c)

    i = sub.add_parser("inpaint", help="fill occluded pixels of test images")
    i.add_argument("--amplifier", type=float, help="condition amplifier (default 1)")
    i.add_argument("--mask", choices=("left-half", "bottom-half", "center-square"),
                   help="occluded region (default bottom-half)")
    i.add_argument("--mask-file", type=Path, help="custom mask: .npy boolean C x H x W")
    i.add_argument("--test-data", type=Path, help="IDX images to inpaint")
    i.add_argument("--count", type=int, help="test images used (default 10)")
    i.add_argument("--samples-per-image", type=int, help="particles per test image (default 8)")
    i.add_argument("--model", type=Path, help="replay a recorded inpainting model")
    for add in (_flow_flags, _data_flags, _output_flags):
        add(i)

    s = sub.add_parser("sample", help="replay a recorded model on new particles")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--count", type=int, help="particles (default: recorded M)")
    s.add_argument("--labels", help="'cycle' (default) or comma-separated class ids")
    s.add_argument("--out", type=Path)
    s.add_argument("--grid")

    t = sub.add_parser("toy2d", help="two-dimensional toy flows")
    t.add_argument("--kind", choices=("joint", "conditional"), default="joint")
    t.add_argument("--data", type=Path, help="CSV target (x, y, class) instead of the built-in toy")
    t.add_argument("--n", type=int, default=5000, help="target samples and particles")
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--projections", type=int, default=128)
    t.add_argument("--amplifier", type=float, default=10.0)
    t.add_argument("--step-size", type=float, default=TOY_STEP_SIZE)
    t.add_argument("--snapshot-every", type=int, default=50)
    t.add_argument("--block", type=int, default=256, help="projections per work block")
    t.add_argument("--out", type=Path)

    w = sub.add_parser("swdist", help="sliced W2 between two sample files")
    w.add_argument("a", type=Path)
    w.add_argument("b", type=Path)
    w.add_argument("--projections", type=int, default=1000)

    for p in (g, c, i, s, t, w):
        _global_flags(p, suppress=True)
    return ap


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

_FLOW_FLAGS = {
    "steps": "steps", "projections": "projections", "particles": "particles",
    "step_size": "step_size", "noise": "noise", "amplifier": "amplifier",
    "particle_subset": "particle_cdf_subset", "quantiles": "quantiles",
    "upsample": "upsample", "block": "block", "stage_steps": "stage_steps",
    "step_guard": "step_guard",
}


def _read_config_file(path):
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise CommandError(f"cannot read config {path}: {exc}", EXIT_CONFIG) from exc
    unknown = set(cp.sections()) - {"flow", "data", "output"}
    if unknown:
        raise CommandError(f"config {path}: unknown section(s) {sorted(unknown)}", EXIT_CONFIG)
    return {s: dict(cp[s]) for s in cp.sections()}


def _apply_file_defaults(args, sections):
    """Fill options not given on the command line from [data] and [output]."""
    aliases = {"path": "data", "dir": "out"}
    for sec in ("data", "output"):
        for key, value in sections.get(sec, {}).items():
            dest = aliases.get(key, key).replace("-", "_")
            if not hasattr(args, dest):
                raise CommandError(f"config [{sec}] key {key!r} is not an option of "
                                   f"'{args.command}'", EXIT_CONFIG)
            if getattr(args, dest) is None:
                setattr(args, dest, _coerce(dest, value))


def _coerce(dest, value):
    if dest in ("data", "labels", "heldout", "out", "test_data", "label_file", "model",
                "mask_file"):
        return Path(value)
    if dest in ("flip", "record_model", "no_dequantize", "step_guard"):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if dest in ("trace_every", "trace_projections", "count", "samples_per_image"):
        return int(value)
    return value


def resolve_config(args, d_shape: ImageShape | None, defaults: dict | None = None) -> FlowConfig:
    """Defaults < preset < config file [flow] < command-line flags."""
    values: dict[str, str] = {}
    for k, v in (defaults or {}).items():
        values[k] = str(v)
    preset = getattr(args, "preset", None)
    if preset:
        values.update({k: str(v) for k, v in PRESET_RUNS[preset].items()})
        values["schedule"] = preset
    values.update(args.file_sections.get("flow", {}))
    for flag, key in _FLOW_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = str(v)
    sched = getattr(args, "schedule", None)
    if sched is not None:
        values["schedule"] = sched
    if getattr(args, "no_dequantize", None):
        values["dequantize"] = "false"
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "threads", None) is not None:
        values["threads"] = str(args.threads)
    sched = values.pop("schedule", None)
    try:
        cfg = FlowConfig.from_mapping(values)
        if sched is not None and sched.lower() not in ("uniform", "none", ""):
            cfg.schedule = _load_schedule(sched, d_shape)
        cfg.validate()
    except InvalidArgument as exc:
        raise CommandError(f"configuration error: {exc}", EXIT_CONFIG) from exc
    return cfg


def _load_schedule(spec, shape):
    if spec in PRESETS:
        sched = load_preset(spec)
    else:
        path = Path(spec)
        if not path.exists():
            raise InvalidArgument(f"schedule {spec!r} is neither a preset {PRESETS} nor a file")
        if shape is None:
            raise InvalidArgument("a schedule file needs image data")
        return parse_schedule(path.read_text(), shape)
    if shape is not None and sched.image_shape != shape:
        raise InvalidArgument(f"schedule preset {spec!r} is for {sched.image_shape} images, "
                              f"data are {shape}")
    return sched


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load_training(args, need_labels=False) -> DatasetView:
    if args.data is None:
        raise CommandError("no dataset given (--data or [data] path)", EXIT_CONFIG)
    fmt = args.format or ("csv" if args.data.suffix == ".csv" else "idx")
    flip = bool(args.flip) or (PRESET_FLIP.get(getattr(args, "preset", None) or "", False))
    with data_stage(f"loading {args.data}"):
        shape = ImageShape.parse(args.shape) if args.shape else None
        if shape is None and fmt == "f32" and getattr(args, "preset", None):
            shape = PRESET_SHAPES[args.preset]
        ds = load_dataset(args.data, fmt, shape, getattr(args, "labels", None), flip)
    if need_labels and ds.labels is None:
        raise CommandError("this command needs class labels (--labels, or a CSV class column)",
                           EXIT_DATA)
    return ds


def _load_points(path: Path, like: DatasetView | None = None) -> np.ndarray:
    """Sample file as an (n, d) array: .npy, .csv (header allowed) or IDX images."""
    with data_stage(f"loading {path}"):
        if path.suffix == ".npy":
            a = np.load(path)
        elif path.suffix == ".csv":
            text = path.read_text().splitlines()
            skip = 0 if text and _is_numeric_row(text[0]) else 1
            a = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
            if like is not None and like.labels is not None and a.shape[1] == like.d + 1:
                a = a[:, :-1]
        else:
            raw = read_idx(path)
            a = dequantize_rescale(raw.reshape(raw.shape[0], -1))
        a = np.asarray(a, dtype=np.float64)
        return a[:, None] if a.ndim == 1 else a.reshape(a.shape[0], -1)


def _is_numeric_row(line):
    try:
        [float(v) for v in line.split(",")]
        return True
    except ValueError:
        return False


def _grid(spec, n, default_cols=10):
    if spec:
        try:
            r, c = (int(v) for v in spec.lower().split("x"))
        except ValueError:
            raise CommandError(f"bad --grid {spec!r}; expected ROWSxCOLS", EXIT_CONFIG) from None
        return r, c
    cols = min(default_cols, n)
    return max(1, min(10, n // cols)), cols


def _out_dir(args) -> Path:
    if args.out is None:
        raise CommandError("no output directory given (--out or [output] dir)", EXIT_CONFIG)
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _write_samples(x, shape, out: Path, grid, name="samples") -> dict:
    paths = {}
    np.save(out / f"{name}.npy", x)
    paths[name] = f"{name}.npy"
    if shape is not None and shape.dim == x.shape[1] and shape.channels in (1, 3):
        rows, cols = grid
        write_image_grid(x, shape, (rows, cols), out / f"{name}.png")
        paths[f"{name}_grid"] = f"{name}.png"
    elif x.shape[1] == 2:
        write_scatter(x, out / f"{name}.png")
        paths[f"{name}_grid"] = f"{name}.png"
    return paths


def _class_rows(x, classes, per_row):
    """Reorder samples so each grid row shows one class."""
    rows = []
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)[:per_row]
        if idx.size == per_row:
            rows.append(x[idx])
    if not rows:
        return x[:0]
    return np.concatenate(rows)


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_dict(cfg: FlowConfig) -> dict:
    out = {}
    for line in cfg.to_text().splitlines():
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _tracker(args, dataset, heldout):
    if heldout is None:
        return None
    every = args.trace_every or 0
    if every <= 0:
        return None
    return TraceRecorder(heldout, args.trace_projections or 200, seed=0, every=every)


def _finish_metrics(metrics, initial, final, heldout, tracker, out, outputs, proj=200):
    if heldout is not None:
        start = sw2_distance(initial, heldout, proj, seed=0)
        end = sw2_distance(final, heldout, proj, seed=0)
        metrics.update(sw2_initial=start, sw2_final=end, sw2_ratio=end / start if start else 0.0)
    if tracker is not None:
        write_trace_csv(tracker.trace(), out / "trace.csv")
        outputs["trace"] = "trace.csv"


def _heldout_points(args, dataset):
    if getattr(args, "heldout", None) is None:
        return None
    pts = _load_points(args.heldout, dataset)
    if dataset.occlusion is None and pts.shape[1] != dataset.d:
        raise CommandError(f"held-out samples have {pts.shape[1]} dims, data {dataset.d}",
                           EXIT_DATA)
    return pts


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    ds = _load_training(args)
    cfg = resolve_config(args, ds.shape)
    out = _out_dir(args)
    heldout = _heldout_points(args, ds)
    init = init_particles(cfg, ds.d)
    tracker = _tracker(args, ds, heldout)
    if tracker is not None:
        tracker.measure(init.x, 0)
    final, model = simulate(cfg, ds, init, conditional=False, record=bool(args.record_model),
                            callback=tracker)
    outputs = _write_samples(final.x, ds.shape, out, _grid(args.grid, final.m))
    metrics = {}
    _finish_metrics(metrics, init.x, final.x, heldout, tracker, out, outputs)
    if model is not None:
        save_model(model, out / "model.cswf")
        outputs["model"] = "model.cswf"
    RunManifest("generate", _config_dict(cfg), str(args.data), ds.digest.hex(), outputs,
                metrics).write(out)
    return EXIT_OK


def _particle_labels(args, cfg, ds: DatasetView):
    source = args.label_source or ("file" if args.label_file else "cycle")
    l = ds.l
    if source == "cycle":
        cls = np.arange(cfg.particles) % l
        return dict(labels=_one_hot_rows(cls, l))
    if source == "marginal":
        return dict(marginal=ds.y.mean(axis=0))
    if source == "dataset":
        return dict(dataset=ds)
    if args.label_file is None:
        raise CommandError("--label-source file needs --label-file", EXIT_CONFIG)
    with data_stage(f"reading {args.label_file}"):
        cls = np.loadtxt(args.label_file, dtype=np.int64, ndmin=1)
    if cls.size != cfg.particles or cls.min() < 0 or cls.max() >= l:
        raise CommandError(f"label file must hold {cfg.particles} classes in 0..{l - 1}",
                           EXIT_DATA)
    return dict(labels=_one_hot_rows(cls, l))


def _one_hot_rows(cls, l):
    y = np.zeros((cls.size, l))
    y[np.arange(cls.size), cls] = 1.0
    return y


def cmd_conditional(args) -> int:
    ds = _load_training(args, need_labels=True)
    cfg = resolve_config(args, ds.shape, defaults={"amplifier": 10})
    out = _out_dir(args)
    heldout = _heldout_points(args, ds)
    source = _particle_labels(args, cfg, ds)
    init = init_particles(cfg, ds.d, **source)
    tracker = _tracker(args, ds, heldout)
    if tracker is not None:
        tracker.measure(init.x, 0)
    final, model = run_cswf(cfg, ds, init, record=bool(args.record_model), callback=tracker)
    cls = np.argmax(final.y, axis=1)
    rows, cols = _grid(args.grid, final.m)
    ordered = _class_rows(final.x, cls, cols)
    outputs = {}
    np.save(out / "samples.npy", final.x)
    np.save(out / "labels.npy", cls)
    outputs.update(samples="samples.npy", labels="labels.npy")
    if ordered.shape[0]:
        outputs.update({k: v for k, v in _write_samples(
            ordered, ds.shape, out, (ordered.shape[0] // cols, cols), "class_grid").items()
            if k.endswith("_grid")})
    report = class_mean_report(final, ds.l)
    np.savez(out / "class_means.npz", classes=np.array(sorted(report)),
             counts=np.array([report[c].count for c in sorted(report)]),
             means=np.stack([report[c].mean for c in sorted(report)]))
    outputs["class_means"] = "class_means.npz"
    metrics = {"class_counts": {str(c): report[c].count for c in sorted(report)}}
    _finish_metrics(metrics, init.x, final.x, heldout, tracker, out, outputs)
    if model is not None:
        save_model(model, out / "model.cswf")
        outputs["model"] = "model.cswf"
    RunManifest("conditional", _config_dict(cfg), str(args.data), ds.digest.hex(), outputs,
                metrics).write(out)
    return EXIT_OK


def _mask(args, shape):
    try:
        if args.mask_file is not None:
            return OcclusionSpec(np.load(args.mask_file), "custom")
        return OcclusionSpec.named(args.mask or "bottom-half", shape)
    except (InvalidArgument, OSError, ValueError) as exc:
        raise CommandError(f"bad mask: {exc}", EXIT_CONFIG) from exc


def cmd_inpaint(args) -> int:
    if args.test_data is None:
        raise CommandError("inpaint needs --test-data", EXIT_CONFIG)
    count = args.count or 10
    per = args.samples_per_image or 8
    with data_stage(f"loading {args.test_data}"):
        raw = read_idx(args.test_data)
        raw = raw.reshape(raw.shape[0], -1)[:count]
        test = dequantize_rescale(raw)
    model = None
    if args.model is not None:
        with data_stage(f"loading {args.model}"):
            model = load_model(args.model)
        if model.layout.occlusion is None:
            raise CommandError("model was not recorded for inpainting", EXIT_DATA)
        split = model.layout.occlusion
        shape = split.shape
        cfg = model.config
        ds = None
    else:
        ds = _load_training(args)
        if ds.shape is None:
            raise CommandError("inpainting needs image data", EXIT_DATA)
        shape = ds.shape
        spec = _mask(args, shape)
        ds = ds.with_occlusion(spec)
        split = ds.occlusion
        cfg = resolve_config(args, shape, defaults={"amplifier": 1,
                                                   "particles": count * per})
        if cfg.particles != count * per:
            raise CommandError(f"particles must equal count x samples-per-image "
                               f"({count * per})", EXIT_CONFIG)
    if test.shape[1] != shape.dim:
        raise CommandError(f"test images have {test.shape[1]} pixels, expected {shape.dim}",
                           EXIT_DATA)
    count = test.shape[0]
    out = _out_dir(args)
    _, observed = split.split(test)
    y = np.repeat(observed, per, axis=0)
    cfg_init = replace(cfg, particles=count * per)
    if args.seed is not None:
        cfg_init.seed = args.seed
    init = init_particles(cfg_init, split.x_index.size, labels=y)
    if model is not None:
        final = sample_offline(model, init)
    else:
        final, model = run_cswf(cfg, ds, init, record=bool(args.record_model))
    # emitted images stay in the pixel range; observed pixels are already inside it
    filled = split.recombine(np.clip(final.x, -1.0, 1.0), final.y)
    occluded = split.recombine(np.full((count, split.x_index.size), -1.0), observed)
    rows = []
    for i in range(count):
        rows += [occluded[i:i + 1], filled[i * per:(i + 1) * per], test[i:i + 1]]
    panel = np.concatenate(rows)
    outputs = {}
    np.save(out / "inpainted.npy", filled)
    outputs["inpainted"] = "inpainted.npy"
    if shape.channels in (1, 3):
        write_image_grid(panel, shape, (count, per + 2), out / "inpaint.png")
        outputs["inpaint_grid"] = "inpaint.png"
    if args.record_model and args.model is None:
        save_model(model, out / "model.cswf")
        outputs["model"] = "model.cswf"
    digest = _file_digest(args.model) if args.model else ds.digest.hex()
    RunManifest("inpaint", _config_dict(cfg), str(args.model or args.data), digest, outputs,
                {"mask": split.x_index.size}).write(out)
    return EXIT_OK


def cmd_sample(args) -> int:
    with data_stage(f"loading {args.model}"):
        model = load_model(args.model)
    if model.layout.occlusion is not None:
        raise CommandError("inpainting models are replayed with 'inpaint --model'", EXIT_CONFIG)
    out = _out_dir(args)
    count = args.count or model.m
    cfg = replace(model.config, particles=count)
    if args.seed is not None:
        cfg.seed = args.seed
    l = model.l if model.conditional else 0
    if l:
        spec = args.labels or "cycle"
        if spec == "cycle":
            cls = np.arange(count) % l
        else:
            try:
                cls = np.array([int(v) for v in spec.split(",")])
            except ValueError:
                raise CommandError(f"bad --labels {spec!r}", EXIT_CONFIG) from None
            if cls.size == 1:
                cls = np.repeat(cls, count)
            if cls.size != count or cls.min() < 0 or cls.max() >= l:
                raise CommandError(f"--labels needs {count} classes in 0..{l - 1}", EXIT_CONFIG)
        init = init_particles(cfg, model.d, labels=_one_hot_rows(cls, l))
    else:
        init = init_particles(cfg, model.d)
        cls = None
    final = sample_offline(model, init)
    shape = model.layout.shape
    outputs = {}
    if cls is None:
        outputs.update(_write_samples(final.x, shape, out, _grid(args.grid, count)))
    else:
        np.save(out / "samples.npy", final.x)
        np.save(out / "labels.npy", cls)
        outputs.update(samples="samples.npy", labels="labels.npy")
        rows, cols = _grid(args.grid, count)
        ordered = _class_rows(final.x, cls, cols)
        if ordered.shape[0]:
            outputs.update({k: v for k, v in _write_samples(
                ordered, shape, out, (ordered.shape[0] // cols, cols), "class_grid").items()
                if k.endswith("_grid")})
    RunManifest("sample", _config_dict(cfg), str(args.model), _file_digest(args.model),
                outputs, {"model_data_digest": model.data_digest.hex()}).write(out)
    return EXIT_OK


def cmd_toy2d(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    n = args.n
    conditional = args.kind == "conditional"
    if args.data is not None:
        with data_stage(f"loading {args.data}"):
            ds = load_dataset(args.data, "csv")
        if conditional and ds.labels is None:
            raise CommandError("conditional toy needs a class column", EXIT_DATA)
        heldout = ds.x
    elif conditional:
        x, y = conditional_gaussian(n, rng)
        ds = DatasetView(x, y)
        heldout = conditional_gaussian(n, rng)
    else:
        ds = DatasetView(crossed_mixture(n, rng), None)
        heldout = crossed_mixture(n, rng)
    seed = args.seed if args.seed is not None else 0
    try:
        cfg = FlowConfig(amplifier=args.amplifier if conditional else 0.0,
                         step_size=args.step_size, steps=args.steps,
                         projections=args.projections, particles=n, seed=seed,
                         resample=conditional, threads=args.threads or 1,
                         block=args.block).validate()
    except InvalidArgument as exc:
        raise CommandError(f"configuration error: {exc}", EXIT_CONFIG) from exc
    snaps, snap_steps = [], []

    def keep(p):
        if args.snapshot_every and p.step % args.snapshot_every == 0:
            snaps.append(p.x.copy())
            snap_steps.append(p.step)

    outputs = {}
    if conditional:
        if args.data is None:
            y0 = binary_conditions(n)[:, None]
        else:
            y0 = ds.y[np.arange(n) % ds.n]
        init = init_particles(cfg, ds.d, labels=y0, rng=rng)
        snaps.append(init.x.copy())
        snap_steps.append(0)
        tracker = None
        final, _ = run_cswf(cfg, ds, init, callback=keep)
        pts = np.column_stack([final.x, final.y])
        np.savetxt(out / "particles.csv", pts, delimiter=",", header="x,y", comments="")
        write_scatter(pts, out / "particles.png")
        write_scatter(np.column_stack([ds.x, ds.y]), out / "target.png")
        outputs.update(particles="particles.csv", scatter="particles.png", target="target.png")
        metrics = {}
        for c in np.unique(final.y[:, 0]):
            sel = final.y[:, 0] == c
            metrics[f"class_{c:g}"] = {"mean": float(final.x[sel].mean()),
                                       "var": float(final.x[sel].var())}
    else:
        init = ParticleSet(crossed_mixture(n, rng, initial=True), None) if args.data is None \
            else init_particles(cfg, ds.d, rng=rng)
        tracker = TraceRecorder(heldout, 200, seed=0)
        tracker.measure(init.x, 0)
        snaps.append(init.x.copy())
        snap_steps.append(0)

        def both(p):
            tracker(p)
            keep(p)

        final = simulate(cfg, ds, init, conditional=False, callback=both)[0]
        np.savetxt(out / "particles.csv", final.x, delimiter=",", header="x,y", comments="")
        write_scatter(final.x, out / "particles.png")
        write_scatter(ds.x, out / "target.png")
        write_trace_csv(tracker.trace(), out / "trace.csv")
        outputs.update(particles="particles.csv", scatter="particles.png", target="target.png",
                       trace="trace.csv")
        metrics = {"sw2_initial": tracker.values[0], "sw2_final": tracker.values[-1]}
    np.savez(out / "snapshots.npz", steps=np.array(snap_steps), x=np.stack(snaps))
    outputs["snapshots"] = "snapshots.npz"
    RunManifest("toy2d", _config_dict(cfg), str(args.data or f"builtin:{args.kind}"),
                ds.digest.hex(), outputs, metrics).write(out)
    return EXIT_OK


def cmd_swdist(args) -> int:
    a = _load_points(args.a)
    b = _load_points(args.b)
    if a.shape[1] != b.shape[1]:
        raise CommandError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}", EXIT_DATA)
    if args.projections < 1:
        raise CommandError("--projections must be positive", EXIT_CONFIG)
    value = sw2_distance(a, b, args.projections, seed=args.seed or 0)
    print(f"{value:.10g}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "conditional": cmd_conditional,
    "inpaint": cmd_inpaint,
    "sample": cmd_sample,
    "toy2d": cmd_toy2d,
    "swdist": cmd_swdist,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.file_sections = _read_config_file(args.config) if args.config else {}
        _apply_file_defaults(args, args.file_sections)
        return COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"cswf: error: {exc}", file=sys.stderr)
        return exc.code
    except NumericError as exc:
        print(f"cswf: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"cswf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgument as exc:
        print(f"cswf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
