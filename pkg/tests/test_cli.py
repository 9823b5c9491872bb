import json

import numpy as np
import pytest

from cswf.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, build_parser, main, resolve_config
from cswf.data_io import load_model, read_image, write_idx


@pytest.fixture
def digits(tmp_path):
    """Forty 4x4 "images" of two classes with their labels."""
    rng = np.random.default_rng(0)
    cls = np.arange(40) % 2
    base = np.where(cls[:, None, None] == 0, 60, 190)
    images = np.clip(base + rng.integers(-30, 30, (40, 4, 4)), 0, 255).astype(np.uint8)
    write_idx(tmp_path / "img.idx", images)
    write_idx(tmp_path / "lab.idx", cls.astype(np.uint8))
    write_idx(tmp_path / "test.idx", images[:3])
    return tmp_path


@pytest.fixture(autouse=True)
def fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")


def run(*argv):
    return main([str(a) for a in argv])


FLOW = ("--steps", 6, "--projections", 8, "--step-size", 2.0)


def test_generate_outputs_and_determinism(digits, tmp_path):
    args = ("--seed", 3, "generate", "--data", digits / "img.idx", "--particles", 20, *FLOW,
            "--heldout", digits / "img.idx", "--trace-every", 2, "--record-model")
    assert run(*args, "--out", tmp_path / "a") == EXIT_OK
    assert run(*args, "--out", tmp_path / "b") == EXIT_OK
    for name in ("samples.npy", "samples.png", "trace.csv", "manifest.json", "model.cswf"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["command"] == "generate" and man["config"]["seed"] == "3"
    assert man["metrics"]["sw2_final"] < man["metrics"]["sw2_initial"]
    assert read_image(tmp_path / "a" / "samples.png").shape == (8, 40)


def test_conditional_xi_zero_equals_generate(digits, tmp_path):
    common = ("--data", digits / "img.idx", "--particles", 20, *FLOW)
    assert run("generate", *common, "--out", tmp_path / "g") == EXIT_OK
    assert run("conditional", *common, "--labels", digits / "lab.idx", "--amplifier", 0,
               "--out", tmp_path / "c") == EXIT_OK
    g = np.load(tmp_path / "g" / "samples.npy")
    c = np.load(tmp_path / "c" / "samples.npy")
    assert np.array_equal(g, c)


def test_conditional_rows_per_class(digits, tmp_path):
    assert run("conditional", "--data", digits / "img.idx", "--labels", digits / "lab.idx",
               "--particles", 20, *FLOW, "--grid", "10x2", "--out", tmp_path / "c") == EXIT_OK
    out = tmp_path / "c"
    # IDX labels are one-hot over ten classes; cycling gives two particles each
    assert read_image(out / "class_grid.png").shape == (40, 8)
    means = np.load(out / "class_means.npz")
    assert list(means["classes"]) == list(range(10)) and means["counts"].sum() == 20
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["amplifier"] == "10.0"


def test_conditional_needs_labels(digits, tmp_path):
    assert run("conditional", "--data", digits / "img.idx", *FLOW,
               "--out", tmp_path / "c") == EXIT_DATA


def test_inpaint_keeps_observed_pixels(digits, tmp_path):
    out = tmp_path / "p"
    assert run("inpaint", "--data", digits / "img.idx", "--test-data", digits / "test.idx",
               "--mask", "left-half", "--count", 3, "--samples-per-image", 2, *FLOW,
               "--quantiles", "full", "--record-model", "--out", out) == EXIT_OK
    filled = np.load(out / "inpainted.npy")
    raw = np.frombuffer((digits / "test.idx").read_bytes()[16:], dtype=np.uint8)
    test = 2 * ((raw.reshape(3, 16) + 0.5) / 256) - 1
    right = np.tile([False, False, True, True], 4)
    assert np.array_equal(filled[:, right], np.repeat(test[:, right], 2, axis=0))
    assert np.all(np.abs(filled) <= 1.0)
    assert read_image(out / "inpaint.png").shape == (12, 16)
    again = tmp_path / "q"
    assert run("inpaint", "--model", out / "model.cswf", "--test-data", digits / "test.idx",
               "--count", 3, "--samples-per-image", 2, "--out", again) == EXIT_OK
    assert np.array_equal(np.load(again / "inpainted.npy"), filled)


def test_inpaint_rejects_full_mask(digits, tmp_path):
    np.save(tmp_path / "mask.npy", np.zeros((1, 4, 4), dtype=bool))
    assert run("inpaint", "--data", digits / "img.idx", "--test-data", digits / "test.idx",
               "--mask-file", tmp_path / "mask.npy", *FLOW, "--out", tmp_path / "p") == EXIT_CONFIG


def test_sample_replays_recording(digits, tmp_path):
    rec = tmp_path / "rec"
    assert run("conditional", "--data", digits / "img.idx", "--labels", digits / "lab.idx",
               "--particles", 20, *FLOW, "--quantiles", "full", "--record-model",
               "--out", rec) == EXIT_OK
    rep = tmp_path / "rep"
    assert run("sample", "--model", rec / "model.cswf", "--out", rep) == EXIT_OK
    assert np.array_equal(np.load(rep / "samples.npy"), np.load(rec / "samples.npy"))
    one = tmp_path / "one"
    assert run("--seed", 9, "sample", "--model", rec / "model.cswf", "--count", 6,
               "--labels", "1", "--out", one) == EXIT_OK
    assert np.all(np.load(one / "labels.npy") == 1)
    man = json.loads((one / "manifest.json").read_text())
    assert man["metrics"]["model_data_digest"] == load_model(rec / "model.cswf").data_digest.hex()
    assert run("sample", "--model", rec / "model.cswf", "--labels", "12",
               "--out", one) == EXIT_CONFIG


def test_toy2d_both_kinds(tmp_path):
    assert run("toy2d", "--n", 300, "--steps", 20, "--projections", 16, "--snapshot-every", 10,
               "--out", tmp_path / "j") == EXIT_OK
    snaps = np.load(tmp_path / "j" / "snapshots.npz")
    assert list(snaps["steps"]) == [0, 10, 20] and snaps["x"].shape == (3, 300, 2)
    assert (tmp_path / "j" / "trace.csv").exists()
    assert run("toy2d", "--kind", "conditional", "--n", 300, "--steps", 20, "--projections", 16,
               "--out", tmp_path / "c") == EXIT_OK
    metrics = json.loads((tmp_path / "c" / "manifest.json").read_text())["metrics"]
    assert set(metrics) == {"class_-1", "class_1"}


def test_toy2d_from_csv(tmp_path):
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((100, 2))
    np.savetxt(tmp_path / "pts.csv", np.column_stack([pts, np.arange(100) % 2]),
               delimiter=",", header="x,y,c", comments="")
    assert run("toy2d", "--data", tmp_path / "pts.csv", "--n", 50, "--steps", 5,
               "--projections", 8, "--out", tmp_path / "o") == EXIT_OK


def test_swdist(tmp_path, capsys):
    a = np.random.default_rng(2).standard_normal((100, 3))
    np.save(tmp_path / "a.npy", a)
    np.save(tmp_path / "b.npy", a)
    assert run("swdist", tmp_path / "a.npy", tmp_path / "b.npy") == EXIT_OK
    assert float(capsys.readouterr().out) == 0.0
    np.save(tmp_path / "c.npy", a[:, :2])
    assert run("swdist", tmp_path / "a.npy", tmp_path / "c.npy") == EXIT_DATA


def test_config_file_and_precedence(digits, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(f"[flow]\nsteps = 4\nprojections = 8\nparticles = 10\n"
                   f"[data]\npath = {digits / 'img.idx'}\n[output]\ndir = {tmp_path / 'o'}\n")
    assert run("--config", ini, "generate", "--steps", 5) == EXIT_OK
    cfg = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
    assert cfg["steps"] == "5" and cfg["projections"] == "8"
    ini.write_text("[flow]\nsteps = -3\n")
    assert run("--config", ini, "generate", "--data", digits / "img.idx",
               "--out", tmp_path / "x") == EXIT_CONFIG
    ini.write_text("[bogus]\n")
    assert run("--config", ini, "generate") == EXIT_CONFIG


def test_preset_resolves_mnist_schedule():
    args = build_parser().parse_args(["generate", "--preset", "mnist"])
    args.file_sections = {}
    cfg = resolve_config(args, None)
    assert len(cfg.schedule.entries()) == 35
    assert (cfg.projections, cfg.particles) == (10000, 250_000)


@pytest.mark.parametrize("argv,code", [
    (["generate", "--out", "/nonexistent/x"], EXIT_CONFIG),
    (["generate", "--data", "/nonexistent.idx", "--out", "OUT"], EXIT_DATA),
    (["generate", "--data", "IMG", "--schedule", "cifar10", "--out", "OUT"], EXIT_CONFIG),
    (["generate", "--data", "IMG", "--grid", "axb", "--steps", "1", "--projections", "2",
      "--particles", "4", "--out", "OUT"], EXIT_CONFIG),
])
def test_exit_codes(digits, tmp_path, argv, code):
    subst = {"IMG": str(digits / "img.idx"), "OUT": str(tmp_path / "o")}
    assert main([subst.get(a, a) for a in argv]) == code


def test_numeric_error_exit(digits, tmp_path):
    assert run("generate", "--data", digits / "img.idx", "--particles", 20, "--steps", 40,
               "--projections", 8, "--step-size", 1e300, "--out", tmp_path / "o") == 4
