import json

import numpy as np
import pytest

from ordsurf.cli import main
from ordsurf.net import Checkpoint
from ordsurf.raster import ImageTile, RasterGrid, load_raster, save_image, save_raster
from ordsurf.trainer import read_epoch_log

TINY = ["--stem-channels", "4", "--stage-channels", "4,4,4,4", "--blocks-per-stage", "1,1,1,1",
        "--aspp-rates", "1,2,3", "--aspp-channels", "4", "--K", "4", "--patch-size", "16",
        "--epochs", "2", "--patches-per-epoch", "8", "--batch-size", "4"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n", "5", "--tile-size", "48",
                 "--n-buildings", "1,3", "--footprint-px", "6,14"]) == 0
    assert main(["train", "--data", str(root / "data" / "manifest.csv"), "--out", str(root / "m.ordn"),
                 "--figures", str(root / "figs"), *TINY]) == 0
    return root


def test_thresholds_output(capsys):
    code, out, _ = run(capsys, "thresholds", "--kind", "sid", "--a", 0, "--b", 99, "--k", 2)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "i,threshold,height_m,bin_width_m"
    assert lines[1] == "0,0.000000,0.000000,9.000000"
    assert lines[2] == "1,2.302585,9.000000,90.000000"
    assert lines[3] == "2,4.605170,99.000000,"


def test_thresholds_plot(tmp_path, capsys):
    code, _, _ = run(capsys, "thresholds", "--k", 16, "--plot", tmp_path / "bins.png")
    assert code == 0 and (tmp_path / "bins.png").stat().st_size > 0


def test_synth_and_train_outputs(trained):
    rows = (trained / "data" / "manifest.csv").read_text().splitlines()
    assert rows[0] == "index,image,dsm,max_height" and len(rows) == 6
    ckpt = Checkpoint.load(trained / "m.ordn")
    assert ckpt.config.K == 4 and ckpt.scheme.K == 4
    log = read_epoch_log(trained / "m.epochs.csv")
    assert [r.epoch for r in log] == [0, 1]
    assert (trained / "figs" / "training_curves.png").exists()


def test_train_is_reproducible(trained, tmp_path):
    args = ["train", "--data", str(trained / "data" / "manifest.csv"), "--out", str(tmp_path / "again.ordn"), *TINY]
    assert main(args) == 0
    assert (tmp_path / "again.ordn").read_bytes() == (trained / "m.ordn").read_bytes()


def test_train_config_file_and_flag_precedence(trained, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs = 1\nlr_head = 0.01\n")
    args = ["train", "--data", str(trained / "data" / "manifest.csv"), "--out", str(tmp_path / "c.ordn"),
            "--config", str(cfg), *TINY[:-6], "--patches-per-epoch", "4", "--batch-size", "4"]
    assert main(args) == 0
    log = read_epoch_log(tmp_path / "c.epochs.csv")
    assert len(log) == 1 and log[0].lr_head == 0.01 and log[0].lr_backbone == pytest.approx(0.001)
    args[args.index("--config") + 1:args.index("--config") + 1] = []
    assert main(args + ["--epochs", "2"]) == 0
    assert len(read_epoch_log(tmp_path / "c.epochs.csv")) == 2


@pytest.mark.parametrize("width,cols", [(256, 1), (510, 2)])
def test_predict_layouts(trained, tmp_path, capsys, width, cols):
    img = ImageTile(np.random.default_rng(0).random((256, width, 3)))
    save_image(img, tmp_path / "scene.ppm")
    out = tmp_path / "pred"
    code, text, _ = run(capsys, "predict", "--checkpoint", trained / "m.ordn", "--image", tmp_path / "scene.ppm",
                        "--out", out)
    assert code == 0
    stitched = load_raster(out / "stitched.hmap")
    assert (stitched.width, stitched.height) == (width, 256)
    assert len(list(out.glob("patch_r*_c*.hmap"))) == cols
    assert (out / "layout.csv").read_text().splitlines()[0] == "row,col,x0,y0,size"
    assert (out / "shifts.csv").read_text().splitlines()[0] == "row,col,x0,y0,shift"

    # restitching the written patches reproduces the stitched raster
    code, _, _ = run(capsys, "stitch", "--layout", out / "layout.csv", "--patches", out, "--out", tmp_path / "re.hmap")
    assert code == 0
    assert np.array_equal(load_raster(tmp_path / "re.hmap").data, stitched.data)

    out2 = tmp_path / "pred2"
    assert run(capsys, "predict", "--checkpoint", trained / "m.ordn", "--image", tmp_path / "scene.ppm",
               "--out", out2)[0] == 0
    assert (out2 / "stitched.hmap").read_bytes() == (out / "stitched.hmap").read_bytes()


def test_predict_directory(trained, tmp_path, capsys):
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for name in ("a", "b"):
        save_image(ImageTile(np.random.default_rng(1).random((16, 24, 3))), imgs / f"{name}.ppm")
    code, _, _ = run(capsys, "predict", "--checkpoint", trained / "m.ordn", "--image", imgs, "--out",
                     tmp_path / "o", "--patch", 16)
    assert code == 0
    assert (tmp_path / "o" / "a" / "stitched.hmap").exists() and (tmp_path / "o" / "b" / "stitched.hmap").exists()


def test_eval_and_report(tmp_path, capsys):
    save_raster(RasterGrid(np.full((2, 2), 2.0)), tmp_path / "t.hmap")
    save_raster(RasterGrid(np.full((2, 2), 4.0)), tmp_path / "p.hmap")
    save_raster(RasterGrid(np.full((2, 2), 2.5)), tmp_path / "q.hmap")
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "p.hmap", "--truth", tmp_path / "t.hmap",
                       "--json", tmp_path / "m.json", "--figure", tmp_path / "f.png")
    assert code == 0
    report = json.loads((tmp_path / "m.json").read_text())
    assert report["rel"] == 1.0 and report["rmse"] == 2.0 and report["delta3"] == 0.0
    assert "Rel" in out and (tmp_path / "f.png").exists()
    code, out, _ = run(capsys, "report", "--truth", tmp_path / "t.hmap", "--pred", f"ord={tmp_path / 'q.hmap'}",
                       "--pred", f"mse={tmp_path / 'p.hmap'}", "--out", tmp_path / "rep")
    assert code == 0
    assert (tmp_path / "rep" / "comparison.png").exists()
    assert json.loads((tmp_path / "rep" / "ord.json").read_text())["rel"] == 0.25


def test_heatmap_command(tmp_path, capsys):
    save_raster(RasterGrid(np.arange(6, dtype=np.float32).reshape(2, 3)), tmp_path / "h.hmap")
    assert run(capsys, "heatmap", tmp_path / "h.hmap", "--out", tmp_path / "h.ppm")[0] == 0
    assert (tmp_path / "h.ppm").read_bytes().startswith(b"P6\n3 2\n255\n")
    assert run(capsys, "heatmap", tmp_path / "h.hmap", "--diff", tmp_path / "h.hmap", "--out", tmp_path / "d.ppm")[0] == 0


@pytest.mark.parametrize("argv", [
    ["eval", "--pred", "missing.hmap", "--truth", "missing.hmap"],
    ["thresholds", "--a", "5", "--b", "1"],
    ["report", "--truth", "missing.hmap", "--pred", "noequals", "--out", "rep"],
])
def test_errors_are_single_line(tmp_path, capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 1
    assert err.count("\n") == 1 and err.startswith("ordsurf: error: ")


def test_bad_magic_reported(tmp_path, capsys):
    (tmp_path / "x.hmap").write_bytes(b"XMAP" + bytes(12))
    code, _, err = run(capsys, "heatmap", tmp_path / "x.hmap", "--out", tmp_path / "x.ppm")
    assert code == 1 and "RasterFormatError" in err and err.count("\n") == 1


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["thresholds", "--k", "notanumber"])
    assert exc.value.code == 2
    assert capsys.readouterr().err.count("\n") == 1


def test_verbose_flag_either_side(capsys):
    assert run(capsys, "-v", "thresholds", "--k", 2)[0] == 0
    assert run(capsys, "thresholds", "--k", 2, "-v")[0] == 0
