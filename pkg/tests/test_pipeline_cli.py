"""Staged pipeline runs and the CLI surface (flags, files, exit codes)."""

import json

import numpy as np
import pytest

from magcrop.adjust import compress
from magcrop.cli import main
from magcrop.crop import CropBox
from magcrop.errors import MissingInput
from magcrop.fusion import ProjectionWeights, save_projection_weights
from magcrop.granularity import save_classifier_weights
from magcrop.io_formats import (
    ImagePlane,
    PipelineConfig,
    Tensor,
    read_image,
    read_tensor,
    write_image,
    write_tensor,
)
from magcrop.pipeline import PipelineInputs, run_pipeline
from magcrop.synth import SceneSpec, Target, attention_for, render_scene

from conftest import philox

SCENE_CFG = """\
width = 256
height = 256
seed = 12
noise_floor = 0.02
target = 96, 120, 80, 70, 0.9, rect
"""


@pytest.fixture()
def scene_file(tmp_path):
    path = tmp_path / "scene.cfg"
    path.write_text(SCENE_CFG)
    return path


@pytest.fixture()
def scene():
    return SceneSpec(
        width=256,
        height=256,
        targets=(Target(cx=96, cy=120, width=80, height=70),),
        noise_floor=0.02,
        seed=12,
    )


class TestRunPipeline:
    def test_image_granularity(self, tmp_path, scene):
        image, _ = render_scene(scene)
        run = run_pipeline(
            PipelineConfig(),
            PipelineInputs(image=image, query="Describe the scene"),
            out_dir=tmp_path / "out",
        )
        assert str(run.granularity) == "image"
        assert (run.adjusted.width, run.adjusted.height) == (100, 100)
        assert run.boxes == ()
        manifest = (tmp_path / "out" / "manifest.txt").read_text()
        assert "boxes.txt" not in manifest
        assert "adjusted.png" in manifest

    def test_synthetic_pixel_run(self, tmp_path, scene):
        run = run_pipeline(
            PipelineConfig(),
            PipelineInputs(query="segment the target", scene=scene),
            out_dir=tmp_path / "out",
        )
        assert str(run.granularity) == "pixel"
        assert len(run.boxes) == 2
        box1, box2 = run.boxes
        assert box2.area < box1.area
        assert box1.contains(box2)
        assert run.mask is not None
        assert (tmp_path / "out" / "mask.png").exists()
        manifest = (tmp_path / "out" / "manifest.txt").read_text()
        for name in ("boxes.txt", "heatmap_stage1.magt", "heatmap_stage2.magt", "adjusted.png"):
            assert name in manifest

    def test_box_follows_target(self, scene):
        run = run_pipeline(
            PipelineConfig(), PipelineInputs(query="segment the target", scene=scene)
        )
        t = scene.targets[0]
        box1 = run.boxes[0]
        assert box1.x0 <= t.cx < box1.x1
        assert box1.y0 <= t.cy < box1.y1

    def test_pixel_without_attention_or_synthetic(self, scene):
        image, _ = render_scene(scene)
        with pytest.raises(MissingInput) as err:
            run_pipeline(PipelineConfig(), PipelineInputs(image=image, query="segment it"))
        assert err.value.stage == "heatmap"

    def test_region_with_explicit_slab(self, scene):
        image, _ = render_scene(scene)
        slab = attention_for(scene, 0, (32, 32), 4, region=CropBox(x0=0, y0=0, x1=256, y1=256))
        run = run_pipeline(
            PipelineConfig(),
            PipelineInputs(image=image, query="where is the target", slab1=slab),
        )
        assert str(run.granularity) == "region"
        assert len(run.boxes) == 1
        assert (run.adjusted.width, run.adjusted.height) == (256, 256)

    def test_rerun_is_byte_identical(self, tmp_path, scene):
        inputs = PipelineInputs(query="segment the target", scene=scene)
        run_a = run_pipeline(PipelineConfig(), inputs, out_dir=tmp_path / "a")
        run_b = run_pipeline(PipelineConfig(), inputs, out_dir=tmp_path / "b")
        assert run_a.files == run_b.files
        assert (tmp_path / "a" / "manifest.txt").read_text() == (
            tmp_path / "b" / "manifest.txt"
        ).read_text()


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestCliGranularity:
    def test_keyword_path(self, capsys):
        assert run_cli("granularity", "--query", "segment the ship") == 0
        assert capsys.readouterr().out.strip() == "pixel"

    def test_embedding_path(self, tmp_path, capsys, classifier_weights, fixture_embedding):
        wdir = tmp_path / "weights"
        save_classifier_weights(classifier_weights, wdir)
        emb = tmp_path / "e.magt"
        write_tensor(Tensor.from_array(fixture_embedding), emb)
        assert run_cli("granularity", "--embedding", emb, "--weights-dir", wdir) == 0
        out = capsys.readouterr().out.split()
        assert out[0] in ("image", "region", "pixel")
        probs = [float(v) for v in out[1:4]]
        assert abs(sum(probs) - 1.0) < 1e-6

    def test_missing_inputs_exit_2(self, capsys):
        assert run_cli("granularity") == 2


class TestCliHeatmapAndCropBox:
    def test_heatmap_then_crop_box(self, tmp_path, capsys, scene):
        slab = attention_for(scene, 0, (32, 32), 4)
        attn, grad = tmp_path / "a.magt", tmp_path / "g.magt"
        write_tensor(Tensor.from_array(slab.attn), attn)
        write_tensor(Tensor.from_array(slab.grad), grad)
        hout = tmp_path / "h.magt"
        render = tmp_path / "h.png"
        assert run_cli("heatmap", "--attn", attn, "--grad", grad, "--out", hout, "--render", render) == 0
        h = read_tensor(hout)
        assert h.shape == (32, 32)
        assert render.exists()

        assert run_cli("crop-box", "--heatmap", hout, "--width", 256, "--height", 256) == 0
        x0, y0, x1, y1, score = capsys.readouterr().out.split()
        box1 = CropBox(x0=int(x0), y0=int(y0), x1=int(x1), y1=int(y1))
        t = scene.targets[0]
        assert box1.x0 <= t.cx < box1.x1 and box1.y0 <= t.cy < box1.y1

        parent = f"{box1.x0},{box1.y0},{box1.x1},{box1.y1}"
        assert run_cli(
            "crop-box", "--heatmap", hout, "--width", 256, "--height", 256, "--parent", parent
        ) == 0
        x0b, y0b, x1b, y1b, _ = capsys.readouterr().out.split()
        child = CropBox(x0=int(x0b), y0=int(y0b), x1=int(x1b), y1=int(y1b))
        assert child.area < box1.area
        assert box1.contains(child)

    def test_bad_tensor_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.magt"
        bad.write_bytes(b"XXXX junk")
        assert run_cli("heatmap", "--attn", bad, "--grad", bad, "--out", tmp_path / "o.magt") == 2

    def test_non_square_tokens_need_grid(self, tmp_path, capsys):
        attn = np.full((6, 2), 0.1)
        a, g = tmp_path / "a.magt", tmp_path / "g.magt"
        write_tensor(Tensor.from_array(attn), a)
        write_tensor(Tensor.from_array(np.ones((6, 2))), g)
        assert run_cli("heatmap", "--attn", a, "--grad", g, "--out", tmp_path / "h.magt") == 2
        assert (
            run_cli("heatmap", "--attn", a, "--grad", g, "--grid", "2,3", "--out", tmp_path / "h.magt")
            == 0
        )


class TestCliAdjust:
    def test_single_image_report(self, tmp_path, capsys):
        img = ImagePlane(pixels=philox(31).integers(0, 256, (400, 400, 1), dtype=np.uint8))
        src = tmp_path / "in.png"
        write_image(img, src)
        out = tmp_path / "out.png"
        code = run_cli(
            "adjust", "--image", src, "--granularity", "image", "--out", out, "--report"
        )
        assert code == 0
        report = capsys.readouterr().out
        assert "tokens_before = 841" in report  # ceil(400/14)^2 = 29^2
        assert "tokens_after = 64" in report  # ceil(100/14)^2 = 8^2
        assert read_image(out).width == 100

    def test_pixel_boxes(self, tmp_path):
        img = ImagePlane(pixels=philox(32).integers(0, 256, (200, 200, 1), dtype=np.uint8))
        src = tmp_path / "in.png"
        write_image(img, src)
        out = tmp_path / "out.png"
        code = run_cli(
            "adjust",
            "--image", src,
            "--granularity", "pixel",
            "--box1", "40,40,160,160",
            "--box2", "80,80,120,120",
            "--out", out,
        )
        assert code == 0
        result = read_image(out)
        assert np.array_equal(
            result.pixels[80:120, 80:120], img.pixels[80:120, 80:120]
        )

    def test_batch_mode(self, tmp_path, capsys):
        rng = philox(33)
        src_dir = tmp_path / "batch"
        src_dir.mkdir()
        for name in ("b.png", "a.png", "c.png"):
            write_image(
                ImagePlane(pixels=rng.integers(0, 256, (64, 64, 1), dtype=np.uint8)),
                src_dir / name,
            )
        out_dir = tmp_path / "out"
        code = run_cli(
            "adjust", "--granularity", "image", "--batch", src_dir, "--out-dir", out_dir
        )
        assert code == 0
        names = [l for l in capsys.readouterr().out.splitlines() if l and not l.startswith(" ")]
        assert names == ["a.png", "b.png", "c.png"]
        assert sorted(p.name for p in out_dir.glob("*.png")) == ["a.png", "b.png", "c.png"]
        assert read_image(out_dir / "a.png").width == 100


class TestCliFuseMaskAndEval:
    def test_fuse_mask_end_to_end(self, tmp_path, capsys):
        rng = philox(34)
        hidden = 16
        proj = ProjectionWeights(
            W1=rng.standard_normal((hidden, 4096)) * 0.01,
            b1=rng.standard_normal(hidden),
            W2=rng.standard_normal((256, hidden)) * 0.1,
            b2=rng.standard_normal(256) * 0.1,
        )
        pdir = tmp_path / "proj"
        save_projection_weights(proj, pdir)
        tokens = tmp_path / "tokens.magt"
        write_tensor(Tensor.from_array(rng.standard_normal((2, 4096))), tokens)
        fpaths = []
        for i, size in enumerate((8, 16, 32)):
            f = tmp_path / f"f{i}.magt"
            write_tensor(Tensor.from_array(rng.standard_normal((256, size, size))), f)
            fpaths.append(f)
        mask_png = tmp_path / "mask.png"
        prob = tmp_path / "prob.magt"
        code = run_cli(
            "fuse-mask",
            "--tokens", tokens,
            "--proj-dir", pdir,
            "--features", *fpaths,
            "--beta", "0.5,0.5",
            "--omega", "0.2,0.3,0.5",
            "--width", 64,
            "--height", 64,
            "--out", mask_png,
            "--out-prob", prob,
        )
        assert code == 0
        img = read_image(mask_png)
        assert (img.height, img.width) == (64, 64)
        assert set(np.unique(img.pixels)) <= {0, 255}
        values = read_tensor(prob).data
        assert values.shape == (64, 64)
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_eval_seg_json(self, tmp_path, capsys):
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        pred_dir.mkdir(), gt_dir.mkdir()

        def write_mask(path, bits):
            write_image(ImagePlane(pixels=(bits.astype(np.uint8) * 255)[:, :, None]), path)

        a = np.zeros((8, 8), dtype=bool)
        a[:4, :4] = True
        write_mask(pred_dir / "s1.png", a)
        write_mask(gt_dir / "s1.png", a)
        b = np.zeros((8, 8), dtype=bool)
        b[0, 0] = True
        c = np.zeros((8, 8), dtype=bool)
        c[7, 7] = True
        write_mask(pred_dir / "s2.png", b)
        write_mask(gt_dir / "s2.png", c)

        assert run_cli("eval-seg", "--pred-dir", pred_dir, "--gt-dir", gt_dir, "--json") == 0
        report = json.loads(capsys.readouterr().out)
        assert report["n_samples"] == 2
        assert report["miou"] == 0.5
        assert report["p_at_50"] == 0.5

    def test_eval_seg_missing_prediction(self, tmp_path):
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        pred_dir.mkdir(), gt_dir.mkdir()
        write_image(ImagePlane(pixels=np.zeros((4, 4, 1), dtype=np.uint8)), gt_dir / "x.png")
        assert run_cli("eval-seg", "--pred-dir", pred_dir, "--gt-dir", gt_dir) == 2

    def test_siou(self, capsys):
        assert run_cli("siou", "--pred", "large storage tank", "--gt", "storage tank") == 0
        assert float(capsys.readouterr().out) == pytest.approx(2 / 3)


class TestCliSynthAndPipeline:
    def test_synth_outputs(self, tmp_path, scene_file):
        out_dir = tmp_path / "synth"
        assert run_cli("synth", "--spec", scene_file, "--out-dir", out_dir) == 0
        names = {line.split("\t")[0] for line in (out_dir / "manifest.txt").read_text().splitlines()}
        assert {"image.png", "mask_000.png", "attn.magt", "grad.magt", "query.magt"} <= names
        assert {"features_0.magt", "features_1.magt", "features_2.magt"} <= names
        attn = read_tensor(out_dir / "attn.magt")
        assert attn.shape == (64, 4)  # 8x8 grid, 4 text tokens
        for name in names:
            assert (out_dir / name).exists()

    def test_pipeline_synthetic(self, tmp_path, scene_file, capsys):
        out_dir = tmp_path / "run"
        code = run_cli(
            "pipeline",
            "--synthetic",
            "--scene", scene_file,
            "--query", "segment the target",
            "--out-dir", out_dir,
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "granularity pixel" in out
        assert (out_dir / "mask.png").exists()
        manifest = (out_dir / "manifest.txt").read_text()
        assert "scene.png" in manifest and "boxes.txt" in manifest

    def test_pipeline_missing_input_exit_2(self, tmp_path, scene_file):
        img, _ = render_scene(
            SceneSpec(width=64, height=64, targets=(), seed=0)
        )
        src = tmp_path / "img.png"
        write_image(img, src)
        code = run_cli(
            "pipeline", "--image", src, "--query", "segment it", "--out-dir", tmp_path / "o"
        )
        assert code == 2

    def test_pipeline_rerun_identical(self, tmp_path, scene_file):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert (
                run_cli(
                    "pipeline",
                    "--synthetic",
                    "--scene", scene_file,
                    "--query", "segment the target",
                    "--out-dir", out,
                )
                == 0
            )
        ma = (a / "manifest.txt").read_text()
        mb = (b / "manifest.txt").read_text()
        assert ma == mb


def test_internal_error_exit_3(monkeypatch, capsys):
    import magcrop.cli as cli

    def boom(args):
        raise RuntimeError("wires crossed")

    monkeypatch.setattr(cli, "cmd_siou", boom)
    parser = cli.build_parser()
    args = parser.parse_args(["siou", "--pred", "a", "--gt", "b"])
    args.func = boom
    monkeypatch.setattr(cli, "build_parser", lambda: parser)
    monkeypatch.setattr(parser, "parse_args", lambda argv=None: args)
    assert cli.main(["siou", "--pred", "a", "--gt", "b"]) == 3
    assert "internal error" in capsys.readouterr().err


def test_module_errors_carry_stage_name(scene):
    # a config whose smallest candidate scale still cannot shrink inside
    # the parent forces a box-refine failure
    from magcrop.errors import MagCropError

    cfg = PipelineConfig(grid_cells=8, candidate_scales=(8,))
    with pytest.raises(MagCropError) as err:
        run_pipeline(cfg, PipelineInputs(query="segment the target", scene=scene))
    assert "stage 'box-refine'" in str(err.value)


def test_config_file_merges_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("grid_cells = 4\ncandidate_scales = 1\n")
    scores = np.zeros((8, 8))
    scores[2, 2] = 1.0
    hpath = tmp_path / "h.magt"
    write_tensor(Tensor.from_array(scores), hpath)
    # config grid of 4 cells: 200 px per cell on an 800 px image
    assert run_cli(
        "crop-box", "--heatmap", hpath, "--width", 800, "--height", 800, "--config", cfg
    ) == 0
    x0, y0, x1, y1, _ = capsys.readouterr().out.split()
    assert (int(x1) - int(x0)) == 200
    # flag wins over config
    assert run_cli(
        "crop-box",
        "--heatmap", hpath,
        "--width", 800,
        "--height", 800,
        "--config", cfg,
        "--cells", 8,
    ) == 0
    x0, y0, x1, y1, _ = capsys.readouterr().out.split()
    assert (int(x1) - int(x0)) == 100
