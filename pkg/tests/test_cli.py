import numpy as np
import pytest

from mqn.cli import main, pad_to_multiple
from mqn.config import MqnConfig, config_to_text
from mqn.graph import build_mqn, count_params_macs
from mqn.hdr import read_rgbe, write_ldr, write_rgbe


@pytest.fixture(scope="module")
def cfg32(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text(config_to_text(MqnConfig(input_size=32)))
    return str(path)


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    rng = np.random.default_rng(77)
    img = (rng.random((32, 32, 3)) ** 2 * 6).astype(np.float32)
    path = tmp_path_factory.mktemp("scene") / "scene.hdr"
    path.write_bytes(write_rgbe(img))
    return path


@pytest.fixture(scope="module")
def weights(tmp_path_factory, cfg32):
    path = tmp_path_factory.mktemp("w") / "w.mqnw"
    assert main(["init-weights", "--seed", "7", "--config", cfg32,
                 "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def png(tmp_path_factory, scene):
    out = tmp_path_factory.mktemp("png") / "scene.png"
    assert main(["tmo", str(scene), "--random", "--seed", "3",
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def calibrated(tmp_path_factory, weights, png, cfg32):
    out = tmp_path_factory.mktemp("wc") / "wc.mqnw"
    assert main(["calibrate", "--weights", str(weights), "--images",
                 str(png.parent), "--config", cfg32, "--out", str(out)]) == 0
    return out


class TestTmo:
    def test_deterministic_bytes(self, tmp_path, scene):
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        assert main(["tmo", str(scene), "--random", "--seed", "11", "--out", str(a)]) == 0
        assert main(["tmo", str(scene), "--random", "--seed", "11", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.png.tmo").exists()

    def test_explicit_params(self, tmp_path, scene):
        out = tmp_path / "d.png"
        assert main(["tmo", str(scene), "--kind", "drago", "--params", "bias=0.8",
                     "--out", str(out)]) == 0
        assert "bias=0.8" in (tmp_path / "d.png.tmo").read_text()

    def test_missing_input_exit_1(self, tmp_path, capsys):
        assert main(["tmo", str(tmp_path / "nope.hdr"), "--out",
                     str(tmp_path / "x.png")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_params_exit_1(self, tmp_path, scene):
        assert main(["tmo", str(scene), "--kind", "drago", "--params", "bias=2.0",
                     "--out", str(tmp_path / "x.png")]) == 1


class TestInferPipeline:
    def test_infer_deterministic(self, tmp_path, weights, png, cfg32):
        outs = []
        for name in ("p1.hdr", "p2.hdr"):
            out = tmp_path / name
            assert main(["infer", str(png), "--weights", str(weights),
                         "--config", cfg32, "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_quantize_float32_matches_plain_infer(self, tmp_path, weights, png, cfg32):
        wq = tmp_path / "wf.mqnw"
        assert main(["quantize", "--weights", str(weights), "--scheme", "float32",
                     "--config", cfg32, "--out", str(wq)]) == 0
        a = tmp_path / "a.hdr"
        b = tmp_path / "b.hdr"
        assert main(["infer", str(png), "--weights", str(weights),
                     "--config", cfg32, "--out", str(a)]) == 0
        assert main(["infer", str(png), "--weights", str(wq),
                     "--config", cfg32, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_mixed_pipeline(self, tmp_path, calibrated, png, cfg32):
        wq = tmp_path / "wq.mqnw"
        assert main(["quantize", "--weights", str(calibrated), "--scheme", "mixed",
                     "--config", cfg32, "--out", str(wq)]) == 0
        out = tmp_path / "m.hdr"
        assert main(["infer", str(png), "--weights", str(wq),
                     "--config", cfg32, "--out", str(out)]) == 0
        img = read_rgbe(out.read_bytes())
        assert img.shape == (32, 32, 3)

    def test_infer_on_the_fly_quantization(self, tmp_path, calibrated, png, cfg32):
        out = tmp_path / "fly.hdr"
        assert main(["infer", str(png), "--weights", str(calibrated), "--scheme",
                     "mixed", "--config", cfg32, "--out", str(out)]) == 0

    def test_scheme_mismatch_exit_1(self, tmp_path, calibrated, png, cfg32, capsys):
        wq = tmp_path / "wq16.mqnw"
        assert main(["quantize", "--weights", str(calibrated), "--scheme", "int16",
                     "--config", cfg32, "--out", str(wq)]) == 0
        assert main(["infer", str(png), "--weights", str(wq), "--scheme", "mixed",
                     "--config", cfg32, "--out", str(tmp_path / "x.hdr")]) == 1
        assert "cannot run as" in capsys.readouterr().err

    def test_non_multiple_of_32_padded(self, tmp_path, weights, cfg32):
        rng = np.random.default_rng(5)
        odd = tmp_path / "odd.png"
        odd.write_bytes(write_ldr(rng.integers(0, 256, (20, 45, 3), np.uint8)))
        out = tmp_path / "odd.hdr"
        assert main(["infer", str(odd), "--weights", str(weights),
                     "--config", cfg32, "--out", str(out)]) == 0
        assert read_rgbe(out.read_bytes()).shape == (20, 45, 3)


class TestEval:
    def test_identical_dirs_inf_psnr(self, tmp_path, scene, capsys):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        (pred / "s.hdr").write_bytes(scene.read_bytes())
        (gt / "s.hdr").write_bytes(scene.read_bytes())
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == 0
        out = capsys.readouterr().out
        header, row = out.strip().splitlines()
        assert header == "image,psnr,ssim,l1,l2,cosine,fr"
        cells = row.split(",")
        assert cells[0] == "s.hdr"
        assert cells[1] == "inf"
        assert float(cells[2]) == 1.0
        assert float(cells[3]) == 0.0

    def test_csv_sorted_and_deterministic(self, tmp_path, scene, capsys):
        rng = np.random.default_rng(3)
        pred = tmp_path / "p"
        gt = tmp_path / "g"
        pred.mkdir()
        gt.mkdir()
        for name in ("zz.png", "aa.png"):
            (pred / name).write_bytes(write_ldr(rng.integers(0, 256, (16, 16, 3), np.uint8)))
            (gt / name).write_bytes(write_ldr(rng.integers(0, 256, (16, 16, 3), np.uint8)))
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == 0
        first = capsys.readouterr().out
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == 0
        assert capsys.readouterr().out == first
        names = [ln.split(",")[0] for ln in first.strip().splitlines()[1:]]
        assert names == sorted(names)

    def test_align_flag(self, tmp_path, scene, capsys):
        img = read_rgbe(scene.read_bytes())
        pred = tmp_path / "p"
        gt = tmp_path / "g"
        pred.mkdir()
        gt.mkdir()
        (pred / "s.hdr").write_bytes(write_rgbe((img * 2).astype(np.float32)))
        (gt / "s.hdr").write_bytes(scene.read_bytes())
        assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--align"]) == 0
        row = capsys.readouterr().out.strip().splitlines()[1]
        psnr = float(row.split(",")[1])
        assert psnr > 30  # alignment mostly undoes the doubling

    def test_missing_gt_exit_1(self, tmp_path, scene, capsys):
        pred = tmp_path / "p"
        gt = tmp_path / "g"
        pred.mkdir()
        gt.mkdir()
        (pred / "s.hdr").write_bytes(scene.read_bytes())
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == 1
        assert "no ground truth" in capsys.readouterr().err


class TestInspect:
    def test_totals_match_count(self, capsys, cfg32):
        assert main(["inspect", "--config", cfg32]) == 0
        out = capsys.readouterr().out
        g = build_mqn(MqnConfig(input_size=32))
        params, macs = count_params_macs(g)
        total_line = [ln for ln in out.splitlines() if ln.startswith("total")][0]
        assert str(params) in total_line and str(macs) in total_line
        assert "boundary edge: cbr3" in out

    def test_prints_partition_column(self, capsys, cfg32):
        assert main(["inspect", "--config", cfg32]) == 0
        out = capsys.readouterr().out
        assert "head" in out and "backbone" in out


class TestUsageErrors:
    def test_unknown_flag_exit_2(self):
        with pytest.raises(SystemExit) as e:
            main(["inspect", "--bogus"])
        assert e.value.code == 2

    def test_unknown_subcommand_exit_2(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_bad_scheme_value_exit_2(self, weights):
        with pytest.raises(SystemExit) as e:
            main(["quantize", "--weights", str(weights), "--scheme", "int4",
                  "--out", "x"])
        assert e.value.code == 2

    def test_resolved_config_printed(self, capsys, cfg32):
        main(["inspect", "--config", cfg32])
        err = capsys.readouterr().err
        assert "resolved config:" in err
        assert "input_size=32" in err


def test_pad_to_multiple_shapes():
    img = np.zeros((20, 45, 3), np.uint8)
    padded, (h, w) = pad_to_multiple(img)
    assert padded.shape == (32, 64, 3)
    assert (h, w) == (20, 45)
    img2 = np.zeros((32, 32, 3), np.uint8)
    padded2, _ = pad_to_multiple(img2)
    assert padded2 is img2
