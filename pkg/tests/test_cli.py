import json
import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from cmfd import cli, forge, imaging


@pytest.fixture(scope="module")
def fast_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.txt"
    path.write_text("detector.normalization_target = 800\n")
    return str(path)


@pytest.fixture(scope="module")
def forged_image(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_img")
    img = forge.synth_texture(55, (300, 400))
    forged, truth = forge.make_forgery(img, (40, 60, 80, 80), (220, 150))
    path = root / "scene.png"
    imaging.save_image(forged, str(path))
    imaging.save_mask(truth, str(root / "scene_truth.png"))
    return str(path)


class TestDetect:
    def test_full_flag_set(self, forged_image, fast_config_file, tmp_path,
                           capsys):
        mask_out = tmp_path / "mask.png"
        report_out = tmp_path / "report.json"
        dbg = tmp_path / "dbg"
        rc = cli.main(["detect", forged_image,
                       "--config", fast_config_file,
                       "--out", str(mask_out),
                       "--report", str(report_out),
                       "--dump-debug", str(dbg)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "matched pairs" in out

        mask = np.asarray(Image.open(mask_out))
        assert set(np.unique(mask)) <= {0, 255}
        assert (mask >= 128).mean() > 0.02

        with open(report_out) as fh:
            report = json.load(fh)
        assert report["shape"] == [300, 400]
        assert report["n_keypoints"] > 0
        assert report["n_pairs_phrase"] > 0
        assert report["mask_area_fraction"] > 0.02
        assert set(report["versions"]) == {"package", "python", "numpy",
                                           "scipy"}
        assert "total" in report["timings"]

        for name in ("mask_fused.png", "mask_ssim.png", "mask_roi.png",
                     "keypoints.csv", "pairs_word.csv", "pairs_phrase.csv",
                     "config.txt"):
            assert (dbg / name).exists(), name
        header = (dbg / "pairs_word.csv").read_text().splitlines()[0]
        assert header == "index_a,index_b,distance,xa,ya,xb,yb"

    def test_plain_invocation(self, forged_image, fast_config_file, capsys):
        rc = cli.main(["detect", forged_image, "--config", fast_config_file])
        assert rc == 0
        assert "forged pixels" in capsys.readouterr().out

    def test_missing_image_is_error(self, capsys):
        rc = cli.main(["detect", "no_such_file.png"])
        assert rc == 2
        assert "error" in capsys.readouterr().err


class TestBench:
    def test_dataset_run_with_outputs(self, hand_dataset, fast_config_file,
                                      tmp_path, capsys):
        out = tmp_path / "bench"
        rc = cli.main(["bench", hand_dataset, "--config", fast_config_file,
                       "--out", str(out), "--limit", "2"])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "mean_f1" in stdout
        assert (out / "records.csv").exists()
        assert (out / "report.json").exists()

    def test_attack_and_strategy_flags(self, hand_dataset, fast_config_file,
                                       tmp_path, capsys):
        rc = cli.main(["bench", hand_dataset, "--config", fast_config_file,
                       "--attack", "jpeg=100", "--nn-strategy", "g2nn",
                       "--limit", "1", "--out", str(tmp_path / "b2")])
        assert rc == 0
        with open(tmp_path / "b2" / "report.json") as fh:
            doc = json.load(fh)
        assert doc["config"]["word_match"]["strategy"] == "g2nn"
        assert doc["records"][0]["attack"] == "jpeg"

    def test_ablate_subcommand(self, hand_dataset, fast_config_file,
                               tmp_path, capsys):
        rc = cli.main(["bench", hand_dataset, "--config", fast_config_file,
                       "--ablate", "nn", "--limit", "1",
                       "--out", str(tmp_path / "abl")])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc["strategies"]) == {"2nn", "g2nn", "rg2nn", "i2nn"}
        assert (tmp_path / "abl" / "ablation_nn.png").exists()

    def test_empty_dataset_exits_zero(self, tmp_path, capsys):
        rc = cli.main(["bench", str(tmp_path)])
        assert rc == 0
        assert "no scored images" in capsys.readouterr().out

    def test_bad_attack_spec_is_error(self, hand_dataset, capsys):
        rc = cli.main(["bench", hand_dataset, "--attack", "vignette=1"])
        assert rc == 2
        assert "unknown attack" in capsys.readouterr().err

    def test_off_grid_attack_needs_free_params(self, hand_dataset, capsys):
        rc = cli.main(["bench", hand_dataset, "--attack", "rotate=45",
                       "--limit", "1"])
        assert rc == 2
        assert "canonical grid" in capsys.readouterr().err


class TestForge:
    def test_default_output_names(self, tmp_path, capsys):
        img = forge.synth_texture(56, (240, 320))
        base = tmp_path / "photo.png"
        imaging.save_image(img, str(base))
        rc = cli.main(["forge", str(base), "--region", "30,40,50,50",
                       "--offset", "160,120"])
        assert rc == 0
        assert (tmp_path / "photo_forged.png").exists()
        mask = np.asarray(Image.open(tmp_path / "photo_forged_mask.png"))
        assert (mask == 255).sum() == 2 * 50 * 50

    def test_rotate_scale_and_custom_paths(self, tmp_path):
        img = forge.synth_texture(57, (240, 320))
        base = tmp_path / "p.png"
        imaging.save_image(img, str(base))
        out = tmp_path / "f.png"
        mask_out = tmp_path / "m.png"
        rc = cli.main(["forge", str(base), "--region", "40,50,40,40",
                       "--offset", "150,100", "--rotate", "30",
                       "--scale", "1.2", "--out", str(out),
                       "--mask", str(mask_out)])
        assert rc == 0
        assert out.exists() and mask_out.exists()

    def test_degenerate_offset_is_error(self, tmp_path, capsys):
        img = forge.synth_texture(58, (200, 200))
        base = tmp_path / "q.png"
        imaging.save_image(img, str(base))
        rc = cli.main(["forge", str(base), "--region", "30,30,40,40",
                       "--offset", "0,0"])
        assert rc == 2
        assert "degenerate" in capsys.readouterr().err

    def test_malformed_region_rejected_by_parser(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["forge", "x.png", "--region", "1,2,3",
                      "--offset", "5,5"])
        assert exc.value.code == 2
        assert "x,y,w,h" in capsys.readouterr().err


class TestCorpus:
    def test_standard_generation(self, tmp_path, capsys):
        rc = cli.main(["corpus", str(tmp_path / "c"), "--seed", "2"])
        assert rc == 0
        assert "24 images" in capsys.readouterr().out
        assert len(os.listdir(tmp_path / "c" / "images")) == 24

    def test_bad_variant_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            cli.main(["corpus", "d", "--variant", "giant"])


class TestEntryPoint:
    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_console_script_help(self):
        proc = subprocess.run([sys.executable, "-m", "cmfd.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("detect", "bench", "forge", "corpus"):
            assert sub in proc.stdout
