import dataclasses
import json
import logging
import os

import numpy as np
import pytest
from PIL import Image

from cmfd import bench, imaging, pipeline
from cmfd.matching import MatchPair


def fast_cfg() -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig()
    cfg.detector = dataclasses.replace(cfg.detector, normalization_target=800)
    return cfg


class TestLoadDataset:
    def test_reads_hand_dataset(self, hand_dataset):
        entries = bench.load_dataset(hand_dataset)
        assert [e["stem"] for e in entries] == ["a_plain", "b_rot", "c_clean"]
        assert entries[0]["meta"]["copies"]
        assert entries[2]["meta"]["clean"] is True

    def test_limit(self, hand_dataset):
        assert len(bench.load_dataset(hand_dataset, limit=2)) == 2

    def test_missing_mask_skipped_with_warning(self, tmp_path, caplog):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        imaging.save_image(np.zeros((20, 20)) + 0.5,
                           str(tmp_path / "images" / "lonely.png"))
        with caplog.at_level(logging.WARNING, logger="cmfd.bench"):
            entries = bench.load_dataset(str(tmp_path))
        assert entries == []
        assert "no mask" in caplog.text

    def test_empty_directory_warns(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING, logger="cmfd.bench"):
            assert bench.load_dataset(str(tmp_path)) == []
        assert "no images directory" in caplog.text

    def test_non_image_files_ignored(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        (tmp_path / "images" / "notes.txt").write_text("x")
        assert bench.load_dataset(str(tmp_path)) == []

    def test_truth_binarized_at_half_intensity(self, tmp_path):
        arr = np.array([[0, 127], [128, 255]], dtype=np.uint8)
        path = tmp_path / "m.png"
        Image.fromarray(arr, mode="L").save(path)
        got = bench._load_truth(str(path))
        np.testing.assert_array_equal(got, [[False, False], [True, True]])


class TestAttackExpansion:
    def test_sweep_expression_expands(self):
        jobs = bench._expand_attack_args(["jpeg=100:-10:20"], False)
        assert [v for _, v in jobs] == [100, 90, 80, 70, 60, 50, 40, 30, 20]
        assert all(k == "jpeg" for k, _ in jobs)

    def test_scale_percent_values_normalized(self):
        jobs = bench._expand_attack_args(["scale=80"], False)
        assert jobs == [("scale", 0.8)]
        assert bench._expand_attack_args(["scale=1.2"], False) == [
            ("scale", 1.2)]

    def test_off_grid_rejected_unless_free(self):
        with pytest.raises(ValueError, match="canonical grid"):
            bench._expand_attack_args(["rotate=45"], False)
        assert bench._expand_attack_args(["rotate=45"], True) == [
            ("rotate", 45.0)]

    def test_unknown_kind_and_bad_spec_rejected(self):
        with pytest.raises(ValueError, match="unknown attack"):
            bench._expand_attack_args(["vignette=1"], False)
        with pytest.raises(ValueError, match="kind=value"):
            bench._expand_attack_args(["rotate"], False)

    def test_no_attacks_single_passthrough_job(self):
        assert bench._expand_attack_args(None, False) == [(None, None)]


class TestCountCorrectPairs:
    META = {"copies": [{"src": [50.0, 50.0], "dst": [50.0, 150.0],
                        "radius": 20.0, "rotation": 0.0, "scale": 1.0},
                       {"src": [50.0, 50.0], "dst": [150.0, 50.0],
                        "radius": 20.0, "rotation": 0.0, "scale": 1.0}]}

    def kps(self):
        # x, y, sigma, response
        return np.array([
            [45.0, 48.0, 2.0, 0.0],    # 0: inside source region
            [145.0, 48.0, 2.0, 0.0],   # 1: copy of 0 under dst[0]
            [45.0, 148.0, 2.0, 0.0],   # 2: copy of 0 under dst[1]
            [150.0, 60.0, 2.0, 0.0],   # 3: near copy 1 but off by >tol
            [300.0, 200.0, 2.0, 0.0],  # 4: unrelated
        ])

    def test_true_translation_pair_counts(self):
        n = bench.count_correct_pairs([MatchPair(0, 1, 0.0)], self.kps(),
                                      self.META)
        assert n == 1

    def test_direction_symmetric(self):
        n = bench.count_correct_pairs([MatchPair(1, 0, 0.0)], self.kps(),
                                      self.META)
        assert n == 1

    def test_copy_to_copy_pair_counts(self):
        n = bench.count_correct_pairs([MatchPair(1, 2, 0.0)], self.kps(),
                                      self.META)
        assert n == 1

    def test_misaligned_and_unrelated_pairs_rejected(self):
        pairs = [MatchPair(0, 3, 0.0), MatchPair(0, 4, 0.0),
                 MatchPair(3, 4, 0.0)]
        assert bench.count_correct_pairs(pairs, self.kps(), self.META) == 0

    def test_rotated_copy_mapping(self):
        meta = {"copies": [{"src": [50.0, 50.0], "dst": [50.0, 150.0],
                            "radius": 20.0, "rotation": 90.0, "scale": 1.0}]}
        # forward map: p_dst = R90 (p - c_src) + c_dst, with R90 (x,y)->(-y,x)
        kps = np.array([[60.0, 45.0, 2.0, 0.0],
                        [155.0, 60.0, 2.0, 0.0]])
        assert bench.count_correct_pairs([MatchPair(0, 1, 0.0)], kps,
                                         meta) == 1

    def test_empty_inputs(self):
        assert bench.count_correct_pairs([], self.kps(), self.META) == 0
        assert bench.count_correct_pairs([MatchPair(0, 1, 0.0)], self.kps(),
                                         {"copies": []}) == 0


class TestRunBenchmark:
    def test_report_files_and_aggregates(self, hand_dataset, tmp_path):
        out = tmp_path / "out"
        report = bench.run_benchmark(hand_dataset, cfg=fast_cfg(),
                                     out_dir=str(out))
        records = report["records"]
        assert [r["image"] for r in records] == sorted(
            r["image"] for r in records)
        assert len(records) == 3

        agg = report["aggregates"]
        forged = [r for r in records if not r["clean"]]
        clean = [r for r in records if r["clean"]]
        assert agg["n_images"] == 3
        assert agg["n_forged"] == 2 and agg["n_clean"] == 1
        assert agg["mean_f1"] == pytest.approx(
            np.mean([r["f1"] for r in forged]))
        assert agg["clean_max_fp_area"] == max(r["fp_area"] for r in clean)
        assert agg["mean_f1"] > 0.7

        for name in ("records.csv", "curves.csv", "report.json",
                     "overview.png", "curve_rotate.png"):
            assert (out / name).exists(), name
        with open(out / "report.json") as fh:
            doc = json.load(fh)
        assert doc["config"]["word_match"]["strategy"] == "i2nn"
        assert "versions" in doc

    def test_worker_pool_matches_serial(self, hand_dataset):
        r1 = bench.run_benchmark(hand_dataset, cfg=fast_cfg(), workers=1)
        r2 = bench.run_benchmark(hand_dataset, cfg=fast_cfg(), workers=2)

        def strip_timings(records):
            return [{k: v for k, v in r.items() if not k.startswith("t_")}
                    for r in records]

        assert strip_timings(r1["records"]) == strip_timings(r2["records"])

    def test_attack_flag_runs_on_the_fly(self, hand_dataset):
        report = bench.run_benchmark(hand_dataset, cfg=fast_cfg(),
                                     attacks=["jpeg=100"], limit=1)
        rec = report["records"][0]
        assert rec["attack"] == "jpeg" and rec["value"] == 100
        assert rec["f1"] > 0.7

    def test_nn_strategy_override(self, hand_dataset):
        report = bench.run_benchmark(hand_dataset, cfg=fast_cfg(),
                                     nn_strategy="2nn", limit=1)
        assert report["config"]["word_match"]["strategy"] == "2nn"
        with pytest.raises(ValueError, match="strategy"):
            bench.run_benchmark(hand_dataset, nn_strategy="3nn")

    def test_empty_dataset_empty_table(self, tmp_path):
        report = bench.run_benchmark(str(tmp_path), cfg=fast_cfg())
        assert report["records"] == []
        assert report["aggregates"]["n_images"] == 0


class TestAblations:
    def test_nn_ablation_structure(self, hand_dataset, tmp_path):
        report = bench.ablate_nn(hand_dataset, cfg=fast_cfg(),
                                 out_dir=str(tmp_path), limit=2)
        assert report["n_images"] == 2
        assert set(report["strategies"]) == {"2nn", "g2nn", "rg2nn", "i2nn"}
        for stats in report["strategies"].values():
            assert set(stats) == {"mean_correct", "mean_pairs", "purity",
                                  "wall_seconds"}
            assert 0.0 <= stats["purity"] <= 1.0
        assert report["strategies"]["i2nn"]["mean_correct"] > 0
        assert len(report["records"]) == 2 * 4
        for name in ("ablation_nn.csv", "ablation_nn.json", "ablation_nn.png"):
            assert (tmp_path / name).exists(), name

    def test_phrase_ablation_skips_clean_images(self, hand_dataset, tmp_path):
        report = bench.ablate_phrase(hand_dataset, cfg=fast_cfg(),
                                     out_dir=str(tmp_path))
        assert report["n_images"] == 2  # the clean control contributes none
        for row in report["records"]:
            assert 0.0 <= row["word_purity"] <= 1.0
            assert 0.0 <= row["phrase_purity"] <= 1.0
            assert row["improved"] == (
                row["phrase_purity"] > row["word_purity"])
        assert (tmp_path / "ablation_phrase.csv").exists()
        assert (tmp_path / "ablation_phrase.json").exists()

    def test_fusion_ablation_scores_three_variants(self, hand_dataset,
                                                   tmp_path):
        report = bench.ablate_fusion(hand_dataset, cfg=fast_cfg(),
                                     out_dir=str(tmp_path), limit=1)
        assert report["n_images"] == 1
        row = report["records"][0]
        for name in ("fused", "ssim", "roi"):
            for key in ("precision", "recall", "f1"):
                assert 0.0 <= row[f"{name}_{key}"] <= 1.0
                assert f"mean_{name}_{key}" in report
        assert row["fused_f1"] > 0.7
        assert (tmp_path / "ablation_fusion.png").exists()
