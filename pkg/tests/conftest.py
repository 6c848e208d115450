import json

import numpy as np
import pytest

from cmfd import forge, imaging

_criterion_lines = []


def record_criterion(number: int, name: str, ok: bool, detail: str = ""):
    """Collect one pass/fail line per acceptance criterion for the summary."""
    verdict = "PASS" if ok else "FAIL"
    line = f"criterion {number} ({name}): {verdict}"
    if detail:
        line += f" -- {detail}"
    _criterion_lines.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_criterion_lines):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def standard_corpus(tmp_path_factory):
    """Mixed-attack benchmark corpus: 20 forged images + 4 clean controls."""
    root = tmp_path_factory.mktemp("corpus_standard")
    forge.generate_corpus(str(root), variant="standard", seed=0)
    return str(root)


@pytest.fixture(scope="session")
def multi_corpus(tmp_path_factory):
    """50 images with one region copied to several destinations each."""
    root = tmp_path_factory.mktemp("corpus_multi")
    forge.generate_corpus(str(root), variant="multi", seed=0)
    return str(root)


@pytest.fixture(scope="session")
def hand_dataset(tmp_path_factory):
    """Three-image dataset written by hand: translation, rotation, clean."""
    root = tmp_path_factory.mktemp("hand_ds")
    img_dir = root / "images"
    mask_dir = root / "masks"
    img_dir.mkdir()
    mask_dir.mkdir()
    shape = (300, 400)
    meta = {}

    base = forge.synth_texture(41, shape)
    region = forge.disk_mask(shape, 80.0, 90.0, 28.0)
    forged, truth = forge.make_forgery(base, region, (170, 120))
    imaging.save_image(forged, str(img_dir / "a_plain.png"))
    imaging.save_mask(truth, str(mask_dir / "a_plain.png"))
    meta["a_plain"] = {"attack": "none", "value": None, "clean": False,
                       "copies": [{"src": [80.0, 90.0], "dst": [200.0, 260.0],
                                   "radius": 28.0, "rotation": 0.0,
                                   "scale": 1.0}]}

    base = forge.synth_texture(42, shape)
    region = forge.disk_mask(shape, 90.0, 100.0, 30.0)
    forged, truth = forge.make_forgery(base, region, (180, 110),
                                       rotation=180.0)
    imaging.save_image(forged, str(img_dir / "b_rot.png"))
    imaging.save_mask(truth, str(mask_dir / "b_rot.png"))
    meta["b_rot"] = {"attack": "rotate", "value": 180.0, "clean": False,
                     "copies": [{"src": [90.0, 100.0], "dst": [200.0, 280.0],
                                 "radius": 30.0, "rotation": 180.0,
                                 "scale": 1.0}]}

    clean = forge.synth_texture(43, shape)
    imaging.save_image(clean, str(img_dir / "c_clean.png"))
    imaging.save_mask(np.zeros(shape, bool), str(mask_dir / "c_clean.png"))
    meta["c_clean"] = {"attack": "clean", "value": None, "clean": True,
                       "copies": []}

    with open(root / "meta.json", "w") as fh:
        json.dump({"variant": "hand", "seed": 0, "images": meta}, fh)
    return str(root)
