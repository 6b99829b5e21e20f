"""Degradation operators, cropping and dataset forging."""

import os
import sys

import numpy as np
import pytest

from srqa.errors import DataError
from srqa.forge import (
    CropSpec,
    DegradationOperator,
    apply_degradation,
    crop,
    default_bank,
    forge,
    operator_separation,
    plan_forge,
    read_image,
    write_image,
    DISTINCTNESS_THRESHOLD,
)
from srqa.oracles import oracle_gaussian_blur, oracle_resample
from srqa.records import read_manifest, write_manifest
from srqa.resample import scaled_dims

from conftest import make_scene


def nearest_op(scales=(2.0,)):
    return DegradationOperator("nn", "interpolation", {"kernel": "nearest"}, frozenset(scales))


def test_nearest_x2_tiles():
    img = np.random.default_rng(0).random((4, 4, 3))
    out = apply_degradation(img, nearest_op(), 2.0, seed=0)
    assert out.shape == (8, 8, 3)
    for i in range(4):
        for j in range(4):
            np.testing.assert_array_equal(
                out[2 * i : 2 * i + 2, 2 * j : 2 * j + 2],
                np.broadcast_to(img[i, j], (2, 2, 3)),
            )


def test_unsupported_scale_lists_supported():
    with pytest.raises(DataError, match=r"2\.0"):
        apply_degradation(np.ones((4, 4, 3)), nearest_op(scales=(2.0,)), 1.0, seed=0)


def test_blur_then_upsample_matches_scripted_reference():
    # fixed 16x16 ramp through sigma=1.5 gaussian then x3 bicubic, vs the
    # independently coded convolution + polynomial-kernel oracle pipeline
    yy, xx = np.mgrid[0:16, 0:16]
    ramp = np.repeat(((yy + xx) / 30.0)[:, :, None], 3, axis=2)
    op = DegradationOperator(
        "blurred", "blur-then-upsample", {"sigma": 1.5, "kernel": "bicubic"}, frozenset((3.0,))
    )
    main = apply_degradation(ramp, op, 3.0, seed=0)
    ref = np.clip(oracle_resample(oracle_gaussian_blur(ramp, 1.5), (48, 48), "bicubic"), 0, 1)
    np.testing.assert_allclose(main, ref, atol=1e-12)


def test_determinism_under_seed():
    img = make_scene(np.random.default_rng(5), 24)
    op = DegradationOperator(
        "noisy", "noise-then-upsample", {"sigma": 0.1, "kernel": "bilinear"}, frozenset((2.0,))
    )
    a = apply_degradation(img, op, 2.0, seed=77)
    b = apply_degradation(img, op, 2.0, seed=77)
    c = apply_degradation(img, op, 2.0, seed=78)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 0


def test_output_dims_round_half_away():
    img = np.ones((5, 5, 3)) * 0.5
    op = DegradationOperator("bc", "interpolation", {"kernel": "bicubic"}, frozenset((2.5,)))
    out = apply_degradation(img, op, 2.5, seed=0)
    assert out.shape[:2] == scaled_dims(5, 5, 2.5) == (13, 13)


def test_all_families_produce_valid_output():
    img = make_scene(np.random.default_rng(9), 20)
    for op in default_bank():
        out = apply_degradation(img, op, 2.0, seed=1)
        assert out.shape == (40, 40, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.isfinite(out).all()


def test_external_command_family(tmp_path):
    script = tmp_path / "upscale.py"
    script.write_text(
        "import sys\n"
        "from PIL import Image\n"
        "inp, outp, scale = sys.argv[1], sys.argv[2], float(sys.argv[3])\n"
        "im = Image.open(inp)\n"
        "im.resize((round(im.width*scale), round(im.height*scale)), Image.NEAREST).save(outp)\n"
    )
    op = DegradationOperator(
        "ext",
        "external-command",
        {"command": [sys.executable, str(script), "{input}", "{output}", "{scale}"]},
        frozenset((2.0,)),
    )
    img = np.random.default_rng(1).random((6, 6, 3))
    out = apply_degradation(img, op, 2.0, seed=0)
    assert out.shape == (12, 12, 3)


def test_external_command_failure_reports_status(tmp_path):
    op = DegradationOperator(
        "bad",
        "external-command",
        {"command": [sys.executable, "-c", "import sys; sys.exit(9)"]},
        frozenset((2.0,)),
    )
    with pytest.raises(DataError, match="exit status 9"):
        apply_degradation(np.ones((4, 4, 3)), op, 2.0, seed=0)


def test_crop_exact_size_identity():
    img = np.random.default_rng(2).random((16, 16, 3))
    for pos in ("random", "center", "top-left", "bottom-right"):
        np.testing.assert_array_equal(crop(img, CropSpec(size=16, position=pos, seed=3)), img)


def test_crop_center_offset():
    img = np.random.default_rng(3).random((512, 512, 3))
    out = crop(img, CropSpec(size=256, position="center"))
    np.testing.assert_array_equal(out, img[128:384, 128:384])


def test_crop_random_deterministic_and_uniform():
    img = np.random.default_rng(4).random((20, 20, 3))
    a = crop(img, CropSpec(size=8, position="random", seed=11))
    b = crop(img, CropSpec(size=8, position="random", seed=11))
    np.testing.assert_array_equal(a, b)
    # offsets cover the full valid range
    offsets = set()
    for seed in range(300):
        c = crop(img, CropSpec(size=19, position="random", seed=seed))
        for y in range(2):
            for x in range(2):
                if np.array_equal(c, img[y : y + 19, x : x + 19]):
                    offsets.add((y, x))
    assert offsets == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_crop_small_image_reflect_padded():
    img = np.random.default_rng(5).random((10, 10, 3))
    out = crop(img, CropSpec(size=16, position="top-left"))
    assert out.shape == (16, 16, 3)
    np.testing.assert_array_equal(out[:10, :10], img)
    np.testing.assert_array_equal(out[10, :10], img[8, :])  # reflected row


def test_corner_positions():
    img = np.random.default_rng(6).random((12, 10, 3))
    assert np.array_equal(crop(img, CropSpec(4, "top-right")), img[0:4, 6:10])
    assert np.array_equal(crop(img, CropSpec(4, "bottom-left")), img[8:12, 0:4])


def test_forge_counts_and_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    lr_dir = tmp_path / "lr"
    lr_dir.mkdir()
    for i in range(2):
        write_image(str(lr_dir / f"scene{i}.png"), make_scene(rng, 20))
    out_dir = tmp_path / "out"
    manifest = forge(str(lr_dir), [nearest_op(scales=(2.0,))], [2.0], str(out_dir), seed=0)
    counts = manifest.summary()
    assert counts == {"LR": 2, "SR": 2, "DS": 2, "HR": 0}
    path = str(out_dir / "manifest.jsonl")
    write_manifest(manifest, path)
    back = read_manifest(path)
    assert back == manifest
    for rec in back.by_role("SR", "DS"):
        img = read_image(back.resolve_path(rec))
        assert img.shape == (rec.height, rec.width, rec.channels)


def test_forge_table_style_bank_counting(tmp_path):
    # 13 operators with mixed scale support summing to 32 method-scale combos
    rng = np.random.default_rng(10)
    lr_dir = tmp_path / "lr"
    lr_dir.mkdir()
    for i in range(3):
        write_image(str(lr_dir / f"s{i}.png"), make_scene(rng, 12))
    supports = [frozenset((2.0, 3.0, 4.0))] * 9 + [frozenset((2.0, 4.0))] + [frozenset((4.0,))] * 2 + [frozenset((2.0,))]
    assert sum(len(s) for s in supports) == 32 and len(supports) == 13
    bank = [
        DegradationOperator(f"op{i:02d}", "interpolation", {"kernel": "bilinear"}, s)
        for i, s in enumerate(supports)
    ]
    plan = plan_forge(str(lr_dir), bank, [2.0, 3.0, 4.0])
    assert plan["SR"] == 96
    manifest = forge(str(lr_dir), bank, [2.0, 3.0, 4.0], str(tmp_path / "out"), seed=1)
    assert manifest.summary()["SR"] == 96
    assert manifest.summary()["DS"] == 96


def test_forge_empty_dir_errors(tmp_path):
    lr_dir = tmp_path / "lr"
    lr_dir.mkdir()
    with pytest.raises(DataError, match="no outputs"):
        forge(str(lr_dir), [nearest_op()], [2.0], str(tmp_path / "out"))


def test_forge_missing_dir_errors(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        forge(str(tmp_path / "nope"), [nearest_op()], [2.0], str(tmp_path / "out"))


def test_forge_skips_unreadable_and_logs(tmp_path, caplog):
    rng = np.random.default_rng(12)
    lr_dir = tmp_path / "lr"
    lr_dir.mkdir()
    write_image(str(lr_dir / "good.png"), make_scene(rng, 16))
    (lr_dir / "broken.png").write_bytes(b"not a png")
    with caplog.at_level("WARNING"):
        manifest = forge(str(lr_dir), [nearest_op(scales=(2.0,))], [2.0], str(tmp_path / "out"))
    assert manifest.summary()["LR"] == 1
    assert any("skipping unreadable" in r.message for r in caplog.records)


def test_forge_deterministic_bytes(tmp_path):
    rng = np.random.default_rng(13)
    lr_dir = tmp_path / "lr"
    lr_dir.mkdir()
    write_image(str(lr_dir / "a.png"), make_scene(rng, 16))
    bank = [
        DegradationOperator(
            "noisy", "noise-then-upsample", {"sigma": 0.08, "kernel": "bilinear"}, frozenset((2.0,))
        )
    ]
    m1 = forge(str(lr_dir), bank, [2.0], str(tmp_path / "r1"), seed=5)
    m2 = forge(str(lr_dir), bank, [2.0], str(tmp_path / "r2"), seed=5)
    write_manifest(m1, str(tmp_path / "m1.jsonl"))
    write_manifest(m2, str(tmp_path / "m2.jsonl"))
    assert (tmp_path / "m1.jsonl").read_bytes() == (tmp_path / "m2.jsonl").read_bytes()
    rel = os.path.join("sr", "noisy", "x2", "a.png")
    assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes()


def test_default_bank_distinguishable():
    img = make_scene(np.random.default_rng(14), 24)
    sep = operator_separation(default_bank(), img, 2.0, seed=0)
    assert sep > DISTINCTNESS_THRESHOLD


def test_image_io_roundtrip(tmp_path):
    img = np.random.default_rng(15).random((9, 7, 3))
    path = str(tmp_path / "x.png")
    write_image(path, img)
    back = read_image(path)
    assert back.shape == (9, 7, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9  # 8-bit quantization only
