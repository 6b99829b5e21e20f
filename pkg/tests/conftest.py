"""Shared fixtures: synthetic scenes, toy manifests, small trained models."""

from __future__ import annotations

import numpy as np
import pytest

from srqa.records import ImageRecord, Manifest


def make_scene(rng: np.random.Generator, size: int = 96) -> np.ndarray:
    """A synthetic RGB scene with gradients, texture and a few shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = np.stack(
        [
            0.5 + 0.4 * np.sin(2 * np.pi * (rng.uniform(0.5, 2.0) * xx + rng.random())),
            0.5 + 0.4 * np.sin(2 * np.pi * (rng.uniform(0.5, 2.0) * yy + rng.random())),
            0.3 + 0.5 * xx * yy,
        ],
        axis=-1,
    )
    texture = rng.normal(0.0, 0.08, size=(size, size, 3))
    img = base + texture
    margin = max(2, size // 6)
    for _ in range(3):
        cy, cx = rng.integers(margin, size - margin, size=2)
        r = int(rng.integers(2, max(3, size // 8) + 1))
        mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 < r**2
        img[mask] = rng.random(3)
    return np.clip(img, 0.0, 1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


def toy_records(n_contents=3, methods=("alpha", "beta"), scales=(2.0, 3.0)) -> list[ImageRecord]:
    """LR + SR + DS records over a small grid of contents/methods/scales."""
    recs = []
    h = w = 40
    for c in range(n_contents):
        cid = f"scene{c}"
        recs.append(
            ImageRecord(
                path=f"lr/{cid}.png", content_id=cid, method_id="none",
                scale=1.0, role="LR", height=h, width=w, channels=3,
            )
        )
        for m in methods:
            for s in scales:
                sh, sw = round(h * s), round(w * s)
                recs.append(
                    ImageRecord(
                        path=f"sr/{m}/x{s:g}/{cid}.png", content_id=cid, method_id=m,
                        scale=s, role="SR", height=sh, width=sw, channels=3,
                        split_tag="pretext",
                    )
                )
                recs.append(
                    ImageRecord(
                        path=f"ds/{m}/x{s:g}/{cid}.png", content_id=cid, method_id=m,
                        scale=s, role="DS", height=sh // 2, width=sw // 2, channels=3,
                        split_tag="pretext",
                    )
                )
    return recs


@pytest.fixture
def toy_manifest() -> Manifest:
    m = Manifest(records=toy_records(), metadata={"seed": 0, "scales": [2.0, 3.0]})
    m.validate()
    return m


@pytest.fixture(scope="session")
def forged(tmp_path_factory):
    """A real forged dataset on disk: 4 scenes x 2 operators x scale 2."""
    from srqa.forge import DegradationOperator, forge, write_image

    root = tmp_path_factory.mktemp("forged")
    lr_dir = root / "lr"
    lr_dir.mkdir()
    gen = np.random.default_rng(99)
    for i in range(4):
        write_image(str(lr_dir / f"scene{i}.png"), make_scene(gen, 32))
    bank = [
        DegradationOperator("nn", "interpolation", {"kernel": "nearest"}, frozenset((2.0,))),
        DegradationOperator(
            "smooth", "blur-then-upsample", {"sigma": 1.2, "kernel": "bicubic"}, frozenset((2.0,))
        ),
    ]
    manifest = forge(str(lr_dir), bank, [2.0], str(root / "out"), seed=0)
    return manifest
