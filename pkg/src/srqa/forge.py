"""Pretext dataset construction from LR sources.

A bank of cheap, parameterized degradation operators stands in for real
upscaling networks: each operator upsamples an LR image with a distinct
artifact signature (interpolation kernel choice, pre-blur, noise,
oversharpening, compression), plus an external-command escape hatch for
plugging in actual SR binaries.  ``forge`` applies every (operator,
scale) combination to every source image and emits a validated manifest
together with half-scale counterparts of each output.
"""

from __future__ import annotations

import io
import logging
import os
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DataError
from .records import ImageRecord, Manifest, relative_to
from .resample import gaussian_blur, lanczos_half, resample, scaled_dims
from .rngutil import as_rng, derived_rng

log = logging.getLogger(__name__)

FAMILIES = (
    "interpolation",
    "blur-then-upsample",
    "noise-then-upsample",
    "sharpen-after-upsample",
    "compression-after-upsample",
    "external-command",
)

CROP_POSITIONS = ("random", "top-left", "top-right", "bottom-left", "bottom-right", "center")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")

# default floor for mean pairwise pixel difference between operators
DISTINCTNESS_THRESHOLD = 0.01


@dataclass
class DegradationOperator:
    """One entry of the operator bank.

    Deterministic given (input image, scale, seed); output dims are
    (round(H*s), round(W*s)).
    """

    method_id: str
    family: str
    parameters: dict = field(default_factory=dict)
    supported_scales: frozenset = frozenset((2.0, 3.0, 4.0))

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown operator family {self.family!r}")
        self.supported_scales = frozenset(float(s) for s in self.supported_scales)


def read_image(path: str) -> np.ndarray:
    """Load an image file as float64 RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path!r}: {exc}") from exc
    return arr


def write_image(path: str, image: np.ndarray) -> None:
    """Write a [0, 1] float image as 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def _jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _run_external(image: np.ndarray, op: DegradationOperator, scale: float, seed: int) -> np.ndarray:
    template = op.parameters.get("command")
    if not template:
        raise DataError(f"operator {op.method_id!r} has no command template")
    with tempfile.TemporaryDirectory(prefix="srqa-ext-") as tmp:
        in_path = os.path.join(tmp, "in.png")
        out_path = os.path.join(tmp, "out.png")
        write_image(in_path, image)
        cmd = [
            part.format(input=in_path, output=out_path, scale=scale, seed=seed)
            for part in template
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise DataError(
                f"external operator {op.method_id!r} failed with exit status "
                f"{proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        if not os.path.exists(out_path):
            raise DataError(f"external operator {op.method_id!r} produced no output file")
        return read_image(out_path)


def apply_degradation(image: np.ndarray, op: DegradationOperator, scale: float, seed) -> np.ndarray:
    """Upscale ``image`` by ``scale`` with the operator's artifact signature."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DataError(f"operator input must be a non-empty HxWxC array, got {img.shape}")
    scale = float(scale)
    if scale not in op.supported_scales:
        raise DataError(
            f"operator {op.method_id!r} does not support scale {scale:g} "
            f"(supported: {sorted(op.supported_scales)})"
        )
    out_dims = scaled_dims(img.shape[0], img.shape[1], scale)
    params = op.parameters
    kernel = params.get("kernel", "bicubic")
    rng = as_rng(seed)

    if op.family == "interpolation":
        out = resample(img, out_dims, kernel)
    elif op.family == "blur-then-upsample":
        out = resample(gaussian_blur(img, params["sigma"]), out_dims, kernel)
    elif op.family == "noise-then-upsample":
        noisy = img + rng.normal(0.0, params["sigma"], size=img.shape)
        out = resample(np.clip(noisy, 0.0, 1.0), out_dims, kernel)
    elif op.family == "sharpen-after-upsample":
        up = resample(img, out_dims, kernel)
        out = up + params["amount"] * (up - gaussian_blur(up, params["sigma"]))
    elif op.family == "compression-after-upsample":
        out = _jpeg_roundtrip(resample(img, out_dims, kernel), params["quality"])
    elif op.family == "external-command":
        cmd_seed = seed if isinstance(seed, int) else int(rng.integers(0, 2**31))
        out = _run_external(img, op, scale, cmd_seed)
    else:  # unreachable, __post_init__ validates
        raise DataError(f"unknown family {op.family!r}")

    if out.shape[:2] != out_dims:
        raise DataError(
            f"operator {op.method_id!r} produced dims {out.shape[:2]}, expected {out_dims}"
        )
    return np.clip(out, 0.0, 1.0)


@dataclass
class CropSpec:
    """Where and how large to crop; small images are reflect-padded first."""

    size: int = 256
    position: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise DataError(f"crop size must be >= 1, got {self.size}")
        if self.position not in CROP_POSITIONS:
            raise DataError(f"unknown crop position {self.position!r}")


def reflect_pad_to(image: np.ndarray, size: int) -> np.ndarray:
    """Reflect-pad spatial dims up to at least ``size``."""
    img = np.asarray(image)
    while img.shape[0] < size or img.shape[1] < size:
        # numpy reflect padding cannot exceed dim-1 per call
        pad_h = min(size - img.shape[0], img.shape[0] - 1) if img.shape[0] < size else 0
        pad_w = min(size - img.shape[1], img.shape[1] - 1) if img.shape[1] < size else 0
        if img.shape[0] == 1 and pad_h == 0 and img.shape[0] < size:
            pad_h = size - img.shape[0]
            img = np.pad(img, ((0, pad_h), (0, 0), (0, 0)), mode="edge")
            continue
        if img.shape[1] == 1 and pad_w == 0 and img.shape[1] < size:
            pad_w = size - img.shape[1]
            img = np.pad(img, ((0, 0), (0, pad_w), (0, 0)), mode="edge")
            continue
        img = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    return img


def crop_offset(height: int, width: int, spec: CropSpec, rng=None) -> tuple[int, int]:
    """Top-left offset of the crop window inside an image of the given dims."""
    s = spec.size
    if spec.position == "top-left":
        return 0, 0
    if spec.position == "top-right":
        return 0, width - s
    if spec.position == "bottom-left":
        return height - s, 0
    if spec.position == "bottom-right":
        return height - s, width - s
    if spec.position == "center":
        return (height - s) // 2, (width - s) // 2
    rng = as_rng(spec.seed if rng is None else rng)
    return int(rng.integers(0, height - s + 1)), int(rng.integers(0, width - s + 1))


def crop(image: np.ndarray, spec: CropSpec, rng=None) -> np.ndarray:
    """Extract a size x size window at the spec position (seeded if random)."""
    img = reflect_pad_to(np.asarray(image), spec.size)
    y, x = crop_offset(img.shape[0], img.shape[1], spec, rng=rng)
    return img[y : y + spec.size, x : x + spec.size].copy()


def default_bank() -> list[DegradationOperator]:
    """Six operators with visibly distinct artifact signatures."""
    scales = frozenset((2.0, 3.0, 4.0))
    return [
        DegradationOperator("nearest", "interpolation", {"kernel": "nearest"}, scales),
        DegradationOperator("bicubic", "interpolation", {"kernel": "bicubic"}, scales),
        DegradationOperator(
            "gauss-bicubic", "blur-then-upsample", {"sigma": 1.5, "kernel": "bicubic"}, scales
        ),
        DegradationOperator(
            "awgn-bilinear", "noise-then-upsample", {"sigma": 0.05, "kernel": "bilinear"}, scales
        ),
        DegradationOperator(
            "unsharp-bicubic",
            "sharpen-after-upsample",
            {"amount": 1.5, "sigma": 1.0, "kernel": "bicubic"},
            scales,
        ),
        DegradationOperator(
            "jpeg-bicubic",
            "compression-after-upsample",
            {"quality": 15, "kernel": "bicubic"},
            scales,
        ),
    ]


def operator_separation(
    operators: list[DegradationOperator], image: np.ndarray, scale: float, seed: int = 0
) -> float:
    """Smallest mean pairwise pixel difference between operator outputs.

    A sanity measure that the contrastive task is non-degenerate: if two
    operators produce near-identical outputs on the same input, their
    positive pairs are indistinguishable.
    """
    outs = []
    for op in operators:
        if scale in op.supported_scales:
            rng = derived_rng(seed, "sep", op.method_id, scale)
            outs.append(apply_degradation(image, op, scale, rng))
    if len(outs) < 2:
        raise DataError("need at least two operators supporting the scale")
    worst = np.inf
    for i in range(len(outs)):
        for j in range(i + 1, len(outs)):
            worst = min(worst, float(np.mean(np.abs(outs[i] - outs[j]))))
    return worst


def _list_sources(lr_dir: str) -> list[str]:
    if not os.path.isdir(lr_dir):
        raise DataError(f"LR source directory {lr_dir!r} does not exist")
    names = sorted(
        n for n in os.listdir(lr_dir) if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS
    )
    return [os.path.join(lr_dir, n) for n in names]


def plan_forge(
    lr_dir: str, operators: list[DegradationOperator], scales: list[float]
) -> dict[str, int]:
    """Predicted record counts without writing anything (dry-run support)."""
    sources = _list_sources(lr_dir)
    combos = sum(
        len(op.supported_scales.intersection(float(s) for s in scales)) for op in operators
    )
    return {
        "LR": len(sources),
        "SR": combos * len(sources),
        "DS": combos * len(sources),
        "method_scale_combos": combos,
    }


def forge(
    lr_dir: str,
    operators: list[DegradationOperator],
    scales: list[float],
    out_dir: str,
    seed: int = 0,
) -> Manifest:
    """Apply every (operator, supported scale) pair to every LR source image.

    Writes one SR PNG and one half-scale DS PNG per combination under
    ``out_dir`` and returns a validated manifest whose paths are relative
    to ``out_dir``.  Per-output seeds derive from (content, method, scale),
    never from arrival order, so results are schedule-independent.
    """
    scales = [float(s) for s in scales]
    ids = [op.method_id for op in operators]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate operator method_ids in bank: {ids}")
    sources = _list_sources(lr_dir)
    os.makedirs(out_dir, exist_ok=True)

    records: list[ImageRecord] = []
    n_written = 0
    for src_path in sources:
        content_id = os.path.splitext(os.path.basename(src_path))[0]
        try:
            lr = read_image(src_path)
        except DataError as exc:
            log.warning("skipping unreadable image: %s", exc)
            continue
        records.append(
            ImageRecord(
                path=relative_to(src_path, out_dir),
                content_id=content_id,
                method_id="none",
                scale=1.0,
                role="LR",
                height=lr.shape[0],
                width=lr.shape[1],
                channels=lr.shape[2],
                split_tag="unassigned",
            )
        )
        for op in operators:
            for scale in sorted(op.supported_scales.intersection(scales)):
                rng = derived_rng(seed, "forge", content_id, op.method_id, scale)
                sr = apply_degradation(lr, op, scale, rng)
                ds = lanczos_half(sr)
                sr_rel = os.path.join("sr", op.method_id, f"x{scale:g}", f"{content_id}.png")
                ds_rel = os.path.join("ds", op.method_id, f"x{scale:g}", f"{content_id}.png")
                for rel, img in ((sr_rel, sr), (ds_rel, ds)):
                    dest = os.path.join(out_dir, rel)
                    os.makedirs(os.path.dirname(dest), exist_ok=True)
                    write_image(dest, img)
                records.append(
                    ImageRecord(
                        path=sr_rel, content_id=content_id, method_id=op.method_id,
                        scale=scale, role="SR", height=sr.shape[0], width=sr.shape[1],
                        channels=sr.shape[2], split_tag="pretext",
                    )
                )
                records.append(
                    ImageRecord(
                        path=ds_rel, content_id=content_id, method_id=op.method_id,
                        scale=scale, role="DS", height=ds.shape[0], width=ds.shape[1],
                        channels=ds.shape[2], split_tag="pretext",
                    )
                )
                n_written += 2
    if n_written == 0:
        raise DataError(
            f"forge produced no outputs from {lr_dir!r} "
            f"(no readable images or no supported operator scales)"
        )
    manifest = Manifest(
        records=records,
        metadata={
            "generator": "srqa-forge",
            "operators": sorted(ids),
            "scales": scales,
            "seed": int(seed),
        },
        base_dir=out_dir,
    )
    manifest.validate()
    return manifest
