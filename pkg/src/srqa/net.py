"""Encoder backbone and the projection / scale-regression heads.

The reference configuration mirrors the published setup: a pretrained
768-d convolutional backbone with a 512-hidden projection head down to
128 dims.  Desk-scale work swaps in a small 4-stage strided conv net so
the whole pipeline trains in minutes on CPU; the contrastive machinery is
identical either way.  Both heads are two affine layers with an exact-erf
GELU between them and no activation after the last layer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError

CHECKPOINT_VERSION = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class EncoderConfig:
    backbone_id: str = "convnext-tiny"
    d_enc: int = 768
    pretrained: bool = True
    trainable: bool = True

    def __post_init__(self):
        if self.d_enc < 1:
            raise ValueError(f"d_enc must be >= 1, got {self.d_enc}")


@dataclass
class HeadConfig:
    d_hidden: int = 512
    d_proj: int = 128
    normalization: str = "none"  # "none" | "layer-norm"
    norm_position: str = "pre"  # layer-norm before ("pre") or after ("post") the GELU
    bias: bool = True  # strict-equation mode drops the affine biases

    def __post_init__(self):
        if self.normalization not in ("none", "layer-norm"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.norm_position not in ("pre", "post"):
            raise ValueError(f"unknown norm position {self.norm_position!r}")


def desk_encoder_config(d_enc: int = 128) -> EncoderConfig:
    return EncoderConfig(backbone_id="small-conv", d_enc=d_enc, pretrained=False)


class SmallConvEncoder(nn.Module):
    """4 strided conv stages with GELU, global average pooled to d_enc.

    Each stage carries a GroupNorm(1, C): a randomly initialized stack
    otherwise collapses every input to nearly the same pooled vector
    (the shared bias/GELU offset dwarfs between-sample variance), which
    parks the contrastive loss at its uniform-similarity saddle.
    """

    def __init__(self, d_enc: int):
        super().__init__()
        widths = [max(2, d_enc // 8), max(2, d_enc // 4), max(2, d_enc // 2), d_enc]
        layers: list[nn.Module] = []
        c_in = 3
        for c_out in widths:
            layers.append(nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1))
            layers.append(nn.GroupNorm(1, c_out))
            layers.append(nn.GELU(approximate="none"))
            c_in = c_out
        self.stages = nn.Sequential(*layers)
        self.d_enc = d_enc

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(x).mean(dim=(2, 3))


class ConvNeXtEncoder(nn.Module):
    """Pretrained convolutional backbone from torchvision, pooled to 768 dims."""

    def __init__(self, pretrained: bool):
        super().__init__()
        try:
            from torchvision.models import ConvNeXt_Tiny_Weights, convnext_tiny
        except ImportError as exc:  # pragma: no cover - optional extra
            raise CheckpointError(
                "backbone 'convnext-tiny' requires the optional torchvision dependency"
            ) from exc
        weights = ConvNeXt_Tiny_Weights.DEFAULT if pretrained else None
        base = convnext_tiny(weights=weights)
        self.features = base.features
        self.d_enc = 768

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x).mean(dim=(2, 3))


def _build_encoder(cfg: EncoderConfig) -> tuple[nn.Module, tuple, tuple]:
    if cfg.backbone_id == "small-conv":
        return SmallConvEncoder(cfg.d_enc), (0.5, 0.5, 0.5), (0.5, 0.5, 0.5)
    if cfg.backbone_id == "convnext-tiny":
        enc = ConvNeXtEncoder(cfg.pretrained)
        if cfg.d_enc != enc.d_enc:
            raise ValueError(f"convnext-tiny produces 768 dims, config says {cfg.d_enc}")
        return enc, IMAGENET_MEAN, IMAGENET_STD
    raise ValueError(f"unknown backbone_id {cfg.backbone_id!r}")


class MlpHead(nn.Module):
    """Two affine layers with an exact-erf GELU between them.

    Optional layer normalization acts on the hidden layer only (the output
    affine is never normalized: the scale head emits a single real and
    normalizing it would collapse the prediction to its bias).
    """

    def __init__(self, d_in: int, d_hidden: int, d_out: int, cfg: HeadConfig):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden, bias=cfg.bias)
        self.fc2 = nn.Linear(d_hidden, d_out, bias=cfg.bias)
        self.act = nn.GELU(approximate="none")
        self.norm = (
            nn.LayerNorm(d_hidden) if cfg.normalization == "layer-norm" else nn.Identity()
        )
        self.norm_position = cfg.norm_position

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        hidden = self.fc1(x)
        if self.norm_position == "pre":
            hidden = self.act(self.norm(hidden))
        else:
            hidden = self.norm(self.act(hidden))
        return self.fc2(hidden)


class PretextModel(nn.Module):
    """Encoder plus projection head and auxiliary scale head."""

    def __init__(self, encoder_config: EncoderConfig, head_config: HeadConfig):
        super().__init__()
        self.encoder_config = encoder_config
        self.head_config = head_config
        encoder, mean, std = _build_encoder(encoder_config)
        self.encoder = encoder
        self.register_buffer("input_mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(std).view(1, 3, 1, 1))
        d = encoder_config.d_enc
        self.projection = MlpHead(d, head_config.d_hidden, head_config.d_proj, head_config)
        self.scale_head = MlpHead(d, head_config.d_hidden, 1, head_config)
        if not encoder_config.trainable:
            for p in self.encoder.parameters():
                p.requires_grad_(False)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected an (n, 3, H, W) batch, got shape {tuple(x.shape)}")

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        x = (x - self.input_mean.to(x.dtype)) / self.input_std.to(x.dtype)
        return self.encoder(x)

    def project(self, h: torch.Tensor) -> torch.Tensor:
        if h.ndim != 2 or h.shape[1] != self.encoder_config.d_enc:
            raise ValueError(
                f"expected (n, {self.encoder_config.d_enc}) latents, got {tuple(h.shape)}"
            )
        return self.projection(h)

    def predict_scale(self, h: torch.Tensor) -> torch.Tensor:
        if h.ndim != 2 or h.shape[1] != self.encoder_config.d_enc:
            raise ValueError(
                f"expected (n, {self.encoder_config.d_enc}) latents, got {tuple(h.shape)}"
            )
        return self.scale_head(h).squeeze(-1)

    def forward(self, x: torch.Tensor):
        h = self.encode(x)
        return h, self.project(h), self.predict_scale(h)


def build_model(
    encoder_config: EncoderConfig, head_config: HeadConfig, seed: int | None = None
) -> PretextModel:
    """Construct a model; pass a seed for reproducible initialization."""
    if seed is not None:
        torch.manual_seed(int(seed))
    return PretextModel(encoder_config, head_config)


def projection_param_count(d_enc: int, d_hidden: int, d_proj: int) -> int:
    return d_hidden * d_enc + d_hidden + d_proj * d_hidden + d_proj


def scale_head_param_count(d_enc: int, d_hidden: int) -> int:
    return d_hidden * d_enc + d_hidden + d_hidden + 1


def crops_to_tensor(crops: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(n, H, W, 3) [0, 1] array -> (n, 3, H, W) tensor."""
    arr = np.asarray(crops)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (n, H, W, 3) crops, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


@torch.no_grad()
def encode_batch(model: PretextModel, crops: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Frozen evaluation-mode latents for a stack of numpy crops."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    outs = []
    tensor = crops_to_tensor(crops, dtype=dtype)
    for start in range(0, tensor.shape[0], batch_size):
        outs.append(model.encode(tensor[start : start + batch_size]).cpu().numpy())
    if was_training:
        model.train()
    return np.concatenate(outs, axis=0)


def save_checkpoint(path: str, model: PretextModel, step: int, extras: dict | None = None) -> None:
    """Versioned container: configs, parameter blobs, step counter, extras."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "encoder_config": asdict(model.encoder_config),
        "head_config": asdict(model.head_config),
        "model_state": model.state_dict(),
        "step": int(step),
        "extras": extras or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str) -> tuple[PretextModel, int, dict]:
    """Rebuild the model from a checkpoint; raises CheckpointError on mismatch."""
    import pickle
    import zipfile

    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, ValueError, EOFError, pickle.UnpicklingError,
            zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot load checkpoint {path!r}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path!r} has version {payload.get('version') if isinstance(payload, dict) else '?'}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    enc_cfg = EncoderConfig(**payload["encoder_config"])
    if enc_cfg.backbone_id == "convnext-tiny":
        enc_cfg.pretrained = False  # weights come from the checkpoint itself
    head_cfg = HeadConfig(**payload["head_config"])
    model = PretextModel(enc_cfg, head_cfg)
    try:
        model.load_state_dict(payload["model_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path!r} does not fit its declared config: {exc}") from exc
    return model, payload["step"], payload["extras"]
