"""Dataset records and the line-delimited manifest format.

A manifest file is UTF-8 text: the first line is a JSON object with
generation metadata, every following line is one image record as a JSON
object with a fixed key order.  Image paths are stored relative to the
manifest location whenever possible so a dataset directory can be moved
wholesale.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .errors import ManifestError

ROLES = ("LR", "HR", "SR", "DS")
SPLIT_TAGS = ("pretext", "down_train", "down_test", "unassigned")

_RECORD_FIELDS = (
    "path",
    "content_id",
    "method_id",
    "scale",
    "role",
    "height",
    "width",
    "channels",
    "split_tag",
)


@dataclass(frozen=True)
class ImageRecord:
    """One image with its provenance labels.

    ``content_id`` identifies the underlying scene, ``method_id`` the
    degradation/upscaling method ("none" for LR/HR), ``scale`` the
    upscaling factor and ``role`` one of LR, HR, SR or DS (the half-scale
    counterpart of an SR image).
    """

    path: str
    content_id: str
    method_id: str
    scale: float
    role: str
    height: int
    width: int
    channels: int
    split_tag: str = "unassigned"

    def key(self) -> tuple[str, str, float, str]:
        """Identity key, unique within a manifest."""
        return (self.content_id, self.method_id, self.scale, self.role)

    def validate(self) -> None:
        if self.role not in ROLES:
            raise ManifestError(f"unknown role {self.role!r} (expected one of {ROLES})")
        if self.split_tag not in SPLIT_TAGS:
            raise ManifestError(
                f"unknown split tag {self.split_tag!r} (expected one of {SPLIT_TAGS})"
            )
        if not (self.scale > 0) or not math.isfinite(self.scale):
            raise ManifestError(f"scale must be a positive finite real, got {self.scale}")
        if self.role in ("SR", "DS"):
            if self.method_id == "none":
                raise ManifestError(
                    f"{self.role} record {self.content_id!r} must name its method"
                )
            if self.scale <= 1:
                raise ManifestError(
                    f"{self.role} record {self.content_id!r} needs scale > 1, got {self.scale}"
                )
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ManifestError(
                f"record {self.content_id!r} has degenerate dims "
                f"{self.height}x{self.width}x{self.channels}"
            )


@dataclass
class Manifest:
    """Ordered collection of image records plus generation metadata.

    Immutable by convention once validated; ``base_dir`` is the directory
    record paths are relative to (set by :func:`read_manifest`, never
    serialized, excluded from equality).
    """

    records: list[ImageRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    base_dir: str = field(default="", compare=False)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def resolve_path(self, record: ImageRecord) -> str:
        """Absolute path of a record's image file."""
        if os.path.isabs(record.path) or not self.base_dir:
            return record.path
        return os.path.normpath(os.path.join(self.base_dir, record.path))

    def summary(self) -> dict[str, int]:
        """Record counts partitioned by role."""
        counts = {role: 0 for role in ROLES}
        for rec in self.records:
            counts[rec.role] += 1
        return counts

    def by_role(self, *roles: str) -> list[ImageRecord]:
        return [r for r in self.records if r.role in roles]

    def validate(self, strict_lineage: bool = True) -> None:
        """Check every type invariant; raise ManifestError naming the offender.

        ``strict_lineage`` additionally requires every SR content to appear
        among the LR records and every DS record to have its SR source (the
        pretext-dataset reading); scored downstream sets ship without LR
        sources, so their readers relax it.
        """
        seen: dict[tuple, str] = {}
        lr_contents = set()
        sr_index: dict[tuple, ImageRecord] = {}
        for rec in self.records:
            rec.validate()
            key = rec.key()
            if key in seen:
                raise ManifestError(f"duplicate record key {key}")
            seen[key] = rec.path
            if rec.role == "LR":
                lr_contents.add(rec.content_id)
            elif rec.role == "SR":
                sr_index[(rec.content_id, rec.method_id, rec.scale)] = rec
        for rec in self.records:
            if rec.role == "SR" and strict_lineage and rec.content_id not in lr_contents:
                raise ManifestError(
                    f"SR record {rec.key()} has no LR record for content "
                    f"{rec.content_id!r}"
                )
            if rec.role == "DS":
                src = sr_index.get((rec.content_id, rec.method_id, rec.scale))
                if src is None:
                    if strict_lineage:
                        raise ManifestError(f"DS record {rec.key()} has no SR source record")
                    continue
                want = (src.height // 2, src.width // 2)
                if (rec.height, rec.width) != want:
                    raise ManifestError(
                        f"DS record {rec.key()} dims {(rec.height, rec.width)} "
                        f"!= floor(source/2) {want}"
                    )


def _record_to_json(rec: ImageRecord) -> str:
    obj = {name: getattr(rec, name) for name in _RECORD_FIELDS}
    obj["scale"] = float(obj["scale"])
    return json.dumps(obj, separators=(", ", ": "))


def _record_from_json(line: str, lineno: int) -> ImageRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: malformed record: {exc}") from exc
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: record is not an object")
    missing = [name for name in _RECORD_FIELDS if name not in obj and name != "split_tag"]
    if missing:
        raise ManifestError(f"line {lineno}: missing fields {missing}")
    extra = set(obj) - set(_RECORD_FIELDS) - {"quality"}
    if extra:
        raise ManifestError(f"line {lineno}: unknown fields {sorted(extra)}")
    try:
        rec = ImageRecord(
            path=str(obj["path"]),
            content_id=str(obj["content_id"]),
            method_id=str(obj["method_id"]),
            scale=float(obj["scale"]),
            role=str(obj["role"]),
            height=int(obj["height"]),
            width=int(obj["width"]),
            channels=int(obj["channels"]),
            split_tag=str(obj.get("split_tag", "unassigned")),
        )
        rec.validate()
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"line {lineno}: bad field value: {exc}") from exc
    except ManifestError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from exc
    return rec


def write_manifest(manifest: Manifest, path: str) -> None:
    """Serialize a validated manifest, one record per line after a metadata line."""
    manifest.validate()
    lines = [json.dumps(manifest.metadata, sort_keys=True, separators=(", ", ": "))]
    lines.extend(_record_to_json(rec) for rec in manifest.records)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise ManifestError(f"cannot write manifest to {path!r}: {exc}") from exc


def read_manifest(path: str) -> Manifest:
    """Parse and fully validate a manifest file.

    Either returns a Manifest satisfying all invariants or raises a
    ManifestError locating the problem; there is no partially-valid result.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path!r}: {exc}") from exc
    if not lines:
        raise ManifestError(f"{path!r}: empty file (expected a metadata line)")
    try:
        metadata = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line 1: malformed metadata: {exc}") from exc
    if not isinstance(metadata, dict):
        raise ManifestError("line 1: metadata must be a JSON object")
    records = [
        _record_from_json(line, lineno)
        for lineno, line in enumerate(lines[1:], start=2)
        if line.strip()
    ]
    manifest = Manifest(
        records=records,
        metadata=metadata,
        base_dir=os.path.dirname(os.path.abspath(path)),
    )
    manifest.validate()
    return manifest


@dataclass(frozen=True)
class ScoredRecord:
    """An image record paired with a ground-truth quality score."""

    record: ImageRecord
    quality: float

    def validate(self) -> None:
        self.record.validate()
        if not math.isfinite(self.quality):
            raise ManifestError(
                f"record {self.record.key()} has non-finite quality {self.quality}"
            )


def write_scored_manifest(scored: Iterable[ScoredRecord], metadata: dict, path: str) -> None:
    """Manifest format extended with a per-record ``quality`` field."""
    scored = list(scored)
    manifest = Manifest(records=[s.record for s in scored], metadata=metadata)
    manifest.validate(strict_lineage=False)
    for s in scored:
        s.validate()
    lines = [json.dumps(metadata, sort_keys=True, separators=(", ", ": "))]
    for s in scored:
        obj = json.loads(_record_to_json(s.record))
        obj["quality"] = float(s.quality)
        lines.append(json.dumps(obj, separators=(", ", ": ")))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise ManifestError(f"cannot write scored manifest to {path!r}: {exc}") from exc


def read_scored_manifest(path: str) -> tuple[list[ScoredRecord], Manifest]:
    """Read a scored manifest; every record must carry a finite quality."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read scored manifest {path!r}: {exc}") from exc
    if not lines:
        raise ManifestError(f"{path!r}: empty file (expected a metadata line)")
    try:
        metadata = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line 1: malformed metadata: {exc}") from exc
    scored = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _record_from_json(line, lineno)
        obj = json.loads(line)
        if "quality" not in obj:
            raise ManifestError(f"line {lineno}: missing quality field")
        s = ScoredRecord(record=rec, quality=float(obj["quality"]))
        s.validate()
        scored.append(s)
    manifest = Manifest(
        records=[s.record for s in scored],
        metadata=metadata,
        base_dir=os.path.dirname(os.path.abspath(path)),
    )
    manifest.validate(strict_lineage=False)
    return scored, manifest


def relative_to(path: str, base_dir: str) -> str:
    """Path relative to base_dir when representable, else absolute."""
    try:
        return os.path.relpath(path, base_dir)
    except ValueError:  # different drives on Windows
        return os.path.abspath(path)


def retag(manifest: Manifest, split_tag: str, keys: set[tuple] | None = None) -> Manifest:
    """Copy of the manifest with the given split tag on matching records."""
    if split_tag not in SPLIT_TAGS:
        raise ManifestError(f"unknown split tag {split_tag!r}")
    out = []
    for rec in manifest.records:
        if keys is None or rec.key() in keys:
            out.append(replace(rec, split_tag=split_tag))
        else:
            out.append(rec)
    return Manifest(records=out, metadata=dict(manifest.metadata), base_dir=manifest.base_dir)
