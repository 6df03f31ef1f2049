"""Paired region dataset: in-memory types, JSON-lines manifest, statistics.

Manifest layout (one JSON object per line, UTF-8)::

    {"format": "textsr-manifest", "version": 1, "split": "test"}
    {"id": "r0001", "lr": "lr/r0001.png", "hr": "hr/r0001.png", "scale": 4,
     "lr_focal_mm": 13, "hr_focal_mm": 52, "lr_size": [57, 99],
     "hr_size": [228, 396], "registration": null,
     "lines": [{"quad": [[x, y], ...], "transcript": "...", "language": "zh"}]}

Image paths are relative to the manifest's directory. Quads are stored in HR
pixel coordinates (x to the right, y down, corners clockwise from top-left).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .imageops import as_image, load_png, png_size

MANIFEST_FORMAT = "textsr-manifest"
MANIFEST_VERSION = 1
ILLEGIBLE = "###"
LANGUAGES = ("zh", "en", "mixed")
SPLITS = ("train", "test")
# (lr focal, hr focal) -> scale
FOCAL_PAIRS = {(13, 26): 2, (26, 52): 2, (13, 52): 4}
DEFAULT_FOCALS = {2: (26, 52), 4: (13, 52)}


class ManifestError(ValueError):
    """Raised for schema violations; carries the offending entry and field."""

    def __init__(self, message, entry=None, field=None):
        where = []
        if entry is not None:
            where.append(f"entry {entry}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = (", ".join(where) + ": ") if where else ""
        super().__init__(prefix + message)
        self.entry = entry
        self.field = field


@dataclass(frozen=True)
class RegistrationTransform:
    """LR-to-HR alignment: ``hr(x) ~ gain * lr_up(affine @ [x, 1]) + bias``.

    ``affine`` is 2x3 in HR pixel index coordinates (column ``x``, row ``y``).
    ``history`` holds the photometric MSE after every half-iteration.
    """

    affine: tuple
    gain: tuple
    bias: tuple
    residual: float
    history: tuple = field(default=(), compare=False)
    flagged: bool = False

    def __post_init__(self):
        a = np.asarray(self.affine, dtype=float)
        if a.shape != (2, 3):
            raise ValueError("affine must be 2x3")
        if abs(np.linalg.det(a[:, :2])) < 1e-12:
            raise ValueError("affine is not invertible")
        if self.residual < 0:
            raise ValueError("residual must be nonnegative")

    @classmethod
    def identity(cls, channels=3):
        return cls(
            affine=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
            gain=(1.0,) * channels,
            bias=(0.0,) * channels,
            residual=0.0,
        )

    @property
    def matrix(self):
        return np.asarray(self.affine, dtype=float)

    def to_dict(self):
        return {
            "affine": [list(r) for r in self.affine],
            "gain": list(self.gain),
            "bias": list(self.bias),
            "residual": self.residual,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            affine=tuple(tuple(float(v) for v in r) for r in d["affine"]),
            gain=tuple(float(v) for v in d["gain"]),
            bias=tuple(float(v) for v in d["bias"]),
            residual=float(d["residual"]),
            flagged=bool(d.get("flagged", False)),
        )


def check_scale_sizes(lr_size, hr_size, scale, exact=False):
    slack = 0 if exact else 1
    for axis, (lo, hi) in enumerate(zip(lr_size, hr_size)):
        if abs(hi - scale * lo) > slack:
            dim = "height" if axis == 0 else "width"
            raise ValueError(
                f"hr {dim} {hi} is not {scale} x lr {dim} {lo}"
                + ("" if exact else " (+-1)")
            )


def check_focals(lr_focal, hr_focal, scale):
    expected = FOCAL_PAIRS.get((lr_focal, hr_focal))
    if expected is None:
        raise ValueError(f"unsupported focal pair {lr_focal}mm -> {hr_focal}mm")
    if expected != scale:
        raise ValueError(
            f"focal pair {lr_focal}mm -> {hr_focal}mm implies scale {expected}, got {scale}"
        )


@dataclass
class RegionPair:
    """One LR/HR text-region pair held in memory."""

    lr: np.ndarray
    hr: np.ndarray
    scale: int
    lr_focal_mm: int = 0
    hr_focal_mm: int = 0
    registration: Optional[RegistrationTransform] = None

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError("scale must be 2 or 4")
        if not self.lr_focal_mm and not self.hr_focal_mm:
            self.lr_focal_mm, self.hr_focal_mm = DEFAULT_FOCALS[self.scale]
        check_focals(self.lr_focal_mm, self.hr_focal_mm, self.scale)
        self.lr = as_image(self.lr, "lr")
        self.hr = as_image(self.hr, "hr")
        check_scale_sizes(self.lr.shape[:2], self.hr.shape[:2], self.scale)


def quad_area(quad):
    """Signed shoelace area; positive for clockwise order in image coordinates."""
    q = np.asarray(quad, dtype=float)
    x, y = q[:, 0], q[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return d1 * d2 < 0 and d3 * d4 < 0


def is_simple_quad(quad):
    q = [tuple(map(float, p)) for p in quad]
    return not (_segments_cross(q[0], q[1], q[2], q[3]) or _segments_cross(q[1], q[2], q[3], q[0]))


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quad_to_lr(quad, scale):
    """HR-space quad to LR space: divide by scale, round half away from zero."""
    return round_half_away(np.asarray(quad, dtype=float) / scale)


@dataclass(frozen=True)
class TextLine:
    quad: tuple
    transcript: str
    language: str

    @property
    def illegible(self):
        return self.transcript == ILLEGIBLE

    def validate(self, hr_size=None):
        if len(self.quad) != 4 or any(len(p) != 2 for p in self.quad):
            raise ValueError("quad must have exactly 4 (x, y) points")
        if self.language not in LANGUAGES:
            raise ValueError(f"language must be one of {LANGUAGES}, got {self.language!r}")
        if not self.transcript:
            raise ValueError(f"transcript is empty (use {ILLEGIBLE!r} for illegible lines)")
        if quad_area(self.quad) <= 0:
            raise ValueError("quad must have positive area in clockwise order")
        if not is_simple_quad(self.quad):
            raise ValueError("quad is self-intersecting")
        if hr_size is not None:
            h, w = hr_size
            q = np.asarray(self.quad, dtype=float)
            if q.min() < 0 or q[:, 0].max() > w or q[:, 1].max() > h:
                raise ValueError(f"quad {self.quad} lies outside the {h}x{w} HR image")

    def to_dict(self):
        return {"quad": [list(p) for p in self.quad], "transcript": self.transcript, "language": self.language}

    @classmethod
    def from_dict(cls, d):
        quad = tuple(tuple(p) for p in d["quad"])
        return cls(quad=quad, transcript=d["transcript"], language=d["language"])


@dataclass(frozen=True)
class RegionEntry:
    id: str
    lr: str
    hr: str
    scale: int
    lr_focal_mm: int
    hr_focal_mm: int
    lr_size: tuple
    hr_size: tuple
    lines: tuple = ()
    registration: Optional[RegistrationTransform] = None

    def to_dict(self):
        return {
            "id": self.id,
            "lr": self.lr,
            "hr": self.hr,
            "scale": self.scale,
            "lr_focal_mm": self.lr_focal_mm,
            "hr_focal_mm": self.hr_focal_mm,
            "lr_size": list(self.lr_size),
            "hr_size": list(self.hr_size),
            "registration": None if self.registration is None else self.registration.to_dict(),
            "lines": [ln.to_dict() for ln in self.lines],
        }


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    entries: tuple = ()
    version: int = MANIFEST_VERSION
    root: Optional[Path] = field(default=None, compare=False)

    def resolve(self, rel):
        return (self.root or Path(".")) / rel

    def load_pair(self, entry):
        return RegionPair(
            lr=load_png(self.resolve(entry.lr)),
            hr=load_png(self.resolve(entry.hr)),
            scale=entry.scale,
            lr_focal_mm=entry.lr_focal_mm,
            hr_focal_mm=entry.hr_focal_mm,
            registration=entry.registration,
        )

    def __add__(self, other):
        return DatasetManifest(self.split, self.entries + other.entries, self.version, self.root)


_REQUIRED = ("id", "lr", "hr", "scale", "lr_focal_mm", "hr_focal_mm", "lr_size", "hr_size", "lines")


def _parse_entry(d, index, root, check_files):
    if not isinstance(d, dict):
        raise ManifestError("entry must be an object", index)
    for key in _REQUIRED:
        if key not in d:
            raise ManifestError("missing", index, key)
    if d["scale"] not in (2, 4):
        raise ManifestError("scale must be 2 or 4", index, "scale")
    try:
        check_focals(d["lr_focal_mm"], d["hr_focal_mm"], d["scale"])
    except ValueError as exc:
        raise ManifestError(str(exc), index, "lr_focal_mm") from None
    lr_size, hr_size = tuple(d["lr_size"]), tuple(d["hr_size"])
    for key, size in (("lr_size", lr_size), ("hr_size", hr_size)):
        if len(size) != 2 or min(size) < 1:
            raise ManifestError("must be [height, width] with positive values", index, key)
    try:
        check_scale_sizes(lr_size, hr_size, d["scale"])
    except ValueError as exc:
        raise ManifestError(str(exc), index, "hr_size") from None
    if check_files:
        for key, size in (("lr", lr_size), ("hr", hr_size)):
            path = root / d[key]
            if not path.is_file():
                raise ManifestError(f"image not found: {path}", index, key)
            actual = png_size(path)
            if actual != size:
                raise ManifestError(f"image is {actual}, manifest says {size}", index, key + "_size")
    lines = []
    for j, ld in enumerate(d["lines"]):
        fname = f"lines[{j}]"
        try:
            line = TextLine.from_dict(ld)
            line.validate(hr_size)
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed line: {exc}", index, fname) from None
        except ValueError as exc:
            raise ManifestError(str(exc), index, fname) from None
        lines.append(line)
    reg = d.get("registration")
    if reg is not None:
        try:
            reg = RegistrationTransform.from_dict(reg)
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad registration: {exc}", index, "registration") from None
    return RegionEntry(
        id=str(d["id"]),
        lr=d["lr"],
        hr=d["hr"],
        scale=d["scale"],
        lr_focal_mm=d["lr_focal_mm"],
        hr_focal_mm=d["hr_focal_mm"],
        lr_size=lr_size,
        hr_size=hr_size,
        lines=tuple(lines),
        registration=reg,
    )


def load_manifest(path, check_files=True):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not rows:
        raise ManifestError("empty manifest file (no header)")
    try:
        header = json.loads(rows[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"bad header: {exc}") from None
    if header.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"not a {MANIFEST_FORMAT} file", field="format")
    if header.get("split") not in SPLITS:
        raise ManifestError(f"split must be one of {SPLITS}", field="split")
    entries = []
    for i, row in enumerate(rows[1:]):
        try:
            d = json.loads(row)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON: {exc}", i) from None
        entries.append(_parse_entry(d, i, root, check_files))
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate entry ids", field="id")
    return DatasetManifest(
        split=header["split"], entries=tuple(entries), version=header.get("version", MANIFEST_VERSION), root=root
    )


def save_manifest(m, path):
    path = Path(path)
    header = {"format": MANIFEST_FORMAT, "version": m.version, "split": m.split}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for e in m.entries:
            fh.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class StatisticsRecord:
    regions: int = 0
    lines: int = 0
    zh_lines: int = 0
    en_lines: int = 0
    mixed_lines: int = 0
    illegible_lines: int = 0
    regions_by_scale: tuple = ()
    lines_by_scale: tuple = ()
    min_line_size: Optional[tuple] = None
    max_line_size: Optional[tuple] = None
    min_region_size: Optional[tuple] = None
    max_region_size: Optional[tuple] = None

    def __add__(self, other):
        def merge_counts(a, b):
            d = dict(a)
            for k, v in b:
                d[k] = d.get(k, 0) + v
            return tuple(sorted(d.items()))

        def pick(a, b, fn):
            cands = [s for s in (a, b) if s is not None]
            return fn(cands, key=lambda s: (s[0] * s[1], s)) if cands else None

        return StatisticsRecord(
            regions=self.regions + other.regions,
            lines=self.lines + other.lines,
            zh_lines=self.zh_lines + other.zh_lines,
            en_lines=self.en_lines + other.en_lines,
            mixed_lines=self.mixed_lines + other.mixed_lines,
            illegible_lines=self.illegible_lines + other.illegible_lines,
            regions_by_scale=merge_counts(self.regions_by_scale, other.regions_by_scale),
            lines_by_scale=merge_counts(self.lines_by_scale, other.lines_by_scale),
            min_line_size=pick(self.min_line_size, other.min_line_size, min),
            max_line_size=pick(self.max_line_size, other.max_line_size, max),
            min_region_size=pick(self.min_region_size, other.min_region_size, min),
            max_region_size=pick(self.max_region_size, other.max_region_size, max),
        )

    def to_dict(self):
        d = asdict(self)
        d["regions_by_scale"] = {str(k): v for k, v in self.regions_by_scale}
        d["lines_by_scale"] = {str(k): v for k, v in self.lines_by_scale}
        return d


def line_size(quad):
    """(height, width) of the quad's axis-aligned bounding box, in whole pixels."""
    q = np.asarray(quad, dtype=float)
    w = math.ceil(q[:, 0].max()) - math.floor(q[:, 0].min())
    h = math.ceil(q[:, 1].max()) - math.floor(q[:, 1].min())
    return (h, w)


def manifest_statistics(m):
    """Counts in the style of the dataset statistics table.

    Sizes are (height, width); min/max are taken by pixel area.
    """
    stats = StatisticsRecord()
    for e in m.entries:
        langs = [ln.language for ln in e.lines]
        sizes = [line_size(ln.quad) for ln in e.lines]
        area = lambda s: (s[0] * s[1], s)  # noqa: E731
        one = StatisticsRecord(
            regions=1,
            lines=len(e.lines),
            zh_lines=langs.count("zh"),
            en_lines=langs.count("en"),
            mixed_lines=langs.count("mixed"),
            illegible_lines=sum(ln.illegible for ln in e.lines),
            regions_by_scale=((e.scale, 1),),
            lines_by_scale=((e.scale, len(e.lines)),),
            min_line_size=min(sizes, key=area) if sizes else None,
            max_line_size=max(sizes, key=area) if sizes else None,
            min_region_size=tuple(e.hr_size),
            max_region_size=tuple(e.hr_size),
        )
        stats = stats + one
    return stats


def write_dataset(items, out_dir, split="test", manifest_name="manifest.jsonl"):
    """Write ``(id, RegionPair, lines)`` items as PNGs plus a manifest.

    Returns the path of the manifest.
    """
    from .imageops import save_png

    out_dir = Path(out_dir)
    entries = []
    for rid, pair, lines in items:
        lr_rel, hr_rel = f"lr/{rid}.png", f"hr/{rid}.png"
        save_png(pair.lr, out_dir / lr_rel)
        save_png(pair.hr, out_dir / hr_rel)
        entries.append(
            RegionEntry(
                id=rid,
                lr=lr_rel,
                hr=hr_rel,
                scale=pair.scale,
                lr_focal_mm=pair.lr_focal_mm,
                hr_focal_mm=pair.hr_focal_mm,
                lr_size=pair.lr.shape[:2],
                hr_size=pair.hr.shape[:2],
                lines=tuple(lines),
                registration=pair.registration,
            )
        )
    path = out_dir / manifest_name
    save_manifest(DatasetManifest(split=split, entries=tuple(entries), root=out_dir), path)
    return path
