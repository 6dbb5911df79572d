"""Procedural glyph corpus, known/novel partition, triplet sampling and PGM I/O.

A corpus is a full (styles x contents) grid of grayscale glyph images.
Contents are stroke skeletons on a coarse grid; styles are raster
parameters (pen width, slant, glyph scale, ink darkness, pen roundness)
applied to every skeleton.

The grid is split into four subsets by whether the style and the content
are known (seen in training) or novel:

    D1 known style x known content      D2 known style x novel content
    D3 novel style x known content      D4 novel style x novel content
"""
from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

logger = logging.getLogger(__name__)

SUBSETS = ("D1", "D2", "D3", "D4")
GRID_STEPS = 4  # skeleton points lie on a (GRID_STEPS + 1)^2 lattice
MIN_SIZE = 16


# --------------------------------------------------------------------------
# styles, contents, rendering
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StyleSpec:
    style_id: int
    stroke_width: float
    slant: float
    scale: float
    ink_level: float
    corner_rounding: float


@dataclass(frozen=True)
class ContentSpec:
    content_id: int
    strokes: tuple  # ((x0, y0, x1, y1), ...) in unit-square coordinates, y down


def make_styles(n: int, seed: int = 0, image_size: int = 32) -> list[StyleSpec]:
    styles = []
    for i in range(n):
        rng = np.random.default_rng([seed, 0, i])
        styles.append(StyleSpec(
            style_id=i,
            stroke_width=float(rng.uniform(0.04, 0.11) * image_size),
            slant=float(rng.uniform(-0.35, 0.35)),
            scale=float(rng.uniform(0.65, 1.0)),
            ink_level=float(rng.uniform(0.0, 0.45)),
            corner_rounding=float(rng.uniform(0.0, 1.0)),
        ))
    return styles


def _random_skeleton(rng) -> tuple:
    n_strokes = int(rng.integers(3, 6))
    strokes = set()
    while len(strokes) < n_strokes:
        x0, y0 = rng.integers(0, GRID_STEPS + 1, size=2)
        kind = rng.integers(0, 4)
        length = int(rng.integers(1, GRID_STEPS + 1))
        dx, dy = [(1, 0), (0, 1), (1, 1), (1, -1)][kind]
        x1, y1 = x0 + dx * length, y0 + dy * length
        if not (0 <= x1 <= GRID_STEPS and 0 <= y1 <= GRID_STEPS):
            continue
        strokes.add(tuple(float(v) / GRID_STEPS for v in (x0, y0, x1, y1)))
    return tuple(sorted(strokes))


def make_contents(n: int, seed: int = 0) -> list[ContentSpec]:
    """``n`` distinct skeletons; content ``j`` depends only on ``(seed, j)``."""
    contents, seen = [], set()
    for j in range(n):
        rng = np.random.default_rng([seed, 1, j])
        skel = _random_skeleton(rng)
        while skel in seen:
            skel = _random_skeleton(rng)
        seen.add(skel)
        contents.append(ContentSpec(j, skel))
    return contents


def glyph_segments(style: StyleSpec, content: ContentSpec, size: int, slant: float | None = None) -> np.ndarray:
    """Stroke segments in pixel coordinates, shape [S, 4] as (x0, y0, x1, y1)."""
    slant = style.slant if slant is None else slant
    pts = np.asarray(content.strokes, dtype=np.float64).reshape(-1, 2, 2)
    margin = 0.5 * style.stroke_width + 1.0
    span = (size - 2 * margin) * style.scale
    c = size / 2.0
    x = (pts[..., 0] - 0.5) * span
    y = (pts[..., 1] - 0.5) * span
    x = x - slant * y  # y grows downward, so this leans the top to the right
    return np.stack([x[:, 0] + c, y[:, 0] + c, x[:, 1] + c, y[:, 1] + c], axis=1)


def rasterize_strokes(segments: np.ndarray, size: int, width: float, rounding: float,
                      ink_level: float) -> np.ndarray:
    """Stamp a pen of the given width along each segment.

    The pen blends a square (``rounding`` 0) and a round (``rounding`` 1)
    footprint.  Returns ``[1, size, size]`` float32, background 1.0.
    """
    centers = np.arange(size, dtype=np.float64) + 0.5
    py, px = np.meshgrid(centers, centers, indexing="ij")
    px = px.reshape(-1, 1)
    py = py.reshape(-1, 1)
    x0, y0, x1, y1 = (segments[:, k][None, :] for k in range(4))
    dx, dy = x1 - x0, y1 - y0
    len2 = np.maximum(dx * dx + dy * dy, 1e-12)
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0)
    ox = np.abs(px - (x0 + t * dx))
    oy = np.abs(py - (y0 + t * dy))
    dist = rounding * np.hypot(ox, oy) + (1.0 - rounding) * np.maximum(ox, oy)
    ink = (dist <= 0.5 * width).any(axis=1).reshape(size, size)
    img = np.where(ink, ink_level, 1.0).astype(np.float32)
    return img[None]


def render_glyph(style: StyleSpec, content: ContentSpec, size: int) -> np.ndarray:
    if size < MIN_SIZE:
        raise DataError(f"glyph size must be >= {MIN_SIZE}, got {size}")
    segs = glyph_segments(style, content, size)
    return rasterize_strokes(segs, size, style.stroke_width, style.corner_rounding, style.ink_level)


# --------------------------------------------------------------------------
# partition and corpus
# --------------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class Partition:
    n_styles: int
    n_contents: int
    known_styles: tuple
    known_contents: tuple

    @property
    def novel_styles(self) -> tuple:
        ks = set(self.known_styles)
        return tuple(i for i in range(self.n_styles) if i not in ks)

    @property
    def novel_contents(self) -> tuple:
        kc = set(self.known_contents)
        return tuple(j for j in range(self.n_contents) if j not in kc)

    def subset_of(self, style_id: int, content_id: int) -> str:
        ks = style_id in self.known_styles
        kc = content_id in self.known_contents
        return {(True, True): "D1", (True, False): "D2", (False, True): "D3", (False, False): "D4"}[(ks, kc)]

    def subset_axes(self, subset: str) -> tuple[tuple, tuple]:
        if subset not in SUBSETS:
            raise DataError(f"unknown subset {subset!r}; expected one of {', '.join(SUBSETS)}")
        styles = self.known_styles if subset in ("D1", "D2") else self.novel_styles
        contents = self.known_contents if subset in ("D1", "D3") else self.novel_contents
        return styles, contents

    def cells(self, subset: str) -> list[tuple[int, int]]:
        styles, contents = self.subset_axes(subset)
        return [(s, c) for s in styles for c in contents]


def make_partition(n_styles: int, n_contents: int, known_fraction: float = 0.75, seed: int = 0) -> Partition:
    if not 0.0 < known_fraction < 1.0:
        raise DataError(f"known_fraction must lie in (0, 1), got {known_fraction}")
    rng = np.random.default_rng([seed, 2])
    ns = _round_half_up(known_fraction * n_styles)
    nc = _round_half_up(known_fraction * n_contents)
    ks = tuple(sorted(int(i) for i in rng.permutation(n_styles)[:ns]))
    kc = tuple(sorted(int(j) for j in rng.permutation(n_contents)[:nc]))
    return Partition(n_styles, n_contents, ks, kc)


@dataclass
class Corpus:
    """Image grid ``images[style, content]`` of shape [S, C, H, W], float32 on [0, 1]."""

    images: np.ndarray
    partition: Partition
    seed: int = 0
    present: np.ndarray | None = None
    styles: list = field(default_factory=list)
    contents: list = field(default_factory=list)

    def __post_init__(self):
        if self.present is None:
            self.present = np.ones(self.images.shape[:2], dtype=bool)

    @property
    def n_styles(self) -> int:
        return self.images.shape[0]

    @property
    def n_contents(self) -> int:
        return self.images.shape[1]

    @property
    def image_size(self) -> int:
        return self.images.shape[2]

    def image(self, style_id: int, content_id: int) -> np.ndarray:
        return self.images[style_id, content_id][None]

    def batch(self, triplets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(style_refs [N,r,H,W], content_refs [N,r,H,W], targets [N,1,H,W])."""
        if not triplets:
            h = self.image_size
            e = np.zeros((0, 0, h, h), np.float32)
            return e, e, np.zeros((0, 1, h, h), np.float32)
        s = np.array([t.style_id for t in triplets])
        c = np.array([t.content_id for t in triplets])
        src = np.array([t.style_ref_contents for t in triplets])
        crs = np.array([t.content_ref_styles for t in triplets])
        style_refs = self.images[s[:, None], src]
        content_refs = self.images[crs, c[:, None]]
        targets = self.images[s, c][:, None]
        return style_refs, content_refs, targets


def build_corpus(n_styles: int, n_contents: int, image_size: int = 32, seed: int = 0,
                 known_fraction: float = 0.75) -> Corpus:
    styles = make_styles(n_styles, seed, image_size)
    contents = make_contents(n_contents, seed)
    images = np.empty((n_styles, n_contents, image_size, image_size), dtype=np.float32)
    for i, st in enumerate(styles):
        for j, ct in enumerate(contents):
            img = render_glyph(st, ct, image_size)
            if not (img <= 0.5).any():
                raise DataError(f"style {i} renders content {j} blank at size {image_size}")
            images[i, j] = img[0]
    part = make_partition(n_styles, n_contents, known_fraction, seed)
    return Corpus(images, part, seed, styles=styles, contents=contents)


# --------------------------------------------------------------------------
# triplets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Triplet:
    """Target cell plus the ids locating its two reference sets."""

    style_id: int
    content_id: int
    style_ref_contents: tuple  # style refs are images[style_id, j] for these j
    content_ref_styles: tuple  # content refs are images[i, content_id] for these i

    @property
    def r(self) -> int:
        return len(self.style_ref_contents)


def _pick_refs(rng, candidates: list, exclude: int, r: int, what: str) -> tuple:
    if exclude in candidates and len(candidates) >= r + 1:
        candidates = [x for x in candidates if x != exclude]
    if len(candidates) < r:
        raise DataError(f"r={r} exceeds the {len(candidates)} available {what}")
    idx = rng.choice(len(candidates), size=r, replace=False)
    return tuple(int(candidates[k]) for k in idx)


def sample_triplets(partition: Partition, subset: str, r: int, count: int, seed=0,
                    present: np.ndarray | None = None) -> list[Triplet]:
    """Sample ``count`` targets from ``subset`` with fresh reference sets.

    Style references always come from known contents and content references
    from known styles, so for a D4 target they lie in D3 and D2 respectively.
    """
    if count < 0:
        raise DataError(f"count must be >= 0, got {count}")
    if r < 1:
        raise DataError(f"r must be >= 1, got {r}")
    cells = partition.cells(subset)
    if present is not None:
        cells = [(s, c) for s, c in cells if present[s, c]]
    if count == 0:
        return []
    if not cells:
        raise DataError(f"subset {subset} is empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for _ in range(count):
        s, c = cells[int(rng.integers(len(cells)))]
        row = [j for j in partition.known_contents if present is None or present[s, j]]
        col = [i for i in partition.known_styles if present is None or present[i, c]]
        src = _pick_refs(rng, row, c, r, f"known contents for style {s} (style references)")
        crs = _pick_refs(rng, col, s, r, f"known styles for content {c} (content references)")
        out.append(Triplet(s, c, src, crs))
    return out


def split_triplets(triplets) -> list[Triplet]:
    """Expand each <r, r, 1> triplet into r*r single-reference triplets."""
    out = []
    for t in triplets:
        for j in t.style_ref_contents:
            for i in t.content_ref_styles:
                out.append(Triplet(t.style_id, t.content_id, (j,), (i,)))
    return out


# --------------------------------------------------------------------------
# PGM image I/O
# --------------------------------------------------------------------------

def encode_pgm(img) -> bytes:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise DataError(f"save_image expects [H, W] or [1, H, W], got {a.shape}")
    h, w = a.shape
    q = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse binary PGM bytes into a [1, H, W] float32 array on [0, 1]."""
    if data[:2] != b"P5":
        raise FormatError("not a binary PGM: magic is not 'P5'", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        start = pos
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos == start and fields:
            raise FormatError("expected whitespace between header fields", pos)
        tok_start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if pos == tok_start:
            raise FormatError("malformed PGM header", pos)
        fields.append(int(data[tok_start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after maxval", pos)
    pos += 1
    w, h, maxval = fields
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM dimensions {w}x{h} / maxval {maxval}", 2)
    depth = 1 if maxval < 256 else 2
    need = w * h * depth
    if len(data) - pos < need:
        raise FormatError(f"truncated PGM payload: need {need} bytes, have {len(data) - pos}", len(data))
    raw = np.frombuffer(data, dtype=np.uint8 if depth == 1 else ">u2", count=w * h, offset=pos)
    return (raw.astype(np.float32) / np.float32(maxval)).reshape(1, h, w)


def save_image(img, path) -> None:
    Path(path).write_bytes(encode_pgm(img))


def load_image(path) -> np.ndarray:
    try:
        return decode_pgm(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# on-disk corpus
# --------------------------------------------------------------------------

def _ints(v: str) -> tuple:
    v = v.strip()
    return tuple(int(x) for x in v.split(",")) if v else ()


def write_manifest(path, corpus: Corpus) -> None:
    p = corpus.partition
    lines = [
        f"n_styles = {corpus.n_styles}",
        f"n_contents = {corpus.n_contents}",
        f"image_size = {corpus.image_size}",
        f"seed = {corpus.seed}",
        f"known_styles = {','.join(map(str, p.known_styles))}",
        f"known_contents = {','.join(map(str, p.known_contents))}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    missing = {"n_styles", "n_contents", "image_size", "seed", "known_styles", "known_contents"} - set(out)
    if missing:
        raise FormatError(f"{path}: manifest lacks {', '.join(sorted(missing))}")
    return {
        "n_styles": int(out["n_styles"]),
        "n_contents": int(out["n_contents"]),
        "image_size": int(out["image_size"]),
        "seed": int(out["seed"]),
        "known_styles": _ints(out["known_styles"]),
        "known_contents": _ints(out["known_contents"]),
    }


def export_corpus(corpus: Corpus, root) -> None:
    root = Path(root)
    for i in range(corpus.n_styles):
        d = root / f"style_{i}"
        d.mkdir(parents=True, exist_ok=True)
        for j in range(corpus.n_contents):
            if corpus.present[i, j]:
                save_image(corpus.images[i, j], d / f"content_{j}.pgm")
    write_manifest(root / "manifest.txt", corpus)


_CELL = re.compile(r"content_(\d+)\.pgm$")
_STYLE = re.compile(r"style_(\d+)$")


def import_corpus(root, known_fraction: float = 0.75) -> Corpus:
    """Load a ``style_<i>/content_<j>.pgm`` tree.

    Without ``manifest.txt`` the grid extent is inferred from the file names
    and a seed-0 partition is drawn.  Missing cells are reported with a
    warning and masked out of sampling.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus directory {root} does not exist")
    found = {}
    for sd in sorted(root.iterdir()):
        m = _STYLE.match(sd.name)
        if not (m and sd.is_dir()):
            continue
        for f in sorted(sd.iterdir()):
            mc = _CELL.match(f.name)
            if mc:
                found[(int(m.group(1)), int(mc.group(1)))] = f
    if not found:
        raise DataError(f"no style_<i>/content_<j>.pgm images under {root}")

    manifest = root / "manifest.txt"
    if manifest.exists():
        meta = read_manifest(manifest)
        ns, nc, seed = meta["n_styles"], meta["n_contents"], meta["seed"]
        part = Partition(ns, nc, meta["known_styles"], meta["known_contents"])
    else:
        ns = max(i for i, _ in found) + 1
        nc = max(j for _, j in found) + 1
        seed = 0
        part = make_partition(ns, nc, known_fraction, seed)
        logger.info("no manifest in %s; drew a seed-0 partition", root)

    size = None
    images = present = None
    for (i, j), f in sorted(found.items()):
        if i >= ns or j >= nc:
            raise DataError(f"{f} lies outside the {ns}x{nc} grid declared by the manifest")
        img = load_image(f)
        if img.shape[1] != img.shape[2]:
            raise DataError(f"{f} is {img.shape[2]}x{img.shape[1]}; images must be square")
        if size is None:
            size = img.shape[1]
            images = np.ones((ns, nc, size, size), dtype=np.float32)
            present = np.zeros((ns, nc), dtype=bool)
        elif img.shape[1] != size:
            raise DataError(f"inconsistent image sizes: {f} is {img.shape[1]}px, expected {size}px")
        images[i, j] = img[0]
        present[i, j] = True

    missing = [(int(i), int(j)) for i, j in zip(*np.nonzero(~present))]
    if missing:
        shown = ", ".join(f"({i},{j})" for i, j in missing[:20])
        more = "" if len(missing) <= 20 else f" and {len(missing) - 20} more"
        warnings.warn(f"corpus {root} is missing {len(missing)} cell(s): {shown}{more}", stacklevel=2)
    return Corpus(images, part, seed, present)
