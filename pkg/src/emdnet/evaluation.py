"""Subset evaluation, style/content separation checks, morphing and generation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dataset import Corpus, load_image, sample_triplets, save_image
from .errors import DataError, ShapeError
from .losses import l1_metric, pdar_metric, rmse_metric
from .model import EMDModel
from .tensor import Tensor

EVAL_BATCH = 32


def predict(model: EMDModel, style_refs, content_refs) -> np.ndarray:
    """Eval-mode forward pass in chunks; returns [N, 1, H, W] on (0, 1)."""
    if model.training:
        raise ValueError("predict() needs a model in eval mode")
    outs = []
    for k in range(0, len(style_refs), EVAL_BATCH):
        out = model(style_refs[k:k + EVAL_BATCH], content_refs[k:k + EVAL_BATCH])
        outs.append(out.data)
    return np.concatenate(outs) if outs else np.zeros((0, 1) + style_refs.shape[2:], np.float32)


def evaluate(model: EMDModel | None, corpus: Corpus, subset: str, r: int, count: int, seed: int = 0,
             predictor=None, threshold: float = 0.5) -> dict:
    """Mean L1 / RMSE / PDAR over ``count`` generated-vs-target pairs from ``subset``.

    ``predictor(style_refs, content_refs, targets)`` replaces the model when
    given (e.g. an oracle that returns the targets).
    """
    if count <= 0:
        raise DataError("evaluation needs count > 0")
    triplets = sample_triplets(corpus.partition, subset, r, count, seed, corpus.present)
    sr, cr, tg = corpus.batch(triplets)
    if predictor is None:
        pred = predict(model, sr, cr)
    else:
        pred = np.asarray(predictor(sr, cr, tg))
    l1 = [l1_metric(p, t) for p, t in zip(pred, tg)]
    rmse = [rmse_metric(p, t) for p, t in zip(pred, tg)]
    pdar = [pdar_metric(p, t, threshold) for p, t in zip(pred, tg)]
    return {"subset": subset, "n_examples": len(triplets),
            "l1": float(np.mean(l1)), "rmse": float(np.mean(rmse)), "pdar": float(np.mean(pdar))}


# --------------------------------------------------------------------------
# separation validation
# --------------------------------------------------------------------------

@dataclass
class SeparationStats:
    mode: str
    within: float
    cross: float
    n_within_pairs: int
    n_cross_pairs: int

    @property
    def separated(self) -> bool:
        return self.within < self.cross


def _disjoint_sets(rng, pool, n_sets: int, r: int, what: str, disjoint: bool = True) -> list:
    pool = list(pool)
    if n_sets < 2:
        raise DataError("separation checks need at least 2 reference sets (no pairs otherwise)")
    if not disjoint:
        if len(pool) < r:
            raise DataError(f"need {r} {what}, only {len(pool)} available")
        one = tuple(pool[k] for k in rng.choice(len(pool), r, replace=False))
        return [one] * n_sets
    if len(pool) < n_sets * r:
        raise DataError(f"{n_sets} disjoint sets of r={r} need {n_sets * r} {what}, only {len(pool)} available")
    perm = rng.permutation(len(pool))
    return [tuple(pool[k] for k in perm[i * r:(i + 1) * r]) for i in range(n_sets)]


def _pairwise(outputs: dict) -> tuple[list, list]:
    within, cross = [], []
    keys = list(outputs)
    for g in keys:
        for a, b in itertools.combinations(outputs[g], 2):
            within.append(pdar_metric(a, b))
    for g, h in itertools.combinations(keys, 2):
        for a in outputs[g]:
            for b in outputs[h]:
                cross.append(pdar_metric(a, b))
    return within, cross


def separation_check_style(model: EMDModel, corpus: Corpus, n_disjoint_sets: int = 3, r: int | None = None,
                           seed: int = 0, n_trials: int = 4, disjoint: bool = True) -> SeparationStats:
    """Do disjoint reference sets of one style give the same output?

    Per trial a novel content is fixed (one content reference set) and every
    novel style is encoded from ``n_disjoint_sets`` non-overlapping style
    reference sets.  ``within`` is the mean PDAR between outputs of the same
    style, ``cross`` between outputs of different styles.
    """
    r = model.arch.r if r is None else r
    part = corpus.partition
    styles, contents = part.novel_styles, part.novel_contents
    if len(styles) < 2 or not contents:
        raise DataError("style separation needs >= 2 novel styles and >= 1 novel content")
    rng = np.random.default_rng(seed)
    within, cross = [], []
    for _ in range(n_trials):
        c = int(contents[rng.integers(len(contents))])
        crefs = _disjoint_sets(rng, [i for i in range(corpus.n_styles) if corpus.present[i, c]], 2, r,
                               f"styles for content {c}", disjoint=False)[0]
        outputs = {}
        for s in styles:
            row = [j for j in range(corpus.n_contents) if j != c and corpus.present[s, j]]
            sets = _disjoint_sets(rng, row, n_disjoint_sets, r, f"contents for style {s}", disjoint)
            sr = np.stack([corpus.images[s, list(js)] for js in sets])
            cr = np.repeat(corpus.images[list(crefs), c][None], len(sets), axis=0)
            outputs[s] = list(predict(model, sr, cr))
        w, x = _pairwise(outputs)
        within += w
        cross += x
    return SeparationStats("style", float(np.mean(within)), float(np.mean(cross)), len(within), len(cross))


def separation_check_content(model: EMDModel, corpus: Corpus, n_disjoint_sets: int = 2, r: int | None = None,
                             seed: int = 0, n_trials: int = 4, disjoint: bool = True) -> SeparationStats:
    """Mirror of :func:`separation_check_style` with the roles swapped."""
    r = model.arch.r if r is None else r
    part = corpus.partition
    styles, contents = part.novel_styles, part.novel_contents
    if len(contents) < 2 or not styles:
        raise DataError("content separation needs >= 2 novel contents and >= 1 novel style")
    rng = np.random.default_rng(seed)
    within, cross = [], []
    for _ in range(n_trials):
        s = int(styles[rng.integers(len(styles))])
        srefs = _disjoint_sets(rng, [j for j in range(corpus.n_contents) if corpus.present[s, j]], 2, r,
                               f"contents for style {s}", disjoint=False)[0]
        outputs = {}
        for c in contents:
            col = [i for i in range(corpus.n_styles) if corpus.present[i, c]]
            sets = _disjoint_sets(rng, col, n_disjoint_sets, r, f"styles for content {c}", disjoint)
            cr = np.stack([corpus.images[list(is_), c] for is_ in sets])
            sr = np.repeat(corpus.images[s, list(srefs)][None], len(sets), axis=0)
            outputs[c] = list(predict(model, sr, cr))
        w, x = _pairwise(outputs)
        within += w
        cross += x
    return SeparationStats("content", float(np.mean(within)), float(np.mean(cross)), len(within), len(cross))


# --------------------------------------------------------------------------
# morphing and generation
# --------------------------------------------------------------------------

def _refs(x, model: EMDModel) -> np.ndarray:
    a = np.asarray(x, dtype=model.dtype)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[1] != model.arch.r:
        raise ShapeError(f"model expects {model.arch.r} reference images, got array of shape {a.shape}")
    return a


def interpolate_styles(style_a: Tensor, style_b: Tensor, lam: float) -> Tensor:
    return (1.0 - lam) * style_a + lam * style_b


def morph(model: EMDModel, style_refs_a, style_refs_b, content_refs, lambdas) -> list[np.ndarray]:
    """Decode ``(1 - lam) * S_a + lam * S_b`` with a fixed content, for each ``lam``."""
    lambdas = [float(x) for x in lambdas]
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"morph weight {lam} lies outside [0, 1]")
    if model.training:
        raise ValueError("morph() needs a model in eval mode")
    sa = model.encode_style(_refs(style_refs_a, model))
    sb = model.encode_style(_refs(style_refs_b, model))
    content, skips = model.encode_content(_refs(content_refs, model))
    out = []
    for lam in lambdas:
        s = interpolate_styles(sa, sb, lam)
        out.append(model.decode(model.mix(s, content), skips).data[0])
    return out


def grid_sheet(images) -> np.ndarray:
    """Tile an m x n nested list of [1, H, W] images into one [1, m*H, n*W] sheet."""
    rows = [np.concatenate([np.asarray(im)[0] for im in row], axis=1) for row in images]
    return np.concatenate(rows, axis=0)[None]


def generate(model: EMDModel, style_ref_paths, content_ref_paths, out_path=None) -> np.ndarray:
    """Generate one image (or an m x n sheet) from PGM reference files.

    ``style_ref_paths`` / ``content_ref_paths`` are either flat lists of r
    paths or lists of such lists; in the latter case rows of the sheet are
    styles and columns are contents.
    """
    def nest(paths):
        paths = list(paths)
        return paths if paths and isinstance(paths[0], (list, tuple)) else [paths]

    style_sets, content_sets = nest(style_ref_paths), nest(content_ref_paths)
    for sets in (style_sets, content_sets):
        for s in sets:
            if len(s) != model.arch.r:
                raise ShapeError(f"model was built for r={model.arch.r} references, got {len(s)}")

    def stack(paths):
        return np.concatenate([load_image(p) for p in paths], axis=0)

    sr = np.stack([stack(s) for s in style_sets])
    cr = np.stack([stack(c) for c in content_sets])
    m, n = len(sr), len(cr)
    out = predict(model, np.repeat(sr, n, axis=0), np.tile(cr, (m, 1, 1, 1)))
    sheet = grid_sheet([[out[i * n + j] for j in range(n)] for i in range(m)])
    if out_path is not None:
        save_image(sheet, out_path)
    return sheet
