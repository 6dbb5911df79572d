"""End-to-end Adam training on D1 triplets, plus ablation sweeps."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .dataset import SUBSETS, Corpus, Triplet, sample_triplets, split_triplets
from .errors import BlankImageError, DataError, NumericError
from .losses import batch_weights, uniform_weights, weighted_l1
from .model import EMDModel, build_model
from .optim import AdamState, adam_step
from .tensor import Tape, backward

logger = logging.getLogger(__name__)

MAX_RESAMPLE = 1000


@dataclass
class TrainHistory:
    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    cells_read: set = field(default_factory=set)

    def record(self, iteration: int, loss: float, seconds: float) -> None:
        if self.iterations and iteration <= self.iterations[-1]:
            raise ValueError(f"iteration {iteration} is not after {self.iterations[-1]}")
        self.iterations.append(iteration)
        self.losses.append(loss)
        self.seconds.append(seconds)

    def moving_average(self, window: int = 50) -> np.ndarray:
        """Trailing mean; entry ``i`` averages losses ``max(0, i-window+1) .. i``."""
        x = np.asarray(self.losses, dtype=np.float64)
        if x.size == 0:
            return x
        c = np.concatenate([[0.0], np.cumsum(x)])
        idx = np.arange(1, x.size + 1)
        lo = np.maximum(0, idx - window)
        return (c[idx] - c[lo]) / (idx - lo)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "seconds"])
        for it, loss, sec in zip(self.iterations, self.losses, self.seconds):
            w.writerow([it, repr(loss), f"{sec:.4f}"])
        return buf.getvalue()


def training_pool(corpus: Corpus, cfg: TrainConfig) -> list[Triplet]:
    """The N_t D1 training triplets, with blank targets replaced by fresh draws."""
    _, pool_seed, _ = cfg.seed_streams()
    rng = np.random.default_rng(pool_seed)
    pool = sample_triplets(corpus.partition, "D1", cfg.r, cfg.n_triplets, rng, corpus.present)
    ink = (corpus.images <= cfg.threshold).any(axis=(2, 3))
    for k, t in enumerate(pool):
        tries = 0
        while not ink[t.style_id, t.content_id]:
            logger.warning("rejecting blank target (style %d, content %d); resampling", t.style_id, t.content_id)
            tries += 1
            if tries > MAX_RESAMPLE:
                raise BlankImageError("could not find a non-blank D1 target")
            t = sample_triplets(corpus.partition, "D1", cfg.r, 1, rng, corpus.present)[0]
        pool[k] = t
    if cfg.split_triplets:
        pool = split_triplets(pool)
    return pool


def _check_corpus(corpus: Corpus, cfg: TrainConfig) -> None:
    if corpus.image_size != cfg.image_size:
        raise DataError(f"corpus images are {corpus.image_size}px but config says {cfg.image_size}px")


def train_step(model: EMDModel, adam: AdamState, corpus: Corpus, batch, cfg: TrainConfig) -> float:
    style_refs, content_refs, targets = corpus.batch(batch)
    if cfg.loss_weighting == "weighted":
        weights = batch_weights(targets, cfg.threshold)
    else:
        weights = uniform_weights(len(batch))
    with Tape() as tape:
        pred = model(style_refs, content_refs)
        loss = weighted_l1(pred, targets, weights)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"loss became {value} at step {adam.step + 1}")
    grads = backward(loss, tape)
    adam_step(model.params, {k: grads[p] for k, p in model.params.items()}, adam, cfg.lr)
    return value


def train(corpus: Corpus, cfg: TrainConfig, checkpoint_path=None, resume=None,
          history: TrainHistory | None = None) -> tuple[EMDModel, TrainHistory]:
    """Optimize a fresh (or resumed) model for ``cfg.max_iterations`` steps.

    The whole trajectory is a function of ``cfg.seed`` and the corpus.  When
    ``resume`` names a checkpoint, its model, optimizer state and batch RNG
    state are restored and training continues from the stored iteration up
    to ``cfg.max_iterations``.  On a numeric failure the last good
    checkpoint on disk is left untouched.
    """
    _check_corpus(corpus, cfg)
    init_seed, _, batch_seed = cfg.seed_streams()
    pool = training_pool(corpus, cfg)
    rng = np.random.default_rng(batch_seed)
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.cfg.with_updates(max_iterations=cfg.max_iterations, checkpoint_every=cfg.checkpoint_every) != cfg:
            raise DataError(f"checkpoint {resume} was written with a different training config")
        model, adam = ck.model, ck.adam_state
        rng.bit_generator.state = ck.extra["rng"]
        start = int(ck.extra["iteration"])
    else:
        model = build_model(cfg.arch(), init_seed)
        adam = AdamState.for_params(model.params, cfg.beta1, cfg.beta2, cfg.epsilon)

    history = history or TrainHistory()
    part = corpus.partition
    batch_size = min(cfg.batch_size, len(pool))
    t0 = time.perf_counter()
    model.train()

    def snapshot(path, iteration):
        extra = {"iteration": iteration, "rng": rng.bit_generator.state}
        save_checkpoint(model, adam, cfg, path, extra)

    for it in range(start, cfg.max_iterations):
        idx = rng.choice(len(pool), size=batch_size, replace=False)
        batch = [pool[i] for i in idx]
        for t in batch:
            history.cells_read.add((t.style_id, t.content_id))
            history.cells_read.update((t.style_id, j) for j in t.style_ref_contents)
            history.cells_read.update((i, t.content_id) for i in t.content_ref_styles)
        loss = train_step(model, adam, corpus, batch, cfg)
        history.record(it, loss, time.perf_counter() - t0)
        if checkpoint_path and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            snapshot(checkpoint_path, it + 1)

    assert all(part.subset_of(s, c) == "D1" for s, c in history.cells_read), "training touched non-D1 cells"
    if checkpoint_path:
        snapshot(checkpoint_path, max(start, cfg.max_iterations))
    model.eval()
    return model, history


# --------------------------------------------------------------------------
# ablations
# --------------------------------------------------------------------------

ABLATION_METRICS = ("l1", "rmse", "pdar")


def ablation_columns() -> list[str]:
    return ["variant", "seed"] + [f"{s}_{m}" for s in SUBSETS for m in ABLATION_METRICS]


def run_ablation(corpus: Corpus, base: TrainConfig, grid, eval_count: int = 64, eval_seed: int = 1234,
                 subsets=SUBSETS) -> list[dict]:
    """Train and evaluate one model per grid entry.

    ``grid`` is a sequence of ``(variant_name, {field: value})``; a ``seeds``
    entry (list of ints) repeats the variant once per seed.
    """
    from .evaluation import evaluate

    rows = []
    for name, delta in grid:
        delta = dict(delta)
        seeds = delta.pop("seeds", None) or [delta.pop("seed", base.seed)]
        for seed in seeds:
            cfg = base.with_updates(**delta, seed=int(seed))
            logger.info("ablation %s seed %s", name, seed)
            model, _ = train(corpus, cfg)
            row = {"variant": name, "seed": int(seed)}
            for subset in subsets:
                m = evaluate(model, corpus, subset, cfg.r, eval_count, eval_seed)
                for k in ABLATION_METRICS:
                    row[f"{subset}_{k}"] = m[k]
            rows.append(row)
    return rows


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    cols = ablation_columns()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([row["variant"], row["seed"]] + [f"{row.get(c, float('nan')):.6f}" for c in cols[2:]])
    return buf.getvalue()


def parse_grid(text: str) -> tuple[TrainConfig, list]:
    """Grid file: ``[name]`` sections of ``key = value`` overrides.

    Lines before the first section set the base config.  ``seeds = 1,2,3``
    inside a section repeats that variant per seed.
    """
    from .config import parse_pairs

    base_lines, sections, current = [], [], None
    for line in text.splitlines():
        s = line.split("#", 1)[0].strip()
        if s.startswith("[") and s.endswith("]"):
            current = (s[1:-1].strip(), [])
            sections.append(current)
        elif current is None:
            base_lines.append(line)
        else:
            current[1].append(line)
    base = TrainConfig.from_text("\n".join(base_lines))
    grid = []
    for name, lines in sections:
        seeds = None
        kept = []
        for line in lines:
            s = line.split("#", 1)[0].strip()
            if s.replace(" ", "").startswith("seeds="):
                seeds = [int(x) for x in s.split("=", 1)[1].split(",") if x.strip()]
            else:
                kept.append(line)
        delta = parse_pairs("\n".join(kept))
        if seeds:
            delta["seeds"] = seeds
        grid.append((name, delta))
    return base, grid
