"""Command-line interface: ``emdnet <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .config import TrainConfig
from .dataset import SUBSETS, build_corpus, export_corpus, import_corpus, save_image
from .errors import ConfigError, DataError, EMDError, NumericError, ShapeError
from .evaluation import evaluate, generate, grid_sheet, morph, separation_check_content, separation_check_style
from .losses import metrics_csv
from .training import ablation_csv, parse_grid, run_ablation, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("emdnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_model(path):
    model = load_checkpoint(path).model
    return model.eval()


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_gen_data(args) -> int:
    corpus = build_corpus(args.styles, args.contents, args.size, args.seed, args.known_fraction)
    export_corpus(corpus, args.out)
    p = corpus.partition
    print(f"wrote {args.styles}x{args.contents} glyphs ({args.size}px) to {args.out}: "
          f"{len(p.known_styles)} known styles, {len(p.known_contents)} known contents")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    corpus = import_corpus(args.data)
    out = Path(args.out)
    _, hist = train(corpus, cfg, checkpoint_path=out, resume=args.resume)
    out.with_suffix(".history.csv").write_text(hist.to_csv(), encoding="utf-8")
    if hist.losses:
        print(f"trained {len(hist.losses)} iterations; final moving-average loss "
              f"{hist.moving_average()[-1]:.6f}; checkpoint {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.ckpt)
    corpus = import_corpus(args.data)
    subsets = SUBSETS if args.subset == "all" else (args.subset,)
    rows = [evaluate(model, corpus, s, model.arch.r, args.count, args.seed) for s in subsets]
    sys.stdout.write(metrics_csv(rows))
    return EXIT_OK


def cmd_separate(args) -> int:
    model = _load_model(args.ckpt)
    corpus = import_corpus(args.data)
    check = separation_check_style if args.mode == "style" else separation_check_content
    kwargs = {"seed": args.seed}
    if args.sets is not None:
        kwargs["n_disjoint_sets"] = args.sets
    stats = check(model, corpus, **kwargs)
    print("mode,within_pdar,cross_pdar,n_within_pairs,n_cross_pairs,separated")
    print(f"{stats.mode},{stats.within:.6f},{stats.cross:.6f},{stats.n_within_pairs},"
          f"{stats.n_cross_pairs},{str(stats.separated).lower()}")
    return EXIT_OK


def cmd_morph(args) -> int:
    import numpy as np

    from .dataset import load_image

    model = _load_model(args.ckpt)

    def stack(paths):
        return np.concatenate([load_image(p) for p in paths], axis=0)

    frames = morph(model, stack(args.style_a), stack(args.style_b), stack(args.content), args.lambdas)
    sheet = grid_sheet([frames])
    save_image(sheet, args.out)
    print(f"wrote {len(frames)} morph frames to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    model = _load_model(args.ckpt)
    style = args.style_refs if len(args.style_refs) > 1 else args.style_refs[0]
    content = args.content_refs if len(args.content_refs) > 1 else args.content_refs[0]
    sheet = generate(model, style, content, args.out)
    print(f"wrote {sheet.shape[2]}x{sheet.shape[1]} image to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base, grid = parse_grid(Path(args.grid_config).read_text(encoding="utf-8"))
    corpus = import_corpus(args.data)
    rows = run_ablation(corpus, base, grid, eval_count=args.eval_count)
    sys.stdout.write(ablation_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emdnet", description="Style/content transfer for glyph images.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="render a synthetic glyph corpus")
    g.add_argument("--styles", type=int, default=8)
    g.add_argument("--contents", type=int, default=16)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--known-fraction", type=float, default=0.75)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on the D1 subset")
    t.add_argument("--data", required=True, help="corpus directory")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="L1/RMSE/PDAR on one or all subsets (CSV to stdout)")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--subset", choices=SUBSETS + ("all",), default="all")
    e.add_argument("--count", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("separate", help="within- vs cross-group PDAR separation check")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=("style", "content"), required=True)
    s.add_argument("--sets", type=int, help="disjoint reference sets per group")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_separate)

    m = sub.add_parser("morph", help="interpolate between two style latents")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--style-a", nargs="+", required=True, help="r PGM files")
    m.add_argument("--style-b", nargs="+", required=True, help="r PGM files")
    m.add_argument("--content", nargs="+", required=True, help="r PGM files")
    m.add_argument("--lambdas", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    m.add_argument("--out", required=True, help="output PGM sheet")
    m.set_defaults(func=cmd_morph)

    gen = sub.add_parser("generate", help="render glyphs from reference images")
    gen.add_argument("--ckpt", required=True)
    gen.add_argument("--style-refs", nargs="+", action="append", required=True,
                     help="r PGM files; repeat the flag for more styles (sheet rows)")
    gen.add_argument("--content-refs", nargs="+", action="append", required=True,
                     help="r PGM files; repeat the flag for more contents (sheet columns)")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    a = sub.add_parser("ablate", help="train and evaluate a grid of configs (CSV to stdout)")
    a.add_argument("--data", required=True)
    a.add_argument("--grid-config", required=True)
    a.add_argument("--eval-count", type=int, default=64)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"emdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"emdnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"emdnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EMDError, ValueError) as exc:
        print(f"emdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
