"""Command-line entry point: ``python3 -m mzen <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from collections import OrderedDict
from pathlib import Path

from .datagen import CameraRig, default_scene, generate_scene_dataset, load_dataset, save_dataset, split_train_test
from .errors import MZENError, NumericalError
from .field import FieldConfig
from .priming import match_wide_field

log = logging.getLogger("mzen")

OUTPUT_ROOT_ENV = "MZEN_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "mzen_runs"))


def _resolve_out(value, default_name):
    return Path(value) if value else output_root() / default_name


def _emit(payload, path=None):
    text = json.dumps(payload, indent=2)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    print(text)


def _zoom_list(text):
    try:
        zooms = [float(z) for z in text.split(",") if z.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad zoom list {text!r}") from None
    if not zooms or min(zooms) < 1.0:
        raise argparse.ArgumentTypeError("zooms must be >= 1")
    return zooms


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


# ----------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    out = _resolve_out(args.out, "dataset")
    rig = CameraRig(n_cameras=args.cameras, H=args.size, W=args.size,
                    zoom_rotation_drift=args.zoom_drift, zoom_translation_drift=args.zoom_drift)
    ds = generate_scene_dataset(default_scene(), rig, args.zooms, seed=args.seed)
    split_train_test(ds, args.train_fraction, seed=args.seed)
    save_dataset(ds, out)
    counts = OrderedDict((f"{z:g}", len([v for v in ds.views if abs(v.zoom - z) < 1e-9])) for z in ds.zoom_levels)
    _emit(OrderedDict(path=str(out), images=len(ds.views), per_zoom=counts,
                      train=len(ds.indices("train")), test=len(ds.indices("test"))))
    return EXIT_OK


def _train_config(args):
    from .schedule import TrainConfig

    cfg = TrainConfig(backbone=args.backbone, depth_prior=args.depth_prior, seed=args.seed, steps=args.steps,
                      steps_c=args.steps_c if args.steps_c is not None else args.steps // 2,
                      rays_per_view=args.rays, n_samples=args.samples, lr_field=args.lr_field, lr_pose=args.lr_pose,
                      register_steps=args.register_steps, init_poses=args.init_poses,
                      field=FieldConfig() if args.full_field else FieldConfig.desk())
    return cfg.validate()


def cmd_train(args) -> int:
    from .schedule import run_config, save_checkpoint

    ds = load_dataset(args.data)
    cfg = _train_config(args)
    out = _resolve_out(args.out, f"config{args.config}")
    print(json.dumps(OrderedDict(command="train", config=args.config, data=str(args.data), out=str(out),
                                 effective=cfg.to_dict())), file=sys.stderr)

    def checkpoint(tag, state, tlog):
        save_checkpoint(out / f"phase_{tag}", state, tlog, ds, cfg, args.config)

    run = run_config(args.config, ds, cfg, evaluate=False, checkpoint_fn=checkpoint)
    save_checkpoint(out, run.state, run.log, ds, cfg, args.config)
    _emit(OrderedDict(out=str(out), phases=run.log.phases, passes=run.log.passes,
                      total_passes=run.log.total_passes,
                      final_loss=run.log.steps[-1]["loss"] if run.log.steps else None))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import MetricReport
    from .schedule import ConfigRun, evaluate_run, load_checkpoint, render_view

    ds = load_dataset(args.data)
    state, cfg, config = load_checkpoint(args.checkpoint, ds)
    if args.register_steps is not None:
        cfg.register_steps = args.register_steps
    run = ConfigRun(config, state, None, cfg)
    if args.split == "train":
        # renders at the trained poses, no registration
        ids = ds.indices("train")
        refs, tests = [], []
        for k in ids:
            img, _ = render_view(state, state.pose(k), ds.height, ds.width, ds, cfg)
            refs.append(ds.views[k].image)
            tests.append(img)
        report = MetricReport.from_images(refs, tests, [ds.views[k].zoom for k in ids],
                                          [ds.views[k].name for k in ids])
    else:
        if not ds.indices("test"):
            raise MZENError("dataset has no test views")
        report = evaluate_run(run, ds)
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def cmd_prime(args) -> int:
    ds = load_dataset(args.data)
    subset = args.split
    wide = ds.wide_indices("train")
    queries = ds.zoom_indices(subset)
    rows = []
    for j in queries:
        view = ds.views[j]
        m = match_wide_field(view.image, [ds.views[g].image for g in wide], view.zoom)
        rows.append(OrderedDict(view=view.name, dial=view.zoom, source=ds.views[wide[m.wide_index]].name,
                                g_star=int(wide[m.wide_index]), mse=m.mse))
    _emit(OrderedDict(matches=rows), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .schedule import (ConvergenceExperimentConfig, convergence_setup, load_checkpoint,
                           priming_convergence_experiment, render_config_for)

    ds = load_dataset(args.data)
    state, cfg, _ = load_checkpoint(args.checkpoint, ds)
    zoom_ids = ds.zoom_indices("all")
    if not zoom_ids:
        raise MZENError("dataset has no zoom-in views")
    k = zoom_ids[0] if args.view is None else next(
        (i for i in zoom_ids if ds.views[i].name == args.view), None)
    if k is None:
        raise MZENError(f"no zoom-in view named {args.view!r}")
    target, p_star, p_primed, _ = convergence_setup(state, ds, k, cfg)
    exp = ConvergenceExperimentConfig(eps=args.eps, n_random=args.K, budget=args.budget)
    report = priming_convergence_experiment(state, target, p_star, p_primed, ds.views[k].zoom, cfg,
                                            render_config_for(ds, cfg), exp, rng=args.seed)
    report["view"] = ds.views[k].name
    _emit(report, args.out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mzen", description="Multi-zoom pose-free radiance field lab.")
    p.add_argument("--threads", type=_positive_int, default=None, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic multi-zoom dataset")
    g.add_argument("--out")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--zooms", type=_zoom_list, default=[1.0, 2.0, 4.0])
    g.add_argument("--cameras", type=_positive_int, default=6)
    g.add_argument("--size", type=_positive_int, default=64)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--zoom-drift", type=float, default=0.0, help="pose jitter std applied to zoom-in views")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one of the four configurations")
    t.add_argument("--data", required=True)
    t.add_argument("--config", type=int, choices=[1, 2, 3, 4], required=True)
    t.add_argument("--backbone", choices=["plain", "barf", "ipe", "camp"], default="barf")
    t.add_argument("--depth-prior", choices=["none", "gt"], default="none")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=_positive_int, default=600)
    t.add_argument("--steps-c", type=int, default=None)
    t.add_argument("--rays", type=_positive_int, default=64)
    t.add_argument("--samples", type=_positive_int, default=48)
    t.add_argument("--lr-field", type=float, default=5e-3)
    t.add_argument("--lr-pose", type=float, default=2e-3)
    t.add_argument("--register-steps", type=int, default=100)
    t.add_argument("--init-poses", choices=["identity", "gt"], default="identity")
    t.add_argument("--full-field", action="store_true", help="use the full-width network")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="register held-out poses and score renders")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=["test", "train"], default="test")
    e.add_argument("--register-steps", type=int, default=None)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("prime", help="report the surrogate match of every zoom-in image")
    pr.add_argument("--data", required=True)
    pr.add_argument("--split", choices=["train", "test", "all"], default="all")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_prime)

    x = sub.add_parser("experiment", help="primed vs random pose-descent convergence")
    x.add_argument("--data", required=True)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--view")
    x.add_argument("--K", type=_positive_int, default=20)
    x.add_argument("--eps", type=float, default=1e-5)
    x.add_argument("--budget", type=_positive_int, default=300)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out")
    x.set_defaults(func=cmd_experiment)
    return p


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl is not installed; --threads is ignored")
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MZENError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
