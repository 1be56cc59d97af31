"""Command-line interface.

Exit status is 0 on success, 1 on invalid arguments or inputs and 2 when
work fails at run time.  Every failure prints one line
``error: <code>: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, integrate_full
from .core import FormatError, LesaError, ValidationError, read_trajectory, write_trajectory
from .evalx import compare, endpoint_rel_err, parse_method, run_accelerated
from .predictor import load_model, make_predictor, save_model
from .schedule import CostModel, StageConfig, build_plan, flop_account
from .train import LogRow, TrainConfig, load_dataset, train, trajectory_filename, write_log

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad command line; carries the usage text of the offending parser."""

    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


# ---------------------------------------------------------- value parsers

def parse_seeds(text: str) -> list[int]:
    """``A..B`` (inclusive), ``a,b,c`` or a single integer."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(p) for p in text.split("..", 1))
            if hi < lo:
                raise ValidationError(f"empty seed range {text!r}")
            seeds = list(range(lo, hi + 1))
        else:
            seeds = [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad seed list {text!r}") from exc
    if not seeds or any(s < 0 for s in seeds):
        raise ValidationError(f"seed list {text!r} must name non-negative seeds")
    return seeds


def _int_list(text: str, n: int | None, what: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"{what}: expected comma-separated integers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ValidationError(f"{what}: expected {n} values, got {len(vals)}")
    return vals


def parse_stages(text: str):
    """``b1,b2`` or ``none`` for a single unsegmented expert."""
    if text.strip().lower() == "none":
        return None
    return _int_list(text, 2, "--stages")


def _fmt(x) -> str:
    return f"{x:.9g}" if isinstance(x, float) else str(x)


def _write_csv(rows, path=None) -> None:
    lines = [",".join(_fmt(v) for v in r) for r in rows]
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _need_file(path, flag):
    if not Path(path).is_file():
        raise ValidationError(f"{flag}: no such file {os.fspath(path)!r}")


def _backbone_config(args) -> BackboneConfig:
    path = getattr(args, "backbone_config", None) or getattr(args, "config", None)
    overrides = {k: getattr(args, k, None) for k in ("backbone", "dim", "steps")}
    if path:
        _need_file(path, "--config")
        return BackboneConfig.load(path, **overrides)
    return BackboneConfig.from_text("", **overrides)


# ------------------------------------------------------------ subcommands

def _record_one(job):
    cfg, seed, out = job
    traj = integrate_full(cfg.build(), cfg.schedule, seed=seed)
    write_trajectory(traj, Path(out) / trajectory_filename(cfg.backbone, seed))
    return seed


def cmd_record(args) -> int:
    cfg = _backbone_config(args)
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s, out) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            list(ex.map(_record_one, jobs))
    else:
        for j in jobs:
            _record_one(j)
    print(f"wrote {len(seeds)} trajectories to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if not Path(args.data).is_dir():
        raise ValidationError(f"--data: no such directory {args.data!r}")
    boundaries = parse_stages(args.stages)
    windows = _int_list(args.windows, 3, "--windows")
    cfg = TrainConfig(lr=args.lr, weight_decay=args.wd, clip_norm=args.clip, epochs_gt=args.epochs_gt,
                      epochs_cl=args.epochs_cl, seed=args.seed, N=args.n, lr_schedule=args.lr_schedule)
    data = load_dataset(args.data)
    S, D = data[0].num_steps, data[0].dim
    sp = make_predictor(S, D, boundaries, windows, args.modulator, args.m_components, args.grid,
                        args.hidden, args.seed)
    plan = build_plan(StageConfig(S, args.n, boundaries or (args.plan_stages)))
    rows: list[LogRow] = []
    sp, gt, cl = train(sp, data, cfg, plan, rows)
    save_model(sp, args.out)
    if args.log:
        write_log(rows, args.log)
    final = (cl or gt or [float("nan")])[-1]
    print(f"trained on {len(data)} trajectories, final mean L1 {final:.9g}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _backbone_config(args)
    model = None
    if args.model:
        _need_file(args.model, "--model")
        model = load_model(args.model)
    method = parse_method(args.method, model)
    if method.kind == "lesa" and model is None:
        raise ValidationError("method lesa needs --model")
    boundaries = parse_stages(args.stages) or (model.boundaries if model and model.boundaries else (16, 41))
    plan = build_plan(StageConfig(cfg.steps, args.n, tuple(boundaries)))
    res = run_accelerated(cfg.build(), plan, method, args.seed, cfg.schedule)
    write_trajectory(res.trajectory, args.out)
    print(f"{method.name}: {res.plan.full_count} full steps, wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _need_file(args.ref, "--ref")
    _need_file(args.test, "--test")
    ref, test = read_trajectory(args.ref), read_trajectory(args.test)
    if (ref.num_steps, ref.dim, ref.state_dim) != (test.num_steps, test.dim, test.state_dim):
        raise ValidationError("--ref and --test trajectories have different shapes")
    err = np.abs(test.features - ref.features)
    rows = [("endpoint_rel_err", "feature_mae", "feature_max_abs"),
            (endpoint_rel_err(ref, test), float(err.mean()), float(err.max()))]
    _write_csv(rows, args.csv)
    return EXIT_OK


def cmd_flops(args) -> int:
    b1, b2 = _int_list(args.stages, 2, "--stages")
    plan = build_plan(StageConfig(args.steps, args.n, (b1, b2)))
    rep = flop_account(plan, CostModel(1.0, args.c_pred))
    _write_csv([(args.steps, args.n, b1, b2, plan.full_count, plan.predict_count, rep.speedup)])
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _backbone_config(args)
    model = None
    if args.model:
        _need_file(args.model, "--model")
        model = load_model(args.model)
    methods = [parse_method(m, model) for m in args.methods.split(",")]
    Ns = _int_list(args.ns, None, "--ns")
    seeds = parse_seeds(args.seeds)
    report = compare(methods, Ns, seeds, cfg.build(), cfg.steps, _int_list(args.stages, 2, "--stages"),
                     CostModel(1.0, args.c_pred))
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="lesa", description="Learned feature forecasting for cached diffusion sampling.",
                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def backbone_flags(sp, config_flag):
        sp.add_argument(config_flag, dest=config_flag.lstrip("-").replace("-", "_"), default=None,
                        help="backbone key=value config file")
        sp.add_argument("--backbone", choices=("gmm", "synth"), default=None, help="overrides the config file")
        sp.add_argument("--steps", type=int, default=None, help="overrides the config file (default 50)")
        sp.add_argument("--dim", type=int, default=None, help="overrides the config file (default 8)")

    r = sub.add_parser("record", help="record full-compute trajectories", formatter_class=fmt)
    backbone_flags(r, "--config")
    r.add_argument("--seeds", required=True, help="A..B (inclusive), a,b,c or one seed")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--jobs", type=int, default=1, help="parallel seeds")
    r.set_defaults(func=cmd_record)

    t = sub.add_parser("train", help="train a stage predictor", formatter_class=fmt)
    t.add_argument("--data", required=True, help="directory of .traj files")
    t.add_argument("--stages", default="16,41", help="b1,b2 or none")
    t.add_argument("--plan-stages", type=lambda s: _int_list(s, 2, "--plan-stages"), default=(16, 41),
                   help="forced-full boundaries when --stages is none")
    t.add_argument("--windows", default="4,8,8", help="k1,k2,k3")
    t.add_argument("--modulator", choices=("kan", "mlp"), default="kan")
    t.add_argument("--m-components", type=int, default=16)
    t.add_argument("--grid", type=int, default=8)
    t.add_argument("--hidden", type=int, default=256, help="MLP width")
    t.add_argument("--n", type=int, default=10, help="full-step interval")
    t.add_argument("--epochs-gt", type=int, default=1)
    t.add_argument("--epochs-cl", type=int, default=2)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--lr-schedule", choices=("constant", "cosine"), default="constant")
    t.add_argument("--wd", type=float, default=1e-4)
    t.add_argument("--clip", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", default=None, help="per-trajectory loss CSV")
    t.add_argument("--out", required=True, help="model file")
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("run", help="accelerated sampling of one seed", formatter_class=fmt)
    u.add_argument("--model", default=None)
    u.add_argument("--method", required=True, help="full, reuse, taylor:m or lesa")
    u.add_argument("--n", type=int, default=10)
    u.add_argument("--stages", default="none", help="b1,b2; none takes them from the model or 16,41")
    u.add_argument("--seed", type=int, default=0)
    backbone_flags(u, "--backbone-config")
    u.add_argument("--out", required=True, help="trajectory file")
    u.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="compare two trajectory files", formatter_class=fmt)
    e.add_argument("--ref", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--csv", default=None, help="output file (stdout if omitted)")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("flops", help="full-step count and speedup of a plan", formatter_class=fmt)
    f.add_argument("--steps", type=int, default=50)
    f.add_argument("--n", type=int, default=10)
    f.add_argument("--stages", default="16,41")
    f.add_argument("--c-pred", type=float, default=0.0, help="predicted-step cost relative to a full step")
    f.set_defaults(func=cmd_flops)

    q = sub.add_parser("report", help="method comparison table", formatter_class=fmt)
    q.add_argument("--methods", default="full,reuse,taylor:1,taylor:2")
    q.add_argument("--ns", default="5,7,10")
    q.add_argument("--seeds", default="0..19")
    q.add_argument("--model", default=None, help="needed for lesa")
    q.add_argument("--stages", default="16,41")
    q.add_argument("--c-pred", type=float, default=0.0)
    backbone_flags(q, "--backbone-config")
    q.add_argument("--out", default=None, help="CSV file (stdout if omitted)")
    q.set_defaults(func=cmd_report)
    return p


def _error(code: str, message: str) -> None:
    print(f"error: {code}: {' '.join(str(message).split())}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        _error("usage", exc)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "jobs", 1) < 1:
            raise ValidationError("--jobs must be >= 1")
        return args.func(args)
    except ValidationError as exc:
        _error("invalid", exc)
        return EXIT_INVALID
    except FormatError as exc:
        _error("format", exc)
        return EXIT_RUNTIME
    except LesaError as exc:
        _error("runtime", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        _error("io", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
