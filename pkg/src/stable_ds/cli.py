"""Command-line front end.

Subcommands cover the whole workflow: generate or inspect demonstration
files, train a model, evaluate reproductions with figures and a stability
audit, integrate single rollouts, export vector fields, and answer
streaming velocity queries. Files and stdout speak workspace units; the
normalization recorded in the model handles the rest.

Exit codes: 0 success, 1 bad input, 2 divergence or stability violations.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data, dynamics, evaluation, figures, synthetic, training
from .model import MODES, load_model, save_model, write_text_atomic


def _hash_dataset(path: Path) -> str:
    digest = hashlib.sha256()
    files = [path]
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".csv", ".json"))
    for p in files:
        digest.update(p.name.encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_suffix(suffix)


def _write_history_csv(history, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "epoch", "lr", "loss", "skipped"])
        for r in history:
            writer.writerow([r.iteration, r.epoch, repr(r.lr), repr(r.loss), r.skipped])


def _print_progress(every: int):
    def hook(iteration, epoch, lr, loss, skipped):
        if iteration % every == 0:
            note = f" (skipped {skipped})" if skipped else ""
            print(f"iter {iteration:>5}  epoch {epoch:>3}  lr {lr:.3e}  loss {loss:.6g}{note}")

    return hook


def cmd_train(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    demos = data.load_demonstrations(args.data)
    dataset = data.normalize(demos)
    config = training.TrainConfig(
        learning_rate=args.lr,
        decay=args.decay,
        max_iterations=args.iters,
        batch_size=args.batch,
        beta=args.beta,
        seed=args.seed,
        mode=args.mode,
    )
    out = Path(args.out)
    history_path = _sibling(out, ".loss.csv")
    try:
        result = training.train(dataset, config, progress=_print_progress(max(1, args.iters // 20)))
    except training.DivergenceError as err:
        snapshot = _sibling(out, ".diverged.json")
        save_model(err.model, snapshot)
        _write_history_csv(err.history, history_path)
        print(f"error: {err}; last finite snapshot at {snapshot}", file=sys.stderr)
        return 2

    save_model(result.model, out)
    _write_history_csv(result.history, history_path)
    figures.save_loss_curve(result.history, _sibling(out, ".loss.svg"))
    manifest = {
        "config": asdict(config),
        "seed": config.seed,
        "dataset": str(args.data),
        "dataset_sha256": _hash_dataset(Path(args.data)),
        "model_path": str(out),
        "metrics_path": str(history_path),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    write_text_atomic(_sibling(out, ".manifest.json"), json.dumps(manifest, indent=2) + "\n")
    print(f"final loss {result.best_loss:.6g} at iteration {result.best_iteration}; model -> {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    demos = data.load_demonstrations(args.data)
    if demos[0].state_dim != model.state_dim:
        print(
            f"error: data dimension {demos[0].state_dim} does not match "
            f"model dimension {model.state_dim}",
            file=sys.stderr,
        )
        return 1
    report, rollouts = evaluation.evaluate_dataset(model, demos, steps=args.steps, dt=args.dt)
    payload = report.to_dict()

    audit = None
    if args.audit:
        audit = evaluation.stability_audit(model, args.audit, seed=args.seed)
        payload["audit"] = audit.to_dict()

    out = Path(args.out)
    write_text_atomic(out, json.dumps(payload, indent=2) + "\n")
    table = report.format_table()
    if audit is not None:
        table += (
            f"audit: {audit.samples} samples, vdot violations {audit.vdot_violations}, "
            f"singular {audit.singular_count}, box V [{audit.box_v_min:.3g}, {audit.box_v_max:.3g}], "
            f"shell V min {audit.shell_v_min:.3g}\n"
        )
    write_text_atomic(_sibling(out, ".txt"), table)
    print(table, end="")

    if args.svg:
        svg_dir = Path(args.svg)
        svg_dir.mkdir(parents=True, exist_ok=True)
        name = Path(args.data).stem or "field"
        _, svg = evaluation.vector_field(model, demos=demos, rollouts=rollouts, title=name)
        if svg is None:
            print("note: no SVG for non-planar models", file=sys.stderr)
        else:
            write_text_atomic(svg_dir / f"{name}.svg", svg)

    print(f"mean SEA {report.mean_sea:.6g}  mean V_rmse {report.mean_v_rmse:.6g}")
    if audit is not None and not audit.clean:
        print(
            f"stability violations found: vdot {audit.vdot_violations}, "
            f"singular {audit.singular_count}",
            file=sys.stderr,
        )
        return 2
    return 0


def _write_rollouts_csv(rollouts, dts, path: Path):
    d = rollouts[0].states.shape[1]
    header = ["demo", "t"] + [f"x{j}" for j in range(1, d + 1)] + [f"v{j}" for j in range(1, d + 1)]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, (r, dt) in enumerate(zip(rollouts, dts)):
            for k in range(len(r.states)):
                row = [i, repr(k * dt)]
                row += [repr(float(v)) for v in r.states[k]]
                row += [repr(float(v)) for v in r.velocities[k]]
                writer.writerow(row)


def cmd_rollout(args) -> int:
    model = load_model(args.model)
    starts = []
    dts = []
    steps = []
    if args.x0:
        starts.append(np.array([float(v) for v in args.x0.replace(",", " ").split()]))
        dts.append(args.dt or 0.01)
        steps.append(args.steps or 1000)
    if args.data:
        for demo in data.load_demonstrations(args.data):
            starts.append(demo.states[0])
            dts.append(args.dt or demo.dt)
            steps.append(args.steps or len(demo.states))
    if not starts:
        print("error: give --x0 or --data", file=sys.stderr)
        return 1

    rollouts = []
    for x0, dt, n in zip(starts, dts, steps):
        r = evaluation.rollout(model, x0, n, dt, method=args.method)
        rollouts.append(r)
        tail = np.linalg.norm(r.states[-1] - model.normalization.target)
        flags = []
        if r.diverged:
            flags.append("diverged")
        if r.aborted:
            flags.append("aborted")
        status = (
            f"converged at step {r.steps_to_converge}" if r.converged else "did not converge"
        )
        if flags:
            status += " (" + ", ".join(flags) + ")"
        print(f"start {np.round(x0, 3).tolist()}: {status}, final distance {tail:.4g}")
    if args.out:
        _write_rollouts_csv(rollouts, dts, Path(args.out))
    return 0


def cmd_field(args) -> int:
    model = load_model(args.model)
    demos = data.load_demonstrations(args.data) if args.data else None
    rollouts = None
    if demos:
        _, rollouts = evaluation.evaluate_dataset(model, demos)
    samples, svg = evaluation.vector_field(model, resolution=args.resolution, demos=demos, rollouts=rollouts)
    if args.out:
        d = samples.positions.shape[1]
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j}" for j in range(1, d + 1)] + [f"v{j}" for j in range(1, d + 1)])
            for pos, vel in zip(samples.positions, samples.velocities):
                writer.writerow([repr(float(v)) for v in pos] + [repr(float(v)) for v in vel])
    if args.svg:
        if svg is None:
            print("note: no SVG for non-planar models", file=sys.stderr)
        else:
            write_text_atomic(Path(args.svg), svg)
    return 0


def cmd_query(args) -> int:
    model = load_model(args.model)
    for line in sys.stdin:
        parts = line.replace(",", " ").split()
        if not parts:
            continue
        try:
            x = np.array([float(p) for p in parts])
            if x.shape != (model.state_dim,):
                raise ValueError("dimension mismatch")
            v = dynamics.state_velocity(model, x)
            print(" ".join(f"{c:.10g}" for c in v), flush=True)
        except (ValueError, ArithmeticError):
            print("ERR", flush=True)
    return 0


def cmd_check(args) -> int:
    demos = data.load_demonstrations(args.data)
    print(f"{args.data}: {len(demos)} demonstrations, dimension {demos[0].state_dim}")
    for demo in demos:
        start = np.round(demo.states[0], 3).tolist()
        end = np.round(demo.states[-1], 3).tolist()
        print(
            f"  demo {demo.index}: {len(demo.states)} samples, dt {demo.dt:g}, "
            f"duration {demo.duration:.3g}s, {start} -> {end}"
        )
    return 0


def cmd_synth(args) -> int:
    paths = synthetic.write_all_shapes(args.out, seed=args.seed)
    for p in paths:
        print(f"wrote {p}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stable-ds",
        description="Learn and reproduce globally stable point-to-point motions.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="fit a model to demonstrations")
    p.add_argument("--data", required=True, help="CSV/JSON file or directory")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay", type=float, default=0.99)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--mode", choices=MODES, default="learned")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="reproduce demonstrations and report metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="report.json")
    p.add_argument("--svg", help="directory for field SVGs")
    p.add_argument("--audit", type=int, default=0, help="stability audit sample count")
    p.add_argument("--seed", type=int, default=0, help="audit sampling seed")
    p.add_argument("--dt", type=float, help="override integration dt")
    p.add_argument("--steps", type=int, help="override step count")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="integrate the learned field")
    p.add_argument("--model", required=True)
    p.add_argument("--x0", help="start state, comma separated")
    p.add_argument("--data", help="roll out from each demo start")
    p.add_argument("--steps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--method", choices=("euler", "rk4"), default="euler")
    p.add_argument("--out", help="trajectory CSV path")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("field", help="sample the vector field on a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="overlay demonstrations and reproductions")
    p.add_argument("--out", help="samples CSV path")
    p.add_argument("--svg", help="SVG file path")
    p.add_argument("--resolution", type=int, default=30)
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("query", help="read states from stdin, print velocities")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("check", help="parse demonstration files and summarize")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synth", help="write synthetic demonstration sets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except (FileNotFoundError, data.FormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
