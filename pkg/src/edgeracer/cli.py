"""Command-line workflow: collect, filter, train, evaluate, bench, serve."""

import argparse
import os
import sys

import numpy as np

from . import data, imaging, mixer, runtime, simworld, trainer


def _pipeline_from_args(args):
    return imaging.PipelineParams(edges=not getattr(args, "no_edges", False))


def cmd_preprocess(args):
    frame = imaging.read_pgm(args.input)
    out = imaging.preprocess(frame, _pipeline_from_args(args))
    if out.dtype != np.uint8:
        out = np.rint(out * 255).astype(np.uint8)
    else:
        out = out * 255
    imaging.write_pgm(args.output, out)
    return 0


def _get_track(name):
    if os.path.exists(name):
        return simworld.load_track(name)
    return simworld.make_track(name)


def cmd_collect(args):
    track = _get_track(args.track)
    if args.policy == "oracle":
        policy = simworld.OraclePolicy(track)
    else:
        policy = runtime.ModelPolicy(trainer.load_checkpoint(args.policy))
    os.makedirs(args.out, exist_ok=True)
    ds = data.Dataset(root=args.out)
    for i in range(args.episodes):
        ep = simworld.run_episode(
            policy, track, style=args.style, corruption_p=args.corrupt,
            max_steps=args.max_steps, seed=args.seed + i,
            start_jitter=args.start_jitter)
        name = f"{track.name}_{args.style}_{args.seed + i:04d}.ep"
        data.add_episode(ds, ep, name)
        print(f"{name}: {len(ep.steps)} steps, terminal={ep.terminal}")
    return 0


def cmd_filter(args):
    _, report = data.filter_dataset(args.input, args.out)
    for rec in report["episodes"]:
        print(f"{rec['file']}: kept {rec['kept']} dropped {rec['dropped']} "
              f"({rec['terminal']})")
    print(f"kept per class:    {report['kept_per_class']}")
    print(f"dropped per class: {report['dropped_per_class']}")
    return 0


def cmd_train(args):
    cfg = mixer.MixerConfig()
    tc = trainer.TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                             epochs=args.epochs, seed=args.seed)
    print(f"lr={tc.learning_rate} patch={cfg.patch_size} dim={cfg.dim} "
          f"depth={cfg.depth}")
    episodes = data.Dataset.open(args.data).episodes()
    logf = open(args.log, "w") if args.log else None

    def log(line):
        print(line)
        if logf:
            logf.write(line + "\n")

    pipeline = _pipeline_from_args(args)
    ckpt, _ = trainer.train(episodes, cfg, tc, pipeline, log=log)
    if logf:
        logf.close()
    trainer.save_checkpoint(ckpt, args.out)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_eval_dataset(args):
    ckpt = trainer.load_checkpoint(args.model)
    episodes = data.Dataset.open(args.data).episodes()
    m = trainer.evaluate(ckpt, episodes)
    print(f"accuracy {m['accuracy']:.4f}  mean loss {m['mean_loss']:.4f}  "
          f"n {m['count']}")
    print("confusion (rows=true, cols=predicted):")
    print(m["confusion"])
    return 0


def cmd_eval_loop(args):
    ckpt = trainer.load_checkpoint(args.model)
    track = _get_track(args.track)
    policy = runtime.ModelPolicy(ckpt)
    done, times = 0, []
    for i in range(args.trials):
        ep = simworld.run_episode(policy, track, style=args.style,
                                  corruption_p=args.corrupt,
                                  max_steps=args.max_steps,
                                  seed=args.seed + i,
                                  start_jitter=args.start_jitter)
        if ep.terminal == "lap-complete":
            done += 1
            times.append(len(ep.steps) * simworld.DT)
        print(f"trial {i}: {ep.terminal} after {len(ep.steps)} steps")
    rate = done / args.trials
    mean_time = float(np.mean(times)) if times else float("nan")
    print(f"completion rate {rate:.2f}  mean lap time {mean_time:.1f} s")
    return 0


def cmd_bench(args):
    ckpt = trainer.load_checkpoint(args.model)
    track = simworld.make_track("oval")
    frame = simworld.render_camera(simworld.start_state(track), track)
    report = runtime.bench(ckpt, frame, iterations=args.iters)
    text = report.format()
    print(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    return 0


def cmd_serve(args):
    from .service import serve
    serve(args.port)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="edgeracer")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="frame PGM -> edge-map PGM")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--no-edges", action="store_true")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("collect", help="record simulator episodes")
    sp.add_argument("--policy", default="oracle",
                    help="'oracle' or a checkpoint path")
    sp.add_argument("--track", default="oval")
    sp.add_argument("--style", default="sim", choices=["sim", "real"])
    sp.add_argument("--episodes", type=int, default=1)
    sp.add_argument("--corrupt", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-steps", type=int, default=1000)
    sp.add_argument("--start-jitter", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("filter", help="reward-monotone dataset filtering")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("train")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-edges", action="store_true",
                    help="raw-pixel ablation (edge detection off)")
    sp.add_argument("--log", default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval-dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_eval_dataset)

    sp = sub.add_parser("eval-loop", help="closed-loop lap evaluation")
    sp.add_argument("--model", required=True)
    sp.add_argument("--track", default="oval")
    sp.add_argument("--style", default="sim", choices=["sim", "real"])
    sp.add_argument("--corrupt", type=float, default=0.0)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-steps", type=int, default=1000)
    sp.add_argument("--start-jitter", type=float, default=0.0)
    sp.set_defaults(func=cmd_eval_loop)

    sp = sub.add_parser("bench", help="per-frame latency report")
    sp.add_argument("--model", required=True)
    sp.add_argument("--iters", type=int, default=200)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("serve", help="teleop/monitoring WebSocket service")
    sp.add_argument("--port", type=int,
                    default=int(os.environ.get("RACER_PORT", "8700")))
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 0
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
