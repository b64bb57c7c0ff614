"""Command-line pipeline: simulate -> train -> synth -> infer -> eval -> plot.

Every subcommand honors the global flags ``--seed``, ``--config`` (JSON
key/value file whose entries become argument defaults) and ``--profile``
(tiny|full). Artifacts embed the seed and a hash of the effective
configuration so any run can be reproduced exactly. Errors exit nonzero
with a single machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import container as mcio
from .container import config_hash


def _error(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return 1


def _load_config(path):
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _placements(name: str):
    from .imusim import FOUR_SENSOR_UPPER_SET, SIX_SENSOR_SET

    return SIX_SENSOR_SET if name == "six" else FOUR_SENSOR_UPPER_SET


def _provenance(args, extra=None) -> dict:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    prov = {"seed": args.seed, "config_hash": config_hash(payload)}
    prov.update(extra or {})
    return prov


# -- subcommands -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .imusim import GarmentProxy, simulate_loose, simulate_tight
    from .motiongen import generate_motion

    if args.motion:
        motion = mcio.container_to_pose(mcio.load(args.motion))
    else:
        frames = int(args.minutes * 60 * args.fps)
        motion = generate_motion(frames, args.fps, seed=args.seed)

    placements = _placements(args.placements)
    tight = simulate_tight(motion, placements, include_gravity=args.include_gravity)
    proxy = GarmentProxy(gamma=args.gamma, height_cm=args.height, bmi=args.bmi)
    loose = simulate_loose(motion, placements, proxy, seed=args.seed, include_gravity=args.include_gravity)

    prov = _provenance(args)
    mcio.save(mcio.pose_to_container(motion, prov), os.path.join(args.out, "motion"))
    mcio.save(mcio.track_to_container(tight, prov), os.path.join(args.out, "tight"))
    mcio.save(mcio.track_to_container(loose, prov), os.path.join(args.out, "loose"))
    print(f"wrote motion/tight/loose under {args.out} ({motion.frames} frames at {motion.fps} fps)")
    return 0


def _sim_dir_tracks(path: str):
    motion = mcio.container_to_pose(mcio.load(os.path.join(path, "motion")))
    tight = mcio.container_to_track(mcio.load(os.path.join(path, "tight")))
    loose = mcio.container_to_track(mcio.load(os.path.join(path, "loose")))
    return motion, tight, loose


def _train_common(args, spec, windows):
    from .diffusion import make_schedule
    from .training import OptimizerConfig, train

    schedule = make_schedule(args.diffusion_steps, args.schedule)
    opt = OptimizerConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        steps=args.steps,
        sensor_dropout_prob=args.sensor_dropout,
    )
    curve_path = args.loss_curve or (args.out + ".loss.csv")
    ckpt, curve = train(
        spec, windows, opt, schedule, seed=args.seed,
        checkpoint_path=args.out, loss_curve_path=curve_path,
    )
    print(f"trained {args.steps} steps; final loss {curve[-1]['total']:.4f}; checkpoint {ckpt}")
    return 0


def cmd_train_secondary(args) -> int:
    from .models import ModelSpec
    from .synthdata import windows_from_simulation

    motion, tight, loose = _sim_dir_tracks(args.data)
    spec = ModelSpec(
        family="secondary",
        body="whole" if len(tight.sensor_ids) == 6 else "upper",
        profile=args.profile,
        window_frames=args.window,
        sensor_ids=tuple(tight.sensor_ids),
    )
    windows = windows_from_simulation(spec, motion, loose, tight, stride=args.stride)
    return _train_common(args, spec, windows)


def cmd_synth(args) -> int:
    from .synthdata import BlendSpec, blend, generate_loose

    motion, tight, loose_sim = _sim_dir_tracks(args.data)
    generated = generate_loose(args.secondary, tight, motion, seed=args.seed)
    prov = _provenance(args)
    mcio.save(mcio.track_to_container(generated, prov), os.path.join(args.out, "loose_generated"))
    spec = BlendSpec(alpha=args.alpha, seed=args.seed, window_frames=args.window)
    blended = blend(loose_sim, generated, spec)
    mcio.save(mcio.track_to_container(blended, prov), os.path.join(args.out, "loose_blended"))
    print(f"wrote loose_generated and loose_blended under {args.out}")
    return 0


def cmd_train_pose(args) -> int:
    from .models import ModelSpec
    from .synthdata import windows_from_simulation

    motion, tight, loose = _sim_dir_tracks(args.data)
    family = "unconditional" if args.conditioning == "unconditional" else "conditional"
    spec = ModelSpec(
        family=family,
        body=args.body,
        garment_aware=args.conditioning == "aware",
        profile=args.profile,
        window_frames=args.window,
        sensor_ids=tuple(tight.sensor_ids),
    )
    garment = None
    if spec.garment_aware:
        g = mcio.load(os.path.join(args.data, "loose")).provenance
        garment = (float(g.get("gamma", 0.0)), float(g.get("height_cm", 180.0)), float(g.get("bmi", 22.0)))
    windows = windows_from_simulation(spec, motion, loose, tight, stride=args.stride, garment=garment)
    return _train_common(args, spec, windows)


def cmd_infer(args) -> int:
    from .inference import predict_offline
    from .models import build_condition
    from .training import load_model

    if args.mode == "stream":
        return _infer_stream(args)
    if not args.data:
        return _error("usage", "--data is required in batch mode")

    model, schedule, meta = load_model(args.checkpoint)
    if model.spec.family == "secondary":
        return _error("usage", "secondary checkpoints generate sensor data; use the synth subcommand")
    motion, tight, loose = _sim_dir_tracks(args.data)
    dropped = ()
    if args.dropout_k:
        from .metrics import dropout_protocol

        loose, dropped = dropout_protocol(loose, args.dropout_k, seed=args.seed)
    garment = None
    if model.spec.garment_aware:
        g = mcio.load(os.path.join(args.data, "loose")).provenance
        garment = (float(g.get("gamma", 0.0)), float(g.get("height_cm", 180.0)), float(g.get("bmi", 22.0)))
    cond = build_condition(model.spec, loose=loose, tight=tight, pose=motion, garment=garment)
    from .diffusion import default_step_list

    steps = default_step_list(schedule, args.sampler_steps)
    raw = predict_offline(model, schedule, cond.astype(np.float32), steps, seed=args.seed)
    out = model.decode(raw)

    c = mcio.MotionContainer(
        fps=motion.fps,
        provenance=_provenance(args, {"checkpoint": args.checkpoint, "dropped_sensors": list(dropped)}),
    )
    c.add("pose_6d", out.pose)
    c.add("tight_imu", out.tight_imu)
    c.add("joint_pos", out.joint_pos, "m")
    if out.loose_imu is not None:
        c.add("loose_imu", out.loose_imu)
    mcio.save(c, args.out)
    print(f"wrote predictions ({raw.shape[0]} frames) to {args.out}")
    return 0


def _infer_stream(args) -> int:
    """Read newline-delimited condition frames from stdin, write pose records.

    Input line:  frame_index v1 ... v{9K} [gamma height bmi]
    Output line: frame_index followed by J*6 pose channels.
    """
    from .inference import stream_state, stream_step

    state = stream_state(args.checkpoint, sampler_steps=args.sampler_steps, seed=args.seed)
    width = state.model.spec.condition_width
    for line in sys.stdin:
        parts = line.split()
        if not parts:
            continue
        values = [float(v) for v in parts]
        idx, frame = int(values[0]), np.asarray(values[1:], dtype=np.float32)
        if frame.shape[0] != width:
            return _error("stream_config", f"frame {idx}: expected {width} values, got {frame.shape[0]}")
        out = stream_step(state, frame)
        pose = out.pose.reshape(-1)
        sys.stdout.write(str(idx) + " " + " ".join(f"{v:.6f}" for v in pose) + "\n")
        sys.stdout.flush()
    return 0


def cmd_eval(args) -> int:
    from .metrics import UPPER_EVAL_JOINTS, WHOLE_EVAL_JOINTS, evaluate
    from .models import ModelSpec
    from .skeleton import JOINT_NAMES, Skeleton, forward_kinematics
    from . import rotations as rot

    pred = mcio.load(args.pred)
    gt_motion = mcio.container_to_pose(mcio.load(os.path.join(args.gt, "motion")))
    sk = Skeleton()
    gt_q, gt_p = forward_kinematics(sk, gt_motion.joint_rotation, gt_motion.root_translation)

    body = args.joints
    spec = ModelSpec(family="conditional", body=body)
    pose_6d = pred.get("pose_6d").astype(np.float64)
    frames = min(pose_6d.shape[0], gt_q.shape[0])
    local = np.broadcast_to(rot.identity_quat(), (frames, 24, 4)).copy()
    local[:, list(spec.joint_indices), :] = rot.six_d_to_quat(pose_6d[:frames])
    pred_q, pred_p = forward_kinematics(sk, local, np.zeros((frames, 3)))

    joint_set = WHOLE_EVAL_JOINTS if body == "whole" else UPPER_EVAL_JOINTS
    report = evaluate(
        pred_q, gt_q[:frames], pred_p, gt_p[:frames], gt_motion.fps,
        joint_set=joint_set, joint_names=JOINT_NAMES,
        protocol={
            "joint_protocol": body,
            "pred": args.pred,
            "gt": args.gt,
            "seed": args.seed,
            "config_hash": _provenance(args)["config_hash"],
            "dropped_sensors": pred.provenance.get("dropped_sensors", []),
        },
    )
    report.write(json_path=args.out, csv_path=args.csv)
    print(report.to_json())
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(args.out, exist_ok=True)
    made = []
    if args.loss_curve:
        import csv as csvmod

        with open(args.loss_curve) as f:
            rows = list(csvmod.DictReader(f))
        steps = [int(r["step"]) for r in rows]
        fig, ax = plt.subplots(figsize=(7, 4))
        for col in rows[0]:
            if col == "step":
                continue
            ax.plot(steps, [float(r[col]) for r in rows], label=col)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(fontsize=7)
        path = os.path.join(args.out, "loss_curve.png")
        fig.savefig(path, dpi=120)
        made.append(path)
    if args.dropout_report:
        data = json.loads(open(args.dropout_report).read())
        ks = sorted(int(k) for k in data)
        fig, ax = plt.subplots(1, 2, figsize=(9, 4))
        ax[0].plot(ks, [data[str(k)]["mpjre_deg"] for k in ks], marker="o")
        ax[0].set_xlabel("missing sensors")
        ax[0].set_ylabel("rotation error (deg)")
        ax[1].plot(ks, [data[str(k)]["mpjpe_cm"] for k in ks], marker="o", color="tab:red")
        ax[1].set_xlabel("missing sensors")
        ax[1].set_ylabel("position error (cm)")
        path = os.path.join(args.out, "dropout_curves.png")
        fig.savefig(path, dpi=120)
        made.append(path)
    if made:
        meta = os.path.join(args.out, "plot_meta.json")
        open(meta, "w").write(json.dumps(_provenance(args, {"images": made}), indent=2))
        print("wrote " + ", ".join(made))
    else:
        print("nothing to plot")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loosepose",
        description="Pose estimation from loosely worn IMUs: simulation, diffusion training, streaming inference.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global random seed")
    common.add_argument("--config", default=None, help="JSON file of argument defaults")
    common.add_argument("--profile", choices=("tiny", "full"), default="tiny", help="model size profile")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=argparse.ArgumentParser)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("simulate", help="simulate tight + loose IMU tracks")
    p.add_argument("--motion", default=None, help="motion container; omit to generate procedurally")
    p.add_argument("--minutes", type=float, default=1.0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--height", type=float, default=180.0)
    p.add_argument("--bmi", type=float, default=22.0)
    p.add_argument("--placements", choices=("six", "four"), default="six")
    p.add_argument("--include-gravity", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, fn in (("train-secondary", cmd_train_secondary), ("train-pose", cmd_train_pose)):
        p = add_parser(name, help=f"{name.replace('-', ' ')} on a simulation directory")
        p.add_argument("--data", required=True, help="directory from `simulate`")
        p.add_argument("--out", required=True, help="checkpoint path")
        p.add_argument("--steps", type=int, default=500)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--learning-rate", type=float, default=3e-4)
        p.add_argument("--window", type=int, default=60)
        p.add_argument("--stride", type=int, default=10)
        p.add_argument("--diffusion-steps", type=int, default=1000)
        p.add_argument("--schedule", choices=("cosine", "linear"), default="cosine")
        p.add_argument("--sensor-dropout", type=float, default=0.0)
        p.add_argument("--loss-curve", default=None)
        if name == "train-pose":
            p.add_argument("--body", choices=("upper", "whole"), default="whole")
            p.add_argument(
                "--conditioning", choices=("unaware", "aware", "unconditional"), default="unaware"
            )
        p.set_defaults(func=fn)

    p = add_parser("synth", help="generate + blend loose data with a secondary model")
    p.add_argument("--data", required=True)
    p.add_argument("--secondary", required=True, help="secondary model checkpoint")
    p.add_argument("--alpha", type=float, default=None, help="fixed blend weight; omit for uniform per window")
    p.add_argument("--window", type=int, default=60)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = add_parser("infer", help="batch or streaming inference")
    p.add_argument("--mode", choices=("batch", "stream"), default="batch")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="simulation directory (batch mode)")
    p.add_argument("--sampler-steps", type=int, default=15)
    p.add_argument("--dropout-k", type=int, default=0, help="zero k seeded-chosen sensors first")
    p.add_argument("--out", default="predictions")
    p.set_defaults(func=cmd_infer)

    p = add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction container from `infer`")
    p.add_argument("--gt", required=True, help="simulation directory with the motion")
    p.add_argument("--joints", choices=("upper", "whole"), default="whole")
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--csv", default=None, help="report CSV path")
    p.set_defaults(func=cmd_eval)

    p = add_parser("plot", help="render loss curves and dropout sweeps")
    p.add_argument("--loss-curve", default=None)
    p.add_argument("--dropout-report", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = _load_config(args.config)
    for key, value in defaults.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and f"--{key}" not in (argv or sys.argv):
            setattr(args, attr, value)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except Exception as e:  # noqa: BLE001 - single CLI error boundary
        return _error(getattr(e, "code", type(e).__name__), str(e))


if __name__ == "__main__":
    sys.exit(main())
