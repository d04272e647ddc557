"""Command-line surface: gen, preprocess, train, rollout, gradcheck, report.

Every command is deterministic under (flags, config, seed) and stamps its
outputs with a config hash. Failures exit nonzero with a machine-readable
JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from egoflow.errors import AnchorUnavailable, EgoflowError
from egoflow.ict import RefFrameMode
from egoflow.io import load_config, read_bundle, read_dataset, write_bundle, write_dataset
from egoflow.metrics import (
    canonical_json,
    compute_idle_fraction,
    compute_jerk,
    config_hash,
    spatial_coverage,
    wilson_interval,
)
from egoflow.phase import PhaseConfig
from egoflow.pipeline import fit_corpus_stats, preprocess_recording
from egoflow.plots import bar_chart, line_chart
from egoflow.policy import (
    AugmentConfig,
    LossWeights,
    NetConfig,
    PolicyNet,
    TrainConfig,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    tensorize_recording,
    train,
)
from egoflow.policy.checkpoint import loss_weights_from_manifest
from egoflow.policy.train import collate
from egoflow.policy.dataset import sample_at
from egoflow.retarget import RetargetConfig
from egoflow.control import PolicyBundle, RolloutConfig, run_episode
from egoflow.synth import SceneSpec, env_from_scene, gen_recording, sample_scene


def _scene_spec(args_or_meta, seed: int) -> SceneSpec:
    fields = {f.name for f in dataclasses.fields(SceneSpec)}
    values = {k: v for k, v in args_or_meta.items() if k in fields and v is not None}
    for key in ("workspace_x", "workspace_y", "offset_range"):
        if key in values:
            values[key] = tuple(values[key])
    values["seed"] = seed
    return SceneSpec(**values)


def cmd_gen(args, config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.demos < 1:
        raise ValueError("demos must be >= 1")
    synth_cfg = dict(config.get("synth", {}))
    synth_cfg.update(
        {
            "task": args.task,
            "sigma_px": args.noise_px if args.noise_px is not None else synth_cfg.get("sigma_px", 0.3),
            "sigma_kp": args.noise_kp if args.noise_kp is not None else synth_cfg.get("sigma_kp", 0.001),
            "conf_dropout": args.dropout if args.dropout is not None else synth_cfg.get("conf_dropout", 0.01),
        }
    )
    if args.dual_goal:
        synth_cfg["dual_goal"] = True
    if args.offset_min is not None or args.offset_max is not None:
        lo, hi = synth_cfg.get("offset_range", (0.0, 0.5))
        synth_cfg["offset_range"] = (
            args.offset_min if args.offset_min is not None else lo,
            args.offset_max if args.offset_max is not None else hi,
        )
    bundles = []
    for i in range(args.demos):
        spec = _scene_spec(synth_cfg, seed=args.seed + i)
        rec, gt = gen_recording(spec)
        name = f"demo_{i:04d}"
        write_bundle(out / name, rec, gt)
        bundles.append(name)
    manifest = {
        "task": args.task,
        "demos": args.demos,
        "seed": args.seed,
        "synth": {**synth_cfg, "task": args.task},
        "bundles": bundles,
    }
    manifest["config_hash"] = config_hash(manifest)
    (out / "manifest.json").write_text(canonical_json(manifest))
    print(f"wrote {len(bundles)} bundles to {out}")
    return 0


def cmd_preprocess(args, config) -> int:
    src = Path(args.input)
    manifest = json.loads((src / "manifest.json").read_text())
    ref_mode = RefFrameMode(args.ref_frame)
    retarget_cfg = RetargetConfig(**config.get("retarget", {}))
    phase_cfg = PhaseConfig(**config.get("phase", {}))
    recs = []
    failures = {}
    for name in manifest["bundles"]:
        try:
            rec, gt = read_bundle(src / name)
            orientations = None
            if gt is not None:
                orientations = {oid: poses[0].rot for oid, poses in gt.object_poses.items()}
            recs.append(
                preprocess_recording(
                    rec, name, ref_mode, retarget_cfg=retarget_cfg, phase_cfg=phase_cfg, orientations=orientations
                )
            )
        except AnchorUnavailable as err:
            failures[name] = f"AnchorUnavailable: {err}"
        except EgoflowError as err:
            failures[name] = f"{type(err).__name__}: {err}"
    if not recs:
        raise EgoflowError(f"no recordings preprocessed ({len(failures)} failures)")
    stats = fit_corpus_stats(recs)
    meta = {
        "source_manifest": manifest,
        "ref_mode": ref_mode.value,
        "failures": failures,
        "config_hash": config_hash({"config": config, "ref": ref_mode.value, "src": manifest.get("config_hash")}),
    }
    write_dataset(args.out, recs, stats, meta)
    print(f"preprocessed {len(recs)} recordings ({len(failures)} skipped) -> {args.out}")
    return 0


def _train_config(config: dict, args) -> TrainConfig:
    policy = dict(config.get("policy", {}))
    if args.no_aux:
        policy.update({"lambda_om": 0.0, "lambda_2d": 0.0, "lambda_lc": 0.0})
    if getattr(args, "steps", None) is not None:
        policy["max_steps"] = args.steps
    net_keys = {"arch", "ctx_dim", "hidden", "use_raster"}
    weight_keys = {"lambda_om", "lambda_2d", "lambda_lc", "w_p", "w_r", "w_g", "w_f", "w_c"}
    aug_keys = {"substep_prob", "sigma_pos", "sigma_rot_deg"}
    net = NetConfig(**{k: policy.pop(k) for k in list(policy) if k in net_keys})
    weights = LossWeights(**{k: policy.pop(k) for k in list(policy) if k in weight_keys})
    aug_kwargs = {k: policy.pop(k) for k in list(policy) if k in aug_keys}
    if "augment_enabled" in policy:
        aug_kwargs["enabled"] = policy.pop("augment_enabled")
    augment = AugmentConfig(**aug_kwargs)
    policy.pop("stride", None)
    policy["seed"] = args.seed
    return TrainConfig(net=net, weights=weights, augment=augment, **policy)


def cmd_train(args, config) -> int:
    recs, stats, meta = read_dataset(args.data)
    cfg = _train_config(config, args)
    stride = config.get("policy", {}).get("stride", 1)
    rts = [tensorize_recording(rec, stats) for rec in recs]
    if stride > 1:
        for rt in rts:
            rt.selected = rt.selected[::stride]
    result = train(cfg, rts, stats)
    out = Path(args.out)
    save_checkpoint(
        out,
        result,
        extra_meta={
            "dataset_meta": meta,
            "config_hash": config_hash({"config": config, "seed": args.seed}),
            "no_aux": bool(args.no_aux),
        },
    )
    with open(out / "loss_curves.csv", "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["step", "lr", "total", "fm", "fm_pos", "fm_rot", "fm_grasp", "om", "2d", "lc", "val_fm"]
        )
        writer.writeheader()
        for row in result.history:
            writer.writerow({k: row.get(k, "") for k in writer.fieldnames})
    print(f"trained {result.steps} steps, final val FM {result.final_val_fm:.5f} -> {out}")
    return 0


def _episode_metrics(results, control_hz: float):
    successes = sum(r.success for r in results)
    lo, hi = wilson_interval(successes, len(results))
    jerk_means = []
    idles = []
    coverage = []
    per_episode = []
    for r in results:
        pos = r.commanded_positions("right")
        entry = {
            "success": bool(r.success),
            "cycles": int(r.cycles),
            "clamps": int(r.clamp_count),
            "mode": r.realized_mode,
        }
        if pos.shape[0] >= 5:
            _, summary = compute_jerk(pos, dt=1.0 / control_hz)
            entry["jerk_mean"] = summary["mean"]
            jerk_means.append(summary["mean"])
            entry["idle_fraction"] = compute_idle_fraction(pos, dt=1.0 / control_hz)
            idles.append(entry["idle_fraction"])
            coverage.append(spatial_coverage(pos)["bbox_volume"])
        per_episode.append(entry)
    return {
        "episodes": len(results),
        "successes": int(successes),
        "success_rate": successes / len(results),
        "wilson_95": [lo, hi],
        "jerk_mean": float(np.mean(jerk_means)) if jerk_means else None,
        "idle_fraction": float(np.mean(idles)) if idles else None,
        "coverage_bbox": float(np.mean(coverage)) if coverage else None,
        "per_episode": per_episode,
    }


def cmd_rollout(args, config) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    _, ema_net, stats, manifest = load_checkpoint(ckpt)
    meta = manifest.get("meta", {})
    source = meta.get("dataset_meta", {}).get("source_manifest", {})
    synth_cfg = dict(source.get("synth", {}))
    synth_cfg.update(config.get("synth", {}))
    ref_mode = RefFrameMode(meta.get("dataset_meta", {}).get("ref_mode", "camera"))
    roll_cfg = RolloutConfig(**{**config.get("control", {}), "seed": args.seed})
    bundle = PolicyBundle(net=ema_net, stats=stats, ref_mode=ref_mode)
    results = []
    logs_path = Path(args.out).with_suffix(".episodes.jsonl") if args.out else None
    log_file = open(logs_path, "w") if logs_path else None
    for ep in range(args.episodes):
        spec = _scene_spec(synth_cfg, seed=args.seed + 10_000 + ep)
        scene = sample_scene(spec, np.random.default_rng(spec.seed))
        env0, task = env_from_scene(scene, spec.task)
        res = run_episode(bundle, env0, task, dataclasses.replace(roll_cfg, seed=args.seed + ep))
        results.append(res)
        if log_file:
            for row in res.log:
                log_file.write(canonical_json({"episode": ep, **row}) + "\n")
    if log_file:
        log_file.close()
    report = _episode_metrics(results, roll_cfg.control_hz)
    report.update(
        {
            "seed": args.seed,
            "config_hash": config_hash(
                {"config": config, "seed": args.seed, "episodes": args.episodes, "ckpt": manifest.get("meta", {}).get("config_hash")}
            ),
            "task": synth_cfg.get("task", source.get("task")),
            "label": args.label,
        }
    )
    payload = canonical_json(report)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def cmd_gradcheck(args, config) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for i in range(args.configs):
        net = PolicyNet(NetConfig(ctx_dim=8, hidden=12, chunk_steps=4, action_dim=20, time_dim=8))
        sample_tokens = rng.normal(size=(1, 3, 29)).astype(np.float32)
        batch = {
            "tokens": torch.from_numpy(sample_tokens),
            "slots": torch.tensor([[0, 1, 2]]),
            "present": torch.ones(1, 3, dtype=torch.bool),
            "chunk": torch.from_numpy(rng.normal(size=(1, 4, 20)).astype(np.float32)),
            "om": torch.from_numpy(rng.normal(size=(1, 4, 9)).astype(np.float32)),
            "om_mask": torch.ones(1),
            "trace2d": torch.rand(1, 4, 3, 2),
            "trace2d_mask": torch.ones(1, 3),
            "lc": torch.from_numpy(rng.normal(size=(1, 2, 29)).astype(np.float32)),
            "lc_mask": torch.ones(1, 2),
            "anchor_uv": torch.full((1, 2), 0.5),
        }
        err = grad_check(net, batch, eps=args.eps, seed=args.seed + i)
        worst = max(worst, err)
        print(f"config {i}: max relative error {err:.3e}")
    print(f"worst over {args.configs} configs: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def cmd_report(args, config) -> int:
    if not args.inputs:
        raise ValueError("report requires at least one metrics file")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.inputs:
        data = json.loads(Path(path).read_text())
        rows.append(
            {
                "label": data.get("label") or Path(path).stem,
                "task": data.get("task"),
                "episodes": data.get("episodes"),
                "success_rate": data.get("success_rate"),
                "wilson_lo": data.get("wilson_95", [None, None])[0],
                "wilson_hi": data.get("wilson_95", [None, None])[1],
                "jerk_mean": data.get("jerk_mean"),
                "idle_fraction": data.get("idle_fraction"),
                "coverage_bbox": data.get("coverage_bbox"),
                "val_fm": data.get("val_fm"),
                "seed": data.get("seed"),
                "config_hash": data.get("config_hash"),
            }
        )
    rows.sort(key=lambda r: str(r["label"]))
    with open(out / "summary.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    labels = [str(r["label"]) for r in rows]
    if any(r["success_rate"] is not None for r in rows):
        bar_chart(
            out / "success_rates.svg",
            labels,
            [r["success_rate"] or 0.0 for r in rows],
            title="Closed-loop success rate",
            y_label="success rate",
        )
    if any(r["val_fm"] is not None for r in rows):
        bar_chart(
            out / "val_fm.svg",
            labels,
            [r["val_fm"] or 0.0 for r in rows],
            title="Validation flow-matching loss",
            y_label="val FM",
        )
    curves = {}
    for r in rows:
        if r["success_rate"] is None:
            continue
        name = str(r["label"]).rstrip("0123456789_-")
        xs, ys = curves.setdefault(name, ([], []))
        xs.append(r["episodes"] or len(xs))
        ys.append(r["success_rate"])
    if curves:
        line_chart(out / "scaling.svg", curves, title="Success vs. run", x_label="episodes", y_label="success")
    print(f"report written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egoflow", description=__doc__)
    parser.add_argument("--config", default=None, help="JSON run config")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic recording bundles")
    p.add_argument("--task", required=True, choices=["reach", "pick-place", "bimanual-ordered"])
    p.add_argument("--demos", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-px", type=float, default=None)
    p.add_argument("--noise-kp", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--offset-min", type=float, default=None)
    p.add_argument("--offset-max", type=float, default=None)
    p.add_argument("--dual-goal", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("preprocess", help="retarget, triangulate, phase-select, encode")
    p.add_argument("--input", required=True, help="bundle directory (with manifest.json)")
    p.add_argument("--out", required=True, help="dataset JSONL path")
    p.add_argument("--ref-frame", default="camera", choices=["camera", "anchor"])
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the flow-matching policy")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--no-aux", action="store_true", help="disable all auxiliary objectives")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="closed-loop evaluation episodes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--label", default=None)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--configs", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="summarize metrics files into CSV + SVG")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {}
        return args.func(args, config)
    except Exception as err:  # noqa: BLE001 - single CLI boundary
        sys.stderr.write(canonical_json({"error": type(err).__name__, "message": str(err)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
