"""Command line entry point: ``hdgt gen|train|predict|eval|gradcheck|ablate``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .autodiff.checkpoint import CheckpointError
from .config import ModelConfig
from .scene.schema import SceneValidationError, load_scene_file, save_scene_file
from .scene.synthetic import GeneratorConfig, generate_synthetic

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FORMAT_VERSION = 1
TEMPLATES = ("straight", "intersection", "roundabout")

VARIANTS = {
    "full": {},
    "shared": {"typing": "shared"},
    "fixed_reference": {"mode": "fixed_reference"},
    "relative_edge": {"mode": "relative_edge"},
    "gcn_like": {"aggregation": "gcn_like"},
    "fully_connected": {"fully_connected": True},
    "merge_lane_connectivity": {"merge_lane_connectivity": True},
    "homogeneous_map_node": {"homogeneous_map_node": True},
    "global_delta": {"delta_frame": "global"},
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- run config ---------------------------------------------------------------------

def _section(raw: dict, key: str, cls):
    data = dict(raw.get(key) or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown {key} config keys: {sorted(unknown)}")
    return data


def load_run_config(path, overrides: dict | None = None) -> dict:
    """Resolved run config: file values, then CLI overrides, then defaults."""
    from .training import TrainConfig
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise CliError(EXIT_CONFIG, f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config file is not valid JSON: {exc}") from exc
    extra = set(raw) - {"model", "train", "generator", "data"}
    if extra:
        raise CliError(EXIT_CONFIG, f"unknown config sections: {sorted(extra)}")
    overrides = overrides or {}
    model = {**_section(raw, "model", ModelConfig), **overrides.get("model", {})}
    train_d = {**_section(raw, "train", TrainConfig), **overrides.get("train", {})}
    gen = {**_section(raw, "generator", GeneratorConfig), **overrides.get("generator", {})}
    try:
        resolved = {
            "model": ModelConfig(**model).to_dict(),
            "train": TrainConfig(**train_d).to_dict(),
            "generator": asdict(GeneratorConfig(**gen)),
            "data": dict(raw.get("data") or {}),
        }
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from exc
    resolved["data"] = {"train_count": 32, "val_count": 8, **resolved["data"], **overrides.get("data", {})}
    return resolved


def resolve_seed(arg_seed):
    if arg_seed is not None:
        return int(arg_seed)
    env = os.environ.get("HDGT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"HDGT_SEED must be an integer, got {env!r}") from exc
    return None


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _load_scenes(path) -> list:
    path = Path(path)
    if not path.exists():
        raise CliError(EXIT_DATA, f"data path does not exist: {path}")
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    files = [f for f in files if f.name != "manifest.json"]
    if not files:
        raise CliError(EXIT_DATA, f"no scene files in {path}")
    scenes = []
    for f in files:
        try:
            scenes.append(load_scene_file(f))
        except SceneValidationError as exc:
            raise CliError(EXIT_DATA, f"{f}: {exc}") from exc
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_DATA, f"{f}: {exc}") from exc
    return scenes


def _generate(seed: int, count: int, gen: dict, template: str | None = None) -> list:
    out = []
    for i in range(count):
        cfg = dict(gen)
        if template is None or template == "mixed":
            cfg["template"] = TEMPLATES[i % len(TEMPLATES)]
        else:
            cfg["template"] = template
        out.append(generate_synthetic(seed + i, GeneratorConfig(**cfg)))
    return out


# -- commands -------------------------------------------------------------------------

def cmd_gen(args) -> int:
    seed = resolve_seed(args.seed) or 0
    run = load_run_config(args.config)
    template = args.template or run["generator"]["template"]
    if template not in TEMPLATES + ("mixed",):
        raise CliError(EXIT_CONFIG, f"unknown template {template!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        scenes = _generate(seed, args.count, run["generator"], template)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    for i, s in enumerate(scenes):
        save_scene_file(s, out / f"scene_{i}.json")
    _write_json(out / "manifest.json", {"format_version": FORMAT_VERSION, "seed": seed, "count": args.count,
                                        "template": template, "config": run})
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import NumericError, TrainConfig, evaluate_scenes, train
    over = {}
    seed = resolve_seed(args.seed)
    if seed is not None:
        over = {"train": {"seed": seed}, "model": {"seed": seed}}
    run = load_run_config(args.config, over)
    scenes = _load_scenes(args.data)
    val = _load_scenes(args.val) if args.val else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run_config.json", {"format_version": FORMAT_VERSION, "config": run})
    mc, tc = ModelConfig.from_dict(run["model"]), TrainConfig.from_dict(run["train"])
    try:
        res = train(scenes, mc, tc, val_scenes=val, out_dir=out, resume=args.resume)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {"format_version": FORMAT_VERSION, "config": run, "steps": res.steps,
               "final": res.history[-1] if res.history else None, "best_epoch": res.best_epoch,
               "validation": res.validation}
    if val is None:
        from .autodiff.tensor import precision
        with precision(tc.dtype):
            summary["train_metrics"] = evaluate_scenes(res.params, mc, scenes).summary()
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary["final"]))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .autodiff.tensor import precision
    from .decoder import prediction_record
    from .training import load_checkpoint, predict_scenes
    try:
        params, mc, meta, _ = load_checkpoint(args.ckpt)
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"checkpoint not found: {args.ckpt}") from exc
    except (CheckpointError, KeyError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"bad checkpoint {args.ckpt}: {exc}") from exc
    scenes = _load_scenes(args.scene)
    out = Path(args.out)
    single = len(scenes) == 1 and out.suffix == ".json"
    tc = meta.get("train_config") or {}
    dtype = np.float64 if tc.get("precision") == "float64" else np.float32
    with precision(dtype):
        for s, pred in predict_scenes(params, mc, scenes):
            doc = {"format_version": FORMAT_VERSION, "scene_id": s.scene_id, "config": meta,
                   "n_modes": mc.n_modes, "t_future": mc.t_future,
                   "agents": prediction_record(pred, s.agent_ids, s.frames[:s.graph.n_agents])}
            path = out if single else out / f"{s.scene_id}.json"
            _write_json(path, doc)
    print(f"wrote predictions for {len(scenes)} scene(s) to {out}")
    return EXIT_OK


def _eval_entries(pred_dir, gt_dir, targets_only=True):
    from .batch import featurize
    from .scene.preprocess import preprocess
    preds = {}
    pdir = Path(pred_dir)
    if not pdir.exists():
        raise CliError(EXIT_DATA, f"prediction path does not exist: {pdir}")
    for f in sorted(pdir.glob("*.json")) if pdir.is_dir() else [pdir]:
        doc = json.loads(f.read_text())
        preds[doc["scene_id"]] = doc
    entries = []
    for scene in _load_scenes(gt_dir):
        if scene.id not in preds:
            raise CliError(EXIT_DATA, f"no prediction for scene {scene.id}")
        doc = preds[scene.id]["agents"]
        sample = featurize(preprocess(scene), ModelConfig(t_future=scene.t_future))
        wanted = [aid for i, aid in enumerate(sample.agent_ids) if sample.is_target[i] or not targets_only]
        missing = sorted(set(wanted) - set(doc))
        extra = sorted(set(doc) - set(sample.agent_ids))
        if missing or extra:
            raise CliError(EXIT_DATA, f"scene {scene.id}: agent id mismatch; missing={missing} unknown={extra}")
        for i, aid in enumerate(sample.agent_ids):
            if aid not in wanted:
                continue
            modes = np.asarray(doc[aid]["modes"], dtype=np.float64)
            t = min(modes.shape[1], sample.gt_future.shape[1])
            entries.append((scene.id, aid, sample.agent_types[i], modes[:, :t], sample.gt_future[i, :t],
                            sample.loss_mask[i, :t]))
    return entries


def cmd_eval(args) -> int:
    from .metrics import evaluate
    rep = evaluate(_eval_entries(args.pred, args.gt), threshold=args.miss_threshold)
    out = Path(args.out)
    if out.suffix == ".csv":
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(rep.to_csv())
    elif out.suffix == ".json":
        _write_json(out, {"format_version": FORMAT_VERSION, **rep.summary()})
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(rep.to_csv())
        _write_json(out / "metrics.json", {"format_version": FORMAT_VERSION, **rep.summary()})
    print(rep.to_json())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import TOLERANCE, check_model, check_ops
    run = load_run_config(args.config)
    model = dict(run["model"])
    if not args.config:
        model.update(hidden=32, n_layers=2)
    report = {"ops": check_ops()}
    if not args.ops_only:
        per_tensor = check_model(ModelConfig(**model), coords_per_tensor=args.coords)
        report["model"] = max(per_tensor.values())
        report["model_worst_tensor"] = max(per_tensor, key=per_tensor.get)
    worst = max([*report["ops"].values(), report.get("model", 0.0)])
    for name, err in report["ops"].items():
        print(f"{name:24s} {err:.3e}")
    if "model" in report:
        print(f"{'model':24s} {report['model']:.3e} ({report['model_worst_tensor']})")
    ok = worst <= args.tol
    print(f"max relative error {worst:.3e} {'<=' if ok else '>'} {args.tol:g}: {'PASS' if ok else 'FAIL'}")
    if args.out:
        _write_json(Path(args.out), {"format_version": FORMAT_VERSION, "config": run, "tolerance": args.tol,
                                     **report, "pass": ok})
    return EXIT_OK if ok else EXIT_NUMERIC


def run_ablation(variants, run: dict, seeds, train_scenes=None, val_scenes=None, log=None) -> list[dict]:
    """Train each variant on the same data for every seed; mean metrics per variant."""
    from .training import TrainConfig, evaluate_scenes, train
    from .autodiff.tensor import precision
    data = run["data"]
    gen_seed = int(data.get("seed", 0))
    if train_scenes is None:
        train_scenes = _generate(gen_seed, int(data["train_count"]), run["generator"], "mixed")
    if val_scenes is None:
        val_scenes = _generate(gen_seed + 1_000_000, int(data["val_count"]), run["generator"], "mixed")
    rows = []
    for name in variants:
        metrics = []
        for seed in seeds:
            mc = ModelConfig.from_dict({**run["model"], **VARIANTS[name], "seed": seed})
            tc = TrainConfig.from_dict({**run["train"], "seed": seed})
            res = train(train_scenes, mc, tc)
            with precision(tc.dtype):
                rep = evaluate_scenes(res.params, mc, val_scenes)
            metrics.append((rep.min_ade, rep.min_fde, rep.miss_rate))
            if log:
                log(name, seed, rep)
        m = np.mean(metrics, axis=0)
        rows.append({"variant": name, "min_ade": float(m[0]), "min_fde": float(m[1]), "mr": float(m[2]),
                     "seeds": list(seeds), "per_seed": [list(map(float, x)) for x in metrics]})
    return rows


def cmd_ablate(args) -> int:
    seed = resolve_seed(args.seed)
    run = load_run_config(args.config, {"data": {"seed": seed}} if seed is not None else None)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown variants {unknown}; choose from {sorted(VARIANTS)}")
    seeds = [int(s) for s in args.seeds.split(",")]
    train_scenes = _load_scenes(args.data) if args.data else None
    val_scenes = _load_scenes(args.val) if args.val else None
    rows = run_ablation(variants, run, seeds, train_scenes, val_scenes,
                        log=lambda n, s, r: print(f"{n} seed={s} minADE={r.min_ade:.4f}", file=sys.stderr))
    print("variant,min_ade,min_fde,mr")
    for r in rows:
        print(f"{r['variant']},{r['min_ade']:.4f},{r['min_fde']:.4f},{r['mr']:.4f}")
    if args.out:
        out = Path(args.out)
        _write_json(out, {"format_version": FORMAT_VERSION, "config": run, "rows": rows})
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdgt", description="Heterogeneous driving-graph trajectory predictor")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic scenes")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--template", choices=TEMPLATES + ("mixed",))
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="predict trajectories for scene file(s)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth scenes")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--miss-threshold", type=float, default=2.0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full model")
    p.add_argument("--config")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=3, help="sampled coordinates per parameter tensor")
    p.add_argument("--ops-only", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--config")
    p.add_argument("--variants", default="full,shared")
    p.add_argument("--seeds", default="0")
    p.add_argument("--seed", type=int, help="data seed")
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) != 1:
        print("error: only --workers 1 is supported", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
