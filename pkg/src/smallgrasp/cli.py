"""Command-line entry point: simulate, dataset, train, eval, inspect.

Every artifact records the seed and a hash of the resolved configuration;
with equal hashes two runs write identical bytes. Nothing is written
outside the output directory (``--out``, else $SMALLGRASP_OUT, else
./smallgrasp_out).
"""
import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import SmallGraspError

OUT_ENV = "SMALLGRASP_OUT"
DEFAULT_OUT = "smallgrasp_out"
log = logging.getLogger("smallgrasp")


class CliError(Exception):
    """Bad invocation or missing input; reported without a traceback."""


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _out_dir(args):
    root = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    root.mkdir(parents=True, exist_ok=True)
    return root


def _inside(root, path):
    """Resolve ``path`` under ``root``; refuse anything that escapes it."""
    p = (root / path).resolve()
    if root.resolve() not in (p, *p.parents):
        raise CliError(f"refusing to write outside the output directory: {path}")
    return p


def _need(path, what):
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def _load_common(args):
    from .controller import ControllerParams, load_controller_params
    from .kinematics import GripperModel, load_gripper_model
    model = load_gripper_model(_need(args.gripper_model, "gripper model")) \
        if args.gripper_model else GripperModel()
    params = load_controller_params(_need(args.controller_config, "controller config")) \
        if args.controller_config else ControllerParams()
    params.check_against(model)
    return model, params


def _scenario(args):
    from .simworld.world import load_scenario
    return load_scenario(_need(args.scenario, "scenario file"))


# ---------------------------------------------------------------- simulate

def _auto_classifier(scenario, seed, root, workers):
    """Small reference model over the scenario's classes, cached in the output dir."""
    from .classifier.model import load_model, save_model, train
    from .classifier.synthetic import DEFAULT_CLASSES, DatasetConfig, build_dataset
    from .simworld.presses import PressConfig
    classes = tuple(sorted(set(scenario.classes) | set(DEFAULT_CLASSES)))
    cfg = DatasetConfig(classes=classes, presses_per_class=6, press=PressConfig(frames=1),
                        two_object_presses=3 * len(classes), seed=seed, keep_tensors=False)
    key = config_hash({"auto_classifier": classes, "seed": seed, "presses": 6})
    path = root / f"auto_classifier_{key}.npz"
    if path.exists():
        return load_model(path), path
    log.info("training a reference classifier on classes %s", classes)
    model = train(build_dataset(cfg, workers))
    model.meta.update({"config_hash": key, "seed": seed})
    save_model(model, path)
    return model, path


def cmd_simulate(args):
    from .classifier.evaluate import ConfusionMatrix
    from .classifier.model import load_model
    from .controller import write_trace
    from .fsm import EpisodeConfig, run_batch, summarize

    root = _out_dir(args)
    scenario = _scenario(args)
    model, params = _load_common(args)
    seed = scenario.seed if args.seed is None else args.seed
    if args.classifier:
        clf, clf_path = load_model(_need(args.classifier, "classifier model")), Path(args.classifier)
    else:
        clf, clf_path = _auto_classifier(scenario, seed, root, args.workers)
    cfg = EpisodeConfig(model=model, controller=params, classifier=clf)
    config = {"command": "simulate", "scenario": scenario.to_dict(), "gripper": model.to_dict(),
              "controller": params.to_dict(), "seed": seed, "episodes": args.episodes,
              "classifier": hashlib.sha256(clf.parameters).hexdigest()[:16]}
    chash = config_hash(config)
    stamp = {"config_hash": chash, "seed": seed}

    results = run_batch(scenario, cfg, seed, args.episodes, args.workers)
    reports = [r for r, _ in results]
    lines = []
    for report, trace in results:
        lines.append(json.dumps({**report.to_dict(), **stamp}, sort_keys=True))
        if trace and report.trace:
            _inside(root, report.trace).parent.mkdir(parents=True, exist_ok=True)
            write_trace([{**rec, **stamp} for rec in trace], _inside(root, report.trace))
    (root / "reports.jsonl").write_text("\n".join(lines) + "\n")
    summary = summarize(reports)
    summary.update(stamp)
    summary["scenario"] = scenario.name
    summary["classifier_path"] = clf_path.name
    write_json(root / "summary.json", summary)
    cm = ConfusionMatrix.from_dict(summary["confusion"])
    (root / "confusion.txt").write_text(
        f"# attempts {summary['attempts']}  successful grasps {summary['successful_grasps']}"
        f"  sorted {summary['sorted']}\n# config {chash}  seed {seed}\n" + cm.to_text())
    if args.plots:
        from .plots import plot_confusion, plot_thetas
        plot_confusion(cm, root / "confusion.png")
        plot_thetas([t for _, t in results], root / "theta.png")
    print(f"{summary['attempts']} attempts, {summary['successful_grasps']} successful grasps, "
          f"{summary['sorted']} sorted; outcomes {summary['outcomes']}")
    print(f"wrote {root / 'reports.jsonl'}")
    return 0


# ----------------------------------------------------------------- dataset

def cmd_dataset(args):
    from .classifier.dataset import save_dataset
    from .classifier.synthetic import DEFAULT_CLASSES, DatasetConfig, build_dataset
    from .simworld.presses import PressConfig

    root = _out_dir(args)
    if args.classes:
        classes = tuple(int(c) for c in args.classes.split(","))
    elif args.scenario:
        classes = tuple(_scenario(args).classes)
    else:
        classes = DEFAULT_CLASSES
    seed = 0 if args.seed is None else args.seed
    cfg = DatasetConfig(classes=classes, presses_per_class=args.presses,
                        press=PressConfig(frames=args.frames),
                        two_object_presses=args.two_object_presses, seed=seed)
    config = {"command": "dataset", "classes": list(classes), "presses": args.presses,
              "frames": args.frames, "two_object_presses": args.two_object_presses,
              "seed": seed}
    chash = config_hash(config)
    ds = build_dataset(cfg, args.workers)
    target = _inside(root, args.dataset_dir)
    save_dataset(ds, target, {"config_hash": chash, "config": config})
    print(f"{len(ds.samples)} samples ({sum(1 for s in ds.split if s == 'test')} test) "
          f"-> {target / 'manifest.json'}")
    return 0


# ------------------------------------------------------------- train / eval

def _manifest(args, root):
    path = Path(args.manifest) if args.manifest else root / "dataset" / "manifest.json"
    if path.is_dir():
        path = path / "manifest.json"
    return _need(path, "dataset manifest")


def cmd_train(args):
    from .classifier.dataset import load_dataset
    from .classifier.evaluate import evaluate
    from .classifier.model import TrainConfig, save_model, train

    root = _out_dir(args)
    ds, manifest = load_dataset(_manifest(args, root))
    seed = manifest["seed"] if args.seed is None else args.seed
    config = {"command": "train", "dataset": manifest.get("config_hash"), "seed": seed,
              "train": TrainConfig(seed=seed).to_dict()}
    chash = config_hash(config)
    model = train(ds, TrainConfig(seed=seed))
    model.meta.update({"config_hash": chash, "seed": seed, "dataset": manifest.get("config_hash")})
    out = _inside(root, args.model or "model.npz")
    save_model(model, out)
    acc = evaluate(model, ds.train_samples()).accuracy
    write_json(root / "train_metrics.json", {"config_hash": chash, "seed": seed,
                                             "train_accuracy": round(acc, 6),
                                             "fit": model.meta["fit"]})
    print(f"trained {model.kind} on {model.meta['n_train']} samples, "
          f"train accuracy {acc:.4f} -> {out}")
    return 0


def cmd_eval(args):
    from .classifier.dataset import load_dataset
    from .classifier.evaluate import evaluate, write_report
    from .classifier.model import load_model

    root = _out_dir(args)
    model_path = Path(args.model) if args.model else root / "model.npz"
    if not model_path.is_absolute() and not model_path.exists():
        model_path = root / model_path
    if not model_path.exists():
        raise CliError(f"model not found: {model_path}")
    model = load_model(model_path)
    ds, manifest = load_dataset(_manifest(args, root))
    seed = manifest["seed"] if args.seed is None else args.seed
    config = {"command": "eval", "model": model.meta.get("config_hash"),
              "dataset": manifest.get("config_hash"), "seed": seed}
    chash = config_hash(config)
    cm = evaluate(model, ds)
    write_report(cm, root / "metrics.json", {"config_hash": chash, "seed": seed})
    (root / "eval_confusion.txt").write_text(f"# config {chash}  seed {seed}\n" + cm.to_text())
    if args.plots:
        from .plots import plot_confusion
        plot_confusion(cm, root / "eval_confusion.png")
    print(cm.to_text(), end="")
    return 0


# ----------------------------------------------------------------- inspect

def _describe_npz(path):
    with np.load(path, allow_pickle=False) as z:
        magic = str(z["magic"]) if "magic" in z else "?"
        out = {"file": str(path), "magic": magic}
        for k in z.files:
            a = z[k]
            if a.ndim == 0:
                out[k] = a.item() if a.dtype.kind != "U" else str(a)
            elif k != "parameters":
                out[k] = {"shape": list(a.shape), "dtype": str(a.dtype),
                          **({"min": float(np.nanmin(a)), "max": float(np.nanmax(a))}
                             if a.size and a.dtype.kind in "fiu" else {})}
        if "meta" in out and isinstance(out["meta"], str):
            out["meta"] = json.loads(out["meta"])
    return out


def cmd_inspect(args):
    path = _need(args.path, "artifact")
    if path.is_dir():
        for p in sorted(path.iterdir()):
            print(p.name)
        return 0
    if path.suffix == ".npz":
        print(json.dumps(_describe_npz(path), indent=2, sort_keys=True, default=str))
    elif path.suffix == ".jsonl":
        for line in path.read_text().splitlines():
            if line.strip():
                print(json.dumps(json.loads(line), indent=2, sort_keys=True))
    elif path.suffix == ".json":
        print(json.dumps(json.loads(path.read_text()), indent=2, sort_keys=True))
    else:
        print(path.read_text(), end="")
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--controller-config", help="controller parameter JSON file")
    common.add_argument("--gripper-model", help="gripper model JSON file")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--episodes", type=int, default=1, help="episodes to simulate")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--plots", action="store_true", help="also render PNG plots")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="smallgrasp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="run seeded sorting episodes")
    s.add_argument("--classifier", help="trained classifier (default: train a small one)")
    s.set_defaults(func=cmd_simulate)
    d = sub.add_parser("dataset", parents=[common], help="simulate presses into a dataset")
    d.add_argument("--classes", help="comma separated class ids (default: scenario classes)")
    d.add_argument("--presses", type=int, default=1, help="presses per class")
    d.add_argument("--frames", type=int, default=50, help="frames per press")
    d.add_argument("--two-object-presses", type=int, default=0, help="class-21 pair presses")
    d.add_argument("--dataset-dir", default="dataset", help="subdirectory of --out")
    d.set_defaults(func=cmd_dataset)
    t = sub.add_parser("train", parents=[common], help="train the reference classifier")
    t.add_argument("--manifest", help="dataset manifest (default OUT/dataset/manifest.json)")
    t.add_argument("--model", help="model file name under --out (default model.npz)")
    t.set_defaults(func=cmd_train)
    e = sub.add_parser("eval", parents=[common], help="confusion matrix on the test split")
    e.add_argument("--manifest", help="dataset manifest (default OUT/dataset/manifest.json)")
    e.add_argument("--model", help="model file (default OUT/model.npz)")
    e.set_defaults(func=cmd_eval)
    i = sub.add_parser("inspect", parents=[common], help="pretty-print any artifact")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.episodes < 1 or args.workers < 1:
        print("error: --episodes and --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliError, SmallGraspError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
