"""``subspacenet`` command line: gen, train, cluster, eval, baseline, loocv, curve.

Every command writes into a fresh ``--out`` directory and echoes the fully
resolved run configuration there as ``config.json``. Exit status is 0 on
success, 1 for invalid input or configuration and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import (
    SPLITS,
    InstanceFormatError,
    ValidationError,
    read_dataset,
    read_instance,
    read_manifest,
    write_dataset,
)
from .geometry import FitError, GenerationError, SceneSpec, generate_scene, sequential_fit
from .inference import (
    DEFAULT_K_MAX,
    DEFAULT_RESTARTS,
    kmeans,
    residual_curve,
    select_k_silhouette,
    silhouette,
    sod_scores,
    select_k_sod,
)
from .metrics import evaluate, report_table
from .network import NetworkConfig, embed, load_checkpoint
from .training import TrainConfig, TrainingError, loocv, train

log = logging.getLogger("subspacenet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


@dataclass
class InferenceSettings:
    k: object = "auto"
    method: str = "sod"
    k_max: int = DEFAULT_K_MAX
    restarts: int = DEFAULT_RESTARTS

    def __post_init__(self):
        if self.k != "auto":
            if isinstance(self.k, bool) or not isinstance(self.k, (int, str)):
                raise ValidationError(f"k must be an integer or 'auto', got {self.k!r}")
            try:
                self.k = int(self.k)
            except ValueError:
                raise ValidationError(f"k must be an integer or 'auto', got {self.k!r}") from None
            if self.k < 1:
                raise ValidationError("k must be >= 1")
        if self.method not in ("sod", "silh"):
            raise ValidationError(f"method must be 'sod' or 'silh', got {self.method!r}")
        if self.k_max < 3 and self.method == "sod":
            raise ValidationError("sod selection needs k_max >= 3")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")


@dataclass
class BaselineSettings:
    schedule: list = field(default_factory=lambda: [["line", 1], ["circle", 1], ["ellipse", 2]])
    threshold: float = 0.1
    iters: int = 200

    def __post_init__(self):
        try:
            self.schedule = [[str(k), int(c)] for k, c in self.schedule]
        except (TypeError, ValueError):
            raise ValidationError("schedule must be a list of [kind, count] pairs") from None


SECTIONS = {
    "network": NetworkConfig,
    "train": TrainConfig,
    "scene": SceneSpec,
    "inference": InferenceSettings,
    "baseline": BaselineSettings,
}


def _section(cls, obj):
    unknown = set(obj) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


@dataclass
class RunConfig:
    """Everything a command needs; sections mirror the module configs."""

    seed: int | None = None
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    inference: InferenceSettings = field(default_factory=InferenceSettings)
    baseline: BaselineSettings = field(default_factory=BaselineSettings)

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(obj) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, cls_ in SECTIONS.items():
            sub = obj.get(name, {})
            if not isinstance(sub, dict):
                raise ValidationError(f"config section {name!r} must be an object")
            kwargs[name] = _section(cls_, sub)
        seed = obj.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
            raise ValidationError("seed must be an integer")
        return cls(seed=seed, **kwargs)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(obj)

    def to_dict(self):
        return {
            "seed": self.seed,
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "scene": self.scene.to_dict(),
            "inference": asdict(self.inference),
            "baseline": asdict(self.baseline),
        }

    def replace(self, section, **changes):
        """Rebuild one section with overrides so its validation runs again."""
        current = getattr(self, section)
        data = current.to_dict() if hasattr(current, "to_dict") else asdict(current)
        data.update(changes)
        setattr(self, section, _section(SECTIONS[section], data))


# --- helpers ------------------------------------------------------------------


def _fresh_dir(path):
    path = Path(path)
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise ValidationError(f"output directory {path} exists and is not empty")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(out, cfg, command, argv):
    payload = {"command": command, "argv": list(argv), "config": cfg.to_dict()}
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _apply_overrides(cfg, args):
    if cfg.seed is not None or getattr(args, "seed", None) is not None:
        seed = args.seed if getattr(args, "seed", None) is not None else cfg.seed
        cfg.seed = seed
        cfg.replace("network", seed=seed)
        cfg.replace("train", seed=seed)
        cfg.replace("scene", seed=seed)
    net = {}
    for flag, key in (("depth", "num_blocks"), ("width", "hidden_width"),
                      ("embed_dim", "output_dim")):
        if getattr(args, flag, None) is not None:
            net[key] = getattr(args, flag)
    if getattr(args, "no_l2norm", False):
        net["use_l2norm_output"] = False
    if net:
        cfg.replace("network", **net)
    tr = {}
    for flag, key in (("loss", "loss"), ("epochs", "epochs"), ("label_fraction", "label_fraction"),
                      ("lr", "learning_rate"), ("checkpoint_every", "checkpoint_every")):
        if getattr(args, flag, None) is not None:
            tr[key] = getattr(args, flag)
    if tr:
        cfg.replace("train", **tr)
    inf = {}
    for flag in ("k", "method", "k_max", "restarts"):
        if getattr(args, flag, None) is not None:
            inf[flag] = getattr(args, flag)
    if inf:
        cfg.replace("inference", **inf)
    base = {}
    if getattr(args, "schedule", None) is not None:
        base["schedule"] = _parse_schedule(args.schedule)
    for flag in ("threshold", "iters"):
        if getattr(args, flag, None) is not None:
            base[flag] = getattr(args, flag)
    if base:
        cfg.replace("baseline", **base)
    return cfg


def _parse_schedule(text):
    out = []
    for item in text.split(","):
        kind, _, count = item.strip().partition(":")
        try:
            out.append([kind, int(count or 1)])
        except ValueError:
            raise ValidationError(f"bad schedule entry {item!r}; use kind:count") from None
    return out


def _load_instances(args):
    if getattr(args, "instance", None):
        return [read_instance(p) for p in args.instance]
    if getattr(args, "data", None):
        return list(read_dataset(args.data, args.split))
    raise ValidationError("give --instance FILE or --data DIR")


def _with_input_dim(cfg, instances):
    dims = {inst.dim for inst in instances}
    if len(dims) != 1:
        raise ValidationError(f"instances disagree on dimension: {sorted(dims)}")
    cfg.replace("network", input_dim=dims.pop())
    return cfg


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def _instance_seed(base, split_index, i):
    return int(np.random.SeedSequence([base, split_index, i]).generate_state(1)[0])


# --- commands -----------------------------------------------------------------


def cmd_gen(args, cfg, out):
    counts = {"train": args.count, "val": args.val, "test": args.test}
    base = cfg.seed if cfg.seed is not None else cfg.scene.seed
    splits = {}
    for s_idx, split in enumerate(SPLITS):
        items = []
        for i in range(counts[split]):
            spec = SceneSpec.from_dict({**cfg.scene.to_dict(), "seed": _instance_seed(base, s_idx, i)})
            try:
                inst, _ = generate_scene(spec, name=f"{split}_{i:05d}")
            except GenerationError as exc:
                raise GenerationError(f"{split} instance {i}: {exc}") from exc
            items.append(inst)
        if items:
            splits[split] = items
    if not splits:
        raise ValidationError("nothing to generate; give --count, --val or --test")
    write_dataset(out / "data", splits)
    log.info("wrote %s", ", ".join(f"{k}={len(v)}" for k, v in splits.items()))


def cmd_train(args, cfg, out):
    instances = list(read_dataset(args.data, "train"))
    _with_input_dim(cfg, instances)
    val = None
    if (Path(args.data) / "manifest.json").exists() and read_manifest(args.data)["val"]:
        val = list(read_dataset(args.data, "val"))
    ckpt_dir = out / "checkpoints"
    params, trainlog = train(instances, cfg.network, cfg.train, val_dataset=val,
                             checkpoint_dir=ckpt_dir, resume_from=args.resume)
    final = ckpt_dir / f"epoch_{cfg.train.epochs:04d}.ckpt"
    shutil.copyfile(final, out / "model.ckpt")
    (out / "trainlog.csv").write_text(trainlog.to_csv())


def _load_model(args, cfg):
    params, header, _ = load_checkpoint(args.checkpoint)
    cfg.replace("network", **params.config.to_dict())
    return params


def cmd_cluster(args, cfg, out):
    params = _load_model(args, cfg)
    inf = cfg.inference
    (out / "pred").mkdir()
    (out / "embeddings").mkdir()
    for i, inst in enumerate(_load_instances(args)):
        if inst.dim != params.config.input_dim:
            raise ValidationError(
                f"{inst.name}: D={inst.dim} but the model expects {params.config.input_dim}")
        z = embed(inst.points, params)
        k_max = min(inf.k_max, inst.n_points)
        record = {"name": inst.name, "method": None}
        if inf.k == "auto":
            if inf.method == "sod":
                curve = residual_curve(z, k_max, inf.restarts, seed=[params.config.seed, i])
                k = select_k_sod(curve)
                record["curve"] = curve.r.tolist()
            else:
                k = select_k_silhouette(z, k_max, inf.restarts, seed=[params.config.seed, i])
            record["method"] = inf.method
        else:
            k = inf.k
        res = kmeans(z, k, inf.restarts, seed=[params.config.seed, i, k])
        record.update(k=int(k), **res.to_dict())
        _write_json(out / "pred" / f"{inst.name}.json", record)
        np.savetxt(out / "embeddings" / f"{inst.name}.csv", z.T, delimiter=",", fmt="%.17g")


def _read_predictions(pred_dir):
    pred_dir = Path(pred_dir)
    if (pred_dir / "pred").is_dir():
        pred_dir = pred_dir / "pred"
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    preds = {}
    for path in sorted(pred_dir.glob("*.json")):
        obj = json.loads(path.read_text())
        if "assignments" not in obj:
            raise InstanceFormatError("assignments", f"{path} has no assignments")
        preds[obj.get("name", path.stem)] = np.asarray(obj["assignments"])
    return preds


def cmd_eval(args, cfg, out):
    preds = _read_predictions(args.pred)
    reports = {}
    for inst in read_dataset(args.data, args.split):
        if inst.name not in preds:
            raise ValidationError(f"no prediction for instance {inst.name}")
        reports[inst.name] = evaluate(preds[inst.name], inst.labels)
    (out / "metrics.csv").write_text(report_table(reports))


def cmd_baseline(args, cfg, out):
    b = cfg.baseline
    schedule = [tuple(s) for s in b.schedule]
    (out / "pred").mkdir()
    for i, inst in enumerate(_load_instances(args)):
        base = cfg.seed if cfg.seed is not None else 0
        try:
            labels = sequential_fit(inst, schedule, b.threshold, b.iters, seed=[base, i])
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        _write_json(out / "pred" / f"{inst.name}.json",
                    {"name": inst.name, "assignments": labels.tolist(),
                     "k": int(labels.max()) + 1, "method": "sequential"})


def cmd_loocv(args, cfg, out):
    instances = list(read_dataset(args.data, args.split))
    _with_input_dim(cfg, instances)
    reports = loocv(instances, cfg.network, cfg.train, restarts=cfg.inference.restarts)
    (out / "metrics.csv").write_text(report_table(reports))


def cmd_curve(args, cfg, out):
    params = _load_model(args, cfg)
    inf = cfg.inference
    for i, inst in enumerate(_load_instances(args)):
        z = embed(inst.points, params)
        k_max = min(inf.k_max, inst.n_points - 1)
        curve = residual_curve(z, k_max, inf.restarts, seed=[params.config.seed, i])
        sod = sod_scores(curve) if k_max >= 3 else None
        lines = ["K,r,r_raw,sod,silhouette"]
        for k in range(1, k_max + 1):
            s = ""
            if sod is not None and 2 <= k <= k_max - 1:
                s = repr(float(sod[k - 2]))
            sil = ""
            if k >= 2:
                labels = kmeans(z, k, inf.restarts, seed=[params.config.seed, i, k]).assignments
                sil = repr(silhouette(z, labels))
            lines.append(f"{k},{float(curve[k])!r},{float(curve.raw[k - 1])!r},{s},{sil}")
        (out / f"{inst.name}_curve.csv").write_text("\n".join(lines) + "\n")


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "loocv": cmd_loocv,
    "curve": cmd_curve,
}


# --- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _k_arg(text):
    return text if text == "auto" else int(text)


def build_parser():
    parser = _Parser(prog="subspacenet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="run configuration JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, required=True, help="fresh output directory")

    def network_flags(p):
        p.add_argument("--depth", type=int, help="number of residual blocks")
        p.add_argument("--width", type=int, help="hidden width")
        p.add_argument("--embed-dim", type=int)
        p.add_argument("--no-l2norm", action="store_true",
                       help="skip the column L2 normalization of the output")

    def train_flags(p):
        p.add_argument("--loss")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--label-fraction", type=float)

    def inputs(p):
        p.add_argument("--instance", type=Path, nargs="+")
        p.add_argument("--data", type=Path)
        p.add_argument("--split", default="test", choices=SPLITS)

    def inference_flags(p):
        p.add_argument("--k", type=_k_arg, help="cluster count or 'auto'")
        p.add_argument("--method", choices=("sod", "silh"))
        p.add_argument("--k-max", type=int)
        p.add_argument("--restarts", type=int)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--spec", type=Path, help="scene JSON, overrides the config's scene")
    p.add_argument("--count", type=int, default=0, help="training instances")
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--test", type=int, default=0)

    p = sub.add_parser("train", help="train an embedding network")
    common(p)
    network_flags(p)
    train_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int)

    p = sub.add_parser("cluster", help="embed and cluster instances")
    common(p)
    inputs(p)
    inference_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", choices=SPLITS)

    p = sub.add_parser("baseline", help="sequential RANSAC multi-type fitting")
    common(p)
    inputs(p)
    p.add_argument("--schedule", help="e.g. line:1,circle:1,ellipse:2")
    p.add_argument("--threshold", type=float)
    p.add_argument("--iters", type=int)

    p = sub.add_parser("loocv", help="leave-one-out training and evaluation")
    common(p)
    network_flags(p)
    train_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="train", choices=SPLITS)
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("curve", help="export residual, SOD and silhouette curves")
    common(p)
    inputs(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--k-max", type=int)
    p.add_argument("--restarts", type=int)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = RunConfig.load(args.config)
        if getattr(args, "spec", None) is not None:
            cfg.scene = SceneSpec.from_json(args.spec)
        _apply_overrides(cfg, args)
        out = _fresh_dir(args.out)
        _echo_config(out, cfg, args.command, argv)
        COMMANDS[args.command](args, cfg, out)
        _echo_config(out, cfg, args.command, argv)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, FitError, GenerationError, FloatingPointError,
            np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
