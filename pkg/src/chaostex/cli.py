"""Command-line entry point: ``chaostex <subcommand> [options]``.

Every knob is a dotted config key.  Values come from the built-in defaults,
then an optional ``key = value`` config file, then ``--set key=value`` and
the shortcut flags (``--seed``, ``--out``, ``--jobs``), later sources
winning.  Each run writes its resolved configuration to
``<out_dir>/resolved_config.cfg``; passing that file back with ``--config``
replays the run.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .autograd import Tensor, grad_check, primitive_errors, save_checkpoint
from .data import LabeledDataset, SynthSpec, gen_synthetic_textures, load_image_folder, save_image_folder
from .dynamics import ChaoticMapSpec, orbit_stats
from .evaluation import (
    F1_AVERAGING,
    ConfusionMatrix,
    ablate_maps,
    format_metric,
    linear_probe,
    write_confusion_csv,
    write_confusion_ppm,
)
from .imaging import IMAGE_SUFFIXES, AugmentConfig, image_rng, make_view_pair, read_image, write_image
from .network import init_projector, load_encoder, projector_forward, save_encoder, encoder_forward
from .training import (
    FinetuneConfig,
    NumericalError,
    PretrainConfig,
    finetune,
    init_chaos_encoder,
    nt_xent,
    pretrain,
)

log = logging.getLogger("chaostex")

SNAPSHOT = "resolved_config.cfg"
METRIC_COLUMNS = ("epoch", "split", "loss", "accuracy", "macro_f1")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config keys

def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _opt_float(s: str) -> float | None:
    return None if s.strip() == "" else float(s)


def _k_choice(s: str) -> str | int:
    s = s.strip()
    if s == "random":
        return s
    k = int(s)
    if k < 0:
        raise ValueError(s)
    return k


@dataclass(frozen=True)
class Key:
    name: str
    default: str
    parse: Callable[[str], object]
    help: str


_KEYS = [
    Key("seed", "7", int, "global seed; every random stream derives from it"),
    Key("out_dir", "runs/chaostex", str, "output directory"),
    Key("jobs", "1", int, "maximum worker processes"),
    # data
    Key("data.source", "synthetic", str, "'synthetic' or a class-per-subdirectory image folder"),
    Key("data.n_classes", "5", int, "synthetic: number of classes"),
    Key("data.n_per_class", "40", int, "synthetic: images per class"),
    Key("data.size", "32", int, "synthetic: image side in pixels"),
    Key("data.orientation_jitter_deg", "10.0", float, "synthetic: orientation jitter (degrees)"),
    Key("data.contrast_min", "0.1", float, "synthetic: lowest per-image contrast"),
    Key("data.contrast_max", "1.0", float, "synthetic: highest per-image contrast"),
    Key("data.mean_min", "0.15", float, "synthetic: lowest per-image mean brightness"),
    Key("data.mean_max", "0.85", float, "synthetic: highest per-image mean brightness"),
    Key("data.gamma_min", repr(1.0 / 3.0), float, "synthetic: lowest gamma (log-uniform)"),
    Key("data.gamma_max", "3.0", float, "synthetic: highest gamma (log-uniform)"),
    Key("data.noise_std", "0.1", float, "synthetic: additive pixel noise std"),
    # augmentation
    Key("augment.map", "sine", str, "chaotic map: logistic, tent or sine"),
    Key("augment.map_param", "", _opt_float, "map parameter r/mu; empty = map default"),
    Key("augment.k_min", "1", int, "fewest chaotic iterations"),
    Key("augment.k_max", "5", int, "most chaotic iterations"),
    Key("augment.crop_size", "28", int, "random/center crop side"),
    Key("augment.flip_prob", "0.5", float, "horizontal flip probability"),
    Key("augment.input", "", str, "augment: image file or folder; empty = synthetic corpus"),
    Key("augment.k", "random", _k_choice, "augment: fixed iteration count, or 'random' for k_min..k_max"),
    Key("augment.n_images", "8", int, "augment: number of images to transform"),
    # pretraining
    Key("pretrain.tau", "0.5", float, "NT-Xent temperature"),
    Key("pretrain.batch_size", "32", int, "source images per batch"),
    Key("pretrain.epochs", "15", int, "pretraining epochs"),
    Key("pretrain.lr_encoder", "0.01", float, "encoder learning rate"),
    Key("pretrain.lr_projector", "0.01", float, "projector learning rate"),
    Key("pretrain.weight_decay", "0.01", float, "AdamW decoupled weight decay"),
    Key("pretrain.proj_dim", "32", int, "projector output width"),
    # fine-tuning
    Key("finetune.encoder", "", str, "chaos encoder checkpoint; empty = pretrain within the run"),
    Key("finetune.branches", "both", str, "both, sup or chaos"),
    Key("finetune.lr_head", "0.01", float, "SE block + classifier learning rate"),
    Key("finetune.lr_backbone", "0.001", float, "backbone learning rate"),
    Key("finetune.epochs", "20", int, "ensemble training epochs"),
    Key("finetune.folds", "4", int, "cross-validation folds"),
    Key("finetune.batch_size", "32", int, "images per batch"),
    Key("finetune.weight_decay", "0.01", float, "AdamW decoupled weight decay"),
    Key("finetune.se_ratio", "4", int, "SE reduction ratio"),
    Key("finetune.sup_epochs", "20", int, "supervised backbone epochs"),
    Key("finetune.sup_lr", "0.003", float, "supervised backbone learning rate"),
    # probing and ablation
    Key("probe.encoder", "", str, "encoder checkpoint; empty = pretrain within the run"),
    Key("probe.folds", "4", int, "cross-validation folds"),
    Key("probe.steps", "300", int, "full-batch AdamW steps per fold"),
    Key("probe.lr", "0.05", float, "probe learning rate"),
    Key("probe.weight_decay", "0.01", float, "probe weight decay"),
    Key("ablate.maps", "sine,tent,logistic", _names, "maps to compare"),
    Key("ablate.epochs", "15,30", _ints, "pretraining epoch settings"),
    # dynamics
    Key("dynamics.maps", "logistic,tent,sine", _names, "maps to analyse"),
    Key("dynamics.x0", "0.123", float, "orbit seed point in (0, 1)"),
    Key("dynamics.n_iter", "1000000", int, "orbit length after burn-in"),
    Key("dynamics.burn_in", "1000", int, "discarded transient"),
    Key("dynamics.bins", "20", int, "density histogram bins"),
    # gradient check
    Key("gradcheck.eps", "1e-05", float, "central-difference step"),
    Key("gradcheck.tol", "1e-05", float, "maximum accepted relative error"),
]
KEYS = {k.name: k for k in _KEYS}


class RunConfig(dict):
    """Parsed values by key; ``raw`` keeps the strings for the snapshot."""

    def __init__(self, raw: dict[str, str]):
        super().__init__()
        self.raw = dict(raw)
        for name, text in raw.items():
            try:
                self[name] = KEYS[name].parse(text)
            except ValueError:
                raise UsageError(f"invalid value for {name}: {text!r}") from None

    def snapshot(self, subcommand: str) -> str:
        lines = [f"# chaostex {__version__} {subcommand}"]
        lines += [f"{k} = {self.raw[k]}" for k in sorted(self.raw)]
        return "\n".join(lines) + "\n"


def _check_key(name: str, where: str) -> None:
    if name not in KEYS:
        raise UsageError(f"unknown config key {name!r} ({where})")


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        _check_key(key, f"{path}:{n}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw = {k.name: k.default for k in _KEYS}
    if args.config:
        raw.update(read_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        _check_key(key, "--set")
        raw[key] = value
    shortcuts = (("seed", "seed"), ("out", "out_dir"), ("jobs", "jobs"), ("input", "augment.input"),
                 ("map", "augment.map"), ("k", "augment.k"), ("classes", "data.n_classes"),
                 ("per_class", "data.n_per_class"), ("size", "data.size"))
    for flag, key in shortcuts:
        if getattr(args, flag, None) is not None:
            raw[key] = str(getattr(args, flag))
    return RunConfig(raw)


# ---------------------------------------------------------------------------
# config -> module objects

def map_spec(cfg: RunConfig, name: str | None = None) -> ChaoticMapSpec:
    if name is not None:
        return ChaoticMapSpec.from_name(name)
    return ChaoticMapSpec.from_name(cfg["augment.map"], cfg["augment.map_param"])


def synth_spec(cfg: RunConfig) -> SynthSpec:
    return SynthSpec(
        n_classes=cfg["data.n_classes"],
        n_per_class=cfg["data.n_per_class"],
        size=cfg["data.size"],
        seed=cfg["seed"],
        orientation_jitter=math.radians(cfg["data.orientation_jitter_deg"]),
        contrast_range=(cfg["data.contrast_min"], cfg["data.contrast_max"]),
        mean_range=(cfg["data.mean_min"], cfg["data.mean_max"]),
        gamma_range=(cfg["data.gamma_min"], cfg["data.gamma_max"]),
        noise_std=cfg["data.noise_std"],
    )


def augment_cfg(cfg: RunConfig) -> AugmentConfig:
    return AugmentConfig(
        cfg["augment.k_min"], cfg["augment.k_max"], cfg["augment.crop_size"], cfg["augment.flip_prob"], map_spec(cfg)
    )


def pretrain_cfg(cfg: RunConfig) -> PretrainConfig:
    return PretrainConfig(
        tau=cfg["pretrain.tau"],
        batch_size=cfg["pretrain.batch_size"],
        epochs=cfg["pretrain.epochs"],
        lr_encoder=cfg["pretrain.lr_encoder"],
        lr_projector=cfg["pretrain.lr_projector"],
        weight_decay=cfg["pretrain.weight_decay"],
        map=map_spec(cfg),
        k_min=cfg["augment.k_min"],
        k_max=cfg["augment.k_max"],
        crop_size=cfg["augment.crop_size"],
        flip_prob=cfg["augment.flip_prob"],
        proj_dim=cfg["pretrain.proj_dim"],
        seed=cfg["seed"],
    )


def finetune_cfg(cfg: RunConfig) -> FinetuneConfig:
    return FinetuneConfig(
        lr_head=cfg["finetune.lr_head"],
        lr_backbone=cfg["finetune.lr_backbone"],
        epochs=cfg["finetune.epochs"],
        folds=cfg["finetune.folds"],
        batch_size=cfg["finetune.batch_size"],
        weight_decay=cfg["finetune.weight_decay"],
        se_ratio=cfg["finetune.se_ratio"],
        sup_epochs=cfg["finetune.sup_epochs"],
        sup_lr=cfg["finetune.sup_lr"],
        crop_size=cfg["augment.crop_size"],
        flip_prob=cfg["augment.flip_prob"],
        seed=cfg["seed"],
    )


def _validate(cfg: RunConfig) -> None:
    """Build every module config once so bad values surface as usage errors."""
    try:
        synth_spec(cfg)
        augment_cfg(cfg)
        pretrain_cfg(cfg)
        finetune_cfg(cfg)
        for name in (*cfg["ablate.maps"], *cfg["dynamics.maps"]):
            ChaoticMapSpec.from_name(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if cfg["finetune.branches"] not in ("both", "sup", "chaos"):
        raise UsageError(f"finetune.branches must be both, sup or chaos, got {cfg['finetune.branches']!r}")
    if cfg["jobs"] < 1:
        raise UsageError("jobs must be >= 1")


def load_dataset(cfg: RunConfig) -> LabeledDataset:
    src = cfg["data.source"]
    if src == "synthetic":
        return gen_synthetic_textures(synth_spec(cfg))
    return load_image_folder(src)


# ---------------------------------------------------------------------------
# output helpers

class Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, cfg: RunConfig, subcommand: str):
        self.cfg = cfg
        self.out = Path(cfg["out_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.summary: dict = {}
        self.write_text(SNAPSHOT, cfg.snapshot(subcommand))

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header, rows) -> None:
        with self.path(name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def write_metrics(self, rows) -> None:
        self.write_csv("metrics.csv", METRIC_COLUMNS, [[_cell(v) for v in r] for r in rows])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _pretrain_rows(losses) -> list[tuple]:
    return [(e + 1, "pretrain", loss, None, None) for e, loss in enumerate(losses)]


def _pretrain_within(run: Run, ds: LabeledDataset, pcfg: PretrainConfig):
    res = pretrain(ds, pcfg)
    save_encoder(run.path("encoder.ctex"), res.encoder, {"epochs": str(pcfg.epochs), "map": pcfg.map.name})
    run.write_csv("pretrain_batches.csv", ("epoch", "batch", "loss"), [(e + 1, b, repr(v)) for e, b, v in res.batch_losses])
    return res


# ---------------------------------------------------------------------------
# subcommands

def cmd_analyze_maps(run: Run) -> None:
    cfg = run.cfg
    bins = cfg["dynamics.bins"]
    rows, summary = [], {}
    for name in cfg["dynamics.maps"]:
        spec = ChaoticMapSpec.from_name(name)
        st = orbit_stats(spec, cfg["dynamics.x0"], cfg["dynamics.n_iter"], bins, cfg["dynamics.burn_in"])
        rows.append([spec.kind.value, repr(spec.param), repr(st.lyapunov), *(repr(float(d)) for d in st.density)])
        summary[spec.kind.value] = {"param": spec.param, "lyapunov": st.lyapunov}
        print(f"{spec.kind.value:9s} param={spec.param:<5g} lyapunov={st.lyapunov:.6f}")
    run.write_csv("maps.csv", ["map", "param", "lyapunov", *(f"bin_{i}" for i in range(bins))], rows)
    run.summary = summary


def cmd_augment(run: Run) -> None:
    cfg = run.cfg
    aug = augment_cfg(cfg)
    if cfg["augment.k"] != "random":
        aug = AugmentConfig(cfg["augment.k"], cfg["augment.k"], aug.crop_size, aug.flip_prob, aug.map)
    src = cfg["augment.input"]
    if not src:
        ds = load_dataset(cfg)
        images = ds.images
    else:
        p = Path(src)
        if p.is_file():
            files = [p]
        elif p.is_dir():
            files = sorted(f for f in p.rglob("*") if f.suffix.lower() in IMAGE_SUFFIXES)
        else:
            raise FileNotFoundError(f"augment input not found: {p}")
        images = [read_image(f) for f in files]
    images = images[: cfg["augment.n_images"]]
    (run.out / "views").mkdir(exist_ok=True)
    rows = []
    for i, img in enumerate(images):
        pair = make_view_pair(img, image_rng(cfg["seed"], i, 2, 0), aug)
        write_image(run.path(f"views/{i:05d}_i.png"), pair.view_i)
        write_image(run.path(f"views/{i:05d}_j.png"), pair.view_j)
        rows.append((i, pair.k))
    run.write_csv("views.csv", ("index", "k"), rows)
    run.summary = {"images": len(images), "map": aug.map.name}
    print(f"wrote {len(images)} view pairs to {run.out / 'views'}")


def cmd_gen_data(run: Run) -> None:
    ds = load_dataset(run.cfg)
    manifest = save_image_folder(ds, run.out / "data")
    run.outputs.append("data/")
    run.outputs.append("data/manifest.csv")
    run.summary = {"images": len(ds), "classes": ds.class_names}
    print(f"wrote {len(ds)} images in {ds.n_classes} classes; manifest {manifest}")


def cmd_pretrain(run: Run) -> None:
    ds = load_dataset(run.cfg)
    pcfg = pretrain_cfg(run.cfg)
    res = _pretrain_within(run, ds, pcfg)
    run.write_metrics(_pretrain_rows(res.epoch_losses))
    run.summary = {"epochs": pcfg.epochs, "map": pcfg.map.name, "final_loss": res.epoch_losses[-1] if res.epoch_losses else None}
    for e, loss in enumerate(res.epoch_losses, 1):
        print(f"epoch {e:3d} loss {format_metric(loss)}")


def _chaos_encoder(run: Run, ds: LabeledDataset, path: str, rows: list):
    if path:
        return load_encoder(path, expect_in_channels=ds.channels), None
    pcfg = pretrain_cfg(run.cfg)
    res = _pretrain_within(run, ds, pcfg)
    rows.extend(_pretrain_rows(res.epoch_losses))
    return res.encoder, pcfg.epochs


def cmd_finetune(run: Run) -> None:
    cfg = run.cfg
    ds = load_dataset(cfg)
    fcfg = finetune_cfg(cfg)
    rows: list = []
    branches = cfg["finetune.branches"]
    chaos = None
    if branches != "sup":
        chaos, _ = _chaos_encoder(run, ds, cfg["finetune.encoder"], rows)
    res = finetune(ds, chaos, fcfg, branches=branches, jobs=cfg["jobs"])
    total = np.zeros((ds.n_classes, ds.n_classes), dtype=np.int64)
    for fold, model in zip(res.folds, res.models):
        rows += [(e + 1, f"train/fold{fold.fold}", loss, None, None) for e, loss in enumerate(fold.train_losses)]
        rows.append((fcfg.epochs, f"val/fold{fold.fold}", None, fold.accuracy, fold.macro_f1))
        total += fold.confusion
        tensors = {**model.head_tensors(), **model.backbone_tensors()}
        save_checkpoint(run.path(f"model_fold{fold.fold}.ctex"), tensors, {"kind": "ensemble", "branches": branches})
    run.write_metrics(rows)
    cm = ConfusionMatrix(total)
    write_confusion_csv(run.path("confusion.csv"), cm, ds.class_names)
    write_confusion_ppm(run.path("confusion.ppm"), cm)
    run.summary = {**res.summary(), "branches": branches, "f1_averaging": F1_AVERAGING}
    print(f"{branches}: accuracy {format_metric(res.summary()['mean_accuracy'])} "
          f"+/- {format_metric(res.summary()['std_accuracy'])}, "
          f"macro F1 {format_metric(res.summary()['mean_macro_f1'])}")


def cmd_probe(run: Run) -> None:
    cfg = run.cfg
    ds = load_dataset(cfg)
    rows: list = []
    enc, epochs = _chaos_encoder(run, ds, cfg["probe.encoder"], rows)
    kw = dict(
        folds=cfg["probe.folds"],
        seed=cfg["seed"],
        crop_size=cfg["augment.crop_size"],
        steps=cfg["probe.steps"],
        lr=cfg["probe.lr"],
        weight_decay=cfg["probe.weight_decay"],
    )
    results = {"random": linear_probe(init_chaos_encoder(ds.channels, pretrain_cfg(cfg)), ds, **kw)}
    results["pretrained"] = linear_probe(enc, ds, **kw)
    for name, r in results.items():
        for f, (a, f1) in enumerate(zip(r.fold_accuracies, r.fold_f1s)):
            rows.append((epochs if name == "pretrained" else 0, f"probe/{name}/fold{f}", None, float(a), float(f1)))
        print(f"{name:10s} accuracy {format_metric(r.mean)} +/- {format_metric(r.std)}  macro F1 {format_metric(r.mean_f1)}")
    run.write_metrics(rows)
    run.summary = {
        name: {"mean_accuracy": r.mean, "std_accuracy": r.std, "mean_macro_f1": r.mean_f1} for name, r in results.items()
    }
    run.summary["gain_points"] = 100 * (results["pretrained"].mean - results["random"].mean)


def cmd_ablate(run: Run) -> None:
    cfg = run.cfg
    ds = load_dataset(cfg)
    res = ablate_maps(
        ds,
        pretrain_cfg(cfg),
        maps=cfg["ablate.maps"],
        epochs=cfg["ablate.epochs"],
        probe_folds=cfg["probe.folds"],
        probe_steps=cfg["probe.steps"],
    )
    res.write_csv(run.path("ablation.csv"))
    run.write_metrics(
        [(r.epochs, f"probe/{r.map}", None, r.accuracy, r.macro_f1) for r in res.rows]
        + [(0, "probe/random-init", None, res.baseline.mean, res.baseline.mean_f1)]
    )
    run.summary = {"ordering": res.ordering(), "baseline": res.baseline.mean}
    print((run.out / "ablation.csv").read_text(), end="")
    for line in res.ordering():
        print(line)


def cmd_gradcheck(run: Run) -> None:
    cfg = run.cfg
    errors = primitive_errors(cfg["seed"], cfg["gradcheck.eps"])
    errors["encoder+projector+nt_xent"] = _composite_error(cfg["seed"], cfg["gradcheck.eps"])
    tol = cfg["gradcheck.tol"]
    rows = []
    for name, err in errors.items():
        status = "ok" if err <= tol else "FAIL"
        rows.append((name, repr(err), status))
        print(f"{name:26s} {err:.3e} {status}")
    run.write_csv("gradcheck.csv", ("primitive", "max_rel_error", "status"), rows)
    bad = [n for n, e in errors.items() if e > tol]
    run.summary = {"max_error": max(errors.values()), "tolerance": tol, "failed": bad}
    if bad:
        raise RuntimeError(f"gradient check failed for: {', '.join(bad)}")


def _composite_error(seed: int, eps: float) -> float:
    """Encoder -> projector -> NT-Xent, checked w.r.t. the first conv weight."""
    from .network import init_encoder

    rng = np.random.default_rng([seed, 0x6C])
    enc = init_encoder(1, (3, 4), rng, dtype=np.float64)
    proj = init_projector(4, 6, 5, rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(4, 1, 8, 8)))
    w0 = enc.weights["stage0.weight"]

    def f(w):
        enc.weights["stage0.weight"] = w
        return nt_xent(projector_forward(encoder_forward(x, enc), proj), 0.5)

    err = grad_check(f, w0, eps)
    enc.weights["stage0.weight"] = w0
    return err


COMMANDS = {
    "analyze-maps": (cmd_analyze_maps, "Lyapunov exponents and invariant densities of the chaotic maps"),
    "augment": (cmd_augment, "write chaotic view pairs for a few images"),
    "gen-data": (cmd_gen_data, "write the synthetic texture corpus as a PNG folder tree"),
    "pretrain": (cmd_pretrain, "chaotic contrastive pretraining of the small encoder"),
    "finetune": (cmd_finetune, "k-fold SE-ensemble fine-tuning"),
    "probe": (cmd_probe, "linear probe of a pretrained encoder against random init"),
    "ablate": (cmd_ablate, "map x epochs ablation grid"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every autograd primitive"),
}


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _keys_help() -> str:
    width = max(len(k.name) for k in _KEYS)
    lines = ["config keys (default in brackets):"]
    for k in _KEYS:
        lines.append(f"  {k.name:<{width}}  {k.help} [{k.default}]")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chaostex", description="Chaotic-augmentation contrastive texture learning.")
    p.add_argument("--version", action="version", version=f"chaostex {__version__}")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(
            name,
            help=help_text,
            description=help_text,
            epilog=_keys_help(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sp.add_argument("--config", help="key = value file; '#' starts a comment")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key (repeatable)")
        sp.add_argument("--seed", type=int, help="shortcut for --set seed=N")
        sp.add_argument("--out", help="shortcut for --set out_dir=PATH")
        sp.add_argument("--jobs", type=int, help="shortcut for --set jobs=N")
        if name == "augment":
            sp.add_argument("--in", dest="input", help="shortcut for --set augment.input=PATH")
            sp.add_argument("--map", help="shortcut for --set augment.map=NAME")
            sp.add_argument("--k", help="shortcut for --set augment.k=N|random")
        if name == "gen-data":
            sp.add_argument("--classes", type=int, help="shortcut for --set data.n_classes=N")
            sp.add_argument("--per-class", type=int, help="shortcut for --set data.n_per_class=N")
            sp.add_argument("--size", type=int, help="shortcut for --set data.size=N")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        _validate(cfg)
    except UsageError as exc:
        print(f"chaostex {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"chaostex {args.command}: error: {exc}", file=sys.stderr)
        return 2

    start = time.perf_counter()
    run = None
    status, code, message = "ok", 0, None
    try:
        run = Run(cfg, args.command)
        COMMANDS[args.command][0](run)
    except Exception as exc:  # reported through the exit code and run_summary.json
        status, code, message = "error", 2, f"{type(exc).__name__}: {exc}"
        if isinstance(exc, NumericalError) and run is not None:
            run.write_json("numerical_error.json", exc.diagnostics)
        print(f"chaostex {args.command}: error: {message}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
    if run is not None:
        if status == "ok":
            run.write_json("summary.json", run.summary)
        report = {
            "command": args.command,
            "status": status,
            "error": message,
            "wall_time_s": time.perf_counter() - start,
            "version": __version__,
            "outputs": sorted(set(run.outputs)),
        }
        (run.out / "run_summary.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
