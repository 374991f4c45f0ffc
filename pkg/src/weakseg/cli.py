"""Command line entry point: ``weakseg <subcommand>``.

The ``pipeline`` subcommand runs the whole refinement framework on a dataset
directory: train the Myopic model on weak masks, shrink the weak masks, train
the Macro branch on the result, predict the test split (optionally fused with
the darkness map) and score it.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import typing
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .fusion import DarknessConfig, darkness_map, fuse
from .macro import MacroParams, MacroTrainConfig, export_probmap, infer_padded, pad_to_multiple, train_macro
from .metrics import EvalReport, default_grid, iou, ods, sens_spec
from .myopic import MyopicParams, MyopicTrainConfig, myopic_forward, train_myopic
from .shrink import ShrinkConfig, refine_annotation
from .weaksynth import SynthConfig, SynthesisFailed, ToyConfig, bright_crack_preset, gen_toy_sample, synthesize_weak

log = logging.getLogger("weakseg")


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthConfig = SynthConfig()
    myopic: MyopicTrainConfig = MyopicTrainConfig()
    shrink: ShrinkConfig = ShrinkConfig()
    macro: MacroTrainConfig = MacroTrainConfig()
    darkness: DarknessConfig = DarknessConfig()
    use_micro: bool = True
    macro_source: str = "builtin"
    grid_step: float = 0.01
    out: str = "run"
    seed: int = 0

    def __post_init__(self):
        if self.macro_source not in ("builtin", "import"):
            raise ValueError("macro_source must be 'builtin' or 'import'")
        if not 0 < self.grid_step < 0.5:
            raise ValueError("grid_step must be in (0, 0.5)")

    def seeded(self) -> "PipelineConfig":
        """Push the top-level seed into every stage."""
        r = dataclasses.replace
        return r(self, synth=r(self.synth, seed=self.seed), myopic=r(self.myopic, seed=self.seed),
                 macro=r(self.macro, seed=self.seed))


def _coerce(tp, value, where: str):
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ValueError(f"{where}: expected an object")
        return from_dict(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{where}: expected a list")
        return tuple(value)
    if origin is typing.Union or str(origin) == "types.UnionType":
        if value is None:
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if tp is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ValueError(f"{where}: expected a string")
        return value
    return value


def from_dict(cls, data: dict, where: str = "config"):
    """Build a (nested) config dataclass; missing keys take their defaults."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path) -> PipelineConfig:
    data = json.loads(Path(path).read_text()) if path else {}
    return from_dict(PipelineConfig, data)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("WEAKSEG_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """Order-preserving map over a thread pool capped by WEAKSEG_THREADS."""
    items = list(items)
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class StageError(RuntimeError):
    def __init__(self, stage: str, sample: str | None, cause: Exception):
        where = f" on {sample!r}" if sample else ""
        super().__init__(f"stage {stage!r} failed{where}: {cause}")
        self.stage, self.sample = stage, sample


def _stage(stage, fn, stems):
    def run(stem):
        try:
            return fn(stem)
        except StageError:
            raise
        except Exception as exc:  # annotate with the sample id
            raise StageError(stage, stem, exc) from exc
    return pmap(run, stems)


# -- subcommands ------------------------------------------------------------


def cmd_make_toy(cfg: ToyConfig, count: int, out_dir, test_count: int = 0) -> io.DatasetLayout:
    layout = io.DatasetLayout(out_dir)
    for sub in (io.IMAGES, io.PRECISE):
        layout.dir(sub).mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(max(count - 1, 0))))
    stems = [f"toy_{i:0{width}d}" for i in range(count)]

    def write(i):
        image, mask = gen_toy_sample(cfg, i)
        try:
            io.write_gray(layout.dir(io.IMAGES) / f"{stems[i]}.png", image)
            io.write_mask(layout.dir(io.PRECISE) / f"{stems[i]}.png", mask)
        except OSError as exc:
            raise OSError(f"writing sample {stems[i]} under {out_dir}: {exc}") from exc

    pmap(write, range(count))
    if test_count:
        layout.write_test_split(stems[count - test_count:])
    return layout


def cmd_gen_weak(layout: io.DatasetLayout, cfg: SynthConfig, stems=None, out_root=None) -> dict:
    """Write masks_weak/ and weak_log.csv under ``out_root`` (default: the dataset).

    Returns {stem: weak mask} for the successes. Each sample's seed is derived
    from its position in the full sorted stem list, so a subset reproduces the
    masks of a full run.
    """
    if not layout.dir(io.PRECISE).is_dir():
        raise FileNotFoundError(f"no {io.PRECISE}/ under {layout.root}")
    position = {s: i for i, s in enumerate(layout.stems())}
    stems = list(position) if stems is None else stems
    out_root = Path(out_root) if out_root is not None else layout.root
    out = out_root / io.WEAK
    out.mkdir(parents=True, exist_ok=True)

    def one(stem):
        precise = layout.mask(io.PRECISE, stem)
        if not precise.any():
            return stem, None, "empty precise mask"
        try:
            res = synthesize_weak(precise, dataclasses.replace(cfg, seed=_sample_seed(cfg.seed, position[stem])))
        except SynthesisFailed as exc:
            return stem, exc.best, str(exc)
        io.write_mask(out / f"{stem}.png", res.weak_mask)
        return stem, res, None

    rows = pmap(one, stems)
    made = {}
    with open(out_root / "weak_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stem", "status", "recall", "alpha", "iterations", "iou", "reason"])
        for stem, res, reason in rows:
            if reason is None:
                made[stem] = res.weak_mask
                w.writerow([stem, "ok", f"{res.achieved_recall:.6f}", f"{res.alpha_used:.6f}",
                            res.iterations, f"{iou(res.weak_mask, layout.mask(io.PRECISE, stem)):.6f}", ""])
            else:
                log.warning("skipping %s: %s", stem, reason)
                w.writerow([stem, "skipped",
                            "" if res is None else f"{res.achieved_recall:.6f}",
                            "" if res is None else f"{res.alpha_used:.6f}",
                            "" if res is None else res.iterations, "", reason])
    return made


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _pad_pair(image, mask):
    h, w = image.shape
    return pad_to_multiple(image), np.pad(mask, ((0, -h % 4), (0, -w % 4)))


def cmd_pipeline(layout: io.DatasetLayout, cfg: PipelineConfig, out_dir=None) -> dict:
    cfg = cfg.seeded()
    out = Path(out_dir or cfg.out)
    for sub in ("refined", "probmaps", "previews", "overlays"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    layout.validate()
    stems = layout.stems()
    test = layout.test_stems()
    if test is None:
        # no split file: last third of the sorted stems is held out
        test = stems[len(stems) - len(stems) // 3:]
    test_set = set(test)
    train = [s for s in stems if s not in test_set]
    if not layout.dir(io.PRECISE).is_dir():
        raise StageError("eval", None, FileNotFoundError("masks_precise/ is required for scoring"))

    manifest = {
        "config": to_dict(cfg),
        "dataset": str(layout.root),
        "train": train,
        "test": test,
        "stages": [],
    }
    images = dict(zip(stems, _stage("load", layout.image, stems)))

    if cfg.macro_source == "builtin":
        if not train:
            raise StageError("train-myopic", None, ValueError("empty training split"))
        if layout.has(io.WEAK):
            weak = dict(zip(train, _stage("load-weak", lambda s: layout.mask(io.WEAK, s), train)))
            manifest["weak_source"] = "disk"
        else:
            weak = cmd_gen_weak(layout, cfg.synth, train, out)
            manifest["weak_source"] = "synthesized"
        used = [s for s in train if s in weak]
        manifest["train_used"] = used

        try:
            myo = train_myopic([images[s] for s in used], [weak[s] for s in used], cfg.myopic)
        except Exception as exc:
            raise StageError("train-myopic", None, exc) from exc
        (out / "myopic.myo").write_bytes(myo.to_bytes())
        manifest["stages"].append("train-myopic")

        def refine(stem):
            r = refine_annotation(weak[stem], myopic_forward(myo, images[stem]), cfg.shrink)
            io.write_mask(out / "refined" / f"{stem}.png", r)
            return r

        refined = dict(zip(used, _stage("refine", refine, used)))
        manifest["stages"].append("refine")

        pairs = [_pad_pair(images[s], refined[s]) for s in used]
        try:
            mac = train_macro([p[0] for p in pairs], [p[1] for p in pairs], cfg.macro)
        except Exception as exc:
            raise StageError("train-macro", None, exc) from exc
        mac.save(out / "macro.npz")
        manifest["stages"].append("train-macro")
        macro_maps = dict(zip(test, _stage("infer", lambda s: infer_padded(mac, images[s]), test)))
    else:
        macro_maps = dict(zip(test, _stage("import", layout.probmap, test)))
        for s in test:
            if macro_maps[s].shape != images[s].shape:
                raise StageError("import", s, ValueError("probability map and image differ in size"))
        manifest["stages"].append("import")

    def final(stem):
        m = macro_maps[stem]
        return fuse(m, darkness_map(images[stem], cfg.darkness)) if cfg.use_micro else m

    finals = dict(zip(test, _stage("fuse" if cfg.use_micro else "infer", final, test)))
    manifest["stages"].append("fuse" if cfg.use_micro else "macro-only")

    gts = dict(zip(test, _stage("load-gt", lambda s: layout.mask(io.PRECISE, s), test)))
    grid = default_grid(cfg.grid_step)
    report = ods([finals[s] for s in test], [gts[s] for s in test], grid)
    macro_report = ods([macro_maps[s] for s in test], [gts[s] for s in test], grid)

    for s in test:
        export_probmap(finals[s], out / "probmaps" / f"{s}.pmap")
        io.write_gray(out / "previews" / f"{s}.png", finals[s])
        io.write_overlay(out / "overlays" / f"{s}.png", images[s], finals[s] > report.best_t)

    doc = _report_doc(report, test, finals, gts)
    doc["variant"] = "fused" if cfg.use_micro else "macro"
    doc["macro_only_ods"] = macro_report.ods
    _dump_json(out / "report.json", doc)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stem", "f1_at_best_t", "sensitivity@0.5", "specificity@0.5", "f1@0.5"])
        for row in doc["images"]:
            w.writerow([row["stem"], f"{row['f1_at_best_t']:.6f}", f"{row['sensitivity']:.6f}",
                        f"{row['specificity']:.6f}", f"{row['f1_fixed']:.6f}"])
    _dump_json(out / "manifest.json", manifest)
    return doc


def _report_doc(report: EvalReport, stems, probs, gts) -> dict:
    doc = report.to_dict()
    rows = []
    for stem, f in zip(stems, report.per_image_f1_at_best_t):
        se, sp, f1 = sens_spec(probs[stem], gts[stem], 0.5)
        rows.append({"stem": stem, "f1_at_best_t": f, "sensitivity": se, "specificity": sp, "f1_fixed": f1})
    doc["images"] = rows
    doc["fixed_threshold"] = {
        "t": 0.5,
        "sensitivity": float(np.mean([r["sensitivity"] for r in rows])),
        "specificity": float(np.mean([r["specificity"] for r in rows])),
        "f1": float(np.mean([r["f1_fixed"] for r in rows])),
    }
    return doc


def cmd_eval(layout: io.DatasetLayout, prob_dir, grid_step: float = 0.01, stems=None) -> dict:
    prob_dir = Path(prob_dir)
    stems = stems or layout.test_stems() or sorted(p.stem for p in prob_dir.glob("*.pmap"))
    probs = {s: io.import_probmap(prob_dir / f"{s}.pmap") for s in stems}
    gts = {s: layout.mask(io.PRECISE, s) for s in stems}
    report = ods([probs[s] for s in stems], [gts[s] for s in stems], default_grid(grid_step))
    return _report_doc(report, stems, probs, gts)


# -- argument parsing ---------------------------------------------------------


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    r = dataclasses.replace
    if getattr(args, "seed", None) is not None:
        cfg = r(cfg, seed=args.seed)
    if getattr(args, "out", None):
        cfg = r(cfg, out=args.out)
    if getattr(args, "no_micro", False):
        cfg = r(cfg, use_micro=False)
    if getattr(args, "macro_source", None):
        cfg = r(cfg, macro_source=args.macro_source)
    if getattr(args, "ndil", None) is not None:
        cfg = r(cfg, synth=r(cfg.synth, n_dil=args.ndil))
    if getattr(args, "delta", None) is not None:
        cfg = r(cfg, shrink=r(cfg.shrink, delta=args.delta))
    if getattr(args, "grid_step", None) is not None:
        cfg = r(cfg, grid_step=args.grid_step)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--dataset", help="dataset root directory")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="weakseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-toy", parents=[common], help="write a procedural crack dataset")
    s.add_argument("--count", type=int, default=48)
    s.add_argument("--test-count", type=int, default=16)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--preset", choices=["dark", "bright"], default="dark")

    s = sub.add_parser("gen-weak", parents=[common], help="synthesize weak masks from precise ones")
    s.add_argument("--ndil", type=int)

    s = sub.add_parser("train-myopic", parents=[common], help="train the Myopic model on weak masks")
    s.add_argument("--masks", default=io.WEAK)

    s = sub.add_parser("refine", parents=[common], help="shrink weak masks with a trained Myopic model")
    s.add_argument("--myopic", required=True)
    s.add_argument("--delta", type=float)

    s = sub.add_parser("train-macro", parents=[common], help="train the built-in Macro branch")
    s.add_argument("--masks", required=True, help="mask directory (absolute or under the dataset)")

    s = sub.add_parser("infer", parents=[common], help="predict probability maps")
    s.add_argument("--macro", help="trained Macro weights (.npz)")
    s.add_argument("--macro-source", choices=["builtin", "import"])
    s.add_argument("--no-micro", action="store_true")

    s = sub.add_parser("eval", parents=[common], help="score PMAP files against precise masks")
    s.add_argument("--probmaps", required=True)
    s.add_argument("--grid-step", type=float)

    s = sub.add_parser("pipeline", parents=[common], help="run the full framework end to end")
    s.add_argument("--no-micro", action="store_true")
    s.add_argument("--macro-source", choices=["builtin", "import"])
    s.add_argument("--ndil", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--grid-step", type=float)
    return p


def _require(args, name):
    if not getattr(args, name):
        raise SystemExit(f"--{name.replace('_', '-')} is required")
    return getattr(args, name)


def _train_split(layout: io.DatasetLayout) -> list[str]:
    test = set(layout.test_stems() or [])
    return [s for s in layout.stems() if s not in test]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg = _apply_overrides(load_config(args.config), args).seeded()

    if args.command == "make-toy":
        preset = bright_crack_preset if args.preset == "bright" else ToyConfig
        toy = preset(image_size=args.size, seed=cfg.seed)
        cmd_make_toy(toy, args.count, _require(args, "out"), args.test_count)
        return 0

    layout = io.DatasetLayout(_require(args, "dataset"))
    if args.command == "gen-weak":
        made = cmd_gen_weak(layout, cfg.synth)
        print(f"{len(made)} weak masks written to {layout.dir(io.WEAK)}")
    elif args.command == "train-myopic":
        stems = _train_split(layout)
        params = train_myopic([layout.image(s) for s in stems],
                              [layout.mask(args.masks, s) for s in stems], cfg.myopic)
        Path(_require(args, "out")).write_bytes(params.to_bytes())
    elif args.command == "refine":
        params = MyopicParams.from_bytes(Path(args.myopic).read_bytes())
        out = Path(_require(args, "out"))
        out.mkdir(parents=True, exist_ok=True)

        def one(stem):
            img = layout.image(stem)
            io.write_mask(out / f"{stem}.png",
                          refine_annotation(layout.mask(io.WEAK, stem), myopic_forward(params, img), cfg.shrink))

        _stage("refine", one, _train_split(layout))
    elif args.command == "train-macro":
        stems = _train_split(layout)
        mask_dir = Path(args.masks)
        if not mask_dir.is_absolute():
            mask_dir = layout.root / mask_dir
        pairs = [_pad_pair(layout.image(s), io.read_mask(mask_dir / f"{s}.png")) for s in stems]
        train_macro([p[0] for p in pairs], [p[1] for p in pairs], cfg.macro).save(_require(args, "out"))
    elif args.command == "infer":
        out = Path(_require(args, "out"))
        out.mkdir(parents=True, exist_ok=True)
        stems = layout.test_stems() or layout.stems()
        params = MacroParams.load(args.macro) if cfg.macro_source == "builtin" else None
        if params is None and cfg.macro_source == "builtin":
            raise SystemExit("--macro is required for builtin inference")

        def one(stem):
            img = layout.image(stem)
            m = infer_padded(params, img) if params is not None else layout.probmap(stem)
            if cfg.use_micro:
                m = fuse(m, darkness_map(img, cfg.darkness))
            export_probmap(m, out / f"{stem}.pmap")

        _stage("infer", one, stems)
    elif args.command == "eval":
        doc = cmd_eval(layout, args.probmaps, cfg.grid_step)
        if args.out:
            _dump_json(Path(args.out), doc)
        print(f"ODS {doc['ods']:.4f} at t={doc['best_t']:.2f} over {doc['N']} images")
    elif args.command == "pipeline":
        doc = cmd_pipeline(layout, cfg)
        print(f"ODS {doc['ods']:.4f} at t={doc['best_t']:.2f} ({doc['variant']}); "
              f"macro only {doc['macro_only_ods']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
