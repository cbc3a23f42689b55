"""Command-line front end.

Every command writes ``manifest.json`` into its output directory.  The
manifest holds the resolved configuration, the command arguments and a
checksum per output file; ``goldisim rerun`` replays it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bayesopt import read_bo_trace_csv, write_bo_trace_csv
from .compositor import (SIM_RANGES, AnnotatedDataset, SimParams, generate_dataset, phantom_normal)
from .config import RunConfig
from .errors import ConfigError, DataIOError, DataShapeError, GoldisimError, ParameterError
from .rng import mix

MANIFEST = "manifest.json"
_VAL_STREAM, _PRETRAIN_STREAM = 0xD1, 0xD2


# --- helpers ----------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _checksums(out: Path) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    return {p.relative_to(out).as_posix(): _sha256(p) for p in files}


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"{path}: {e.strerror or e}") from e


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.get("run", "output_dir")
    if out is None:
        raise ConfigError("no output directory: pass --out or set run.output_dir")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"{out}: {e.strerror or e}") from e
    return out


def _write_manifest(out: Path, command: str, args: dict, cfg: RunConfig, extra: Optional[dict] = None) -> dict:
    man = {
        "command": command,
        "args": args,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": __version__,
        "outputs": _checksums(out),
    }
    if extra:
        man.update(extra)
    _write_json(out / MANIFEST, man)
    return man


def _normals(cfg: RunConfig) -> list[np.ndarray]:
    from .imageio import load_images

    d = cfg.get("data", "normals_dir")
    if d is None:
        raise ConfigError("data.normals_dir is not set (use --normals)")
    imgs = load_images(d)
    if not imgs:
        raise DataShapeError(f"{d}: no PGM/PNG normal images found")
    return imgs


def _parse_phi(text: Optional[str], cfg: RunConfig) -> SimParams:
    """``text`` is JSON, a path to a JSON file, or ``key=value`` pairs; falls back to the config."""
    if not text:
        return cfg.sim_params()
    p = Path(text)
    if p.suffix == ".json" and p.exists():
        text = p.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParameterError(f"malformed phi JSON: {e.msg}") from e
    else:
        d = {}
        for part in text.split(","):
            if "=" not in part:
                raise ParameterError(f"malformed phi entry {part.strip()!r}; expected key=value")
            k, v = part.split("=", 1)
            d[k.strip()] = v.strip()
    base = cfg.sim_params().to_dict()
    for k in d:
        if k not in base:
            raise ParameterError(f"unknown simulator parameter {k!r}")
    base.update(d)
    return SimParams.from_dict(base)


def _jsonable_args(args: argparse.Namespace) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k in ("func", "overrides", "config"):
            continue
        if isinstance(v, Path):
            v = str(v.resolve())
        out[k] = v
    return out


# --- commands ---------------------------------------------------------------

def cmd_phantom(args, cfg: RunConfig) -> dict:
    from .imageio import write_pgm

    if args.n < 0:
        raise ParameterError("--n must be >= 0")
    out = _out_dir(args, cfg)
    size = args.size or cfg.get("data", "canvas")
    for i in range(args.n):
        write_pgm(out / f"normal_{i:05d}.pgm", phantom_normal(size, size, mix(cfg.seed, i)))
    return {"n": args.n, "size": size}


def cmd_simulate(args, cfg: RunConfig) -> dict:
    from .imageio import save_dataset

    normals = _normals(cfg)
    out = _out_dir(args, cfg)
    uniform = args.uniform or cfg.get("simulator", "uniform")
    phi = None if uniform else _parse_phi(args.phi, cfg)
    data = generate_dataset(normals, phi, cfg.get("simulator", "lesions_per_image"), seed=cfg.seed)
    save_dataset(data, out)
    return {
        "phi": None if phi is None else phi.to_dict(),
        "uniform": bool(uniform),
        "sim_ranges": {n: [lo, hi] for n, lo, hi, _ in SIM_RANGES},
        "n_images": len(data),
    }


def _load_annotations(path, what: str) -> AnnotatedDataset:
    from .imageio import load_dataset

    if path is None:
        raise ConfigError(f"no {what} annotations given")
    data = load_dataset(path)
    if len(data) == 0:
        raise DataShapeError(f"{path}: {what} annotation file is empty")
    return data


def _initial_detector(cfg: RunConfig, normals=None):
    from .detector import DetectorParams, load_checkpoint
    from .training import fit_logistic

    ck = cfg.get("detector", "init_checkpoint")
    if ck is not None:
        return load_checkpoint(ck)
    n = cfg.get("detector", "pretrain_normals")
    if n and normals is not None:
        if n > len(normals):
            raise ParameterError(f"detector.pretrain_normals={n} exceeds the {len(normals)} normals")
        pre = generate_dataset(normals[:n], None, seed=mix(cfg.seed, _PRETRAIN_STREAM))
        return fit_logistic(pre)
    return DetectorParams.zeros()


def cmd_train(args, cfg: RunConfig) -> dict:
    from .detector import save_checkpoint
    from .training import train, write_training_log

    train_set = _load_annotations(cfg.get("data", "train_annotations"), "training")
    val_set = _load_annotations(cfg.get("data", "val_annotations"), "validation")
    if val_set.n_evaluable == 0:
        from .errors import MetricUndefinedError
        raise MetricUndefinedError("validation set has no evaluable ground truth")
    out = _out_dir(args, cfg)
    params0 = _initial_detector(cfg)
    report = train(params0, train_set, val_set, cfg.optimizer())
    save_checkpoint(out / "checkpoint.json", report.params)
    write_training_log(out / "training_log.csv", report)
    return {"selected_epoch": report.selected_epoch, "params_hash": report.params.digest()}


def _read_predictions(path, dataset: AnnotatedDataset):
    from .imageio import read_jsonl
    from .metrics import Prediction

    by_name: dict[str, list] = {}
    for n, rec in enumerate(read_jsonl(path), 1):
        if "image" not in rec or "predictions" not in rec:
            raise DataShapeError(f"{path}:{n}: record needs 'image' and 'predictions'")
        try:
            by_name.setdefault(rec["image"], []).extend(Prediction.from_dict(p) for p in rec["predictions"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataShapeError(f"{path}:{n}: malformed prediction ({e})") from e
    names = {item.name for item in dataset}
    unknown = sorted(set(by_name) - names)
    if unknown:
        raise DataShapeError(f"{path}: predictions for unknown images {unknown[:3]}")
    return [by_name.get(item.name, []) for item in dataset]


def cmd_eval(args, cfg: RunConfig) -> dict:
    from .detector import detect, load_checkpoint
    from .metrics import froc, froc_svg, summary, write_froc_csv

    data = _load_annotations(args.annotations, "evaluation")
    if bool(args.predictions) == bool(args.checkpoint):
        raise ConfigError("pass exactly one of --predictions or --checkpoint")
    if args.predictions:
        preds = _read_predictions(args.predictions, data)
    else:
        params = load_checkpoint(args.checkpoint)
        preds = [detect(params, item) for item in data]
    curve = froc(preds, [item.boxes for item in data], len(data))
    out = _out_dir(args, cfg)
    write_froc_csv(out / "froc.csv", curve)
    metrics = summary(curve)
    _write_json(out / "metrics.json", metrics)
    (out / "froc.svg").write_text(froc_svg(curve), encoding="utf-8")
    return {"metrics": metrics}


def _run_inputs(cfg: RunConfig):
    normals = _normals(cfg)
    val_path = cfg.get("data", "val_annotations")
    if val_path is not None:
        return normals, _load_annotations(val_path, "validation")
    hold = cfg.get("data", "val_holdout")
    if hold <= 0:
        raise ConfigError("set data.val_annotations or a positive data.val_holdout")
    if hold >= len(normals):
        raise ParameterError(f"data.val_holdout={hold} leaves no training normals")
    val = generate_dataset(normals[-hold:], None, cfg.get("simulator", "lesions_per_image"),
                           seed=mix(cfg.seed, _VAL_STREAM))
    return normals[:-hold], val


def _run_one(cfg: RunConfig, strategy: str, normals, val_set, out: Path, detector0) -> dict:
    from .curriculum import run_strategy, trace_summary, write_trace_csv

    out.mkdir(parents=True, exist_ok=True)
    params, trace = run_strategy(cfg.curriculum(strategy), normals, val_set, detector0, out_dir=out)
    write_trace_csv(out / "trace.csv", trace)
    _write_json(out / "trace.json", trace_summary(trace))
    for t, bo in enumerate(trace.bo_traces, 1):
        write_bo_trace_csv(out / f"bo_t{t}.csv", bo)
    return {"final_hash": params.digest(), "timesteps": len(trace), "trace": trace}


def cmd_run(args, cfg: RunConfig) -> dict:
    from .curriculum import meta_validate

    strategy = args.strategy or cfg.get("curriculum", "strategy")
    normals, val_set = _run_inputs(cfg)
    out = _out_dir(args, cfg)
    detector0 = _initial_detector(cfg, normals)
    if not args.targets:
        res = _run_one(cfg, strategy, normals, val_set, out, detector0)
        return {"strategy": strategy, "final_hash": res["final_hash"], "timesteps": res["timesteps"]}
    if strategy != "gdr":
        raise ConfigError("--targets sweeps apply to the gdr strategy only")
    traces, rows = {}, []
    for k in args.targets:
        sub = cfg.copy()
        sub.set("curriculum", "target_k", float(k))
        res = _run_one(sub, "gdr", normals, val_set, out / f"k_{k:g}", detector0)
        traces[float(k)] = res["trace"]
        rows.append({"k": float(k), "final_hash": res["final_hash"],
                     "val_V": [r.val_V for r in res["trace"].records]})
    meta_path = args.meta_val or cfg.get("data", "val_annotations")
    meta_set = _load_annotations(meta_path, "meta-validation") if meta_path else val_set
    k, t, score = meta_validate(traces, meta_set)
    sweep = {"targets": rows, "best": {"k": k, "t": t, "fauc": score}}
    _write_json(out / "sweep.json", sweep)
    return {"strategy": "gdr", "sweep_best": sweep["best"]}


def cmd_bo_trace(args, cfg: RunConfig) -> dict:
    run = Path(args.run)
    files = sorted(run.glob("bo_t*.csv"), key=lambda p: int(p.stem[4:]))
    if not files:
        raise DataIOError(f"{run}: no bo_t*.csv files")
    out = _out_dir(args, cfg)
    series, best = [], []
    for f in files:
        rows = read_bo_trace_csv(f)
        obj = [r["objective"] for r in rows]
        series.append((f.stem, obj))
        i = int(np.argmax(obj))
        best.append({"trace": f.stem, "iter": int(rows[i]["iter"]), "objective": obj[i]})
    (out / "bo_trace.svg").write_text(_series_svg(series), encoding="utf-8")
    _write_json(out / "bo_best.json", best)
    return {"n_traces": len(files)}


def _series_svg(series, width: int = 480, height: int = 320) -> str:
    ml, mr, mt, mb = 56, 16, 16, 40
    pw, ph = width - ml - mr, height - mt - mb
    n = max(len(s) for _, s in series)
    lo = min(min(s) for _, s in series)
    hi = max(max(s) for _, s in series)
    span = hi - lo if hi > lo else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
             f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">iteration</text>',
             f'<text x="{ml - 6}" y="{mt + 4}" text-anchor="end" font-size="10">{hi:.3g}</text>',
             f'<text x="{ml - 6}" y="{mt + ph}" text-anchor="end" font-size="10">{lo:.3g}</text>']
    colours = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    for j, (_, s) in enumerate(series):
        pts = " ".join(f"{ml + pw * i / max(n - 1, 1):.2f},{mt + ph * (1 - (v - lo) / span):.2f}"
                       for i, v in enumerate(s))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colours[j % len(colours)]}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_lesion_preview(args, cfg: RunConfig) -> dict:
    from .imageio import write_image
    from .lesion import make_lesion

    phi = _parse_phi(args.phi, cfg)
    canvas = args.size or cfg.get("data", "canvas")
    if args.count < 1:
        raise ParameterError("--count must be >= 1")
    lesions = [make_lesion(phi.lesion_params(canvas, mix(cfg.seed, i)), mix(cfg.seed, i))
               for i in range(args.count)]
    cell = max(max(l.height, l.width) for l in lesions) + 4
    cols = int(math.ceil(math.sqrt(args.count)))
    rows = int(math.ceil(args.count / cols))
    sheet = np.zeros((rows * cell, cols * cell), dtype=np.uint8)
    for i, l in enumerate(lesions):
        r, c = divmod(i, cols)
        y0 = r * cell + (cell - l.height) // 2
        x0 = c * cell + (cell - l.width) // 2
        sheet[y0:y0 + l.height, x0:x0 + l.width] = np.floor(np.clip(l.values, 0, 1) * 255 + 0.5).astype(np.uint8)
    out = _out_dir(args, cfg)
    name = args.name or "lesions.pgm"
    write_image(out / name, sheet)
    return {"phi": phi.to_dict(), "count": args.count}


COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "run": cmd_run,
    "bo-trace": cmd_bo_trace,
    "lesion-preview": cmd_lesion_preview,
}


# --- argument parsing -------------------------------------------------------

def _floats_arg(s: str) -> list[float]:
    try:
        return [float(v) for v in s.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="goldisim", description="Simulated lesion datasets and curriculum domain randomisation.")
    p.add_argument("--version", action="version", version=f"goldisim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="INI run configuration")
        sp.add_argument("--out", type=Path, help="output directory (overrides run.output_dir)")
        sp.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
        return sp

    sp = common(sub.add_parser("phantom", help="write synthetic normal images"))
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--size", type=int)

    sp = common(sub.add_parser("simulate", help="insert lesions into normal images"))
    sp.add_argument("--normals", type=Path)
    sp.add_argument("--phi", help="JSON object, JSON file, or key=value list")
    sp.add_argument("--uniform", action="store_true", help="draw phi uniformly per image")

    sp = common(sub.add_parser("train", help="train the toy detector"))
    sp.add_argument("--train", type=Path, help="training annotations JSONL")
    sp.add_argument("--val", type=Path, help="validation annotations JSONL")
    sp.add_argument("--init", type=Path, help="initial checkpoint")

    sp = common(sub.add_parser("eval", help="FROC evaluation"))
    sp.add_argument("--annotations", type=Path, required=True)
    sp.add_argument("--predictions", type=Path)
    sp.add_argument("--checkpoint", type=Path)

    sp = common(sub.add_parser("run", help="run a domain-randomisation strategy"))
    sp.add_argument("--strategy", choices=("gdr", "udr", "bayrn", "easy2hard"))
    sp.add_argument("--normals", type=Path)
    sp.add_argument("--val", type=Path, help="validation annotations JSONL")
    sp.add_argument("--targets", type=_floats_arg, help="GDR target sweep, e.g. 0.3,0.4,0.5")
    sp.add_argument("--meta-val", dest="meta_val", type=Path, help="annotations for meta-validation")

    sp = common(sub.add_parser("bo-trace", help="plot the BO traces of a run"))
    sp.add_argument("--run", type=Path, required=True)

    sp = common(sub.add_parser("lesion-preview", help="write a contact sheet of lesions"))
    sp.add_argument("--phi")
    sp.add_argument("--count", type=int, default=9)
    sp.add_argument("--size", type=int, help="canvas size used to scale the radius range")
    sp.add_argument("--name", help="output file name (.pgm or .png)")

    sp = sub.add_parser("rerun", help="replay a run from its manifest")
    sp.add_argument("manifest", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    return p


def _split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    rest, overrides = [], []
    for a in argv:
        if a.startswith("--") and "=" in a and "." in a.split("=", 1)[0]:
            key, val = a[2:].split("=", 1)
            overrides.append((key, val))
        else:
            rest.append(a)
    return rest, overrides


def _apply_flags(args, cfg: RunConfig) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.set("run", "seed", args.seed)
    for attr, section, key in (("normals", "data", "normals_dir"), ("train", "data", "train_annotations"),
                               ("val", "data", "val_annotations"), ("init", "detector", "init_checkpoint")):
        v = getattr(args, attr, None)
        if v is not None:
            cfg.set(section, key, Path(v).resolve())
    if getattr(args, "out", None) is not None:
        args.out = Path(args.out).resolve()


def execute(command: str, args: argparse.Namespace, cfg: RunConfig) -> dict:
    threads = cfg.get("run", "threads")
    if threads:
        os.environ["GOLDISIM_THREADS"] = str(threads)
    extra = COMMANDS[command](args, cfg)
    out = _out_dir(args, cfg)
    stored = _jsonable_args(args)
    stored.pop("out", None)
    return _write_manifest(out, command, stored, cfg, {"result": extra})


def rerun(manifest_path, out) -> dict:
    """Replay a manifest into ``out`` and compare output checksums."""
    try:
        man = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataIOError(f"{manifest_path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise DataShapeError(f"{manifest_path}: malformed manifest ({e.msg})") from e
    command = man.get("command")
    if command not in COMMANDS:
        raise DataShapeError(f"{manifest_path}: unknown command {command!r}")
    cfg = RunConfig()
    for section, kv in man["config"].items():
        for key, val in kv.items():
            cfg.set(section, key, tuple(val) if isinstance(val, list) else val)
    args = argparse.Namespace(**man["args"])
    for k, v in vars(args).items():
        if isinstance(v, str) and k in ("annotations", "predictions", "checkpoint", "run", "meta_val"):
            setattr(args, k, Path(v))
    args.out = Path(out).resolve()
    new = execute(command, args, cfg)
    same = new["outputs"] == man["outputs"]
    return {"identical": same, "outputs": len(new["outputs"]),
            "mismatched": sorted(k for k in set(new["outputs"]) | set(man["outputs"])
                                 if new["outputs"].get(k) != man["outputs"].get(k))}


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _split_overrides(argv)
        args = build_parser().parse_args(rest)
        if args.command == "rerun":
            res = rerun(args.manifest, args.out)
            print(json.dumps(res, sort_keys=True))
            return 0 if res["identical"] else 1
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        for key, val in overrides:
            cfg.override(key, val)
        _apply_flags(args, cfg)
        man = execute(args.command, args, cfg)
        print(json.dumps({"status": "ok", "command": args.command, "outputs": len(man["outputs"])},
                         sort_keys=True))
        return 0
    except GoldisimError as e:
        print(json.dumps({"error": e.kind, "exit_code": e.exit_code, "message": str(e)}, sort_keys=True),
              file=sys.stderr)
        return e.exit_code
    except OSError as e:
        err = DataIOError(f"{getattr(e, 'filename', '') or ''}: {e.strerror or e}")
        print(json.dumps({"error": err.kind, "exit_code": err.exit_code, "message": str(err)}, sort_keys=True),
              file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
