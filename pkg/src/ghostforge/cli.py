"""Command-line entry point.

Every subcommand resolves its settings as flags > ``--config`` JSON file >
built-in defaults, writes its outputs atomically into ``--out`` and records
a ``run_manifest.json`` there. Passing that manifest back as ``--config``
reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import PIL

from . import __version__
from . import dataset as ds
from . import gftn
from . import unet
from .errors import ConfigError, ContractError, DataError, GhostForgeError, LoadError, ShapeError
from .fileio import atomic_write_text, dump_json, read_gray, write_pgm, write_png
from .filters import BILATERAL_GRID, DEFAULT_BILATERAL, bilateral_filter
from .metrics import evaluate as quality, reports_to_csv, ssim
from .optics import MeasurementLog, NoiseModel, simulate
from .recon import ReconConfig, normalize_unit, reconstruct
from .synth import write_corpus

log = logging.getLogger("ghostforge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

RUN_MANIFEST = "run_manifest.json"
RUN_FORMAT = "ghostforge-run"
LOG_NAME = "measurements.log"
CHECKPOINT_NAME = "model.ckpt"
LOSS_NAME = "loss.csv"
METRICS_NAME = "metrics.csv"
SUMMARY_NAME = "summary.json"
SHEET_NAME = "comparison"
METHODS = ("cgi", "bilateral", "dnn", "dnn+filters")


# ---------------------------------------------------------------------------
# option schema


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


@dataclass(frozen=True)
class Option:
    key: str
    default: Any
    kind: type | Callable  # int, float, str, bool, _int_list, _float_list
    help: str
    flag: str | None = None

    @property
    def flag_name(self) -> str:
        return self.flag or "--" + self.key.replace("_", "-")


COMMON = [
    Option("out", "out", str, "output directory"),
]


def _noise_options() -> list[Option]:
    return [
        Option("noise_kind", "none", str, "bucket noise model: none or additive-gaussian"),
        Option("noise_sigma", 0.0, float, "relative noise standard deviation"),
        Option("noise_seed", 0, int, "noise stream seed"),
    ]


def _net_options() -> list[Option]:
    return [
        Option("depth", 2, int, "U-Net pooling levels"),
        Option("base_channels", 8, int, "channels at the first level"),
        Option("first_kernel", 9, int, "kernel size of the first three convolutions"),
        Option("inner_kernel", 3, int, "kernel size of the remaining convolutions"),
        Option("dropout", 0.8, float, "bottleneck dropout rate (probability of zeroing)"),
    ]


SCHEMAS: dict[str, list[Option]] = {
    "synth-corpus": COMMON + [
        Option("count", 220, int, "number of images"),
        Option("seed", 0, int, "corpus seed"),
        Option("size", 64, int, "image side length"),
    ],
    "simulate": COMMON + [
        Option("object", None, str, "object image path"),
        Option("seed", 0, int, "pattern seed"),
        Option("n_patterns", 500, int, "number of patterns N"),
        Option("size", None, int, "resize the object to SIZE x SIZE (default: native)"),
        Option("binary", False, bool, "binary instead of uniform patterns"),
    ] + _noise_options(),
    "reconstruct": COMMON + [
        Option("log", None, str, "measurement log path"),
        Option("n_patterns", None, _int_list, "comma-separated N sweep (default: full log)"),
        Option("method", "differential", str, "differential or traditional"),
    ],
    "gen-dataset": COMMON + [
        Option("images", None, str, "source image directory"),
        Option("size", 32, int, "working resolution"),
        Option("n_patterns", 500, int, "patterns per reconstruction"),
        Option("seed", 0, int, "pattern seed"),
        Option("selection_seed", 0, int, "image selection seed"),
        Option("split_seed", 0, int, "split shuffle seed"),
        Option("limit", 220, int, "maximum images to use"),
        Option("ratios", [10 / 11, 0.0, 1 / 11], _float_list, "train,validation,test fractions"),
    ] + _noise_options(),
    "train": COMMON + [
        Option("dataset", None, str, "dataset cache directory"),
        Option("size", None, int, "expected resolution (default: the cache's)"),
        Option("n_patterns", None, int, "expected N of the cache (default: the cache's)"),
        Option("seed", 0, int, "weight init and dropout seed"),
        Option("shuffle_seed", 0, int, "batch shuffle seed"),
        Option("batch_size", 50, int, "minibatch size"),
        Option("epochs", 3, int, "passes over the training split"),
        Option("learning_rate", 1e-3, float, "Adam learning rate"),
    ] + _net_options(),
    "denoise": COMMON + [
        Option("checkpoint", None, str, "trained checkpoint"),
        Option("input", None, str, "image file or GFTN reconstruction"),
        Option("filters", False, bool, "also write the bilateral pre/post filtered result"),
    ],
    "evaluate": COMMON + [
        Option("dataset", None, str, "dataset cache directory"),
        Option("checkpoint", None, str, "trained checkpoint (missing: dnn columns are reported as gaps)"),
        Option("split", "test", str, "which split to evaluate"),
        Option("size", None, int, "expected resolution (default: the cache's)"),
        Option("n_patterns", None, int, "expected N of the cache (default: the cache's)"),
        Option("sheet_rows", 8, int, "images in the comparison sheet"),
    ],
}

HELP = {
    "synth-corpus": "write a synthetic grayscale image corpus",
    "simulate": "measure an object with seeded patterns and write the bucket log",
    "reconstruct": "differential ghost images for a sweep of N",
    "gen-dataset": "build the (reconstruction, original) training cache",
    "train": "train the denoising U-Net on a dataset cache",
    "denoise": "run a checkpoint on one image",
    "evaluate": "score cgi, bilateral, dnn and dnn+filters on a held-out split",
}

REQUIRED = {"simulate": ["object"], "reconstruct": ["log"], "gen-dataset": ["images"], "train": ["dataset"],
            "denoise": ["checkpoint", "input"], "evaluate": ["dataset"]}


def _coerce(opt: Option, value):
    if value is None:
        return None
    try:
        if opt.kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if opt.kind in (_int_list, _float_list):
            items = value if isinstance(value, list) else opt.kind(value)
            cast = int if opt.kind is _int_list else float
            return [cast(v) for v in items]
        if opt.kind is int and isinstance(value, float) and not value.is_integer():
            raise TypeError
        if opt.kind is int and isinstance(value, bool):
            raise TypeError
        return opt.kind(value)
    except (TypeError, ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f"bad value for {opt.key}: {value!r}") from None


def load_config_file(path: str | Path, command: str) -> dict:
    """Read a flat JSON object, or a run manifest (its ``config`` block)."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    if raw.get("format") == RUN_FORMAT:
        if raw.get("command") != command:
            raise ConfigError(f"{path} is a manifest for {raw.get('command')!r}, not {command!r}")
        raw = raw.get("config", {})
    known = {o.key for o in SCHEMAS[command]}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    return raw


def resolve(command: str, flags: dict, config_path: str | None = None) -> dict:
    """Merge defaults, the config file and explicit flags, in increasing priority."""
    schema = SCHEMAS[command]
    out = {o.key: o.default for o in schema}
    if config_path:
        out.update(load_config_file(config_path, command))
    out.update({k: v for k, v in flags.items() if k in out})
    out = {o.key: _coerce(o, out[o.key]) for o in schema}
    missing = [k for k in REQUIRED.get(command, []) if out.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"{command} needs: {', '.join('--' + k.replace('_', '-') for k in missing)}")
    return out


# ---------------------------------------------------------------------------
# manifests


def versions() -> dict:
    return {"ghostforge": __version__, "numpy": np.__version__, "pillow": PIL.__version__,
            "python": platform.python_version()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_run_manifest(out: Path, command: str, config: dict, outputs: list[str], extra: dict | None = None) -> None:
    manifest = {
        "format": RUN_FORMAT,
        "version": 1,
        "command": command,
        # the output directory is where the manifest lives, not part of the run
        "config": {k: v for k, v in config.items() if k != "out"},
        "versions": versions(),
        "outputs": {name: _sha256(out / name) for name in sorted(outputs)},
    }
    if extra:
        manifest.update(extra)
    atomic_write_text(out / RUN_MANIFEST, dump_json(manifest))


def _noise(cfg: dict) -> NoiseModel:
    return NoiseModel(cfg["noise_kind"], cfg["noise_sigma"], cfg["noise_seed"])


def _finite(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


# ---------------------------------------------------------------------------
# commands


def cmd_synth_corpus(cfg: dict) -> None:
    out = Path(cfg["out"])
    paths = write_corpus(out, cfg["count"], cfg["seed"], cfg["size"], cfg["size"])
    write_run_manifest(out, "synth-corpus", cfg, [p.name for p in paths])


def _load_object(path: str, size: int | None) -> np.ndarray:
    try:
        img = read_gray(path)
    except FileNotFoundError as exc:
        raise DataError(f"object image {path} not found") from exc
    except Exception as exc:
        raise DataError(f"cannot read object image {path}: {exc}") from exc
    if size is not None:
        img = np.clip(ds.area_resize(img, size), 0.0, 1.0)
    return img


def cmd_simulate(cfg: dict) -> None:
    if cfg["n_patterns"] < 0:
        raise ConfigError("--n-patterns must be >= 0")
    out = Path(cfg["out"])
    obj = _load_object(cfg["object"], cfg["size"])
    mlog = simulate(obj, cfg["seed"], cfg["n_patterns"], _noise(cfg), cfg["binary"])
    mlog.save(out / LOG_NAME)
    write_run_manifest(out, "simulate", cfg, [LOG_NAME])


def recon_name(n: int) -> str:
    return f"recon_N{n:06d}"


def cmd_reconstruct(cfg: dict) -> None:
    out = Path(cfg["out"])
    mlog = MeasurementLog.load(cfg["log"])
    sweep = cfg["n_patterns"] or [mlog.n]
    for n in sweep:
        if n > mlog.n:
            raise ConfigError(f"N={n} exceeds the log length ({mlog.n} measurements)")
        ReconConfig(cfg["method"], n)
    stack = mlog.patterns(max(sweep))
    outputs = []
    for n in sweep:
        img = reconstruct(stack, mlog.records, ReconConfig(cfg["method"], n))
        gftn.save(out / f"{recon_name(n)}.gftn", [img.pixels])
        write_pgm(out / f"{recon_name(n)}.pgm", normalize_unit(img)[0])
        outputs += [f"{recon_name(n)}.gftn", f"{recon_name(n)}.pgm"]
    write_run_manifest(out, "reconstruct", cfg, outputs)


def cmd_gen_dataset(cfg: dict) -> None:
    out = Path(cfg["out"])
    data = ds.build_dataset(cfg["images"], cfg["size"], cfg["n_patterns"], cfg["seed"], cfg["selection_seed"],
                            cfg["split_seed"], cfg["limit"], cfg["ratios"], _noise(cfg))
    ds.persist(out, data)
    write_run_manifest(out, "gen-dataset", cfg, [ds.PAIRS_NAME, ds.MANIFEST_NAME])


def _check_cache(cfg: dict, manifest: ds.DatasetManifest) -> None:
    if cfg["size"] is not None and cfg["size"] != manifest.resolution:
        raise ConfigError(f"requested size {cfg['size']} but the cache holds {manifest.resolution}x{manifest.resolution} pairs")
    if cfg["n_patterns"] is not None and cfg["n_patterns"] != manifest.n_patterns:
        raise ConfigError(f"requested N={cfg['n_patterns']} but the cache was built with N={manifest.n_patterns}")


def cmd_train(cfg: dict) -> None:
    out = Path(cfg["out"])
    data = ds.load(cfg["dataset"])
    m = data.manifest
    _check_cache(cfg, m)
    cfg = {**cfg, "size": m.resolution, "n_patterns": m.n_patterns}
    net = unet.UNetConfig(m.resolution, cfg["depth"], cfg["base_channels"], cfg["first_kernel"],
                          cfg["inner_kernel"], cfg["dropout"], cfg["seed"])
    tcfg = unet.TrainConfig(cfg["batch_size"], cfg["epochs"], cfg["learning_rate"], shuffle_seed=cfg["shuffle_seed"])
    noisy, clean = data.stacks("train")
    if noisy.shape[0] == 0:
        raise DataError("the dataset has an empty training split")
    params, history = unet.train(unet.build(net), (noisy, clean),
                                 tcfg, lambda s, l: log.info("step %d loss %.6f", s, l))
    meta = {"dataset_sha256": m.pairs_sha256, "train": tcfg.to_dict(), "steps": len(history)}
    unet.save_params(out / CHECKPOINT_NAME, params, meta)
    atomic_write_text(out / LOSS_NAME, "step,loss\n" + "".join(f"{k},{v:.17g}\n" for k, v in enumerate(history, 1)))
    write_run_manifest(out, "train", cfg, [CHECKPOINT_NAME, LOSS_NAME])


def _load_input(path: str, size: int) -> np.ndarray:
    p = Path(path)
    if p.suffix.lower() == ".gftn":
        arrays = gftn.load(p)
        if len(arrays) != 1 or arrays[0].ndim != 2:
            raise DataError(f"{p} must hold one 2-D tensor")
        return normalize_unit(arrays[0])[0]
    return _load_object(path, size)


def cmd_denoise(cfg: dict) -> None:
    out = Path(cfg["out"])
    params, _ = unet.load_params(cfg["checkpoint"])
    x = _load_input(cfg["input"], params.config.input_size)
    if x.shape != (params.config.input_size,) * 2:
        raise ShapeError(f"input is {x.shape}, network expects {params.config.input_size}x{params.config.input_size}")
    outputs = []
    results = {"denoised": unet.denoise(params, x)}
    if cfg["filters"]:
        results["denoised_filters"] = unet.denoise_with_filters(params, x, DEFAULT_BILATERAL, DEFAULT_BILATERAL)
    for name, img in results.items():
        gftn.save(out / f"{name}.gftn", [img])
        write_pgm(out / f"{name}.pgm", img)
        outputs += [f"{name}.gftn", f"{name}.pgm"]
    write_run_manifest(out, "denoise", cfg, outputs)


def best_bilateral(noisy: np.ndarray, clean: np.ndarray):
    """Grid config with the highest mean SSIM on the given set."""
    best = None
    for bcfg in BILATERAL_GRID:
        score = float(np.mean([ssim(bilateral_filter(a, bcfg), b) for a, b in zip(noisy, clean)]))
        if best is None or score > best[1]:
            best = (bcfg, score)
    return best[0]


def comparison_sheet(columns: list[np.ndarray | None], rows: int, gap: int = 2) -> np.ndarray:
    """Grid of images: one row per image, one column per method; missing columns are mid-gray."""
    n = min(rows, len(columns[0]))
    h, w = columns[0].shape[1:]
    sheet = np.ones((n * h + (n + 1) * gap, len(columns) * w + (len(columns) + 1) * gap))
    for c, col in enumerate(columns):
        for r in range(n):
            y, x = gap + r * (h + gap), gap + c * (w + gap)
            sheet[y:y + h, x:x + w] = 0.5 if col is None else col[r]
    return sheet


def cmd_evaluate(cfg: dict) -> None:
    out = Path(cfg["out"])
    data = ds.load(cfg["dataset"])
    _check_cache(cfg, data.manifest)
    cfg = {**cfg, "size": data.manifest.resolution, "n_patterns": data.manifest.n_patterns}
    items = data.subset(cfg["split"])
    if not items:
        raise DataError(f"split {cfg['split']!r} is empty")
    ids = [p.id for p in items]
    noisy = np.stack([p.noisy for p in items])
    clean = np.stack([p.clean for p in items])

    gaps: dict[str, str] = {}
    bcfg = best_bilateral(noisy, clean)
    results: dict[str, np.ndarray | None] = {
        "cgi": noisy,
        "bilateral": np.stack([bilateral_filter(a, bcfg) for a in noisy]),
        "dnn": None,
        "dnn+filters": None,
    }
    params = None
    if not cfg["checkpoint"]:
        gaps["dnn"] = gaps["dnn+filters"] = "no checkpoint given"
    else:
        try:
            params, _ = unet.load_params(cfg["checkpoint"])
        except LoadError as exc:
            gaps["dnn"] = gaps["dnn+filters"] = f"checkpoint unavailable: {exc}"
            log.warning("evaluating without the network: %s", exc)
    if params is not None:
        if params.config.input_size != data.manifest.resolution:
            raise ShapeError(f"checkpoint expects {params.config.input_size}x{params.config.input_size}, "
                             f"dataset is {data.manifest.resolution}x{data.manifest.resolution}")
        results["dnn"] = unet.denoise_batch(params, noisy)
        results["dnn+filters"] = np.stack(
            [unet.denoise_with_filters(params, a, DEFAULT_BILATERAL, DEFAULT_BILATERAL) for a in noisy])

    reports = [quality(i, m, results[m][k], clean[k])
               for k, i in enumerate(ids) for m in METHODS if results[m] is not None]
    atomic_write_text(out / METRICS_NAME, reports_to_csv(reports))

    averages = {}
    for m in METHODS:
        rows = [r for r in reports if r.method == m]
        if rows:
            averages[m] = {"count": len(rows), "mse": float(np.mean([r.mse for r in rows])),
                           "psnr": _finite(float(np.mean([r.psnr for r in rows]))),
                           "ssim": float(np.mean([r.ssim for r in rows]))}
    summary = {"split": cfg["split"], "images": len(ids), "averages": averages, "gaps": gaps,
               "bilateral_config": bcfg.to_dict(), "filters_config": DEFAULT_BILATERAL.to_dict(),
               "columns": ["original"] + list(METHODS)}
    atomic_write_text(out / SUMMARY_NAME, dump_json(summary))

    sheet = comparison_sheet([clean] + [results[m] for m in METHODS], cfg["sheet_rows"])
    write_png(out / f"{SHEET_NAME}.png", sheet)
    write_pgm(out / f"{SHEET_NAME}.pgm", sheet)
    for m, reason in gaps.items():
        print(f"gap: {m}: {reason}", file=sys.stderr)
    for m, avg in averages.items():
        print(f"{m:12s} ssim={avg['ssim']:.4f} mse={avg['mse']:.5f} n={avg['count']}")
    write_run_manifest(out, "evaluate", cfg, [METRICS_NAME, SUMMARY_NAME, f"{SHEET_NAME}.png", f"{SHEET_NAME}.pgm"])


COMMANDS: dict[str, Callable[[dict], None]] = {
    "synth-corpus": cmd_synth_corpus,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "evaluate": cmd_evaluate,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghostforge", description="Computational ghost imaging with a denoising U-Net.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", metavar="PATH", help="JSON config file or a previous run manifest")
        for opt in schema:
            kw: dict[str, Any] = {"dest": opt.key, "default": argparse.SUPPRESS, "help": opt.help}
            if opt.kind is bool:
                kw["action"] = argparse.BooleanOptionalAction
            else:
                kw["type"] = opt.kind
            p.add_argument(opt.flag_name, **kw)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    logging.basicConfig(level=logging.INFO if args.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(command, args, config_path)
        COMMANDS[command](cfg)
    except (ConfigError, ContractError) as exc:
        print(f"ghostforge {command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"ghostforge {command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GhostForgeError, RuntimeError, OSError, MemoryError) as exc:
        print(f"ghostforge {command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
