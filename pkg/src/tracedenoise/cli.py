"""Command-line entry point: ``denoise``, ``bench`` and ``verify``.

Exit codes: 0 ok, 1 verification failure, 2 I/O error, 3 configuration error,
4 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics
from .errors import ConfigError, ContractError, DimensionError, InputError, NumericError
from .imageio import list_images, load_image, save_image
from .losses import ablation
from .noise import NoiseSpec, derive_seed
from .trainer import TrainConfig, zero_shot_denoise

logger = logging.getLogger("tracedenoise")

EXIT_OK, EXIT_VERIFY, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4

CSV_HEADER = ["image", "noise", "seed", "config", "psnr_noisy", "psnr_stage1", "psnr_final",
              "ssim_final", "wall_ms_stage1", "wall_ms_stage2"]

# config-file key -> parser; every key also has a --flag (underscores become dashes)
CONFIG_KEYS = {
    "ablation": str,
    "stage1_iters": int,
    "stage2_iters": int,
    "lr": float,
    "lambda0": float,
    "hidden": int,
    "slope": float,
    "dtype": str,
    "seed": int,
    "reset_moments": lambda v: _parse_bool(v),
    "symmetric_mse": lambda v: _parse_bool(v),
}

VERIFY_DIM = 256
VERIFY_SIGMA = 0.1
IDENTITY_TOL = 1e-10


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value.strip())
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return out


def _settings(args) -> dict:
    """Config file values overridden by any flag given on the command line."""
    values = read_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def train_config(values: dict, label: str | None = None, seed: int | None = None) -> TrainConfig:
    loss_over = {k: values[k] for k in ("lambda0", "symmetric_mse") if k in values}
    loss = ablation(label or values.get("ablation", "S4"), **loss_over)
    kw = {k: values[k] for k in ("stage1_iters", "stage2_iters", "lr", "hidden", "slope", "dtype",
                                 "reset_moments") if k in values}
    return TrainConfig(loss=loss, seed=values.get("seed", 0) if seed is None else seed, **kw)


def _finite_or_none(v):
    return v if v is None or math.isfinite(v) else None


# denoise ------------------------------------------------------------------------------

def run_denoise(args) -> int:
    values = _settings(args)
    cfg = train_config(values)
    y = load_image(args.input)
    clean = load_image(args.clean) if args.clean else None
    if clean is not None and clean.shape != y.shape:
        raise DimensionError(f"clean reference shape {clean.shape} differs from input {y.shape}")
    noise = None
    if args.noise:
        noise = NoiseSpec.parse(args.noise, seed=derive_seed(cfg.seed, 1))
        if clean is None:
            clean = y  # the input is the clean reference the noise is added to
        y = noise.apply(clean)

    out, report = zero_shot_denoise(y, cfg, clean=clean)
    save_image(args.output, out)
    line = {"input": str(args.input), "output": str(args.output), "config": cfg.loss.label,
            "seed": cfg.seed, "noise": str(noise) if noise else None}
    line.update({k: _finite_or_none(v) if isinstance(v, float) else v for k, v in report.as_dict().items()})
    print(json.dumps(line, sort_keys=False))
    return EXIT_OK


# bench --------------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchCell:
    path: str
    noise: str
    seed: int
    label: str
    cfg: TrainConfig
    noise_seed: int


def _run_cell(cell: BenchCell) -> dict:
    clean = load_image(cell.path)
    y = NoiseSpec.parse(cell.noise, seed=cell.noise_seed).apply(clean)
    _, rep = zero_shot_denoise(y, cell.cfg, clean=clean)
    rec = {"image": Path(cell.path).name, "noise": cell.noise, "seed": cell.seed, "config": cell.label}
    rec.update(rep.as_dict())
    return rec


def bench_cells(images, noises, seeds: int, labels, values: dict, master: int) -> list[BenchCell]:
    """Cells in output order: image name, then noise, then seed, then config.

    The noisy input depends on (image, noise, seed) and the network
    initialisation on the seed only, so configurations are compared on
    identical data and starting weights.
    """
    cells = []
    for path in images:
        name_key = zlib.crc32(path.name.encode())
        for noise in noises:
            noise_key = zlib.crc32(noise.encode())
            for s in range(seeds):
                for label in labels:
                    cfg = train_config(values, label, seed=derive_seed(master, 0, s))
                    cells.append(BenchCell(str(path), noise, s, label, cfg,
                                           derive_seed(master, 1, name_key, noise_key, s)))
    return cells


def worker_count(n_cells: int) -> int:
    env = os.environ.get("LOTA_THREADS")
    if env is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"LOTA_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("LOTA_THREADS must be >= 1")
    return max(1, min(cap, n_cells))


def _fmt(v, digits: int) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.{digits}f}"


def format_rows(records: list[dict], timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r["image"], r["noise"], r["seed"], r["config"],
                    _fmt(r["psnr_noisy"], 4), _fmt(r["psnr_stage1"], 4), _fmt(r["psnr_final"], 4),
                    _fmt(r["ssim_final"], 6),
                    _fmt(r["wall_ms_stage1"], 1) if timing else "",
                    _fmt(r["wall_ms_stage2"], 1) if timing else ""])
    return buf.getvalue()


def summarize(records: list[dict]) -> str:
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in records:
        groups.setdefault((r["noise"], r["config"]), []).append(r)
    lines = [f"{'noise':<14}{'config':<8}{'n':>4}{'psnr_final':>12}{'ssim_final':>12}"]
    for (noise, label), rows in groups.items():
        p = np.mean([r["psnr_final"] for r in rows])
        s = np.mean([r["ssim_final"] for r in rows])
        lines.append(f"{noise:<14}{label:<8}{len(rows):>4}{p:>12.3f}{s:>12.4f}")
    return "\n".join(lines)


def run_bench(args) -> int:
    values = _settings(args)
    images = list_images(args.dir)
    if not images:
        raise InputError(f"no images found in {args.dir}")
    noises = [str(NoiseSpec.parse(t)) for t in args.noise.split(",") if t.strip()]
    labels = [ablation(t).label for t in args.ablation.split(",") if t.strip()]
    if not noises or not labels:
        raise ConfigError("need at least one noise spec and one ablation label")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    cells = bench_cells(images, noises, args.seeds, labels, values, values.get("seed", 0))
    workers = worker_count(len(cells))
    logger.info("bench: %d cells on %d worker(s)", len(cells), workers)
    if workers == 1:
        records = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, cells))  # map preserves submission order
    text = format_rows(records, timing=not args.omit_timing)
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc}") from exc
    else:
        sys.stdout.write(text)
    print(summarize(records))
    return EXIT_OK


# verify -------------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: str
    criterion: str
    passed: bool


def verify_checks(trials: int, seed: int) -> list[Check]:
    checks = []
    worst = diagnostics.identity_suite(trials=1000, seed=seed)
    for name, res in worst.items():
        checks.append(Check(name, f"{res:.3e}", f"< {IDENTITY_TOL:g}", res < IDENTITY_TOL))

    probe = diagnostics.LinearProbe.random(VERIFY_DIM, seed=derive_seed(seed, 2))
    for k, scenario in enumerate(diagnostics.SCENARIOS):
        p = diagnostics.LinearProbe.identity(VERIFY_DIM) if scenario == "correlated" else probe
        est = diagnostics.mc_trace_term(scenario, p, VERIFY_SIGMA, trials, derive_seed(seed, 3, k))
        want = diagnostics.expected_trace(scenario, p, VERIFY_SIGMA)
        value = f"{est.mean:+.4e} (se {est.se:.2e})"
        if scenario == "correlated":
            ok = est.z > 10 and abs(est.mean - want) < 3 * est.se
            checks.append(Check(scenario, value, f"|mean|>10se, ~{want:.3g}", ok))
        else:
            checks.append(Check(scenario, value, "|mean|<3se", abs(est.mean) < 3 * est.se))
    return checks


def run_verify(args) -> int:
    checks = verify_checks(args.trials, args.seed)
    width = max(len(c.value) for c in checks)
    print(f"{'check':<18}{'value':<{width + 2}}{'criterion':<24}result")
    for c in checks:
        mark = "PASS" if c.passed else "FAIL  <<<"
        print(f"{c.name:<18}{c.value:<{width + 2}}{c.criterion:<24}{mark}")
    failed = [c.name for c in checks if not c.passed]
    print("all checks passed" if not failed else f"failed: {', '.join(failed)}")
    return EXIT_OK if not failed else EXIT_VERIFY


# parser -------------------------------------------------------------------------------

def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key = value lines; flags override it")
    p.add_argument("--stage1-iters", dest="stage1_iters", type=int)
    p.add_argument("--stage2-iters", dest="stage2_iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda0", type=float, help="initial trace-loss weight")
    p.add_argument("--hidden", type=int)
    p.add_argument("--slope", type=float, help="leaky-ReLU negative slope")
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--reset-moments", dest="reset_moments", action="store_const", const=True,
                   help="clear Adam moments between the two stages")
    p.add_argument("--symmetric-mse", dest="symmetric_mse", type=_parse_bool)


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not argparse's default status 2 (reserved for I/O)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracedenoise", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("denoise", help="denoise one image")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--noise", help="inject synthetic noise first, e.g. gauss:25 or poisson:50")
    d.add_argument("--seed", type=int)
    d.add_argument("--clean", help="clean reference for PSNR/SSIM in the report")
    d.add_argument("--ablation", help="S1, S2, S3 or S4 (default S4)")
    _add_training_flags(d)
    d.set_defaults(func=run_denoise)

    b = sub.add_parser("bench", help="run the pipeline over a folder of clean images")
    b.add_argument("--dir", required=True)
    b.add_argument("--noise", default="gauss:25", help="comma-separated noise specs")
    b.add_argument("--seeds", type=int, default=1, help="seeds per (image, noise) cell")
    b.add_argument("--ablation", default="S4", help="comma-separated ablation labels")
    b.add_argument("--out", help="CSV path (default: standard output)")
    b.add_argument("--seed", type=int, help="master seed")
    b.add_argument("--omit-timing", action="store_true",
                   help="leave the wall-clock columns empty so reruns are byte-identical")
    _add_training_flags(b)
    b.set_defaults(func=run_bench)

    v = sub.add_parser("verify", help="check the loss-decomposition algebra numerically")
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=run_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
