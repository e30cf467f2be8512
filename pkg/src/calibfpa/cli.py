"""Command-line interface.

Every command writes its outputs plus ``resolved.cfg`` into ``--out``.
Passing that file back with ``--config`` reruns the command with the same
parameters; explicit flags still take precedence.

Exit codes: 0 success, 2 bad arguments, 3 missing or unreadable input,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from calibfpa import tensorio
from calibfpa.aperture import CodedAperture, MarkerSpec, apply_markers, generate_aperture
from calibfpa.calib import (
    METHODS,
    CalibNetConfig,
    CorrectionContext,
    correct_measurements,
    load_checkpoint,
    radius_bin_index,
    save_checkpoint,
    train_calib,
)
from calibfpa.config import ConfigError, parse_bool, read_config, write_config
from calibfpa.errors import NumericalError
from calibfpa.metrics import psnr
from calibfpa.optics import airy_psf, delta_psf
from calibfpa.pipeline import (
    PRESET_EPOCHS,
    PRESETS,
    EvalSettings,
    SceneSource,
    SimulationConfig,
    gen_dataset,
    load_image,
    read_split,
    run_matrix_of_experiments,
    simulate_scene,
    write_dataset,
    write_table,
)
from calibfpa.recon import DENOISERS, ppfpa, set_epsilon_from_noise, sweep_eps_multiplier
from calibfpa.sysmat import BlockDiagSystemMatrix, dense_from_masks, least_squares_solve

log = logging.getLogger("calibfpa")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4
RESOLVED = "resolved.cfg"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Argument types
# ---------------------------------------------------------------------------


def shape_arg(text: str):
    """``"60"`` -> (60, 60); ``"60x40"`` -> (60, 40)."""
    parts = str(text).lower().split("x")
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return vals


def opt(tp):
    """Optional value: ``none`` maps to None."""

    def conv(text):
        if text is None or str(text).lower() == "none":
            return None
        return tp(text)

    conv.__name__ = getattr(tp, "__name__", "value")
    return conv


def int_list(text: str) -> List[int]:
    """``"0-3,5"`` -> [0, 1, 2, 3, 5]; empty text -> []."""
    out: List[int] = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def float_list(text: str) -> List[float]:
    return [float(p) for p in str(text).split(",") if p.strip()]


def name_list(text: str) -> List[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="calibfpa", description="Coded-aperture FPA calibration and reconstruction")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file supplying defaults")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("gen-aperture", cmd_gen_aperture, "generate a random coded aperture")
    p.add_argument("--size", type=shape_arg, default=(60, 60), help="HR size, e.g. 60 or 60x80")
    p.add_argument("--block", type=shape_arg, default=(5, 5))
    p.add_argument("--open-ratio", type=float, default=0.8)
    p.add_argument("--markers", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--marker-size", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)

    p = add("simulate", cmd_simulate, "simulate blurred snapshots of one scene")
    p.add_argument("--scene", type=opt(str), default=None, help="image file or tensor; none = procedural")
    p.add_argument("--crop", type=int, default=60)
    p.add_argument("--block", type=shape_arg, default=(5, 5))
    p.add_argument("--open-ratio", type=float, default=0.8)
    p.add_argument("--aperture", type=opt(str), default=None, help="aperture tensor or gen-aperture directory")
    p.add_argument("--snapshots", type=int, default=5)
    p.add_argument("--radius", type=float, default=5.0, help="Airy radius in HR pixels; 0 disables blur")
    p.add_argument("--input-psnr", type=float, default=60.0, help="dB; inf disables noise")
    p.add_argument("--seed", type=int, default=0)

    p = add("gen-dataset", cmd_gen_dataset, "synthesize train/val/test calibration pairs")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--scene-dir", type=opt(str), default=None)
    p.add_argument("--crop", type=opt(int), default=None)
    p.add_argument("--test-crop", type=opt(int), default=None)
    p.add_argument("--block", type=opt(shape_arg), default=None)
    p.add_argument("--open-ratio", type=opt(float), default=None)
    p.add_argument("--r-min", type=opt(float), default=None)
    p.add_argument("--r-max", type=opt(float), default=None)
    p.add_argument("--snapshots", type=opt(int), default=None)
    p.add_argument("--input-psnr", type=opt(float), default=None)
    p.add_argument("--n-train", type=opt(int), default=None)
    p.add_argument("--n-val", type=opt(int), default=None)
    p.add_argument("--n-test", type=opt(int), default=None)
    p.add_argument("--seed", type=int, default=0)

    p = add("train-calib", cmd_train_calib, "train the calibration network")
    p.add_argument("--data", type=opt(str), default=None, help="gen-dataset output directory")
    p.add_argument("--epochs", type=opt(int), default=None, help="default: 30 (desk) or 1000 (full preset)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=0.999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-dl", type=int, default=2)
    p.add_argument("--n-sl", type=int, default=1)
    p.add_argument("--n-cl", type=int, default=6)
    p.add_argument("--n-c", type=int, default=32)
    p.add_argument("--n-sc", type=int, default=4)
    p.add_argument("--slm-coding", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--downsample", choices=("unshuffle", "strided"), default="unshuffle")

    p = add("calibrate", cmd_calibrate, "correct simulated measurements")
    p.add_argument("--input", type=opt(str), default=None, help="simulate output directory")
    p.add_argument("--measurements", type=opt(str), default=None, help="default: <input>/meas.cfpa")
    p.add_argument("--method", choices=METHODS, default="raw")
    p.add_argument("--checkpoint", type=opt(str), default=None)
    p.add_argument("--bin", type=opt(int), default=None, help="assumed radius bin; default from the simulation")
    p.add_argument("--radius", type=opt(float), default=None, help="PSF radius for lucy; default from the simulation")
    p.add_argument("--rl-iters", type=int, default=30)

    p = add("reconstruct", cmd_reconstruct, "reconstruct the HR scene")
    p.add_argument("--input", type=opt(str), default=None, help="simulate output directory")
    p.add_argument("--measurements", type=opt(str), default=None, help="default: <input>/meas.cfpa")
    p.add_argument("--method", choices=("least-squares", "ppfpa"), default="ppfpa")
    p.add_argument("--form", choices=("block-diag", "dense"), default="block-diag")
    p.add_argument("--psf-radius", type=opt(float), default=None, help="dense form blur; default from the simulation")
    p.add_argument("--denoiser", choices=sorted(DENOISERS), default="tv")
    p.add_argument("--mu", type=float, default=0.05)
    p.add_argument("--eps", type=opt(float), default=None, help="default: noise norm times --eps-mult")
    p.add_argument("--eps-mult", type=float, default=1.0)
    p.add_argument(
        "--eps-sweep",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="pick --eps-mult from 0.5..1.5 by pSNR against the simulated scene",
    )
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--data-weight", type=opt(float), default=None)
    p.add_argument("--ridge", type=float, default=1e-6)

    p = add("evaluate", cmd_evaluate, "run the evaluation matrix")
    p.add_argument("--methods", type=str, default="raw,lucy,calibfpa", help="comma list; empty for none")
    p.add_argument("--bins", type=str, default="0-8")
    p.add_argument("--ms", type=str, default="5")
    p.add_argument("--psnrs", type=str, default="60")
    p.add_argument("--n-samples", type=int, default=16)
    p.add_argument("--crop", type=int, default=60)
    p.add_argument("--block", type=shape_arg, default=(5, 5))
    p.add_argument("--open-ratio", type=float, default=0.8)
    p.add_argument("--recon", choices=("none", "least-squares", "ppfpa"), default="none")
    p.add_argument("--denoiser", choices=sorted(DENOISERS), default="tv")
    p.add_argument("--mu", type=float, default=0.05)
    p.add_argument("--eps-mult", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--rl-iters", type=int, default=30)
    p.add_argument("--bin-offset", type=int, default=0)
    p.add_argument("--checkpoint", type=opt(str), default=None)
    p.add_argument("--scene-dir", type=opt(str), default=None)
    p.add_argument("--dump-pgm", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--seed", type=int, default=0)
    return parser, subs


def _convert(action, text: str):
    if isinstance(action, argparse.BooleanOptionalAction):
        return parse_bool(text)
    value = action.type(text) if action.type else text
    if action.choices is not None and value not in action.choices:
        raise ConfigError(f"{action.dest}: {value!r} not in {sorted(action.choices)}")
    return value


def apply_config(sub: argparse.ArgumentParser, command: str, path) -> None:
    """Install values from a config file as defaults of ``sub``."""
    values = read_config(path)
    file_cmd = values.pop("command", command)
    if file_cmd != command:
        raise ConfigError(f"config is for command {file_cmd!r}, not {command!r}")
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        sub.set_defaults(**{k: _convert(actions[k], v) for k, v in values.items()})
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def resolved_values(args: argparse.Namespace) -> Dict[str, object]:
    d = {k: v for k, v in vars(args).items() if k not in ("func", "config", "verbose")}
    return d


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _out(args) -> Path:
    _need(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(path, what="input") -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} {p} does not exist")
    return p


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)


def _load_aperture(path, block) -> CodedAperture:
    p = _existing(path, "aperture")
    if p.is_dir():
        p = p / "aperture.cfpa"
    mask = tensorio.read_tensor(_existing(p, "aperture"))
    if mask.ndim != 2:
        raise ValueError("aperture tensor must be 2-D")
    meta = p.with_suffix(".json")
    ratio = float(mask.mean())
    if meta.exists():
        with open(meta) as f:
            m = json.load(f)
        block, ratio = tuple(m["block"]), m["open_ratio"]
    return CodedAperture(mask.astype(np.uint8), tuple(block), ratio)


def _checkpoint_stem(path) -> Path:
    p = _existing(path, "checkpoint")
    if p.is_dir():
        return p / "model"
    return p.with_suffix("")


def _sim_meta(indir: Path) -> dict:
    with open(_existing(indir / "sim.json", "simulation metadata")) as f:
        return json.load(f)


def _measurements(args, indir: Path) -> np.ndarray:
    path = Path(args.measurements) if args.measurements else indir / "meas.cfpa"
    y = tensorio.read_tensor(_existing(path, "measurements"))
    if y.ndim != 3:
        raise ValueError("measurements must be a (m, M1, M2) stack")
    return y


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_aperture(args) -> Dict[str, object]:
    out = _out(args)
    n1, n2 = args.size
    s1, s2 = args.block
    ap = generate_aperture(n1, n2, s1, s2, args.open_ratio, seed=args.seed)
    if args.markers:
        ap = apply_markers(ap, MarkerSpec(args.marker_size))
    tensorio.write_tensor(out / "aperture.cfpa", ap.base_mask)
    _write_json(
        out / "aperture.json",
        {
            "shape": list(ap.shape),
            "block": list(ap.block),
            "open_ratio": ap.open_ratio,
            "markers": args.marker_size if args.markers else None,
            "seed": args.seed,
        },
    )
    log.info("aperture %s written to %s", ap.shape, out)
    return {}


def cmd_simulate(args) -> Dict[str, object]:
    out = _out(args)
    rng = np.random.default_rng(args.seed)
    if args.scene is None:
        x = SceneSource().draw(args.crop, rng)
    else:
        p = _existing(args.scene, "scene")
        img = tensorio.read_tensor(p) if p.suffix == ".cfpa" else load_image(p)
        if min(img.shape) < args.crop:
            raise ValueError(f"scene {img.shape} is smaller than crop {args.crop}")
        r0 = (img.shape[0] - args.crop) // 2
        c0 = (img.shape[1] - args.crop) // 2
        x = np.asarray(img[r0 : r0 + args.crop, c0 : c0 + args.crop], dtype=np.float64)
    ap = _load_aperture(args.aperture, args.block) if args.aperture else None
    block = ap.block if ap is not None else tuple(args.block)
    sample = simulate_scene(x, args.radius, args.snapshots, block, args.open_ratio, args.input_psnr, rng, ap)
    tensorio.write_tensor(out / "scene.cfpa", sample.scene)
    tensorio.write_tensor(out / "masks.cfpa", sample.masks)
    tensorio.write_tensor(out / "meas.cfpa", sample.meas)
    tensorio.write_tensor(out / "ideal.cfpa", sample.target)
    tensorio.write_pgm16(out / "scene.pgm", sample.scene)
    try:
        k: Optional[int] = radius_bin_index(args.radius)
    except ValueError:
        k = None
    _write_json(
        out / "sim.json",
        {
            "radius": args.radius,
            "bin": k,
            "sigma": sample.sigma,
            "block": list(block),
            "snapshots": args.snapshots,
            "aperture_seed": sample.aperture_seed,
        },
    )
    log.info("simulated %d snapshots (r=%g, sigma=%.3g) into %s", args.snapshots, args.radius, sample.sigma, out)
    return {}


def cmd_gen_dataset(args) -> Dict[str, object]:
    out = _out(args)
    fields = ("scene_dir", "crop", "test_crop", "block", "open_ratio", "r_min", "r_max", "snapshots",
              "input_psnr", "n_train", "n_val", "n_test")
    overrides = {f: getattr(args, f) for f in fields if getattr(args, f) is not None}
    base = SimulationConfig(**PRESETS[args.preset])
    cfg = SimulationConfig(**{**base.__dict__, **overrides, "seed": args.seed})
    data = gen_dataset(cfg)
    write_dataset(data, cfg, out)
    log.info("dataset %s written to %s", {k: len(v.samples) for k, v in data.items()}, out)
    # record the preset-resolved values, so the config no longer depends on the preset table
    return {f: getattr(cfg, f) for f in fields}


def cmd_train_calib(args) -> Dict[str, object]:
    _need(args, "data")
    datadir = _existing(args.data, "dataset")
    out = _out(args)
    with open(_existing(datadir / "manifest.json", "dataset manifest")) as f:
        manifest = json.load(f)
    train, _, _ = read_split(datadir, "train")
    try:
        val, _, _ = read_split(datadir, "val")
    except ValueError:
        val = None
    epochs = args.epochs
    if epochs is None:
        epochs = PRESET_EPOCHS["full"] if manifest["config"]["n_train"] >= 1000 else PRESET_EPOCHS["desk"]
    cfg = CalibNetConfig(
        block=train.block,
        n_dl=args.n_dl,
        n_sl=args.n_sl,
        n_cl=args.n_cl,
        n_c=args.n_c,
        n_sc=args.n_sc,
        slm_coding=args.slm_coding,
        downsample=args.downsample,
    )
    with open(out / "train_log.jsonl", "w") as logf:

        def log_fn(entry):
            logf.write(json.dumps(entry, sort_keys=True) + "\n")
            logf.flush()
            log.info("epoch %(epoch)d train_l1 %(train_l1).6g val_l1 %(val_l1).6g", entry)

        res = train_calib(train, val, epochs, args.batch_size, args.lr, args.lr_decay, args.seed, cfg, log_fn)
    save_checkpoint(res.net, out / "model")
    _write_json(out / "train_summary.json", {"best_epoch": res.best_epoch, "best_val_l1": res.best_val_l1})
    return {"epochs": epochs}


def cmd_calibrate(args) -> Dict[str, object]:
    _need(args, "input")
    indir = _existing(args.input)
    out = _out(args)
    y = _measurements(args, indir)
    meta = _sim_meta(indir)
    ctx = CorrectionContext(rl_iters=args.rl_iters, sr=tuple(meta["block"]))
    if args.method == "lucy":
        r = args.radius if args.radius is not None else meta["radius"]
        ctx.psf = delta_psf() if r == 0 else airy_psf(r)
    elif args.method == "calibfpa":
        _need(args, "checkpoint")
        ctx.net = load_checkpoint(_checkpoint_stem(args.checkpoint))
        ctx.masks = tensorio.read_tensor(_existing(indir / "masks.cfpa", "masks")).astype(np.float64)
        ctx.bin = args.bin if args.bin is not None else meta["bin"]
        if ctx.bin is None:
            raise UsageError("simulation radius has no bin; pass --bin")
    corrected = correct_measurements(args.method, y, ctx)
    tensorio.write_tensor(out / "corrected.cfpa", corrected)
    ideal = indir / "ideal.cfpa"
    if ideal.exists():
        target = tensorio.read_tensor(ideal)
        score = float(np.mean([psnr(t, c) for t, c in zip(target, corrected)]))
        _write_json(out / "calibrate.json", {"method": args.method, "meas_psnr": score})
        log.info("%s: mean measurement pSNR %.2f dB", args.method, score)
    return {}


def cmd_reconstruct(args) -> Dict[str, object]:
    _need(args, "input")
    indir = _existing(args.input)
    out = _out(args)
    y = _measurements(args, indir)
    meta = _sim_meta(indir)
    block = tuple(meta["block"])
    masks = tensorio.read_tensor(_existing(indir / "masks.cfpa", "masks")).astype(np.float64)
    if masks.shape[0] != y.shape[0]:
        raise ValueError(f"{masks.shape[0]} masks but {y.shape[0]} snapshots")
    t0 = time.perf_counter()
    if args.form == "block-diag":
        C = BlockDiagSystemMatrix.from_masks(masks, block)
    else:
        r = args.psf_radius if args.psf_radius is not None else meta["radius"]
        C = dense_from_masks(masks, delta_psf() if r == 0 else airy_psf(r), block)
    eps = args.eps
    if eps is None:
        eps = set_epsilon_from_noise(meta["sigma"], y.size, args.eps_mult)
    run = {"method": args.method, "form": args.form}
    if args.method == "least-squares":
        image = np.clip(least_squares_solve(C, y, args.ridge), 0.0, 1.0)
        run["ridge"] = args.ridge
    elif args.eps_sweep:
        if args.eps is not None:
            raise UsageError("--eps and --eps-sweep are mutually exclusive")
        scene = indir / "scene.cfpa"
        if not scene.exists():
            raise UsageError("--eps-sweep needs the reference scene.cfpa in the input directory")
        kw = dict(denoiser=args.denoiser, mu=args.mu, max_iter=args.max_iter, tol=args.tol,
                  data_weight=args.data_weight)
        mult, scores, res = sweep_eps_multiplier(y, C, meta["sigma"], tensorio.read_tensor(scene), **kw)
        image = res.image
        eps = set_epsilon_from_noise(meta["sigma"], y.size, mult)
        run.update(eps_sweep={format(k, "g"): v for k, v in scores.items()}, eps_mult=mult)
    else:
        res = ppfpa(y, C, args.denoiser, eps, args.mu, args.max_iter, args.tol, data_weight=args.data_weight)
        image = res.image
    if args.method == "ppfpa":
        run.update(eps=eps, mu=args.mu, denoiser=args.denoiser, iterations=res.n_iter, converged=res.converged,
                   final_residual=res.residuals[-1], residuals=res.residuals)
    run["wall_time"] = time.perf_counter() - t0
    tensorio.write_tensor(out / "recon.cfpa", image)
    tensorio.write_pgm16(out / "recon.pgm", image)
    scene = indir / "scene.cfpa"
    if scene.exists():
        run["psnr"] = psnr(tensorio.read_tensor(scene), image)
        log.info("reconstruction pSNR %.2f dB", run["psnr"])
    _write_json(out / "run.json", run)
    return {}


def cmd_evaluate(args) -> Dict[str, object]:
    out = _out(args)
    methods = name_list(args.methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {list(METHODS)}")
    net = None
    if "calibfpa" in methods and args.checkpoint is not None:
        net = load_checkpoint(_checkpoint_stem(args.checkpoint))
    settings = EvalSettings(
        crop=args.crop,
        block=tuple(args.block),
        open_ratio=args.open_ratio,
        n_samples=args.n_samples,
        recon=args.recon,
        denoiser=args.denoiser,
        mu=args.mu,
        eps_mult=args.eps_mult,
        max_iter=args.max_iter,
        ridge=args.ridge,
        rl_iters=args.rl_iters,
        bin_offset=args.bin_offset,
        seed=args.seed,
    )
    records = run_matrix_of_experiments(
        methods,
        int_list(args.bins),
        int_list(args.ms),
        float_list(args.psnrs),
        settings,
        net,
        args.scene_dir,
        out / "images" if args.dump_pgm else None,
    )
    write_table(records, out / "eval.tsv")
    log.info("%d records written to %s", len(records), out / "eval.tsv")
    return {}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.config:
            apply_config(subs[args.command], args.command, _existing(args.config, "config"))
            args = parser.parse_args(argv)
        resolved = resolved_values(args)
        extra = args.func(args)
        resolved.update(extra or {})
        write_config(Path(args.out) / RESOLVED, resolved, header=f"calibfpa {args.command}")
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"calibfpa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, tensorio.FormatError, IsADirectoryError, PermissionError) as exc:
        print(f"calibfpa: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"calibfpa: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"calibfpa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
