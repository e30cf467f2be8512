"""Dataset synthesis, noise calibration and the evaluation matrix.

A *scene sample* is one HR crop seen through one random aperture at ``m``
raster shifts, blurred by an Airy disk of random radius and corrupted by
white Gaussian noise at a peak-referenced input pSNR. Every snapshot of a
scene sample is one calibration pair ``(mask, measurement, ideal target)``.

Seeds are derived with :class:`numpy.random.SeedSequence` spawning, so any
sample can be regenerated on its own from the master seed and its index.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from calibfpa import tensorio
from calibfpa.aperture import CodedAperture, generate_aperture, raster_schedule, snapshot_masks
from calibfpa.calib import (
    N_BINS,
    R_MAX,
    R_MIN,
    CalibDataset,
    CalibNet,
    CorrectionContext,
    bin_interval,
    correct_measurements,
    radius_bin_index,
)
from calibfpa.metrics import psnr, ssim
from calibfpa.optics import airy_psf, delta_psf, forward_measure, ideal_measure
from calibfpa.recon import ppfpa, set_epsilon_from_noise
from calibfpa.sysmat import BlockDiagSystemMatrix, least_squares_solve

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = {".pgm", ".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


@dataclass(frozen=True)
class SimulationConfig:
    scene_dir: Optional[str] = None  # None -> procedural scenes
    crop: int = 60
    test_crop: Optional[int] = None  # defaults to ``crop``
    block: Tuple[int, int] = (5, 5)
    open_ratio: float = 0.8
    r_min: float = 4.5
    r_max: float = 5.5
    snapshots: int = 5
    input_psnr: float = 60.0
    seed: int = 0
    n_train: int = 64
    n_val: int = 16
    n_test: int = 16

    def __post_init__(self):
        object.__setattr__(self, "block", tuple(int(b) for b in self.block))
        s1, s2 = self.block
        for c in (self.crop, self.test_crop or self.crop):
            if c < 1 or c % s1 or c % s2:
                raise ValueError(f"crop {c} is not divisible by block {self.block}")
        if not (R_MIN <= self.r_min < self.r_max <= R_MAX):
            raise ValueError(f"radius range [{self.r_min}, {self.r_max}) must lie inside [{R_MIN}, {R_MAX})")
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be >= 0")

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    def split_crop(self, split: str) -> int:
        return (self.test_crop or self.crop) if split == "test" else self.crop


PRESETS: Dict[str, dict] = {
    # desk scale: runs in minutes on one core
    "desk": dict(crop=60, n_train=64, n_val=16, n_test=16, r_min=4.5, r_max=5.5, snapshots=5),
    # full protocol: one snapshot per scene, radii over every bin
    "full": dict(crop=180, test_crop=360, n_train=5513, n_val=200, n_test=199, r_min=1.5, r_max=10.5, snapshots=1),
}
PRESET_EPOCHS = {"desk": 30, "full": 1000}


def preset_config(name: str, **overrides) -> SimulationConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SimulationConfig(**{**PRESETS[name], **overrides})


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def noise_sigma_for_psnr(signal: np.ndarray, target_psnr_db: float) -> float:
    """Noise std giving ``target_psnr_db`` relative to the stack's peak."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        raise ValueError("empty signal")
    if math.isnan(target_psnr_db):
        raise ValueError("target pSNR must not be NaN")
    if math.isinf(target_psnr_db):
        if target_psnr_db < 0:
            raise ValueError("target pSNR must not be -inf")
        return 0.0
    return float(signal.max()) / 10.0 ** (target_psnr_db / 20.0)


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------


def synthetic_scene(n1: int, n2: int, rng) -> np.ndarray:
    """Procedural grayscale scene in ``[0.05, 0.95]``.

    Smooth background, a handful of flat ellipses and rectangles with sharp
    edges, and a faint fine-grained texture.
    """
    rng = np.random.default_rng(rng)
    scale = max(n1, n2)
    base = ndimage.gaussian_filter(rng.standard_normal((n1, n2)), scale / 8)
    img = 0.5 * (base - base.min()) / (np.ptp(base) + 1e-12)
    yy, xx = np.mgrid[:n1, :n2]
    for _ in range(rng.integers(3, 8)):
        cy, cx = rng.uniform(0, n1), rng.uniform(0, n2)
        a, b = rng.uniform(scale / 20, scale / 4, 2)
        th = rng.uniform(0, np.pi)
        u = ((xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)) / a
        v = (-(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)) / b
        inside = (u * u + v * v <= 1) if rng.random() < 0.6 else (np.abs(u) <= 1) & (np.abs(v) <= 1)
        img = np.where(inside, 0.7 * rng.uniform() + 0.3 * img, img)
    img = img + 0.08 * ndimage.gaussian_filter(rng.standard_normal((n1, n2)), 0.8)
    return np.clip((img - img.min()) / (np.ptp(img) + 1e-12) * 0.9 + 0.05, 0.0, 1.0)


def load_image(path) -> np.ndarray:
    """Grayscale image in ``[0, 1]``; PGM is read natively, others via Pillow."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return tensorio.read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return arr / (65535.0 if arr.max() > 255 else 255.0)
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


class SceneSource:
    """Random crops from a directory of grayscale images, or procedural scenes."""

    def __init__(self, scene_dir: Optional[str] = None):
        self.scene_dir = scene_dir
        self.images: List[np.ndarray] = []
        if scene_dir is not None:
            d = Path(scene_dir)
            if not d.is_dir():
                raise FileNotFoundError(f"scene directory {scene_dir} does not exist")
            files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            if not files:
                raise ValueError(f"no images found in {scene_dir}")
            self.images = [load_image(p) for p in files]

    def draw(self, crop: int, rng) -> np.ndarray:
        if self.scene_dir is None:
            return synthetic_scene(crop, crop, rng)
        usable = [im for im in self.images if min(im.shape) >= crop]
        if not usable:
            raise ValueError(f"no scene is at least {crop}x{crop}")
        im = usable[rng.integers(len(usable))]
        r0 = rng.integers(im.shape[0] - crop + 1)
        c0 = rng.integers(im.shape[1] - crop + 1)
        return im[r0 : r0 + crop, c0 : c0 + crop].copy()


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class SceneSample:
    scene: np.ndarray  # (N1, N2)
    masks: np.ndarray  # (m, N1, N2) uint8
    meas: np.ndarray  # (m, M1, M2) blurred + noise
    target: np.ndarray  # (m, M1, M2) ideal blur-free measurements
    radius: float
    sigma: float
    aperture_seed: int  # -1 when the aperture was supplied


def simulate_scene(
    x: np.ndarray,
    radius: float,
    m: int,
    block=(5, 5),
    open_ratio: float = 0.8,
    input_psnr: float = 60.0,
    rng=None,
    aperture: Optional[CodedAperture] = None,
) -> SceneSample:
    """Simulate ``m`` raster snapshots of scene ``x``.

    ``radius=0`` disables the blur; ``input_psnr=inf`` disables the noise.
    Without an explicit ``aperture`` one is drawn from ``rng``.
    """
    rng = np.random.default_rng(rng)
    s1, s2 = block
    aperture_seed = -1
    if aperture is None:
        aperture_seed = int(rng.integers(2**63))
        ap = generate_aperture(x.shape[0], x.shape[1], s1, s2, open_ratio, seed=aperture_seed)
    else:
        if aperture.shape != x.shape:
            raise ValueError(f"aperture shape {aperture.shape} does not match scene {x.shape}")
        ap = aperture
    masks = snapshot_masks(ap, raster_schedule(m))
    psf = delta_psf() if radius == 0 else airy_psf(radius)
    clean = np.stack([forward_measure(x, mk, psf, block) for mk in masks])
    sigma = noise_sigma_for_psnr(clean, input_psnr)
    meas = clean + sigma * rng.standard_normal(clean.shape) if sigma > 0 else clean
    target = np.stack([ideal_measure(x, mk, block) for mk in masks])
    return SceneSample(x, masks.astype(np.uint8), meas, target, float(radius), sigma, aperture_seed)


def _sample_seeds(seed: int) -> Dict[str, np.random.SeedSequence]:
    return dict(zip(SPLITS, np.random.SeedSequence(seed).spawn(len(SPLITS))))


@dataclass
class GeneratedSplit:
    samples: List[SceneSample]
    records: List[dict]

    def calib_dataset(self) -> CalibDataset:
        return stack_samples(self.samples)


def stack_samples(samples: Sequence[SceneSample]) -> CalibDataset:
    """Flatten scene samples into per-snapshot calibration pairs."""
    if not samples:
        raise ValueError("no samples to stack")
    masks = np.concatenate([s.masks for s in samples]).astype(np.float64)
    meas = np.concatenate([s.meas for s in samples])
    target = np.concatenate([s.target for s in samples])
    radius = np.concatenate([np.full(len(s.meas), s.radius) for s in samples])
    bins = np.array([radius_bin_index(r) for r in radius])
    return CalibDataset(masks, meas, target, radius, bins)


def gen_split(cfg: SimulationConfig, split: str, source: Optional[SceneSource] = None) -> GeneratedSplit:
    source = source or SceneSource(cfg.scene_dir)
    n = cfg.split_size(split)
    crop = cfg.split_crop(split)
    seeds = _sample_seeds(cfg.seed)[split].spawn(n)
    samples, records = [], []
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        x = source.draw(crop, rng)
        r = float(rng.uniform(cfg.r_min, cfg.r_max))
        sample = simulate_scene(x, r, cfg.snapshots, cfg.block, cfg.open_ratio, cfg.input_psnr, rng)
        samples.append(sample)
        records.append(
            {
                "split": split,
                "sample": i,
                "seed": [int(cfg.seed), *map(int, ss.spawn_key)],
                "radius": r,
                "bin": radius_bin_index(r),
                "sigma": sample.sigma,
                "aperture_seed": sample.aperture_seed,
                "snapshots": [i * cfg.snapshots, (i + 1) * cfg.snapshots],
            }
        )
    return GeneratedSplit(samples, records)


def gen_dataset(cfg: SimulationConfig) -> Dict[str, GeneratedSplit]:
    """All three splits; identical ``cfg`` gives identical arrays."""
    source = SceneSource(cfg.scene_dir)
    return {split: gen_split(cfg, split, source) for split in SPLITS}


def _config_dict(cfg: SimulationConfig) -> dict:
    d = asdict(cfg)
    d["block"] = list(cfg.block)
    return d


def write_dataset(data: Dict[str, GeneratedSplit], cfg: SimulationConfig, outdir) -> dict:
    """Write per-split tensors and ``manifest.json``; returns the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "calibfpa-dataset", "config": _config_dict(cfg), "splits": {}}
    for split, gen in data.items():
        files = {}
        if gen.samples:
            ds = gen.calib_dataset()
            arrays = {
                "masks": ds.masks.astype(np.uint8),
                "meas": ds.meas,
                "target": ds.target,
                "radius": ds.radius,
                "scenes": np.stack([s.scene for s in gen.samples]),
            }
            for name, arr in arrays.items():
                fname = f"{split}_{name}.cfpa"
                tensorio.write_tensor(outdir / fname, arr)
                files[name] = fname
        manifest["splits"][split] = {"files": files, "samples": gen.records}
    with open(outdir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def read_split(datadir, split: str) -> Tuple[CalibDataset, np.ndarray, List[dict]]:
    """``(pairs, scenes, sample records)`` of one stored split."""
    datadir = Path(datadir)
    with open(datadir / "manifest.json") as f:
        manifest = json.load(f)
    entry = manifest["splits"][split]
    if not entry["files"]:
        raise ValueError(f"split {split!r} is empty")
    arr = {k: tensorio.read_tensor(datadir / v) for k, v in entry["files"].items()}
    bins = np.array([radius_bin_index(r) for r in arr["radius"]])
    ds = CalibDataset(arr["masks"].astype(np.float64), arr["meas"], arr["target"], arr["radius"], bins)
    return ds, arr["scenes"], entry["samples"]


# ---------------------------------------------------------------------------
# Evaluation matrix
# ---------------------------------------------------------------------------


@dataclass
class EvalRecord:
    method: str
    bin: int
    m: int
    input_psnr: float
    meas_psnr: float  # corrected vs ideal measurements
    psnr: float  # reconstruction vs scene (nan when not reconstructed)
    ssim: float
    wall_time: float
    n_samples: int
    status: str = "ok"

    COLUMNS = ("method", "bin", "m", "input_psnr", "meas_psnr", "psnr", "ssim", "wall_time", "n_samples", "status")


@dataclass
class EvalSettings:
    crop: int = 60
    block: Tuple[int, int] = (5, 5)
    open_ratio: float = 0.8
    n_samples: int = 16
    recon: str = "none"  # none | least-squares | ppfpa
    denoiser: str = "tv"
    mu: float = 0.05
    eps_mult: float = 1.0
    max_iter: int = 300
    ridge: float = 1e-6
    rl_iters: int = 30
    bin_offset: int = 0  # assumed-bin mismatch for calibfpa
    seed: int = 0


def eval_samples(settings: EvalSettings, k: int, m: int, input_psnr: float, source: SceneSource) -> List[SceneSample]:
    """Test scenes of one (bin, m, pSNR) cell, seeded from the cell coordinates."""
    lo, hi = bin_interval(k)
    ss = np.random.SeedSequence([settings.seed, k, m, int(round(input_psnr * 1000)) if math.isfinite(input_psnr) else -1])
    out = []
    for child in ss.spawn(settings.n_samples):
        rng = np.random.default_rng(child)
        x = source.draw(settings.crop, rng)
        r = float(rng.uniform(lo, hi))
        out.append(simulate_scene(x, r, m, settings.block, settings.open_ratio, input_psnr, rng))
    return out


def reconstruct_sample(sample: SceneSample, corrected: np.ndarray, settings: EvalSettings) -> np.ndarray:
    """Blur-free block-diagonal reconstruction from corrected snapshots."""
    C = BlockDiagSystemMatrix.from_masks(sample.masks, settings.block)
    y = corrected.ravel()
    if settings.recon == "least-squares":
        return np.clip(least_squares_solve(C, y, settings.ridge), 0.0, 1.0)
    if settings.recon == "ppfpa":
        eps = set_epsilon_from_noise(sample.sigma, y.size, settings.eps_mult)
        return ppfpa(y, C, settings.denoiser, eps=eps, mu=settings.mu, max_iter=settings.max_iter).image
    raise ValueError(f"unknown reconstruction {settings.recon!r}")


def run_matrix_of_experiments(
    methods: Sequence[str],
    bins: Sequence[int],
    ms: Sequence[int],
    psnrs: Sequence[float],
    settings: EvalSettings = EvalSettings(),
    net: Optional[CalibNet] = None,
    scene_dir: Optional[str] = None,
    dump_dir=None,
) -> List[EvalRecord]:
    """One record per (method, bin, m, input pSNR) cell, averaged over samples.

    ``calibfpa`` cells without a network are emitted with status
    ``"skipped: no checkpoint"`` and NaN metrics. With ``dump_dir`` set, the
    first reconstruction of every cell is written as a 16-bit PGM.
    """
    records: List[EvalRecord] = []
    if not methods:
        return records
    source = SceneSource(scene_dir)
    nan = float("nan")
    for k in bins:
        for m in ms:
            for q in psnrs:
                samples = eval_samples(settings, k, m, q, source)
                for method in methods:
                    if method == "calibfpa" and net is None:
                        records.append(EvalRecord(method, k, m, q, nan, nan, nan, 0.0, 0, "skipped: no checkpoint"))
                        continue
                    t0 = time.perf_counter()
                    mp, rp, rs = [], [], []
                    for j, sample in enumerate(samples):
                        ctx = CorrectionContext(
                            psf=airy_psf(sample.radius),
                            sr=settings.block,
                            rl_iters=settings.rl_iters,
                            net=net,
                            masks=sample.masks,
                            bin=int(np.clip(k + settings.bin_offset, 0, N_BINS - 1)),
                        )
                        corrected = correct_measurements(method, sample.meas, ctx)
                        mp.append(np.mean([psnr(t, c) for t, c in zip(sample.target, corrected)]))
                        if settings.recon != "none":
                            img = reconstruct_sample(sample, corrected, settings)
                            rp.append(psnr(sample.scene, img))
                            rs.append(ssim(sample.scene, img))
                            if dump_dir is not None and j == 0:
                                Path(dump_dir).mkdir(parents=True, exist_ok=True)
                                tensorio.write_pgm16(Path(dump_dir) / f"{method}_bin{k}_m{m}_psnr{q:g}.pgm", img)
                    records.append(
                        EvalRecord(
                            method,
                            k,
                            m,
                            q,
                            float(np.mean(mp)),
                            float(np.mean(rp)) if rp else nan,
                            float(np.mean(rs)) if rs else nan,
                            time.perf_counter() - t0,
                            len(samples),
                        )
                    )
    return records


def write_table(records: Iterable[EvalRecord], path) -> None:
    """Tab-separated table with a header row, sorted by (method, bin, m, pSNR)."""
    rows = sorted(records, key=lambda r: (r.method, r.bin, r.m, r.input_psnr))
    with open(path, "w") as f:
        f.write("\t".join(EvalRecord.COLUMNS) + "\n")
        for r in rows:
            vals = [getattr(r, c) for c in EvalRecord.COLUMNS]
            f.write("\t".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in vals) + "\n")
