"""Online measurement calibration.

Three ways to map a blurred snapshot back towards its blur-free target:

* ``raw``: leave it alone,
* ``lucy``: Richardson-Lucy deconvolution with the PSF projected to LR,
* ``calibfpa``: the four-block correction network trained with an l1 loss.

Network layout (defaults ``n_dl=2, n_sl=1, n_cl=6, n_c=32, n_sc=4``)::

    radius one-hot --MLP--> softplus latents r (2 n_c)
    mask (HR)  --n_sl conv--> pixel-unshuffle --reduce conv--> n_c @ LR
    meas (LR)  --n_dl conv--------------------------------> n_c @ LR
    concat / r --n_cl conv--> final conv (1 ch) --+ meas--> corrected

The final convolution starts at zero, so an untrained network is the
identity on measurements.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from calibfpa import tensorio
from calibfpa.errors import NumericalError
from calibfpa.optics import Psf, convolve2d, lr_psf
from calibfpa.tensornet import (
    Adam,
    Conv2d,
    LeakyReLU,
    Linear,
    PixelUnshuffle,
    Sequential,
    Softplus,
    conv_bn_lrelu,
    l1_loss,
)

log = logging.getLogger(__name__)

N_BINS = 9
R_MIN, R_MAX = 1.5, 10.5
LATENT_FLOOR = 1e-3
DEFAULT_RL_ITERS = 30


# ---------------------------------------------------------------------------
# Radius bins
# ---------------------------------------------------------------------------


def radius_bin_index(r: float) -> int:
    """Bin ``k`` covers ``[1.5 + k, 2.5 + k)``; edges go to the upper bin."""
    if not R_MIN <= r < R_MAX:
        raise ValueError(f"radius {r} outside [{R_MIN}, {R_MAX})")
    return min(int(np.floor(r - R_MIN)), N_BINS - 1)


def radius_bin(r: float) -> np.ndarray:
    """One-hot encoding (length 9) of the radius interval containing ``r``."""
    out = np.zeros(N_BINS)
    out[radius_bin_index(r)] = 1.0
    return out


def bin_interval(k: int) -> Tuple[float, float]:
    if not 0 <= k < N_BINS:
        raise ValueError(f"bin index {k} outside 0..{N_BINS - 1}")
    return R_MIN + k, R_MIN + k + 1


def one_hot(bins: Sequence[int]) -> np.ndarray:
    bins = np.asarray(bins, dtype=int)
    out = np.zeros((bins.size, N_BINS))
    out[np.arange(bins.size), bins] = 1.0
    return out


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------


@dataclass
class CalibDataset:
    """Stacked calibration samples.

    masks (n, N1, N2), meas (n, M1, M2), target (n, M1, M2), radius (n,),
    bins (n,) int.
    """

    masks: np.ndarray
    meas: np.ndarray
    target: np.ndarray
    radius: np.ndarray
    bins: np.ndarray

    def __post_init__(self):
        n = len(self.meas)
        if not (len(self.masks) == len(self.target) == len(self.radius) == len(self.bins) == n):
            raise ValueError("dataset fields disagree on sample count")
        if self.meas.shape != self.target.shape:
            raise ValueError("measurement and target shapes differ")
        n1, n2 = self.masks.shape[1:]
        m1, m2 = self.meas.shape[1:]
        if n1 % m1 or n2 % m2:
            raise ValueError(f"mask shape {(n1, n2)} is not a multiple of LR shape {(m1, m2)}")

    def __len__(self):
        return len(self.meas)

    @property
    def block(self) -> Tuple[int, int]:
        return self.masks.shape[1] // self.meas.shape[1], self.masks.shape[2] // self.meas.shape[2]

    def subset(self, idx) -> "CalibDataset":
        return CalibDataset(self.masks[idx], self.meas[idx], self.target[idx], self.radius[idx], self.bins[idx])


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibNetConfig:
    block: Tuple[int, int] = (5, 5)
    n_dl: int = 2
    n_sl: int = 1
    n_cl: int = 6
    n_c: int = 32
    n_sc: int = 4
    # ablations
    slm_coding: bool = True
    downsample: str = "unshuffle"  # or "strided"

    def __post_init__(self):
        if self.downsample not in ("unshuffle", "strided"):
            raise ValueError(f"unknown downsample mode {self.downsample!r}")
        object.__setattr__(self, "block", tuple(int(b) for b in self.block))


class CalibNet:
    """Correction network ``g(mask, y, radius_bin) -> corrected y``."""

    def __init__(self, config: CalibNetConfig = CalibNetConfig(), seed=0):
        self.config = cfg = config
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rngs = iter(np.random.default_rng(s) for s in ss.spawn(64))
        s1, s2 = cfg.block
        nc = cfg.n_c

        self.radius_mlp = Sequential(
            Linear(N_BINS, 2 * nc, next(rngs)), LeakyReLU(), Linear(2 * nc, 2 * nc, next(rngs)), Softplus(LATENT_FLOOR)
        )
        if cfg.slm_coding:
            slm = [conv_bn_lrelu(1 if i == 0 else cfg.n_sc, cfg.n_sc, next(rngs)) for i in range(cfg.n_sl)]
            if cfg.downsample == "unshuffle":
                slm.append(PixelUnshuffle(s1, s2))
            else:
                # strided ablation: one learned s1 x s2 / stride-s convolution
                assert s1 == s2, "strided ablation needs a square block"
                slm.append(Conv2d(cfg.n_sc, cfg.n_sc * s1 * s2, s1, s1, 0, bias=False, rng=next(rngs)))
                slm.append(LeakyReLU())
            slm.append(conv_bn_lrelu(cfg.n_sc * s1 * s2, nc, next(rngs)))
            self.slm = Sequential(*slm)
        else:
            self.slm = None
        self.fpa = Sequential(*[conv_bn_lrelu(1 if i == 0 else nc, nc, next(rngs)) for i in range(cfg.n_dl)])
        fused_in = 2 * nc if cfg.slm_coding else nc
        self.fusion = Sequential(
            *[conv_bn_lrelu(fused_in if i == 0 else nc, nc, next(rngs)) for i in range(cfg.n_cl)]
        )
        self.final = Conv2d(nc, 1, 3, 1, 1, bias=True, rng=next(rngs))
        self.final.params["weight"][:] = 0.0
        self._cache = None

    # -- parameter bookkeeping ------------------------------------------------

    def _blocks(self):
        out = [("radius", self.radius_mlp)]
        if self.slm is not None:
            out.append(("slm", self.slm))
        out += [("fpa", self.fpa), ("fusion", self.fusion), ("final", Sequential(self.final))]
        return out

    def layers(self):
        for bname, block in self._blocks():
            for lname, layer in block.named_layers(bname + "."):
                yield lname, layer

    def named_params(self):
        """``(name, array)`` for every learnable tensor, fixed order."""
        for lname, layer in self.layers():
            for k in sorted(layer.params):
                yield f"{lname}.{k}", layer.params[k]

    def named_grads(self):
        for lname, layer in self.layers():
            for k in sorted(layer.params):
                yield f"{lname}.{k}", layer.grads[k]

    def named_buffers(self):
        for lname, layer in self.layers():
            for k in sorted(layer.buffers):
                yield f"{lname}.{k}", layer.buffers[k]

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {k: v.copy() for k, v in self.named_params()}
        out.update({k: v.copy() for k, v in self.named_buffers()})
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        targets = dict(self.named_params())
        targets.update(self.named_buffers())
        missing = set(targets) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:3]}...")
        for k, arr in targets.items():
            if arr.shape != state[k].shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {arr.shape}")
            arr[...] = state[k]

    def zero_grad(self):
        for _, layer in self.layers():
            layer.zero_grad()

    # -- forward / backward ---------------------------------------------------

    def forward(self, masks, meas, onehot, train: bool = False) -> np.ndarray:
        """Correct a batch.

        masks (B, N1, N2), meas (B, M1, M2), onehot (B, 9) -> (B, M1, M2).
        """
        masks = np.asarray(masks, dtype=np.float64)
        meas = np.asarray(meas, dtype=np.float64)
        onehot = np.asarray(onehot, dtype=np.float64)
        if masks.ndim != 3 or meas.ndim != 3 or onehot.shape != (len(meas), N_BINS):
            raise ValueError("expected masks (B,N1,N2), meas (B,M1,M2), onehot (B,9)")
        s1, s2 = self.config.block
        if masks.shape[0] != meas.shape[0] or masks.shape[1:] != (meas.shape[1] * s1, meas.shape[2] * s2):
            raise ValueError(f"mask batch {masks.shape} incompatible with measurements {meas.shape}")
        y = meas[:, None]
        r = self.radius_mlp.forward(onehot, train)
        feats = [self.fpa.forward(y, train)]
        if self.slm is not None:
            feats.append(self.slm.forward(masks[:, None], train))
        cat = np.concatenate(feats, axis=1)
        rr = r[:, : cat.shape[1], None, None]
        dc = cat / rr
        out = y + self.final.forward(self.fusion.forward(dc, train), train)
        if train:
            self._cache = (cat, rr, r.shape)
        return out[:, 0]

    def backward(self, dout: np.ndarray):
        """Accumulate parameter gradients for ``d loss / d output``."""
        if self._cache is None:
            raise RuntimeError("backward called without a training forward pass")
        cat, rr, rshape = self._cache
        d = self.final.backward(dout[:, None])
        ddc = self.fusion.backward(d)
        dcat = ddc / rr
        dr = np.zeros(rshape)
        dr[:, : cat.shape[1]] = -(ddc * cat).sum(axis=(2, 3)) / rr[:, :, 0, 0] ** 2
        self.radius_mlp.backward(dr)
        nc = self.config.n_c
        self.fpa.backward(dcat[:, :nc])
        if self.slm is not None:
            self.slm.backward(dcat[:, nc:])
        self._cache = None

    def predict(self, masks, meas, bins, batch_size: int = 64) -> np.ndarray:
        bins = np.broadcast_to(np.asarray(bins, dtype=int), (len(meas),))
        out = [
            self.forward(masks[i : i + batch_size], meas[i : i + batch_size], one_hot(bins[i : i + batch_size]))
            for i in range(0, len(meas), batch_size)
        ]
        return np.concatenate(out, axis=0)


def save_checkpoint(net: CalibNet, stem):
    """Write ``<stem>.cfpa`` (flat float64 payload) and ``<stem>.json`` manifest."""
    state = net.state_dict()
    entries, offset = [], 0
    for name, arr in state.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    flat = np.concatenate([a.ravel() for a in state.values()])
    tensorio.write_tensor(f"{stem}.cfpa", flat)
    manifest = {"format": "calibfpa-checkpoint", "config": asdict(net.config), "tensors": entries}
    with open(f"{stem}.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_checkpoint(stem) -> CalibNet:
    with open(f"{stem}.json") as f:
        manifest = json.load(f)
    cfg = manifest["config"]
    cfg["block"] = tuple(cfg["block"])
    net = CalibNet(CalibNetConfig(**cfg))
    flat = tensorio.read_tensor(f"{stem}.cfpa")
    state = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        state[e["name"]] = flat[e["offset"] : e["offset"] + n].reshape(e["shape"])
    net.load_state_dict(state)
    return net


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    net: CalibNet
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_l1: float = float("inf")


def evaluate_l1(net: CalibNet, data: CalibDataset, batch_size: int = 64) -> float:
    pred = net.predict(data.masks, data.meas, data.bins, batch_size)
    return float(np.abs(pred - data.target).mean())


def train_calib(
    train: CalibDataset,
    val: Optional[CalibDataset] = None,
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 1e-3,
    lr_decay: float = 0.999,
    seed: int = 0,
    config: Optional[CalibNetConfig] = None,
    log_fn: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Fit the correction network with Adam on the mean l1 loss.

    The validation l1 is measured before training and after every epoch; the
    parameters with the lowest value are returned. ``log_fn`` receives one
    dict per epoch (``epoch, train_l1, val_l1, lr``); epoch 0 is the
    untrained network.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    val = train if val is None else val
    if config is None:
        config = CalibNetConfig(block=train.block)
    elif tuple(config.block) != train.block:
        raise ValueError(f"config block {config.block} does not match data block {train.block}")
    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_seed = ss.spawn(2)
    net = CalibNet(config, seed=init_seed)
    rng = np.random.default_rng(shuffle_seed)
    opt = Adam(lr=lr, decay=lr_decay)
    params = [p for _, p in net.named_params()]
    onehots = one_hot(train.bins)

    best_state = net.state_dict()
    best_val = evaluate_l1(net, val)
    result = TrainResult(net, best_epoch=0, best_val_l1=best_val)
    entry = {"epoch": 0, "train_l1": evaluate_l1(net, train), "val_l1": best_val, "lr": opt.lr}
    result.history.append(entry)
    if log_fn:
        log_fn(entry)

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = np.sort(order[start : start + batch_size])
            net.zero_grad()
            pred = net.forward(train.masks[idx], train.meas[idx], onehots[idx], train=True)
            loss, grad = l1_loss(pred, train.target[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch starting {start}")
            net.backward(grad)
            opt.step(params, [g for _, g in net.named_grads()])
            total += loss * len(idx)
            count += len(idx)
        opt.epoch_end()
        val_l1 = evaluate_l1(net, val)
        entry = {"epoch": epoch, "train_l1": total / count, "val_l1": val_l1, "lr": opt.lr}
        result.history.append(entry)
        if log_fn:
            log_fn(entry)
        log.info("epoch %d train_l1 %.6g val_l1 %.6g", epoch, entry["train_l1"], val_l1)
        if val_l1 < best_val:
            best_val, best_state = val_l1, net.state_dict()
            result.best_epoch, result.best_val_l1 = epoch, val_l1
    net.load_state_dict(best_state)
    return result


# ---------------------------------------------------------------------------
# Richardson-Lucy baseline
# ---------------------------------------------------------------------------


def _circular_convolve(img, kernel):
    h, w = img.shape
    kh, kw = kernel.shape
    folded = np.zeros((h, w))
    rows = (np.arange(kh) - kh // 2) % h
    cols = (np.arange(kw) - kw // 2) % w
    np.add.at(folded, (rows[:, None], cols[None, :]), kernel)
    return np.real(np.fft.ifft2(np.fft.fft2(img) * np.fft.fft2(folded)))


def lucy_richardson(y: np.ndarray, psf: Psf, iters: int = DEFAULT_RL_ITERS, boundary: str = "zero") -> np.ndarray:
    """Richardson-Lucy deconvolution of one LR image.

    Negative inputs are clamped to zero first; the estimate starts at the
    clamped input. ``boundary`` is ``"zero"`` (same padding as the forward
    model) or ``"circular"``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    k = psf.kernel if isinstance(psf, Psf) else np.asarray(psf, dtype=np.float64)
    if abs(k.sum() - 1.0) > 1e-9:
        raise ValueError("Richardson-Lucy needs a unit-sum PSF")
    if boundary == "zero":
        conv = lambda img, ker: convolve2d(img, ker)  # noqa: E731
    elif boundary == "circular":
        conv = _circular_convolve
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    flipped = k[::-1, ::-1]
    y = np.maximum(np.asarray(y, dtype=np.float64), 0.0)
    u = y.copy()
    tiny = np.finfo(np.float64).tiny
    for _ in range(iters):
        blurred = conv(u, k)
        ratio = np.where(blurred > tiny, y / np.maximum(blurred, tiny), 0.0)
        u = u * conv(ratio, flipped)
        u = np.maximum(u, 0.0)
    return u


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------


METHODS = ("raw", "lucy", "calibfpa")


@dataclass
class CorrectionContext:
    """Inputs a correction method may need.

    lucy: ``psf`` (HR PSF; projected to LR here) and ``sr``.
    calibfpa: ``net``, ``masks`` (m, N1, N2) and ``bin``.
    """

    psf: Optional[Psf] = None
    sr: Optional[Tuple[int, int]] = None
    rl_iters: int = DEFAULT_RL_ITERS
    net: Optional[CalibNet] = None
    masks: Optional[np.ndarray] = None
    bin: Optional[int] = None


def correct_measurements(method: str, meas: np.ndarray, ctx: Optional[CorrectionContext] = None) -> np.ndarray:
    """Correct a stack of snapshots ``(m, M1, M2)`` one snapshot at a time."""
    meas = np.asarray(meas, dtype=np.float64)
    if meas.ndim != 3:
        raise ValueError("expected a snapshot stack (m, M1, M2)")
    ctx = ctx or CorrectionContext()
    if method == "raw":
        return meas.copy()
    if method == "lucy":
        if ctx.psf is None or ctx.sr is None:
            raise ValueError("lucy correction needs psf and sr in the context")
        kernel = lr_psf(ctx.psf, ctx.sr)
        return np.stack([lucy_richardson(y, kernel, ctx.rl_iters) for y in meas])
    if method == "calibfpa":
        if ctx.net is None or ctx.masks is None or ctx.bin is None:
            raise ValueError("calibfpa correction needs net, masks and bin in the context")
        return ctx.net.predict(np.asarray(ctx.masks, dtype=np.float64), meas, ctx.bin)
    raise ValueError(f"unknown correction method {method!r}; choose from {METHODS}")
