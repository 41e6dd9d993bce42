"""Alternating generator/discriminator training, ablation variants and checkpoints.

One optimisation step on a batch of ground-truth images:

1. simulate the low-resolution input ``lr`` and its measured k-space ``ks_lr``;
2. run ``cycles_per_step`` generator cycles; cycle ``i`` reconstructs from the
   previous cycle's low-resolution image and accumulates the frequency- and
   image-domain cyclic losses (averaged over cycles);
3. one discriminator step on (ground truth, detached last reconstruction);
4. one generator step on ``adv_g + alpha * fre + beta * img``.

The cyclic terms are built from generator outputs only, so they never reach
discriminator parameters.
"""

from dataclasses import dataclass, field, asdict, replace
import copy
import csv
import hashlib
import json
import logging
import math
import os
import struct
import tempfile

import numpy as np
import torch

from . import kspace
from .errors import CheckpointError, ConfigError, TrainingError
from .losses import (LossBreakdown, LossWeights, adv_loss_d, adv_loss_g, cyclic_freq,
                     cyclic_img, total_g_loss)
from .network import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig

__all__ = [
    "TrainConfig",
    "TrainState",
    "ABLATION_VARIANTS",
    "ABLATION_FLAGS",
    "make_ablation_config",
    "init_state",
    "train_step",
    "generator_cycles",
    "fit",
    "reconstruct",
    "save_checkpoint",
    "load_checkpoint",
    "load_config",
    "parse_config",
    "dump_config",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

log = logging.getLogger(__name__)

ABLATION_VARIANTS = ("a", "b", "c", "full")
# (cyclic loss, spatial attention, channel attention)
ABLATION_FLAGS = {
    "a": (False, True, True),
    "b": (True, False, True),
    "c": (True, True, False),
    "full": (True, True, True),
}

CHECKPOINT_MAGIC = b"HPMRCKPT"
CHECKPOINT_VERSION = (1, 0, 0)
LOG_COLUMNS = ["step"] + LossBreakdown.columns()


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 8
    alpha: float = 1.0
    beta: float = 10.0
    cycles_per_step: int = 1
    use_cyclic: bool = True
    ablation: str = "full"
    seed: int = 0
    mask_rate: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0       # epochs; 0 keeps only the final checkpoint
    n_phantoms: int = 200
    split_ratio: float = 0.8
    split_seed: int = 0
    manifest: str = ""
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    @property
    def weights(self):
        return LossWeights(self.alpha, self.beta)

    @property
    def image_size(self):
        return self.generator.input_size

    def validate(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning_rate, epochs and batch_size must be positive")
        if self.cycles_per_step < 1:
            raise ConfigError("cycles_per_step must be >= 1")
        if self.ablation not in ABLATION_VARIANTS:
            raise ConfigError(f"unknown ablation variant {self.ablation!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.generator.input_size != self.discriminator.input_size:
            raise ConfigError("generator and discriminator input sizes differ")
        kspace.kept_band(self.image_size, self.mask_rate)
        self.generator.validate()
        self.discriminator.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        g = GeneratorConfig(**d.pop("generator", {}))
        dc = DiscriminatorConfig(**d.pop("discriminator", {}))
        return cls(generator=g, discriminator=dc, **d)


def make_ablation_config(base, variant):
    """Return a copy of ``base`` wired for ablation ``variant`` (a, b, c or full).

    a: no cyclic loss; b: no spatial attention; c: no channel attention.
    """
    if variant not in ABLATION_FLAGS:
        raise ConfigError(f"unknown ablation variant {variant!r}; expected one of {ABLATION_VARIANTS}")
    cyclic, spatial, channel = ABLATION_FLAGS[variant]
    cfg = copy.deepcopy(base)
    cfg.ablation = variant
    cfg.use_cyclic = cyclic
    cfg.generator = replace(cfg.generator, use_spatial_attention=spatial,
                            use_channel_attention=channel)
    return cfg


# ---------------------------------------------------------------------------
# config file: key = value lines, dotted keys for the network sections

def _parse_value(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return [int(v) for v in raw.replace("[", "").replace("]", "").split(",") if v.strip()]
    return raw


def parse_config(text, base=None):
    """Parse ``key = value`` lines into a :class:`TrainConfig`.

    Blank lines and ``#`` comments are ignored. Network options use dotted
    keys, e.g. ``generator.depth = 2`` or ``discriminator.widths = 32,64,64,64``.
    """
    cfg = copy.deepcopy(base) if base is not None else TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        target, name = cfg, key
        if "." in key:
            section, name = key.split(".", 1)
            if section not in ("generator", "discriminator"):
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
            target = getattr(cfg, section)
        if not hasattr(target, name) or name.startswith("_"):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(target, name, _parse_value(value, getattr(target, name)))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if cfg.ablation != "full":
        cfg = make_ablation_config(cfg, cfg.ablation)
    return cfg.validate()


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg):
    lines = []
    d = cfg.to_dict()
    for section in ("generator", "discriminator"):
        sub = d.pop(section)
        for k, v in sub.items():
            lines.append(f"{section}.{k} = {_fmt(v)}")
    return "\n".join([f"{k} = {_fmt(v)}" for k, v in d.items()] + lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


# ---------------------------------------------------------------------------
# state

@dataclass
class TrainState:
    cfg: TrainConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int = 0

    @property
    def mask(self):
        s = self.cfg.image_size
        return kspace.make_mask(s, s, self.cfg.mask_rate)


def _adam(params, cfg):
    return torch.optim.Adam(params, lr=cfg.learning_rate,
                            betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
                            fused=True)


def init_state(cfg, dtype=torch.float32):
    cfg.validate()
    torch.manual_seed(cfg.seed)
    g = Generator(cfg.generator).to(dtype)
    d = Discriminator(cfg.discriminator).to(dtype)
    return TrainState(cfg, g, d, _adam(g.parameters(), cfg), _adam(d.parameters(), cfg))


def _as_batch(batch, dtype):
    x = torch.as_tensor(np.asarray(batch) if not isinstance(batch, torch.Tensor) else batch,
                        dtype=dtype)
    if x.dim() == 2:
        x = x[None]
    if x.dim() == 3:
        x = x[:, None]
    return x


def generator_cycles(generator, lr, ks_lr, hr_gt, mask, cycles=1, cyclic=True):
    """Run the generator cycles; return ``(hr_re_last, fre, img)`` (losses cycle-averaged).

    With ``cyclic=False`` the loss terms are returned as ``None``.
    """
    inp = lr
    fre = img = None
    for _ in range(cycles):
        hr_re = generator(inp)
        ks_re = kspace.apply_mask(kspace.fft2(hr_re, check=False), mask)
        if cyclic:
            f = cyclic_freq(ks_lr, hr_re, mask)
            i = cyclic_img(hr_gt, hr_re)
            fre = f if fre is None else fre + f
            img = i if img is None else img + i
        inp = kspace.ifft2(ks_re, check=False)
    if cyclic:
        fre, img = fre / cycles, img / cycles
    return hr_re, fre, img


def train_step(state, batch, batch_index=None):
    """One D step then one G step on ``batch`` of shape (B, H, W); returns a LossBreakdown."""
    cfg = state.cfg
    G, D = state.generator, state.discriminator
    dtype = next(G.parameters()).dtype
    hr_gt = _as_batch(batch, dtype)
    if hr_gt.shape[0] == 0:
        raise ConfigError("empty batch")
    mask = state.mask
    with torch.no_grad():
        lr, ks_lr = kspace.degrade_with_kspace(hr_gt, mask)

    G.train()
    D.train()
    hr_re, fre, img = generator_cycles(G, lr, ks_lr, hr_gt, mask,
                                       cfg.cycles_per_step, cfg.use_cyclic)

    logit_real, _ = D(hr_gt)
    logit_fake, _ = D(hr_re.detach())
    loss_d = adv_loss_d(logit_real, logit_fake)
    state.opt_d.zero_grad(set_to_none=True)
    loss_d.backward()
    state.opt_d.step()

    for p in D.parameters():
        p.requires_grad_(False)
    try:
        logit_g, _ = D(hr_re)
        adv_g = adv_loss_g(logit_g)
    finally:
        for p in D.parameters():
            p.requires_grad_(True)
    if cfg.use_cyclic:
        total = total_g_loss(adv_g, fre, img, cfg.weights)
    else:
        total = adv_g
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()

    values = [adv_g.item(), loss_d.item(),
              fre.item() if fre is not None else 0.0,
              img.item() if img is not None else 0.0,
              total.item()]
    if not all(math.isfinite(v) for v in values):
        where = f"step {state.step}" + (f", batch indices {list(batch_index)}" if batch_index is not None else "")
        raise TrainingError(f"non-finite loss at {where}: {dict(zip(LossBreakdown.columns(), values))}")
    state.opt_g.step()
    state.step += 1
    return LossBreakdown(*values)


def batch_indices(n, batch_size, seed, step):
    """Image indices used at global ``step``; each epoch is a fresh permutation."""
    per_epoch = math.ceil(n / batch_size)
    epoch, k = divmod(step, per_epoch)
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return order[k * batch_size:(k + 1) * batch_size]


def fit(dataset, cfg=None, state=None, out_dir=None, log_path=None, max_steps=None,
        callback=None):
    """Train on ``dataset`` (N, H, W) for ``cfg.epochs`` epochs.

    Pass ``state`` to resume; the step counter determines where training
    continues. Returns the final :class:`TrainState`. With ``out_dir`` set the
    per-step CSV log (``train_log.csv``), periodic checkpoints and the final
    checkpoint (``final.ckpt``) are written there.
    """
    if state is None:
        state = init_state(cfg)
    cfg = state.cfg
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 3 or data.shape[0] == 0:
        raise ConfigError("dataset must be a non-empty (N, H, W) stack")
    n = data.shape[0]
    per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if log_path is None:
            log_path = os.path.join(out_dir, "train_log.csv")
    writer = fh = None
    if log_path is not None:
        fresh = state.step == 0 or not os.path.exists(log_path)
        if not fresh:
            _truncate_log(log_path, state.step)
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_COLUMNS)
    history = []
    try:
        while state.step < total_steps:
            idx = batch_indices(n, cfg.batch_size, cfg.seed, state.step)
            step = state.step
            losses = train_step(state, data[idx], batch_index=idx)
            history.append(losses)
            if writer is not None:
                writer.writerow([step] + [repr(v) for v in losses.as_row()])
            if callback is not None:
                callback(step, losses)
            if step % max(1, per_epoch) == 0:
                log.info("step %d/%d %s", step, total_steps, losses)
            if (out_dir is not None and cfg.checkpoint_every
                    and state.step % (cfg.checkpoint_every * per_epoch) == 0):
                save_checkpoint(state, os.path.join(out_dir, f"step{state.step:07d}.ckpt"))
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_checkpoint(state, os.path.join(out_dir, "final.ckpt"))
    state.history = history
    return state


def _truncate_log(path, step):
    """Drop log rows at or after ``step`` so a resumed run appends cleanly."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) < step]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(keep)


@torch.no_grad()
def reconstruct(generator, lr_images, batch_size=16):
    """Apply ``generator`` to a stack of low-resolution images; returns numpy (N, H, W)."""
    generator.eval()
    dtype = next(generator.parameters()).dtype
    out = []
    lr_images = np.asarray(lr_images)
    for i in range(0, len(lr_images), batch_size):
        x = _as_batch(lr_images[i:i + batch_size], dtype)
        out.append(generator(x)[:, 0].double().numpy())
    return np.concatenate(out) if out else np.zeros_like(lr_images)


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: MAGIC | u16 major | u16 minor | u16 patch | u64 header_len | header JSON
#         | raw tensor bytes | sha256 of everything before it

def _optimizer_tensors(prefix, opt, names):
    sd = opt.state_dict()
    out = {}
    for idx, name in enumerate(names):
        st = sd["state"].get(idx)
        if st is None:
            continue
        for key in ("step", "exp_avg", "exp_avg_sq"):
            t = st[key]
            out[f"{prefix}/{name}/{key}"] = torch.as_tensor(t)
    return out


def _state_tensors(state):
    g_names = [n for n, _ in state.generator.named_parameters()]
    d_names = [n for n, _ in state.discriminator.named_parameters()]
    tensors = {}
    tensors.update({f"G/{n}": p.detach() for n, p in state.generator.named_parameters()})
    tensors.update({f"D/{n}": p.detach() for n, p in state.discriminator.named_parameters()})
    tensors.update(_optimizer_tensors("opt_g", state.opt_g, g_names))
    tensors.update(_optimizer_tensors("opt_d", state.opt_d, d_names))
    tensors["rng/torch"] = torch.get_rng_state()
    return tensors


def save_checkpoint(state, path):
    """Atomically write ``state`` to ``path``."""
    tensors = _state_tensors(state)
    index = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name].contiguous().cpu().numpy()
        raw = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({
        "version": ".".join(map(str, CHECKPOINT_VERSION)),
        "config": state.cfg.to_dict(),
        "step": state.step,
        "tensors": index,
    }, sort_keys=True).encode()
    digest = hashlib.sha256()
    head = CHECKPOINT_MAGIC + struct.pack("<HHHQ", *CHECKPOINT_VERSION, len(header)) + header
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            for part in [head] + chunks:
                digest.update(part)
                fh.write(part)
            fh.write(digest.digest())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    fixed = len(CHECKPOINT_MAGIC) + struct.calcsize("<HHHQ")
    if len(blob) < fixed + 32 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or truncated)")
    major, minor, patch, hlen = struct.unpack("<HHHQ", blob[len(CHECKPOINT_MAGIC):fixed])
    if major != CHECKPOINT_VERSION[0]:
        raise CheckpointError(f"{path}: checkpoint version {major}.{minor}.{patch} is not supported")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated file)")
    try:
        header = json.loads(body[fixed:fixed + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = memoryview(body)[fixed + hlen:]
    tensors = {}
    for ent in header["tensors"]:
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise CheckpointError(f"{path}: tensor {ent['name']} is truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"])
        tensors[ent["name"]] = torch.from_numpy(arr.copy())
    return header, tensors


def _load_optimizer(opt, prefix, names, tensors):
    sd = opt.state_dict()
    state = {}
    for idx, name in enumerate(names):
        key = f"{prefix}/{name}/step"
        if key in tensors:
            state[idx] = {k: tensors[f"{prefix}/{name}/{k}"]
                          for k in ("step", "exp_avg", "exp_avg_sq")}
    opt.load_state_dict({"state": state, "param_groups": sd["param_groups"]})


def load_checkpoint(path):
    """Rebuild a :class:`TrainState` from ``path``; nothing is modified on failure."""
    header, tensors = _read_checkpoint(path)
    try:
        cfg = TrainConfig.from_dict(header["config"])
    except TypeError as exc:
        raise CheckpointError(f"{path}: config does not match this version") from exc
    dtype = tensors[next(k for k in tensors if k.startswith("G/"))].dtype
    state = init_state(cfg, dtype=dtype)
    with torch.no_grad():
        for prefix, module in (("G", state.generator), ("D", state.discriminator)):
            params = dict(module.named_parameters())
            expected = {f"{prefix}/{n}" for n in params}
            present = {k for k in tensors if k.startswith(prefix + "/")}
            if expected != present:
                raise CheckpointError(f"{path}: parameter set of {prefix} does not match config")
            for n, p in params.items():
                t = tensors[f"{prefix}/{n}"]
                if tuple(t.shape) != tuple(p.shape):
                    raise CheckpointError(f"{path}: shape mismatch for {prefix}/{n}")
                p.copy_(t)
    _load_optimizer(state.opt_g, "opt_g", [n for n, _ in state.generator.named_parameters()], tensors)
    _load_optimizer(state.opt_d, "opt_d", [n for n, _ in state.discriminator.named_parameters()], tensors)
    torch.set_rng_state(tensors["rng/torch"])
    state.step = int(header["step"])
    return state
