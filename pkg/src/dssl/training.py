"""Two-step training (shared, then specific) and the joint-optimization baseline."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import io
from .errors import ConfigError, NumericError
from .losses import LossConfig, shared_codes, step1_loss, step2_loss, step2_terms, info_nce
from .numerics import autodiff as ad
from .numerics.adam import Adam
from .numerics.mlp import Mlp
from .rng import stream
from .synthdata import AugmentConfig, SynthDataset, augment

log = logging.getLogger(__name__)


def _check_common(cfg):
    for name in ("latent_dim", "hidden", "depth", "epochs", "batch_size"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.lr < 0:
        raise ConfigError("lr must be >= 0")
    if cfg.tau <= 0:
        raise ConfigError("tau must be > 0")


@dataclass(frozen=True)
class Step1Config:
    beta: float = 0.0
    tau: float = 0.5
    latent_dim: int = 32
    hidden: int = 512
    depth: int = 3
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    noise_sigma: float = 0.1
    dropout_rate: float = 0.1
    kappa: float = 1.0
    vmf_sampling: bool = False

    def __post_init__(self):
        _check_common(self)
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.noise_sigma, self.dropout_rate)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(tau=self.tau, beta=self.beta, kappa=self.kappa,
                          vmf_sampling=self.vmf_sampling)


@dataclass(frozen=True)
class Step2Config:
    lam: float = 0.0
    tau: float = 0.5
    latent_dim: int = 32
    hidden: int = 512
    depth: int = 3
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    noise_sigma: float = 0.1
    dropout_rate: float = 0.1

    def __post_init__(self):
        _check_common(self)
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.noise_sigma, self.dropout_rate)


@dataclass(frozen=True)
class JointOptConfig:
    a: float = 1.0
    lam: float = 0.0
    tau: float = 0.5
    latent_dim: int = 32
    specific_dim: int = 32
    hidden: int = 512
    depth: int = 3
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    noise_sigma: float = 0.1
    dropout_rate: float = 0.1

    def __post_init__(self):
        _check_common(self)
        if self.a <= 0:
            raise ConfigError("a must be > 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.noise_sigma, self.dropout_rate)


def config_from_dict(cls, d: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def _dims(d_in, cfg, d_out):
    return [d_in] + [cfg.hidden] * (cfg.depth - 1) + [d_out]


def checksum(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


def _batches(train_idx, batch_size, rng):
    perm = rng.permutation(train_idx)
    b = min(batch_size, len(perm))
    for start in range(0, len(perm) - b + 1, b):
        yield perm[start:start + b]


def _check_finite(loss: ad.Node, where: str, epoch: int):
    v = loss.value[0, 0]
    if not np.isfinite(v):
        raise NumericError(f"{where}: loss diverged to {v} in epoch {epoch}")


class _EpochLoss:
    """Running mean and standard error of the batch losses of one epoch."""

    def __init__(self):
        self.values = []

    def add(self, loss: ad.Node):
        self.values.append(float(loss.value[0, 0]))

    def close(self, model):
        v = np.asarray(self.values)
        model.loss_trace.append(float(v.mean()) if v.size else 0.0)
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        model.loss_se_trace.append(se)


def significant_rises(trace, se_trace, z: float = 3.0, start: int = 0) -> list[tuple[int, float]]:
    """Epochs ``i >= start + 1`` whose mean loss rose by more than ``z`` standard errors.

    The bound is ``z * sqrt(se[i-1]^2 + se[i]^2)``, the spread of a difference of
    two independent epoch means; returns ``(epoch, rise)`` pairs.
    """
    out = []
    for i in range(max(start, 0) + 1, len(trace)):
        rise = trace[i] - trace[i - 1]
        if rise > z * np.hypot(se_trace[i - 1], se_trace[i]):
            out.append((i, float(rise)))
    return out


# --- step 1 ---------------------------------------------------------------

@dataclass(eq=False)
class Step1Model:
    enc_c1: Mlp
    enc_c2: Mlp
    config: Step1Config
    loss_trace: list = field(default_factory=list)
    loss_se_trace: list = field(default_factory=list)

    def encoders(self):
        return (self.enc_c1, self.enc_c2)

    def parameters(self):
        return self.enc_c1.parameters() + self.enc_c2.parameters()

    def checksum(self) -> str:
        return checksum(self.parameters())

    def save(self, stem, extra_meta=None):
        arrays = {**self.enc_c1.named_arrays(), **self.enc_c2.named_arrays()}
        meta = {"kind": "step1", "config": asdict(self.config), "loss_trace": self.loss_trace,
                "loss_se_trace": self.loss_se_trace,
                "dims": [self.enc_c1.dims, self.enc_c2.dims], **(extra_meta or {})}
        return io.save_arrays(stem, arrays, meta)

    @classmethod
    def load(cls, stem) -> "Step1Model":
        arrays, meta = io.load_arrays(stem)
        if meta.get("kind") != "step1":
            raise ConfigError(f"{stem} is not a step-1 checkpoint")
        encs = [_mlp_from(arrays, name, len(dims) - 1)
                for name, dims in zip(("enc_c1", "enc_c2"), meta["dims"])]
        return cls(encs[0], encs[1], config_from_dict(Step1Config, meta["config"]),
                   list(meta["loss_trace"]), list(meta["loss_se_trace"]))


def _mlp_from(arrays, name, depth) -> Mlp:
    ws = [arrays[f"{name}.W{i}"] for i in range(depth)]
    bs = [arrays[f"{name}.b{i}"] for i in range(depth)]
    return Mlp.from_arrays(ws, bs, name)


def init_shared_encoders(d1, d2, cfg) -> tuple[Mlp, Mlp]:
    return (Mlp(_dims(d1, cfg, cfg.latent_dim), stream(cfg.seed, "init", "enc_c1"), "enc_c1"),
            Mlp(_dims(d2, cfg, cfg.latent_dim), stream(cfg.seed, "init", "enc_c2"), "enc_c2"))


def train_step1(dataset: SynthDataset, cfg: Step1Config) -> Step1Model:
    enc1, enc2 = init_shared_encoders(dataset.X1.shape[1], dataset.X2.shape[1], cfg)
    model = Step1Model(enc1, enc2, cfg)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    batch_rng = stream(cfg.seed, "batches", "shared")
    aug_rng = stream(cfg.seed, "augment", "shared")
    vmf_rng = stream(cfg.seed, "vmf")
    loss_cfg = cfg.loss
    for epoch in range(cfg.epochs):
        stats = _EpochLoss()
        for idx in _batches(dataset.train_idx, cfg.batch_size, batch_rng):
            x1 = augment(dataset.X1[idx], cfg.augment, aug_rng)
            x2 = augment(dataset.X2[idx], cfg.augment, aug_rng)
            loss = step1_loss(x1, x2, enc1, enc2, loss_cfg, vmf_rng)
            _check_finite(loss, "step1", epoch)
            opt.step(ad.backward(loss, params))
            stats.add(loss)
        stats.close(model)
        log.debug("step1 epoch %d loss %.6f", epoch, model.loss_trace[-1])
    return model


def encode_shared(model: Step1Model, X, modality: int) -> np.ndarray:
    enc = model.encoders()[modality - 1]
    return shared_codes(enc, X).value


# --- step 2 ---------------------------------------------------------------

@dataclass(eq=False)
class Step2Model:
    enc_s1: Mlp
    enc_s2: Mlp
    step1: Step1Model
    config: Step2Config
    loss_trace: list = field(default_factory=list)
    loss_se_trace: list = field(default_factory=list)

    def encoders(self):
        return (self.enc_s1, self.enc_s2)

    def parameters(self):
        return self.enc_s1.parameters() + self.enc_s2.parameters()

    def checksum(self) -> str:
        return checksum(self.parameters())

    def save(self, stem, extra_meta=None):
        arrays = {**self.enc_s1.named_arrays(), **self.enc_s2.named_arrays()}
        meta = {"kind": "step2", "config": asdict(self.config), "loss_trace": self.loss_trace,
                "loss_se_trace": self.loss_se_trace,
                "dims": [self.enc_s1.dims, self.enc_s2.dims],
                "step1_checksum": self.step1.checksum(), **(extra_meta or {})}
        return io.save_arrays(stem, arrays, meta)

    @classmethod
    def load(cls, stem, step1: Step1Model) -> "Step2Model":
        arrays, meta = io.load_arrays(stem)
        if meta.get("kind") != "step2":
            raise ConfigError(f"{stem} is not a step-2 checkpoint")
        if meta["step1_checksum"] != step1.checksum():
            raise ConfigError("step-2 checkpoint was trained on a different step-1 model")
        encs = [_mlp_from(arrays, name, len(dims) - 1)
                for name, dims in zip(("enc_s1", "enc_s2"), meta["dims"])]
        return cls(encs[0], encs[1], step1, config_from_dict(Step2Config, meta["config"]),
                   list(meta["loss_trace"]), list(meta["loss_se_trace"]))


def init_specific_encoders(d1, d2, d_c, cfg, d_s) -> tuple[Mlp, Mlp]:
    return (Mlp(_dims(d1 + d_c, cfg, d_s), stream(cfg.seed, "init", "enc_s1"), "enc_s1"),
            Mlp(_dims(d2 + d_c, cfg, d_s), stream(cfg.seed, "init", "enc_s2"), "enc_s2"))


def train_step2(dataset: SynthDataset, step1: Step1Model, cfg: Step2Config) -> Step2Model:
    d_c = step1.enc_c1.d_out
    enc1, enc2 = init_specific_encoders(dataset.X1.shape[1], dataset.X2.shape[1], d_c, cfg,
                                        cfg.latent_dim)
    model = Step2Model(enc1, enc2, step1, cfg)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    batch_rng = stream(cfg.seed, "batches", "specific")
    aug_rng = stream(cfg.seed, "augment", "specific")
    loss_cfg = LossConfig(tau=cfg.tau, lam=cfg.lam)
    frozen = step1.checksum()
    enc_c = step1.encoders()
    for epoch in range(cfg.epochs):
        stats = _EpochLoss()
        for idx in _batches(dataset.train_idx, cfg.batch_size, batch_rng):
            x1, x2 = dataset.X1[idx], dataset.X2[idx]
            view_a = (augment(x1, cfg.augment, aug_rng), augment(x2, cfg.augment, aug_rng))
            view_b = (augment(x1, cfg.augment, aug_rng), augment(x2, cfg.augment, aug_rng))
            loss = step2_loss(view_a, view_b, enc_c, (enc1, enc2), loss_cfg)
            _check_finite(loss, "step2", epoch)
            opt.step(ad.backward(loss, params))
            stats.add(loss)
        if step1.checksum() != frozen:
            raise RuntimeError("step-1 parameters changed during step-2 training")
        stats.close(model)
        log.debug("step2 epoch %d loss %.6f", epoch, model.loss_trace[-1])
    return model


def encode_specific(model: Step2Model, X, modality: int) -> np.ndarray:
    zc = encode_shared(model.step1, X, modality)
    enc = model.encoders()[modality - 1]
    return enc.forward(np.hstack([X, zc])).value


# --- joint optimization baseline ---------------------------------------------

@dataclass(eq=False)
class JointOptModel:
    enc_c1: Mlp
    enc_c2: Mlp
    enc_s1: Mlp
    enc_s2: Mlp
    config: JointOptConfig
    loss_trace: list = field(default_factory=list)
    loss_se_trace: list = field(default_factory=list)

    def shared_encoders(self):
        return (self.enc_c1, self.enc_c2)

    def specific_encoders(self):
        return (self.enc_s1, self.enc_s2)

    def parameters(self):
        return [p for e in (self.enc_c1, self.enc_c2, self.enc_s1, self.enc_s2)
                for p in e.parameters()]

    def checksum(self) -> str:
        return checksum(self.parameters())

    def as_step1(self) -> Step1Model:
        cfg = self.config
        s1 = Step1Config(tau=cfg.tau, latent_dim=cfg.latent_dim, hidden=cfg.hidden,
                         depth=cfg.depth, epochs=cfg.epochs, batch_size=cfg.batch_size,
                         lr=cfg.lr, seed=cfg.seed, noise_sigma=cfg.noise_sigma,
                         dropout_rate=cfg.dropout_rate)
        return Step1Model(self.enc_c1, self.enc_c2, s1)

    def as_step2(self) -> Step2Model:
        cfg = self.config
        s2 = Step2Config(lam=cfg.lam, tau=cfg.tau, latent_dim=cfg.specific_dim,
                         hidden=cfg.hidden, depth=cfg.depth, epochs=cfg.epochs,
                         batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed,
                         noise_sigma=cfg.noise_sigma, dropout_rate=cfg.dropout_rate)
        return Step2Model(self.enc_s1, self.enc_s2, self.as_step1(), s2)

    def save(self, stem, extra_meta=None):
        arrays = {}
        for e in (self.enc_c1, self.enc_c2, self.enc_s1, self.enc_s2):
            arrays.update(e.named_arrays())
        meta = {"kind": "jointopt", "config": asdict(self.config), "loss_trace": self.loss_trace,
                "loss_se_trace": self.loss_se_trace,
                "dims": [e.dims for e in (self.enc_c1, self.enc_c2, self.enc_s1, self.enc_s2)],
                **(extra_meta or {})}
        return io.save_arrays(stem, arrays, meta)

    @classmethod
    def load(cls, stem) -> "JointOptModel":
        arrays, meta = io.load_arrays(stem)
        if meta.get("kind") != "jointopt":
            raise ConfigError(f"{stem} is not a jointopt checkpoint")
        names = ("enc_c1", "enc_c2", "enc_s1", "enc_s2")
        encs = [_mlp_from(arrays, n, len(d) - 1) for n, d in zip(names, meta["dims"])]
        return cls(*encs, config_from_dict(JointOptConfig, meta["config"]),
                   list(meta["loss_trace"]), list(meta["loss_se_trace"]))


def train_jointopt(dataset: SynthDataset, cfg: JointOptConfig) -> JointOptModel:
    """All four encoders under one loss.

    ``InfoNCE(zc1, zc2) + a * (joint contrastive terms) + lam * orthogonality``,
    using the same estimators as the two-step method. The first augmented
    view and the batch order come from the same streams as step 1, so the
    shared part follows step 1's trajectory as ``a -> 0``, ``lam = 0``.
    """
    d1, d2 = dataset.X1.shape[1], dataset.X2.shape[1]
    c1, c2 = init_shared_encoders(d1, d2, cfg)
    s1, s2 = init_specific_encoders(d1, d2, cfg.latent_dim, cfg, cfg.specific_dim)
    model = JointOptModel(c1, c2, s1, s2, cfg)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    batch_rng = stream(cfg.seed, "batches", "shared")
    aug_rng = stream(cfg.seed, "augment", "shared")
    aug_rng_b = stream(cfg.seed, "augment", "second-view")
    for epoch in range(cfg.epochs):
        stats = _EpochLoss()
        for idx in _batches(dataset.train_idx, cfg.batch_size, batch_rng):
            x1, x2 = dataset.X1[idx], dataset.X2[idx]
            view_a = (augment(x1, cfg.augment, aug_rng), augment(x2, cfg.augment, aug_rng))
            view_b = (augment(x1, cfg.augment, aug_rng_b), augment(x2, cfg.augment, aug_rng_b))
            zs, zc = [], []
            for view in (view_a, view_b):
                c = [shared_codes(enc, x) for enc, x in zip((c1, c2), view)]
                s = [enc.forward(ad.hstack([ad.constant(x), ci]))
                     for enc, x, ci in zip((s1, s2), view, c)]
                zs.append(s)
                zc.append(c)
            nce_s, orth = step2_terms(zs, zc, cfg.tau, with_orth=cfg.lam != 0.0)
            loss = ad.add(info_nce(zc[0][0], zc[0][1], cfg.tau), ad.scale(nce_s, cfg.a))
            if orth is not None:
                loss = ad.add(loss, ad.scale(orth, cfg.lam))
            _check_finite(loss, "jointopt", epoch)
            opt.step(ad.backward(loss, params))
            stats.add(loss)
        stats.close(model)
    return model
