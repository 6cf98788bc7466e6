"""Synthetic paired-modality benchmark with known shared/specific latents.

Three independent latent blocks ``Zs1, Zs2, Zc`` (each ``n x 50``, entries
N(0, 0.5)) are mixed linearly into two 100-dimensional observations::

    X1 = T1 . [Zs1, Zc]        X2 = T2 . [Zs2, Zc]

with ``T1, T2`` drawn from Uniform(-1, 1). The ``mixed`` variant splits
``Zc`` into 35 mixed and 15 pure dimensions: only ``[Zs, Zc_mix]`` goes
through an 85x85 transform, and the 15 pure dimensions are appended as-is.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError
from .rng import stream

LATENT_DIM = 50
OBS_DIM = 100
LATENT_VAR = 0.5
N_PURE = 15
TRAIN_FRACTION = 0.8
VARIANTS = ("plain", "mixed")


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.1
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1]")


@dataclass(frozen=True)
class TrueLatents:
    Zs1: np.ndarray
    Zs2: np.ndarray
    Zc: np.ndarray


@dataclass(eq=False)
class SynthDataset:
    X1: np.ndarray
    X2: np.ndarray
    Ys1: np.ndarray
    Ys2: np.ndarray
    Yc: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    variant: str
    latents: TrueLatents | None = None
    T1: np.ndarray | None = None
    T2: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X1.shape[0]

    def labels(self) -> dict[str, np.ndarray]:
        return {"Yc": self.Yc, "Ys1": self.Ys1, "Ys2": self.Ys2}

    def split(self, part: str):
        idx = {"train": self.train_idx, "test": self.test_idx}[part]
        return self.X1[idx], self.X2[idx]

    # --- persistence -----------------------------------------------------
    def save(self, stem) -> Path:
        arrays = {"X1": self.X1, "X2": self.X2, "Ys1": self.Ys1, "Ys2": self.Ys2, "Yc": self.Yc,
                  "train_idx": self.train_idx, "test_idx": self.test_idx}
        if self.latents is not None:
            arrays.update(Zs1=self.latents.Zs1, Zs2=self.latents.Zs2, Zc=self.latents.Zc)
        if self.T1 is not None:
            arrays.update(T1=self.T1, T2=self.T2)
        meta = {"kind": "dataset", "seed": int(self.seed), "variant": self.variant, "n": self.n}
        return io.save_arrays(stem, arrays, meta)

    @classmethod
    def load(cls, stem) -> "SynthDataset":
        a, meta = io.load_arrays(stem)
        latents = None
        if "Zc" in a:
            latents = TrueLatents(a["Zs1"], a["Zs2"], a["Zc"])
        return cls(
            X1=a["X1"], X2=a["X2"],
            Ys1=a["Ys1"][:, 0].astype(np.int64), Ys2=a["Ys2"][:, 0].astype(np.int64),
            Yc=a["Yc"][:, 0].astype(np.int64),
            train_idx=a["train_idx"][:, 0].astype(np.int64),
            test_idx=a["test_idx"][:, 0].astype(np.int64),
            seed=int(meta["seed"]), variant=meta["variant"], latents=latents,
            T1=a.get("T1"), T2=a.get("T2"),
        )


def sample_latents(n: int, seed: int) -> TrueLatents:
    sd = np.sqrt(LATENT_VAR)
    return TrueLatents(
        Zs1=stream(seed, "latents", "Zs1").normal(0.0, sd, size=(n, LATENT_DIM)),
        Zs2=stream(seed, "latents", "Zs2").normal(0.0, sd, size=(n, LATENT_DIM)),
        Zc=stream(seed, "latents", "Zc").normal(0.0, sd, size=(n, LATENT_DIM)),
    )


def sample_transforms(seed: int, dim: int = OBS_DIM) -> tuple[np.ndarray, np.ndarray]:
    return (stream(seed, "transforms", "T1").uniform(-1.0, 1.0, size=(dim, dim)),
            stream(seed, "transforms", "T2").uniform(-1.0, 1.0, size=(dim, dim)))


def mix(latents: TrueLatents, T1: np.ndarray, T2: np.ndarray, variant: str = "plain"):
    """Observations from latents; linear in the latents for a fixed variant."""
    if variant == "plain":
        X1 = np.hstack([latents.Zs1, latents.Zc]) @ T1.T
        X2 = np.hstack([latents.Zs2, latents.Zc]) @ T2.T
    elif variant == "mixed":
        n_mix = LATENT_DIM - N_PURE
        zc_mix, zc_pure = latents.Zc[:, :n_mix], latents.Zc[:, n_mix:]
        X1 = np.hstack([np.hstack([latents.Zs1, zc_mix]) @ T1.T, zc_pure])
        X2 = np.hstack([np.hstack([latents.Zs2, zc_mix]) @ T2.T, zc_pure])
    else:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return X1, X2


def make_labels(latents: TrueLatents, seed: int):
    """Median split of a random projection of each latent block.

    ``Ys1`` depends only on ``Zs1``, ``Ys2`` on ``Zs2`` and ``Yc`` on ``Zc``.
    """
    out = []
    for name in ("Zs1", "Zs2", "Zc"):
        z = getattr(latents, name)
        w = stream(seed, "labels", name).normal(size=z.shape[1])
        w /= np.linalg.norm(w)
        s = z @ w
        out.append((s > np.median(s)).astype(np.int64))
    return tuple(out)


def generate(n: int, seed: int, variant: str = "plain") -> SynthDataset:
    if n < 100:
        raise ConfigError(f"n must be >= 100, got {n}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    latents = sample_latents(n, seed)
    dim = OBS_DIM if variant == "plain" else OBS_DIM - N_PURE
    T1, T2 = sample_transforms(seed, dim)
    X1, X2 = mix(latents, T1, T2, variant)
    Ys1, Ys2, Yc = make_labels(latents, seed)
    perm = stream(seed, "split").permutation(n)
    n_train = int(round(TRAIN_FRACTION * n))
    return SynthDataset(
        X1=X1, X2=X2, Ys1=Ys1, Ys2=Ys2, Yc=Yc,
        train_idx=np.sort(perm[:n_train]), test_idx=np.sort(perm[n_train:]),
        seed=seed, variant=variant, latents=latents, T1=T1, T2=T2,
    )


def augment(X: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise, then independent coordinate dropout."""
    out = np.array(X, dtype=np.float64, copy=True)
    if cfg.noise_sigma > 0:
        out += rng.normal(0.0, cfg.noise_sigma, size=out.shape)
    if cfg.dropout_rate > 0:
        out[rng.random(out.shape) < cfg.dropout_rate] = 0.0
    return out
