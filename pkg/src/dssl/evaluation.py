"""Downstream measurements: linear probes, retrieval, reconstruction gain, sweeps."""
from __future__ import annotations

import csv
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, UsageError
from .numerics import autodiff as ad
from .numerics.adam import Adam
from .numerics.mlp import Mlp
from .rng import stream
from .synthdata import SynthDataset
from .training import (
    Step1Config,
    Step1Model,
    Step2Config,
    encode_shared,
    encode_specific,
    train_step1,
    train_step2,
)

log = logging.getLogger(__name__)

TOP_N = (1, 5, 10, 20, 30)
CSV_FIELDS = ("variant", "seed", "beta", "lambda", "rep", "label", "accuracy")


# --- linear probe -----------------------------------------------------------

@dataclass
class ProbeResult:
    label: str
    train_accuracy: float
    test_accuracy: float
    weight_norm: float
    reg: float
    steps: int


def _standardize(train, test):
    mu = train.mean(axis=0, keepdims=True)
    sd = train.std(axis=0, keepdims=True)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


def linear_probe(Ztr, ytr, Zte, yte, reg=1e-4, steps=2000, lr=0.5, label="y") -> ProbeResult:
    """L2-regularized logistic regression by full-batch gradient descent.

    Features are standardized with training statistics; accuracy uses a
    0.5 threshold on the predicted probability.
    """
    ytr = np.asarray(ytr, dtype=np.float64).reshape(-1)
    yte = np.asarray(yte, dtype=np.float64).reshape(-1)
    Ztr, Zte = np.asarray(Ztr, dtype=np.float64), np.asarray(Zte, dtype=np.float64)
    if Ztr.shape[0] != ytr.shape[0] or Zte.shape[0] != yte.shape[0]:
        raise UsageError("feature and label row counts differ")
    Ztr, Zte = Ztr.reshape(len(ytr), -1), Zte.reshape(len(yte), -1)
    if np.unique(ytr).size < 2:
        raise DegenerateInputError("training labels contain a single class")
    A, B = _standardize(Ztr, Zte)
    n, d = A.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(steps):
        z = A @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        r = p - ytr
        w -= lr * (A.T @ r / n + reg * w)
        b -= lr * r.mean()

    def acc(X, y):
        return float(np.mean(((X @ w + b) > 0.0) == (y > 0.5)))

    return ProbeResult(label, acc(A, ytr), acc(B, yte), float(np.linalg.norm(w)), reg, steps)


# --- retrieval ----------------------------------------------------------------

@dataclass
class RetrievalResult:
    top_n: dict
    mrr: float
    gallery_size: int


def partner_ranks(Zq, Zk) -> np.ndarray:
    """1-based rank of each query's partner by descending cosine similarity.

    Ties are broken toward the lower gallery index.
    """
    Zq, Zk = np.asarray(Zq, dtype=np.float64), np.asarray(Zk, dtype=np.float64)
    if Zq.shape[0] != Zk.shape[0]:
        raise UsageError("query and gallery must have the same number of rows")
    S = Zq @ Zk.T
    m = S.shape[0]
    true = S[np.arange(m), np.arange(m)][:, None]
    higher = (S > true).sum(axis=1)
    tie_before = np.tril(S == true, k=-1).sum(axis=1)
    return higher + tie_before + 1


def retrieval(Zq, Zk, top_n=TOP_N) -> RetrievalResult:
    ranks = partner_ranks(Zq, Zk)
    return RetrievalResult({int(n): float(np.mean(ranks <= n)) for n in top_n},
                           float(np.mean(1.0 / ranks)), int(len(ranks)))


# --- reconstruction gain ------------------------------------------------------

@dataclass(frozen=True)
class DecoderConfig:
    hidden: int = 256
    epochs: int = 40
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0


@dataclass
class RgResult:
    r2_shared: float
    r2_specific: float
    r2_concat: float
    rg: float
    excluded_columns: list = field(default_factory=list)


def r2_score(y_true, y_pred) -> tuple[float, list]:
    """Mean per-column R^2; zero-variance columns are skipped and listed."""
    sse = ((y_true - y_pred) ** 2).sum(axis=0)
    sst = ((y_true - y_true.mean(axis=0)) ** 2).sum(axis=0)
    keep = sst > 1e-12
    excluded = [int(i) for i in np.flatnonzero(~keep)]
    if excluded:
        warnings.warn(f"excluding {len(excluded)} zero-variance target columns from R^2")
    if not keep.any():
        raise DegenerateInputError("every target column has zero variance")
    return float(np.mean(1.0 - sse[keep] / sst[keep])), excluded


def fit_decoder(Ztr, Xtr, Zte, cfg: DecoderConfig, tag: str = "dec") -> np.ndarray:
    """Train a 2-layer MLP regressor and return its test predictions.

    Inputs and targets are standardized with training statistics.
    """
    A, B = _standardize(Ztr, Zte)
    mu = Xtr.mean(axis=0, keepdims=True)
    sd = Xtr.std(axis=0, keepdims=True)
    sd = np.where(sd > 1e-12, sd, 1.0)
    T = (Xtr - mu) / sd
    net = Mlp([A.shape[1], cfg.hidden, T.shape[1]], stream(cfg.seed, "init", tag), tag)
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr)
    rng = stream(cfg.seed, "batches", tag)
    n = A.shape[0]
    bs = min(cfg.batch_size, n)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            idx = perm[start:start + bs]
            diff = ad.sub(net.forward(A[idx]), T[idx])
            loss = ad.mean(ad.mul(diff, diff))
            opt.step(ad.backward(loss, params))
    return net.forward(B).value * sd + mu


def reconstruction_gain(shared_tr, specific_tr, X_tr, shared_te, specific_te, X_te,
                        cfg: DecoderConfig = DecoderConfig()) -> RgResult:
    r2 = {}
    excluded = []
    inputs = {
        "shared": (shared_tr, shared_te),
        "specific": (specific_tr, specific_te),
        "concat": (np.hstack([shared_tr, specific_tr]), np.hstack([shared_te, specific_te])),
    }
    for name, (ztr, zte) in inputs.items():
        pred = fit_decoder(ztr, X_tr, zte, cfg, tag=f"decoder_{name}")
        r2[name], excluded = r2_score(X_te, pred)
    rg = r2["concat"] - max(r2["shared"], r2["specific"])
    return RgResult(r2["shared"], r2["specific"], r2["concat"], rg, excluded)


# --- representations and weight ratio ---------------------------------------------

def shared_representation(model: Step1Model, ds: SynthDataset, part: str) -> np.ndarray:
    """``[zc1, zc2]`` on clean observations of a split."""
    x1, x2 = ds.split(part)
    return np.hstack([encode_shared(model, x1, 1), encode_shared(model, x2, 2)])


def probe_all(Ztr, Zte, ds: SynthDataset, **probe_kw) -> dict[str, ProbeResult]:
    out = {}
    for name, y in ds.labels().items():
        out[name] = linear_probe(Ztr, y[ds.train_idx], Zte, y[ds.test_idx], label=name,
                                 **probe_kw)
    return out


def embedding_spread(Z) -> float:
    """``1 - |mean row|^2`` for unit rows: 0 when every row is the same point.

    Used to tell a collapsed shared code (all inputs mapped to one direction)
    from an informative one.
    """
    Z = np.asarray(Z, dtype=np.float64)
    return float(1.0 - np.sum(Z.mean(axis=0) ** 2))


COLLAPSE_SPREAD = 0.01


def pure_mixed_weight_ratio(enc: Mlp, n_pure: int = 15) -> float:
    """Mean squared first-layer weight on the last ``n_pure`` inputs over the rest."""
    W = enc.layers[0][0].value
    energy = np.sum(W * W, axis=1)
    return float(energy[-n_pure:].mean() / energy[:-n_pure].mean())


# --- sweep ---------------------------------------------------------------------

@dataclass
class FrontierPoint:
    variant: str
    seed: int
    beta: float
    lam: float | None
    rep: str
    label: str
    accuracy: float


def _sweep_task(args):
    ds, beta, lambdas, seed, s1_base, s2_base, out_dir = args
    s1_cfg = replace(s1_base, beta=beta, seed=seed)
    step1 = train_step1(ds, s1_cfg)
    points = []
    zc_tr = shared_representation(step1, ds, "train")
    zc_te = shared_representation(step1, ds, "test")
    for lab, res in probe_all(zc_tr, zc_te, ds).items():
        points.append(FrontierPoint(ds.variant, seed, beta, None, "zc", lab, res.test_accuracy))
    if out_dir is not None:
        step1.save(Path(out_dir) / f"seed{seed}_beta{beta!r}" / "step1")
    for lam in lambdas:
        s2_cfg = replace(s2_base, lam=lam, seed=seed)
        step2 = train_step2(ds, step1, s2_cfg)
        for m in (1, 2):
            x_tr = (ds.X1, ds.X2)[m - 1][ds.train_idx]
            x_te = (ds.X1, ds.X2)[m - 1][ds.test_idx]
            zs_tr = encode_specific(step2, x_tr, m)
            zs_te = encode_specific(step2, x_te, m)
            for lab, res in probe_all(zs_tr, zs_te, ds).items():
                points.append(FrontierPoint(ds.variant, seed, beta, lam, f"zs{m}", lab,
                                            res.test_accuracy))
        if out_dir is not None:
            step2.save(Path(out_dir) / f"seed{seed}_beta{beta!r}" / f"step2_lambda{lam!r}")
    return points


def default_workers() -> int:
    env = os.environ.get("DSSL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sweep(ds: SynthDataset, beta_grid, lambda_grid, seeds, step1_cfg=Step1Config(),
          step2_cfg=Step2Config(), workers: int | None = None, out_dir=None) -> list[FrontierPoint]:
    """Train step 1 per beta and step 2 per (beta, lambda); probe every representation."""
    beta_grid, lambda_grid, seeds = list(beta_grid), list(lambda_grid), list(seeds)
    if not beta_grid or not seeds:
        raise UsageError("beta grid and seeds must be non-empty")
    tasks = [(ds, float(b), [float(x) for x in lambda_grid], int(s), step1_cfg, step2_cfg, out_dir)
             for s in seeds for b in beta_grid]
    workers = workers or default_workers()
    if workers <= 1 or len(tasks) == 1:
        results = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    return [p for chunk in results for p in chunk]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_frontier_csv(points, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for p in points:
            w.writerow([p.variant, p.seed, _fmt(p.beta), _fmt(p.lam), p.rep, p.label,
                        _fmt(p.accuracy)])
    return path


def read_frontier_csv(path) -> list[FrontierPoint]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(FrontierPoint(row["variant"], int(row["seed"]), float(row["beta"]),
                                     float(row["lambda"]) if row["lambda"] else None,
                                     row["rep"], row["label"], float(row["accuracy"])))
    return out


def to_dict(obj):
    return asdict(obj)
