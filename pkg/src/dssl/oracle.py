"""Exact information quantities on finite alphabets.

The conditional-entropy-bottleneck objective ``I(Z;X2) - beta * I(Z;X1|X2)``
over encoders ``q(z|x1)`` is optimized here by rewriting it as an ordinary
information bottleneck. Under the chain ``Z - X1 - X2`` we have
``I(Z;X1|X2) = I(Z;X1) - I(Z;X2)``, so

    I(Z;X2) - beta * I(Z;X1|X2) = (1 + beta) * [I(Z;X2) - gamma * I(Z;X1)]

with ``gamma = beta / (1 + beta)``. The bracket is solved by the classic
self-consistent iteration

    q(z|x1) ~ q(z) * exp(-(1/gamma) * KL[p(x2|x1) || q(x2|z)])

which never decreases the objective. Random restarts pick the best fixed
point because the problem is non-convex.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, UsageError
from .rng import stream

log = logging.getLogger(__name__)

SUM_TOL = 1e-12


def _xlogy_ratio(p, q):
    """Elementwise ``p * ln(p / q)`` with ``0 ln 0 = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return out


@dataclass(eq=False)
class DiscreteJoint:
    """Joint table ``p[x1, x2]``; all-zero rows/columns are dropped."""

    p: np.ndarray
    row_ids: np.ndarray = field(default=None, repr=False)
    col_ids: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim != 2:
            raise ConfigError("joint must be a 2-D table")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ConfigError("joint entries must be finite and >= 0")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ConfigError(f"joint sums to {p.sum()!r}, not 1")
        rows = np.flatnonzero(p.sum(axis=1) > 0)
        cols = np.flatnonzero(p.sum(axis=0) > 0)
        self.row_ids = rows if self.row_ids is None else np.asarray(self.row_ids)[rows]
        self.col_ids = cols if self.col_ids is None else np.asarray(self.col_ids)[cols]
        self.p = p[np.ix_(rows, cols)]

    @classmethod
    def normalized(cls, weights) -> "DiscreteJoint":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum())

    @property
    def shape(self):
        return self.p.shape

    @property
    def px1(self):
        return self.p.sum(axis=1)

    @property
    def px2(self):
        return self.p.sum(axis=0)

    def cond_x2_given_x1(self):
        return self.p / self.px1[:, None]

    def transpose(self) -> "DiscreteJoint":
        return DiscreteJoint(self.p.T.copy())


@dataclass(eq=False)
class Encoder:
    """Row-stochastic ``q[x1, z] = q(z | x1)``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        if q.ndim != 2:
            raise ConfigError("encoder must be a 2-D table")
        if np.any(q < 0) or np.max(np.abs(q.sum(axis=1) - 1.0)) > SUM_TOL:
            raise ConfigError("encoder rows must be probability vectors")
        self.q = q

    @property
    def z_size(self):
        return self.q.shape[1]


@dataclass
class InfoCoords:
    i_zx1: float
    i_zx2: float
    i_x1x2: float
    i_zx1_given_x2: float
    beta: float | None = None

    @property
    def delta_c(self) -> float:
        return self.i_x1x2 - self.i_zx2

    def as_dict(self):
        return {**asdict(self), "delta_c": self.delta_c}


def mutual_info(joint) -> float:
    """``I(X1;X2)`` in nats for a joint table (or :class:`DiscreteJoint`)."""
    p = joint.p if isinstance(joint, DiscreteJoint) else np.asarray(joint, dtype=np.float64)
    outer = p.sum(axis=1, keepdims=True) * p.sum(axis=0, keepdims=True)
    return float(np.sum(_xlogy_ratio(p, outer)))


def info_coords(joint: DiscreteJoint, enc: Encoder, beta=None) -> InfoCoords:
    p, q = joint.p, enc.q
    if q.shape[0] != p.shape[0]:
        raise UsageError("encoder rows must match the X1 alphabet")
    px1 = joint.px1
    i_zx1 = mutual_info(px1[:, None] * q)
    i_zx2 = mutual_info(q.T @ p)
    # I(Z;X1|X2) straight from p(x1,x2,z) = p(x1,x2) q(z|x1), not as a difference
    px2 = joint.px2
    pz_given_x2 = (p / px2[None, :]).T @ q
    tri = p[:, :, None] * q[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(tri > 0,
                         tri * (np.log(q[:, None, :]) - np.log(pz_given_x2[None, :, :])), 0.0)
    cond = float(terms.sum())
    return InfoCoords(i_zx1, i_zx2, mutual_info(p), cond, beta)


@dataclass
class CebResult:
    encoder: Encoder
    coords: InfoCoords
    lagrangian: float
    converged: bool
    iterations: int
    monotone: bool
    restart: int

    def __iter__(self):
        yield self.encoder
        yield self.coords


def _ib_lagrangian(px1, pyx, q, gamma):
    pz = px1 @ q
    joint_zy = (q * px1[:, None]).T @ pyx
    i_zy = mutual_info(joint_zy)
    i_zx = float(np.sum(_xlogy_ratio(px1[:, None] * q, px1[:, None] * pz[None, :])))
    return i_zy - gamma * i_zx


def _ib_iterate(px1, pyx, q, gamma, iters, tol):
    inv_gamma = 1.0 / gamma
    history = [_ib_lagrangian(px1, pyx, q, gamma)]
    converged = False
    it = 0
    for it in range(1, iters + 1):
        pz = px1 @ q
        live = pz > 0
        joint_zy = (q * px1[:, None]).T @ pyx
        pyz = np.zeros_like(joint_zy)
        pyz[live] = joint_zy[live] / pz[live, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            log_pyz = np.log(pyz)
            log_pyx = np.where(pyx > 0, np.log(pyx), 0.0)
            # kl[x, z] = sum_y p(y|x) (ln p(y|x) - ln q(y|z))
            cross = np.where(pyx[:, None, :] > 0, pyx[:, None, :] * log_pyz[None, :, :], 0.0)
            kl = (pyx * log_pyx).sum(axis=1)[:, None] - cross.sum(axis=2)
            logits = np.log(pz)[None, :] - inv_gamma * kl
        logits = np.where(live[None, :], logits, -np.inf)
        logits -= logits.max(axis=1, keepdims=True)
        new_q = np.exp(logits)
        new_q /= new_q.sum(axis=1, keepdims=True)
        delta = np.max(np.abs(new_q - q))
        q = new_q
        history.append(_ib_lagrangian(px1, pyx, q, gamma))
        if delta < tol:
            converged = True
            break
    return q, history, converged, it


def ceb_optimize(joint: DiscreteJoint, beta: float, z_size: int | None = None,
                 iters: int = 20000, restarts: int = 20, seed: int = 0,
                 tol: float = 1e-10) -> CebResult:
    """Best fixed point of the bottleneck iteration over ``restarts`` random starts."""
    if beta <= 0:
        raise ConfigError("beta must be > 0")
    z_size = joint.shape[0] if z_size is None else int(z_size)
    if z_size < 1:
        raise ConfigError("z_size must be >= 1")
    gamma = beta / (1.0 + beta)
    px1, pyx = joint.px1, joint.cond_x2_given_x1()
    best = None
    for r in range(max(1, restarts)):
        rng = stream(seed, "oracle", "restart", str(r))
        q0 = rng.dirichlet(np.ones(z_size), size=joint.shape[0])
        q, hist, conv, its = _ib_iterate(px1, pyx, q0, gamma, iters, tol)
        mono = bool(np.all(np.diff(hist) >= -1e-12 * max(1.0, abs(hist[0]))))
        if not mono:
            log.warning("bottleneck objective decreased during restart %d", r)
        if best is None or hist[-1] > best[0] + 1e-15:
            best = (hist[-1], q, conv, its, mono, r)
    lag, q, conv, its, mono, r = best
    if not conv:
        log.warning("ceb_optimize did not converge within %d iterations (beta=%g)", iters, beta)
    q = q / q.sum(axis=1, keepdims=True)
    enc = Encoder(q)
    return CebResult(enc, info_coords(joint, enc, beta), lag, conv, its, mono, r)


# --- IB curve ----------------------------------------------------------------------

@dataclass
class IbCurve:
    points: list          # InfoCoords in beta-grid order
    sorted_points: list   # same, sorted by I(Z;X1)
    hull: list            # upper concave hull vertices (x, y), origin included
    hull_slopes: list
    results: list = field(default_factory=list, repr=False)


def upper_hull(xy) -> list[tuple[float, float]]:
    pts = sorted(set((float(x), float(y)) for x, y in xy))
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def hull_gap(point, hull) -> float:
    """Vertical distance from ``point`` down from the hull (>= 0 means below)."""
    xs = np.array([h[0] for h in hull])
    ys = np.array([h[1] for h in hull])
    return float(np.interp(point[0], xs, ys) - point[1])


def ib_curve(joint: DiscreteJoint, beta_grid, z_size: int | None = None,
             restarts: int = 20, seed: int = 0, iters: int = 20000) -> IbCurve:
    betas = [float(b) for b in beta_grid]
    if any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise UsageError("beta grid must be sorted ascending")
    results = [ceb_optimize(joint, b, z_size, iters=iters, restarts=restarts, seed=seed)
               for b in betas]
    pts = [r.coords for r in results]
    srt = sorted(pts, key=lambda c: c.i_zx1)
    hull = upper_hull([(0.0, 0.0)] + [(c.i_zx1, c.i_zx2) for c in pts])
    slopes = [(y2 - y1) / (x2 - x1) for (x1, y1), (x2, y2) in zip(hull, hull[1:])]
    return IbCurve(pts, srt, hull, slopes, results)


# --- MNI attainability -----------------------------------------------------------------

MNI_TAGS = ("AttainableDeterministicForward", "AttainableDeterministicBackward",
            "AttainableSubdomainIndependence", "UnattainableFullSupport", "Unknown")


@dataclass
class MniVerdict:
    tag: str
    witness: str

    @property
    def attainable(self) -> bool | None:
        if self.tag.startswith("Attainable"):
            return True
        if self.tag.startswith("Unattainable"):
            return False
        return None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _is_rank_one(block, tol=1e-10) -> bool:
    m = block / block.sum()
    outer = m.sum(axis=1, keepdims=True) * m.sum(axis=0, keepdims=True)
    return bool(np.max(np.abs(m - outer)) <= tol)


def mni_check(joint: DiscreteJoint, tol: float = 1e-10) -> MniVerdict:
    """Sufficient-condition classifier for whether MNI can be reached.

    Checked in order: deterministic X1 -> X2, deterministic X2 -> X1, full
    support without independence (unattainable), then independence inside
    every connected block of the support. Anything else is ``Unknown``.
    """
    p = joint.p
    support = p > 0
    if np.all(support.sum(axis=1) == 1):
        return MniVerdict("AttainableDeterministicForward",
                          "every x1 row has a single nonzero cell, so x2 = f(x1)")
    if np.all(support.sum(axis=0) == 1):
        return MniVerdict("AttainableDeterministicBackward",
                          "every x2 column has a single nonzero cell, so x1 = g(x2)")
    if np.all(support):
        if _is_rank_one(p, tol):
            return MniVerdict("AttainableSubdomainIndependence",
                              "full support but p is rank one: X1, X2 independent, constant Z")
        return MniVerdict("UnattainableFullSupport",
                          "p(x1, x2) > 0 everywhere and X1, X2 are dependent")
    a, b = p.shape
    graph = np.zeros((a + b, a + b))
    graph[:a, a:] = support
    graph[a:, :a] = support.T
    n_comp, labels = connected_components(graph, directed=False)
    for c in range(n_comp):
        rows = np.flatnonzero(labels[:a] == c)
        cols = np.flatnonzero(labels[a:] == c)
        block = p[np.ix_(rows, cols)]
        if not np.all(block > 0):
            return MniVerdict("Unknown",
                              f"support block rows={rows.tolist()} cols={cols.tolist()} "
                              "is not a full rectangle")
        if not _is_rank_one(block, tol):
            return MniVerdict("Unknown",
                              f"support block rows={rows.tolist()} cols={cols.tolist()} "
                              "is not independent")
    return MniVerdict("AttainableSubdomainIndependence",
                      f"{n_comp} support blocks, each a full rectangle with independent marginals")


def conditional_of_block_encoder(joint: DiscreteJoint) -> Encoder:
    """Deterministic encoder ``Z = p(X2 | X1)``: one symbol per distinct conditional row."""
    cond = joint.cond_x2_given_x1()
    keys = [tuple(np.round(r, 12)) for r in cond]
    uniq = {k: i for i, k in enumerate(dict.fromkeys(keys))}
    q = np.zeros((joint.shape[0], len(uniq)))
    for x, k in enumerate(keys):
        q[x, uniq[k]] = 1.0
    return Encoder(q)


# --- bound on the step-2 surrogate ----------------------------------------------------------

@dataclass
class Prop4Report:
    beta: float
    delta_c: float
    gaps: list
    constant_gap: float
    max_gap: float
    min_gap: float

    def holds(self, tol=1e-6) -> bool:
        return self.min_gap >= -tol and self.max_gap <= self.delta_c + tol


def joint_info_terms(joint: DiscreteJoint, q1: np.ndarray, qc: np.ndarray) -> tuple[float, float]:
    """``I(Z, X2; X1)`` and ``I(Z, C; X1)`` for ``Z ~ q1(.|x1)``, ``C ~ qc(.|x2)``.

    Enumerates ``p(x1, x2, z, c) = p(x1, x2) q1(z|x1) qc(c|x2)``.
    """
    p = joint.p
    a, b = p.shape
    full = p[:, :, None, None] * q1[:, None, :, None] * qc[None, :, None, :]
    i_zx2 = mutual_info(full.sum(axis=3).reshape(a, -1))
    i_zc = mutual_info(full.sum(axis=1).reshape(a, -1))
    return i_zx2, i_zc


def verify_prop4(joint: DiscreteJoint, beta: float, z_size: int | None = None,
                 n_encoders: int = 100, seed: int = 0, restarts: int = 20) -> Prop4Report:
    """Check ``0 <= I(Z,X2;X1) - I(Z,C*;X1) <= delta_c`` over random encoders ``Z``.

    ``C*`` is the optimal shared code of ``X2`` for this ``beta``; its
    ``delta_c = I(X1;X2) - I(C*;X1)``.
    """
    a, b = joint.shape
    if max(a, b) > 6:
        raise UsageError("alphabets larger than 6 are not supported here")
    z_size = min(a, 4) if z_size is None else int(z_size)
    res = ceb_optimize(joint.transpose(), beta, z_size=max(b, 2), restarts=restarts, seed=seed)
    qc = res.encoder.q
    i_x1x2 = mutual_info(joint)
    delta_c = i_x1x2 - mutual_info(qc.T @ joint.p.T)
    rng = stream(seed, "oracle", "prop4")
    gaps = []
    for _ in range(n_encoders):
        alpha = rng.choice([0.1, 1.0, 10.0])
        q1 = rng.dirichlet(np.full(z_size, alpha), size=a)
        lhs, rhs = joint_info_terms(joint, q1, qc)
        gaps.append(lhs - rhs)
    lhs, rhs = joint_info_terms(joint, np.ones((a, 1)), qc)
    constant_gap = lhs - rhs
    return Prop4Report(beta, delta_c, gaps, constant_gap, max(gaps + [constant_gap]),
                       min(gaps + [constant_gap]))


# --- fixtures ---------------------------------------------------------------------------

def or_gate_joint() -> DiscreteJoint:
    """X1 = OR(Zc, Zs1), X2 = OR(Zc, Zs2) with fair independent bits."""
    return DiscreteJoint(np.array([[1.0, 1.0], [1.0, 5.0]]) / 8.0)


def random_full_support_joint(shape=(4, 4), seed: int = 2, floor: float = 1e-3) -> DiscreteJoint:
    """Dirichlet(0.5) table plus a small floor so every cell is positive."""
    a, b = shape
    w = stream(seed, "fixture").dirichlet(np.full(a * b, 0.5)).reshape(a, b) + floor
    return DiscreteJoint.normalized(w)


def deterministic_forward_joint(n1: int = 8, n2: int = 4, seed: int = 0) -> DiscreteJoint:
    """``X2 = X1 mod n2`` with a random full-support marginal on ``X1``."""
    px1 = stream(seed, "fixture", "marginal").dirichlet(np.ones(n1))
    p = np.zeros((n1, n2))
    p[np.arange(n1), np.arange(n1) % n2] = px1
    return DiscreteJoint(p / p.sum())
