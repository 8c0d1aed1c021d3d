"""Reliability-aware multimodal fusion.

Per residue: each modality head emits a raw score z and a bounded score
p = sigmoid(z). Bounded scores become evidence masses via a softmax across
modalities; each modality's credibility is 0.5 * (own mass + 1 - strongest
rival mass); its reliability indicator is the normalized binary entropy of
the credibility (lower = more reliable); fusion weights are the softmax of
negated reliabilities; the final probability is the sigmoid of the
weight-combined raw scores.

Raw scores feed the final combination while bounded scores feed the mass
and the per-modality regularizer: a convex combination of [0,1] values
under a sigmoid could never leave [0.5, 0.731], so both views are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import ConfigError, DimensionError, ParameterError
from .matrix import as_matrix, sigmoid
from .params import ParameterStore

__all__ = [
    "MODALITIES",
    "ModalityBundle",
    "PredictionBundle",
    "head_forward",
    "evidence_mass",
    "credibility",
    "reliability",
    "fusion_weights",
    "fuse",
    "rmf_forward",
    "rmf_forward_nodes",
    "RmfNodes",
]

MODALITIES = ("seq", "rag", "text")

_LN2 = math.log(2.0)
_CLAMP = 1e-12  # credibility clamp before the logarithms


@dataclass(frozen=True)
class ModalityBundle:
    """Per-residue evidential quantities, one column per active modality."""

    modalities: tuple[str, ...]
    raw: np.ndarray  # n x S raw scores z
    bounded: np.ndarray  # n x S sigmoid scores p
    mass: np.ndarray  # n x S evidence masses, rows sum to 1
    credibility: np.ndarray  # n x S in [0, 1]
    reliability: np.ndarray  # n x S in [0, 1]
    weight: np.ndarray  # n x S fusion weights, rows sum to 1

    def column(self, field: str, modality: str) -> np.ndarray:
        return getattr(self, field)[:, self.modalities.index(modality)]


@dataclass(frozen=True)
class PredictionBundle:
    """Final fused probabilities plus the evidential bookkeeping."""

    y_hat: np.ndarray  # n, strictly inside (0, 1)
    bundle: ModalityBundle


def head_forward(
    modality: str, h, params: ParameterStore
) -> tuple[np.ndarray, np.ndarray]:
    """Modality head: two-layer MLP to one raw score per residue, plus its
    sigmoid. Returns (raw, bounded) as length-n vectors."""
    h = as_matrix(h, f"{modality} representation")
    raw = ad.mlp2_forward(h, params, f"head.{modality}")
    if raw.shape[1] != 1:
        raise DimensionError(
            f"head.{modality} must emit one score per residue, got width {raw.shape[1]}"
        )
    raw = raw[:, 0]
    return raw, sigmoid(raw)


def evidence_mass(bounded_scores) -> np.ndarray:
    """Softmax of the bounded scores across the modality axis."""
    scores = np.asarray(bounded_scores, dtype=np.float64).reshape(-1)
    if scores.size < 2:
        raise ParameterError("evidence_mass needs at least two modalities")
    e = np.exp(scores - scores.max())
    return e / e.sum()


def credibility(masses) -> np.ndarray:
    """c_s = 0.5 * (m_s + 1 - max of the other masses); in [0, 1]."""
    m = np.asarray(masses, dtype=np.float64).reshape(-1)
    out = np.empty_like(m)
    for s in range(m.size):
        others = np.delete(m, s)
        rival = others.max() if others.size else 0.0
        out[s] = 0.5 * (m[s] + 1.0 - rival)
    return out


def reliability(c: float) -> float:
    """Normalized binary entropy of a credibility value; 0 log 0 = 0."""
    c = float(c)
    if c <= 0.0 or c >= 1.0:
        return 0.0
    return float(-(c * math.log(c) + (1.0 - c) * math.log(1.0 - c)) / _LN2)


def fusion_weights(u) -> np.ndarray:
    """Softmax of the negated reliability indicators."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    e = np.exp(-(u - u.min()))
    return e / e.sum()


def fuse(raw_scores, weights) -> float:
    """Sigmoid of the weight-combined raw scores."""
    z = np.asarray(raw_scores, dtype=np.float64).reshape(-1)
    e = np.asarray(weights, dtype=np.float64).reshape(-1)
    if z.shape != e.shape:
        raise DimensionError(f"{z.size} scores vs {e.size} weights")
    return sigmoid(float(np.dot(e, z)))


@dataclass
class RmfNodes:
    """Node-level outputs of the fusion chain, one entry per modality."""

    modalities: tuple[str, ...]
    raw: list[Node]  # n x 1 each
    bounded: list[Node]
    mass: list[Node]
    cred: list[Node]
    rel: list[Node]
    weight: list[Node]
    fused_logit: Node  # n x 1
    y_hat: Node  # n x 1

    def to_bundle(self) -> PredictionBundle:
        cols = lambda nodes: np.column_stack([n.value[:, 0] for n in nodes])
        bundle = ModalityBundle(
            modalities=self.modalities,
            raw=cols(self.raw),
            bounded=cols(self.bounded),
            mass=cols(self.mass),
            credibility=cols(self.cred),
            reliability=cols(self.rel),
            weight=cols(self.weight),
        )
        y = np.clip(self.y_hat.value[:, 0], _CLAMP, 1.0 - 1e-12)
        return PredictionBundle(y_hat=y, bundle=bundle)


def rmf_forward_nodes(
    tape: Tape,
    params: ParameterStore,
    representations: dict[str, Node],
    active_modalities: tuple[str, ...],
) -> RmfNodes:
    """Differentiable fusion over the given residue representations."""
    if not active_modalities:
        raise ConfigError("at least one modality must be active")
    missing = [m for m in active_modalities if m not in representations]
    if missing:
        raise ConfigError(f"no representation supplied for modalities {missing}")
    rows = {representations[m].value.shape[0] for m in active_modalities}
    if len(rows) != 1:
        raise DimensionError(f"modalities disagree on residue count: {sorted(rows)}")

    raw = [
        ad.mlp2(tape, params, f"head.{m}", representations[m])
        for m in active_modalities
    ]
    bounded = [ad.sigmoid(z) for z in raw]

    if len(active_modalities) == 1:
        n = raw[0].value.shape[0]
        one = tape.constant(np.ones((n, 1)))
        zero = tape.constant(np.zeros((n, 1)))
        fused = raw[0]
        return RmfNodes(
            modalities=tuple(active_modalities),
            raw=raw,
            bounded=bounded,
            mass=[one],
            cred=[one],
            rel=[zero],
            weight=[one],
            fused_logit=fused,
            y_hat=ad.sigmoid(fused),
        )

    mass = ad.softmax_stack(bounded)
    cred = []
    for s in range(len(mass)):
        rivals = [m for t, m in enumerate(mass) if t != s]
        strongest = rivals[0]
        for m in rivals[1:]:
            strongest = ad.maximum(strongest, m)
        c = ad.add_scalar(ad.scale(ad.sub(mass[s], strongest), 0.5), 0.5)
        cred.append(ad.clip(c, _CLAMP, 1.0 - _CLAMP))
    rel = []
    for c in cred:
        one_minus = ad.rsub_scalar(1.0, c)
        entropy = ad.add(ad.mul(c, ad.log(c)), ad.mul(one_minus, ad.log(one_minus)))
        rel.append(ad.scale(entropy, -1.0 / _LN2))
    weight = ad.softmax_stack([ad.neg(u) for u in rel])

    fused = None
    for e, z in zip(weight, raw):
        term = ad.mul(e, z)
        fused = term if fused is None else ad.add(fused, term)

    return RmfNodes(
        modalities=tuple(active_modalities),
        raw=raw,
        bounded=bounded,
        mass=mass,
        cred=cred,
        rel=rel,
        weight=weight,
        fused_logit=fused,
        y_hat=ad.sigmoid(fused),
    )


def rmf_forward(
    representations: dict[str, np.ndarray],
    params: ParameterStore,
    active_modalities: tuple[str, ...] = MODALITIES,
) -> PredictionBundle:
    """Plain-array fusion; same code path as training."""
    tape = Tape()
    nodes = {
        m: tape.constant(as_matrix(v, m))
        for m, v in representations.items()
        if v is not None
    }
    return rmf_forward_nodes(tape, params, nodes, tuple(active_modalities)).to_bundle()
