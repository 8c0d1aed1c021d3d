"""Training objective, Adam optimizer, epoch loop, checkpoint format.

The objective is binary cross-entropy on the fused prediction plus a
reliability regularizer pulling each modality's bounded score toward the
labels. The regularizer averages over residues by default so its scale is
independent of protein length; the raw-sum variant is a config switch.
Updates are per protein (batch size 1), in a seeded shuffle order, strictly
sequential for reproducibility.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .config import MeraConfig
from .errors import ConfigError, DimensionError, FormatError, TrainingError
from .metrics import EvalRecord, auprc
from .model import MeraModel, PreparedProtein
from .params import ParameterStore

__all__ = [
    "LossBreakdown",
    "bce_loss",
    "reliability_loss",
    "adam_step",
    "train_epoch",
    "train",
    "TrainResult",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MERACKPT"
CHECKPOINT_VERSION = 1

_EPS = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    bce: float
    reliability: float
    per_modality: dict[str, float]


def bce_loss(y_hat, y) -> float:
    """Mean binary cross-entropy; probabilities are clamped to
    [1e-12, 1 - 1e-12] before the logarithms."""
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y_hat.shape != y.shape:
        raise DimensionError(f"{y_hat.size} predictions vs {y.size} labels")
    p = np.clip(y_hat, _EPS, 1.0 - _EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def reliability_loss(bounded_per_modality, y, mode: str = "mean") -> float:
    """Squared error between each modality's bounded score and the labels,
    averaged over residues (or raw-summed in "sum" mode) and summed over
    modalities."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    total = 0.0
    for bounded in bounded_per_modality:
        p = np.asarray(bounded, dtype=np.float64).reshape(-1)
        if p.shape != y.shape:
            raise DimensionError(f"{p.size} scores vs {y.size} labels")
        sq = (p - y) ** 2
        total += float(sq.mean() if mode == "mean" else sq.sum())
    return total


@dataclass
class LossNodes:
    total: Node
    bce: Node
    reliability: Node
    per_modality: dict[str, Node]


def build_loss(tape: Tape, fusion, labels: np.ndarray, config: MeraConfig) -> LossNodes:
    """Differentiable total loss for one protein."""
    n = labels.shape[0]
    y = tape.constant(labels.astype(np.float64).reshape(n, 1))
    one_minus_y = tape.constant((1.0 - labels.astype(np.float64)).reshape(n, 1))

    p = ad.clip(fusion.y_hat, _EPS, 1.0 - _EPS)
    ll = ad.add(
        ad.mul(y, ad.log(p)),
        ad.mul(one_minus_y, ad.log(ad.rsub_scalar(1.0, p))),
    )
    bce = ad.neg(ad.mean_all(ll))

    per_modality: dict[str, Node] = {}
    rel_total = None
    for name, bounded in zip(fusion.modalities, fusion.bounded):
        sq = ad.square(ad.sub(bounded, y))
        term = ad.mean_all(sq) if config.reliability_mode == "mean" else ad.sum_all(sq)
        per_modality[name] = term
        rel_total = term if rel_total is None else ad.add(rel_total, term)

    total = ad.add(bce, ad.scale(rel_total, config.reliability_weight))
    return LossNodes(total=total, bce=bce, reliability=rel_total, per_modality=per_modality)


def adam_step(params: ParameterStore, config: MeraConfig) -> ParameterStore:
    """Standard Adam with bias correction; advances the step counter and
    zeroes gradients afterwards."""
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    t = params.step_count + 1
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, entry in params.entries():
        g = entry.grad
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        entry.moment1 = b1 * entry.moment1 + (1.0 - b1) * g
        entry.moment2 = b2 * entry.moment2 + (1.0 - b2) * (g * g)
        m_hat = entry.moment1 / corr1
        v_hat = entry.moment2 / corr2
        entry.value = entry.value - config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    params.step_count = t
    params.zero_grad()
    return params


def protein_step(model: MeraModel, prot: PreparedProtein) -> LossBreakdown:
    """One forward/backward/update on a single protein."""
    if prot.labels is None:
        raise ConfigError(f"protein {prot.id!r} has no labels; cannot train on it")
    tape = Tape()
    out = model.forward(tape, prot)
    losses = build_loss(tape, out.rmf, prot.labels, model.config)
    model.params.zero_grad()
    ad.backward(tape, losses.total)
    adam_step(model.params, model.config)
    return LossBreakdown(
        total=float(losses.total.value[0, 0]),
        bce=float(losses.bce.value[0, 0]),
        reliability=float(losses.reliability.value[0, 0]),
        per_modality={k: float(v.value[0, 0]) for k, v in losses.per_modality.items()},
    )


def train_epoch(
    prepared: list[PreparedProtein],
    model: MeraModel,
    rng: np.random.Generator,
) -> LossBreakdown:
    """One pass over the dataset in a seeded shuffle order; returns the
    epoch-mean loss breakdown."""
    if not prepared:
        raise ConfigError("cannot train on an empty dataset")
    order = rng.permutation(len(prepared))
    totals, bces, rels = [], [], []
    per_mod: dict[str, list[float]] = {}
    for idx in order:
        breakdown = protein_step(model, prepared[idx])
        totals.append(breakdown.total)
        bces.append(breakdown.bce)
        rels.append(breakdown.reliability)
        for k, v in breakdown.per_modality.items():
            per_mod.setdefault(k, []).append(v)
    return LossBreakdown(
        total=float(np.mean(totals)),
        bce=float(np.mean(bces)),
        reliability=float(np.mean(rels)),
        per_modality={k: float(np.mean(v)) for k, v in per_mod.items()},
    )


def eval_records(model: MeraModel, prepared: list[PreparedProtein]) -> list[EvalRecord]:
    """Inference over prepared proteins, ordered by id for determinism."""
    out = []
    for prot in sorted(prepared, key=lambda p: p.id):
        if prot.labels is None:
            raise ConfigError(f"protein {prot.id!r} has no labels; cannot evaluate")
        bundle = model.predict(prot)
        out.append(EvalRecord(protein_id=prot.id, scores=bundle.y_hat, labels=prot.labels))
    return out


@dataclass
class TrainResult:
    model: MeraModel
    best_epoch: int
    best_val_auprc: float
    history: list[dict]


def train(
    train_set: list[PreparedProtein],
    valid_set: list[PreparedProtein],
    model: MeraModel,
    config: MeraConfig,
) -> TrainResult:
    """Full training run; keeps the parameters of the epoch with the best
    validation AUPRC (earliest epoch wins ties)."""
    if not valid_set:
        raise ConfigError("validation split is empty")
    rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    best_params = model.params.copy()
    best_auprc = -1.0
    best_epoch = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        breakdown = train_epoch(train_set, model, rng)
        val_auprc = auprc(eval_records(model, valid_set))
        is_best = val_auprc > best_auprc
        if is_best:
            best_auprc = val_auprc
            best_epoch = epoch
            best_params = model.params.copy()
        history.append(
            {
                "epoch": epoch,
                "loss_total": breakdown.total,
                "loss_bce": breakdown.bce,
                "loss_reliability": breakdown.reliability,
                "loss_reliability_per_modality": dict(breakdown.per_modality),
                "val_auprc": val_auprc,
                "best": is_best,
            }
        )
        log.info(
            "epoch %d: loss %.6f (bce %.6f, rel %.6f), val auprc %.4f%s",
            epoch,
            breakdown.total,
            breakdown.bce,
            breakdown.reliability,
            val_auprc,
            " *" if is_best else "",
        )
    return TrainResult(
        model=MeraModel(config, best_params),
        best_epoch=best_epoch,
        best_val_auprc=best_auprc,
        history=history,
    )


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version byte, config echo (length-prefixed
# JSON), tensor count, then per tensor: name, rows, cols, f32 row-major
# payload. Integers are u32 LE.
# ---------------------------------------------------------------------------


def save_checkpoint(model: MeraModel, path) -> None:
    config_blob = model.config.to_json().encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        bytes([CHECKPOINT_VERSION]),
        struct.pack("<I", len(config_blob)),
        config_blob,
        struct.pack("<I", len(model.params)),
    ]
    for name, entry in model.params.entries():
        raw = name.encode("utf-8")
        rows, cols = entry.value.shape
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<II", rows, cols))
        parts.append(entry.value.astype("<f4").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> MeraModel:
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint", offset=offset)
        out = data[offset : offset + n]
        offset += n
        return out

    magic = take(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(
            f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0
        )
    version = take(1)[0]
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=8)
    config_len = struct.unpack("<I", take(4))[0]
    config = MeraConfig.from_json(take(config_len).decode("utf-8"))
    count = struct.unpack("<I", take(4))[0]
    params = ParameterStore()
    for _ in range(count):
        name_len = struct.unpack("<I", take(4))[0]
        name = take(name_len).decode("utf-8")
        rows, cols = struct.unpack("<II", take(8))
        payload = take(4 * rows * cols)
        value = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
        params.add(name, value)
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes", offset=offset)
    reference = MeraModel.build(config).params
    expected = {name: entry.value.shape for name, entry in reference.entries()}
    actual = {name: entry.value.shape for name, entry in params.entries()}
    if expected != actual:
        missing = sorted(set(expected) - set(actual))
        unexpected = sorted(set(actual) - set(expected))
        wrong = sorted(
            n for n in set(expected) & set(actual) if expected[n] != actual[n]
        )
        raise FormatError(
            f"{path}: tensors disagree with the config echo "
            f"(missing {missing}, unexpected {unexpected}, wrong shape {wrong})"
        )
    return MeraModel(config, params)
