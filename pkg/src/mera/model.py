"""End-to-end model: parameter construction, per-protein forward pass,
dataset preparation (retrieval + expert precomputation), ablation surgery.

Expert outputs carry no parameters, so they are computed once per protein
and reused across epochs; the differentiable graph starts at the gate MLP,
the modality heads, and the cross-attention projections.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import merag, rmf, textguide
from .autodiff import Node, Tape
from .config import MeraConfig
from .errors import ConfigError, DimensionError, RetrievalError
from .matrix import as_matrix
from .params import ParameterStore, glorot_uniform
from .store import NeighborSet, ProteinRecord, Store, retrieve

__all__ = ["MeraModel", "PreparedProtein", "ForwardPass", "prepare_protein", "prepare_dataset"]

log = logging.getLogger(__name__)


@dataclass
class PreparedProtein:
    """A protein with its retrieval work done: ready for forward passes."""

    id: str
    h_seq: np.ndarray  # n x D
    labels: np.ndarray | None  # length n, values {0, 1}
    text_emb: np.ndarray | None  # m x T
    expert_mats: list[np.ndarray] | None  # one n x D matrix per configured expert
    neighbor_ids: tuple[str, ...] = ()

    @property
    def n_residues(self) -> int:
        return self.h_seq.shape[0]


@dataclass
class ForwardPass:
    rmf: rmf.RmfNodes
    representations: dict[str, Node]
    gate_weights: np.ndarray | None  # n x E x D when the rag modality ran


def build_parameters(config: MeraConfig) -> ParameterStore:
    """Create all learnable tensors in a fixed order from the config seed.

    Weight matrices get Glorot-uniform values; biases start at zero.
    """
    if not config.is_resolved:
        raise ConfigError("config dims must be resolved before building parameters")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = ParameterStore()
    d = config.emb_dim

    if "rag" in config.modalities:
        in_w, hidden, out_w = merag.gate_shapes(
            len(config.experts), d, config.gate_hidden, config.gate_mode
        )
        params.add("gate.W1", glorot_uniform(in_w, hidden, rng))
        params.add("gate.b1", np.zeros((1, hidden)))
        params.add("gate.W2", glorot_uniform(hidden, out_w, rng))
        params.add("gate.b2", np.zeros((1, out_w)))

    for modality in config.modalities:
        params.add(f"head.{modality}.W1", glorot_uniform(d, config.head_hidden, rng))
        params.add(f"head.{modality}.b1", np.zeros((1, config.head_hidden)))
        params.add(f"head.{modality}.W2", glorot_uniform(config.head_hidden, 1, rng))
        params.add(f"head.{modality}.b2", np.zeros((1, 1)))

    if "text" in config.modalities:
        params.add("text.WQ", glorot_uniform(d, config.attn_dim, rng))
        params.add("text.WK", glorot_uniform(config.text_dim, config.attn_dim, rng))
        params.add("text.WV", glorot_uniform(config.text_dim, d, rng))

    return params


class MeraModel:
    def __init__(self, config: MeraConfig, params: ParameterStore):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: MeraConfig) -> "MeraModel":
        return cls(config, build_parameters(config))

    def forward(self, tape: Tape, prot: PreparedProtein) -> ForwardPass:
        cfg = self.config
        if prot.h_seq.shape[1] != cfg.emb_dim:
            raise DimensionError(
                f"protein {prot.id!r} has embedding dim {prot.h_seq.shape[1]}, "
                f"model expects {cfg.emb_dim}"
            )
        reps: dict[str, Node] = {}
        gate_weights = None
        h_seq_node = tape.constant(prot.h_seq)
        if "seq" in cfg.modalities:
            reps["seq"] = h_seq_node
        if "rag" in cfg.modalities:
            if prot.expert_mats is None:
                raise ConfigError(
                    f"protein {prot.id!r} was prepared without expert outputs"
                )
            h_rag, gate_weights = merag.moe_gate_nodes(
                tape, self.params, prot.expert_mats, cfg.gate_mode
            )
            reps["rag"] = h_rag
        if "text" in cfg.modalities:
            if prot.text_emb is None:
                raise ConfigError(
                    f"protein {prot.id!r} has no text embedding but the text "
                    "modality is active"
                )
            reps["text"] = textguide.cross_attend_nodes(
                tape, self.params, h_seq_node, prot.text_emb
            )
        fusion = rmf.rmf_forward_nodes(tape, self.params, reps, cfg.modalities)
        return ForwardPass(rmf=fusion, representations=reps, gate_weights=gate_weights)

    def predict(self, prot: PreparedProtein) -> rmf.PredictionBundle:
        return self.forward(Tape(), prot).rmf.to_bundle()

    def representation(self, prot: PreparedProtein, which: str) -> np.ndarray:
        """Per-residue representation of one modality (for export)."""
        if which not in self.config.modalities:
            raise ConfigError(f"modality {which!r} is not active in this model")
        out = self.forward(Tape(), prot)
        return out.representations[which].value

    # -- ablation surgery ----------------------------------------------------

    def restrict_experts(self, keep: tuple[str, ...]) -> "MeraModel":
        """Project the trained gate onto a subset of experts.

        Drops the removed experts' row block of gate.W1 and column block of
        gate.W2/gate.b2; every other tensor is shared unchanged.
        """
        cfg = self.config
        missing = [e for e in keep if e not in cfg.experts]
        if missing:
            raise ConfigError(f"cannot keep unknown experts {missing}")
        if not keep:
            raise ConfigError("at least one expert must remain")
        if tuple(keep) == cfg.experts:
            return self
        d = cfg.emb_dim
        keep_idx = [cfg.experts.index(e) for e in keep]

        def block_rows(width):
            rows = []
            for e in keep_idx:
                rows.extend(range(e * width, (e + 1) * width))
            return rows

        out_width = d if cfg.gate_mode == "dimension" else 1
        new_params = ParameterStore()
        for name, entry in self.params.entries():
            value = entry.value
            if name == "gate.W1":
                value = value[block_rows(d), :]
            elif name == "gate.W2":
                value = value[:, block_rows(out_width)]
            elif name == "gate.b2":
                value = value[:, block_rows(out_width)]
            new_params.add(name, value.copy())
        new_cfg = cfg.override(experts=tuple(keep))
        return MeraModel(new_cfg, new_params)

    def restrict_modalities(self, keep: tuple[str, ...]) -> "MeraModel":
        """Drop modalities before mass computation; masses renormalize over
        the survivors. Head/attention tensors of removed modalities are kept
        in the store but never evaluated."""
        missing = [m for m in keep if m not in self.config.modalities]
        if missing:
            raise ConfigError(f"cannot keep unknown modalities {missing}")
        if not keep:
            raise ConfigError("at least one modality must remain")
        ordered = tuple(m for m in self.config.modalities if m in keep)
        if ordered == self.config.modalities:
            return self
        return MeraModel(self.config.override(modalities=ordered), self.params)


def prepare_protein(
    record: ProteinRecord,
    stash: Store | None,
    config: MeraConfig,
    text_emb: np.ndarray | None = None,
) -> tuple[PreparedProtein, int]:
    """Retrieve neighbors and precompute expert outputs for one protein.

    Returns (prepared, warning) where warning is 1 when retrieval found no
    eligible record and the neighbor set fell back to empty (the rag
    modality then degenerates to the raw sequence representation).
    """
    h_seq = record.seq_emb
    warning = 0
    expert_mats = None
    neighbor_ids: tuple[str, ...] = ()
    if "rag" in config.modalities:
        if stash is None:
            raise ConfigError("the rag modality requires a vector store")
        try:
            neighbors = retrieve(
                stash,
                record.chain_key,
                config.k_neighbors,
                exclude_id=record.id,
                cluster_id=record.cluster_id,
            )
        except RetrievalError:
            neighbors = NeighborSet(query_id=record.id, entries=())
            warning = 1
        expert_mats = [
            merag.expert_forward(kind, h_seq, neighbors, config.intra_temperature)
            for kind in config.experts
        ]
        neighbor_ids = tuple(neighbors.ids())
    if text_emb is not None:
        text_emb = as_matrix(text_emb, f"text embedding of {record.id!r}")
    return (
        PreparedProtein(
            id=record.id,
            h_seq=h_seq,
            labels=None if record.labels is None else np.asarray(record.labels),
            text_emb=text_emb,
            expert_mats=expert_mats,
            neighbor_ids=neighbor_ids,
        ),
        warning,
    )


def prepare_dataset(
    records: list[ProteinRecord],
    stash: Store | None,
    config: MeraConfig,
    text_embs: dict[str, np.ndarray] | None = None,
) -> tuple[list[PreparedProtein], int]:
    """Prepare many proteins; returns (prepared list, retrieval warnings)."""
    text_embs = text_embs or {}
    prepared = []
    warnings = 0
    for record in records:
        prot, warned = prepare_protein(record, stash, config, text_embs.get(record.id))
        prepared.append(prot)
        warnings += warned
    if warnings:
        log.warning("retrieval found no eligible neighbors for %d protein(s)", warnings)
    return prepared, warnings
