"""Multi-expert retrieval augmentation.

Each expert reads one embedding block of every retrieved neighbor (full
residue matrix, chain key, or active-site rows), collapses it per query
residue with temperature-sharpened dot-product attention, fuses the
per-neighbor summaries with the query residue as candidate 0, and the
expert outputs are combined by a residue-wise soft gate.

The experts themselves are parameter-free, so their outputs are plain
arrays; only the gate MLP participates in differentiation.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import ContractError, DimensionError, EmptyInputError, ParameterError
from .matrix import as_matrix, softmax_rows
from .params import ParameterStore
from .store import NeighborSet, ProteinRecord

__all__ = [
    "STANDARD_EXPERTS",
    "expert_block",
    "intra_aggregate",
    "inter_fuse",
    "expert_forward",
    "moe_gate",
    "moe_gate_nodes",
    "gate_shapes",
]

# The three built-in expert kinds; any other name reads the record's extra
# embedding block of that name (configured via the manifest).
STANDARD_EXPERTS = ("seq", "chain", "act")


def expert_block(kind: str, record: ProteinRecord) -> np.ndarray:
    """The rows of a neighbor record that the given expert kind reads."""
    if kind == "seq":
        block = record.seq_emb
    elif kind == "chain":
        block = record.chain_key
    elif kind == "act":
        block = record.active_block()
    else:
        try:
            block = as_matrix(record.extra[kind], f"{kind} block of {record.id!r}")
        except KeyError:
            raise ParameterError(
                f"record {record.id!r} has no embedding block named {kind!r}"
            ) from None
    if block.shape[0] == 0:
        raise ContractError(
            f"expert {kind!r} selected zero rows from record {record.id!r}"
        )
    return block


def intra_aggregate(query_residue, neighbor_block, temperature: float) -> np.ndarray:
    """Collapse one neighbor's rows into a single vector per query residue.

    Rows are weighted by softmax(query . row / temperature). Accepts a
    whole query matrix (n x D) and returns n x D; the single-residue form
    in the module contract is the n = 1 case.
    """
    query = as_matrix(query_residue, "query")
    block = as_matrix(neighbor_block, "neighbor block")
    if block.shape[0] == 0:
        raise EmptyInputError("neighbor block has zero rows")
    if query.shape[1] != block.shape[1]:
        raise DimensionError(
            f"query dimension {query.shape[1]} vs neighbor block {block.shape[1]}"
        )
    weights = softmax_rows(query @ block.T, temperature)
    return weights @ block


def inter_fuse(query_residue, summaries: list[np.ndarray]) -> np.ndarray:
    """Softmax-weighted fusion of neighbor summaries with the query as
    candidate 0; weights come from raw dot products at temperature 1.

    Vectorized over query rows: query n x D, each summary n x D.
    """
    query = as_matrix(query_residue, "query")
    cands = [query] + [as_matrix(s, "summary") for s in summaries]
    for cand in cands:
        if cand.shape != query.shape:
            raise DimensionError(
                f"summary shape {cand.shape} does not match query {query.shape}"
            )
    dots = np.column_stack([(query * cand).sum(axis=1) for cand in cands])
    gamma = softmax_rows(dots, 1.0)
    out = np.zeros_like(query)
    for k, cand in enumerate(cands):
        out += gamma[:, k : k + 1] * cand
    return out


def expert_forward(
    kind: str,
    h_seq,
    neighbors: NeighborSet,
    temperature: float,
) -> np.ndarray:
    """One expert's n x D output for the whole query protein."""
    h_seq = as_matrix(h_seq, "h_seq")
    summaries = [
        intra_aggregate(h_seq, expert_block(kind, rec), temperature)
        for rec in neighbors.records()
    ]
    return inter_fuse(h_seq, summaries)


def gate_shapes(n_experts: int, dim: int, hidden: int, mode: str) -> tuple[int, int, int]:
    """(input width, hidden width, output width) of the gate MLP."""
    if mode == "dimension":
        out = n_experts * dim
    elif mode == "scalar":
        out = n_experts
    else:
        raise ParameterError(f"unknown gate mode {mode!r}")
    return n_experts * dim, hidden, out


def moe_gate_nodes(
    tape: Tape,
    params: ParameterStore,
    expert_mats: list[np.ndarray],
    mode: str = "dimension",
) -> tuple[Node, np.ndarray]:
    """Differentiable gate: returns (h_rag node, gate weights as n x E x D).

    In "dimension" mode the gate MLP emits one score per (expert, dim) and
    the softmax runs across experts independently per dimension; in
    "scalar" mode it emits one score per expert, broadcast over dims.
    """
    shapes = {m.shape for m in expert_mats}
    if len(shapes) != 1:
        raise DimensionError(f"expert outputs disagree in shape: {sorted(shapes)}")
    n, dim = expert_mats[0].shape
    n_experts = len(expert_mats)

    stacked = tape.constant(np.concatenate(expert_mats, axis=1))
    raw = ad.mlp2(tape, params, "gate", stacked)
    if mode == "dimension":
        expected, width = n_experts * dim, dim
    elif mode == "scalar":
        expected, width = n_experts, 1
    else:
        raise ParameterError(f"unknown gate mode {mode!r}")
    if raw.value.shape[1] != expected:
        raise DimensionError(
            f"gate MLP output width {raw.value.shape[1]}, expected {expected}"
        )
    slices = [ad.slice_cols(raw, e * width, (e + 1) * width) for e in range(n_experts)]

    gates = ad.softmax_stack(slices)
    h_rag = None
    for gate, mat in zip(gates, expert_mats):
        term = ad.mul(gate, tape.constant(mat))
        h_rag = term if h_rag is None else ad.add(h_rag, term)

    weights = np.stack(
        [np.broadcast_to(g.value, (n, dim)) for g in gates], axis=1
    )  # n x E x D
    return h_rag, weights


def moe_gate(
    expert_mats: list[np.ndarray],
    params: ParameterStore,
    mode: str = "dimension",
) -> tuple[np.ndarray, np.ndarray]:
    """Plain-array gate: returns (gate weights n x E x D, h_rag n x D)."""
    tape = Tape()
    h_rag, weights = moe_gate_nodes(
        tape, params, [as_matrix(m, "expert output") for m in expert_mats], mode
    )
    return weights, h_rag.value
