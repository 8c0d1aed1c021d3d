"""Synthetic dataset generator for desk-scale experiments.

Construction: residues are noisy copies of orthonormal "motif" prototypes.
Some motifs are active in every cluster, some are background everywhere,
and a difficulty-controlled fraction is ambiguous: active in a random half
of the clusters. A residue's label is determined by whether its motif is
in its cluster's active set, so single-residue information cannot resolve
the ambiguous motifs, while neighbors from the same cluster (and the
protein's text description) can.

Text tokens are noisy linear images of the cluster's active/background
motif summaries plus a global token-type component, so cross-attention can
route each residue to the summary it matches. The noise-text switch
degrades the text modality on purpose: the content and type components
shrink and the token noise grows until text is useless as a sole predictor,
while its per-residue evidence quality still varies enough for the
reliability-error analysis to have something to measure.

At difficulty 0 there is no ambiguity and no residue noise: labels are
exactly determined by the nearest prototype and a linear probe separates
them perfectly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .manifest import save_manifest, write_embedding

__all__ = ["SynthConfig", "SynthProtein", "SynthDataset", "generate", "write_dataset"]


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_train: int = 200
    n_valid: int = 25
    n_test: int = 25
    length: int = 50
    dim: int = 32
    text_dim: int = 16
    text_tokens: int = 6
    clusters: int = 10
    positive_rate: float = 0.1
    difficulty: float = 0.5
    noise_text: bool = False
    active_motifs: int = 8
    background_motifs: int = 8
    # Detail knobs, normally derived from difficulty: the fraction of
    # active motifs that are cluster-ambiguous, and the residue noise norm.
    ambiguity: float | None = None
    residue_noise: float | None = None
    # Fraction of planted active labels that are "cryptic": embedded as
    # inactive-pool motifs, so no modality carries evidence for them.
    # Applies to the valid/test splits only; the train split (and so the
    # retrieval database) stays curated.
    label_noise: float = 0.0

    def __post_init__(self):
        if self.dim < 2:
            raise ParameterError(f"dim must be >= 2, got {self.dim}")
        total = self.n_train + self.n_valid + self.n_test
        if total < 10:
            raise ParameterError(f"need at least 10 proteins, got {total}")
        if not (0.0 < self.positive_rate < 1.0):
            raise ParameterError(f"positive_rate must be in (0, 1), got {self.positive_rate}")
        if not (0.0 <= self.difficulty <= 1.0):
            raise ParameterError(f"difficulty must be in [0, 1], got {self.difficulty}")
        if self.active_motifs < 1 or self.background_motifs < 1:
            raise ParameterError("need at least one active and one background motif")
        if self.active_motifs + self.background_motifs > self.dim:
            raise ParameterError(
                f"{self.active_motifs}+{self.background_motifs} motifs exceed dim {self.dim}"
            )
        if self.clusters < 1 or self.n_train < self.clusters:
            raise ParameterError("every cluster needs at least one training protein")
        if self.text_dim < 2 or self.text_tokens < 1:
            raise ParameterError("text_dim must be >= 2 and text_tokens >= 1")
        if self.length < 2:
            raise ParameterError(f"length must be >= 2, got {self.length}")
        if self.ambiguity is not None and not (0.0 <= self.ambiguity <= 1.0):
            raise ParameterError(f"ambiguity must be in [0, 1], got {self.ambiguity}")
        if self.residue_noise is not None and self.residue_noise < 0.0:
            raise ParameterError(f"residue_noise must be >= 0, got {self.residue_noise}")
        if not (0.0 <= self.label_noise < 1.0):
            raise ParameterError(f"label_noise must be in [0, 1), got {self.label_noise}")


@dataclass
class SynthProtein:
    id: str
    split: str
    cluster: str
    seq_emb: np.ndarray  # length x dim
    text_emb: np.ndarray  # tokens x text_dim
    labels: np.ndarray  # length, {0, 1}


@dataclass
class SynthDataset:
    config: SynthConfig
    proteins: list[SynthProtein]
    motifs: np.ndarray  # G x dim, orthonormal rows
    always_active: np.ndarray  # motif indices active in every cluster
    ambiguous: np.ndarray  # motif indices active in a random half of clusters
    background: np.ndarray  # motif indices never active
    cluster_active: list[np.ndarray] = field(default_factory=list)  # per-cluster motif ids

    def split(self, name: str) -> list[SynthProtein]:
        return [p for p in self.proteins if p.split == name]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate(config: SynthConfig) -> SynthDataset:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    d, t_dim = config.dim, config.text_dim
    g_act, g_bg = config.active_motifs, config.background_motifs
    n_motifs = g_act + g_bg

    # Orthonormal motif prototypes from a random rotation.
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    motifs = q[:n_motifs, :]

    ambiguity = config.ambiguity if config.ambiguity is not None else config.difficulty
    n_ambiguous = round(ambiguity * g_act)
    always_active = np.arange(0, g_act - n_ambiguous)
    ambiguous = np.arange(g_act - n_ambiguous, g_act)
    background = np.arange(g_act, n_motifs)

    # Per-cluster active sets: the always-active motifs plus ~half of the
    # ambiguous ones; every cluster keeps at least one active motif.
    cluster_active: list[np.ndarray] = []
    cluster_inactive: list[np.ndarray] = []
    for _ in range(config.clusters):
        take = rng.random(n_ambiguous) < 0.5
        active = np.concatenate((always_active, ambiguous[take]))
        if active.size == 0:
            active = ambiguous[:1]
            take = np.zeros(n_ambiguous, dtype=bool)
            take[0] = True
        inactive = np.concatenate((background, ambiguous[~take]))
        cluster_active.append(np.sort(active))
        cluster_inactive.append(np.sort(inactive))

    # Fixed random projection into text space plus global token-type marks.
    text_map = rng.standard_normal((t_dim, d)) / np.sqrt(t_dim)
    type_active = _unit(rng.standard_normal(t_dim))
    type_background = _unit(rng.standard_normal(t_dim))

    residue_noise = (
        config.residue_noise
        if config.residue_noise is not None
        else 0.9 * config.difficulty
    )  # noise vector norm, roughly
    if config.noise_text:
        content_scale, type_scale, text_noise = 0.22, 0.12, 1.1
    else:
        content_scale, type_scale, text_noise = 1.0, 0.7, 0.35

    total = config.n_train + config.n_valid + config.n_test
    width = len(str(total - 1))
    n_act = max(1, round(config.positive_rate * config.length))

    proteins = []
    for index in range(total):
        if index < config.n_train:
            split = "train"
        elif index < config.n_train + config.n_valid:
            split = "valid"
        else:
            split = "test"
        cluster = index % config.clusters
        active_pool = cluster_active[cluster]
        inactive_pool = cluster_inactive[cluster]

        positions = np.sort(rng.choice(config.length, size=n_act, replace=False))
        labels = np.zeros(config.length, dtype=np.int8)
        labels[positions] = 1

        motif_ids = np.where(
            labels == 1,
            rng.choice(active_pool, size=config.length),
            rng.choice(inactive_pool, size=config.length),
        )
        if config.label_noise > 0.0 and split != "train":
            # keep the label, remove the evidence: cryptic sites take a
            # background motif no modality can associate with activity
            cryptic = rng.random(config.length) < config.label_noise
            cryptic &= labels == 1
            n_cryptic = int(cryptic.sum())
            if n_cryptic:
                motif_ids[cryptic] = rng.choice(background, size=n_cryptic)
        base = motifs[motif_ids, :]
        noise = rng.standard_normal((config.length, d)) * (residue_noise / np.sqrt(d))
        seq = base + noise
        seq = seq / np.linalg.norm(seq, axis=1, keepdims=True)

        summary_active = _unit(motifs[active_pool, :].mean(axis=0))
        summary_inactive = _unit(motifs[inactive_pool, :].mean(axis=0))
        text = rng.standard_normal((config.text_tokens, t_dim)) * (
            text_noise / np.sqrt(t_dim)
        )
        text[0] += content_scale * (text_map @ summary_active) + type_scale * type_active
        if config.text_tokens > 1:
            text[1] += (
                content_scale * (text_map @ summary_inactive)
                + type_scale * type_background
            )

        proteins.append(
            SynthProtein(
                id=f"P{index:0{width}d}",
                split=split,
                cluster=f"c{cluster}",
                seq_emb=seq,
                text_emb=text,
                labels=labels,
            )
        )

    return SynthDataset(
        config=config,
        proteins=proteins,
        motifs=motifs,
        always_active=always_active,
        ambiguous=ambiguous,
        background=background,
        cluster_active=cluster_active,
    )


def write_dataset(dataset: SynthDataset, out_dir) -> Path:
    """Write embedding files and the manifest; returns the manifest path."""
    out = Path(out_dir)
    emb_dir = out / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for prot in dataset.proteins:
        seq_rel = f"emb/{prot.id}.emb"
        text_rel = f"emb/{prot.id}.text.emb"
        write_embedding(out / seq_rel, prot.seq_emb)
        write_embedding(out / text_rel, prot.text_emb)
        rows.append(
            {
                "id": prot.id,
                "seq": seq_rel,
                "text": text_rel,
                "labels": [int(v) for v in prot.labels],
                "split": prot.split,
                "cluster": prot.cluster,
            }
        )
    manifest_path = out / "manifest.json"
    save_manifest(manifest_path, rows)
    return manifest_path
