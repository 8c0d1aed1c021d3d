"""End-to-end commands behind the CLI: database build, training,
evaluation, prediction, calibration, and embedding export.

Proteins are always processed in ascending id order so every output is
deterministic given (inputs, seed, flags).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .config import MeraConfig
from .errors import ConfigError, DataError, ParameterError
from .manifest import Manifest, load_manifest, read_embedding, write_embedding
from .metrics import (
    CalibrationSample,
    MetricReport,
    calibration_report,
    compute_report,
)
from .model import MeraModel, prepare_dataset, prepare_protein
from .store import ProteinRecord, Store, build_store, load_store, save_store
from .synth import SynthConfig, generate, write_dataset
from .training import TrainResult, eval_records, load_checkpoint, save_checkpoint, train

__all__ = [
    "cmd_synth",
    "cmd_build_db",
    "cmd_train",
    "cmd_eval",
    "cmd_predict",
    "cmd_calibrate",
    "cmd_export_embeddings",
]

log = logging.getLogger(__name__)


def cmd_synth(config: SynthConfig, out_dir) -> Path:
    dataset = generate(config)
    manifest_path = write_dataset(dataset, out_dir)
    log.info(
        "wrote %d proteins to %s (difficulty %.2f, noise_text %s)",
        len(dataset.proteins),
        out_dir,
        config.difficulty,
        config.noise_text,
    )
    return manifest_path


def cmd_build_db(manifest_path, out_path, split: str = "train") -> Store:
    manifest = load_manifest(manifest_path)
    records = manifest.records(split)
    if not records:
        raise ConfigError(f"manifest has no proteins in split {split!r}")
    store = build_store(records)
    save_store(store, out_path)
    log.info("store of %d records written to %s", len(store), out_path)
    return store


def _load_store_for(manifest: Manifest, store_path, split: str = "train") -> Store:
    """Load a store file and verify it matches the manifest's split; extra
    embedding blocks (not part of the store format) are rehydrated from the
    manifest so configurable experts can read them."""
    store = load_store(store_path)
    expected = {e.id for e in manifest.split(split)}
    actual = set(store.ids())
    if expected != actual:
        raise DataError(
            f"store {store_path} does not match the manifest's {split} split "
            f"(missing {sorted(expected - actual)[:5]}, "
            f"unexpected {sorted(actual - expected)[:5]})"
        )
    by_id = {e.id: e for e in manifest.split(split)}
    for record in store.records:
        entry = by_id[record.id]
        if entry.extra_paths:
            record.extra = {
                name: arr.astype(np.float32).astype(np.float64)
                for name, arr in entry.load_extra().items()
            }
    return store


def _resolve_config(config: MeraConfig, manifest: Manifest) -> MeraConfig:
    """Fill unset dims from the first training protein's files."""
    entries = manifest.split("train") or manifest.entries
    if not entries:
        raise ConfigError("manifest has no proteins")
    first = entries[0]
    emb_dim = first.load_seq().shape[1]
    text = first.load_text()
    text_dim = None if text is None else text.shape[1]
    return config.resolved(emb_dim=emb_dim, text_dim=text_dim)


def _prepare_split(manifest: Manifest, split: str, store: Store | None, config: MeraConfig):
    records = manifest.records(split)
    if not records:
        raise ConfigError(f"manifest has no proteins in split {split!r}")
    texts = manifest.text_embeddings(split) if "text" in config.modalities else {}
    if "text" in config.modalities:
        missing = [r.id for r in records if r.id not in texts]
        if missing:
            raise ConfigError(
                f"text modality is active but {len(missing)} protein(s) lack text "
                f"embeddings (first: {missing[:3]})"
            )
    return prepare_dataset(records, store, config, texts)[0]


def cmd_train(
    manifest_path,
    store_path,
    config: MeraConfig,
    out_checkpoint,
    log_path=None,
) -> TrainResult:
    manifest = load_manifest(manifest_path)
    config = _resolve_config(config, manifest)
    store = (
        _load_store_for(manifest, store_path) if "rag" in config.modalities else None
    )
    train_set = _prepare_split(manifest, "train", store, config)
    valid_set = _prepare_split(manifest, "valid", store, config)
    model = MeraModel.build(config)
    result = train(train_set, valid_set, model, config)
    save_checkpoint(result.model, out_checkpoint)
    log_path = Path(log_path) if log_path else Path(str(out_checkpoint) + ".log.jsonl")
    with open(log_path, "w") as fh:
        for row in result.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    log.info(
        "best epoch %d (val auprc %.4f); checkpoint %s",
        result.best_epoch,
        result.best_val_auprc,
        out_checkpoint,
    )
    return result


def _ablated_model(
    checkpoint_path,
    disable_modalities: tuple[str, ...],
    disable_experts: tuple[str, ...],
    k_override: int | None = None,
) -> MeraModel:
    model = load_checkpoint(checkpoint_path)
    if disable_experts:
        unknown = [e for e in disable_experts if e not in model.config.experts]
        if unknown:
            raise ConfigError(f"cannot disable unknown experts {unknown}")
        keep = tuple(e for e in model.config.experts if e not in disable_experts)
        model = model.restrict_experts(keep)
    if disable_modalities:
        unknown = [m for m in disable_modalities if m not in model.config.modalities]
        if unknown:
            raise ConfigError(f"cannot disable unknown modalities {unknown}")
        keep = tuple(m for m in model.config.modalities if m not in disable_modalities)
        if not keep:
            raise ConfigError("flags disable every modality")
        model = model.restrict_modalities(keep)
    if k_override is not None:
        model = MeraModel(model.config.override(k_neighbors=k_override), model.params)
    return model


def cmd_eval(
    manifest_path,
    store_path,
    checkpoint_path,
    split: str = "test",
    disable_modalities: tuple[str, ...] = (),
    disable_experts: tuple[str, ...] = (),
    hits_mode: str | None = None,
    fmax_mode: str | None = None,
    k: int | None = None,
    out=None,
) -> MetricReport:
    manifest = load_manifest(manifest_path)
    model = _ablated_model(checkpoint_path, disable_modalities, disable_experts, k)
    store = (
        _load_store_for(manifest, store_path)
        if "rag" in model.config.modalities
        else None
    )
    prepared = _prepare_split(manifest, split, store, model.config)
    records = eval_records(model, prepared)
    report = compute_report(
        records,
        hits_mode=hits_mode or model.config.hits_mode,
        fmax_mode=fmax_mode or model.config.fmax_mode,
    )
    text = report.to_text()
    print(text, end="")
    if out is not None:
        out = Path(out)
        out.with_suffix(out.suffix + ".json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n"
        )
        out.with_suffix(out.suffix + ".txt").write_text(text)
    return report


def _predict_bundles(model: MeraModel, manifest: Manifest, store, split: str):
    prepared = _prepare_split(manifest, split, store, model.config)
    for prot in sorted(prepared, key=lambda p: p.id):
        yield prot, model.predict(prot)


def cmd_predict(
    manifest_path,
    store_path,
    checkpoint_path,
    out,
    split: str = "test",
    k: int | None = None,
    seq_emb_path=None,
    text_emb_path=None,
    protein_id: str = "query",
) -> int:
    """Per-residue score file: one tab-separated line per residue with the
    protein id, residue index, fused score, and per-modality reliability
    indicators. Input is either a manifest split or a single protein's
    embedding files. Returns the number of residue lines written."""
    model = _ablated_model(checkpoint_path, (), (), k)
    needs_store = "rag" in model.config.modalities
    if seq_emb_path is not None:
        store = load_store(store_path) if needs_store else None
        text = read_embedding(text_emb_path) if text_emb_path is not None else None
        if "text" in model.config.modalities and text is None:
            raise ConfigError(
                "the checkpoint uses the text modality; a text embedding is required"
            )
        record = ProteinRecord(id=protein_id, seq_emb=read_embedding(seq_emb_path),
                               active_indices=())
        prepared = [prepare_protein(record, store, model.config, text)[0]]
    elif manifest_path is not None:
        manifest = load_manifest(manifest_path)
        store = _load_store_for(manifest, store_path) if needs_store else None
        prepared = _prepare_split(manifest, split, store, model.config)
    else:
        raise ConfigError("predict needs a manifest or a sequence embedding file")

    mods = model.config.modalities
    lines = ["#id\tresidue\tscore\t" + "\t".join(f"u_{m}" for m in mods)]
    count = 0
    for prot in sorted(prepared, key=lambda p: p.id):
        bundle = model.predict(prot)
        rel = bundle.bundle.reliability
        for i, score in enumerate(bundle.y_hat):
            u_cols = "\t".join(f"{rel[i, s]:.10g}" for s in range(len(mods)))
            lines.append(f"{prot.id}\t{i}\t{score:.10g}\t{u_cols}")
            count += 1
    Path(out).write_text("\n".join(lines) + "\n")
    log.info("wrote %d residue scores to %s", count, out)
    return count


def cmd_calibrate(
    manifest_path,
    store_path,
    checkpoint_path,
    band: float = 0.8,
    bins: int = 10,
    split: str = "test",
    out=None,
) -> dict:
    if not (0.0 < band < 1.0):
        raise ParameterError(f"band must be in (0, 1), got {band}")
    manifest = load_manifest(manifest_path)
    model = _ablated_model(checkpoint_path, (), (), None)
    store = (
        _load_store_for(manifest, store_path)
        if "rag" in model.config.modalities
        else None
    )
    samples = []
    for prot, bundle in _predict_bundles(model, manifest, store, split):
        if prot.labels is None:
            raise ConfigError(f"protein {prot.id!r} has no labels")
        rel = bundle.bundle.reliability
        mods = bundle.bundle.modalities
        for i, score in enumerate(bundle.y_hat):
            samples.append(
                CalibrationSample(
                    y_hat=float(score),
                    label=int(prot.labels[i]),
                    u={m: float(rel[i, s]) for s, m in enumerate(mods)},
                )
            )
    tables = calibration_report(samples, model.config.modalities, band, bins)
    payload = {m: t.to_dict() for m, t in tables.items()}
    text_lines = []
    for m in model.config.modalities:
        table = tables[m]
        text_lines.append(f"modality {m} spearman {table.spearman:.6f}"
                          + (" EMPTY" if table.empty else ""))
        for lo, hi, c, e in zip(
            table.bin_low, table.bin_high, table.counts, table.error_rates
        ):
            text_lines.append(f"  u [{lo:.4f}, {hi:.4f}] n={c} error_rate={e:.6f}")
    text = "\n".join(text_lines) + "\n"
    print(text, end="")
    if out is not None:
        out = Path(out)
        out.with_suffix(out.suffix + ".json").write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n"
        )
        out.with_suffix(out.suffix + ".txt").write_text(text)
    return payload


def cmd_export_embeddings(
    manifest_path,
    store_path,
    checkpoint_path,
    which: str,
    out,
    labels_out=None,
    split: str = "test",
) -> int:
    """Stack one modality's per-residue representations (ascending protein
    id) into an embedding file, with a parallel n x 1 label sidecar in the
    same container format. Returns the exported row count."""
    if which not in ("seq", "rag", "text"):
        raise ParameterError(f"which must be seq, rag, or text, got {which!r}")
    manifest = load_manifest(manifest_path)
    model = _ablated_model(checkpoint_path, (), (), None)
    if which not in model.config.modalities:
        raise ConfigError(f"modality {which!r} is not active in the checkpoint")
    store = (
        _load_store_for(manifest, store_path)
        if "rag" in model.config.modalities
        else None
    )
    prepared = _prepare_split(manifest, split, store, model.config)
    blocks, labels = [], []
    for prot in sorted(prepared, key=lambda p: p.id):
        blocks.append(model.representation(prot, which))
        if prot.labels is None:
            raise ConfigError(f"protein {prot.id!r} has no labels")
        labels.append(prot.labels.astype(np.float64))
    stacked = np.vstack(blocks)
    write_embedding(out, stacked)
    if labels_out is None:
        labels_out = str(out) + ".labels"
    write_embedding(labels_out, np.concatenate(labels).reshape(-1, 1))
    log.info("exported %d rows of %s to %s", stacked.shape[0], which, out)
    return stacked.shape[0]
