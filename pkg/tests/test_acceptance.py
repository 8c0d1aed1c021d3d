"""Acceptance gate: every criterion below prints one PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The two training runs are
module-scoped fixtures shared by the criteria that need them; their wall
time counts toward the end-to-end budget.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import mera.autodiff as ad
from mera.autodiff import finite_diff_check
from mera.config import MeraConfig
from mera.metrics import EvalRecord, auprc, auroc, fmax, hits_at_k, mcc
from mera.model import MeraModel, prepare_dataset
from mera.pipeline import (
    cmd_build_db,
    cmd_calibrate,
    cmd_eval,
    cmd_predict,
    cmd_synth,
    cmd_train,
)
from mera.rmf import credibility, evidence_mass, fusion_weights, reliability
from mera.store import ProteinRecord, build_store, retrieve
from mera.synth import SynthConfig
from mera.training import build_loss, load_checkpoint

pytestmark = pytest.mark.acceptance

REPO_ROOT = Path(__file__).resolve().parent.parent


def report(name: str, passed: bool, detail: str) -> None:
    print(f"ACCEPTANCE {'PASS' if passed else 'FAIL'} - {name} - {detail}")
    assert passed, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared training runs
# ---------------------------------------------------------------------------

MAIN_SYNTH = SynthConfig(seed=7)  # 200/25/25, length 50, D=32, difficulty 0.5
NOISE_SYNTH = SynthConfig(
    seed=7,
    noise_text=True,
    ambiguity=1.0,
    residue_noise=0.15,
    active_motifs=12,
    background_motifs=12,
    label_noise=0.3,
)
MAIN_TRAIN = MeraConfig(seed=0, epochs=20)
NOISE_TRAIN = MeraConfig(seed=0, epochs=12)


def _run_pipeline(root: Path, synth_config, train_config):
    start = time.monotonic()
    manifest = cmd_synth(synth_config, root / "data")
    store = root / "db.store"
    cmd_build_db(manifest, store)
    checkpoint = root / "model.ckpt"
    cmd_train(manifest, store, train_config, checkpoint)
    return {
        "manifest": manifest,
        "store": store,
        "checkpoint": checkpoint,
        "elapsed": time.monotonic() - start,
    }


@pytest.fixture(scope="module")
def main_run(tmp_path_factory):
    return _run_pipeline(tmp_path_factory.mktemp("main"), MAIN_SYNTH, MAIN_TRAIN)


@pytest.fixture(scope="module")
def noise_run(tmp_path_factory):
    return _run_pipeline(tmp_path_factory.mktemp("noise"), NOISE_SYNTH, NOISE_TRAIN)


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def test_formula_unit_suite():
    """Every worked numerical example passes at its stated tolerance."""
    start = time.monotonic()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-m", "formula", "-q",
         "-p", "no:cacheprovider"],
        cwd=REPO_ROOT,
        capture_output=True,
        text=True,
    )
    elapsed = time.monotonic() - start
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    report(
        "formula unit suite",
        proc.returncode == 0 and elapsed < 10.0,
        f"exit {proc.returncode}, {elapsed:.1f}s (budget 10s): {tail}",
    )


def test_gradient_suite():
    """End-to-end finite differences on a 2-protein, D=8 configuration."""
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    config = MeraConfig(
        seed=3, emb_dim=8, text_dim=6, attn_dim=4, head_hidden=4, gate_hidden=6,
        k_neighbors=2,
    ).resolved()

    records = []
    for i in range(4):
        seq = rng.standard_normal((5, 8))
        labels = np.zeros(5, dtype=int)
        labels[rng.choice(5, 2, replace=False)] = 1
        records.append(ProteinRecord.from_labels(f"db{i}", seq, labels))
    store = build_store(records)

    queries = []
    for i in range(2):
        seq = rng.standard_normal((4, 8))
        labels = np.zeros(4, dtype=int)
        labels[rng.choice(4, 2, replace=False)] = 1
        queries.append(ProteinRecord.from_labels(f"q{i}", seq, labels))
    texts = {rec.id: rng.standard_normal((3, 6)) for rec in queries}
    prepared, _ = prepare_dataset(queries, store, config, texts)
    for prot, rec in zip(prepared, queries):
        prot.labels = rec.labels

    model = MeraModel.build(config)

    def build(params, tape):
        m = MeraModel(config, params)
        total = None
        for prot in prepared:
            out = m.forward(tape, prot)
            losses = build_loss(tape, out.rmf, prot.labels, config)
            total = losses.total if total is None else ad.add(total, losses.total)
        return ad.scale(total, 0.5)

    err = finite_diff_check(build, model.params, step=1e-4)
    elapsed = time.monotonic() - start
    n_coords = sum(e.value.size for _, e in model.params.entries())
    report(
        "gradient suite",
        err < 1e-4 and elapsed < 60.0,
        f"max rel err {err:.3e} over {n_coords} coordinates "
        f"(bound 1e-4), {elapsed:.1f}s (budget 60s)",
    )


def test_retrieval_oracle():
    """Exact top-K equals a brute-force full scan on 1000 random stores."""
    start = time.monotonic()
    rng = np.random.default_rng(555)
    failures = 0
    for _ in range(1000):
        m = int(rng.integers(2, 201))
        dim = int(rng.integers(2, 33))
        k = int(rng.integers(1, 9))
        keys = rng.standard_normal((m, dim))
        if rng.random() < 0.25:  # plant exact key ties
            keys[rng.integers(m)] = keys[rng.integers(m)]
        records = [
            ProteinRecord(id=f"r{i:03d}", seq_emb=keys[i : i + 1], active_indices=(0,))
            for i in range(m)
        ]
        store = build_store(records)
        query = rng.standard_normal((1, dim))
        exclude = f"r{rng.integers(m):03d}" if rng.random() < 0.5 else None
        got = retrieve(store, query, k, exclude_id=exclude).ids()

        qn = query[0] / np.linalg.norm(query[0])
        scored = []
        for rec in store.records:
            if exclude is not None and rec.id == exclude:
                continue
            key = rec.chain_key[0]
            sim = float(np.clip(np.dot(qn, key / np.linalg.norm(key)), -1, 1))
            scored.append((-sim, rec.id))
        scored.sort()
        expected = [rid for _, rid in scored[:k]]
        if got != expected:
            failures += 1
    elapsed = time.monotonic() - start
    report(
        "retrieval oracle",
        failures == 0 and elapsed < 30.0,
        f"{failures}/1000 mismatches, {elapsed:.1f}s (budget 30s)",
    )


def _ap_oracle(scores, labels):
    total_pos = int(labels.sum())
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    ap = 0.0
    for value in np.unique(s)[::-1]:
        group = s == value
        at_least = s >= value
        group_pos = int(y[group].sum())
        if group_pos:
            ap += group_pos * (int(y[at_least].sum()) / int(at_least.sum()))
    return ap / total_pos


def test_metric_oracles():
    """Sorting-based metrics equal exhaustive/quadratic oracles exactly."""
    start = time.monotonic()
    rng = np.random.default_rng(909)
    mismatches = []
    for trial in range(500):
        n = int(rng.integers(5, 201))
        scores = rng.uniform(0.001, 0.999, n)
        if rng.random() < 0.5:  # ties
            scores = np.round(scores, 2)
        labels = (rng.random(n) < rng.uniform(0.05, 0.6)).astype(int)
        if labels.sum() == 0:
            labels[int(rng.integers(n))] = 1
        if labels.sum() == n:
            labels[int(rng.integers(n))] = 0
        cut = int(rng.integers(1, n))
        records = [
            EvalRecord("a", scores[:cut], labels[:cut]),
            EvalRecord("b", scores[cut:], labels[cut:]),
        ]

        # fmax: exhaustive threshold sweep
        best_f, best_t = -1.0, np.inf
        for t in sorted(set(scores.tolist()), reverse=True):
            predicted = scores >= t
            tp = int((predicted & (labels == 1)).sum())
            denom = int(predicted.sum()) + int(labels.sum())
            f1 = 2.0 * tp / denom if denom else 0.0
            if f1 > best_f or (f1 == best_f and t < best_t):
                best_f, best_t = f1, t
        if fmax(records) != (best_f, best_t):
            mismatches.append((trial, "fmax"))

        if auprc(records) != _ap_oracle(scores, labels):
            mismatches.append((trial, "auprc"))

        pos, neg = scores[labels == 1], scores[labels == 0]
        wins = float((pos[:, None] > neg[None, :]).sum())
        ties = float((pos[:, None] == neg[None, :]).sum())
        if auroc(records) != (wins + 0.5 * ties) / float(pos.size * neg.size):
            mismatches.append((trial, "auroc"))

        threshold = float(rng.uniform(0.1, 0.9))
        predicted = scores >= threshold
        tp = int((predicted & (labels == 1)).sum())
        fp = int((predicted & (labels == 0)).sum())
        fn = int((~predicted & (labels == 1)).sum())
        tn = int((~predicted & (labels == 0)).sum())
        denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        expected_mcc = 0.0 if denom == 0 else (tp * tn - fp * fn) / np.sqrt(float(denom))
        if mcc(records, threshold) != expected_mcc:
            mismatches.append((trial, "mcc"))

        k = int(rng.integers(1, 12))
        hits_expected = []
        for rec in records:
            if rec.labels.sum() == 0:
                continue
            ranked = sorted(range(rec.scores.size), key=lambda i: (-rec.scores[i], i))
            hits_expected.append(1.0 if any(rec.labels[i] for i in ranked[:k]) else 0.0)
        expected_hits = sum(hits_expected) / len(hits_expected)
        if hits_at_k(records, k)[0] != expected_hits:
            mismatches.append((trial, "hits"))
    elapsed = time.monotonic() - start
    report(
        "metric oracles",
        not mismatches and elapsed < 30.0,
        f"{len(mismatches)} mismatches over 500 instances "
        f"{mismatches[:3]}, {elapsed:.1f}s (budget 30s)",
    )


def test_evidential_invariants():
    rng = np.random.default_rng(777)
    n = 100_000
    raw = rng.exponential(1.0, size=(n, 3))
    simplex = raw / raw.sum(axis=1, keepdims=True)

    cred_violations = 0
    for row in simplex:
        c = credibility(row)
        if (c < 0.0).any() or (c > 1.0).any():
            cred_violations += 1

    scores = rng.uniform(0.0, 1.0, size=(2000, 3))
    mass_violations = sum(
        1 for row in scores if abs(evidence_mass(row).sum() - 1.0) > 1e-9
    )
    weight_violations = 0
    ordering_violations = 0
    for row in rng.uniform(0.0, 1.0, size=(2000, 3)):
        w = fusion_weights(row)
        if abs(w.sum() - 1.0) > 1e-9:
            weight_violations += 1
        if np.argsort(row).tolist() != np.argsort(-w).tolist():
            # strict gaps in u must invert strictly in the weights
            if len(set(np.round(row, 12))) == 3:
                ordering_violations += 1

    sym_violations = 0
    for c in rng.uniform(0.0, 1.0, 100_000):
        if abs(reliability(c) - reliability(1.0 - c)) > 1e-12:
            sym_violations += 1

    total = cred_violations + mass_violations + weight_violations
    total += ordering_violations + sym_violations
    report(
        "evidential invariants",
        total == 0,
        f"credibility {cred_violations}, mass {mass_violations}, "
        f"weights {weight_violations}, ordering {ordering_violations}, "
        f"symmetry {sym_violations} violations (all must be 0)",
    )


def test_synthetic_end_to_end(main_run, noise_run):
    full = cmd_eval(main_run["manifest"], main_run["store"], main_run["checkpoint"])
    seq_only = cmd_eval(
        main_run["manifest"], main_run["store"], main_run["checkpoint"],
        disable_modalities=("rag", "text"),
    )
    history = [
        json.loads(line)
        for line in Path(str(main_run["checkpoint"]) + ".log.jsonl").read_text().splitlines()
    ]
    best = max(h["val_auprc"] for h in history)
    improved = best > history[0]["val_auprc"]
    elapsed = main_run["elapsed"] + noise_run["elapsed"]
    gap = full.auprc - seq_only.auprc
    report(
        "synthetic end-to-end",
        full.auprc >= 0.85 and gap >= 0.03 and improved and elapsed < 900.0,
        f"full auprc {full.auprc:.4f} (>= 0.85), seq-only {seq_only.auprc:.4f}, "
        f"gap {gap:.4f} (>= 0.03), val auprc improved epoch1 "
        f"{history[0]['val_auprc']:.4f} -> best {best:.4f}, "
        f"both runs {elapsed:.0f}s (budget 900s)",
    )


def test_reliability_error_monotonicity(noise_run):
    tables = cmd_calibrate(
        noise_run["manifest"], noise_run["store"], noise_run["checkpoint"],
        band=0.8, bins=8,
    )
    text = tables["text"]
    non_empty = len(text["bins"])
    errors = sum(b["error_rate"] * b["count"] for b in text["bins"])
    report(
        "reliability-error monotonicity",
        text["spearman"] >= 0.0 and non_empty >= 5,
        f"degraded-text spearman {text['spearman']:+.3f} (>= 0), "
        f"{non_empty} non-empty bins (>= 5), {errors:.0f} high-confidence errors",
    )


def test_determinism(tmp_path):
    synth = SynthConfig(
        seed=5, n_train=12, n_valid=4, n_test=4, length=10, dim=8, text_dim=6,
        text_tokens=4, clusters=3, active_motifs=3, background_motifs=3,
    )
    config = MeraConfig(seed=0, epochs=2, attn_dim=6)
    manifest = cmd_synth(synth, tmp_path / "data")
    store = tmp_path / "db.store"
    cmd_build_db(manifest, store)
    cmd_train(manifest, store, config, tmp_path / "a.ckpt")
    cmd_train(manifest, store, config, tmp_path / "b.ckpt")
    same_ckpt = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    cmd_predict(manifest, store, tmp_path / "a.ckpt", tmp_path / "p1.tsv")
    cmd_predict(manifest, store, tmp_path / "a.ckpt", tmp_path / "p2.tsv")
    same_pred = (tmp_path / "p1.tsv").read_bytes() == (tmp_path / "p2.tsv").read_bytes()
    report(
        "determinism",
        same_ckpt and same_pred,
        f"checkpoints byte-identical: {same_ckpt}, predictions byte-identical: {same_pred}",
    )


def test_ablation_structure(main_run):
    full = cmd_eval(main_run["manifest"], main_run["store"], main_run["checkpoint"])
    problems = []
    base = load_checkpoint(main_run["checkpoint"])
    d = base.config.emb_dim
    hidden = base.config.gate_hidden
    for expert in ("seq", "chain", "act"):
        try:
            rep = cmd_eval(
                main_run["manifest"], main_run["store"], main_run["checkpoint"],
                disable_experts=(expert,),
            )
            keep = tuple(e for e in base.config.experts if e != expert)
            sliced = base.restrict_experts(keep)
            shapes = (
                sliced.params.value("gate.W1").shape,
                sliced.params.value("gate.W2").shape,
                sliced.params.value("gate.b2").shape,
            )
            expected = ((2 * d, hidden), (hidden, 2 * d), (1, 2 * d))
            if shapes != expected:
                problems.append(f"expert {expert}: gate shapes {shapes}")
            if rep.auprc > full.auprc + 0.02:
                problems.append(
                    f"expert {expert}: auprc {rep.auprc:.4f} > full + 0.02"
                )
        except Exception as exc:  # must never crash
            problems.append(f"expert {expert}: {type(exc).__name__}: {exc}")
    for modality in ("seq", "rag", "text"):
        try:
            rep = cmd_eval(
                main_run["manifest"], main_run["store"], main_run["checkpoint"],
                disable_modalities=(modality,),
            )
            if rep.auprc > full.auprc + 0.02:
                problems.append(
                    f"modality {modality}: auprc {rep.auprc:.4f} > full + 0.02"
                )
        except Exception as exc:
            problems.append(f"modality {modality}: {type(exc).__name__}: {exc}")
    report(
        "ablation structure",
        not problems,
        f"full auprc {full.auprc:.4f}; problems: {problems or 'none'}",
    )
