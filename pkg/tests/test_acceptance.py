"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
status lines.
"""
import hashlib
import json
import statistics
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from maskfuse.cli import cli
from maskfuse.errors import DanglingReference, SchemaError
from maskfuse.evaluation import ConfusionMatrix, accumulate, finalize
from maskfuse.fixtures import (
    SceneSpec,
    generate_synthetic_scene,
    load_manifest,
    read_embedding_file,
    read_label_grid,
)
from maskfuse.fusion import FusionConfig, fuse_mask
from maskfuse.masks import BinaryMask, mask_from_bitmap, rle_decode, rle_encode
from maskfuse.openvocab import CandidateLabel, EmbeddingTable, rank_candidates
from maskfuse.pipeline import PipelineConfig, run_bench, run_pipeline
from maskfuse.taxonomy import (
    VOID_ID,
    SemanticMap,
    Taxonomy,
    ClosedSetVote,
    majority_vote,
)

GOLDEN = Path(__file__).parent / "golden"

GOLDEN_CHECKSUMS = {
    "closed_0.sfsl": "05131ad4fb3598655cf87324a00779b23a1162597b1f2ebb21f81cd75be594a4",
    "closed_1.sfsl": "05131ad4fb3598655cf87324a00779b23a1162597b1f2ebb21f81cd75be594a4",
    "embeddings.sfse": "286354fd6ea01a476177adb49488a233bf5e40821d8bbb958f2f467555aa581c",
    "ground_truth.sfsl": "05131ad4fb3598655cf87324a00779b23a1162597b1f2ebb21f81cd75be594a4",
    "manifest.json": "9320358b5bfb58c5ed4005abad4454a498f5ab71d3b34424b2a54dd1259be558",
    "taxonomy.txt": "487855356f73363a37859a4ec56f2280b2a6c746452f370d33517692f27b717f",
}
GOLDEN_LABELS_SHA = "e70521a2b5a24d220afef160faec7fea2baceca61f2c2fe5dc7c19e5a63ef02d"


def ok(name):
    print(f"[PASS] {name}")


def test_rle_round_trip():
    """1000 random grids <= 256x256; both round-trip identities; < 10 s."""
    rng = np.random.default_rng(1000)
    start = time.perf_counter()
    for _ in range(1000):
        h = int(rng.integers(1, 257))
        w = int(rng.integers(1, 257))
        grid = rng.random((h, w)) < rng.uniform(0.02, 0.98)
        if not grid.any():
            grid[0, 0] = True
        counts = rle_encode(grid)
        mask = BinaryMask(w, h, tuple(counts), 0.5, "m")
        decoded = rle_decode(mask)
        assert (decoded == grid).all()
        assert rle_encode(decoded) == counts
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"round-trip took {elapsed:.1f}s"
    ok(f"RLE round-trip: 1000 grids, 0 failures, {elapsed:.2f}s")


def test_majority_vote_oracle():
    """500 random (mask, map) pairs at 64x64 vs brute-force histogram."""
    rng = np.random.default_rng(2000)
    tax = Taxonomy("acc", tuple(f"c{i}" for i in range(12)))
    checked = 0
    for _ in range(500):
        grid = rng.random((64, 64)) < rng.uniform(0.1, 0.6)
        if not grid.any():
            grid[0, 0] = True
        mask = mask_from_bitmap(grid, 0.5, "m")
        labels = rng.integers(0, 12, (64, 64)).astype(np.uint16)
        labels[rng.random((64, 64)) < 0.05] = VOID_ID
        smap = SemanticMap(64, 64, labels, "acc")
        vals = labels[grid]
        vals = vals[vals != VOID_ID]
        if vals.size == 0:
            continue
        hist = Counter(int(v) for v in vals)
        top = max(hist.values())
        expected_id = min(c for c, n in hist.items() if n == top)
        vote = majority_vote(mask, smap, tax)
        assert vote.label_id == expected_id
        assert abs(vote.confidence - top / vals.size) <= 1e-12
        checked += 1
    # explicit tie cases: equal counts resolve to the smaller class id
    grid = np.zeros((2, 2), bool)
    grid[0, :] = True
    mask = mask_from_bitmap(grid, 0.5, "m")
    for a, b in [(0, 1), (3, 7), (11, 2)]:
        labels = np.full((2, 2), VOID_ID, dtype=np.uint16)
        labels[0, 0], labels[0, 1] = a, b
        vote = majority_vote(mask, SemanticMap(2, 2, labels, "acc"), tax)
        assert vote.label_id == min(a, b)
        assert vote.confidence == 0.5
    ok(f"majority-vote oracle: {checked} random pairs + 3 tie cases")


def test_miou_oracle():
    """Hand case 7/12, 200 random pairs vs set oracle, permutation invariance."""
    tax2 = Taxonomy("two", ("a", "b"))
    cm = ConfusionMatrix.empty(tax2)
    accumulate(
        cm,
        SemanticMap(2, 2, np.array([[0, 0], [1, 1]], np.uint16), "two"),
        SemanticMap(2, 2, np.array([[0, 1], [1, 1]], np.uint16), "two"),
    )
    assert abs(finalize(cm, tax2).miou - 7 / 12) <= 1e-12

    tax = Taxonomy("acc", tuple(f"c{i}" for i in range(5)))
    rng = np.random.default_rng(3000)
    for _ in range(200):
        g = rng.integers(0, 5, (16, 16)).astype(np.uint16)
        g[rng.random((16, 16)) < 0.1] = VOID_ID
        p = rng.integers(0, 5, (16, 16)).astype(np.uint16)
        cm = ConfusionMatrix.empty(tax)
        accumulate(cm, SemanticMap(16, 16, g, "acc"), SemanticMap(16, 16, p, "acc"))
        report = finalize(cm, tax)
        # set-intersection oracle
        valid = g != VOID_ID
        expected = {}
        for c in range(5):
            gs = set(zip(*np.where(valid & (g == c))))
            ps = set(zip(*np.where(valid & (p == c))))
            if gs or ps:
                expected[tax.class_names[c]] = Fraction(len(gs & ps), len(gs | ps))
        got = {n: v for n, v in report.per_class_iou if v is not None}
        assert set(got) == set(expected)
        for name in expected:
            assert abs(got[name] - float(expected[name])) <= 1e-12
        assert abs(report.miou - float(sum(expected.values()) / len(expected))) <= 1e-12

    # perfect prediction
    g = rng.integers(0, 5, (16, 16)).astype(np.uint16)
    cm = ConfusionMatrix.empty(tax)
    gmap = SemanticMap(16, 16, g, "acc")
    accumulate(cm, gmap, gmap)
    assert finalize(cm, tax).miou == 1.0

    # permutation invariance on 50 random relabelings
    g = rng.integers(0, 5, (16, 16)).astype(np.uint16)
    p = rng.integers(0, 5, (16, 16)).astype(np.uint16)
    cm = ConfusionMatrix.empty(tax)
    accumulate(cm, SemanticMap(16, 16, g, "acc"), SemanticMap(16, 16, p, "acc"))
    base = finalize(cm, tax).miou
    for _ in range(50):
        perm = rng.permutation(5)
        names = tuple(tax.class_names[i] for i in np.argsort(perm))
        tax_p = Taxonomy("acc", names)
        cm_p = ConfusionMatrix.empty(tax_p)
        accumulate(
            cm_p,
            SemanticMap(16, 16, perm[g].astype(np.uint16), "acc"),
            SemanticMap(16, 16, perm[p].astype(np.uint16), "acc"),
        )
        assert abs(finalize(cm_p, tax_p).miou - base) <= 1e-12
    ok("mIoU oracle: hand case 7/12, 200 random pairs, 50 relabelings")


def test_ranking_scale_invariance():
    """200 random tables; scaling the region vector never reorders output."""
    rng = np.random.default_rng(4000)
    for _ in range(200):
        dim = int(rng.integers(3, 16))
        n = int(rng.integers(2, 10))
        names = [f"w{i}" for i in range(n)]
        vectors = {name: rng.normal(size=dim) for name in names}
        region = rng.normal(size=dim)
        c = float(rng.uniform(1e-6, 10.0))
        t1 = EmbeddingTable(dim, {**vectors, "region": region})
        t2 = EmbeddingTable(dim, {**vectors, "region": c * region})
        r1 = rank_candidates("region", names, [], t1, top_k=n)
        r2 = rank_candidates("region", names, [], t2, top_k=n)
        assert [x.text for x in r1] == [x.text for x in r2]
    ok("ranking invariance: 200 tables, scale c in (0, 10]")


def test_fusion_truth_table():
    """Exhaustive table enumeration plus disabled-branch fuzzing."""
    tax_names = frozenset({"road", "car", "tree", "sky"})

    def vote(text, conf):
        return ClosedSetVote(0, text, conf, "t")

    def expected_of(votes, cands, cfg):
        best = max(votes, key=lambda v: v.confidence, default=None)
        top = cands[0] if cands else None
        if best is None and top is None:
            return ("unidentified", "unidentified")
        if not cfg.open_branch_enabled:
            return (best.label_text, "closed") if best else ("unidentified", "unidentified")
        if best and best.confidence >= cfg.tau_closed:
            ccos = next((x.similarity for x in cands if x.text == best.label_text), None)
            if ccos is None or top.similarity - ccos <= cfg.delta_margin:
                return (best.label_text, "closed")
        if top and top.text not in tax_names and top.similarity >= cfg.tau_open:
            return (top.text, "open")
        if best and best.confidence >= cfg.tau_closed:
            return (best.label_text, "closed")
        if top and top.similarity >= cfg.tau_open:
            return (top.text, "open")
        if best:
            return (best.label_text, "closed")
        return ("unidentified", "unidentified")

    cases = 0
    for has_vote in (False, True):
        for conf in (0.3, 0.8):
            for cand_kind in (None, "in_tax", "out_tax"):
                for sim in (0.1, 0.6):
                    for closed_cos in (None, 0.57, 0.2):
                        for enabled in (False, True):
                            votes = [vote("car", conf)] if has_vote else []
                            cands = []
                            if cand_kind:
                                text = "tree" if cand_kind == "in_tax" else "alien"
                                cands.append(CandidateLabel(text, sim, "caption_phrase"))
                                if has_vote and closed_cos is not None:
                                    cands.append(
                                        CandidateLabel("car", closed_cos, "closed_set_name")
                                    )
                                cands.sort(key=lambda x: (-x.similarity, x.text))
                            cfg = FusionConfig(open_branch_enabled=enabled)
                            got = fuse_mask(votes, cands, cfg, tax_names, "m")
                            assert (got.label_text, got.source) == expected_of(
                                votes, cands, cfg
                            ), (votes, cands, enabled)
                            cases += 1
    assert cases >= 64

    rng = np.random.default_rng(5000)
    cfg = FusionConfig(open_branch_enabled=False)
    words = ["car", "tree", "alien", "zebra", "pond", "sky"]
    changed = 0
    for votes in ([], [vote("car", 0.4)], [vote("road", 0.9)]):
        baseline = fuse_mask(votes, [], cfg, tax_names, "m")
        for _ in range(334):
            k = int(rng.integers(0, 5))
            sims = sorted(rng.uniform(-1, 1, size=k), reverse=True)
            cands = [
                CandidateLabel(words[int(rng.integers(0, len(words)))], float(s), "caption_phrase")
                for s in sims
            ]
            if fuse_mask(votes, cands, cfg, tax_names, "m") != baseline:
                changed += 1
    assert changed == 0
    ok(f"fusion truth table: {cases} enumerated cases, 1002 disabled-branch fuzz runs")


def _run_cli(args):
    result = CliRunner().invoke(cli, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


DETERMINISTIC_FILES = (
    "labels.csv",
    "rendered/synthetic_000.sfsl",
    "eval_report.json",
    "eval_report.csv",
)


def test_end_to_end_golden(tmp_path):
    """gen seed 42 -> run full -> eval: mIoU exactly 1.0, byte-determinism."""
    scene = tmp_path / "scene"
    _run_cli(["gen", "--out", str(scene), "--seed", "42"])
    outs = {}
    for name, workers in [("a", 1), ("b", 1), ("w4", 4)]:
        out = tmp_path / name
        _run_cli(["run", "--manifest", str(scene / "manifest.json"), "--out", str(out),
                  "--mode", "full", "--workers", str(workers)])
        outs[name] = out
    report = json.loads((outs["a"] / "eval_report.json").read_text())
    assert report["miou"] == 1.0
    for f in DETERMINISTIC_FILES:
        ref = (outs["a"] / f).read_bytes()
        assert (outs["b"] / f).read_bytes() == ref, f"{f} differs across runs"
        assert (outs["w4"] / f).read_bytes() == ref, f"{f} differs across worker counts"
    ev = tmp_path / "eval"
    result = _run_cli(["eval", "--manifest", str(scene / "manifest.json"),
                       "--pred", str(outs["a"]), "--out", str(ev)])
    assert "mIoU = 1.0000" in result.output
    ok("end-to-end golden: mIoU 1.0, byte-identical across runs and workers {1,4}")


def test_ablation_trend(tmp_path):
    """mIoU non-increasing for budgets 100 -> 50 -> 25; closed bench faster."""
    scene = tmp_path / "scene"
    spec = SceneSpec(width=360, height=360, regions=120, taxonomy_size=30, closed_maps=2)
    generate_synthetic_scene(scene, 4242, spec)
    manifest = load_manifest(scene / "manifest.json")
    mious = {}
    for budget in (100, 50, 25):
        result = run_pipeline(manifest, PipelineConfig(mode="full", mask_budget=budget))
        mious[budget] = result.eval_report.miou
    assert mious[100] >= mious[50] >= mious[25]

    closed = run_bench(manifest, PipelineConfig(mode="closed"), iterations=5)
    full = run_bench(manifest, PipelineConfig(mode="full"), iterations=5)
    assert closed.total_median < full.total_median
    ok(
        f"ablation trend: mIoU {mious[100]:.3f} >= {mious[50]:.3f} >= {mious[25]:.3f}; "
        f"closed {closed.total_median * 1e3:.1f} ms < full {full.total_median * 1e3:.1f} ms"
    )


def test_engine_performance_budget(tmp_path):
    """Closed-set stages for 100 masks on 1024x1024 with 2 maps < 150 ms median."""
    scene = tmp_path / "scene"
    spec = SceneSpec(width=1024, height=1024, regions=100, taxonomy_size=30, closed_maps=2)
    generate_synthetic_scene(scene, 77, spec)
    manifest = load_manifest(scene / "manifest.json")
    config = PipelineConfig(mode="closed", mask_budget=100)
    closed_stages = ("budget_select", "closed_vote", "fuse", "render")
    samples = []
    for i in range(6):
        result = run_pipeline(manifest, config)
        timing = result.images[0].timings
        assert timing.mask_count == 100
        samples.append(sum(timing.stages[s] for s in closed_stages))
    median = statistics.median(samples[1:])  # first run warms caches
    assert median < 0.150, f"closed-set labeling took {median * 1e3:.1f} ms median"
    ok(f"engine performance budget: {median * 1e3:.1f} ms median < 150 ms")


def test_format_conformance(tmp_path):
    """Golden checksums stable; every negative raises its specified error."""
    for name, expected in GOLDEN_CHECKSUMS.items():
        digest = hashlib.sha256((GOLDEN / name).read_bytes()).hexdigest()
        assert digest == expected, f"golden file {name} changed"
    manifest = load_manifest(GOLDEN / "manifest.json")
    result = run_pipeline(manifest, PipelineConfig(mode="full"))
    from maskfuse.report import write_labels_csv

    write_labels_csv(tmp_path / "labels.csv", result.images)
    assert (
        hashlib.sha256((tmp_path / "labels.csv").read_bytes()).hexdigest()
        == GOLDEN_LABELS_SHA
    )

    # negatives: bad magic
    bad = tmp_path / "bad.sfsl"
    bad.write_bytes(b"WRNG" + (GOLDEN / "ground_truth.sfsl").read_bytes()[4:])
    with pytest.raises(SchemaError):
        read_label_grid(bad)
    # truncation
    trunc = tmp_path / "trunc.sfse"
    trunc.write_bytes((GOLDEN / "embeddings.sfse").read_bytes()[:-5])
    with pytest.raises(SchemaError):
        read_embedding_file(trunc)
    # dangling reference
    broken_dir = tmp_path / "broken"
    broken_dir.mkdir()
    for f in GOLDEN.iterdir():
        (broken_dir / f.name).write_bytes(f.read_bytes())
    raw = json.loads((broken_dir / "manifest.json").read_text())
    raw["images"][0]["captions"].append({"mask_id": "ghost", "text": "a thing"})
    (broken_dir / "manifest.json").write_text(json.dumps(raw))
    with pytest.raises(DanglingReference):
        load_manifest(broken_dir / "manifest.json")
    ok("format conformance: checksums stable, negatives raise typed errors")
