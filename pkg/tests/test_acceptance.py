"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Lines are collected in ``RESULTS`` and printed in the pytest terminal summary
(see ``conftest.py``). Running this file directly prints them as well.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

import numpy as np
from PIL import Image

from ctxmask import report
from ctxmask.analyzer import analyze, load_report, rank_context_dependent
from ctxmask.cli import main
from ctxmask.coco import Annotation, Category, Dataset, Detection, ImageInfo
from ctxmask.evaluator import EvalParams, average_precision, evaluate
from ctxmask.masker import DEFAULT_GREY, build_category_mask, build_exclusion_mask, generate_masked_dataset
from ctxmask.segm import mask_area, rle_decode, rle_encode, rle_to_mask
from ctxmask.synth import SynthConfig, generate_synthetic
from oracles import brute_force_eval
from reference_rows import ACCURACY_ROWS, COCO_IDS, CONTEXT_ROWS, NAMES, build
from test_evaluator import random_instance

RESULTS: dict[int, str] = {}

ORACLE_SEED = 20240601
ORACLE_INSTANCES = 250


def record(number: int, title: str, check) -> None:
    start = time.perf_counter()
    try:
        detail = check()
    except BaseException as exc:
        RESULTS[number] = f"criterion {number} FAIL  {title}: {exc!s:.200}"
        raise
    elapsed = time.perf_counter() - start
    RESULTS[number] = f"criterion {number} PASS  {title} ({elapsed:.2f}s){': ' + detail if detail else ''}"


def oracle_suite():
    rng = np.random.default_rng(ORACLE_SEED)
    return [random_instance(rng) for _ in range(ORACLE_INSTANCES)]


# 1 -----------------------------------------------------------------------------


def check_rle_bijection():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(1, 101, 2))
        density = rng.random()
        mask = rng.random((h, w)) < density
        text = rle_encode(mask)
        back = rle_to_mask(rle_decode(text, h, w))
        assert back.dtype == bool and np.array_equal(back, mask), f"mismatch for {h}x{w}"
    assert not rle_to_mask(rle_decode("4", 2, 2)).any()
    assert rle_encode(np.zeros((2, 2), bool)) == "4"
    assert rle_to_mask(rle_decode("01", 1, 1)).all()
    assert rle_encode(np.ones((1, 1), bool)) == "01"
    elapsed = time.perf_counter() - start
    assert elapsed < 5, f"took {elapsed:.2f}s"
    return "1000 masks and both hand cases"


def test_criterion_1_rle_bijection():
    record(1, "RLE codec bijectivity", check_rle_bijection)


# 2 -----------------------------------------------------------------------------


def check_oracle_equivalence():
    start = time.perf_counter()
    params = EvalParams()
    worst = 0.0
    crowds = 0
    for dataset, dets in oracle_suite():
        crowds += any(a.iscrowd for a in dataset.annotations)
        got = evaluate(dataset, dets, params)
        want = brute_force_eval(dataset, dets, params.iou_thresholds, params.recall_thresholds, params.max_dets)
        for cid, ap in want.items():
            if ap is None:
                assert got.ap(cid) is None
            else:
                worst = max(worst, abs(got.ap(cid) - ap))
    assert worst <= 1e-9, f"max |AP - oracle| = {worst:.3g}"
    assert crowds > 0
    elapsed = time.perf_counter() - start
    assert elapsed < 30, f"took {elapsed:.2f}s"
    return f"{ORACLE_INSTANCES} instances ({crowds} with crowds), max error {worst:.1e}"


def test_criterion_2_oracle_equivalence():
    record(2, "AP oracle equivalence", check_oracle_equivalence)


# 3 -----------------------------------------------------------------------------


def check_anchors():
    images = (ImageInfo(1, 50, 50, "a"), ImageInfo(2, 50, 50, "b"))
    anns = (
        Annotation(1, 1, 1, (1, 1, 10, 10), 100.0),
        Annotation(2, 1, 2, (20, 20, 8, 12), 96.0),
        Annotation(3, 2, 1, (5, 30, 15, 9), 135.0),
    )
    ds = Dataset(images, anns, (Category(1, "a"), Category(2, "b")))
    echo = [Detection(a.image_id, a.category_id, a.bbox, 1.0) for a in anns]
    assert evaluate(ds, echo).map == 1.0
    assert evaluate(ds, []).map == 0.0
    expected = (51 + 50 * (2 / 3)) / 101
    got = average_precision([True, False, True], 2)
    assert abs(got - expected) <= 1e-12, f"{got} != {expected}"
    two = Dataset(
        (ImageInfo(1, 50, 50, "a"),),
        (Annotation(1, 1, 1, (0, 0, 10, 10), 100.0), Annotation(2, 1, 1, (30, 30, 10, 10), 100.0)),
        (Category(1, "a"),),
    )
    dets = [
        Detection(1, 1, (0, 0, 10, 10), 0.9),
        Detection(1, 1, (15, 15, 5, 5), 0.8),
        Detection(1, 1, (30, 30, 10, 10), 0.7),
    ]
    full = evaluate(two, dets).ap(1)
    assert abs(full - expected) <= 1e-12, f"{full} != {expected}"
    return f"[TP, FP, TP] AP = {full:.12f}"


def test_criterion_3_analytic_anchors():
    record(3, "analytic AP anchors", check_anchors)


# 4 -----------------------------------------------------------------------------


def overlap_config() -> SynthConfig:
    return SynthConfig.from_dict(
        {
            "seed": 11,
            "width": 64,
            "height": 48,
            "overlap": 0.7,
            "categories": [
                {"name": "A", "color": [220, 40, 40], "instances": [1, 3], "size": [8, 20]},
                {"name": "B", "color": [40, 160, 40], "instances": [1, 3], "size": [8, 20]},
                {"name": "C", "color": [40, 60, 220], "instances": [1, 2], "size": [8, 20]},
            ],
            "scenes": [
                {"categories": ["A", "B", "C"], "images": 12},
                {"categories": ["A", "B"], "images": 8},
            ],
        }
    )


def check_masking_invariants(tmp_path: Path):
    ds = generate_synthetic(overlap_config(), tmp_path / "synth")
    assert len(ds.images) == 20
    images = tmp_path / "synth" / "images"
    overlapping = 0
    for cid in ds.category_ids:
        manifest = generate_masked_dataset(ds, images, cid, out_root=tmp_path / "a", jobs=4)
        again = generate_masked_dataset(ds, images, cid, out_root=tmp_path / "b", jobs=1)
        assert manifest == again
        for rec in manifest.images:
            union = build_category_mask(ds, rec.image_id, cid)
            others = build_exclusion_mask(ds, rec.image_id, cid)
            assert rec.masked_pixel_count + rec.skipped_overlap_pixel_count == mask_area(union)
            overlapping += rec.skipped_overlap_pixel_count > 0
            before = np.asarray(Image.open(images / ds.image(rec.image_id).file_name).convert("RGB"))
            out_a = tmp_path / "a" / str(cid) / rec.output_file_name
            after = np.asarray(Image.open(out_a))
            grey = union & ~others
            assert (after[grey] == np.array(DEFAULT_GREY, np.uint8)).all()
            assert np.array_equal(after[~grey], before[~grey])
            assert np.array_equal(after[others], before[others])
            assert out_a.read_bytes() == (tmp_path / "b" / str(cid) / rec.output_file_name).read_bytes()
    assert overlapping > 0, "config planted no overlaps"
    return f"20 images, {overlapping} image/category pairs with kept overlap pixels"


def test_criterion_4_masking_invariants(tmp_path):
    record(4, "masking invariants", lambda: check_masking_invariants(tmp_path))


# 5 -----------------------------------------------------------------------------


def check_planted_dependency(tmp_path: Path):
    start = time.perf_counter()
    synth = tmp_path / "synth"
    assert main(["synth", "--out", str(synth), "--jobs", "4"]) == 0
    ann = str(synth / "annotations.json")
    dets = synth / "detections"
    assert main(["eval", "--ann", ann, "--dets", str(dets / "baseline.json"), "--out", str(tmp_path / "base.json")]) == 0
    for path in sorted(dets.glob("dets_*.json")):
        cid = path.stem.split("_")[1]
        out = tmp_path / "evals" / f"eval_{cid}.json"
        assert main(["eval", "--ann", ann, "--dets", str(path), "--out", str(out)]) == 0
    analysis = tmp_path / "analysis.json"
    assert main(["analyze", "--baseline", str(tmp_path / "base.json"), "--evals", str(tmp_path / "evals"),
                 "--ann", ann, "--out", str(analysis)]) == 0
    rep = load_report(analysis)
    ids = {rep.name(c): c for c in rep.baseline.aps()}
    a, b = ids["A"], ids["B"]

    a_entries = [e for e in rep.entries_for(a) if not e.is_self]
    top = max(a_entries, key=lambda e: (e.deviation, -e.masked_category_id))
    assert top.masked_category_id == b, f"top non-self context of A is {rep.name(top.masked_category_id)}"
    a_given_b = next(e.change_pct for e in a_entries if e.masked_category_id == b)
    assert a_given_b < 50, f"change(A | B masked) = {a_given_b:.1f}%"
    for name in ("B", "C", "D"):
        for e in rep.entries_for(ids[name]):
            if not e.is_self:
                assert abs(e.change_pct - 100) <= 2, f"{name} | {rep.name(e.masked_category_id)}: {e.change_pct:.1f}%"
    for cid in ids.values():
        self_entry = next(e for e in rep.entries_for(cid) if e.is_self)
        assert self_entry.change_pct == 0.0
    elapsed = time.perf_counter() - start
    assert elapsed < 120, f"took {elapsed:.1f}s"
    return f"A | B masked = {a_given_b:.1f}%, baseline mAP {rep.baseline.map:.3f}"


def test_criterion_5_planted_dependency(tmp_path):
    record(5, "end-to-end planted-dependency recovery", lambda: check_planted_dependency(tmp_path))


# 6 -----------------------------------------------------------------------------


def rendered_row(text: str, name: str) -> str:
    return next(line for line in text.splitlines() if line.startswith(f"| {name} |"))


def check_table_reproduction():
    baseline, masked = build(ACCURACY_ROWS)
    rep = analyze(baseline, masked, names=NAMES)
    top = rep.top_k[COCO_IDS["bear"]]
    assert [(NAMES[e.masked_category_id], round(e.change_pct, 1)) for e in top] == [
        ("bear", 0.1), ("dog", 101.1), ("cat", 100.5)
    ]
    text = report.render_markdown(rep, 10, 15)
    for name, (ap, cells) in ACCURACY_ROWS.items():
        # rounded inputs can tie on deviation (train: handbag 99.2 vs bus 100.8); ties go by id
        cells = sorted(cells, key=lambda c: (-round(abs(c[1] - 100), 6), COCO_IDS[c[0]]))
        expected = f"| {name} | {ap:.3f} | " + " | ".join(f"{m} ({p:.1f}%)" for m, p in cells) + " |"
        assert rendered_row(text, name) == expected, rendered_row(text, name)

    baseline, masked = build(CONTEXT_ROWS)
    rep = analyze(baseline, masked, names=NAMES)
    order = [NAMES[c] for c in rank_context_dependent(rep, 3)]
    assert order == ["snowboard", "toothbrush", "kite"], order
    assert rep.dominant[COCO_IDS["snowboard"]] is True
    text = report.render_markdown(rep, 3, 3)
    context_section = text.split("## Most context-dependent categories")[1]
    rows = [line for line in context_section.splitlines() if line.startswith("| ") and "---" not in line][1:4]
    assert [r.split(" | ")[0][2:] for r in rows] == order
    assert rendered_row(context_section, "snowboard") == (
        "| snowboard | 0.305 | person (34.8%)* | skis (84.3%) | skateboard (91.4%) |"
    )
    assert rendered_row(context_section, "toothbrush") == (
        "| toothbrush | 0.149 | person (48.6%)* | toothbrush (59.8%) | bottle (106.3%) |"
    )
    assert rendered_row(context_section, "kite") == (
        "| kite | 0.356 | kite (59.1%) | person (63.4%) | dining table (94.4%) |"
    )
    return "bear row, context ranking and snowboard dominance rendered"


def test_criterion_6_table_reproduction():
    record(6, "table-arithmetic reproduction", check_table_reproduction)


# 7 -----------------------------------------------------------------------------


def check_score_order_invariance():
    worst = 0.0
    for dataset, dets in oracle_suite():
        squared = [dataclasses.replace(d, score=d.score**2) for d in dets]
        a = evaluate(dataset, dets).aps()
        b = evaluate(dataset, squared).aps()
        assert a.keys() == b.keys()
        for cid in a:
            if a[cid] is None:
                assert b[cid] is None
            else:
                worst = max(worst, abs(a[cid] - b[cid]))
    assert worst <= 1e-12, f"max AP change {worst:.3g}"
    return f"{ORACLE_INSTANCES} instances, max change {worst:.1e}"


def test_criterion_7_score_order_invariance():
    record(7, "AP score-order invariance", check_score_order_invariance)


if __name__ == "__main__":
    import tempfile

    checks = {
        1: ("RLE codec bijectivity", check_rle_bijection),
        2: ("AP oracle equivalence", check_oracle_equivalence),
        3: ("analytic AP anchors", check_anchors),
        4: ("masking invariants", lambda: check_masking_invariants(Path(tempfile.mkdtemp()))),
        5: ("end-to-end planted-dependency recovery", lambda: check_planted_dependency(Path(tempfile.mkdtemp()))),
        6: ("table-arithmetic reproduction", check_table_reproduction),
        7: ("AP score-order invariance", check_score_order_invariance),
    }
    failed = 0
    for number, (title, check) in checks.items():
        try:
            record(number, title, check)
        except Exception:
            failed += 1
        print(RESULTS[number])
    raise SystemExit(1 if failed else 0)
