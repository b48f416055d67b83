import random

import numpy as np
import pytest
import torch

from oracles import box_iou, brute_force_map
from vis2ir.errors import PreconditionError
from vis2ir.metrics import (
    DetectionRecord,
    average_precision,
    iou,
    mean_average_precision,
    psnr,
    read_detections,
    ssim,
    write_detections,
)


def _img(seed, shape=(1, 32, 40)):
    return torch.rand(shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_ssim_identity():
    for seed in range(3):
        x = _img(seed, (3, 24, 24))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetric_and_bounded():
    a, b = _img(1), _img(2)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    assert -1 <= ssim(a, b) <= 1


def test_ssim_matches_skimage():
    metrics = pytest.importorskip("skimage.metrics")
    a = _img(3, (1, 40, 48))
    b = (a + 0.1 * _img(4, (1, 40, 48))).clamp(0, 1)
    ref = metrics.structural_similarity(
        a[0].numpy(), b[0].numpy(), data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
    )
    # skimage crops a 5-pixel border before averaging, which leaves exactly
    # the fully-contained windows
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_inverted_ramp_is_negative():
    ramp = torch.linspace(0.25, 0.75, 32, dtype=torch.float64).repeat(32, 1)
    assert ssim(ramp, 1 - ramp) < 0


def test_ssim_errors():
    with pytest.raises(PreconditionError):
        ssim(torch.zeros(1, 10, 30), torch.zeros(1, 10, 30))
    with pytest.raises(PreconditionError):
        ssim(torch.zeros(1, 20, 20), torch.zeros(1, 20, 21))


def test_psnr_cap_and_closed_form():
    x = _img(5)
    assert psnr(x, x) == 100.0
    assert psnr(torch.zeros(1, 8, 8, dtype=torch.float64), torch.full((1, 8, 8), 0.1, dtype=torch.float64)) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(PreconditionError):
        psnr(torch.zeros(2, 2), torch.zeros(2, 3))


def test_psnr_monotone_in_noise():
    x = _img(6) * 0.5 + 0.25
    noise = _img(7) * 2 - 1
    values = [psnr(x, x + a * noise) for a in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(p > q for p, q in zip(values, values[1:]))


# -- iou -----------------------------------------------------------------------


def test_iou_cases():
    a = (0.3, 0.3, 0.2, 0.2)
    assert iou(a, a) == 1.0
    assert iou(a, (0.8, 0.8, 0.1, 0.1)) == 0.0
    assert iou((0.1, 0.1, 0.2, 0.2), (0.2, 0.1, 0.2, 0.2)) == pytest.approx(1 / 3)


def test_iou_properties():
    rng = random.Random(0)
    for _ in range(200):
        a = (rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3))
        b = (rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3))
        dx, dy = rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou(b, a), abs=1e-12)
        assert v == pytest.approx(box_iou(a, b), abs=1e-12)
        shifted = iou((a[0] + dx, a[1] + dy, a[2], a[3]), (b[0] + dx, b[1] + dy, b[2], b[3]))
        assert shifted == pytest.approx(v, abs=1e-9)


def test_detection_record_validation():
    DetectionRecord("a", 0, (0.1, 0.1, 0.2, 0.2))
    with pytest.raises(PreconditionError):
        DetectionRecord("a", 0, (0.05, 0.5, 0.2, 0.2))
    with pytest.raises(PreconditionError):
        DetectionRecord("a", 0, (0.5, 0.5, 0.2, 0.2), score=1.5)


def test_detection_file_round_trip(tmp_path):
    recs = [DetectionRecord("img", 2, (0.5, 0.4, 0.2, 0.1), 0.75), DetectionRecord("img", 0, (0.25, 0.25, 0.5, 0.5), 0.5)]
    write_detections(tmp_path / "img.txt", recs)
    assert read_detections(tmp_path / "img.txt") == recs


# -- AP / mAP ------------------------------------------------------------------


def test_average_precision_closed_forms():
    assert average_precision([True, True], 2) == 1.0
    assert average_precision([False, True], 1) == 0.5
    assert average_precision([], 3) == 0.0


def test_map_perfect_detector():
    gts = [DetectionRecord(f"i{k}", k % 2, (0.5, 0.5, 0.2 + 0.1 * k, 0.3)) for k in range(4)]
    preds = [DetectionRecord(g.image_id, g.class_id, g.box, 1.0) for g in gts]
    assert mean_average_precision(preds, gts).map50 == 1.0


def test_map_no_predictions():
    gts = [DetectionRecord("a", 0, (0.5, 0.5, 0.2, 0.2))]
    assert mean_average_precision([], gts).map50 == 0.0


def test_map_empty_ground_truth_warns():
    with pytest.warns(UserWarning):
        report = mean_average_precision([DetectionRecord("a", 0, (0.5, 0.5, 0.2, 0.2), 0.9)], [])
    assert report.map50 == 0.0 and report.warnings


HAND_GTS = [
    DetectionRecord("A", 0, (0.25, 0.25, 0.2, 0.2)),
    DetectionRecord("B", 0, (0.5, 0.5, 0.2, 0.2)),
    DetectionRecord("A", 1, (0.7, 0.7, 0.2, 0.2)),
    DetectionRecord("A", 1, (0.3, 0.7, 0.2, 0.2)),
    DetectionRecord("B", 1, (0.8, 0.2, 0.1, 0.1)),
]
HAND_PREDS = [
    DetectionRecord("A", 0, (0.25, 0.25, 0.2, 0.2), 0.9),
    DetectionRecord("B", 0, (0.6, 0.6, 0.2, 0.2), 0.8),
    DetectionRecord("B", 0, (0.5, 0.5, 0.2, 0.2), 0.7),
    DetectionRecord("A", 0, (0.25, 0.25, 0.2, 0.2), 0.6),
    DetectionRecord("A", 1, (0.7, 0.7, 0.2, 0.2), 0.95),
    DetectionRecord("B", 1, (0.8, 0.2, 0.1, 0.1), 0.5),
]


def _as_dicts(preds, gts):
    p = [{"image": r.image_id, "cls": r.class_id, "box": r.box, "score": r.score, "order": i} for i, r in enumerate(preds)]
    g = [{"image": r.image_id, "cls": r.class_id, "box": r.box} for r in gts]
    return p, g


def test_map_hand_fixture():
    report = mean_average_precision(HAND_PREDS, HAND_GTS)
    # class 0: TP, FP, TP, FP over 2 GTs -> 1/2 * 1 + 1/2 * 2/3 = 5/6
    # class 1: TP, TP over 3 GTs -> 2/3
    assert report.per_class_ap[0] == pytest.approx(5 / 6, abs=1e-12)
    assert report.per_class_ap[1] == pytest.approx(2 / 3, abs=1e-12)
    assert report.map50 == pytest.approx(0.75, abs=1e-12)
    oracle, per_class = brute_force_map(*_as_dicts(HAND_PREDS, HAND_GTS), 0.5)
    assert report.map50 == pytest.approx(oracle, abs=1e-12)


def random_instance(rng):
    """Random detection problem; predictions are mostly jittered ground truths."""

    def box():
        w, h = rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)
        return (rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h)

    def jitter(b):
        w = min(0.9, max(0.05, b[2] * rng.uniform(0.8, 1.25)))
        h = min(0.9, max(0.05, b[3] * rng.uniform(0.8, 1.25)))
        cx = min(1 - w / 2, max(w / 2, b[0] + rng.uniform(-0.05, 0.05)))
        cy = min(1 - h / 2, max(h / 2, b[1] + rng.uniform(-0.05, 0.05)))
        return (cx, cy, w, h)

    images = ["a", "b"]
    gts = [DetectionRecord(rng.choice(images), rng.randint(0, 1), box()) for _ in range(rng.randint(0, 4))]
    preds = []
    for _ in range(rng.randint(0, 6)):
        # a coarse score grid forces ties now and then
        score = rng.choice([0.2, 0.5, 0.5, 0.9]) if rng.random() < 0.3 else rng.random()
        if gts and rng.random() < 0.7:
            g = rng.choice(gts)
            preds.append(DetectionRecord(g.image_id, g.class_id, jitter(g.box), score))
        else:
            preds.append(DetectionRecord(rng.choice(images), rng.randint(0, 1), box(), score))
    return preds, gts


def test_map_matches_brute_force_on_random_instances():
    rng = random.Random(2024)
    for _ in range(200):
        preds, gts = random_instance(rng)
        oracle, per_class = brute_force_map(*_as_dicts(preds, gts), 0.5)
        if gts:
            report = mean_average_precision(preds, gts)
            assert abs(report.map50 - oracle) < 1e-9
            for c, v in per_class.items():
                assert abs(report.per_class_ap[c] - v) < 1e-9


@pytest.mark.parametrize("factor", [0.5, 0.1, 1e-3])
def test_map_rescale_invariance(factor):
    rng = random.Random(9)
    for _ in range(50):
        preds, gts = random_instance(rng)
        if not gts:
            continue
        scaled = [DetectionRecord(p.image_id, p.class_id, p.box, p.score * factor) for p in preds]
        assert mean_average_precision(scaled, gts).map50 == mean_average_precision(preds, gts).map50


def test_map_threshold_matters():
    gts = [DetectionRecord("a", 0, (0.5, 0.5, 0.2, 0.2))]
    preds = [DetectionRecord("a", 0, (0.55, 0.5, 0.2, 0.2), 0.9)]  # IoU = 0.6
    assert mean_average_precision(preds, gts, 0.5).map50 == 1.0
    assert mean_average_precision(preds, gts, 0.7).map50 == 0.0


def test_report_dict_has_percent():
    d = mean_average_precision(HAND_PREDS, HAND_GTS).to_dict()
    assert d["map50_percent"] == pytest.approx(75.0)
    assert set(d["per_class_ap"]) == {"0", "1"}
    assert np.isfinite(d["map50"])
