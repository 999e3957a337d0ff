import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallgrasp.classifier.dataset import Dataset, load_dataset, save_dataset
from smallgrasp.classifier.evaluate import ConfusionMatrix, evaluate, write_report
from smallgrasp.classifier.model import (N_CLASSES, TENSOR_SHAPE, ClassifierModel, TrainConfig,
                                         class_weights, feature_length, load_model, pooled_features,
                                         predict, save_model, softmax, train, uniform_model,
                                         weighted_ce)
from smallgrasp.classifier.preprocess import (ClassSample, cluster_order, crop_angle, crop_rotate,
                                              extract_samples, pca_pose)
from smallgrasp.classifier.synthetic import DatasetConfig, build_dataset
from smallgrasp.errors import (DegenerateCluster, EmptyDataset, ModelSampleMismatch,
                               SingleClassDataset)
from smallgrasp.frames import TactileFrame
from smallgrasp.perception import DbscanParams, label_frame
from smallgrasp.simworld.presses import PressConfig, simulate_press
from smallgrasp.simworld.shapes import CATALOG

R = 15.5


def closed_form_angle(pts, w):
    """Principal axis of a weighted 2x2 covariance via the double-angle formula."""
    w = w / w.sum()
    c = w @ pts
    d = pts - c
    sxx, syy, sxy = w @ (d[:, 0] ** 2), w @ (d[:, 1] ** 2), w @ (d[:, 0] * d[:, 1])
    return (0.5 * np.arctan2(2 * sxy, sxx - syy)) % np.pi, c


def ellipse_pixels(a=40, b=15, angle=0.0, center=(300.0, 280.0)):
    ys, xs = np.mgrid[-60:61, -60:61].astype(float)
    inside = (xs / a) ** 2 + (ys / b) ** 2 <= 1.0
    pts = np.stack([xs[inside], ys[inside]], axis=1)
    c, s = np.cos(angle), np.sin(angle)
    return pts @ np.array([[c, s], [-s, c]]) + center


def angle_gap(a, b):
    d = (a - b) % np.pi
    return min(d, np.pi - d)


def test_pca_axis_aligned_and_rotated_ellipse():
    pose = pca_pose(ellipse_pixels())
    assert pose.angle == pytest.approx(0.0, abs=1e-9) or pose.angle == pytest.approx(np.pi)
    np.testing.assert_allclose(pose.center, [300.0, 280.0], atol=1e-9)
    pose = pca_pose(ellipse_pixels(angle=np.radians(30)))
    assert abs(np.degrees(pose.angle) - 30.0) < 0.5
    assert not pose.isotropic


def test_pca_matches_closed_form_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pts = rng.normal(size=(rng.integers(5, 200), 2)) * rng.uniform(1, 20, 2) @ \
            np.linalg.qr(rng.normal(size=(2, 2)))[0] + rng.uniform(0, 640, 2)
        w = rng.uniform(0.1, 5.0, len(pts))
        pose = pca_pose(pts, w)
        ref, c = closed_form_angle(pts, w)
        np.testing.assert_allclose(pose.center, c, atol=1e-9)
        if not pose.isotropic:
            assert angle_gap(pose.angle, ref) < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 2 * np.pi))
def test_pca_rotation_equivariance(phi):
    base = pca_pose(ellipse_pixels(angle=0.4, center=(0.0, 0.0)))
    rot = pca_pose(ellipse_pixels(angle=0.4 + phi, center=(0.0, 0.0)))
    assert angle_gap(rot.angle, base.angle + phi) < 1e-6
    assert 0.0 <= rot.angle < np.pi


def test_pca_degenerate_and_isotropic():
    with pytest.raises(DegenerateCluster):
        pca_pose([[3, 4], [3, 4], [3, 4]])
    ring = [[np.cos(t), np.sin(t)] for t in np.linspace(0, 2 * np.pi, 64, endpoint=False)]
    pose = pca_pose(np.array(ring) * 10 + 50)
    assert pose.isotropic and pose.angle == 0.0


def synthetic_frame(n=640):
    depth = np.full((n, n), R)
    labels = np.zeros((n, n), dtype=np.int8)
    rgb = np.full((n, n, 3), 0.5)
    return TactileFrame(depth, R, rgb, labels)


def test_crop_rotate_plain_central_crop():
    rng = np.random.default_rng(1)
    f = synthetic_frame()
    f.depth = R - rng.uniform(0, 5, f.depth.shape)
    f.rgb = rng.uniform(0, 1, f.rgb.shape)
    f.labels[300:340, 250:400] = 2
    out = crop_rotate(f, (319.5, 319.5), 0.0)
    assert out.shape == (300, 300, 5) and out.dtype == np.float32
    np.testing.assert_allclose(out[..., 3], f.depth[170:470, 170:470] / R, atol=1e-6)
    np.testing.assert_allclose(out[..., 0], f.rgb[170:470, 170:470, 0], atol=1e-6)
    np.testing.assert_array_equal(out[..., 4], f.labels[170:470, 170:470] == 2)


def test_crop_rotate_label_plane_nearest_and_padding():
    f = synthetic_frame()
    f.labels[100:200, 100:130] = 3
    f.labels[400:420, 300:500] = 1
    out = crop_rotate(f, (5.0, 5.0), 0.7, label_id=3)
    assert set(np.unique(out[..., 4])) <= {0.0, 1.0}
    # the corner window reaches past the frame: padded with the undeformed background
    assert np.isclose(out[0, 0, 3], 1.0) and np.isclose(out[0, 0, 0], 0.5)
    with pytest.raises(ValueError):
        crop_rotate(f, (-3.0, 10.0), 0.0)


def test_crop_rotate_maps_principal_axis_to_x():
    f = synthetic_frame()
    pts = ellipse_pixels(a=60, b=8, angle=np.radians(50), center=(320.0, 320.0))
    ij = np.round(pts).astype(int)
    f.labels[ij[:, 1], ij[:, 0]] = 1
    pose = pca_pose(ij)
    out = crop_rotate(f, pose.center, pose.angle)
    mask = out[..., 4] > 0
    rows, cols = np.nonzero(mask)
    assert np.ptp(cols) > 3 * np.ptp(rows)


def turned(pts, phi, pole):
    c, s = np.cos(phi), np.sin(phi)
    return (pts - pole) @ np.array([[c, s], [-s, c]]) + pole


def teardrop(rng, centre, n=400):
    """Elongated point set, dense at -x with a long tail toward +x."""
    x = rng.gamma(2.0, 6.0, n) - 12.0
    y = rng.normal(0, 3.0, n)
    return np.stack([x, y], axis=1) + centre


def capsule_points(rng, centre, n=400):
    return np.stack([rng.uniform(-20, 20, n), rng.normal(0, 3.0, n)], axis=1) + centre


@settings(max_examples=40, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(0, 2 ** 31 - 1),
       st.sampled_from(["teardrop", "capsule", "round"]))
def test_crop_angle_turns_with_the_frame(phi, seed, kind):
    rng = np.random.default_rng(seed)
    pole = np.array([319.5, 319.5])
    centre = pole + rng.uniform(40, 90) * np.array([np.cos(seed), np.sin(seed)])
    if kind == "teardrop":
        pts = teardrop(rng, centre)
    elif kind == "capsule":
        pts = capsule_points(rng, centre)
    else:
        pts = rng.normal(0, 4.0, size=(400, 2)) + centre
    a0 = crop_angle(pts, None, pca_pose(pts), (640, 640))
    moved = turned(pts, phi, pole)
    a1 = crop_angle(moved, None, pca_pose(moved), (640, 640))
    diff = np.angle(np.exp(1j * (a1 - a0 - phi)))
    assert abs(diff) < 1e-6


def test_crop_angle_follows_the_tail_or_points_away_from_the_pole():
    rng = np.random.default_rng(0)
    pole = np.array([319.5, 319.5])
    drop = teardrop(rng, pole + [0.0, 60.0])
    assert np.cos(crop_angle(drop, None, pca_pose(drop), (640, 640))) > 0.99
    cap = capsule_points(rng, pole + [0.0, 60.0])
    cap = turned(cap, 0.3, cap.mean(axis=0))
    a = crop_angle(cap, None, pca_pose(cap), (640, 640))
    assert np.sin(a) > 0            # the end farther from the pole, which is at smaller y


def test_extract_samples_counts_and_order():
    f = synthetic_frame()
    assert extract_samples(f) == []
    f.depth[300:320, 100:200] = R - 5
    f.labels[300:320, 100:200] = 2
    f.depth[400:460, 400:500] = R - 4
    f.labels[400:460, 400:500] = 1
    f.labels[10, 10] = 4            # a single pixel cannot be oriented; skipped
    samples = extract_samples(f, 7)
    assert len(samples) == 2
    assert [round(s.pca_center[1]) for s in samples] == [430, 310]
    assert all(s.class_id == 7 for s in samples)
    assert cluster_order(f.labels) == [1, 2, 4]


def test_two_object_press_centres_match_ground_truth():
    rng = np.random.default_rng(4)
    for _ in range(3):
        pf = simulate_press([CATALOG[12], CATALOG[11]], [12, 11], rng,
                            PressConfig(frames=1, pair_gap=4.0))[0]
        label_frame(pf.frame, DbscanParams(), rng)
        samples = extract_samples(pf.frame, 21)
        assert len(samples) == 2
        for row, col in pf.truth_pixels:
            gaps = [np.hypot(s.pca_center[0] - col, s.pca_center[1] - row) for s in samples]
            assert min(gaps) <= 3.0


@given(st.lists(st.floats(-50, 50), min_size=22, max_size=22), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(logits, shift):
    p = softmax(logits)
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9
    np.testing.assert_allclose(softmax(np.array(logits) + shift), p, atol=1e-12)


def test_uniform_model_and_shape_mismatch():
    m = uniform_model()
    cid, p = predict(m, np.zeros(TENSOR_SHAPE, dtype=np.float32))
    np.testing.assert_allclose(p, np.full(N_CLASSES, 1 / 22))
    assert cid == 1
    with pytest.raises(ModelSampleMismatch):
        predict(m, np.zeros((100, 100, 5)))


def test_weighted_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    Z = rng.normal(size=(12, 4))
    y = rng.integers(0, 5, 12)
    s = rng.uniform(0.1, 1, 12)
    s /= s.sum()
    theta = rng.normal(size=N_CLASSES * 5) * 0.3
    _, g = weighted_ce(theta, Z, y, s, 0.01)
    eps = 1e-6
    fd = np.array([(weighted_ce(theta + eps * e, Z, y, s, 0.01)[0]
                    - weighted_ce(theta - eps * e, Z, y, s, 0.01)[0]) / (2 * eps)
                   for e in np.eye(len(theta))])
    np.testing.assert_allclose(g, fd, atol=1e-7)


def blob_tensor(rng, radius, depth):
    t = np.zeros(TENSOR_SHAPE, dtype=np.float32)
    t[..., :3] = 0.5 + rng.normal(0, 0.01, (300, 300, 3))
    t[..., 3] = 1.0
    yy, xx = np.mgrid[:300, :300]
    r = np.hypot(xx - 150 + rng.normal(0, 3), yy - 150 + rng.normal(0, 3))
    inside = r < radius
    t[..., 3][inside] = 1.0 - depth / R * (1 - (r[inside] / radius) ** 2)
    t[..., 4] = inside
    return t


def blob_samples(rng, per_class=12, classes=((3, 20, 4.0), (14, 60, 7.0))):
    out = []
    for cid, radius, depth in classes:
        for _ in range(per_class):
            t = blob_tensor(rng, radius * rng.uniform(0.9, 1.1), depth)
            out.append(ClassSample(t, cid, (150.0, 150.0), 0.0))
    return out


def test_separable_two_class_training():
    rng = np.random.default_rng(6)
    samples = blob_samples(rng)
    model = train(samples)
    assert model.meta["fit"]["grad_max"] <= 1e-5
    for s in samples:
        assert predict(model, s)[0] == s.class_id
    assert evaluate(model, samples).accuracy == 1.0


def test_class_weights_inverse_frequency():
    labels = [1] * 10 + [5] * 3 + [22] * 7
    w = class_weights(labels)
    counts = np.bincount(np.array(labels) - 1, minlength=22)
    present = counts > 0
    assert np.allclose(w[present] * counts[present], (w * counts)[present][0])
    assert np.all(w[~present] == 0)


def test_duplicating_a_class_with_halved_weight_changes_nothing():
    rng = np.random.default_rng(7)
    samples = blob_samples(rng, per_class=8, classes=((3, 20, 4.0), (14, 35, 5.0), (9, 50, 6.0)))
    for s in samples:
        s.features = pooled_features(s.tensor)
    cfg = TrainConfig(gtol=1e-9)
    base = train(samples, cfg)
    doubled = samples + [s for s in samples if s.class_id == 14]
    dup = train(doubled, cfg)
    # relative to the other classes the duplicated class now weighs half as much
    ratio = lambda m: m.class_weights[13] / m.class_weights[2]
    assert ratio(dup) == pytest.approx(ratio(base) / 2)
    for s in samples:
        np.testing.assert_allclose(predict(dup, s)[1], predict(base, s)[1], atol=1e-4)


def test_training_errors():
    rng = np.random.default_rng(8)
    with pytest.raises(EmptyDataset):
        train([])
    with pytest.raises(SingleClassDataset):
        train(blob_samples(rng, per_class=3, classes=((3, 20, 4.0),)))


def test_training_is_deterministic():
    rng = np.random.default_rng(9)
    samples = blob_samples(rng, per_class=5)
    assert train(samples).parameters == train(samples).parameters


def test_confusion_matrix_perfect_constant_and_replay():
    rng = np.random.default_rng(10)
    truth = rng.integers(1, 23, 200)
    cm = ConfusionMatrix.from_pairs(list(zip(truth, truth)))
    assert np.count_nonzero(cm.matrix - np.diag(np.diag(cm.matrix))) == 0
    cm = ConfusionMatrix.from_pairs([(t, 5) for t in truth])
    assert np.flatnonzero(cm.matrix.sum(axis=0)).tolist() == [4]
    pred = np.where(rng.random(200) < 0.7, truth, rng.integers(1, 23, 200))
    cm = ConfusionMatrix.from_pairs(list(zip(truth, pred)))
    replay = np.zeros((22, 22), dtype=int)
    for t, p in cm.to_dict()["log"]:
        replay[t - 1, p - 1] += 1
    np.testing.assert_array_equal(replay, cm.matrix)
    assert cm.total == 200 and cm.matrix.sum(axis=1).sum() == 200
    assert cm.accuracy == pytest.approx(np.mean(truth == pred))
    text = cm.to_text()
    assert text.startswith("# confusion matrix") and "accuracy" in text


def test_stratified_split_fractions():
    rng = np.random.default_rng(11)
    samples = []
    for c, n in [(1, 50), (3, 17), (9, 4), (21, 1), (22, 100)]:
        samples += [ClassSample(None, c, (0.0, 0.0), 0.0) for _ in range(n)]
    ds = Dataset(samples).stratified_split(0.12, seed=3)
    for c, n in [(1, 50), (3, 17), (9, 4), (21, 1), (22, 100)]:
        n_test = sum(1 for s, p in zip(ds.samples, ds.split) if s.class_id == c and p == "test")
        assert abs(n_test - 0.12 * n) <= 1 and n_test >= 1
    again = Dataset(samples).stratified_split(0.12, seed=3)
    assert again.split == ds.split


def test_model_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    samples = blob_samples(rng, per_class=4)
    m = train(samples)
    save_model(m, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    assert back.kind == m.kind and back.parameters == m.parameters
    np.testing.assert_array_equal(predict(back, samples[0])[1], predict(m, samples[0])[1])
    with pytest.raises(ValueError):
        ClassifierModel("resnet18", b"", np.zeros(22))


def test_feature_length():
    t = np.zeros(TENSOR_SHAPE)
    assert pooled_features(t).shape == (feature_length(),)


def test_synthetic_dataset_determinism_and_roundtrip(tmp_path):
    cfg = DatasetConfig(classes=(10, 17), presses_per_class=2,
                        press=PressConfig(frames=2), two_object_presses=1, seed=4)
    a = build_dataset(cfg)
    b = build_dataset(cfg)
    assert [s.class_id for s in a.samples] == [s.class_id for s in b.samples]
    for s, t in zip(a.samples, b.samples):
        np.testing.assert_array_equal(s.tensor, t.tensor)
    counts = a.per_class_counts
    assert counts[9] == 4 and counts[16] == 4 and counts[20] == 2
    assert set(a.split) == {"train", "test"}
    save_dataset(a, tmp_path / "ds")
    back, manifest = load_dataset(tmp_path / "ds")
    assert manifest["per_class_counts"] == counts.tolist()
    assert back.split == a.split
    np.testing.assert_array_equal(back.samples[0].tensor, a.samples[0].tensor)
    cm = evaluate(train(a), a)
    write_report(cm, tmp_path / "r.json", {"seed": 4})
    rep = json.loads((tmp_path / "r.json").read_text())
    assert np.array(rep["matrix"]).sum() == len(a.test_samples())
