import csv

import numpy as np
import pytest
from oracles import random_descriptor

from hiersem.errors import InputError
from hiersem.features import (
    ABLATION_GROUPS,
    FeatureLayout,
    extract_features,
    feature_matrix,
    select_spans,
    write_feature_csv,
)
from hiersem.hierarchy import CHANNELS, region_descriptor

HIST_NAMES = dict(
    zip(
        CHANNELS,
        [
            "L histogram",
            "A histogram",
            "B histogram",
            "3D X histogram",
            "3D Y histogram",
            "3D Z histogram",
            "Nx histogram",
            "Ny histogram",
            "Nz histogram",
        ],
    )
)


def test_length_254_without_appearance():
    v = extract_features(random_descriptor(np.random.default_rng(0)))
    assert len(v.values) == 60 + 90 + 90 + 14 == 254
    assert v.layout.length == 254


def test_appearance_appended_last():
    d = random_descriptor(np.random.default_rng(1))
    app = np.arange(7.0)
    v = extract_features(d, app)
    assert len(v.values) == 261 and v.layout.appearance_length == 7
    np.testing.assert_array_equal(v.values[-7:], app)
    np.testing.assert_array_equal(v.values[:254], extract_features(d).values)


def test_histogram_spans_reassemble_descriptor():
    d = random_descriptor(np.random.default_rng(2))
    v = extract_features(d)
    for ch, name in HIST_NAMES.items():
        np.testing.assert_array_equal(v.span(name), d.histogram(ch))
        assert v.span(name).sum() == pytest.approx(1.0, abs=1e-9)


def test_scalar_order():
    d = random_descriptor(np.random.default_rng(3))
    s = extract_features(d).values[240:]
    np.testing.assert_allclose(s[:3], [d.size_3d, d.width_3d, d.height_3d])
    np.testing.assert_allclose(s[3:5], d.centroid_2d)
    np.testing.assert_allclose(s[5:8], d.centroid_3d)
    np.testing.assert_allclose(s[8:11], d.min_3d)
    np.testing.assert_allclose(s[11:14], d.max_3d)


def test_single_voxel_region():
    d = region_descriptor([[0.2, 0.1, 1.5]], [[40, 5, 5]], [[0, 0, -1]], [[3, 3]])
    v = extract_features(d)
    assert v.span("size")[0] == 0.0
    for name in HIST_NAMES.values():
        assert sorted(v.span(name))[-1] == 1.0 and v.span(name).sum() == 1.0


def test_select_spans():
    d = random_descriptor(np.random.default_rng(4))
    v = extract_features(d)
    assert len(select_spans(v, "L histogram").values) == 20
    allv = select_spans(v, "all")
    np.testing.assert_array_equal(allv.values, v.values)
    assert allv.layout == v.layout
    np.testing.assert_allclose(select_spans(v, "3D centroid").values, d.centroid_3d)
    with pytest.raises(InputError):
        select_spans(v, "SIFT histogram")


def test_distinct_scalars_give_distinct_vectors():
    rng = np.random.default_rng(5)
    a = random_descriptor(rng, 20)
    b = region_descriptor(
        np.zeros((1, 3)) + a.centroid_3d, np.zeros((1, 3)), [[0, 0, -1]], [[0, 0]], layout=a.layout
    )
    assert not np.array_equal(extract_features(a).values, extract_features(b).values)


def test_ablation_groups_resolve():
    layout = FeatureLayout.for_bins()
    assert len(ABLATION_GROUPS) == 15
    for g in ABLATION_GROUPS:
        assert len(layout.columns(g)) in (1, 20, 30)
    assert len(layout.columns("all")) == 254


def test_layout_round_trip():
    layout = FeatureLayout.for_bins(appearance=5)
    assert FeatureLayout.from_list(layout.to_list()) == layout


def test_feature_matrix_and_csv(tmp_path):
    rng = np.random.default_rng(6)
    descs = [random_descriptor(rng) for _ in range(4)]
    X, layout = feature_matrix(descs)
    assert X.shape == (4, 254)
    path = tmp_path / "f.csv"
    write_feature_csv(path, X, layout, labels=[0, 1, 2, 1], comments=["meta x"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# meta x"
    rows = list(csv.reader(lines[1:]))
    assert rows[0][0] == "L histogram:0" and rows[0][-1] == "label"
    assert len(rows) == 5 and rows[2][-1] == "1"
    np.testing.assert_allclose([float(x) for x in rows[1][:-1]], X[0])


def test_empty_feature_matrix():
    X, layout = feature_matrix([])
    assert X.shape == (0, 254)


def test_appearance_count_mismatch():
    rng = np.random.default_rng(7)
    with pytest.raises(InputError):
        feature_matrix([random_descriptor(rng)] * 2, appearance=[np.zeros(3)])
