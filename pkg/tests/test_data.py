import numpy as np
import pytest

from tesskernel.data import (
    DataError,
    Dataset,
    SplitSpec,
    fit_scaling,
    generate_circle,
    generate_spiral,
    kfold,
    load_csv,
    train_test_split,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_maps_zero_one_labels(tmp_path):
    ds = load_csv(write(tmp_path, "a,b,label\n1,2,0\n3,4,1\n5,6,0\n"))
    np.testing.assert_array_equal(ds.labels, [-1, 1, -1])
    np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4], [5, 6]])
    assert ds.feature_names == ["a", "b"]


def test_load_csv_label_by_name_and_no_header(tmp_path):
    ds = load_csv(write(tmp_path, "cls,a\nyes,1.5\nno,2.5\n"), label="cls")
    np.testing.assert_array_equal(ds.labels, [1, -1])
    ds = load_csv(write(tmp_path, "1,2,-1\n3,4,1\n", "n.csv"))
    assert ds.m == 2 and ds.n == 2


def test_load_csv_errors(tmp_path):
    with pytest.raises(DataError, match="empty dataset"):
        load_csv(write(tmp_path, "a,b,label\n"))
    with pytest.raises(DataError, match="3"):
        load_csv(write(tmp_path, "a,b,label\n1,2,0\n1,,1\n", "m.csv"))
    with pytest.raises(DataError, match="classes"):
        load_csv(write(tmp_path, "a,label\n1,0\n2,1\n3,2\n", "c.csv"))
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "a,label\n1,0\nfoo,1\n", "t.csv"))
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "a,label\n1,0\n", "l.csv"), label="nope")


def test_csv_round_trip(tmp_path):
    ds = generate_circle(20, seed=5)
    ds.to_csv(tmp_path / "c.csv")
    back = load_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_scaling():
    X = np.array([[2.0, 7.0], [4.0, 7.0], [3.0, 7.0]])
    t = fit_scaling(X)
    Z = t.apply(X)
    assert Z[2, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(Z[:, 0], [0.05, 0.95, 0.5])
    np.testing.assert_array_equal(Z[:, 1], 0.5)
    assert t.constant.tolist() == [False, True]
    out = t.apply(np.array([[-10.0, 7.0]]))
    assert out[0, 0] == 0.0 and t.clamped_count == 1


def test_scaling_margin_keeps_nearby_values_unclamped():
    t = fit_scaling(np.array([[2.0], [4.0]]))
    assert t.apply(np.array([[1.9]]))[0, 0] == pytest.approx(0.05 - 0.1 * 0.45)
    assert t.clamped_count == 0


def test_split_sizes_and_determinism():
    ds = Dataset(np.arange(10.0), np.array([1, -1] * 5))
    tr, te = train_test_split(ds, SplitSpec(0.8, seed=1))
    assert (tr.m, te.m) == (8, 2)
    tr2, _ = train_test_split(ds, SplitSpec(0.8, seed=1))
    np.testing.assert_array_equal(tr.features, tr2.features)
    assert sorted(np.concatenate([tr.features, te.features]).ravel().tolist()) == list(range(10))


def test_split_stratified():
    y = np.array([1] * 30 + [-1] * 70)
    ds = Dataset(np.arange(100.0), y)
    for seed in range(5):
        tr, _ = train_test_split(ds, SplitSpec(0.8, seed=seed))
        assert abs((tr.labels == 1).sum() - 0.3 * tr.m) <= 1


def test_kfold_requires_enough_rows():
    with pytest.raises(DataError):
        kfold(np.array([1, -1, 1]), 5)


def test_circle_labels_follow_radius():
    ds = generate_circle(200, seed=1)
    inside = np.linalg.norm(ds.features, axis=1) <= 0.75
    np.testing.assert_array_equal(ds.labels, np.where(inside, 1, -1))
    again = generate_circle(200, seed=1)
    np.testing.assert_array_equal(again.features, ds.features)


def test_spiral_arms_are_disjoint():
    ds = generate_spiral(150, seed=2)
    assert ds.m == 150 and set(ds.labels.tolist()) == {-1, 1}
    pos = ds.features[ds.labels == 1]
    neg = ds.features[ds.labels == -1]
    d = np.linalg.norm(pos[:, None] - neg[None], axis=-1)
    assert d.min() > 0
    np.testing.assert_array_equal(generate_spiral(150, seed=2).features, ds.features)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.array([[1.0], [np.nan]]), np.array([1, -1]))
    with pytest.raises(DataError):
        Dataset(np.array([[1.0], [2.0]]), np.array([1, 2]))
