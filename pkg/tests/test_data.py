import gzip

import numpy as np
import pytest

from bsdh.data import Dataset, load_idx, load_vector_csv, save_vector_csv, synthetic_clusters, write_idx
from bsdh.errors import DataError, FormatError


@pytest.fixture
def idx_pair(tmp_path):
    images = np.array([[[0, 255, 17], [3, 128, 9]], [[1, 2, 3], [250, 0, 77]]], dtype=np.uint8)
    labels = np.array([7, 2], dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(images, labels, ip, lp)
    return images, labels, ip, lp


def test_idx_round_trip(idx_pair):
    images, labels, ip, lp = idx_pair
    ds = load_idx(ip, lp)
    assert ds.x.shape == (2, 1, 2, 3)
    np.testing.assert_array_equal(np.rint(ds.x[:, 0] * 255).astype(np.uint8), images)
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.x.min() >= 0 and ds.x.max() <= 1


def test_idx_header_bytes(idx_pair):
    _, _, ip, lp = idx_pair
    assert ip.read_bytes()[:16] == bytes.fromhex("00000803" "00000002" "00000002" "00000003")
    assert lp.read_bytes()[:8] == bytes.fromhex("00000801" "00000002")


def test_idx_gzip(idx_pair, tmp_path):
    images, labels, ip, lp = idx_pair
    gz = tmp_path / "img.idx.gz"
    gz.write_bytes(gzip.compress(ip.read_bytes()))
    np.testing.assert_array_equal(load_idx(gz, lp).x, load_idx(ip, lp).x)


def test_idx_truncated(idx_pair):
    _, _, ip, lp = idx_pair
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_idx_wrong_magic(idx_pair):
    _, _, ip, lp = idx_pair
    with pytest.raises(FormatError):
        load_idx(lp, ip)


def test_idx_count_mismatch(tmp_path):
    ip, lp = tmp_path / "i", tmp_path / "l"
    write_idx(np.zeros((3, 2, 2)), np.zeros(2), ip, lp)
    with pytest.raises(DataError):
        load_idx(ip, lp)


def test_synthetic_examples():
    ds = synthetic_clusters(4, 1, 8, 0.1, seed=0)
    assert len(ds) == 4
    a = synthetic_clusters(3, 10, 5, 0.2, seed=7)
    b = synthetic_clusters(3, 10, 5, 0.2, seed=7)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.labels, b.labels)
    tight = synthetic_clusters(3, 5, 4, 1e-12, seed=1)
    for lab in range(3):
        pts = tight.x[tight.labels == lab]
        np.testing.assert_allclose(pts, np.broadcast_to(pts[0], pts.shape), atol=1e-10)


def test_synthetic_center_separation():
    sigma = 0.25
    ds = synthetic_clusters(5, 400, 16, sigma, seed=3)
    centers = np.array([ds.x[ds.labels == k].mean(axis=0) for k in range(5)])
    d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)[np.triu_indices(5, 1)]
    # sample means sit within ~sigma*sqrt(dim/n) of the true centers
    assert d.min() > 4 * sigma - 0.2
    np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 1.0, atol=0.1)


def test_synthetic_rejection_failure():
    with pytest.raises(DataError):
        synthetic_clusters(50, 1, 2, 1.0, seed=0, max_tries=20)
    with pytest.raises(DataError):
        synthetic_clusters(2, 1, 2, 0.0)


def test_vector_csv_round_trip(tmp_path):
    ds = Dataset(np.array([[0.5, -1.25, 3.0], [1e-3, 2.0, -0.0]]), [4, 9], ids=[10, 3])
    path = tmp_path / "v.csv"
    save_vector_csv(ds, path)
    back = load_vector_csv(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.ids, ds.ids)


def test_vector_csv_header_flag(tmp_path):
    path = tmp_path / "v.csv"
    path.write_text("id,label,a,b\n1,0,0.5,0.25\n2,1,1.5,2\n")
    ds = load_vector_csv(path, header=True)
    assert ds.x.shape == (2, 2)
    with pytest.raises(DataError):
        load_vector_csv(path)


@pytest.mark.parametrize("text", ["", "1,0,0.5\n2,1,0.5,0.7\n", "1,0,abc\n", "1,0\n", "1,0,nan\n"])
def test_vector_csv_errors(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DataError):
        load_vector_csv(path)


def test_label_index_consistent():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 6, 200)
    ds = Dataset(np.zeros((200, 1)), labels)
    covered = np.concatenate(list(ds.label_index.values()))
    assert sorted(covered.tolist()) == list(range(200))
    for lab, members in ds.label_index.items():
        assert np.all(labels[members] == lab)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), [0, 1], ids=[5, 5])
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), [{"a"}, set()], multi_label=True)


def test_split_is_deterministic_and_disjoint():
    ds = synthetic_clusters(4, 30, 3, 0.1, seed=2)
    tr, qu = ds.split(5, seed=1)
    tr2, qu2 = ds.split(5, seed=1)
    assert np.array_equal(qu.ids, qu2.ids)
    assert len(qu) == 20 and len(tr) == 100
    assert not set(tr.ids) & set(qu.ids)
