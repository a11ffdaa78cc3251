import numpy as np
import numpy.testing as npt
import pytest

from fusenet.datasets import (
    ContainerChecksumError, ContainerError, DatasetManifest, ManifestRow,
    PairedDataset, PairingError, SyntheticSpec, factor_template, gen_synthetic,
    load_container, nearest_template_factor, pack_container, pair_modalities,
    split_halves, dataset_from_manifest,
)
from fusenet.render import write_png


# ---------------------------------------------------------------------------
# pairing

def test_pairing_drops_single_modality_classes():
    imgs = {"wren": ["w1.png", "w2.png"], "lark": ["l1.png"]}
    auds = {"wren": ["w1s.png"], "dove": ["d1s.png"]}
    manifest, report = pair_modalities(imgs, auds, seed=0)
    assert manifest.classes == ["wren"]
    assert set(report.dropped_classes) == {"lark", "dove"}


def test_pairing_one_audio_per_image():
    imgs = {"a": ["i1", "i2"]}
    auds = {"a": ["s1", "s2"]}
    manifest, _ = pair_modalities(imgs, auds, seed=1)
    assert len(manifest.rows) == 2
    assert {r.image_path for r in manifest.rows} == {"i1", "i2"}
    assert all(r.spectrogram_path in ("s1", "s2") for r in manifest.rows)


def test_pairing_deterministic_per_seed():
    imgs = {"a": [f"i{k}" for k in range(6)]}
    auds = {"a": [f"s{k}" for k in range(4)]}
    m1, _ = pair_modalities(imgs, auds, seed=7)
    m2, _ = pair_modalities(imgs, auds, seed=7)
    m3, _ = pair_modalities(imgs, auds, seed=8)
    assert m1.rows == m2.rows
    assert m1.rows != m3.rows  # a different seed reshuffles the assignment


def test_pairing_no_overlap_raises():
    with pytest.raises(PairingError):
        pair_modalities({"a": ["x"]}, {"b": ["y"]}, seed=0)


# ---------------------------------------------------------------------------
# splitting

def _manifest(counts):
    rows = []
    for cls, n in counts.items():
        for i in range(n):
            rows.append(ManifestRow(f"{cls}-img{i}", f"{cls}-aud{i}", cls))
    return DatasetManifest(classes=sorted(counts), rows=rows)


def test_split_even_counts():
    m = split_halves(_manifest({"a": 10}), seed=0)
    tags = [r.split for r in m.rows]
    assert tags.count("train") == 5 and tags.count("test") == 5


def test_split_odd_extra_to_train():
    m = split_halves(_manifest({"a": 5}), seed=0)
    tags = [r.split for r in m.rows]
    assert tags.count("train") == 3 and tags.count("test") == 2


def test_split_balance_every_class():
    m = split_halves(_manifest({"a": 7, "b": 12, "c": 3}), seed=3)
    for cls in ("a", "b", "c"):
        tags = [r.split for r in m.rows if r.class_name == cls]
        assert abs(tags.count("train") - tags.count("test")) <= 1


def test_split_single_sample_warns_and_trains():
    with pytest.warns(UserWarning, match="single sample"):
        m = split_halves(_manifest({"a": 1, "b": 4}), seed=0)
    (row,) = [r for r in m.rows if r.class_name == "a"]
    assert row.split == "train"


def test_split_deterministic():
    base = _manifest({"a": 9, "b": 8})
    m1 = split_halves(base, seed=5)
    m2 = split_halves(base, seed=5)
    assert [r.split for r in m1.rows] == [r.split for r in m2.rows]


def test_manifest_csv_roundtrip(tmp_path):
    m = split_halves(_manifest({"a": 4, "b": 2}), seed=1)
    p = tmp_path / "manifest.csv"
    m.write_csv(p)
    assert p.read_text().splitlines()[0] == "image_path,spectrogram_path,class,split"
    back = DatasetManifest.read_csv(p)
    assert back.rows == m.rows
    assert back.classes == m.classes


# ---------------------------------------------------------------------------
# synthetic factorial benchmark

def test_synthetic_class_structure():
    spec = SyntheticSpec(image_factors=2, audio_factors=2, samples_per_class=10,
                         noise_sigma=0.0, hw=16, seed=0)
    ds = gen_synthetic(spec)
    assert ds.class_count == 4
    assert len(ds) == 40
    npt.assert_array_equal(np.bincount(ds.labels), [10, 10, 10, 10])


def test_synthetic_noiseless_samples_identical_per_class():
    spec = SyntheticSpec(samples_per_class=4, noise_sigma=0.0, hw=12, seed=1)
    ds = gen_synthetic(spec)
    for cls in range(4):
        idx = np.flatnonzero(ds.labels == cls)
        for i in idx[1:]:
            npt.assert_array_equal(ds.images[i], ds.images[idx[0]])
            npt.assert_array_equal(ds.spectrograms[i], ds.spectrograms[idx[0]])


def test_synthetic_noiseless_template_recovery_is_perfect():
    spec = SyntheticSpec(image_factors=3, audio_factors=2, samples_per_class=5,
                         noise_sigma=0.0, hw=16, seed=2)
    ds = gen_synthetic(spec)
    img_templates = [factor_template(2, 0, a, 16) for a in range(3)]
    aud_templates = [factor_template(2, 1, b, 16) for b in range(2)]
    a_hat = nearest_template_factor(ds.images, img_templates)
    b_hat = nearest_template_factor(ds.spectrograms, aud_templates)
    npt.assert_array_equal(a_hat, ds.labels // 2)
    npt.assert_array_equal(b_hat, ds.labels % 2)


def test_synthetic_image_carries_no_audio_factor_information():
    spec = SyntheticSpec(samples_per_class=100, noise_sigma=0.3, hw=16, seed=3)
    ds = gen_synthetic(spec)
    # try to read the audio factor out of images by matching audio templates
    aud_templates = [factor_template(3, 1, b, 16) for b in range(2)]
    b_hat = nearest_template_factor(ds.images, aud_templates)
    b_true = ds.labels % 2
    acc = float((b_hat == b_true).mean())
    assert abs(acc - 0.5) < 0.1


def test_synthetic_split_tags():
    spec = SyntheticSpec(samples_per_class=10, hw=8, seed=4)
    ds = gen_synthetic(spec)
    train, test = ds.train_subset(), ds.test_subset()
    assert len(train) == 20 and len(test) == 20
    npt.assert_array_equal(np.bincount(train.labels), [5, 5, 5, 5])


def test_synthetic_deterministic():
    spec = SyntheticSpec(samples_per_class=6, hw=8, seed=5)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.spectrograms.tobytes() == b.spectrograms.tobytes()


def test_synthetic_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(image_factors=1)


# ---------------------------------------------------------------------------
# container

def small_dataset(precision=32):
    spec = SyntheticSpec(samples_per_class=3, hw=8, seed=6)
    ds = gen_synthetic(spec)
    if precision == 64:
        ds.images = ds.images.astype(np.float64)
        ds.spectrograms = ds.spectrograms.astype(np.float64)
    return ds


@pytest.mark.parametrize("precision", [32, 64])
def test_container_roundtrip_lossless(tmp_path, precision):
    ds = small_dataset(precision)
    p = tmp_path / "data.fzds"
    pack_container(ds, p, precision=precision)
    back = load_container(p)
    assert back.class_names == ds.class_names
    assert back.images.tobytes() == ds.images.astype(back.images.dtype).tobytes()
    assert back.spectrograms.tobytes() == \
        ds.spectrograms.astype(back.spectrograms.dtype).tobytes()
    npt.assert_array_equal(back.labels, ds.labels)
    npt.assert_array_equal(back.split, ds.split)
    assert back.image_ids == ds.image_ids


def test_container_pack_load_pack_byte_identical(tmp_path):
    ds = small_dataset()
    p1, p2 = tmp_path / "a.fzds", tmp_path / "b.fzds"
    pack_container(ds, p1)
    pack_container(load_container(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_container_corruption_names_record(tmp_path):
    ds = small_dataset()
    p = tmp_path / "data.fzds"
    pack_container(ds, p)
    blob = bytearray(p.read_bytes())
    # flip one byte in the 4th record's image payload: find its image id
    marker = ds.image_ids[3].encode()
    off = blob.index(marker) + len(marker) + 30
    blob[off] ^= 0x01
    p.write_bytes(bytes(blob))
    with pytest.raises(ContainerChecksumError) as ei:
        load_container(p)
    assert ei.value.record_index == 3


def test_container_bad_magic(tmp_path):
    p = tmp_path / "bad.fzds"
    p.write_bytes(b"WHAT" + bytes(20))
    with pytest.raises(ContainerError, match="magic"):
        load_container(p)


def test_container_truncated(tmp_path):
    ds = small_dataset()
    p = tmp_path / "data.fzds"
    pack_container(ds, p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ContainerError, match="truncated"):
        load_container(p)


def test_container_empty_dataset(tmp_path):
    empty = PairedDataset(class_names=["a", "b"],
                          images=np.zeros((0, 3, 4, 4), dtype=np.float32),
                          spectrograms=np.zeros((0, 3, 4, 4), dtype=np.float32),
                          labels=np.zeros(0, dtype=np.int64),
                          image_ids=[], audio_ids=[],
                          split=np.zeros(0, dtype=np.uint8))
    p = tmp_path / "empty.fzds"
    pack_container(empty, p)
    back = load_container(p)
    assert len(back) == 0
    assert back.class_names == ["a", "b"]


# ---------------------------------------------------------------------------
# manifest -> in-memory dataset

def test_dataset_from_manifest_reads_images(tmp_path):
    rng = np.random.default_rng(7)
    rows = []
    for cls in ("a", "b"):
        for i in range(2):
            img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
            spc = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
            ip = tmp_path / f"{cls}-img{i}.png"
            sp = tmp_path / f"{cls}-spec{i}.png"
            write_png(ip, img)
            write_png(sp, spc)
            rows.append(ManifestRow(str(ip), str(sp), cls,
                                    "train" if i == 0 else "test"))
    manifest = DatasetManifest(classes=["a", "b"], rows=rows)
    ds = dataset_from_manifest(manifest)
    assert ds.images.shape == (4, 3, 8, 8)
    assert ds.images.max() <= 1.0
    npt.assert_array_equal(ds.labels, [0, 0, 1, 1])
    npt.assert_array_equal(ds.split, [0, 1, 0, 1])
