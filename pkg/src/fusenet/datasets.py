"""Paired image+spectrogram datasets: pairing, splitting, a synthetic
factorial benchmark, and a checksummed binary container.

Container layout (magic "FZDS"), all integers little-endian:

    magic      4 bytes  b"FZDS"
    version    u16      currently 1
    elem_size  u8       4 = float32 payloads, 8 = float64
    class_cnt  u32
    classes    class_cnt x (name_len u16, utf-8 name)
    sample_cnt u32
    then one record per sample:
      label        u32
      image_id     len u16 + utf-8
      audio_id     len u16 + utf-8
      split        u8  (0 train, 1 test)
      image_shape  3 x u32 (C, H, W)
      image_data   prod(shape) * elem_size bytes
      spec_shape   3 x u32
      spec_data    prod(shape) * elem_size bytes
      crc32        u32 of every preceding byte of this record

Pairing, splitting and generation are all deterministic under a fixed seed.
"""

from __future__ import annotations

import csv
import io
import struct
import warnings
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .render import bilinear_resize, image_to_chw_float, read_image

MAGIC = b"FZDS"
VERSION = 1
_ELEM_DTYPE = {4: np.dtype("<f4"), 8: np.dtype("<f8")}

TRAIN, TEST = 0, 1
SPLIT_NAMES = {TRAIN: "train", TEST: "test"}
SPLIT_CODES = {"train": TRAIN, "test": TEST}


class ContainerError(ValueError):
    """Malformed or truncated container file."""


class ContainerChecksumError(ContainerError):
    def __init__(self, record_index: int):
        self.record_index = record_index
        super().__init__(f"checksum mismatch in sample record {record_index}")


class PairingError(ValueError):
    """No class carries both modalities."""


# ---------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    spectrogram_path: str
    class_name: str
    split: str = "train"


@dataclass
class DatasetManifest:
    classes: list  # index -> name, sorted
    rows: list     # of ManifestRow

    def class_index(self, name: str) -> int:
        return self.classes.index(name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_path", "spectrogram_path", "class", "split"])
            for r in self.rows:
                w.writerow([r.image_path, r.spectrogram_path, r.class_name, r.split])

    @classmethod
    def read_csv(cls, path) -> "DatasetManifest":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["image_path", "spectrogram_path", "class", "split"]:
                raise ValueError(f"unexpected manifest header {header}")
            for raw in reader:
                if raw[3] not in SPLIT_CODES:
                    raise ValueError(f"bad split tag {raw[3]!r}")
                rows.append(ManifestRow(*raw))
        classes = sorted({r.class_name for r in rows})
        return cls(classes=classes, rows=rows)


@dataclass(frozen=True)
class PairingReport:
    paired_classes: tuple
    dropped_classes: tuple  # present in only one modality


def pair_modalities(image_index: dict, audio_index: dict, seed: int = 0):
    """Cross-pair images with same-class spectrograms.

    Both indexes map class name -> list of file paths. Each image gets one
    spectrogram drawn from a seeded permutation of its class's list (cycled
    when there are more images than spectrograms). Classes present in only
    one modality are dropped and reported.
    """
    common = sorted(set(image_index) & set(audio_index))
    common = [c for c in common if image_index[c] and audio_index[c]]
    dropped = tuple(sorted((set(image_index) | set(audio_index)) - set(common)))
    if not common:
        raise PairingError("no class present in both modalities")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 100]))
    rows = []
    for cls in common:
        images = sorted(image_index[cls])
        audios = sorted(audio_index[cls])
        perm = rng.permutation(len(audios))
        for i, img in enumerate(images):
            rows.append(ManifestRow(img, audios[perm[i % len(audios)]], cls))
    manifest = DatasetManifest(classes=list(common), rows=rows)
    return manifest, PairingReport(paired_classes=tuple(common), dropped_classes=dropped)


def split_halves(manifest: DatasetManifest, seed: int = 0) -> DatasetManifest:
    """Shuffled 50/50 per-class split; odd counts give the extra row to train."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(manifest.rows):
        by_class.setdefault(r.class_name, []).append(i)
    new_rows = list(manifest.rows)
    for cls in sorted(by_class):
        idx = by_class[cls]
        if len(idx) == 1:
            warnings.warn(f"class {cls!r} has a single sample; assigning it to train")
            new_rows[idx[0]] = replace(new_rows[idx[0]], split="train")
            continue
        order = rng.permutation(len(idx))
        n_train = (len(idx) + 1) // 2
        for pos, j in enumerate(order):
            tag = "train" if pos < n_train else "test"
            new_rows[idx[j]] = replace(new_rows[idx[j]], split=tag)
    return DatasetManifest(classes=list(manifest.classes), rows=new_rows)


# ---------------------------------------------------------------------------
# in-memory paired dataset

@dataclass
class PairedDataset:
    class_names: list
    images: np.ndarray        # [N, 3, H, W] float
    spectrograms: np.ndarray  # [N, 3, H, W] float
    labels: np.ndarray        # [N] int64
    image_ids: list
    audio_ids: list
    split: np.ndarray         # [N] u8, 0 train / 1 test

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def subset(self, mask: np.ndarray) -> "PairedDataset":
        idx = np.flatnonzero(mask)
        return PairedDataset(
            class_names=list(self.class_names),
            images=self.images[idx],
            spectrograms=self.spectrograms[idx],
            labels=self.labels[idx],
            image_ids=[self.image_ids[i] for i in idx],
            audio_ids=[self.audio_ids[i] for i in idx],
            split=self.split[idx],
        )

    def train_subset(self) -> "PairedDataset":
        return self.subset(self.split == TRAIN)

    def test_subset(self) -> "PairedDataset":
        return self.subset(self.split == TEST)


# ---------------------------------------------------------------------------
# synthetic factorial benchmark

@dataclass(frozen=True)
class SyntheticSpec:
    image_factors: int = 2
    audio_factors: int = 2
    samples_per_class: int = 200
    noise_sigma: float = 0.35
    hw: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.image_factors < 2 or self.audio_factors < 2:
            raise ValueError("need at least 2 factors per modality")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")

    @property
    def class_count(self) -> int:
        return self.image_factors * self.audio_factors


def factor_template(seed: int, modality: int, index: int, hw: int) -> np.ndarray:
    """Smooth random field in [0,1] identifying one factor of one modality."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, modality, index]))
    coarse = rng.uniform(0.0, 1.0, (4, 4))
    return bilinear_resize(coarse, hw, hw)


def gen_synthetic(spec: SyntheticSpec) -> PairedDataset:
    """Factorial benchmark: class (a, b) shows image pattern a and
    spectrogram pattern b, so neither modality alone identifies the class.

    Images carry no information about the audio factor and vice versa; the
    joint task is solvable exactly at low noise. The first half of each
    class's samples is tagged train, the second half test.
    """
    a_n, b_n = spec.image_factors, spec.audio_factors
    img_templates = [factor_template(spec.seed, 0, a, spec.hw) for a in range(a_n)]
    aud_templates = [factor_template(spec.seed, 1, b, spec.hw) for b in range(b_n)]

    n = spec.class_count * spec.samples_per_class
    images = np.zeros((n, 3, spec.hw, spec.hw), dtype=np.float32)
    specs = np.zeros_like(images)
    labels = np.zeros(n, dtype=np.int64)
    split = np.zeros(n, dtype=np.uint8)
    image_ids, audio_ids, class_names = [], [], []

    pos = 0
    for a in range(a_n):
        for b in range(b_n):
            cls = a * b_n + b
            class_names.append(f"img{a}-aud{b}")
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2, cls]))
            n_train = (spec.samples_per_class + 1) // 2
            for i in range(spec.samples_per_class):
                img = img_templates[a] + spec.noise_sigma * rng.standard_normal((spec.hw, spec.hw))
                aud = aud_templates[b] + spec.noise_sigma * rng.standard_normal((spec.hw, spec.hw))
                images[pos] = img.astype(np.float32)[None, :, :]
                specs[pos] = aud.astype(np.float32)[None, :, :]
                labels[pos] = cls
                split[pos] = TRAIN if i < n_train else TEST
                image_ids.append(f"img-c{cls:02d}-{i:04d}")
                audio_ids.append(f"aud-c{cls:02d}-{i:04d}")
                pos += 1
    return PairedDataset(class_names=class_names, images=images, spectrograms=specs,
                         labels=labels, image_ids=image_ids, audio_ids=audio_ids,
                         split=split)


def nearest_template_factor(samples: np.ndarray, templates: list) -> np.ndarray:
    """Classify each [3,H,W] sample to the closest template by L2 (first index wins ties)."""
    fields = samples.mean(axis=1)  # channels are identical copies
    dists = np.stack([((fields - t[None]) ** 2).sum(axis=(1, 2)) for t in templates])
    return dists.argmin(axis=0)


# ---------------------------------------------------------------------------
# container IO

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def pack_container(dataset: PairedDataset, path, precision: int = 32) -> None:
    """Write the dataset as a single checksummed binary file."""
    elem = 4 if precision == 32 else 8
    dt = _ELEM_DTYPE[elem]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HB", VERSION, elem))
    buf.write(struct.pack("<I", len(dataset.class_names)))
    for name in dataset.class_names:
        buf.write(_pack_str(name))
    buf.write(struct.pack("<I", len(dataset)))
    for i in range(len(dataset)):
        rec = io.BytesIO()
        rec.write(struct.pack("<I", int(dataset.labels[i])))
        rec.write(_pack_str(dataset.image_ids[i]))
        rec.write(_pack_str(dataset.audio_ids[i]))
        rec.write(struct.pack("<B", int(dataset.split[i])))
        for arr in (dataset.images[i], dataset.spectrograms[i]):
            rec.write(struct.pack("<III", *arr.shape))
            rec.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
        body = rec.getvalue()
        buf.write(body)
        buf.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ContainerError(f"truncated file while reading {what}")
    return data


def _unpack_str(fh, what: str) -> tuple:
    raw = _read_exact(fh, 2, what)
    (n,) = struct.unpack("<H", raw)
    body = _read_exact(fh, n, what)
    return raw + body, body.decode("utf-8")


def load_container(path) -> PairedDataset:
    """Read a container back; every record's CRC32 is verified."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ContainerError("bad magic: not a FZDS container")
        version, elem = struct.unpack("<HB", _read_exact(fh, 3, "header"))
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        if elem not in _ELEM_DTYPE:
            raise ContainerError(f"bad element size {elem}")
        dt = _ELEM_DTYPE[elem]
        (n_classes,) = struct.unpack("<I", _read_exact(fh, 4, "class count"))
        class_names = [_unpack_str(fh, "class name")[1] for _ in range(n_classes)]
        (n_samples,) = struct.unpack("<I", _read_exact(fh, 4, "sample count"))

        images, specs, labels, split = [], [], [], []
        image_ids, audio_ids = [], []
        for i in range(n_samples):
            rec = io.BytesIO()
            raw = _read_exact(fh, 4, f"record {i} label")
            rec.write(raw)
            (label,) = struct.unpack("<I", raw)
            raw, img_id = _unpack_str(fh, f"record {i} image id")
            rec.write(raw)
            raw, aud_id = _unpack_str(fh, f"record {i} audio id")
            rec.write(raw)
            raw = _read_exact(fh, 1, f"record {i} split")
            rec.write(raw)
            tag = raw[0]
            arrays = []
            for what in ("image", "spectrogram"):
                raw = _read_exact(fh, 12, f"record {i} {what} shape")
                rec.write(raw)
                shape = struct.unpack("<III", raw)
                count = int(np.prod(shape, dtype=np.int64))
                raw = _read_exact(fh, count * elem, f"record {i} {what} data")
                rec.write(raw)
                arrays.append(np.frombuffer(raw, dtype=dt).reshape(shape)
                              .astype(dt.newbyteorder("=")))
            (stored,) = struct.unpack("<I", _read_exact(fh, 4, f"record {i} crc"))
            if zlib.crc32(rec.getvalue()) & 0xFFFFFFFF != stored:
                raise ContainerChecksumError(i)
            images.append(arrays[0])
            specs.append(arrays[1])
            labels.append(label)
            split.append(tag)
            image_ids.append(img_id)
            audio_ids.append(aud_id)

    if n_samples == 0:
        hw = 0
        images_arr = np.zeros((0, 3, hw, hw), dtype=dt.newbyteorder("="))
        specs_arr = images_arr.copy()
    else:
        images_arr = np.stack(images)
        specs_arr = np.stack(specs)
    return PairedDataset(class_names=class_names, images=images_arr,
                         spectrograms=specs_arr,
                         labels=np.asarray(labels, dtype=np.int64),
                         image_ids=image_ids, audio_ids=audio_ids,
                         split=np.asarray(split, dtype=np.uint8))


def dataset_from_manifest(manifest: DatasetManifest, target_hw: int = None,
                          dtype=np.float32) -> PairedDataset:
    """Load manifest rows into memory, optionally resizing to target_hw."""
    images, specs, labels, split = [], [], [], []
    image_ids, audio_ids = [], []
    for r in manifest.rows:
        img = image_to_chw_float(read_image(r.image_path), dtype)
        spc = image_to_chw_float(read_image(r.spectrogram_path), dtype)
        if target_hw is not None:
            img = np.stack([bilinear_resize(ch, target_hw, target_hw) for ch in img])
            spc = np.stack([bilinear_resize(ch, target_hw, target_hw) for ch in spc])
        images.append(img.astype(dtype))
        specs.append(spc.astype(dtype))
        labels.append(manifest.class_index(r.class_name))
        split.append(SPLIT_CODES[r.split])
        image_ids.append(r.image_path)
        audio_ids.append(r.spectrogram_path)
    return PairedDataset(class_names=list(manifest.classes),
                         images=np.stack(images), spectrograms=np.stack(specs),
                         labels=np.asarray(labels, dtype=np.int64),
                         image_ids=image_ids, audio_ids=audio_ids,
                         split=np.asarray(split, dtype=np.uint8))
