"""Dataset ingestion, body-map simplification, and binary file formats.

File formats (all little-endian, normative):

  raster "WIMG":  magic 4s | version u32 | channels u64 | height u64 |
                  width u64 | float32 samples, channel-major row-major.
  checkpoint "WMCK":  magic 4s | version u32 | tensor count u32 | per
                  tensor: name length u32, UTF-8 name, rank u32,
                  dims u64[rank], float64 values.

Manifest CSV header is exactly ``image_path,label,raw_location_id``.
The body map ships as a user-editable CSV (``raw_id,simplified_id``);
the bundled default covers all 484 raw regions and collapses them to 323,
including the documented merge groups (437/438 into 436, 391/392/393
into 390).  Totality, idempotence, and codomain cardinality are enforced
at load time.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ManifestError

WOUND_CLASSES = ("BG", "N", "D", "P", "S", "V")
RAW_LOCATION_COUNT = 484
SIMPLIFIED_LOCATION_COUNT = 323

RASTER_MAGIC = b"WIMG"
RASTER_VERSION = 1
CHECKPOINT_MAGIC = b"WMCK"
CHECKPOINT_VERSION = 1


# -- manifest --------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    label: str
    raw_location_id: int


MANIFEST_HEADER = ["image_path", "label", "raw_location_id"]


def load_manifest(path) -> list[ManifestRecord]:
    """Parse and validate a manifest; reports every bad row, not just the first."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"manifest {path} is empty") from None
        if header != MANIFEST_HEADER:
            raise DataError(f"manifest header must be {','.join(MANIFEST_HEADER)}, "
                            f"got {','.join(header)}")
        records = []
        problems = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                problems.append((row_no, f"expected 3 fields, got {len(row)}"))
                continue
            image_path, label, loc = (f.strip() for f in row)
            if not image_path:
                problems.append((row_no, "empty image path"))
                continue
            if label not in WOUND_CLASSES:
                problems.append((row_no, f"unknown label {label!r} "
                                         f"(expected one of {'/'.join(WOUND_CLASSES)})"))
                continue
            try:
                loc_id = int(loc)
            except ValueError:
                problems.append((row_no, f"location id {loc!r} is not an integer"))
                continue
            if not 1 <= loc_id <= RAW_LOCATION_COUNT:
                problems.append((row_no, f"location id {loc_id} outside "
                                         f"[1, {RAW_LOCATION_COUNT}]"))
                continue
            records.append(ManifestRecord(image_path, label, loc_id))
    if problems:
        raise ManifestError(problems)
    return records


def save_manifest(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([r.image_path, r.label, r.raw_location_id])


# -- body map --------------------------------------------------------------------


class BodyMap:
    """Total raw-to-simplified location mapping with index lookup."""

    def __init__(self, mapping: dict[int, int],
                 raw_count=RAW_LOCATION_COUNT,
                 simplified_count=SIMPLIFIED_LOCATION_COUNT):
        self.mapping = dict(mapping)
        self.raw_count = raw_count
        self.simplified_count = simplified_count
        self._validate()
        self.simplified_ids = sorted(set(self.mapping.values()))
        self._index = {sid: i for i, sid in enumerate(self.simplified_ids)}

    def _validate(self):
        missing = [r for r in range(1, self.raw_count + 1) if r not in self.mapping]
        if missing:
            raise DataError(f"body map is not total: {len(missing)} raw ids unmapped "
                            f"(first few: {missing[:5]})")
        out_of_range = [r for r in self.mapping if not 1 <= r <= self.raw_count]
        if out_of_range:
            raise DataError(f"body map contains raw ids outside [1, {self.raw_count}]: "
                            f"{out_of_range[:5]}")
        codomain = set(self.mapping.values())
        broken = [s for s in codomain if self.mapping.get(s) != s]
        if broken:
            raise DataError(f"body map is not idempotent: simplified ids {broken[:5]} "
                            f"do not map to themselves")
        if len(codomain) != self.simplified_count:
            raise DataError(f"body map has {len(codomain)} simplified ids, "
                            f"declared {self.simplified_count}")

    def simplify(self, raw_id: int) -> int:
        if raw_id not in self.mapping:
            raise DataError(f"raw location id {raw_id} is unmapped "
                            f"(valid range [1, {self.raw_count}])")
        return self.mapping[raw_id]

    def index_of(self, raw_id: int) -> int:
        """Dense index of the simplified id, for one-hot/embedding encodings."""
        return self._index[self.simplify(raw_id)]

    @classmethod
    def load(cls, path, raw_count=RAW_LOCATION_COUNT,
             simplified_count=SIMPLIFIED_LOCATION_COUNT) -> "BodyMap":
        path = Path(path)
        if not path.exists():
            raise DataError(f"body map not found: {path}")
        mapping = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["raw_id", "simplified_id"]:
                raise DataError(f"body map header must be raw_id,simplified_id, got {header}")
            for row_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    raw, simp = int(row[0]), int(row[1])
                except (ValueError, IndexError):
                    raise DataError(f"body map row {row_no} malformed: {row}") from None
                if raw in mapping:
                    raise DataError(f"body map row {row_no}: raw id {raw} mapped twice")
                mapping[raw] = simp
        return cls(mapping, raw_count, simplified_count)

    @classmethod
    def default(cls) -> "BodyMap":
        with resources.as_file(resources.files("wmc").joinpath("data/bodymap_default.csv")) as p:
            return cls.load(p)


def simplify_location(raw_id: int, body_map: BodyMap) -> int:
    return body_map.simplify(raw_id)


# -- raster files ------------------------------------------------------------------


def save_raster(array, path):
    """Write a CxHxW array as a WIMG file (float32 payload)."""
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
    if arr.ndim != 3:
        raise DataError(f"raster array must be CxHxW, got shape {arr.shape}")
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<I", RASTER_VERSION))
        fh.write(struct.pack("<QQQ", c, h, w))
        fh.write(arr.astype("<f4").tobytes())


def load_raster(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != RASTER_MAGIC:
        raise FormatError(f"{path}: bad raster magic {blob[:4]!r}", offset=0)
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated before version", offset=4)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != RASTER_VERSION:
        raise FormatError(f"{path}: unsupported raster version {version}", offset=4)
    if len(blob) < 32:
        raise FormatError(f"{path}: truncated header", offset=8)
    c, h, w = struct.unpack_from("<QQQ", blob, 8)
    expected = 32 + c * h * w * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob) - 32} bytes, "
                          f"expected {c * h * w * 4}", offset=32)
    data = np.frombuffer(blob, dtype="<f4", offset=32).reshape(c, h, w)
    return data.astype(np.float64)


# -- image ingestion ----------------------------------------------------------------


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channelwise bilinear resampling with edge clamping."""
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    out = np.empty((c, out_h, out_w))
    for k in range(c):
        ch = image[k]
        top = ch[np.ix_(y0, x0)] * (1 - wx) + ch[np.ix_(y0, x1)] * wx
        bot = ch[np.ix_(y1, x0)] * (1 - wx) + ch[np.ix_(y1, x1)] * wx
        out[k] = top * (1 - wy) + bot * wy
    return out


def ingest_image(path, target=(224, 224)) -> np.ndarray:
    """Decode an image file to a CxHxW float64 array scaled to [0, 1].

    WIMG rasters bypass decoding and are resized only when dimensions
    differ from the target.  JPEG/PNG are decoded with Pillow, resized
    with the same bilinear kernel as rasters, and scaled by 1/255.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    head = path.open("rb").read(4)
    th, tw = target
    if head == RASTER_MAGIC:
        arr = load_raster(path)
        if arr.shape[1:] != (th, tw):
            arr = bilinear_resize(arr, th, tw)
        return arr
    try:
        from PIL import Image
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.float64)  # H x W x 3
    except DataError:
        raise
    except Exception as e:
        raise DataError(f"cannot decode image {path}: {e}") from None
    arr = pixels.transpose(2, 0, 1) / 255.0
    if arr.shape[1:] != (th, tw):
        arr = bilinear_resize(arr, th, tw)
    return np.clip(arr, 0.0, 1.0)


# -- augmentation -------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentPolicy:
    horizontal_flip: bool = True
    vertical_flip: bool = True
    rotate90: bool = True

    @property
    def is_identity(self):
        return not (self.horizontal_flip or self.vertical_flip or self.rotate90)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1].copy()


def vflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1, :].copy()


def rot90(image: np.ndarray, k: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(image, k=k % 4, axes=(1, 2)))


def augment(image: np.ndarray, policy: AugmentPolicy, seed: int) -> np.ndarray:
    """Seeded label-preserving transform; deterministic for a given seed."""
    from .rng import SplitMix64
    rng = SplitMix64(seed)
    out = image
    if policy.horizontal_flip and rng.randint(2):
        out = hflip(out)
    if policy.vertical_flip and rng.randint(2):
        out = vflip(out)
    if policy.rotate90:
        k = rng.randint(4)
        if k:
            if out.shape[1] != out.shape[2]:
                k = 2  # non-square images only allow 180-degree turns
            out = rot90(out, k)
    return out if out is not image else image.copy()


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(named_tensors: dict[str, np.ndarray], path):
    """Write a named float64 tensor table; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(named_tensors)))
        for name, arr in named_tensors.items():
            arr = np.asarray(arr, dtype=np.float64, order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    off = 0

    def need(nbytes, what):
        nonlocal off
        if off + nbytes > len(blob):
            raise FormatError(f"{path}: truncated while reading {what}", offset=off)
        piece = blob[off:off + nbytes]
        off += nbytes
        return piece

    magic = need(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}", offset=0)
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    (count,) = struct.unpack("<I", need(4, "tensor count"))
    table = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", need(4, "name length"))
        name = need(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", need(4, "rank"))
        dims = struct.unpack(f"<{rank}Q", need(8 * rank, "dims")) if rank else ()
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(need(8 * n, f"values of {name}"), dtype="<f8")
        table[name] = values.reshape(dims).astype(np.float64)
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes", offset=off)
    return table


# meta entries ride in the tensor table as byte arrays under reserved names
META_CONFIG_KEY = "__meta__/config_json"


def encode_meta_json(obj) -> np.ndarray:
    import json
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float64)


def decode_meta_json(arr):
    import json
    raw = bytes(np.asarray(arr, dtype=np.float64).astype(np.uint8).tobytes())
    return json.loads(raw.decode("utf-8"))
