"""Fixed binary and JSON file formats for every artifact the pipeline stores.

Binary layout (all integers little-endian):

    magic: 8 bytes | version: u32 | dimension header: u64 each | payload

Features and pixels are stored as 32-bit floats, codes as ceil(L/64)
64-bit words per item, neighborhood matrices as their sorted positive
(i, j) pairs with i < j.  Writers emit a single canonical byte stream, so
save(load(p)) reproduces p exactly for any conforming file.  Labels travel
as canonical JSON.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .datatypes import (
    CodeSet,
    FeatureSet,
    ImageSet,
    LabelSet,
    NeighborhoodMatrix,
    ValidationError,
    words_per_code,
)

MAGIC_FEATURES = b"GHASHFEA"
MAGIC_IMAGES = b"GHASHIMG"
MAGIC_CODES = b"GHASHCOD"
MAGIC_PAIRS = b"GHASHNBR"
MAGIC_TENSORS = b"GHASHTEN"
FORMAT_VERSION = 1

LABELS_FORMAT = "ganhash-labels"
LABELS_VERSION = 1


class FormatError(ValueError):
    """Raised when a file does not conform to its declared layout."""


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = str(path)

    def fail(self, msg, at=None):
        at = self.off if at is None else at
        raise FormatError(f"{self.path}: {msg} at byte {at}")

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            self.fail(f"truncated {what} (need {n} bytes, {len(self.buf) - self.off} left)")
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def magic(self, expect: bytes):
        got = self.take(8, "magic header")
        if got != expect:
            self.fail(f"bad magic {got!r}, expected {expect!r}", at=0)

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        dtype = np.dtype(dtype)
        raw = self.take(dtype.itemsize * count, what)
        return np.frombuffer(raw, dtype=dtype).copy()

    def finite_f32(self, count: int, what: str) -> np.ndarray:
        start = self.off
        arr = self.array("<f4", count, what)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            self.fail(f"non-finite value in {what}", at=start + 4 * int(bad[0]))
        return arr

    def done(self):
        if self.off != len(self.buf):
            self.fail(f"{len(self.buf) - self.off} trailing bytes")


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write(path, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(payload)


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", FORMAT_VERSION)


def _check_version(r: _Reader):
    v = r.u32("format version")
    if v != FORMAT_VERSION:
        r.fail(f"unsupported format version {v}", at=r.off - 4)


# -- feature sets --------------------------------------------------------


def save_features(fs: FeatureSet, path) -> None:
    parts = [
        _header(MAGIC_FEATURES),
        struct.pack("<QQ", fs.n, fs.m),
        fs.ids.astype("<u8").tobytes(),
        fs.data.astype("<f4").tobytes(),
    ]
    _write(path, b"".join(parts))


def load_features(path) -> FeatureSet:
    r = _Reader(_read(path), path)
    r.magic(MAGIC_FEATURES)
    _check_version(r)
    n = r.u64("item count")
    m = r.u64("feature dimension")
    if n == 0 or m == 0:
        r.fail("empty feature set", at=12)
    ids = r.array("<u8", n, "id table")
    data = r.finite_f32(n * m, "feature payload").reshape(n, m)
    r.done()
    try:
        return FeatureSet(ids=ids, data=data)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from e


# -- image sets ----------------------------------------------------------


def save_images(im: ImageSet, path) -> None:
    c, h, w = im.shape
    parts = [
        _header(MAGIC_IMAGES),
        struct.pack("<QQQQ", im.n, c, h, w),
        im.ids.astype("<u8").tobytes(),
        im.pixels.astype("<f4").tobytes(),
    ]
    _write(path, b"".join(parts))


def load_images(path) -> ImageSet:
    r = _Reader(_read(path), path)
    r.magic(MAGIC_IMAGES)
    _check_version(r)
    n = r.u64("item count")
    c = r.u64("channel count")
    h = r.u64("image height")
    w = r.u64("image width")
    if n == 0 or c == 0 or h == 0 or w == 0:
        r.fail("empty image set", at=12)
    ids = r.array("<u8", n, "id table")
    pix_at = r.off
    pixels = r.finite_f32(n * c * h * w, "pixel payload").reshape(n, c, h, w)
    r.done()
    lo, hi = pixels.min(), pixels.max()
    if lo < 0.0 or hi > 1.0:
        bad = np.flatnonzero((pixels.reshape(-1) < 0) | (pixels.reshape(-1) > 1))[0]
        r.fail("pixel value outside [0, 1]", at=pix_at + 4 * int(bad))
    try:
        return ImageSet(ids=ids, pixels=pixels)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from e


# -- code sets -----------------------------------------------------------


def save_codes(cs: CodeSet, path) -> None:
    parts = [
        _header(MAGIC_CODES),
        struct.pack("<QQ", cs.n, cs.n_bits),
        cs.ids.astype("<u8").tobytes(),
        cs.words.astype("<u8").tobytes(),
    ]
    _write(path, b"".join(parts))


def load_codes(path) -> CodeSet:
    r = _Reader(_read(path), path)
    r.magic(MAGIC_CODES)
    _check_version(r)
    n = r.u64("item count")
    bits = r.u64("code length")
    if n == 0 or bits == 0:
        r.fail("empty code set", at=12)
    ids = r.array("<u8", n, "id table")
    words = r.array("<u8", n * words_per_code(bits), "code words").reshape(n, -1)
    r.done()
    try:
        return CodeSet(ids=ids, words=words, n_bits=bits)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from e


# -- neighborhood matrices ----------------------------------------------


def save_neighborhood(s: NeighborhoodMatrix, path) -> None:
    pairs = np.array(sorted(s.positive_pairs), dtype="<u8").reshape(-1, 2)
    parts = [
        _header(MAGIC_PAIRS),
        struct.pack("<QQ", s.n, len(pairs)),
        pairs.tobytes(),
    ]
    _write(path, b"".join(parts))


def load_neighborhood(path) -> NeighborhoodMatrix:
    r = _Reader(_read(path), path)
    r.magic(MAGIC_PAIRS)
    _check_version(r)
    n = r.u64("item count")
    if n == 0:
        r.fail("empty neighborhood matrix", at=12)
    npairs = r.u64("pair count")
    pairs_at = r.off
    flat = r.array("<u8", npairs * 2, "pair table").reshape(-1, 2)
    r.done()
    seen = set()
    for k, (i, j) in enumerate(flat):
        i, j = int(i), int(j)
        if not i < j:
            r.fail(f"pair ({i},{j}) not in i<j order", at=pairs_at + 16 * k)
        if j >= n:
            r.fail(f"pair ({i},{j}) outside index range", at=pairs_at + 16 * k)
        if (i, j) in seen:
            r.fail(f"duplicate pair ({i},{j})", at=pairs_at + 16 * k)
        seen.add((i, j))
    if sorted(seen) != [tuple(int(v) for v in p) for p in flat]:
        r.fail("pair table not sorted", at=pairs_at)
    return NeighborhoodMatrix(n=n, positive_pairs=frozenset(seen))


# -- label sets (JSON) ---------------------------------------------------


def save_labels(ls: LabelSet, path) -> None:
    doc = {
        "format": LABELS_FORMAT,
        "version": LABELS_VERSION,
        "ids": [int(i) for i in ls.ids],
        "labels": [sorted(s) for s in ls.labels],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_labels(path) -> LabelSet:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != LABELS_FORMAT:
        raise FormatError(f"{path}: not a label document")
    if doc.get("version") != LABELS_VERSION:
        raise FormatError(f"{path}: unsupported label format version {doc.get('version')}")
    try:
        return LabelSet(ids=np.asarray(doc["ids"], dtype=np.uint64), labels=doc["labels"])
    except (KeyError, TypeError, ValidationError) as e:
        raise FormatError(f"{path}: {e}") from e


# -- named tensor records (checkpoints) ----------------------------------


def save_tensors(tensors: dict, path) -> None:
    """Write named arrays in insertion order; float payloads keep their width."""
    parts = [_header(MAGIC_TENSORS), struct.pack("<Q", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            code = 4
        elif arr.dtype == np.float64:
            code = 8
        else:
            raise ValueError(f"tensor '{name}' has unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<IQ", code, arr.ndim))
        parts.append(struct.pack("<" + "Q" * arr.ndim, *arr.shape))
        parts.append(arr.astype(f"<f{code}").tobytes())
    _write(path, b"".join(parts))


def load_tensors(path) -> dict:
    r = _Reader(_read(path), path)
    r.magic(MAGIC_TENSORS)
    _check_version(r)
    count = r.u64("record count")
    out = {}
    for _ in range(count):
        name_len = r.u64("name length")
        name = r.take(name_len, "record name").decode("utf-8")
        code = r.u32("itemsize code")
        if code not in (4, 8):
            r.fail(f"record '{name}': bad itemsize {code}", at=r.off - 4)
        ndim = r.u64("rank")
        shape = tuple(r.u64("extent") for _ in range(ndim))
        n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = r.array(f"<f{code}", n_items, f"payload of '{name}'").reshape(shape)
        if name in out:
            r.fail(f"duplicate record '{name}'")
        out[name] = arr
    r.done()
    return out
