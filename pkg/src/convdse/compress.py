"""Weight compression: magnitude pruning, codebook quantization, and a
sparse gap + Huffman coded container.

The lossy stages (prune, quantize) are characterized separately by nonzero
count and quantization error; everything downstream is bit-exact, so
``decode_model(encode(...))`` reproduces the pruned+quantized tensors
perfectly. Zero never enters a codebook: sparsity lives entirely in the
gap stream, where an escape symbol in the index alphabet marks pure
zero-padding records for gaps too wide for the gap field.

Container (``SDNC``, little-endian): magic, version u32, tensor count u32;
per tensor a u32 body length, the body (name, dims, gap width, codebook,
record count, two code-length tables, two padded bit streams), and a CRC32
of the body. Any corruption is detected, never silently decoded.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import huffman
from .weights import WeightTensor

SDNC_MAGIC = b"SDNC"
SDNC_VERSION = 1


class CompressedFormatError(ValueError):
    """Corrupt or truncated compressed container; message carries the offset."""


def prune_magnitude(tensor: WeightTensor, target_sparsity: float) -> tuple[WeightTensor, np.ndarray]:
    """Zero the floor(sparsity * N) smallest-magnitude entries (ties pruned
    lowest flat index first); returns the pruned tensor and its keep-mask."""
    if not 0.0 <= target_sparsity < 1.0:
        raise ValueError(f"target_sparsity must be in [0, 1), got {target_sparsity!r}")
    values = tensor.values.copy()
    n_prune = int(np.floor(target_sparsity * values.size))
    # stable sort on magnitude keeps flat-index order within ties
    order = np.argsort(np.abs(values), kind="stable")
    values[order[:n_prune]] = 0.0
    mask = values != 0.0
    return WeightTensor(tensor.name, tensor.shape, values), mask


@dataclass(frozen=True)
class QuantizedTensor:
    """Codebook plus the positions/assignments of the surviving nonzeros."""

    name: str
    shape: tuple[int, ...]
    codebook: np.ndarray     # float32, <= 2**bits entries, never contains zero slots
    positions: np.ndarray    # int64 flat indices of nonzeros, ascending
    assignments: np.ndarray  # int64 codebook index per nonzero

    def element_count(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    def dequantize(self) -> WeightTensor:
        values = np.zeros(self.element_count(), dtype=np.float32)
        if self.positions.size:
            values[self.positions] = self.codebook[self.assignments]
        return WeightTensor(self.name, self.shape, values)


def kmeans_quantize(tensor: WeightTensor, bits: int, max_iters: int = 50,
                    tol: float = 1e-8) -> QuantizedTensor:
    """Lloyd's k-means over the nonzero values only, k = 2**bits centroids
    initialized evenly over [min, max]. Deterministic: fixed init, ties to
    the lower centroid index, empty clusters hold their position; unused
    centroids are dropped afterwards. All-zero tensors yield an empty
    codebook."""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits!r}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    positions = np.nonzero(tensor.values)[0].astype(np.int64)
    if positions.size == 0:
        return QuantizedTensor(tensor.name, tensor.shape,
                               np.zeros(0, dtype=np.float32),
                               positions, np.zeros(0, dtype=np.int64))
    nz = tensor.values[positions].astype(np.float64)
    k = 1 << bits
    centroids = np.linspace(nz.min(), nz.max(), k)

    def assign(cents: np.ndarray) -> np.ndarray:
        if cents.size == 1:
            return np.zeros(nz.size, dtype=np.int64)
        mids = (cents[:-1] + cents[1:]) / 2.0
        # side="left": a value exactly on a midpoint goes to the lower centroid
        return np.searchsorted(mids, nz, side="left").astype(np.int64)

    for _ in range(max_iters):
        labels = assign(centroids)
        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=nz, minlength=k)
        occupied = counts > 0
        new_centroids[occupied] = sums[occupied] / counts[occupied]
        movement = np.max(np.abs(new_centroids - centroids))
        centroids = new_centroids
        if movement < tol:
            break
    labels = assign(centroids)
    used = np.unique(labels)
    remap = np.full(k, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return QuantizedTensor(tensor.name, tensor.shape,
                           centroids[used].astype(np.float32),
                           positions, remap[labels])


def quantization_mse(tensor: WeightTensor, quantized: QuantizedTensor) -> float:
    """Mean squared error over the nonzero entries (0.0 for all-zero tensors)."""
    if quantized.positions.size == 0:
        return 0.0
    original = tensor.values[quantized.positions].astype(np.float64)
    coded = quantized.codebook[quantized.assignments].astype(np.float64)
    return float(np.mean((original - coded) ** 2))


@dataclass(frozen=True)
class CompressedTensor:
    name: str
    shape: tuple[int, ...]
    rel_index_bits: int
    codebook: np.ndarray            # float32
    nonzero_count: int
    record_count: int               # (gap, index) records, fillers included
    gap_lengths: dict[int, int]     # Huffman code lengths, gap alphabet
    index_lengths: dict[int, int]   # Huffman code lengths, index alphabet + filler
    gap_bits: int
    gap_payload: bytes
    index_bits: int
    index_payload: bytes

    def payload_bytes(self) -> int:
        return len(self.gap_payload) + len(self.index_payload)


@dataclass(frozen=True)
class CompressedModel:
    records: tuple[CompressedTensor, ...]

    def container_bytes(self) -> int:
        return len(write_sdnc(self))


def _gap_index_symbols(quantized: QuantizedTensor, rel_index_bits: int) -> tuple[list[int], list[int]]:
    """Flatten positions/assignments into aligned gap and index symbol
    streams. A gap of at least 2**b positions is bridged by filler records
    (gap 2**b - 1 plus one zero-valued padding slot each); the filler index
    symbol is one past the last codebook slot."""
    span = 1 << rel_index_bits
    filler = int(quantized.codebook.size)
    gaps: list[int] = []
    indices: list[int] = []
    cursor = 0
    for pos, idx in zip(quantized.positions.tolist(), quantized.assignments.tolist()):
        gap = pos - cursor
        while gap >= span:
            gaps.append(span - 1)
            indices.append(filler)
            cursor += span
            gap -= span
        gaps.append(gap)
        indices.append(int(idx))
        cursor = pos + 1
    return gaps, indices


def encode(quantized: Sequence[QuantizedTensor], rel_index_bits: int = 4) -> CompressedModel:
    """Entropy-code pruned+quantized tensors into a compressed model."""
    if not 1 <= rel_index_bits <= 16:
        raise ValueError(f"rel_index_bits must be in [1, 16], got {rel_index_bits!r}")
    records = []
    for qt in quantized:
        if qt.positions.size and qt.positions.max() >= qt.element_count():
            raise ValueError(f"{qt.name}: nonzero position out of range")
        if qt.assignments.size and (qt.assignments.min() < 0
                                    or qt.assignments.max() >= qt.codebook.size):
            raise ValueError(f"{qt.name}: assignment out of codebook range")
        gaps, indices = _gap_index_symbols(qt, rel_index_bits)
        gap_lengths = huffman.code_lengths(gaps)
        index_lengths = huffman.code_lengths(indices)
        gap_payload, gap_bits = huffman.encode(gaps, gap_lengths)
        index_payload, index_bits = huffman.encode(indices, index_lengths)
        records.append(CompressedTensor(
            name=qt.name, shape=qt.shape, rel_index_bits=rel_index_bits,
            codebook=qt.codebook.astype(np.float32),
            nonzero_count=int(qt.positions.size),
            record_count=len(gaps),
            gap_lengths=gap_lengths, index_lengths=index_lengths,
            gap_bits=gap_bits, gap_payload=gap_payload,
            index_bits=index_bits, index_payload=index_payload))
    return CompressedModel(tuple(records))


def decode_model(model: CompressedModel) -> list[WeightTensor]:
    """Reconstruct the pruned+quantized tensors exactly."""
    tensors = []
    for rec in model.records:
        n = 1
        for d in rec.shape:
            n *= d
        values = np.zeros(n, dtype=np.float32)
        nonzeros = 0
        if rec.record_count:
            gaps = huffman.decode(rec.gap_payload, rec.gap_bits, rec.gap_lengths,
                                  rec.record_count)
            indices = huffman.decode(rec.index_payload, rec.index_bits, rec.index_lengths,
                                     rec.record_count)
            filler = int(rec.codebook.size)
            cursor = 0
            for gap, idx in zip(gaps, indices):
                cursor += gap
                if cursor >= n:
                    raise CompressedFormatError(f"{rec.name}: decoded position {cursor} "
                                                f"exceeds element count {n}")
                if idx == filler:
                    cursor += 1  # padding slot stays zero
                    continue
                if idx > filler:
                    raise CompressedFormatError(f"{rec.name}: index symbol {idx} out of range")
                values[cursor] = rec.codebook[idx]
                cursor += 1
                nonzeros += 1
        if nonzeros != rec.nonzero_count:
            raise CompressedFormatError(f"{rec.name}: decoded {nonzeros} nonzeros, "
                                        f"header declares {rec.nonzero_count}")
        tensors.append(WeightTensor(rec.name, rec.shape, values))
    return tensors


def _pack_lengths(lengths: dict[int, int], alphabet_size: int, what: str) -> bytes:
    table = bytearray(alphabet_size)
    for sym, length in lengths.items():
        if not 0 <= sym < alphabet_size:
            raise ValueError(f"{what}: symbol {sym} outside alphabet of {alphabet_size}")
        if not 1 <= length <= 255:
            raise ValueError(f"{what}: code length {length} not storable")
        table[sym] = length
    return bytes(table)


def _unpack_lengths(table: bytes) -> dict[int, int]:
    return {sym: length for sym, length in enumerate(table) if length > 0}


def _record_body(rec: CompressedTensor) -> bytes:
    body = bytearray()
    name = rec.name.encode("utf-8")
    body += struct.pack("<H", len(name)) + name
    body += struct.pack("<B", len(rec.shape))
    body += struct.pack(f"<{len(rec.shape)}I", *rec.shape)
    body += struct.pack("<B", rec.rel_index_bits)
    body += struct.pack("<H", rec.codebook.size)
    body += rec.codebook.astype("<f4").tobytes()
    body += struct.pack("<QQ", rec.nonzero_count, rec.record_count)
    if rec.record_count:
        body += _pack_lengths(rec.gap_lengths, 1 << rec.rel_index_bits, rec.name)
        body += _pack_lengths(rec.index_lengths, rec.codebook.size + 1, rec.name)
        body += struct.pack("<Q", rec.gap_bits) + rec.gap_payload
        body += struct.pack("<Q", rec.index_bits) + rec.index_payload
    return bytes(body)


def write_sdnc(model: CompressedModel) -> bytes:
    out = bytearray()
    out += SDNC_MAGIC
    out += struct.pack("<II", SDNC_VERSION, len(model.records))
    for rec in model.records:
        body = _record_body(rec)
        out += struct.pack("<I", len(body))
        out += body
        out += struct.pack("<I", zlib.crc32(body))
    return bytes(out)


def read_sdnc(data: bytes) -> CompressedModel:
    def fail(offset: int, msg: str):
        raise CompressedFormatError(f"SDNC: {msg} at offset {offset}")

    if len(data) < 12:
        fail(0, "container shorter than header")
    if data[:4] != SDNC_MAGIC:
        fail(0, f"bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != SDNC_VERSION:
        fail(4, f"unsupported version {version}")
    pos = 12
    records = []
    for _ in range(count):
        if pos + 4 > len(data):
            fail(pos, "truncated record header")
        (body_len,) = struct.unpack_from("<I", data, pos)
        body_start = pos + 4
        body_end = body_start + body_len
        if body_end + 4 > len(data):
            fail(pos, "truncated record body")
        body = data[body_start:body_end]
        (stored_crc,) = struct.unpack_from("<I", data, body_end)
        actual_crc = zlib.crc32(body)
        if stored_crc != actual_crc:
            fail(body_start, f"checksum mismatch (stored {stored_crc:#010x}, "
                             f"computed {actual_crc:#010x})")
        try:
            records.append(_parse_record(body))
        except (struct.error, ValueError) as exc:
            if isinstance(exc, CompressedFormatError):
                raise
            fail(body_start, str(exc))
        pos = body_end + 4
    if pos != len(data):
        fail(pos, f"{len(data) - pos} trailing bytes")
    return CompressedModel(tuple(records))


def _parse_record(body: bytes) -> CompressedTensor:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise CompressedFormatError(f"record truncated at body offset {pos}")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (name_len,) = struct.unpack("<H", take(2))
    name = take(name_len).decode("utf-8")
    (rank,) = struct.unpack("<B", take(1))
    shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
    (rel_index_bits,) = struct.unpack("<B", take(1))
    if not 1 <= rel_index_bits <= 16:
        raise CompressedFormatError(f"{name}: invalid gap width {rel_index_bits}")
    (cb_size,) = struct.unpack("<H", take(2))
    codebook = np.frombuffer(take(4 * cb_size), dtype="<f4").astype(np.float32)
    nonzero_count, record_count = struct.unpack("<QQ", take(16))
    if record_count:
        gap_lengths = _unpack_lengths(take(1 << rel_index_bits))
        index_lengths = _unpack_lengths(take(cb_size + 1))
        (gap_bits,) = struct.unpack("<Q", take(8))
        gap_payload = take((gap_bits + 7) // 8)
        (index_bits,) = struct.unpack("<Q", take(8))
        index_payload = take((index_bits + 7) // 8)
    else:
        gap_lengths, index_lengths = {}, {}
        gap_bits, gap_payload = 0, b""
        index_bits, index_payload = 0, b""
    if pos != len(body):
        raise CompressedFormatError(f"{name}: {len(body) - pos} unread bytes in record")
    return CompressedTensor(name, shape, rel_index_bits, codebook, nonzero_count,
                            record_count, gap_lengths, index_lengths, gap_bits, gap_payload,
                            index_bits, index_payload)


def compress_model(tensors: Sequence[WeightTensor], target_sparsity: float, bits: int,
                   rel_index_bits: int = 4, max_iters: int = 50,
                   tol: float = 1e-8) -> CompressedModel:
    """Full pipeline: prune each tensor, quantize the survivors, encode."""
    quantized = []
    for t in tensors:
        pruned, _ = prune_magnitude(t, target_sparsity)
        quantized.append(kmeans_quantize(pruned, bits, max_iters, tol))
    return encode(quantized, rel_index_bits)


@dataclass(frozen=True)
class TensorReportRow:
    name: str
    dense_bytes: int
    compressed_bytes: int
    nonzeros: int
    codebook_entries: int

    @property
    def ratio(self) -> Optional[float]:
        return self.dense_bytes / self.compressed_bytes if self.compressed_bytes else None


@dataclass(frozen=True)
class CompressionReport:
    dense_bytes: int
    compressed_bytes: int
    rows: tuple[TensorReportRow, ...]

    @property
    def ratio(self) -> Optional[float]:
        """Dense fp32 bytes over container bytes; None when undefined."""
        if self.compressed_bytes == 0 or self.dense_bytes == 0:
            return None
        return self.dense_bytes / self.compressed_bytes


def compression_report(dense_bytes: int, model: CompressedModel) -> CompressionReport:
    container = write_sdnc(model)
    per_record_overhead = 8  # body length + crc
    rows = []
    for rec in model.records:
        n = 1
        for d in rec.shape:
            n *= d
        rows.append(TensorReportRow(rec.name, 4 * n,
                                    len(_record_body(rec)) + per_record_overhead,
                                    rec.nonzero_count, int(rec.codebook.size)))
    return CompressionReport(dense_bytes, len(container), tuple(rows))


def save_sdnc(model: CompressedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_sdnc(model))


def load_sdnc(path) -> CompressedModel:
    with open(path, "rb") as fh:
        return read_sdnc(fh.read())
