"""MXTK token shard binary format.

Layout (all little-endian):

    bytes 0..3    magic "MXTK"
    u32           format version (1)
    u32           grid resolution N
    u32           vocabulary size V
    u32           grammar mode (0 = triangle, 1 = hybrid)
    u64           sequence count
    u64 x count   token offset of each sequence into the payload
    u16 x total   payload: token ids, sequences back to back

Token offsets are cumulative token counts (offset[0] == 0), so sequence i
spans payload[offset[i] : offset[i+1]] with the final bound derived from the
payload size. The format is bit-exact across platforms.
"""

from __future__ import annotations

import struct

import numpy as np

from .codec import GRAMMAR_MODES, TokenSequence, Vocabulary
from .errors import ShardError

MAGIC = b"MXTK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")

_MODE_IDS = {mode: i for i, mode in enumerate(GRAMMAR_MODES)}


def write_shard(
    path,
    sequences: list[TokenSequence | np.ndarray],
    vocab: Vocabulary,
    mode: str = "triangle",
) -> None:
    if mode not in _MODE_IDS:
        raise ShardError(f"unknown grammar mode {mode!r}")
    if vocab.size > 65536:
        raise ShardError(f"vocabulary size {vocab.size} exceeds 16-bit token storage")
    if not sequences:
        raise ShardError("refusing to write an empty shard")

    arrays = []
    for i, seq in enumerate(sequences):
        tokens = seq.tokens if isinstance(seq, TokenSequence) else np.asarray(seq)
        tokens = np.asarray(tokens).reshape(-1)
        if tokens.size == 0:
            raise ShardError(f"sequence {i} is empty")
        if tokens.min() < 0 or tokens.max() >= vocab.size:
            raise ShardError(f"sequence {i} has token ids outside [0, {vocab.size})")
        arrays.append(tokens.astype("<u2"))

    lengths = np.array([len(a) for a in arrays], dtype=np.uint64)
    offsets = np.zeros(len(arrays), dtype="<u8")
    np.cumsum(lengths[:-1], out=offsets[1:])

    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                MAGIC,
                FORMAT_VERSION,
                vocab.grid_resolution,
                vocab.size,
                _MODE_IDS[mode],
                len(arrays),
            )
        )
        fh.write(offsets.tobytes())
        for a in arrays:
            fh.write(a.tobytes())


class ShardReader:
    """Random access over one MXTK shard; loads the payload eagerly."""

    def __init__(self, path):
        self.path = str(path)
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _HEADER.size:
            raise ShardError(f"{self.path}: truncated header")
        magic, version, n, v, mode_id, count = _HEADER.unpack_from(raw, 0)
        if magic != MAGIC:
            raise ShardError(f"{self.path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ShardError(f"{self.path}: unsupported format version {version}")
        if mode_id >= len(GRAMMAR_MODES):
            raise ShardError(f"{self.path}: unknown grammar mode id {mode_id}")
        self.grid_resolution = n
        self.vocab_size = v
        self.mode = GRAMMAR_MODES[mode_id]
        index_end = _HEADER.size + 8 * count
        if len(raw) < index_end:
            raise ShardError(f"{self.path}: truncated offset index")
        self._offsets = np.frombuffer(raw, dtype="<u8", count=count, offset=_HEADER.size)
        payload_bytes = len(raw) - index_end
        if payload_bytes % 2 != 0:
            raise ShardError(f"{self.path}: payload is not a whole number of u16 tokens")
        self._payload = np.frombuffer(raw, dtype="<u2", offset=index_end)
        total = np.uint64(len(self._payload))
        bounds = np.concatenate([self._offsets, [total]])
        if (np.diff(bounds.astype(np.int64)) <= 0).any():
            raise ShardError(f"{self.path}: offset index is not strictly increasing")

    @property
    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.grid_resolution)

    def __len__(self) -> int:
        return len(self._offsets)

    def __getitem__(self, i: int) -> TokenSequence:
        if not 0 <= i < len(self):
            raise ShardError(f"{self.path}: sequence index {i} out of range (count {len(self)})")
        start = int(self._offsets[i])
        end = int(self._offsets[i + 1]) if i + 1 < len(self) else len(self._payload)
        return TokenSequence(self._payload[start:end].astype(np.int32), grammar_mode=self.mode)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def read_all(paths) -> tuple[list[TokenSequence], Vocabulary, str]:
    """Load every sequence from one or more shards, checking header agreement."""
    paths = [paths] if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__") else list(paths)
    if not paths:
        raise ShardError("no shard paths given")
    sequences: list[TokenSequence] = []
    first: ShardReader | None = None
    for path in paths:
        reader = ShardReader(path)
        if first is None:
            first = reader
        elif (reader.grid_resolution, reader.vocab_size, reader.mode) != (
            first.grid_resolution,
            first.vocab_size,
            first.mode,
        ):
            raise ShardError(f"{path}: header disagrees with {first.path}")
        sequences.extend(reader)
    return sequences, first.vocabulary, first.mode
