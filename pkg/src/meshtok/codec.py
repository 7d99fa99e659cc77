"""Lossless mapping between canonical quantized meshes and token sequences.

Triangle-only sequences are ``[BOS, 9n coordinate tokens, EOS]``; the hybrid
grammar wraps each face in ``<tri>...</tri>`` / ``<quad>...</quad>`` groups.
Per vertex the components are emitted in (x, y, z) order by default; the
(z, y, x) alternative used for ablations is a call-level switch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import GridSpec, QuantizedMesh, is_canonical
from .errors import EncodeError, SequenceError

TRIANGLE = "triangle"
HYBRID = "hybrid"
GRAMMAR_MODES = (TRIANGLE, HYBRID)

COMPONENT_ORDERS = ("xyz", "zyx")

DEFAULT_MAX_FACES = 800


@dataclass(frozen=True)
class Vocabulary:
    """Coordinate tokens 0..N-1 plus seven special ids appended after them."""

    grid_resolution: int = 128

    @property
    def n(self) -> int:
        return self.grid_resolution

    @property
    def bos(self) -> int:
        return self.grid_resolution

    @property
    def eos(self) -> int:
        return self.grid_resolution + 1

    @property
    def pad(self) -> int:
        return self.grid_resolution + 2

    @property
    def tri_open(self) -> int:
        return self.grid_resolution + 3

    @property
    def tri_close(self) -> int:
        return self.grid_resolution + 4

    @property
    def quad_open(self) -> int:
        return self.grid_resolution + 5

    @property
    def quad_close(self) -> int:
        return self.grid_resolution + 6

    @property
    def size(self) -> int:
        return self.grid_resolution + 7

    def is_coordinate(self, token: int) -> bool:
        return 0 <= token < self.grid_resolution

    def for_grid(self) -> GridSpec:
        return GridSpec(self.grid_resolution)


@dataclass
class TokenSequence:
    tokens: np.ndarray  # (L,) int32
    grammar_mode: str = TRIANGLE

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int32).reshape(-1)
        if self.grammar_mode not in GRAMMAR_MODES:
            raise ValueError(f"unknown grammar mode {self.grammar_mode!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return self.grammar_mode == other.grammar_mode and np.array_equal(self.tokens, other.tokens)


def encode(
    qmesh: QuantizedMesh,
    vocab: Vocabulary,
    mode: str = TRIANGLE,
    component_order: str = "xyz",
    max_faces: int = DEFAULT_MAX_FACES,
) -> TokenSequence:
    """Serialize a canonical mesh: per face, per vertex, one token per component."""
    if mode not in GRAMMAR_MODES:
        raise EncodeError(f"unknown grammar mode {mode!r}")
    if component_order not in COMPONENT_ORDERS:
        raise EncodeError(f"unknown component order {component_order!r}")
    if vocab.grid_resolution != qmesh.grid.resolution:
        raise EncodeError(
            f"vocabulary grid {vocab.grid_resolution} != mesh grid {qmesh.grid.resolution}"
        )
    if not (qmesh.canonical or is_canonical(qmesh)):
        raise EncodeError("encode requires a canonical mesh")
    if qmesh.n_faces > max_faces:
        raise EncodeError(f"{qmesh.n_faces} faces exceeds max_faces={max_faces}")

    parts: list[np.ndarray] = [np.array([vocab.bos], dtype=np.int32)]
    for face in qmesh.faces:
        coords = face if component_order == "xyz" else face[:, ::-1]
        if len(face) == 3:
            if mode == HYBRID:
                parts.append(np.array([vocab.tri_open], dtype=np.int32))
            parts.append(coords.reshape(-1).astype(np.int32))
            if mode == HYBRID:
                parts.append(np.array([vocab.tri_close], dtype=np.int32))
        elif len(face) == 4:
            if mode == TRIANGLE:
                raise EncodeError("quad face in triangle-only mode")
            parts.append(np.array([vocab.quad_open], dtype=np.int32))
            parts.append(coords.reshape(-1).astype(np.int32))
            parts.append(np.array([vocab.quad_close], dtype=np.int32))
        else:
            raise EncodeError(f"unsupported face arity {len(face)}")
    parts.append(np.array([vocab.eos], dtype=np.int32))
    return TokenSequence(np.concatenate(parts), grammar_mode=mode)


@dataclass
class DecodeInfo:
    tokens_consumed: int
    tokens_discarded: int
    complete: bool  # body closed by EOS


def _token_array(seq: TokenSequence | np.ndarray | list[int]) -> tuple[np.ndarray, str | None]:
    if isinstance(seq, TokenSequence):
        return seq.tokens, seq.grammar_mode
    return np.asarray(seq, dtype=np.int32).reshape(-1), None


def decode_partial(
    seq: TokenSequence | np.ndarray | list[int],
    vocab: Vocabulary,
    strict: bool = False,
    mode: str | None = None,
    component_order: str = "xyz",
) -> tuple[QuantizedMesh, DecodeInfo]:
    """Decode tokens into a QuantizedMesh, reporting consumption.

    Strict mode raises SequenceError at the first grammar violation;
    permissive mode stops there, truncates any partial face, and reports how
    many tokens were consumed versus discarded.
    """
    tokens, seq_mode = _token_array(seq)
    mode = mode or seq_mode or TRIANGLE
    if mode not in GRAMMAR_MODES:
        raise SequenceError(f"unknown grammar mode {mode!r}")

    def fail(pos: int, message: str) -> None:
        raise SequenceError(f"position {pos}: {message}")

    if len(tokens) == 0 or tokens[0] != vocab.bos:
        fail(0, "sequence must start with BOS")

    faces: list[np.ndarray] = []
    consumed = 1  # BOS
    pos = 1
    complete = False
    violation: str | None = None

    def take_face(start: int, k: int) -> bool:
        nonlocal violation
        chunk = tokens[start : start + 3 * k]
        if len(chunk) < 3 * k:
            violation = f"position {len(tokens)}: truncated face"
            return False
        if not all(vocab.is_coordinate(int(t)) for t in chunk):
            violation = f"position {start}: non-coordinate token inside a face"
            return False
        coords = chunk.reshape(k, 3)
        if component_order == "zyx":
            coords = coords[:, ::-1]
        faces.append(np.ascontiguousarray(coords, dtype=np.int32))
        return True

    if mode == TRIANGLE:
        while pos < len(tokens):
            t = int(tokens[pos])
            if t == vocab.eos:
                complete = True
                consumed = pos + 1
                break
            if not take_face(pos, 3):
                break
            pos += 9
            consumed = pos
        else:
            violation = violation or f"position {len(tokens)}: missing EOS"
    else:
        while pos < len(tokens):
            t = int(tokens[pos])
            if t == vocab.eos:
                complete = True
                consumed = pos + 1
                break
            if t == vocab.tri_open:
                k, closer = 3, vocab.tri_close
            elif t == vocab.quad_open:
                k, closer = 4, vocab.quad_close
            else:
                violation = f"position {pos}: expected <tri>, <quad>, or EOS"
                break
            if not take_face(pos + 1, k):
                break
            end = pos + 1 + 3 * k
            if end >= len(tokens) or int(tokens[end]) != closer:
                faces.pop()
                violation = f"position {end}: unterminated face group"
                break
            pos = end + 1
            consumed = pos
        else:
            violation = violation or f"position {len(tokens)}: missing EOS"

    if violation is None and not complete:
        violation = f"position {len(tokens)}: missing EOS"
    if violation is None and complete and consumed < len(tokens):
        violation = f"position {consumed}: trailing tokens after EOS"

    if strict and violation is not None:
        raise SequenceError(violation)
    if strict and not faces:
        raise SequenceError("empty body (no faces)")
    if not faces:
        raise SequenceError(f"no complete face decoded ({violation})")

    mesh = QuantizedMesh(faces, vocab.for_grid(), canonical=False)
    mesh.canonical = is_canonical(mesh)
    info = DecodeInfo(
        tokens_consumed=consumed,
        tokens_discarded=len(tokens) - consumed,
        complete=complete,
    )
    return mesh, info


def decode(
    seq: TokenSequence | np.ndarray | list[int],
    vocab: Vocabulary,
    strict: bool = True,
    mode: str | None = None,
    component_order: str = "xyz",
) -> QuantizedMesh:
    """Exact inverse of encode on strict-valid sequences."""
    mesh, _ = decode_partial(seq, vocab, strict=strict, mode=mode, component_order=component_order)
    return mesh


class GrammarState:
    """Tracks the decoder position within the face grammar.

    ``mask`` returns the admissible next tokens; ``advance`` consumes one.
    ``remaining`` (a token budget including the token about to be emitted)
    removes choices that could no longer reach EOS in time.
    """

    def __init__(self, vocab: Vocabulary, mode: str = TRIANGLE):
        if mode not in GRAMMAR_MODES:
            raise ValueError(f"unknown grammar mode {mode!r}")
        self.vocab = vocab
        self.mode = mode
        self.bos_seen = False
        self.n_faces = 0
        self.offset = 0  # coordinate position within the current face
        self.group: str | None = None  # hybrid: "tri" | "quad" while inside a group
        self.expect_close = False
        self.done = False

    def mask(self, remaining: int | None = None) -> np.ndarray:
        v = self.vocab
        out = np.zeros(v.size, dtype=bool)
        if self.done:
            return out
        if not self.bos_seen:
            out[v.bos] = True
            return out
        coords = slice(0, v.n)
        if self.mode == TRIANGLE:
            if self.offset == 0:
                if remaining is None or remaining >= 10:  # 9 coords + EOS
                    out[coords] = True
                if self.n_faces >= 1:
                    out[v.eos] = True
                if not out.any():  # budget killed coords before the first face
                    out[coords] = True
            else:
                out[coords] = True
            return out
        # hybrid
        if self.expect_close:
            out[v.tri_close if self.group == "tri" else v.quad_close] = True
            return out
        if self.group is not None:
            out[coords] = True
            return out
        if remaining is None or remaining >= 12:  # <tri> + 9 + </tri> + EOS
            out[v.tri_open] = True
        if remaining is None or remaining >= 15:  # <quad> + 12 + </quad> + EOS
            out[v.quad_open] = True
        if self.n_faces >= 1:
            out[v.eos] = True
        if not out.any():
            out[v.tri_open] = True
        return out

    def advance(self, token: int) -> None:
        if not bool(self.mask()[token]):
            raise SequenceError(f"token {token} not admissible in state {self.describe()}")
        v = self.vocab
        if token == v.bos:
            self.bos_seen = True
            return
        if token == v.eos:
            self.done = True
            return
        if self.mode == TRIANGLE:
            self.offset = (self.offset + 1) % 9
            if self.offset == 0:
                self.n_faces += 1
            return
        if token == v.tri_open:
            self.group, self.offset = "tri", 0
        elif token == v.quad_open:
            self.group, self.offset = "quad", 0
        elif token in (v.tri_close, v.quad_close):
            self.group, self.expect_close = None, False
            self.n_faces += 1
        else:
            self.offset += 1
            if self.offset == (9 if self.group == "tri" else 12):
                self.expect_close = True
                self.offset = 0

    def describe(self) -> str:
        return (
            f"(bos={self.bos_seen}, faces={self.n_faces}, offset={self.offset}, "
            f"group={self.group}, done={self.done})"
        )


def grammar_mask(state: GrammarState, remaining: int | None = None) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens admissible from ``state``."""
    return state.mask(remaining=remaining)


@dataclass
class ValidationReport:
    valid: bool
    n_faces: int
    first_violation: str | None = None


def validate(
    seq: TokenSequence | np.ndarray | list[int],
    vocab: Vocabulary,
    mode: str | None = None,
) -> ValidationReport:
    """Strict-grammar verdict without materializing a mesh."""
    tokens, seq_mode = _token_array(seq)
    mode = mode or seq_mode or TRIANGLE
    state = GrammarState(vocab, mode)
    for pos, token in enumerate(tokens):
        t = int(token)
        if t < 0 or t >= vocab.size:
            return ValidationReport(False, state.n_faces, f"position {pos}: token {t} out of range")
        if state.done:
            return ValidationReport(False, state.n_faces, f"position {pos}: token after EOS")
        if not bool(state.mask()[t]):
            return ValidationReport(
                False, state.n_faces, f"position {pos}: token {t} violates grammar"
            )
        state.advance(t)
    if not state.done:
        return ValidationReport(False, state.n_faces, f"position {len(tokens)}: missing EOS")
    if state.n_faces == 0:
        return ValidationReport(False, 0, "empty body")
    return ValidationReport(True, state.n_faces, None)
