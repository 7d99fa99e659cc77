"""Exception types with stable string codes.

The codes are part of the public contract: language bindings surface the
same codes, and the CLI prints them on failure.
"""


class MeshtokError(Exception):
    """Base for all package errors."""

    code = "error"


class ObjParseError(MeshtokError):
    code = "obj-parse"


class DegenerateMeshError(MeshtokError):
    code = "degenerate-mesh"


class QuantizeRangeError(MeshtokError):
    code = "quantize-range"


class EncodeError(MeshtokError):
    code = "encode"


class SequenceError(MeshtokError):
    """Malformed token sequence (strict decode / grammar violation)."""

    code = "sequence"


class ShardError(MeshtokError):
    code = "shard"


class PackError(MeshtokError):
    code = "pack"


class CheckpointError(MeshtokError):
    code = "checkpoint"


class NonFiniteLossError(MeshtokError):
    code = "non-finite-loss"


class EvalError(MeshtokError):
    code = "eval"
