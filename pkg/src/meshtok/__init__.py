"""meshtok: polygon meshes to canonical token sequences and back, plus a
desk-scale next-coordinate generator and set-level evaluation metrics."""

from . import errors
from ._kernels import backend as kernel_backend
from .canonical import (
    GridSpec,
    NormalizationTransform,
    QuantizedMesh,
    canonicalize,
    dequantize,
    is_canonical,
    normalize,
    quantize,
)
from .codec import (
    HYBRID,
    TRIANGLE,
    GrammarState,
    TokenSequence,
    ValidationReport,
    Vocabulary,
    decode,
    decode_partial,
    encode,
    grammar_mask,
    validate,
)
from .dataset import (
    AugmentationParams,
    ManifestRecord,
    PackEntry,
    augment,
    decimation_gate,
    face_count_gate,
    pack,
    tokenize_corpus,
)
from .geometry_io import Mesh, parse_obj, write_obj
from .metrics import (
    EvalReport,
    PointCloud,
    chamfer,
    cov,
    evaluate,
    hausdorff,
    jsd,
    mmd,
    one_nna,
    pairwise_chamfer,
    sample_points,
)
from .model import (
    CoordinateLM,
    ModelConfig,
    TrainConfig,
    Trainer,
    conditional_loss,
    load_checkpoint,
    loss,
    perplexity,
    save_checkpoint,
)
from .rng import philox_stream
from .sampling import SampleResult, complete, prompt_from_sequence, sample, top_k_top_p_mask
from .shards import ShardReader, read_all, write_shard

__version__ = "0.1.0"
