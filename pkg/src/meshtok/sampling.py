"""Top-k / top-p generation, optional grammar constraint, and completion.

Every draw comes from a Philox stream keyed by (seed, stream id), so outputs
are reproducible across platforms. The truncation rule keeps the top-k
probabilities, then within them the smallest descending-sorted prefix whose
cumulative probability reaches p, then renormalizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .codec import TRIANGLE, GrammarState, TokenSequence, Vocabulary
from .errors import SequenceError
from .model import CoordinateLM
from .rng import philox_stream


def top_k_top_p_mask(probs: np.ndarray, k: int, p: float) -> np.ndarray:
    """Boolean mask of tokens kept by top-k then smallest cumsum >= p prefix.

    Ties sort by ascending token id, so k=1 reduces to argmax with the lowest
    id winning. When even the full top-k mass stays below p, all k survive.
    """
    if k < 1:
        raise ValueError(f"top-k must be >= 1, got {k}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"top-p must be in (0, 1], got {p}")
    order = np.argsort(-probs, kind="stable")[: min(k, len(probs))]
    csum = np.cumsum(probs[order])
    kept = int(np.searchsorted(csum, p, side="left")) + 1
    kept = min(kept, len(order))
    mask = np.zeros(len(probs), dtype=bool)
    mask[order[:kept]] = True
    return mask


def _softmax64(logits: torch.Tensor) -> np.ndarray:
    x = logits.detach().cpu().numpy().astype(np.float64)
    x -= x.max()
    e = np.exp(x)
    return e / e.sum()


def _draw(probs: np.ndarray, keep: np.ndarray, rng: np.random.Generator) -> int:
    q = np.where(keep, probs, 0.0)
    total = q.sum()
    if total <= 0.0:  # degenerate distribution: uniform over the admissible set
        q = keep.astype(np.float64)
        total = q.sum()
    q = q / total
    c = np.cumsum(q)
    c[-1] = 1.0
    token = int(np.searchsorted(c, rng.random(), side="right"))
    return token


@dataclass
class SampleResult:
    sequence: TokenSequence
    truncated: bool  # hit the token budget before EOS
    n_tokens: int

    @property
    def tokens(self) -> np.ndarray:
        return self.sequence.tokens


def sample(
    model: CoordinateLM,
    vocab: Vocabulary,
    top_k: int = 50,
    top_p: float = 0.95,
    max_tokens: int | None = None,
    seed: int = 0,
    stream: int = 0,
    constrained: bool = False,
    class_id: int | None = None,
    mode: str = TRIANGLE,
) -> SampleResult:
    """Generate one sequence from BOS; stops at EOS or the token budget."""
    return complete(
        model,
        vocab,
        prompt=[vocab.bos],
        top_k=top_k,
        top_p=top_p,
        max_tokens=max_tokens,
        seed=seed,
        stream=stream,
        constrained=constrained,
        class_id=class_id,
        mode=mode,
    )


def complete(
    model: CoordinateLM,
    vocab: Vocabulary,
    prompt,
    top_k: int = 50,
    top_p: float = 0.95,
    max_tokens: int | None = None,
    seed: int = 0,
    stream: int = 0,
    constrained: bool = False,
    class_id: int | None = None,
    mode: str = TRIANGLE,
) -> SampleResult:
    """Continue a prompt of whole faces through EOS; prompt tokens are kept verbatim.

    The prompt must start with BOS and contain only complete faces. With
    ``constrained`` the sampler intersects the kept set with the grammar mask
    (budget-aware, so EOS always lands in time); when the intersection is
    empty it falls back to the grammar mask alone.
    """
    prompt = [int(t) for t in np.asarray(prompt, dtype=np.int64).reshape(-1)]
    if not prompt or prompt[0] != vocab.bos:
        raise SequenceError("prompt must start with BOS")
    state = GrammarState(vocab, mode)
    for pos, token in enumerate(prompt):
        try:
            state.advance(token)
        except SequenceError:
            raise SequenceError(f"prompt violates the face grammar at position {pos}") from None
    if state.offset != 0 or state.group is not None or state.done:
        raise SequenceError("prompt must end on a whole-face boundary (and before EOS)")

    prefix = model.config.prefix_length if class_id is not None else 0
    budget = model.config.context_length - prefix
    max_tokens = budget if max_tokens is None else min(max_tokens, budget)
    if len(prompt) > max_tokens:
        raise SequenceError(f"prompt length {len(prompt)} exceeds the {max_tokens}-token budget")

    rng = philox_stream(seed, stream)
    model.eval()
    logits, cache, position = model.prefill(prompt, class_id=class_id)
    ids = list(prompt)
    grammar_alive = True  # unconstrained output may leave the grammar; keep sampling
    while len(ids) < max_tokens:
        probs = _softmax64(logits)
        keep = top_k_top_p_mask(probs, top_k, top_p)
        if constrained:
            admissible = state.mask(remaining=max_tokens - len(ids))
            both = keep & admissible
            keep = both if both.any() else admissible
        token = _draw(probs, keep, rng)
        ids.append(token)
        if grammar_alive:
            try:
                state.advance(token)
            except SequenceError:
                grammar_alive = False
        if token == vocab.eos:
            break
        logits, cache = model.step(token, position, cache)
        position += 1

    sequence = TokenSequence(np.array(ids, dtype=np.int32), grammar_mode=mode)
    return SampleResult(sequence=sequence, truncated=ids[-1] != vocab.eos, n_tokens=len(ids))


def prompt_from_sequence(seq: TokenSequence, vocab: Vocabulary, ratio: float) -> list[int]:
    """BOS plus the first floor(ratio * n_faces) whole faces of a triangle sequence."""
    tokens = seq.tokens
    if len(tokens) < 2 or tokens[0] != vocab.bos:
        raise SequenceError("sequence must start with BOS")
    interior = tokens[1 : -1 if tokens[-1] == vocab.eos else None]
    if len(interior) % 9 != 0:
        raise SequenceError("sequence interior is not whole triangle faces")
    n_faces = len(interior) // 9
    take = int(np.floor(ratio * n_faces))
    take = min(max(take, 0), n_faces)
    return [int(vocab.bos)] + [int(t) for t in interior[: 9 * take]]
