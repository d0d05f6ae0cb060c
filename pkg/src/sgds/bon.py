"""Best-of-N candidate generation and selection by lowest average surprise.

Candidate i always draws from an rng stream derived by a counter-based
split of the base seed, so a CandidateSet is bit-identical whether the
candidates were generated serially or concurrently, in any order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

DEFAULT_N = 16


def candidate_stream(base_seed: int, index: int):
    """Independent rng stream for candidate ``index``."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))
    )


@dataclass
class CandidateSet:
    candidates: list  # N sequences, each a list of chunks
    chunk_surprises: np.ndarray  # (N, num_chunks)
    base_seed: int

    def __post_init__(self):
        self.chunk_surprises = np.asarray(self.chunk_surprises, dtype=np.float64)
        if len(self.candidates) < 1:
            raise ValueError("need at least one candidate")
        if self.chunk_surprises.shape[0] != len(self.candidates):
            raise ValueError("surprise matrix rows must match candidate count")

    @property
    def n(self) -> int:
        return len(self.candidates)


def generate_candidates(
    n: int,
    generator,
    surprise_fn,
    base_seed: int,
    initial_context,
    max_workers: int = 1,
) -> CandidateSet:
    """Generate N sequences and score each generated chunk.

    ``generator(rng) -> list of chunks``; ``surprise_fn(context, chunk) ->
    float`` is evaluated against each chunk's realized context (the seed
    context for the first chunk, the previous generated chunk afterwards).
    Results are independent of ``max_workers``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")

    def run(index):
        sequence = generator(candidate_stream(base_seed, index))
        contexts = [initial_context, *sequence[:-1]]
        scores = [surprise_fn(ctx, chunk) for ctx, chunk in zip(contexts, sequence)]
        return sequence, scores

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, range(n)))
    else:
        results = [run(i) for i in range(n)]

    candidates = [sequence for sequence, _ in results]
    surprises = np.array([scores for _, scores in results], dtype=np.float64)
    return CandidateSet(
        candidates=candidates, chunk_surprises=surprises, base_seed=base_seed
    )


def average_surprise(candidate_set: CandidateSet, index: int) -> float:
    """Arithmetic mean of one candidate's per-chunk surprises."""
    if not 0 <= index < candidate_set.n:
        raise IndexError(f"candidate index {index} out of range")
    return float(candidate_set.chunk_surprises[index].mean())


def select_best(candidate_set: CandidateSet) -> int:
    """Index minimizing average surprise; ties go to the lowest index."""
    averages = candidate_set.chunk_surprises.mean(axis=1)
    return int(np.argmin(averages))
