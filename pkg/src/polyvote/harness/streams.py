"""Independent per-replication random streams.

Replication ``r`` of a run seeded with ``seed`` always draws from
``SeedSequence(seed, spawn_key=(r,))``, so results do not depend on how
replications are split across threads.
"""

from __future__ import annotations

import os

import numpy as np

SEED_ENV = "POLYVOTE_SEED"


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    if seed < 0 or rep < 0:
        raise ValueError("seed and replication index must be >= 0")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(rep,))))


def env_seed(default: int | None = None) -> int | None:
    """Seed from the ``POLYVOTE_SEED`` environment variable, if set."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def chunk_bounds(reps: int, chunks: int) -> list[tuple[int, int]]:
    """Split ``range(reps)`` into at most ``chunks`` contiguous pieces."""
    chunks = max(1, min(chunks, reps)) if reps else 1
    edges = np.linspace(0, reps, chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
