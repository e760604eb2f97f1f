"""Counter-based random streams, one per (master seed, trial, noise source).

Every noise source gets its own Philox key derived through
``SeedSequence(master_seed, spawn_key=(trial, stream_id))``, so plant and
attacker noise are disjoint by construction and any trial can be regenerated
in isolation.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "w": 0,
    "v": 1,
    "eta": 2,
    "wm": 3,
    "attacker_w": 4,
    "attacker_v": 5,
    "attacker_eta": 6,
    "attacker_wm": 7,
}


def stream(master_seed: int, trial: int, name: str) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial), STREAMS[name]))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministic 63-bit child seed, e.g. for per-system generation."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
