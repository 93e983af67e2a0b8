"""Counter-based seed derivation.

Every random object in an experiment is drawn from its own generator, seeded by
``SeedSequence(entropy=master_seed, spawn_key=(replicate, trajectory, step, role))``.
``SeedSequence`` hashes the key words into the 128-bit PCG64 state, so any
object can be regenerated from its path alone and results never depend on the
order in which replicates or trajectories are executed.

Seed paths in use:

=====================  ===========  ==========  ======  ==========
object                 replicate    trajectory  step    role
=====================  ===========  ==========  ======  ==========
initialization         r            n (1..N)    0       INIT
training batch         r            n (1..N)    t (1..) BATCH
selection batch        r            0           0       VALIDATION
true-risk MC sample    r            0           0       TRUE_RISK
inactivity MC draws    0            0           0       INACTIVITY_MC
=====================  ===========  ==========  ======  ==========
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class Role(IntEnum):
    INIT = 0
    BATCH = 1
    VALIDATION = 2
    TRUE_RISK = 3
    INACTIVITY_MC = 4
    AUX = 5


def seed_sequence(master_seed: int, replicate: int, trajectory: int, step: int, role: Role) -> np.random.SeedSequence:
    if master_seed < 0:
        raise ValueError("master seed must be nonnegative")
    return np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=(int(replicate), int(trajectory), int(step), int(role)),
    )


def derive_rng(master_seed: int, replicate: int = 0, trajectory: int = 0, step: int = 0,
               role: Role = Role.AUX) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, replicate, trajectory, step, role)))


def derived_state_word(master_seed: int, replicate: int, trajectory: int, step: int, role: Role) -> int:
    """First 128 bits of the derived state; used to check that seed paths do not collide."""
    words = seed_sequence(master_seed, replicate, trajectory, step, role).generate_state(2, dtype=np.uint64)
    return int(words[0]) << 64 | int(words[1])
