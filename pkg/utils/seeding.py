"""Seed derivation so every random stream is a pure function of (seed, step, purpose)"""
import numpy as np

# stream identifiers
DATA_ORDER = 0
BENIGN_DROPOUT = 1
ADVERSARIAL_DROPOUT = 2
PERTURBATION_INIT = 3
PARAM_INIT = 4
DECODER_INIT = 5
EVAL_ATTACK = 6


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit child seed from a root seed and integer keys"""
    sequence = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Create an independent generator for a (seed, keys) stream"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))
