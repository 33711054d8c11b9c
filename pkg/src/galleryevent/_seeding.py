import hashlib
import json

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *keys) -> int:
    """Deterministic child seed from a parent seed and integer/str keys."""
    entropy = [int(seed) & _MASK64]
    for k in keys:
        if isinstance(k, str):
            k = int.from_bytes(hashlib.sha256(k.encode()).digest()[:8], "little")
        entropy.append(int(k) & _MASK64)
    return int(np.random.SeedSequence(entropy).generate_state(2, np.uint32).view(np.uint64)[0])


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys) if keys else int(seed) & _MASK64)


def config_digest(obj) -> str:
    """Short stable hash of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
