"""Seed derivation: every random stream comes from (global seed, component, index)."""

import hashlib

import numpy as np


def derive_seed(seed: int, component: str, index: int = 0) -> int:
    """Return a 64-bit seed for ``component`` number ``index`` under ``seed``.

    The derivation is ``sha256(f"{seed}:{component}:{index}")`` truncated to
    its first eight bytes, so any sub-run can be reproduced in isolation.
    """
    digest = hashlib.sha256(f"{seed}:{component}:{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, component: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, component, index))
