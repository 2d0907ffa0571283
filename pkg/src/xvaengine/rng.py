"""Counter-based random streams.

Every stream is a Philox generator whose key is derived from the run seed
and a stream kind, and whose counter's upper words hold the stream index
(path number, anchor time, ...). Streams never overlap and a stream's
output does not depend on which worker draws it or in which order.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

PRIMARY_RATES = 1
PRIMARY_DEFAULTS = 2
SECONDARY_RATES = 3
SECONDARY_DEFAULTS = 4


def stream(seed: int, kind: int, index: int, sub: int = 0) -> np.random.Generator:
    """Generator for stream ``(seed, kind, index, sub)``."""
    key = np.array([seed & _MASK64, kind & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, index & _MASK64, sub & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
