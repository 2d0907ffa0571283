from dataclasses import dataclass

import numpy as np

DEFAULT_BLOCKS = 20


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float = float("nan")

    @property
    def rel_se(self):
        return abs(self.se / self.value) if self.value else float("nan")

    def __float__(self):
        return self.value


def batch_means(samples, blocks=DEFAULT_BLOCKS) -> Estimate:
    """Mean with a batch-means standard error over contiguous path blocks.

    Blocks are formed in path order, so the result does not depend on how the
    paths were produced.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        return Estimate(0.0, float("nan"))
    mean = float(np.mean(x))
    b = min(blocks, n)
    if b < 2:
        return Estimate(mean, float("nan"))
    means = np.array([blk.mean() for blk in np.array_split(x, b)])
    return Estimate(mean, float(np.std(means, ddof=1) / np.sqrt(b)))
