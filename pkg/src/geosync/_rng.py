import numpy as np


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and a stream path.

    Each consumer asks for its own stream, so adding draws in one place
    never shifts the numbers another place sees.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))
