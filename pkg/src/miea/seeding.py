import zlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of ints/floats/strings.

    Strings go through crc32 rather than ``hash`` so results do not depend on
    PYTHONHASHSEED.
    """
    words = []
    for p in parts:
        if isinstance(p, (int, np.integer)):
            words.append(int(p) & 0xFFFFFFFF)
            words.append((int(p) >> 32) & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(p).encode()))
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1] & 0x7FFFFFFF) << 32)
