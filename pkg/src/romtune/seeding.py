"""Deterministic seed derivation.

Every random draw in the package flows from a single integer through
``derive_seed``, so any run is reproducible and independent sub-tasks
(rollouts, oracle samples, training seeds) can be derived by index without
collisions, regardless of execution order.

The mixing function is splitmix64 (Steele, Lea & Flood 2014): the root seed
is mixed once, then each token is folded in and mixed again.  Integer tokens
are folded directly; string tokens are folded byte by byte.  The result is a
uniform-looking 64-bit integer suitable for ``numpy.random.default_rng``.
"""

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 mixing round on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    x ^= x >> 31
    return x


def derive_seed(root: int, *tokens) -> int:
    """Derive a child seed from ``root`` and a sequence of int/str tokens."""
    state = splitmix64(int(root) & _MASK)
    for token in tokens:
        if isinstance(token, str):
            for byte in token.encode("utf-8"):
                state = splitmix64(state ^ byte)
        elif isinstance(token, (int,)):
            state = splitmix64(state ^ (int(token) & _MASK))
        else:
            raise TypeError(f"seed tokens must be int or str, got {type(token)!r}")
    return state
