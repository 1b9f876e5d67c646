"""Counter-based randomness.

Every infection attempt gets its uniform draw from a stateless hash of
``(master_seed, trial_id, event_key)``.  Because the draw does not depend on
the success probability, the processing order, or on which other events are
present in the stream, two runs that share the seed and trial id see the same
coin for the same opportunity.  That is what makes the monotonicity checks in
the engine exact instead of statistical.

The mixer is the splitmix64 finalizer, applied in three keyed rounds.
"""
import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# draw domains, so infection and patch coins on the same event are independent
INFECTION = 0x1F3A
PATCH = 0x7C21


def _mix_int(z):
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z):
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def trial_key(master_seed, trial_id, domain=INFECTION):
    """64-bit key for one trial in one draw domain."""
    h = _mix_int(int(master_seed) & _MASK)
    h = _mix_int(h ^ (int(trial_id) & _MASK))
    return _mix_int(h ^ domain)


def uniform(master_seed, trial_id, event_key, domain=INFECTION):
    """Scalar draw in [0, 1) for a single event."""
    z = _mix_int(trial_key(master_seed, trial_id, domain) ^ _mix_int(int(event_key) & _MASK))
    return (z >> 11) * 2.0**-53


def uniforms(master_seed, trial_id, event_keys, domain=INFECTION):
    """Vectorised :func:`uniform` over an array of event keys."""
    keys = np.asarray(event_keys, dtype=np.uint64)
    k = np.uint64(trial_key(master_seed, trial_id, domain))
    with np.errstate(over="ignore"):
        z = _mix_array(k ^ _mix_array(keys))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def trial_rng(master_seed, trial_id, purpose):
    """numpy Generator for per-trial choices (random seeds, targets, traces)."""
    return np.random.default_rng([int(master_seed), int(trial_id), int(purpose)])
