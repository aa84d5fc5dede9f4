"""
A small hand-specified speech/AU model with known parameters.

Four phonemes (B, AA, IY, M) plus silence, three AUs (AU24 lip presser,
AU25 lips part, AU26 jaw drop).  The dynamics follow the bilabial stop
pattern: the lips press and the jaw drops (AU24+AU26) while still silent,
the /B/ starts only from that configuration, and during /B/ the press is
released into AU25+AU26 before the vowel may begin.  /M/ is preceded by a
plain lip press.  The recognized-phoneme node ``O_p`` tracks the true phone
with a short lag and occasional misdetections.
"""
import numpy as np

from .aurec import AU, OBS, PHONE, AuCodec, AuLabels, PhonemeAlphabet, SegmentFile, build_joint_model
from .model import InitialDistribution
from .trajectory import discretize, sample_trajectory

ALPHABET = PhonemeAlphabet(("B", "AA", "IY", "M"))
AUS = ("AU24", "AU25", "AU26")
CODEC = AuCodec(AUS)
SIL, B, AA, IY, M = range(5)
FOLLOW = 40.0  # AUs settle into the current phone's target within ~25 ms

NONE = CODEC.encode([])
PRESS_DROP = CODEC.encode(["AU24", "AU26"])  # stop closure
PART_DROP = CODEC.encode(["AU25", "AU26"])  # release / open vowel
PART = CODEC.encode(["AU25"])  # spread vowel
PRESS = CODEC.encode(["AU24"])  # nasal closure


def _cim(m, rates):
    q = np.zeros((m, m))
    for (i, j), r in rates.items():
        q[i, j] += r
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def _au_cim(phone):
    target = {SIL: NONE, B: PART_DROP, AA: PART_DROP, IY: PART, M: PRESS}[phone]
    rates = {(s, target): FOLLOW for s in range(CODEC.n_states) if s != target}
    if phone == SIL:
        rates[(NONE, PRESS_DROP)] = 1.5  # anticipate a stop
        rates[(PRESS_DROP, NONE)] = 0.3  # an aborted closure is rare
    elif phone == B:
        rates[(PRESS_DROP, PART_DROP)] = 8.0  # the release
    elif phone in (AA, IY):
        rates[(target, PRESS)] = 2.5  # close the lips for a following /M/
    return _cim(CODEC.n_states, rates)


def _phone_cim(au):
    opened = au in (PART_DROP, PART)
    rates = {
        (B, AA): 15.0 if opened else 0.2,
        (B, IY): 15.0 if opened else 0.2,
        (AA, SIL): 2.5,
        (IY, SIL): 2.5,
        (M, SIL): 6.0,
    }
    if au == PRESS_DROP:
        rates[(SIL, B)] = 40.0
    if au == PRESS:
        rates[(AA, M)] = 40.0
        rates[(IY, M)] = 40.0
    return _cim(len(ALPHABET), rates)


def _obs_cim(phone, lock=60.0, noise=0.4):
    """Recognized phone: snaps to the true one at ``lock``; wanders off at ``noise``."""
    m = len(ALPHABET)
    rates = {}
    for s in range(m):
        for t in range(m):
            if t == s:
                continue
            if s != phone:
                rates[(s, t)] = lock if t == phone else noise / 4
            else:
                rates[(s, t)] = noise
    return _cim(m, rates)


def true_model(noise=0.4):
    """The ground-truth generator (Phone, AU, O_p)."""
    structure = build_joint_model(ALPHABET, AUS)
    cims = [
        np.stack([_phone_cim(a) for a in range(CODEC.n_states)]),
        np.stack([_au_cim(p) for p in range(len(ALPHABET))]),
        np.stack([_obs_cim(p, noise=noise) for p in range(len(ALPHABET))]),
    ]
    initial = InitialDistribution.point_mass(structure.cardinalities, [SIL, NONE, SIL])
    return structure.with_cims(cims, initial)


def generate_corpus(n, horizon=2.0, seed=0, model=None):
    """``n`` complete trajectories sampled from :func:`true_model`."""
    model = true_model() if model is None else model
    rng = np.random.default_rng(seed)
    return [sample_trajectory(model, horizon, rng) for _ in range(n)]


def to_segment_file(traj, variable=OBS, utterance=""):
    """Non-silence segments of one phone variable, as a segment file."""
    segs = [(ALPHABET.labels[s], a, b) for s, a, b in traj.segments(variable) if s != SIL]
    return SegmentFile(utterance, traj.horizon, segs)


def au_labels(traj, frame_rate, utterance=""):
    """Frame-level AU labels of a sampled trajectory (midpoint rule)."""
    flags = CODEC.decode_flags(discretize(traj, AU, frame_rate).states)
    return AuLabels(utterance, frame_rate, flags, AUS)


def stop_release_order(recognition, traj, evidence, window=0.3, slack=2):
    """Check the lip-press / lip-part ordering around the first complete /B/.

    Looks at the first true /B/ whose release (AU25 onset) falls inside the
    utterance.  Within ``window`` seconds either side of it, the recognized
    AU24 must switch on no later than one frame after the first recognized
    /B/ onset overlapping that stop, AU25 must switch on after AU24, and
    AU24 must switch off within ``slack`` frames of AU25 switching on.

    Returns ``None`` when the utterance has no complete stop, otherwise a bool.
    A stop the recognizer never reports counts as a failure.
    """
    r = recognition.frame_rate
    truth25 = au_labels(traj, r).track("AU25")
    for s, a, b in traj.segments(PHONE):
        if s != B or not truth25[int(a * r):].any():
            continue
        heard = [x for t, x, y in evidence.segments(OBS) if t == B and y > a and x < b]
        if not heard:
            return False
        lo, hi = max(0, int((a - window) * r)), int((b + window) * r) + 1
        on24 = recognition.decisions["AU24"][lo:hi].astype(bool)
        on25 = recognition.decisions["AU25"][lo:hi].astype(bool)
        up = np.flatnonzero(on24)
        if not up.size:
            return False
        rise24 = up[0]
        down = np.flatnonzero(~on24[rise24:])
        up25 = np.flatnonzero(on25[rise24:])
        if not down.size or not up25.size:
            return False
        fall24, rise25 = rise24 + down[0], rise24 + up25[0]
        onset = int(heard[0] * r) - lo
        return bool(rise24 <= onset + 1 and rise25 > rise24 and abs(fall24 - rise25) <= slack)
    return None


__all__ = ["ALPHABET", "AUS", "CODEC", "AU", "OBS", "PHONE", "true_model", "generate_corpus", "to_segment_file", "au_labels", "stop_release_order"]
