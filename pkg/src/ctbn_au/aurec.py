"""
Speech-driven facial action unit recognition on top of the CTBN engine.

The seven speech-related AUs are fused into one product-coded node whose
state index is a 7-bit number, AU18 in the most significant bit and AU27 in
the least (state 1 = AU27 alone, state 10 = AU24+AU26).  A factorized variant
keeps one binary node per AU instead.

Node names used throughout: ``Phone`` (true phoneme), ``AU`` (fused AUs) or
``AU18`` .. ``AU27`` (factorized), and ``O_p`` (recognized phoneme, the
evidence).
"""
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LengthMismatch,
    ModelError,
    NegativeDuration,
    OutOfRange,
    OverlappingSegments,
    ParseError,
    UnknownAuName,
    UnknownPhoneme,
)
from .inference import GibbsConfig, exact_posterior, gibbs_posterior, map_decision, marginalize
from .model import CtbnModel, NodeSpec
from .textgrid import parse_textgrid
from .trajectory import DEFAULT_FRAME_RATE, Trajectory, frame_midpoints, n_frames, path_from_frames

AU_NAMES = ("AU18", "AU20", "AU22", "AU24", "AU25", "AU26", "AU27")
PHONE, AU, OBS = "Phone", "AU", "O_p"

SILENCE = "SIL"
CMUDICT_PHONEMES = (
    "AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K "
    "L M N NG OW OY P R S SH T TH UH UW V W Y Z ZH"
).split()
# Phonemes of the 12 recorded words (beige, chaps, cowboy, Eurasian, gooey,
# hue, joined, more, patch, queen, she, waters).
DATASET_PHONEMES = (
    "AE AH AO AW B CH D ER EY G HH IY JH K M N OY P R S SH T UH UW W Y Z ZH"
).split()


def _fmt(x):
    return format(float(x), ".9g")


# --------------------------------------------------------------------------
# AU codec
# --------------------------------------------------------------------------


def _au_name(a, aus):
    name = f"AU{a}" if isinstance(a, (int, np.integer)) else str(a).upper()
    if name not in aus:
        raise UnknownAuName(f"unknown AU {a!r}; expected one of {', '.join(aus)}")
    return name


class AuCodec:
    """Bit codec over an ordered AU list; the first AU is the most significant bit."""

    def __init__(self, aus=AU_NAMES):
        self.aus = tuple(_au_name(a, [str(x).upper() for x in aus]) for a in aus)
        if len(set(self.aus)) != len(self.aus):
            raise ModelError("repeated AU in codec")
        self.n_states = 1 << len(self.aus)

    def weight(self, au):
        return 1 << (len(self.aus) - 1 - self.aus.index(_au_name(au, self.aus)))

    def encode(self, active):
        """``active``: iterable of AU names/numbers, or a 0/1 flag vector in AU order."""
        active = list(active)
        if len(active) == len(self.aus) and all(isinstance(a, (bool, np.bool_)) or a in (0, 1) for a in active) \
                and not all(isinstance(a, str) for a in active):
            flags = [int(bool(a)) for a in active]
        else:
            names = {_au_name(a, self.aus) for a in active}
            flags = [int(a in names) for a in self.aus]
        return int(sum(f << (len(self.aus) - 1 - i) for i, f in enumerate(flags)))

    def encode_flags(self, flags):
        """Vectorized: ``(..., n_aus)`` 0/1 array to state indices."""
        f = np.asarray(flags, dtype=np.int64)
        if f.shape[-1] != len(self.aus):
            raise LengthMismatch(f"expected {len(self.aus)} AU flags, got {f.shape[-1]}")
        w = 1 << np.arange(len(self.aus) - 1, -1, -1)
        return f @ w

    def decode(self, index):
        if not 0 <= int(index) < self.n_states:
            raise OutOfRange(f"AU state {index} out of range 0..{self.n_states - 1}")
        return frozenset(a for i, a in enumerate(self.aus) if int(index) >> (len(self.aus) - 1 - i) & 1)

    def decode_flags(self, index):
        idx = np.asarray(index, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.n_states):
            raise OutOfRange("AU state out of range")
        shifts = np.arange(len(self.aus) - 1, -1, -1)
        return (idx[..., None] >> shifts) & 1

    def label(self, index):
        on = [a for a in self.aus if a in self.decode(index)]
        return "+".join(on) if on else "none"

    def labels(self):
        return tuple(self.label(i) for i in range(self.n_states))


_DEFAULT_CODEC = AuCodec()


def encode_au_state(active, codec=_DEFAULT_CODEC):
    """Index 0..127 of a set of active AUs (e.g. ``{24, 26} -> 10``)."""
    return codec.encode(active)


def decode_au_state(index, codec=_DEFAULT_CODEC):
    return codec.decode(index)


# --------------------------------------------------------------------------
# Alphabet and topologies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PhonemeAlphabet:
    """Ordered phoneme labels; silence is state 0."""

    phonemes: tuple
    silence: str = SILENCE

    def __post_init__(self):
        ph = tuple(self.phonemes)
        if self.silence in ph:
            raise ModelError("silence label must not be listed among the phonemes")
        if len(set(ph)) != len(ph):
            raise ModelError("phoneme labels must be unique")
        object.__setattr__(self, "phonemes", ph)

    @classmethod
    def dataset(cls):
        return cls(tuple(DATASET_PHONEMES))

    @classmethod
    def cmudict(cls):
        return cls(tuple(CMUDICT_PHONEMES))

    @property
    def labels(self):
        return (self.silence,) + self.phonemes

    def __len__(self):
        return len(self.phonemes) + 1

    def index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownPhoneme(f"phoneme {label!r} is not in the alphabet") from None


def build_joint_model(alphabet=None, aus=AU_NAMES):
    """Structure of the three-node model: AU <-> Phone, Phone -> O_p (no CIMs)."""
    alphabet = PhonemeAlphabet.dataset() if alphabet is None else alphabet
    codec = AuCodec(aus)
    nodes = [
        NodeSpec(PHONE, len(alphabet), alphabet.labels),
        NodeSpec(AU, codec.n_states, codec.labels(), components=codec.aus),
        NodeSpec(OBS, len(alphabet), alphabet.labels),
    ]
    return CtbnModel(nodes, [[AU], [PHONE], [PHONE]])


def build_factorized_model(alphabet=None, au_links=(), aus=AU_NAMES):
    """Structure with one binary node per AU.

    Every AU node has Phone as its first parent, then the sources of any
    ``au_links`` (``(source, target)`` pairs, cycles allowed) that point to
    it, in AU order.
    """
    alphabet = PhonemeAlphabet.dataset() if alphabet is None else alphabet
    aus = AuCodec(aus).aus
    extra = {a: set() for a in aus}
    for src, dst in au_links:
        s, d = _au_name(src, aus), _au_name(dst, aus)
        if s == d:
            raise ModelError(f"self link on {s}")
        extra[d].add(s)
    nodes = [NodeSpec(PHONE, len(alphabet), alphabet.labels)]
    nodes += [NodeSpec(a, 2, ("0", "1")) for a in aus]
    nodes.append(NodeSpec(OBS, len(alphabet), alphabet.labels))
    parents = [[]]
    parents += [[PHONE] + [b for b in aus if b in extra[a]] for a in aus]
    parents.append([PHONE])
    return CtbnModel(nodes, parents)


def au_nodes(model):
    """``(kind, aus)`` where kind is ``"joint"`` or ``"factorized"``."""
    for n in model.nodes:
        if n.components is not None:
            return "joint", n.components
    aus = tuple(n.name for n in model.nodes if re.fullmatch(r"AU\d+", n.name) and n.cardinality == 2)
    if not aus:
        raise ModelError("model has neither a product-coded AU node nor binary AU nodes")
    return "factorized", aus


def alphabet_of(model):
    labels = model.node(OBS).state_labels
    return PhonemeAlphabet(tuple(labels[1:]), labels[0])


# --------------------------------------------------------------------------
# Segment files
# --------------------------------------------------------------------------


@dataclass
class SegmentFile:
    utterance: str
    horizon: float
    segments: list = field(default_factory=list)


def format_segment_file(sf):
    lines = [f"utterance,{sf.utterance}", f"horizon,{_fmt(sf.horizon)}"]
    lines += [f"{lab},{_fmt(a)},{_fmt(b)}" for lab, a, b in sf.segments]
    return "\n".join(lines) + "\n"


def parse_segment_file(text):
    """Parse ``phoneme,start,end`` lines after ``utterance,<id>`` and ``horizon,<s>`` headers."""
    header = {}
    segs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) == 2 and parts[0] in ("utterance", "horizon") and not segs:
            header[parts[0]] = parts[1]
            continue
        if len(parts) != 3:
            raise ParseError(f"expected 'phoneme,start,end', got {line!r}", line=lineno)
        try:
            a, b = float(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"bad time in {line!r}", line=lineno) from None
        segs.append((parts[0], a, b))
    if "horizon" not in header:
        raise ParseError("missing 'horizon' header", line=1)
    try:
        horizon = float(header["horizon"])
    except ValueError:
        raise ParseError("bad horizon", line=1) from None
    return SegmentFile(header.get("utterance", ""), horizon, segs)


def segments_to_path(segments, alphabet, horizon):
    """Gap-filled ``(states, starts)`` over ``[0, horizon)``; gaps become silence.

    Returns the path and the number of silence intervals inserted.
    """
    sil = 0
    states, starts = [], []
    t = 0.0
    filled = 0

    def push(s, a):
        if states and states[-1] == s:
            return
        states.append(s)
        starts.append(a)

    for lab, a, b in segments:
        idx = alphabet.index(lab)
        if b < a:
            raise NegativeDuration(f"segment {lab!r} ends before it starts ({a} > {b})")
        if a < 0:
            raise NegativeDuration(f"segment {lab!r} starts before 0")
        if a < t:
            raise OverlappingSegments(f"segment {lab!r} at {a} overlaps the previous one ending at {t}")
        if b == a:
            continue
        if a > t:
            push(sil, t)
            filled += 1
        push(idx, a)
        t = b
    if t > horizon:
        raise OverlappingSegments(f"segments run to {t}, past the horizon {horizon}")
    if t < horizon:
        push(sil, t)
        filled += 1
    return (np.array(states, np.int64), np.array(starts, float)), filled


def load_segments(segment_file, alphabet, variable=OBS):
    """Evidence over ``variable`` from a segment file (or its text)."""
    sf = parse_segment_file(segment_file) if isinstance(segment_file, str) else segment_file
    path, _ = segments_to_path(sf.segments, alphabet, sf.horizon)
    return Trajectory(sf.horizon, {variable: path})


def textgrid_to_segments(text, tier="phones", utterance="", silence_marks=("", "sil", "sp", "SIL", "SP")):
    """Segment file from one interval tier; silence marks are dropped, stress digits stripped."""
    xmin, xmax, tiers = parse_textgrid(text)
    if tier not in tiers:
        raise ParseError(f"TextGrid has no interval tier {tier!r} (tiers: {', '.join(tiers) or 'none'})")
    segs = []
    for a, b, mark in tiers[tier]:
        mark = mark.strip()
        if mark in silence_marks:
            continue
        segs.append((re.sub(r"\d+$", "", mark).upper(), a - xmin, b - xmin))
    return SegmentFile(utterance, xmax - xmin, segs)


# --------------------------------------------------------------------------
# AU label files
# --------------------------------------------------------------------------


@dataclass
class AuLabels:
    """Frame-by-frame binary AU labels, shape ``(n_frames, n_aus)``."""

    utterance: str
    frame_rate: float
    frames: np.ndarray
    aus: tuple = AU_NAMES

    def track(self, au):
        return self.frames[:, self.aus.index(au)]


def format_au_labels(lab):
    lines = [
        f"utterance,{lab.utterance}",
        f"frame_rate,{_fmt(lab.frame_rate)}",
        f"n_frames,{len(lab.frames)}",
    ]
    if tuple(lab.aus) != AU_NAMES:
        lines.append("aus," + " ".join(lab.aus))
    lines += ["".join(str(int(v)) for v in row) for row in lab.frames]
    return "\n".join(lines) + "\n"


def parse_au_labels(text):
    """Header (``frame_rate``, ``n_frames``, optional ``aus``) then one digit string per frame."""
    header = {}
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "," in line:
            k, v = line.split(",", 1)
            header[k.strip()] = v.strip()
            continue
        if not re.fullmatch(r"[01]+", line):
            raise ParseError(f"frame line must be binary digits, got {line!r}", line=lineno)
        rows.append([int(c) for c in line])
    for key in ("frame_rate", "n_frames"):
        if key not in header:
            raise ParseError(f"missing {key!r} header", line=1)
    aus = tuple(header["aus"].split()) if "aus" in header else AU_NAMES
    n = int(header["n_frames"])
    if len(rows) != n:
        raise LengthMismatch(f"header says {n} frames, found {len(rows)}")
    frames = np.array(rows, dtype=np.int64).reshape(n, -1) if n else np.zeros((0, len(aus)), np.int64)
    if frames.shape[1] != len(aus):
        raise LengthMismatch(f"expected {len(aus)} digits per frame, got {frames.shape[1]}")
    return AuLabels(header.get("utterance", ""), float(header["frame_rate"]), frames, aus)


# --------------------------------------------------------------------------
# Training data
# --------------------------------------------------------------------------


def _stagger_binary(frames, frame_rate):
    """Binary per-AU paths; simultaneous flips are spread by 1/1000 frame, lowest AU first.

    Returns the paths and the number of frame boundaries where more than one
    AU flipped.
    """
    eps = 1.0 / (frame_rate * 1000.0)
    n, k = frames.shape
    paths = []
    flips = np.zeros((max(n - 1, 0), k), dtype=bool)
    if n > 1:
        flips = frames[1:] != frames[:-1]
    order = np.cumsum(flips, axis=1) - 1
    multi = int(np.sum(flips.sum(axis=1) > 1))
    for j in range(k):
        st, sa = path_from_frames(frames[:, j], frame_rate)
        if sa.size > 1:
            fidx = np.rint(sa[1:] * frame_rate).astype(np.int64)
            sa = sa.copy()
            sa[1:] = sa[1:] + order[fidx - 1, j] * eps
        paths.append((st, sa))
    return paths, multi


def fused_to_binary(trajectory, codec=_DEFAULT_CODEC, variable=AU, stagger=None):
    """Split the fused AU path into one binary path per AU.

    Multi-AU flips cannot be represented without simultaneity; each one is
    staggered by ``stagger`` seconds (lowest AU first) and counted.  Returns
    ``(trajectory, n_multi_flips)``.
    """
    states, starts = trajectory.path(variable)
    flags = codec.decode_flags(states)
    changes = np.abs(np.diff(flags, axis=0))
    multi = int(np.sum(changes.sum(axis=1) > 1))
    if stagger is None:
        gaps = np.diff(np.append(starts, trajectory.horizon))
        stagger = float(gaps.min()) / (2 * len(codec.aus)) if gaps.size else 0.0
        stagger = min(stagger, 1e-6)
    rank = np.cumsum(changes, axis=1) - 1
    paths = {}
    for j, au in enumerate(codec.aus):
        f = flags[:, j]
        keep = np.ones(f.size, dtype=bool)
        keep[1:] = f[1:] != f[:-1]
        idx = np.flatnonzero(keep)
        sa = starts[idx].copy()
        if idx.size > 1:
            sa[1:] = sa[1:] + rank[idx[1:] - 1, j] * stagger
        paths[au] = (f[idx], sa)
    others = {v: trajectory.path(v) for v in trajectory.variables if v != variable}
    return Trajectory(trajectory.horizon, {**others, **paths}), multi


def binary_to_fused(trajectory, codec=_DEFAULT_CODEC, variable=AU):
    """Inverse of :func:`fused_to_binary` (up to the staggering offsets)."""
    times = np.unique(np.concatenate([trajectory.starts(a) for a in codec.aus]))
    flags = np.stack([trajectory.state_at(a, times) for a in codec.aus], axis=-1)
    fused = codec.encode_flags(flags)
    others = {v: trajectory.path(v) for v in trajectory.variables if v not in codec.aus}
    out = Trajectory.from_samples(trajectory.horizon, {variable: (fused, times)})
    return Trajectory(trajectory.horizon, {**others, variable: out.path(variable)})


def build_training_trajectories(
    phone_segments,
    au_labels,
    alphabet,
    recognized_segments=None,
    kind="joint",
    aus=None,
):
    """Complete training trajectories, one per utterance.

    Parameters
    ----------
    phone_segments : list of SegmentFile
        Ground-truth phoneme segments (gaps become silence).
    au_labels : list of AuLabels
        Frame labels; frame ``k`` covers ``[k/r, (k+1)/r)``.  The frame count
        must equal ``ceil(horizon * r)``.
    recognized_segments : list of SegmentFile, optional
        Recognizer output used for ``O_p``; the ground truth is copied when
        omitted.
    kind : {"joint", "factorized"}
    """
    if len(phone_segments) != len(au_labels):
        raise LengthMismatch("need one AU label track per segment file")
    if recognized_segments is not None and len(recognized_segments) != len(phone_segments):
        raise LengthMismatch("need one recognized segment file per utterance")
    out = []
    for i, (sf, lab) in enumerate(zip(phone_segments, au_labels)):
        T = sf.horizon
        codec = AuCodec(aus if aus is not None else lab.aus)
        frames = lab.frames[:, [lab.aus.index(a) for a in codec.aus]]
        if len(frames) != n_frames(T, lab.frame_rate):
            raise LengthMismatch(
                f"{sf.utterance or i}: {len(frames)} AU frames but horizon {T} s at "
                f"{lab.frame_rate} fps needs {n_frames(T, lab.frame_rate)}"
            )
        phone, _ = segments_to_path(sf.segments, alphabet, T)
        rec = recognized_segments[i] if recognized_segments is not None else sf
        obs, _ = segments_to_path(rec.segments, alphabet, T)
        paths = {PHONE: phone}
        if kind == "joint":
            paths[AU] = path_from_frames(codec.encode_flags(frames), lab.frame_rate)
        elif kind == "factorized":
            staggered, _ = _stagger_binary(frames, lab.frame_rate)
            for a, p in zip(codec.aus, staggered):
                paths[a] = p
        else:
            raise ValueError(f"unknown model kind {kind!r}")
        paths[OBS] = obs
        out.append(Trajectory(T, paths))
    return out


# --------------------------------------------------------------------------
# Recognition
# --------------------------------------------------------------------------


@dataclass
class Recognition:
    """Per-AU frame probabilities and decisions for one utterance."""

    frame_rate: float
    probabilities: dict
    decisions: dict
    track: object = field(repr=False)

    @property
    def aus(self):
        return tuple(self.probabilities)

    def labels(self, utterance=""):
        frames = np.stack([self.decisions[a] for a in self.aus], axis=1) if self.aus else np.zeros((0, 0))
        return AuLabels(utterance, self.frame_rate, frames, self.aus)


def recognize(model, evidence, frame_rate=DEFAULT_FRAME_RATE, threshold=0.5, backend="gibbs", gibbs=None):
    """Posterior AU probabilities at every frame midpoint, plus thresholded decisions."""
    kind, aus = au_nodes(model)
    times = frame_midpoints(evidence.horizon, frame_rate)
    times = times[times < evidence.horizon]
    if backend == "exact":
        track = exact_posterior(model, evidence, times)
    elif backend == "gibbs":
        track = gibbs_posterior(model, evidence, gibbs or GibbsConfig(), times)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    nf = n_frames(evidence.horizon, frame_rate)
    probs = {}
    for a in aus:
        p = marginalize(track, AU, a) if kind == "joint" else track.marginal(a)[:, 1]
        if p.size < nf:
            p = np.concatenate([p, np.repeat(p[-1:], nf - p.size)])
        probs[a] = np.clip(p, 0.0, 1.0)
    decisions = {a: map_decision(p, threshold) for a, p in probs.items()}
    return Recognition(float(frame_rate), probs, decisions, track)
