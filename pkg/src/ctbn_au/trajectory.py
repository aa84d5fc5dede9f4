"""
Piecewise-constant state histories over continuous time.

Each variable's path is stored as two parallel arrays: ``starts`` (segment
start times, the first always 0) and ``states``.  Segment ``i`` covers
``[starts[i], starts[i+1])`` and the last one ends at the horizon.  Paths are
right-continuous: at a change time the variable already holds its new state.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import MalformedTrajectory, UnknownVariable

DEFAULT_FRAME_RATE = 59.94


def _fmt(x):
    return format(float(x), ".9g")


class Trajectory:
    """Immutable multi-variable trajectory on ``[0, horizon)``.

    Parameters
    ----------
    horizon : float
    paths : dict
        ``name -> (states, starts)``.  Consecutive states must differ and
        starts must increase strictly from 0 and stay below the horizon.
    """

    def __init__(self, horizon, paths):
        horizon = float(horizon)
        if not horizon >= 0 or not math.isfinite(horizon):
            raise MalformedTrajectory(f"bad horizon {horizon!r}")
        self.horizon = horizon
        self._paths = {}
        for name, (states, starts) in paths.items():
            states = np.array(states, dtype=np.int64).ravel()
            starts = np.array(starts, dtype=float).ravel()
            if states.shape != starts.shape:
                raise MalformedTrajectory(f"{name}: states and starts differ in length")
            if horizon == 0:
                if states.size:
                    raise MalformedTrajectory(f"{name}: zero horizon cannot hold segments")
            else:
                if states.size == 0 or starts[0] != 0.0:
                    raise MalformedTrajectory(f"{name}: path must start at time 0")
                if np.any(np.diff(starts) <= 0) or starts[-1] >= horizon:
                    raise MalformedTrajectory(f"{name}: segment starts must increase inside [0, horizon)")
                if np.any(states[1:] == states[:-1]):
                    raise MalformedTrajectory(f"{name}: consecutive segments share a state")
                if np.any(states < 0):
                    raise MalformedTrajectory(f"{name}: negative state index")
            states.setflags(write=False)
            starts.setflags(write=False)
            self._paths[name] = (states, starts)

    @classmethod
    def from_segments(cls, horizon, segments):
        """Build from ``{name: [(state, start, end), ...]}``; contiguity is checked."""
        paths = {}
        for name, segs in segments.items():
            segs = list(segs)
            prev_end = 0.0
            for state, start, end in segs:
                if start != prev_end:
                    raise MalformedTrajectory(f"{name}: gap or overlap at t={start!r}")
                if not end > start:
                    raise MalformedTrajectory(f"{name}: empty segment at t={start!r}")
                prev_end = end
            if segs and prev_end != horizon:
                raise MalformedTrajectory(f"{name}: segments end at {prev_end!r}, horizon is {horizon!r}")
            paths[name] = ([s[0] for s in segs], [s[1] for s in segs])
        return cls(horizon, paths)

    @classmethod
    def from_samples(cls, horizon, paths):
        """Like the constructor, but consecutive equal states are merged."""
        merged = {}
        for name, (states, starts) in paths.items():
            states = np.asarray(states, dtype=np.int64)
            starts = np.asarray(starts, dtype=float)
            keep = np.ones(states.size, dtype=bool)
            keep[1:] = states[1:] != states[:-1]
            merged[name] = (states[keep], starts[keep])
        return cls(horizon, merged)

    @property
    def variables(self):
        return tuple(self._paths)

    def __contains__(self, name):
        return name in self._paths

    def path(self, name):
        try:
            return self._paths[name]
        except KeyError:
            raise UnknownVariable(f"trajectory has no variable {name!r}") from None

    def states(self, name):
        return self.path(name)[0]

    def starts(self, name):
        return self.path(name)[1]

    def ends(self, name):
        st = self.starts(name)
        return np.append(st[1:], self.horizon)

    def segments(self, name):
        states, starts = self.path(name)
        ends = self.ends(name)
        return [(int(s), float(a), float(b)) for s, a, b in zip(states, starts, ends)]

    def change_times(self, name):
        return self.starts(name)[1:]

    def n_transitions(self, name):
        return max(len(self.states(name)) - 1, 0)

    def state_at(self, name, t):
        """State(s) at time(s) ``t``; times at or past the horizon read the last segment."""
        states, starts = self.path(name)
        idx = np.searchsorted(starts, np.asarray(t, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, len(states) - 1)
        out = states[idx]
        return int(out) if np.ndim(out) == 0 else out

    def restrict(self, variables):
        return restrict(self, variables)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if self.horizon != other.horizon or set(self._paths) != set(other._paths):
            return False
        return all(
            np.array_equal(self._paths[k][0], other._paths[k][0])
            and np.array_equal(self._paths[k][1], other._paths[k][1])
            for k in self._paths
        )

    def __repr__(self):
        counts = ", ".join(f"{k}:{len(v[0])}" for k, v in self._paths.items())
        return f"Trajectory(horizon={self.horizon}, segments={{{counts}}})"


# Evidence is a fully observed trajectory over a subset of model nodes.
Evidence = Trajectory


def restrict(trajectory, variables):
    """Project onto ``variables`` (segments preserved exactly)."""
    variables = list(variables)
    for v in variables:
        trajectory.path(v)
    order = [v for v in trajectory.variables if v in set(variables)]
    return Trajectory(trajectory.horizon, {v: trajectory.path(v) for v in order})


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_trajectory(model, horizon, rng_seed=None, initial_state=None):
    """Forward-sample a full trajectory by racing exponential clocks.

    Every node holds a candidate jump time drawn from its current exit rate.
    The earliest fires; the fired node and its children then redraw from
    their new rates (memorylessness makes this exact).  Ties go to the lowest
    node index.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    model._require_cims()
    rng = _rng(rng_seed)
    K = len(model.nodes)
    state = model.initial.sample(rng) if initial_state is None else np.array(initial_state, dtype=np.int64)
    cims = model.cims
    ctx_strides = [model.context_codec(k).strides for k in range(K)]

    def row(k):
        c = 0
        for p, st in zip(model.parents[k], ctx_strides[k]):
            c += int(state[p]) * st
        return cims[k][c, state[k]]

    def draw(k, now):
        q = -row(k)[state[k]]
        return now + rng.exponential(1.0 / q) if q > 0 else math.inf

    starts = [[0.0] for _ in range(K)]
    states = [[int(s)] for s in state]
    cand = np.array([draw(k, 0.0) for k in range(K)])
    while True:
        k = int(np.argmin(cand))
        now = cand[k]
        if not now < horizon:
            break
        r = row(k).copy()
        x = state[k]
        r[x] = 0.0
        c = np.cumsum(r)
        dest = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
        dest = min(dest, len(r) - 1)
        while r[dest] == 0:
            dest -= 1
        state[k] = dest
        starts[k].append(now)
        states[k].append(dest)
        for j in (k, *model.children[k]):
            cand[j] = draw(j, now)
    return Trajectory(horizon, {n.name: (states[k], starts[k]) for k, n in enumerate(model.nodes)})


# --------------------------------------------------------------------------
# Frames
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameSequence:
    """Per-frame states of one variable."""

    variable: str
    frame_rate: float
    states: np.ndarray

    def __len__(self):
        return len(self.states)


def n_frames(horizon, frame_rate):
    return int(math.ceil(horizon * frame_rate - 1e-9)) if horizon > 0 else 0


def frame_midpoints(horizon, frame_rate):
    return (np.arange(n_frames(horizon, frame_rate)) + 0.5) / frame_rate


def discretize(trajectory, variable, frame_rate=DEFAULT_FRAME_RATE):
    """Frame ``k`` takes the state at its midpoint ``(k + 0.5) / frame_rate``."""
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    trajectory.path(variable)
    t = frame_midpoints(trajectory.horizon, frame_rate)
    states = trajectory.state_at(variable, t) if t.size else np.zeros(0, np.int64)
    return FrameSequence(variable, float(frame_rate), np.asarray(states, dtype=np.int64))


def path_from_frames(frame_states, frame_rate):
    """Run-length encode frame labels; frame ``k`` occupies ``[k/r, (k+1)/r)``."""
    s = np.asarray(frame_states, dtype=np.int64)
    if s.size == 0:
        return s, np.zeros(0)
    keep = np.ones(s.size, dtype=bool)
    keep[1:] = s[1:] != s[:-1]
    idx = np.flatnonzero(keep)
    return s[idx], idx / float(frame_rate)


# --------------------------------------------------------------------------
# Text format
# --------------------------------------------------------------------------


def _labels_for(nodes):
    if hasattr(nodes, "nodes"):
        nodes = nodes.nodes
    return {n.name: n.state_labels for n in nodes}


def format_trajectory(trajectory, nodes):
    """Serialize as ``variable,state_label,start,end`` lines after a horizon header.

    ``nodes`` (a model or NodeSpec list) supplies the state labels.
    """
    labels = _labels_for(nodes)
    lines = [f"horizon,{_fmt(trajectory.horizon)}"]
    for name in sorted(trajectory.variables):
        if name not in labels:
            raise UnknownVariable(f"no labels for variable {name!r}")
        for s, a, b in trajectory.segments(name):
            lines.append(f"{name},{labels[name][s]},{_fmt(a)},{_fmt(b)}")
    return "\n".join(lines) + "\n"


def parse_trajectory(text, nodes):
    """Inverse of :func:`format_trajectory`; rejects gaps, overlaps and unknown labels."""
    labels = _labels_for(nodes)
    lookup = {name: {lab: i for i, lab in enumerate(labs)} for name, labs in labels.items()}
    horizon = None
    segs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if horizon is None:
            if len(parts) != 2 or parts[0] != "horizon":
                raise MalformedTrajectory("first record must be 'horizon,<seconds>'", line=lineno)
            horizon = _float(parts[1], lineno)
            continue
        if len(parts) != 4:
            raise MalformedTrajectory(f"expected 4 fields, got {len(parts)}", line=lineno)
        name, lab = parts[0], parts[1]
        if name not in lookup:
            raise UnknownVariable(f"unknown variable {name!r}", line=lineno)
        if lab not in lookup[name]:
            raise MalformedTrajectory(f"variable {name!r} has no state {lab!r}", line=lineno)
        a, b = _float(parts[2], lineno), _float(parts[3], lineno)
        if not b > a:
            raise MalformedTrajectory("segment end must exceed start", line=lineno)
        prev = segs.setdefault(name, [])
        expect = prev[-1][2] if prev else 0.0
        if a != expect:
            kind = "overlap" if a < expect else "gap"
            raise MalformedTrajectory(f"{kind} in {name!r} at t={parts[2]}", line=lineno)
        if prev and prev[-1][0] == lookup[name][lab]:
            raise MalformedTrajectory(f"repeated state in consecutive {name!r} segments", line=lineno)
        prev.append((lookup[name][lab], a, b))
    if horizon is None:
        raise MalformedTrajectory("missing horizon header", line=1)
    for name, prev in segs.items():
        if prev[-1][2] != horizon:
            raise MalformedTrajectory(f"{name!r} ends at {prev[-1][2]!r}, horizon is {horizon!r}")
    return Trajectory.from_segments(horizon, segs)


def _float(s, lineno):
    try:
        v = float(s)
    except ValueError:
        raise MalformedTrajectory(f"not a number: {s!r}", line=lineno) from None
    if not math.isfinite(v) or v < 0:
        raise MalformedTrajectory(f"bad time {s!r}", line=lineno)
    return v
