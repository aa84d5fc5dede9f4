"""
Sufficient statistics and maximum-likelihood CIMs from complete trajectories.

Dwell times are accumulated exactly (as integers in units of 2**-1074 s), so
statistics built from a batch equal the merge of statistics built from any
split of that batch, bit for bit.
"""
import json
import math
import warnings

import numpy as np

from .errors import EmptyData, IncompleteData, MalformedTrajectory, ZeroDwellWarning
from .model import CtbnModel, InitialDistribution

_SCALE_BITS = 1074
_SCALE = 1 << _SCALE_BITS


def _exact(d):
    num, den = float(d).as_integer_ratio()
    return num << (_SCALE_BITS - (den.bit_length() - 1))


_to_float = np.frompyfunc(lambda n: n / _SCALE, 1, 1)


def _zeros_exact(shape):
    a = np.empty(shape, dtype=object)
    a.fill(0)
    return a


class SufficientStats:
    """Dwell times ``T[x_i | v]`` and transition counts ``N[x_i, x_j | v]`` per node.

    ``dwell(node)`` has shape ``(n_contexts, m)`` and ``counts(node)`` has
    shape ``(n_contexts, m, m)`` with a zero diagonal.
    """

    def __init__(self, structure, dwell_exact=None, counts=None, n_trajectories=0, total_time_exact=0):
        self.structure = structure
        K = len(structure.nodes)
        if dwell_exact is None:
            dwell_exact = [_zeros_exact((structure.n_contexts(k), structure.cardinalities[k])) for k in range(K)]
        if counts is None:
            counts = [
                np.zeros((structure.n_contexts(k), structure.cardinalities[k], structure.cardinalities[k]), np.int64)
                for k in range(K)
            ]
        self._dwell_exact = list(dwell_exact)
        self._counts = list(counts)
        self.n_trajectories = n_trajectories
        self._total_exact = total_time_exact
        self._dwell_cache = {}

    @property
    def total_time(self):
        return self._total_exact / _SCALE

    def dwell(self, node):
        k = self.structure.index(node)
        if k not in self._dwell_cache:
            d = self._dwell_exact[k]
            self._dwell_cache[k] = _to_float(d).astype(float) if d.size else np.zeros(d.shape)
        return self._dwell_cache[k]

    def counts(self, node):
        return self._counts[self.structure.index(node)]

    def exits(self, node):
        """``N[x_i | v]``, total transitions out of each state."""
        return self.counts(node).sum(axis=2)

    def merge(self, other):
        if other.structure.nodes != self.structure.nodes or other.structure.parents != self.structure.parents:
            raise ValueError("cannot merge statistics of different structures")
        return SufficientStats(
            self.structure,
            [a + b for a, b in zip(self._dwell_exact, other._dwell_exact)],
            [a + b for a, b in zip(self._counts, other._counts)],
            self.n_trajectories + other.n_trajectories,
            self._total_exact + other._total_exact,
        )

    __add__ = merge

    def __eq__(self, other):
        if not isinstance(other, SufficientStats):
            return NotImplemented
        return (
            self.structure.names == other.structure.names
            and all(np.array_equal(a, b) for a, b in zip(self._counts, other._counts))
            and all(bool(np.all(a == b)) for a, b in zip(self._dwell_exact, other._dwell_exact))
        )

    def zero_dwell_contexts(self):
        """``(node name, context, state)`` triples never visited in the data."""
        out = []
        for k, node in enumerate(self.structure.nodes):
            for c, i in np.argwhere(self.dwell(k) == 0):
                out.append((node.name, int(c), int(i)))
        return out

    def to_dict(self):
        nodes = []
        for k, node in enumerate(self.structure.nodes):
            nodes.append(
                {
                    "name": node.name,
                    "parents": [self.structure.nodes[p].name for p in self.structure.parents[k]],
                    "dwell": self.dwell(k).tolist(),
                    "counts": self.counts(k).tolist(),
                }
            )
        return {
            "format": "ctbn-stats",
            "version": 1,
            "n_trajectories": self.n_trajectories,
            "total_time": self.total_time,
            "nodes": nodes,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, structure, doc):
        dwell, counts = [], []
        by_name = {n["name"]: n for n in doc["nodes"]}
        for k, node in enumerate(structure.nodes):
            entry = by_name[node.name]
            d = np.array(entry["dwell"], dtype=float)
            ex = _zeros_exact(d.shape)
            for idx in np.ndindex(d.shape):
                ex[idx] = _exact(d[idx])
            dwell.append(ex)
            counts.append(np.array(entry["counts"], dtype=np.int64))
        return cls(structure, dwell, counts, doc.get("n_trajectories", 0), _exact(doc.get("total_time", 0.0)))


def _left_states(traj, name, times):
    """States of ``name`` just before each of ``times``."""
    states, starts = traj.path(name)
    idx = np.searchsorted(starts, times, side="left") - 1
    return states[np.clip(idx, 0, len(states) - 1)]


def _check_complete(structure, traj):
    for node in structure.nodes:
        if node.name not in traj:
            raise IncompleteData(f"trajectory lacks variable {node.name!r}")
        states = traj.states(node.name)
        if states.size and states.max() >= node.cardinality:
            raise MalformedTrajectory(f"{node.name!r} has a state outside its {node.cardinality} states")
    if not traj.horizon > 0:
        raise MalformedTrajectory("trajectory has an empty horizon")


def _single_stats(structure, traj):
    _check_complete(structure, traj)
    T = traj.horizon
    dwell, counts = [], []
    for k, node in enumerate(structure.nodes):
        names = [node.name] + [structure.nodes[p].name for p in structure.parents[k]]
        times = np.unique(np.concatenate([traj.starts(n) for n in names]))
        dur = np.diff(np.append(times, T))
        x = traj.state_at(node.name, times)
        ctx = np.zeros(times.size, np.int64)
        for p, st in zip(structure.parents[k], structure.context_codec(k).strides):
            ctx += traj.state_at(structure.nodes[p].name, times) * st
        acc = _zeros_exact((structure.n_contexts(k), node.cardinality))
        for c, s, d in zip(ctx.tolist(), np.atleast_1d(x).tolist(), dur.tolist()):
            acc[c, s] += _exact(d)
        dwell.append(acc)

        n = np.zeros((structure.n_contexts(k), node.cardinality, node.cardinality), np.int64)
        jumps = traj.change_times(node.name)
        if jumps.size:
            st = traj.states(node.name)
            jctx = np.zeros(jumps.size, np.int64)
            for p, stride in zip(structure.parents[k], structure.context_codec(k).strides):
                jctx += _left_states(traj, structure.nodes[p].name, jumps) * stride
            np.add.at(n, (jctx, st[:-1], st[1:]), 1)
        counts.append(n)
    return SufficientStats(structure, dwell, counts, 1, _exact(T))


def collect_stats(structure, data):
    """Accumulate sufficient statistics over complete trajectories.

    Dwell is split at every parent change; a transition is charged to the
    parent instantiation in force just before it (left limit).
    """
    stats = SufficientStats(structure)
    for traj in data:
        stats = stats.merge(_single_stats(structure, traj))
    return stats


def mle(stats, pseudo_dwell=0.01, pseudo_count=0.01):
    """Fit every CIM from sufficient statistics.

    ``q_i = (N_i + a) / (T_i + b)`` and
    ``q_ij = q_i (N_ij + a/(M-1)) / (N_i + a)`` with ``a = pseudo_count`` and
    ``b = pseudo_dwell``; ``a = b = 0`` gives the plain ratios ``N_i/T_i`` and
    ``N_ij/N_i``.  Unvisited states without pseudo dwell become absorbing
    and raise a :class:`ZeroDwellWarning`.

    Returns a list of ``(n_contexts, m, m)`` arrays, one per node.
    """
    if not (math.isfinite(pseudo_dwell) and math.isfinite(pseudo_count)) or pseudo_dwell < 0 or pseudo_count < 0:
        raise ValueError("pseudo parameters must be finite and non-negative")
    out = []
    zero = []
    for k, node in enumerate(stats.structure.nodes):
        m = node.cardinality
        T = stats.dwell(k)
        N = stats.counts(k).astype(float)
        Ni = N.sum(axis=2)
        denom_t = T + pseudo_dwell
        num = Ni + pseudo_count
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(denom_t > 0, num / denom_t, 0.0)
            if m > 1:
                share = (N + pseudo_count / (m - 1)) / num[..., None]
            else:
                share = np.zeros_like(N)
        q = np.where(num > 0, q, 0.0)
        share = np.where(num[..., None] > 0, share, 0.0)
        Q = q[..., None] * share
        eye = np.eye(m, dtype=bool)
        Q[:, eye] = 0.0
        Q[:, eye] = -Q.sum(axis=2)
        out.append(Q)
        if m > 1:
            for c, i in np.argwhere(denom_t == 0):
                zero.append((node.name, int(c), int(i)))
    if zero:
        shown = ", ".join(f"{n}[ctx={c}, state={i}]" for n, c, i in zero[:5])
        more = f" and {len(zero) - 5} more" if len(zero) > 5 else ""
        warnings.warn(f"zero dwell time, rate set to 0: {shown}{more}", ZeroDwellWarning, stacklevel=2)
    return out


def fit(structure, data, pseudo_dwell=0.01, pseudo_count=0.01, learn_initial=True):
    """Collect statistics, fit CIMs and (optionally) the initial distribution."""
    data = list(data)
    if not data:
        raise EmptyData("no trajectories to learn from")
    stats = collect_stats(structure, data)
    cims = mle(stats, pseudo_dwell, pseudo_count)
    initial = learn_initial_distribution(structure, data) if learn_initial else structure.initial
    return CtbnModel(structure.nodes, structure.parents, cims, initial), stats


def log_likelihood_from_stats(cims, stats):
    total = 0.0
    for k in range(len(stats.structure.nodes)):
        Q = np.asarray(cims[k], dtype=float)
        m = Q.shape[-1]
        eye = np.eye(m, dtype=bool)
        q = -Q[:, eye]
        T = stats.dwell(k)
        N = stats.counts(k)
        Ni = N.sum(axis=2)
        if np.any((Ni > 0) & (q <= 0)):
            return -math.inf
        off = np.where(eye, 0.0, Q)
        if np.any((N > 0) & (off <= 0)):
            return -math.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            theta = np.where(q[..., None] > 0, off / q[..., None], 0.0)
            total += float(np.sum(np.where(Ni > 0, Ni * np.log(q), 0.0)))
            total -= float(np.sum(q * T))
            total += float(np.sum(np.where(N > 0, N * np.log(theta), 0.0)))
    return total


def log_likelihood(model, data, include_initial=False):
    """Complete-data log-likelihood ``sum N_i ln q_i - q_i T_i + sum N_ij ln theta_ij``.

    Returns ``-inf`` when an observed transition has zero rate.  With
    ``include_initial`` the log-probability of each time-0 joint state is
    added as well.
    """
    data = list(data)
    stats = collect_stats(model, data)
    ll = log_likelihood_from_stats(model.cims, stats)
    if include_initial:
        for traj in data:
            s0 = [traj.state_at(n.name, 0.0) for n in model.nodes]
            p = float(model.initial.prob(model.codec.encode(s0)))
            ll += math.log(p) if p > 0 else -math.inf
    return ll


def learn_initial_distribution(structure, data):
    """Empirical time-0 joint-state frequencies, add-one smoothed over the observed support."""
    data = list(data)
    if not data:
        raise EmptyData("no trajectories to estimate the initial distribution from")
    idx = []
    for traj in data:
        _check_complete(structure, traj)
        idx.append(structure.codec.encode([traj.state_at(n.name, 0.0) for n in structure.nodes]))
    support, counts = np.unique(np.array(idx, dtype=np.int64), return_counts=True)
    probs = (counts + 1.0) / (counts.sum() + support.size)
    return InitialDistribution(structure.cardinalities, support=support, probs=probs)
