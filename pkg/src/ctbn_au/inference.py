"""
Posterior marginals of hidden nodes given continuously observed evidence.

Two backends:

``exact_posterior``
    Forward-backward over the joint state space of the hidden nodes.  Between
    evidence changes the hidden chain evolves under the generator restricted
    to the current observed configuration (the diagonal keeps the loss of
    mass to observed jumps); at each observed jump the messages are weighted
    by the rate of exactly that jump.  Also yields ``log p(evidence)``.

``gibbs_posterior``
    Auxiliary-variable Gibbs sampling.  Each hidden node's whole path is
    redrawn given all other paths: a Poisson grid of candidate jump times is
    laid down by uniformization, then a discrete forward-filter /
    backward-sample pass picks the states on that grid.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EvidenceGap,
    NoCodec,
    NonErgodicWarning,
    OutOfRange,
    StateSpaceTooLarge,
    UnknownVariable,
    ZeroLikelihoodEvidence,
)
from .expm import expm_dense
from .model import DENSE_JOINT_LIMIT, StateCodec
from .trajectory import DEFAULT_FRAME_RATE, sample_trajectory


@dataclass
class PosteriorTrack:
    """Marginal distributions at ``times``.

    ``marginals[name]`` has shape ``(len(times), cardinality)``.  Observed
    nodes appear as point masses.  ``joint`` (exact backend only) holds the
    hidden-joint posterior, indexed by ``hidden_codec``.
    """

    times: np.ndarray
    marginals: dict
    nodes: dict = field(repr=False)
    hidden: tuple = ()
    joint: np.ndarray = field(default=None, repr=False)
    hidden_codec: StateCodec = field(default=None, repr=False)
    log_evidence: float = None

    def marginal(self, name):
        try:
            return self.marginals[name]
        except KeyError:
            raise UnknownVariable(f"track has no node {name!r}") from None


@dataclass(frozen=True)
class GibbsConfig:
    n_samples: int = 2000
    burn_in: int = None
    thinning: int = 1
    rng_seed: int = 0
    uniformization_factor: float = 2.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.n_samples // 10)
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.thinning < 1:
            raise ValueError("thinning must be positive")
        if not self.uniformization_factor > 1:
            raise ValueError("uniformization_factor must exceed 1")


# --------------------------------------------------------------------------
# Shared evidence handling
# --------------------------------------------------------------------------


def _split_nodes(model, evidence):
    for name in evidence.variables:
        model.index(name)
    if not evidence.horizon > 0:
        raise EvidenceGap("evidence has an empty horizon")
    observed = [k for k, n in enumerate(model.nodes) if n.name in evidence]
    hidden = [k for k in range(len(model.nodes)) if k not in observed]
    for k in observed:
        st = evidence.states(model.nodes[k].name)
        if st.max() >= model.cardinalities[k]:
            raise OutOfRange(f"evidence state out of range for {model.nodes[k].name!r}")
    return observed, hidden


def default_query_times(evidence, frame_rate=DEFAULT_FRAME_RATE):
    """Evidence change points plus a uniform grid at ``frame_rate``."""
    grid = np.arange(int(math.ceil(evidence.horizon * frame_rate - 1e-9))) / frame_rate
    bounds = [evidence.starts(v) for v in evidence.variables]
    t = np.unique(np.concatenate([grid] + bounds)) if bounds else grid
    return t[t < evidence.horizon]


def _check_queries(q, horizon):
    q = np.asarray(q, dtype=float).ravel()
    if q.size and (q.min() < 0 or q.max() >= horizon):
        raise ValueError("query times must lie in [0, horizon)")
    return q


def _observed_changes(model, evidence, observed):
    """Change times of the observed block and which node moves at each."""
    times, who = [], []
    for k in observed:
        ct = evidence.change_times(model.nodes[k].name)
        times.append(ct)
        who.append(np.full(ct.size, k))
    if not times:
        return np.zeros(0), np.zeros(0, np.int64)
    times = np.concatenate(times)
    who = np.concatenate(who)
    order = np.argsort(times, kind="stable")
    times, who = times[order], who[order]
    if np.any(np.diff(times) == 0):
        t = times[np.flatnonzero(np.diff(times) == 0)[0]]
        raise ZeroLikelihoodEvidence(f"two observed nodes change simultaneously at t={t!r}")
    return times, who


def _point_mass_marginals(model, evidence, observed, times):
    out = {}
    for k in observed:
        name = model.nodes[k].name
        m = np.zeros((times.size, model.cardinalities[k]))
        m[np.arange(times.size), evidence.state_at(name, times)] = 1.0
        out[name] = m
    return out


# --------------------------------------------------------------------------
# Exact inference
# --------------------------------------------------------------------------


class _RestrictedGenerator:
    """Hidden-block generators and observed-jump rate vectors for one model."""

    def __init__(self, model, observed, hidden):
        self.model = model
        self.observed = observed
        self.hidden = hidden
        self.hcodec = StateCodec([model.cardinalities[k] for k in hidden])
        self.hstates = self.hcodec.all_states()
        self._q = {}

    def full_states(self, obs_config):
        full = np.zeros((self.hcodec.size, len(self.model.nodes)), np.int64)
        for j, k in enumerate(self.hidden):
            full[:, k] = self.hstates[:, j]
        for k, s in zip(self.observed, obs_config):
            full[:, k] = s
        return full

    def generator(self, obs_config):
        key = tuple(int(s) for s in obs_config)
        if key in self._q:
            return self._q[key]
        n = self.hcodec.size
        full = self.full_states(key)
        q = np.zeros((n, n))
        idx = np.arange(n)
        for j, k in enumerate(self.hidden):
            rows = self.model.rate_rows(k, full)
            x = full[:, k]
            stride = self.hcodec.strides[j]
            for dest in range(self.model.cardinalities[k]):
                sel = x != dest
                q[idx[sel], idx[sel] + (dest - x[sel]) * stride] += rows[sel, dest]
        leave = np.zeros(n)
        for k in range(len(self.model.nodes)):
            leave += self.model.exit_rates(k, full)
        q[idx, idx] = -leave
        self._q[key] = q
        return q

    def jump_rates(self, obs_config, node, dest):
        full = self.full_states(obs_config)
        return self.model.rate_rows(node, full)[:, dest]


def exact_posterior(model, evidence, query_times=None, dense_limit=DENSE_JOINT_LIMIT):
    """Exact posterior marginals at ``query_times`` (defaults to :func:`default_query_times`).

    Raises StateSpaceTooLarge when the hidden joint exceeds ``dense_limit``
    states and ZeroLikelihoodEvidence when the evidence is impossible.
    """
    model._require_cims()
    observed, hidden = _split_nodes(model, evidence)
    T = evidence.horizon
    rg = _RestrictedGenerator(model, observed, hidden)
    n = rg.hcodec.size
    if n > dense_limit:
        raise StateSpaceTooLarge(f"hidden joint has {n} states (dense limit {dense_limit})")
    queries = default_query_times(evidence) if query_times is None else _check_queries(query_times, T)

    ch_times, ch_who = _observed_changes(model, evidence, observed)
    points = np.unique(np.concatenate([[0.0], ch_times, queries]))
    n_pts = points.size
    names = [model.nodes[k].name for k in observed]

    def config_at(t):
        return tuple(int(evidence.state_at(nm, t)) for nm in names)

    configs = [config_at(t) for t in points]
    jump_at = {}
    for t, k in zip(ch_times, ch_who):
        i = int(np.searchsorted(points, t))
        before = config_at(np.nextafter(t, -np.inf)) if t > 0 else configs[i]
        dest = int(evidence.state_at(model.nodes[k].name, t))
        jump_at[i] = rg.jump_rates(before, k, dest)

    cache = {}

    def propagator(cfg, dt):
        key = (cfg, float(f"{dt:.12g}"))
        if key not in cache:
            cache[key] = expm_dense(rg.generator(cfg), key[1])
        return cache[key]

    steps = np.diff(np.append(points, T))

    # forward
    full0 = rg.full_states(configs[0])
    alpha = np.asarray(model.initial.prob(model.codec.encode(full0)), dtype=float).reshape(n)
    c = alpha.sum()
    if not c > 0:
        raise ZeroLikelihoodEvidence("initial observed configuration has zero prior probability")
    log_ev = math.log(c)
    alpha = alpha / c
    alphas = np.empty((n_pts, n))
    alphas[0] = alpha
    for i in range(n_pts):
        alpha = alpha @ propagator(configs[i], steps[i])
        if i + 1 < n_pts and (i + 1) in jump_at:
            alpha = alpha * jump_at[i + 1]
        c = alpha.sum()
        if not c > 0:
            t = points[i + 1] if i + 1 < n_pts else T
            raise ZeroLikelihoodEvidence(f"evidence has zero likelihood by t={t!r}")
        log_ev += math.log(c)
        alpha = alpha / c
        if i + 1 < n_pts:
            alphas[i + 1] = alpha

    # backward
    beta = np.ones(n)
    betas = np.empty((n_pts, n))
    for i in range(n_pts - 1, -1, -1):
        v = beta * jump_at[i + 1] if (i + 1) in jump_at else beta
        beta = propagator(configs[i], steps[i]) @ v
        beta = beta / beta.sum()
        betas[i] = beta

    post = alphas * betas
    post = post / post.sum(axis=1, keepdims=True)
    qi = np.searchsorted(points, queries)
    joint = post[qi]

    marginals = {}
    for j, k in enumerate(hidden):
        m = np.zeros((queries.size, model.cardinalities[k]))
        for s in range(model.cardinalities[k]):
            m[:, s] = joint[:, rg.hstates[:, j] == s].sum(axis=1)
        marginals[model.nodes[k].name] = m
    marginals.update(_point_mass_marginals(model, evidence, observed, queries))
    marginals = {n_.name: marginals[n_.name] for n_ in model.nodes}
    return PosteriorTrack(
        times=queries,
        marginals=marginals,
        nodes={n_.name: n_ for n_ in model.nodes},
        hidden=tuple(model.nodes[k].name for k in hidden),
        joint=joint,
        hidden_codec=rg.hcodec,
        log_evidence=log_ev,
    )


# --------------------------------------------------------------------------
# Gibbs sampling
# --------------------------------------------------------------------------


class _Infeasible(Exception):
    pass


class _BlanketSampler:
    """Redraws one hidden node's path given every other path."""

    def __init__(self, model, k, factor):
        self.model = model
        self.k = k
        self.m = model.cardinalities[k]
        self.factor = factor
        self.parents = model.parents[k]
        self.pstrides = model.context_codec(k).strides
        self.children = []
        for c in model.children[k]:
            ps = model.parents[c]
            strides = model.context_codec(c).strides
            others = [(p, st) for p, st in zip(ps, strides) if p != k]
            own = strides[ps.index(k)]
            self.children.append((c, others, own))
        blanket = set(self.parents) | set(model.children[k])
        for c in model.children[k]:
            blanket |= set(model.parents[c])
        blanket.discard(k)
        self.blanket = sorted(blanket)
        self.cims = model.cims[k]
        self.xs = np.arange(self.m)

    def resample(self, paths, T, rng, boost=1.0):
        model, m = self.model, self.m
        if self.blanket:
            ps = np.unique(np.concatenate([[0.0]] + [paths[b][1][1:] for b in self.blanket]))
        else:
            ps = np.zeros(1)
        S = {}
        for b in self.blanket:
            st, sa = paths[b]
            S[b] = st[np.searchsorted(sa, ps, side="right") - 1]
        ctx = np.zeros(ps.size, np.int64)
        for p, st in zip(self.parents, self.pstrides):
            ctx += S[p] * st
        A = self.cims[ctx]
        q = -A[:, self.xs, self.xs]
        omega = self.factor * boost * q.max(axis=1)

        r = np.zeros((ps.size, m))
        jump_t, jump_f = [], []
        for c, others, own in self.children:
            base = np.zeros(ps.size, np.int64)
            for p, st in others:
                base += S[p] * st
            cctx = base[:, None] + self.xs[None, :] * own
            cs = S[c]
            cq = model.cims[c]
            r -= cq[cctx, cs[:, None], cs[:, None]]
            moved = np.flatnonzero(cs[1:] != cs[:-1]) + 1
            if moved.size:
                f = cq[cctx[moved - 1], cs[moved - 1][:, None], cs[moved][:, None]]
                jump_t.append(ps[moved])
                jump_f.append(f)

        xs_, xt = paths[self.k]
        E = np.unique(np.concatenate([ps, xt]))
        pe = np.searchsorted(ps, E, side="right") - 1
        xe = xs_[np.searchsorted(xt, E, side="right") - 1]
        dur = np.diff(np.append(E, T))
        lam = np.maximum(omega[pe] - q[pe, xe], 0.0)
        cnt = rng.poisson(lam * dur)
        total = int(cnt.sum())
        virt = np.repeat(E, cnt) + rng.random(total) * np.repeat(dur, cnt)
        W = np.sort(np.concatenate([xt[1:], virt]))
        G = W.size
        pw = np.searchsorted(ps, W, side="right") - 1

        logE = np.zeros((G + 1, m))
        F = np.unique(np.concatenate([ps, W]))
        gF = np.searchsorted(W, F, side="right")
        pF = np.searchsorted(ps, F, side="right") - 1
        dF = np.diff(np.append(F, T))
        np.add.at(logE, gF, -dF[:, None] * r[pF])
        with np.errstate(divide="ignore"):
            for t, f in zip(jump_t, jump_f):
                np.add.at(logE, np.searchsorted(W, t, side="left"), np.log(f))

        s0 = np.array([paths[j][0][0] for j in range(len(model.nodes))])
        pi = np.asarray(model.initial.conditional(self.k, s0), dtype=float)

        mx = logE.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(mx)):
            raise _Infeasible
        lik = np.exp(logE - mx)
        alphas = np.empty((G + 1, m))
        a = pi * lik[0]
        s = a.sum()
        if not s > 0:
            raise _Infeasible
        alphas[0] = a = a / s
        om = np.where(omega > 0, omega, 1.0)
        for g in range(1, G + 1):
            p = pw[g - 1]
            a = (a + (a @ A[p]) / om[p]) * lik[g]
            s = a.sum()
            if not s > 0:
                raise _Infeasible
            alphas[g] = a = a / s

        out = np.empty(G + 1, np.int64)
        u = rng.random(G + 1)
        out[G] = _draw(alphas[G], u[G])
        for g in range(G, 0, -1):
            p = pw[g - 1]
            col = A[p][:, out[g]] / om[p]
            col[out[g]] += 1.0
            out[g - 1] = _draw(alphas[g - 1] * col, u[g - 1])
        starts = np.concatenate([[0.0], W])
        keep = np.ones(G + 1, dtype=bool)
        keep[1:] = out[1:] != out[:-1]
        return out[keep], starts[keep]


def _draw(w, u):
    c = np.cumsum(w)
    i = int(np.searchsorted(c, u * c[-1], side="right"))
    return min(i, w.size - 1)


def _warn_absorbing(model, hidden):
    for k in hidden:
        m = model.cardinalities[k]
        if m < 2:
            continue
        q = -model.cims[k][:, np.arange(m), np.arange(m)]
        if np.any(q == 0):
            warnings.warn(
                f"hidden node {model.nodes[k].name!r} has absorbing states under some parent context",
                NonErgodicWarning,
                stacklevel=3,
            )


def gibbs_posterior(model, evidence, config=None, query_times=None, max_boost=6):
    """Posterior marginals by auxiliary Gibbs sampling over hidden paths.

    Runs ``burn_in + n_samples * thinning`` sweeps and tallies the hidden
    states at ``query_times`` on every kept sweep.  Deterministic for a
    given ``config.rng_seed``.
    """
    model._require_cims()
    config = GibbsConfig() if config is None else config
    observed, hidden = _split_nodes(model, evidence)
    T = evidence.horizon
    queries = default_query_times(evidence) if query_times is None else _check_queries(query_times, T)
    _observed_changes(model, evidence, observed)
    _warn_absorbing(model, hidden)
    nodes = {n.name: n for n in model.nodes}
    marg = _point_mass_marginals(model, evidence, observed, queries)
    if not hidden:
        return PosteriorTrack(queries, {n: marg[n] for n in nodes}, nodes, ())

    rng = np.random.default_rng(config.rng_seed)
    prior = sample_trajectory(model, T, rng)
    paths = {}
    for k, node in enumerate(model.nodes):
        src = evidence if k in observed else prior
        paths[k] = (np.asarray(src.states(node.name)), np.asarray(src.starts(node.name)))
    samplers = [_BlanketSampler(model, k, config.uniformization_factor) for k in hidden]
    counts = {k: np.zeros((queries.size, model.cardinalities[k])) for k in hidden}
    rows = np.arange(queries.size)

    def sweep():
        for smp in samplers:
            for attempt in range(max_boost + 1):
                try:
                    paths[smp.k] = smp.resample(paths, T, rng, boost=2.0 ** attempt)
                    break
                except _Infeasible:
                    if attempt == max_boost:
                        raise ZeroLikelihoodEvidence(
                            f"no feasible path for {model.nodes[smp.k].name!r} on the sampled grid"
                        ) from None

    # The prior draw may be incompatible with the evidence; a node whose grid
    # admits no feasible path is retried on a denser grid (any rate above the
    # node's exit rates leaves the target distribution unchanged).
    n_sweeps = config.burn_in + config.n_samples * config.thinning
    kept = 0
    for it in range(n_sweeps):
        sweep()
        if it >= config.burn_in and (it - config.burn_in) % config.thinning == 0:
            for k in hidden:
                st, sa = paths[k]
                np.add.at(counts[k], (rows, st[np.searchsorted(sa, queries, side="right") - 1]), 1.0)
            kept += 1
    for k in hidden:
        marg[model.nodes[k].name] = counts[k] / kept
    return PosteriorTrack(
        times=queries,
        marginals={n: marg[n] for n in nodes},
        nodes=nodes,
        hidden=tuple(model.nodes[k].name for k in hidden),
    )


# --------------------------------------------------------------------------
# Post-processing
# --------------------------------------------------------------------------


def marginalize(track, node, component):
    """Probability that one binary component of a product-coded node is on.

    ``component`` is a position in the node's component list or its name.
    """
    spec = track.nodes[node] if node in track.nodes else None
    if spec is None:
        raise UnknownVariable(f"track has no node {node!r}")
    if spec.components is None:
        raise NoCodec(f"node {node!r} is not product-coded")
    if isinstance(component, str):
        if component not in spec.components:
            raise OutOfRange(f"node {node!r} has no component {component!r}")
        component = spec.components.index(component)
    nbits = len(spec.components)
    if not 0 <= component < nbits:
        raise OutOfRange(f"component {component} out of range")
    bit = 1 << (nbits - 1 - component)
    mask = (np.arange(spec.cardinality) & bit) != 0
    return track.marginal(node)[:, mask].sum(axis=1)


def map_decision(probabilities, threshold=0.5):
    """Binary decisions, 1 where ``p >= threshold`` (ties go positive)."""
    p = np.asarray(probabilities, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return (p >= threshold).astype(np.int64)


def format_track(times, columns):
    """Columnar text: ``time`` then one column per entry of ``columns`` (9 significant digits)."""
    names = list(columns)
    lines = [",".join(["time"] + names)]
    cols = [np.asarray(columns[n], dtype=float) for n in names]
    for i, t in enumerate(np.asarray(times, dtype=float)):
        lines.append(",".join([format(t, ".9g")] + [format(c[i], ".9g") for c in cols]))
    return "\n".join(lines) + "\n"


def parse_track(text):
    """Inverse of :func:`format_track`; ``#`` lines are comments."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    header = lines[0].split(",")
    if header[0] != "time":
        raise ValueError("track header must start with 'time'")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return data[:, 0], {h: data[:, i + 1] for i, h in enumerate(header[1:])}


def track_columns(track, hidden_only=True):
    """One column per hidden-node state, named ``node=label``."""
    cols = {}
    names = track.hidden if hidden_only else tuple(track.marginals)
    for name in names:
        spec = track.nodes[name]
        m = track.marginal(name)
        for s, lab in enumerate(spec.state_labels):
            cols[f"{name}={lab}"] = m[:, s]
    return cols
