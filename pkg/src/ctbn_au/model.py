"""
CTBN structure and intensity-matrix algebra.

A model is a set of finite-state nodes, an ordered parent list per node
(cycles allowed), one conditional intensity matrix (CIM) per parent
instantiation, and an initial distribution over the product state space.

Indexing conventions
--------------------
Parent instantiations and joint states are both mixed-radix numbers whose
most significant digit is the first listed parent / first model node.  So for
parents ``(A, B)`` with cardinalities ``(3, 2)`` the context ``A=2, B=1`` has
index ``2 * 2 + 1 = 5``.
"""
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .errors import (
    AbsorbingState,
    CtbnError,
    ModelError,
    NegativeOffDiagonal,
    NonSquare,
    OutOfRange,
    ParseError,
    RowSumViolation,
    StateSpaceTooLarge,
    UnknownVariable,
)

ROW_SUM_RTOL = 1e-9
DENSE_JOINT_LIMIT = 4096
MAX_JOINT_STATES = 2 ** 20


# --------------------------------------------------------------------------
# Nodes and CIMs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeSpec:
    """A finite-state variable.

    ``components`` is set for product-coded nodes (such as the fused AU node)
    and lists the binary components from most to least significant bit.
    """

    name: str
    cardinality: int
    state_labels: tuple = None
    components: tuple = None

    def __post_init__(self):
        if int(self.cardinality) < 1:
            raise ModelError(f"node {self.name!r}: cardinality must be >= 1")
        object.__setattr__(self, "cardinality", int(self.cardinality))
        labels = self.state_labels
        if labels is None:
            labels = tuple(str(i) for i in range(self.cardinality))
        labels = tuple(str(s) for s in labels)
        if len(labels) != self.cardinality:
            raise ModelError(f"node {self.name!r}: expected {self.cardinality} labels, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise ModelError(f"node {self.name!r}: state labels must be unique")
        object.__setattr__(self, "state_labels", labels)
        if self.components is not None:
            comps = tuple(self.components)
            if 2 ** len(comps) != self.cardinality:
                raise ModelError(f"node {self.name!r}: {len(comps)} components need 2**{len(comps)} states")
            object.__setattr__(self, "components", comps)

    def state_index(self, label):
        try:
            return self.state_labels.index(label)
        except ValueError:
            raise OutOfRange(f"node {self.name!r} has no state {label!r}") from None


class ConditionalIntensityMatrix:
    """Validated, immutable rate matrix in 1/seconds.

    Build through :func:`validate_cim`; the diagonal is always exactly the
    negated sum of the off-diagonal entries of its row.
    """

    __slots__ = ("_m",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        m.setflags(write=False)
        self._m = m

    @property
    def matrix(self):
        return self._m

    @property
    def n_states(self):
        return self._m.shape[0]

    def exit_rate(self, state):
        return -self._m[state, state]

    def __array__(self, dtype=None, copy=None):
        return self._m if dtype is None else self._m.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, ConditionalIntensityMatrix):
            return NotImplemented
        return np.array_equal(self._m, other._m)

    def __repr__(self):
        return f"ConditionalIntensityMatrix({self._m.tolist()!r})"


def _normalize_rows(m, what="CIM"):
    """Check sign/closure of a (..., n, n) stack in place and fix the diagonal."""
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise NonSquare(f"{what} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{what} has non-finite entries")
    n = m.shape[-1]
    flat = m.reshape(-1, n, n)
    eye = np.eye(n, dtype=bool)
    off = np.where(eye, 0.0, flat)
    if np.any(off < 0):
        raise NegativeOffDiagonal(f"{what} has a negative off-diagonal entry")
    diag = np.diagonal(flat, axis1=1, axis2=2)
    if np.any(diag > 0):
        raise RowSumViolation(f"{what} has a positive diagonal entry")
    rowsum = off.sum(axis=2) + diag
    tol = ROW_SUM_RTOL * np.maximum(1.0, np.abs(diag))
    bad = np.argwhere(np.abs(rowsum) > tol)
    if bad.size:
        i = tuple(bad[0])
        raise RowSumViolation(f"{what} row {i[-1]} sums to {rowsum[i]!r}")
    for c in range(flat.shape[0]):
        for i in range(n):
            flat[c, i, i] = -math.fsum(off[c, i])
    return flat.reshape(m.shape)


def validate_cim(matrix):
    """Return a :class:`ConditionalIntensityMatrix` after checking sign and row-sum closure.

    Raises NonSquare, NegativeOffDiagonal or RowSumViolation.  Rows whose
    sum is within ``1e-9 * max(1, |diag|)`` of zero get their diagonal reset
    to the exact negated off-diagonal sum.

    >>> validate_cim([[-1, 1], [2, -2]]).matrix.tolist()
    [[-1.0, 1.0], [2.0, -2.0]]
    """
    m = np.array(matrix, dtype=float)
    if m.ndim != 2:
        raise NonSquare(f"CIM must be a 2-d matrix, got shape {m.shape}")
    return ConditionalIntensityMatrix(_normalize_rows(m))


def _as_matrix(cim):
    return cim.matrix if isinstance(cim, ConditionalIntensityMatrix) else np.asarray(cim, dtype=float)


def _check_state(m, state):
    if not 0 <= state < m.shape[0]:
        raise OutOfRange(f"state {state} out of range for {m.shape[0]}-state CIM")


def sojourn_density(cim, state, t):
    """Density of the holding time in ``state``: ``q * exp(-q t)``.

    Identically zero for an absorbing state.  ``t`` may be an array.
    """
    m = _as_matrix(cim)
    _check_state(m, state)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("sojourn time must be non-negative")
    q = -m[state, state]
    if q == 0:
        return np.zeros_like(t)[()]
    return (q * np.exp(-q * t))[()]


def expected_sojourn(cim, state):
    """Mean holding time ``1/q`` in seconds (``inf`` when absorbing)."""
    m = _as_matrix(cim)
    _check_state(m, state)
    q = -m[state, state]
    return math.inf if q == 0 else 1.0 / q


def transition_distribution(cim, state):
    """Categorical over destinations given that a jump out of ``state`` occurs."""
    m = _as_matrix(cim)
    _check_state(m, state)
    q = -m[state, state]
    if q == 0:
        raise AbsorbingState(f"state {state} has zero exit rate")
    p = m[state] / q
    p[state] = 0.0
    return p


# --------------------------------------------------------------------------
# Mixed-radix codec
# --------------------------------------------------------------------------


class StateCodec:
    """Mixed-radix codec, first digit most significant."""

    def __init__(self, sizes):
        self.sizes = tuple(int(s) for s in sizes)
        strides = [1] * len(self.sizes)
        for i in range(len(self.sizes) - 2, -1, -1):
            strides[i] = strides[i + 1] * self.sizes[i + 1]
        self.strides = tuple(strides)
        self.size = math.prod(self.sizes)

    def encode(self, states):
        s = np.asarray(states, dtype=np.int64)
        if s.shape[-1:] != (len(self.sizes),):
            raise OutOfRange(f"expected {len(self.sizes)} digits, got shape {s.shape}")
        if np.any(s < 0) or np.any(s >= np.array(self.sizes, dtype=np.int64)):
            raise OutOfRange(f"digits {s.tolist()} out of range for sizes {self.sizes}")
        out = s @ np.array(self.strides, dtype=np.int64) if self.sizes else np.zeros(s.shape[:-1], np.int64)
        return int(out) if np.ndim(out) == 0 else out

    def decode(self, index):
        idx = np.asarray(index, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.size):
            raise OutOfRange(f"index {index} out of range for size {self.size}")
        digits = [(idx // st) % sz for st, sz in zip(self.strides, self.sizes)]
        out = np.stack(digits, axis=-1) if digits else np.zeros(idx.shape + (0,), np.int64)
        return out

    def all_states(self):
        return self.decode(np.arange(self.size))


# --------------------------------------------------------------------------
# Initial distribution
# --------------------------------------------------------------------------


class InitialDistribution:
    """Categorical over the joint state space.

    Either factored (independent per-node marginals) or an explicit sparse
    joint given as ``support`` indices and matching ``probs``.
    """

    def __init__(self, sizes, marginals=None, support=None, probs=None):
        self.codec = StateCodec(sizes)
        if (marginals is None) == (support is None):
            raise ModelError("give either marginals or support/probs")
        if marginals is not None:
            if len(marginals) != len(self.codec.sizes):
                raise ModelError("one marginal per node required")
            ms = []
            for m, n in zip(marginals, self.codec.sizes):
                m = np.array(m, dtype=float)
                if m.shape != (n,) or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
                    raise ModelError("each marginal must be a probability vector of the node's size")
                m.setflags(write=False)
                ms.append(m)
            self.marginals = tuple(ms)
            self.support = self.probs = None
        else:
            support = np.asarray(support, dtype=np.int64)
            probs = np.asarray(probs, dtype=float)
            if support.shape != probs.shape or support.ndim != 1:
                raise ModelError("support and probs must be equal-length vectors")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ModelError("initial distribution must sum to 1")
            if support.size and (support.min() < 0 or support.max() >= self.codec.size):
                raise OutOfRange("initial support index out of range")
            order = np.argsort(support, kind="stable")
            support, probs = support[order], probs[order]
            if np.any(np.diff(support) == 0):
                raise ModelError("duplicate support index")
            support.setflags(write=False)
            probs.setflags(write=False)
            self.marginals = None
            self.support, self.probs = support, probs

    @classmethod
    def factored(cls, marginals):
        return cls([len(m) for m in marginals], marginals=marginals)

    @classmethod
    def uniform(cls, sizes):
        return cls(sizes, marginals=[np.full(n, 1.0 / n) for n in sizes])

    @classmethod
    def point_mass(cls, sizes, states):
        codec = StateCodec(sizes)
        return cls(sizes, support=[codec.encode(states)], probs=[1.0])

    @property
    def is_factored(self):
        return self.marginals is not None

    def prob(self, joint_index):
        idx = np.asarray(joint_index, dtype=np.int64)
        if self.is_factored:
            digits = self.codec.decode(idx)
            p = np.ones(idx.shape)
            for k, m in enumerate(self.marginals):
                p = p * m[digits[..., k]]
            return p
        pos = np.searchsorted(self.support, idx)
        pos = np.minimum(pos, max(len(self.support) - 1, 0))
        hit = self.support[pos] == idx if len(self.support) else np.zeros(idx.shape, bool)
        return np.where(hit, self.probs[pos] if len(self.probs) else 0.0, 0.0)

    def vector(self):
        if self.is_factored:
            v = np.ones(1)
            for m in self.marginals:
                v = np.kron(v, m)
            return v
        v = np.zeros(self.codec.size)
        v[self.support] = self.probs
        return v

    def marginal(self, node):
        if self.is_factored:
            return np.array(self.marginals[node])
        digits = self.codec.decode(self.support)
        return np.bincount(digits[:, node], weights=self.probs, minlength=self.codec.sizes[node])

    def conditional(self, node, states):
        """Unnormalized weights over ``node``'s states with all other nodes fixed."""
        states = np.array(states, dtype=np.int64)
        n = self.codec.sizes[node]
        if self.is_factored:
            return np.array(self.marginals[node])
        cand = np.repeat(states[None, :], n, axis=0)
        cand[:, node] = np.arange(n)
        return self.prob(self.codec.encode(cand))

    def sample(self, rng):
        if self.is_factored:
            return np.array([rng.choice(len(m), p=m) for m in self.marginals], dtype=np.int64)
        j = rng.choice(len(self.probs), p=self.probs)
        return self.codec.decode(self.support[j])


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


def _stack_cims(node, n_ctx, cims):
    m = node.cardinality
    if isinstance(cims, dict):
        missing = set(range(n_ctx)) - set(int(k) for k in cims)
        if missing:
            raise ModelError(f"node {node.name!r}: no CIM for parent instantiations {sorted(missing)}")
        extra = set(int(k) for k in cims) - set(range(n_ctx))
        if extra:
            raise ModelError(f"node {node.name!r}: CIM keys {sorted(extra)} out of range")
        cims = [cims[k] if k in cims else cims[str(k)] for k in range(n_ctx)]
    if isinstance(cims, np.ndarray):
        arr = np.array(cims, dtype=float)
    else:
        arr = np.array([_as_matrix(c) for c in cims], dtype=float)
    if arr.shape != (n_ctx, m, m):
        raise ModelError(f"node {node.name!r}: expected CIM stack of shape {(n_ctx, m, m)}, got {arr.shape}")
    arr = _normalize_rows(arr, what=f"CIM of {node.name!r}")
    arr.setflags(write=False)
    return arr


class CtbnModel:
    """Continuous-time Bayesian network.

    Parameters
    ----------
    nodes : sequence of NodeSpec
    parents : sequence of sequences
        Ordered parent list per node, as node indices or names.
    cims : sequence, optional
        Per node, either a list (indexed by parent instantiation), a dict
        keyed by instantiation index, or an array of shape
        ``(n_contexts, m, m)``.  ``None`` gives a structure-only model.
    initial : InitialDistribution, optional
        Defaults to uniform.
    """

    def __init__(self, nodes, parents, cims=None, initial=None):
        self.nodes = tuple(nodes)
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ModelError("node names must be unique")
        self._index = {n: i for i, n in enumerate(names)}
        if len(parents) != len(self.nodes):
            raise ModelError("one parent list per node required")
        pl = []
        for i, ps in enumerate(parents):
            idx = tuple(self._index[p] if isinstance(p, str) else int(p) for p in ps)
            if i in idx:
                raise ModelError(f"node {names[i]!r} cannot be its own parent")
            if len(set(idx)) != len(idx):
                raise ModelError(f"node {names[i]!r} has a repeated parent")
            if any(not 0 <= p < len(self.nodes) for p in idx):
                raise ModelError(f"node {names[i]!r} has an out-of-range parent")
            pl.append(idx)
        self.parents = tuple(pl)
        self.cardinalities = tuple(n.cardinality for n in self.nodes)
        self.codec = StateCodec(self.cardinalities)
        self._ctx = [StateCodec([self.cardinalities[p] for p in ps]) for ps in self.parents]
        self.children = tuple(
            tuple(j for j in range(len(self.nodes)) if i in self.parents[j]) for i in range(len(self.nodes))
        )
        if cims is None:
            self.cims = None
        else:
            if len(cims) != len(self.nodes):
                raise ModelError("one CIM table per node required")
            self.cims = tuple(_stack_cims(n, self.n_contexts(i), c) for i, (n, c) in enumerate(zip(self.nodes, cims)))
        if initial is None:
            initial = InitialDistribution.uniform(self.cardinalities)
        if initial.codec.sizes != self.cardinalities:
            raise ModelError("initial distribution does not match node cardinalities")
        self.initial = initial

    # structure helpers

    @property
    def names(self):
        return tuple(n.name for n in self.nodes)

    @property
    def is_structure_only(self):
        return self.cims is None

    def index(self, name):
        if isinstance(name, (int, np.integer)):
            return int(name)
        try:
            return self._index[name]
        except KeyError:
            raise UnknownVariable(f"model has no node {name!r}") from None

    def node(self, name):
        return self.nodes[self.index(name)]

    def n_contexts(self, node):
        return self._ctx[self.index(node)].size

    def context_codec(self, node):
        return self._ctx[self.index(node)]

    def parent_context(self, node, full_states):
        """Parent-instantiation index of ``node`` for (an array of) full states."""
        k = self.index(node)
        s = np.asarray(full_states, dtype=np.int64)
        ctx = np.zeros(s.shape[:-1], dtype=np.int64)
        for p, st in zip(self.parents[k], self._ctx[k].strides):
            ctx = ctx + s[..., p] * st
        return ctx

    def cim(self, node, context=0):
        self._require_cims()
        return ConditionalIntensityMatrix(self.cims[self.index(node)][context])

    def rate_rows(self, node, full_states):
        """CIM rows of ``node`` for each full state in ``full_states`` (shape (n, K))."""
        self._require_cims()
        k = self.index(node)
        s = np.asarray(full_states, dtype=np.int64)
        return self.cims[k][self.parent_context(k, s), s[..., k], :]

    def exit_rates(self, node, full_states):
        rows = self.rate_rows(node, full_states)
        s = np.asarray(full_states, dtype=np.int64)[..., self.index(node)]
        return -np.take_along_axis(rows, s[..., None], axis=-1)[..., 0]

    def with_cims(self, cims, initial=None):
        return CtbnModel(self.nodes, self.parents, cims, self.initial if initial is None else initial)

    def with_initial(self, initial):
        return CtbnModel(self.nodes, self.parents, self.cims, initial)

    def _require_cims(self):
        if self.cims is None:
            raise ModelError("model has no CIMs (structure only)")

    def __repr__(self):
        desc = ", ".join(
            f"{n.name}[{n.cardinality}]<-({','.join(self.nodes[p].name for p in ps)})"
            for n, ps in zip(self.nodes, self.parents)
        )
        return f"CtbnModel({desc})"


# --------------------------------------------------------------------------
# Amalgamation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class JointIntensityMatrix:
    """Product-space generator; ``matrix`` is dense below the dense limit."""

    matrix: object
    codec: StateCodec = field(repr=False)

    @property
    def is_sparse(self):
        return scipy.sparse.issparse(self.matrix)

    @property
    def n_states(self):
        return self.codec.size

    def toarray(self):
        return self.matrix.toarray() if self.is_sparse else np.array(self.matrix)

    def encode(self, states):
        return self.codec.encode(states)

    def decode(self, index):
        return self.codec.decode(index)


def amalgamate(model, max_states=MAX_JOINT_STATES, dense_limit=DENSE_JOINT_LIMIT, chunk=1 << 16):
    """Flatten all CIMs into one generator over the product state space.

    Entries connect only states that differ in a single node; the rate is
    that node's CIM entry under the parent instantiation read from the
    source state.
    """
    model._require_cims()
    codec = model.codec
    n = codec.size
    if n > max_states:
        raise StateSpaceTooLarge(f"joint state space has {n} states (limit {max_states})")
    rows, cols, vals = [], [], []
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(n, lo + chunk), dtype=np.int64)
        states = codec.decode(idx)
        for k, node in enumerate(model.nodes):
            r = model.rate_rows(k, states)
            x = states[:, k]
            stride = codec.strides[k]
            for j in range(node.cardinality):
                v = r[:, j]
                mask = (x != j) & (v > 0)
                if not mask.any():
                    continue
                rows.append(idx[mask])
                cols.append(idx[mask] + (j - x[mask]) * stride)
                vals.append(v[mask])
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    off = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    q = (off + scipy.sparse.diags(diag)).tocsr()
    q.sort_indices()
    if n < dense_limit:
        q = q.toarray()
    return JointIntensityMatrix(q, codec)


def encode_joint_state(model, per_node_states):
    return model.codec.encode(per_node_states)


def decode_joint_state(model, index):
    return model.codec.decode(index)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

MODEL_FORMAT = "ctbn-model"


def model_to_dict(model):
    """Plain-data form of a model.

    Layout::

        {"format": "ctbn-model", "version": 1,
         "nodes": [{"name", "states", "components"?, "parents",
                    "cims": {"<context index>": [[...], ...]} | null}, ...],
         "initial": {"kind": "factored", "marginals": [[...], ...]}
                  | {"kind": "joint", "support": [...], "probs": [...]}}

    Context indices are mixed-radix over the node's parent list, first
    parent most significant.
    """
    nodes = []
    for k, node in enumerate(model.nodes):
        entry = {"name": node.name, "states": list(node.state_labels)}
        if node.components is not None:
            entry["components"] = list(node.components)
        entry["parents"] = [model.nodes[p].name for p in model.parents[k]]
        entry["cims"] = None if model.cims is None else {str(c): m.tolist() for c, m in enumerate(model.cims[k])}
        nodes.append(entry)
    init = model.initial
    if init.is_factored:
        initial = {"kind": "factored", "marginals": [m.tolist() for m in init.marginals]}
    else:
        initial = {"kind": "joint", "support": init.support.tolist(), "probs": init.probs.tolist()}
    return {"format": MODEL_FORMAT, "version": 1, "nodes": nodes, "initial": initial}


def model_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelError(f"not a {MODEL_FORMAT!r} document")
    try:
        specs = [NodeSpec(n["name"], len(n["states"]), n["states"], n.get("components")) for n in doc["nodes"]]
        parents = [list(n["parents"]) for n in doc["nodes"]]
        names = {s.name for s in specs}
        for n in doc["nodes"]:
            for p in n["parents"]:
                if p not in names:
                    raise UnknownVariable(f"node {n['name']!r} lists unknown parent {p!r}")
        raw = [n.get("cims") for n in doc["nodes"]]
        if all(c is None for c in raw):
            cims = None
        elif any(c is None for c in raw):
            raise ModelError("either every node or no node must carry CIMs")
        else:
            cims = [{int(k): v for k, v in c.items()} for c in raw]
        sizes = [s.cardinality for s in specs]
        init = doc.get("initial")
        if init is None:
            initial = None
        elif init.get("kind") == "factored":
            initial = InitialDistribution(sizes, marginals=init["marginals"])
        elif init.get("kind") == "joint":
            initial = InitialDistribution(sizes, support=init["support"], probs=init["probs"])
        else:
            raise ModelError(f"unknown initial distribution kind {init.get('kind')!r}")
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise ModelError(f"malformed model document: {exc!r}") from None
    return CtbnModel(specs, parents, cims, initial)


def dumps_model(model):
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def loads_model(text):
    """Parse a model document; errors carry the offending line number when known."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model JSON: {exc.msg}", line=exc.lineno) from None
    try:
        return model_from_dict(doc)
    except CtbnError as exc:
        if exc.line is None:
            exc.line = _guess_line(text, str(exc))
        raise


def _guess_line(text, message):
    # Point at the first line mentioning a quoted name from the message.
    for token in reversed(re.findall(r"'([^']+)'", message)):
        for i, line in enumerate(text.splitlines(), 1):
            if f'"{token}"' in line:
                return i
    return None


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
