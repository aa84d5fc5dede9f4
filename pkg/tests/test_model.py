import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from ctbn_au.errors import (
    AbsorbingState,
    ModelError,
    NegativeOffDiagonal,
    NonSquare,
    OutOfRange,
    ParseError,
    RowSumViolation,
    StateSpaceTooLarge,
    UnknownVariable,
)
from ctbn_au.model import (
    CtbnModel,
    InitialDistribution,
    NodeSpec,
    StateCodec,
    amalgamate,
    decode_joint_state,
    dumps_model,
    encode_joint_state,
    expected_sojourn,
    loads_model,
    sojourn_density,
    transition_distribution,
    validate_cim,
)

from conftest import binary, chain_model, random_model
from oracles import brute_force_generator, joint_states, kronecker_sum


def state10_row():
    """CIM row out of AU state 10 whose exit rate is the worked 16.72."""
    q = np.zeros((11, 11))
    q[10, 6] = 9.12
    q[10, 2] = 6.59
    q[10, 0] = 1.01
    q[10, 10] = -16.72
    for i in range(10):
        q[i, 10] = 1.0
        q[i, i] = -1.0
    return validate_cim(q)


class TestValidateCim:
    def test_minimal_binary(self):
        c = validate_cim([[-1, 1], [2, -2]])
        np.testing.assert_array_equal(c.matrix, [[-1, 1], [2, -2]])
        assert c.n_states == 2

    def test_all_zero_is_valid(self):
        c = validate_cim([[0, 0], [0, 0]])
        assert c.exit_rate(0) == 0

    def test_row_sum_violation(self):
        with pytest.raises(RowSumViolation):
            validate_cim([[-1, 0.5], [1, -1]])

    def test_negative_off_diagonal(self):
        with pytest.raises(NegativeOffDiagonal):
            validate_cim([[1, -1], [1, -1]])

    def test_non_square(self):
        with pytest.raises(NonSquare):
            validate_cim([[-1, 1, 0], [1, -1, 0]])
        with pytest.raises(NonSquare):
            validate_cim([1.0, 2.0])

    def test_diagonal_recomputed_within_tolerance(self):
        c = validate_cim([[-(0.1 + 0.2 + 1e-12), 0.1, 0.2], [0, 0, 0], [1, 1, -2]])
        assert c.matrix[0, 0] == -math.fsum([0.1, 0.2])

    def test_tolerance_scales_with_diagonal(self):
        validate_cim([[-1e6 - 1e-4, 1e6], [1, -1]])
        with pytest.raises(RowSumViolation):
            validate_cim([[-1e6 - 1e-2, 1e6], [1, -1]])

    def test_immutable(self):
        c = validate_cim([[-1, 1], [2, -2]])
        with pytest.raises(ValueError):
            c.matrix[0, 0] = 5.0


class TestSojourn:
    def test_density_at_zero_is_rate(self):
        assert sojourn_density(validate_cim([[-1, 1], [1, -1]]), 0, 0.0) == 1.0

    def test_density_integrates_to_one(self):
        c = validate_cim([[-2, 2], [1, -1]])
        val, _ = scipy.integrate.quad(lambda t: sojourn_density(c, 0, t), 0, np.inf)
        assert abs(val - 1.0) < 1e-6

    def test_phone_b_state_zero(self):
        q = np.zeros((3, 3))
        q[0, 1], q[0, 2] = 6.0, 4.07
        q[0, 0] = -10.07
        q[1, 0] = q[2, 0] = 1.0
        q[1, 1] = q[2, 2] = -1.0
        c = validate_cim(q)
        t = np.linspace(0, 1, 11)
        np.testing.assert_allclose(sojourn_density(c, 0, t), 10.07 * np.exp(-10.07 * t), rtol=1e-15)

    def test_absorbing_density_is_zero(self):
        c = validate_cim([[0, 0], [1, -1]])
        np.testing.assert_array_equal(sojourn_density(c, 0, np.array([0.0, 3.0])), 0.0)

    def test_expected_sojourn(self):
        q = np.array([[-40.47, 40.47], [1.0, -1.0]])
        assert expected_sojourn(validate_cim(q), 0) == 1 / 40.47
        assert expected_sojourn(validate_cim([[0, 0], [1, -1]]), 0) == math.inf

    def test_state_out_of_range(self):
        with pytest.raises(OutOfRange):
            expected_sojourn(validate_cim([[-1, 1], [1, -1]]), 2)

    def test_worked_state_10(self):
        c = state10_row()
        assert expected_sojourn(c, 10) == 1 / 16.72
        p = transition_distribution(c, 10)
        assert p[6] == 9.12 / 16.72
        assert p[2] == 6.59 / 16.72
        assert p[10] == 0.0


class TestTransitionDistribution:
    def test_single_destination(self):
        np.testing.assert_array_equal(transition_distribution(validate_cim([[-3, 3], [1, -1]]), 0), [0, 1])

    def test_absorbing_raises(self):
        with pytest.raises(AbsorbingState):
            transition_distribution(validate_cim([[0, 0], [1, -1]]), 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_sums_to_one_and_inverse_sojourn(self, m, seed):
        rng = np.random.default_rng(seed)
        q = rng.uniform(0.01, 50, size=(m, m))
        np.fill_diagonal(q, 0)
        np.fill_diagonal(q, -q.sum(axis=1))
        c = validate_cim(q)
        for i in range(m):
            assert abs(transition_distribution(c, i).sum() - 1) < 1e-9
            assert abs(expected_sojourn(c, i) * c.exit_rate(i) - 1) < 1e-12


class TestStateCodec:
    def test_all_zero(self):
        assert StateCodec([3, 2, 4]).encode([0, 0, 0]) == 0

    def test_first_digit_most_significant(self):
        assert StateCodec([3, 2]).encode([2, 1]) == 5

    def test_exhaustive_round_trip(self):
        codec = StateCodec([3, 2, 4])
        for i, s in enumerate(joint_states([3, 2, 4])):
            assert codec.encode(s) == i
            np.testing.assert_array_equal(codec.decode(i), s)

    def test_single_node_identity(self):
        codec = StateCodec([5])
        assert [codec.encode([i]) for i in range(5)] == list(range(5))

    def test_out_of_range(self):
        codec = StateCodec([2, 2])
        with pytest.raises(OutOfRange):
            codec.encode([2, 0])
        with pytest.raises(OutOfRange):
            codec.decode(4)

    def test_model_helpers(self, chain):
        assert encode_joint_state(chain, [1, 0]) == 2
        np.testing.assert_array_equal(decode_joint_state(chain, 3), [1, 1])


class TestCtbnModel:
    def test_every_context_needs_a_cim(self):
        with pytest.raises(ModelError):
            CtbnModel([binary("A"), binary("B")], [[], ["A"]], [[[[-1, 1], [1, -1]]], [[[-1, 1], [1, -1]]]])

    def test_cims_by_dict(self):
        m = CtbnModel(
            [binary("A"), binary("B")],
            [[], ["A"]],
            [{0: [[-1, 1], [1, -1]]}, {0: [[-1, 1], [1, -1]], 1: [[-2, 2], [2, -2]]}],
        )
        assert m.cim("B", 1).exit_rate(0) == 2

    def test_self_parent_forbidden(self):
        with pytest.raises(ModelError):
            CtbnModel([binary("A")], [["A"]])

    def test_cycles_allowed(self):
        m = CtbnModel([binary("A"), binary("B")], [["B"], ["A"]])
        assert m.children == ((1,), (0,))

    def test_unknown_node(self, chain):
        with pytest.raises(UnknownVariable):
            chain.index("Z")

    def test_initial_must_sum_to_one(self):
        with pytest.raises(ModelError):
            InitialDistribution.factored([[0.5, 0.6]])

    def test_context_indexing(self):
        nodes = [NodeSpec("A", 3), NodeSpec("B", 2), NodeSpec("C", 2)]
        m = CtbnModel(nodes, [[], [], ["A", "B"]])
        assert m.n_contexts("C") == 6
        assert m.parent_context("C", [2, 1, 0]) == 5

    def test_initial_point_mass(self):
        d = InitialDistribution.point_mass([2, 3], [1, 2])
        v = d.vector()
        assert v[5] == 1 and v.sum() == 1


class TestAmalgamate:
    def test_single_node_is_its_cim(self):
        m = CtbnModel([binary("A")], [[]], [[[[-1.5, 1.5], [0.2, -0.2]]]])
        np.testing.assert_array_equal(amalgamate(m).toarray(), [[-1.5, 1.5], [0.2, -0.2]])

    @pytest.mark.parametrize("n_nodes", [2, 3])
    def test_independent_nodes_kronecker_sum(self, n_nodes, rng):
        m = random_model(rng, [2] * n_nodes, [[] for _ in range(n_nodes)])
        expected = kronecker_sum(*[m.cims[k][0] for k in range(n_nodes)])
        np.testing.assert_allclose(amalgamate(m).toarray(), expected, rtol=1e-15, atol=1e-15)

    def test_matches_definition(self, rng):
        m = random_model(rng, [3, 2, 2], [["X2"], ["X0", "X2"], ["X1"]])
        np.testing.assert_allclose(amalgamate(m).toarray(), brute_force_generator(m), rtol=1e-14, atol=1e-14)

    def test_rows_sum_to_zero(self, rng):
        m = random_model(rng, [3, 2, 4], [["X1"], ["X2"], ["X0"]])
        q = amalgamate(m).toarray()
        np.testing.assert_allclose(q.sum(axis=1), 0.0, atol=1e-12)

    def test_single_node_differences_only(self, rng):
        m = random_model(rng, [3, 2, 2], [["X1"], ["X0"], ["X0", "X1"]])
        q = amalgamate(m).toarray()
        states = np.array(joint_states(m.cardinalities))
        i, j = np.nonzero(q)
        diff = (states[i] != states[j]).sum(axis=1)
        assert np.all((diff == 1) | (i == j))

    def test_nonzero_count(self, rng):
        m = random_model(rng, [3, 2, 2], [["X1"], ["X0"], []])
        cims = [c.copy() for c in m.cims]
        cims[0][1, 0, 2] = 0.0
        cims[0][1, 0, 0] = -cims[0][1, 0, 1]
        m = m.with_cims(cims)
        q = amalgamate(m).toarray()
        off = q.copy()
        np.fill_diagonal(off, 0)
        expected = 0
        for s in joint_states(m.cardinalities):
            for k in range(3):
                ctx = m.parent_context(k, s)
                row = m.cims[k][ctx, s[k]]
                expected += int(np.sum(np.delete(row, s[k]) > 0))
        assert np.count_nonzero(off) == expected

    @pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
    def test_expm_rows_sum_to_one(self, t, rng):
        m = random_model(rng, [2, 3, 2], [["X1"], ["X0", "X2"], ["X1"]])
        p = scipy.linalg.expm(amalgamate(m).toarray() * t)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-8)

    def test_sparse_above_dense_limit(self, rng):
        m = random_model(rng, [2] * 5, [[] for _ in range(5)])
        j = amalgamate(m, dense_limit=16)
        assert j.is_sparse
        np.testing.assert_allclose(j.toarray(), amalgamate(m).toarray())

    def test_cap(self, rng):
        m = random_model(rng, [2] * 5, [[] for _ in range(5)])
        with pytest.raises(StateSpaceTooLarge):
            amalgamate(m, max_states=16)


class TestSerialization:
    def test_round_trip_bit_exact(self, rng):
        m = random_model(rng, [3, 2, 2], [["X2"], ["X0"], ["X0", "X1"]])
        text = dumps_model(m)
        back = loads_model(text)
        assert dumps_model(back) == text
        for a, b in zip(m.cims, back.cims):
            np.testing.assert_array_equal(a, b)

    def test_fifteen_digit_decimals(self):
        q = [[-0.123456789012345, 0.123456789012345], [987.654321098765, -987.654321098765]]
        m = CtbnModel([binary("A")], [[]], [[q]])
        back = loads_model(dumps_model(m))
        assert back.cims[0][0, 1, 0] == 987.654321098765
        assert back.cims[0][0, 0, 1] == 0.123456789012345

    def test_structure_only_and_joint_initial(self):
        init = InitialDistribution([2, 2], support=[1, 3], probs=[0.25, 0.75])
        m = CtbnModel([binary("A"), binary("B")], [[], ["A"]], initial=init)
        back = loads_model(dumps_model(m))
        assert back.is_structure_only
        np.testing.assert_array_equal(back.initial.vector(), [0, 0.25, 0, 0.75])

    def test_json_error_has_line(self):
        with pytest.raises(ParseError) as exc:
            loads_model('{\n "format": "ctbn-model",\n "nodes": [}\n')
        assert exc.value.line == 3

    def test_unknown_parent_points_at_line(self):
        text = dumps_model(chain_model()).replace('"parents": [\n    "H"', '"parents": [\n    "Q"')
        with pytest.raises(UnknownVariable) as exc:
            loads_model(text)
        assert '"Q"' in text.splitlines()[exc.value.line - 1]
