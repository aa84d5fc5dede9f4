import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctbn_au.aurec import (
    AU,
    AU_NAMES,
    OBS,
    PHONE,
    AuCodec,
    AuLabels,
    PhonemeAlphabet,
    SegmentFile,
    binary_to_fused,
    build_factorized_model,
    build_joint_model,
    build_training_trajectories,
    decode_au_state,
    encode_au_state,
    format_au_labels,
    format_segment_file,
    fused_to_binary,
    load_segments,
    parse_au_labels,
    parse_segment_file,
    recognize,
)
from ctbn_au.errors import (
    LengthMismatch,
    NegativeDuration,
    OutOfRange,
    OverlappingSegments,
    ParseError,
    UnknownAuName,
    UnknownPhoneme,
)
from ctbn_au.learning import fit
from ctbn_au.trajectory import Trajectory


class TestAuCodec:
    def test_bijection(self):
        seen = {encode_au_state(decode_au_state(i)) for i in range(128)}
        assert seen == set(range(128))
        assert len({decode_au_state(i) for i in range(128)}) == 128

    @pytest.mark.parametrize(
        "aus,index",
        [((), 0), (("AU27",), 1), (("AU25", "AU26"), 6), (("AU24", "AU26"), 10), (("AU18",), 64)],
    )
    def test_anchor_states(self, aus, index):
        assert encode_au_state(aus) == index
        assert decode_au_state(index) == frozenset(aus)

    def test_numbers_and_flags(self):
        assert encode_au_state({24, 26}) == 10
        assert encode_au_state([0, 0, 0, 1, 0, 1, 0]) == 10
        np.testing.assert_array_equal(AuCodec().decode_flags(10), [0, 0, 0, 1, 0, 1, 0])

    @given(st.lists(st.integers(0, 1), min_size=7, max_size=7))
    def test_flags_round_trip(self, flags):
        c = AuCodec()
        assert c.decode_flags(c.encode_flags(flags)).tolist() == flags

    def test_weights(self):
        c = AuCodec()
        assert [c.weight(a) for a in AU_NAMES] == [64, 32, 16, 8, 4, 2, 1]

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            decode_au_state(128)

    def test_unknown_name(self):
        with pytest.raises(UnknownAuName):
            encode_au_state({"AU12"})

    def test_labels(self):
        assert AuCodec().label(0) == "none"
        assert AuCodec().label(10) == "AU24+AU26"


class TestTopologies:
    def test_joint_cardinalities(self):
        m = build_joint_model()
        assert m.cardinalities == (29, 128, 29)
        assert m.n_contexts(0) == 128
        assert m.n_contexts(2) == 29
        assert m.node(AU).components == AU_NAMES

    def test_cmudict_alphabet(self):
        assert len(PhonemeAlphabet.cmudict()) == 40
        assert build_joint_model(PhonemeAlphabet.cmudict()).cardinalities == (40, 128, 40)

    def test_factorized_default(self):
        m = build_factorized_model()
        assert len(m.nodes) == 9
        assert all(m.node(a).cardinality == 2 for a in AU_NAMES)
        assert all(m.parents[m.index(a)] == (m.index(PHONE),) for a in AU_NAMES)

    def test_factorized_cycle(self):
        m = build_factorized_model(au_links=[("AU24", "AU25"), ("AU25", "AU24")])
        assert m.index("AU24") in m.parents[m.index("AU25")]
        assert m.index("AU25") in m.parents[m.index("AU24")]

    def test_factorized_unknown_au(self):
        with pytest.raises(UnknownAuName):
            build_factorized_model(au_links=[("AU24", "AU99")])

    def test_alphabet_rules(self):
        with pytest.raises(Exception):
            PhonemeAlphabet(("AA", "AA"), "SIL")
        with pytest.raises(UnknownPhoneme):
            PhonemeAlphabet.dataset().index("DH")


def seg_file(segs, horizon, utt="u"):
    return SegmentFile(utt, horizon, list(segs))


class TestLoadSegments:
    def test_gap_fill(self):
        ab = PhonemeAlphabet.dataset()
        ev = load_segments(seg_file([("B", 0.1, 0.2), ("EY", 0.2, 0.5)], 0.6), ab)
        labels = [ab.labels[s] for s in ev.states(OBS)]
        assert labels == ["SIL", "B", "EY", "SIL"]
        np.testing.assert_allclose(ev.starts(OBS), [0.0, 0.1, 0.2, 0.5])
        assert ev.horizon == 0.6

    def test_alphabet_choice(self):
        sf = seg_file([("DH", 0.0, 0.1)], 0.2)
        load_segments(sf, PhonemeAlphabet.cmudict())
        with pytest.raises(UnknownPhoneme):
            load_segments(sf, PhonemeAlphabet.dataset())
        ch = seg_file([("CH", 0.0, 0.1)], 0.2)
        load_segments(ch, PhonemeAlphabet.cmudict())
        with pytest.raises(UnknownPhoneme):
            load_segments(ch, PhonemeAlphabet(("B", "EY"), "SIL"))

    def test_silence_runs_merge(self):
        ab = PhonemeAlphabet.dataset()
        ev = load_segments(seg_file([("SIL", 0.0, 0.1), ("B", 0.2, 0.3)], 0.5), ab)
        assert [ab.labels[s] for s in ev.states(OBS)] == ["SIL", "B", "SIL"]
        np.testing.assert_allclose(ev.starts(OBS), [0.0, 0.2, 0.3])

    def test_same_label_merge(self):
        ab = PhonemeAlphabet.dataset()
        ev = load_segments(seg_file([("B", 0.0, 0.1), ("B", 0.1, 0.3)], 0.3), ab)
        assert ev.n_transitions(OBS) == 0

    @pytest.mark.parametrize(
        "segs,err",
        [
            ([("B", 0.2, 0.1)], NegativeDuration),
            ([("B", 0.0, 0.3), ("EY", 0.2, 0.4)], OverlappingSegments),
            ([("B", 0.0, 0.7)], OverlappingSegments),
        ],
    )
    def test_bad_segments(self, segs, err):
        with pytest.raises(err):
            load_segments(seg_file(segs, 0.6), PhonemeAlphabet.dataset())

    def test_covers_horizon(self):
        ab = PhonemeAlphabet.dataset()
        ev = load_segments(seg_file([], 0.4), ab)
        assert ev.segments(OBS) == [(0, 0.0, 0.4)]

    def test_text_round_trip(self):
        sf = seg_file([("B", 0.1, 0.2), ("EY", 0.2, 0.5)], 0.6, "utt7")
        back = parse_segment_file(format_segment_file(sf))
        assert back == sf

    def test_parse_errors_carry_line(self):
        with pytest.raises(ParseError) as exc:
            parse_segment_file("utterance,u\nhorizon,1\nB,0.1\n")
        assert exc.value.line == 3
        with pytest.raises(ParseError):
            parse_segment_file("B,0,0.1\n")


def labels(frames, rate=2.0, aus=AU_NAMES, utt="u"):
    return AuLabels(utt, rate, np.asarray(frames, dtype=np.int64), tuple(aus))


class TestAuLabels:
    def test_round_trip(self):
        lab = labels(np.eye(7, dtype=int)[[0, 3, 3, 6]], rate=59.94)
        text = format_au_labels(lab)
        assert text.splitlines()[3] == "1000000"
        back = parse_au_labels(text)
        np.testing.assert_array_equal(back.frames, lab.frames)
        assert back.frame_rate == 59.94

    def test_frame_count_checked(self):
        with pytest.raises(LengthMismatch):
            parse_au_labels("frame_rate,10\nn_frames,2\n0000000\n")

    def test_bad_digits(self):
        with pytest.raises(ParseError) as exc:
            parse_au_labels("frame_rate,10\nn_frames,1\n00x0000\n")
        assert exc.value.line == 3


class TestTrainingTrajectories:
    ab = PhonemeAlphabet.dataset()

    def _one(self, frames, kind="joint", horizon=2.0, rate=2.0):
        sf = seg_file([("B", 0.5, 1.5)], horizon)
        return build_training_trajectories([sf], [labels(frames, rate)], self.ab, kind=kind)[0]

    def test_run_length(self):
        f = np.zeros((4, 7), int)
        f[2:, AU_NAMES.index("AU25")] = 1
        t = self._one(f, horizon=2.0)
        assert t.segments(AU) == [(0, 0.0, 1.0), (4, 1.0, 2.0)]
        assert [self.ab.labels[s] for s in t.states(PHONE)] == ["SIL", "B", "SIL"]
        assert t.path(OBS)[0].tolist() == t.path(PHONE)[0].tolist()

    def test_simultaneous_flip_is_one_transition(self):
        f = np.zeros((4, 7), int)
        f[2:, [AU_NAMES.index("AU24"), AU_NAMES.index("AU25")]] = 1
        t = self._one(f)
        assert t.n_transitions(AU) == 1
        assert t.states(AU).tolist() == [0, 12]

    def test_all_zero(self):
        t = self._one(np.zeros((4, 7), int))
        assert t.segments(AU) == [(0, 0.0, 2.0)]

    def test_factorized_staggers(self):
        f = np.zeros((4, 7), int)
        f[2:, [AU_NAMES.index("AU24"), AU_NAMES.index("AU25")]] = 1
        t = self._one(f, kind="factorized")
        a24, a25 = t.change_times("AU24")[0], t.change_times("AU25")[0]
        assert a24 == 1.0 and a25 == pytest.approx(1.0 + 1 / 2000)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            self._one(np.zeros((3, 7), int))

    def test_recognized_segments_feed_observation(self):
        sf = seg_file([("B", 0.5, 1.5)], 2.0)
        rec = seg_file([("EY", 0.6, 1.4)], 2.0)
        t = build_training_trajectories([sf], [labels(np.zeros((4, 7), int))], self.ab, [rec])[0]
        assert [self.ab.labels[s] for s in t.states(OBS)] == ["SIL", "EY", "SIL"]


class TestFusedBinary:
    def test_round_trip_and_multi_count(self):
        c = AuCodec()
        fused = Trajectory(
            3.0, {AU: ([0, 10, 8, 12, 0], [0.0, 0.5, 1.0, 1.5, 2.5])}
        )  # 0->10 flips AU24+AU26, 12->0 flips AU24+AU25
        binary, multi = fused_to_binary(fused, c)
        assert multi == 2
        assert binary.state_at("AU26", 0.75) == 1 and binary.state_at("AU26", 1.2) == 0
        assert binary_to_fused(binary, c).states(AU).tolist() == [0, 8, 10, 8, 12, 4, 0]
        # the staggered intermediates are tiny; reading at segment midpoints recovers the path
        back = binary_to_fused(binary, c)
        mids = [0.25, 0.75, 1.25, 2.0, 2.75]
        assert back.state_at(AU, mids).tolist() == [0, 10, 8, 12, 0]

    def test_single_flips_are_lossless(self):
        fused = Trajectory(2.0, {AU: ([0, 4, 6], [0.0, 0.5, 1.0])})
        binary, multi = fused_to_binary(fused)
        assert multi == 0
        assert binary_to_fused(binary) == fused


def tiny_training():
    """AU25+AU26 switch on only while AA is spoken; silence always has no AU."""
    ab = PhonemeAlphabet(("AA",), "SIL")
    aus = ("AU25", "AU26")
    rng = np.random.default_rng(4)
    segs, recs, labs = [], [], []
    for i in range(30):
        a = float(rng.uniform(0.2, 0.8))
        b = a + float(rng.uniform(0.2, 0.6))
        sf = seg_file([("AA", round(a, 2), round(b, 2))], 1.5, f"u{i}")
        # the recognizer trails the true phones by a few tens of milliseconds
        lag = rng.uniform(0.01, 0.05, size=2).round(3)
        recs.append(seg_file([("AA", round(a, 2) + lag[0], round(b, 2) + lag[1])], 1.5, f"u{i}"))
        f = np.zeros((15, 2), int)
        f[int(round(a * 10)) : int(round(b * 10))] = 1
        segs.append(sf)
        labs.append(AuLabels(sf.utterance, 10.0, f, aus))
    data = build_training_trajectories(segs, labs, ab, recs, aus=aus)
    model, _ = fit(build_joint_model(ab, aus), data)
    return ab, model


class TestRecognize:
    def test_silence_gives_no_au(self):
        ab, model = tiny_training()
        ev = load_segments(seg_file([], 1.0), ab)
        rec = recognize(model, ev, frame_rate=10.0, backend="exact")
        for a in ("AU25", "AU26"):
            assert rec.probabilities[a].max() < 0.05
            assert rec.decisions[a].sum() == 0

    def test_speech_switches_au_on(self):
        ab, model = tiny_training()
        ev = load_segments(seg_file([("AA", 0.3, 0.8)], 1.0), ab)
        rec = recognize(model, ev, frame_rate=10.0, backend="exact")
        assert rec.decisions["AU25"][4:7].tolist() == [1, 1, 1]
        assert rec.decisions["AU25"][:2].tolist() == [0, 0]

    def test_threshold_one_gives_zeros(self):
        ab, model = tiny_training()
        ev = load_segments(seg_file([("AA", 0.3, 0.8)], 1.0), ab)
        rec = recognize(model, ev, frame_rate=10.0, threshold=1.0, backend="exact")
        assert all(d.sum() == 0 for d in rec.decisions.values())

    def test_frame_count_and_labels(self):
        ab, model = tiny_training()
        ev = load_segments(seg_file([("AA", 0.3, 0.8)], 1.0), ab)
        rec = recognize(model, ev, frame_rate=59.94, backend="exact")
        assert all(len(p) == 60 for p in rec.probabilities.values())
        lab = rec.labels("x")
        assert lab.frames.shape == (60, 2) and lab.aus == ("AU25", "AU26")

    def test_unknown_backend(self):
        ab, model = tiny_training()
        with pytest.raises(ValueError):
            recognize(model, load_segments(seg_file([], 1.0), ab), backend="vi")
