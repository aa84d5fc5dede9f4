import pytest

from ctbn_au.aurec import PhonemeAlphabet, load_segments, textgrid_to_segments
from ctbn_au.errors import ParseError
from ctbn_au.textgrid import parse_textgrid

LONG = '''File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.6
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "phone"
        xmin = 0
        xmax = 0.6
        intervals: size = 4
        intervals [1]:
            xmin = 0
            xmax = 0.1
            text = "sp"
        intervals [2]:
            xmin = 0.1
            xmax = 0.2
            text = "B"
        intervals [3]:
            xmin = 0.2
            xmax = 0.5
            text = "EY1"
        intervals [4]:
            xmin = 0.5
            xmax = 0.6
            text = ""
    item [2]:
        class = "TextTier"
        name = "events"
        xmin = 0
        xmax = 0.6
        points: size = 1
        points [1]:
            number = 0.3
            mark = "say ""hi"""
'''

SHORT = '''File type = "ooTextFile"
Object class = "TextGrid"

0
0.6
<exists>
2
"IntervalTier"
"word"
0
0.6
1
0
0.6
"bay"
"IntervalTier"
"phone"
0
0.6
3
0
0.1
"sil"
0.1
0.2
"B"
0.2
0.6
"EY"
'''


class TestParse:
    def test_long_format(self):
        xmin, xmax, tiers = parse_textgrid(LONG)
        assert (xmin, xmax) == (0.0, 0.6)
        assert list(tiers) == ["phone"]
        assert tiers["phone"][1] == (0.1, 0.2, "B")

    def test_short_format(self):
        _, _, tiers = parse_textgrid(SHORT)
        assert set(tiers) == {"word", "phone"}
        assert tiers["phone"][2] == (0.2, 0.6, "EY")

    def test_truncated(self):
        with pytest.raises(ParseError):
            parse_textgrid(SHORT[: SHORT.index('"B"')])


class TestToSegments:
    def test_drops_silence_and_stress(self):
        sf = textgrid_to_segments(LONG, tier="phone", utterance="bay")
        assert sf.segments == [("B", 0.1, 0.2), ("EY", 0.2, 0.5)]
        assert sf.horizon == 0.6
        ev = load_segments(sf, PhonemeAlphabet.dataset())
        assert ev.n_transitions("O_p") == 3

    def test_short_format_segments(self):
        sf = textgrid_to_segments(SHORT, tier="phone")
        assert sf.segments == [("B", 0.1, 0.2), ("EY", 0.2, 0.6)]

    def test_missing_tier(self):
        with pytest.raises(ParseError, match="phones"):
            textgrid_to_segments(LONG, tier="phones")
