from __future__ import annotations

import json
import re

import pytest
from hypothesis import given, strategies as st

from crashground.parser import (
    extract_json_block,
    normalize_type,
    parse_pass1,
    parse_pass2,
    parse_type,
)
from crashground.types import CollisionType as CT, ParseError


class TestExtractJsonBlock:
    def test_bare_object_returned_unchanged(self):
        s = '{"time": 12, "x": 640, "y": 380, "type": "t-bone"}'
        assert extract_json_block(s) == s

    def test_fenced_object_with_prose(self):
        s = 'Sure! ```json\n{"time": 12.3, "x": 500, "y": 500}\n```'
        assert extract_json_block(s) == '{"time": 12.3, "x": 500, "y": 500}'

    def test_no_object(self):
        with pytest.raises(ParseError):
            extract_json_block("no json here")

    def test_first_of_several_wins(self):
        s = 'a {"time": 1, "x": 2, "y": 3} then {"time": 9, "x": 9, "y": 9}'
        assert json.loads(extract_json_block(s))["time"] == 1

    def test_braces_inside_strings_do_not_confuse_depth(self):
        s = 'note {"type": "odd } brace", "time": 4} tail'
        assert json.loads(extract_json_block(s)) == {"type": "odd } brace", "time": 4}

    def test_template_echo_is_skipped(self):
        s = 'format {"time": <seconds>} answer {"time": 3, "x": 1, "y": 2}'
        assert json.loads(extract_json_block(s))["time"] == 3

    def test_nested_object_kept_whole(self):
        s = 'x {"a": {"b": 1}, "time": 2} y'
        assert json.loads(extract_json_block(s)) == {"a": {"b": 1}, "time": 2}

    def test_unbalanced_fails(self):
        with pytest.raises(ParseError):
            extract_json_block('{"time": 3, "x": 1')

    @given(st.text(max_size=80))
    def test_idempotent(self, text):
        try:
            once = extract_json_block(text)
        except ParseError:
            return
        assert extract_json_block(once) == once

    @given(st.dictionaries(st.sampled_from(["time", "x", "y", "type"]),
                           st.one_of(st.integers(-5, 2000), st.text(max_size=5)), min_size=1),
           st.text(alphabet="abc .!\n`", max_size=20), st.text(alphabet="abc .!\n`", max_size=20))
    def test_recovers_object_from_chatter(self, obj, pre, post):
        blob = json.dumps(obj)
        assert json.loads(extract_json_block(pre + blob + post)) == obj


class TestParsePass1:
    def test_schema_example(self):
        r = parse_pass1('{"time": 12, "x": 640, "y": 380, "type": "t-bone"}', 26.8)
        assert (r.t1, r.raw_x1, r.raw_y1, r.c1) == (12.0, 640.0, 380.0, CT.T_BONE)

    def test_clamping(self):
        r = parse_pass1('{"time": 99, "x": 1200, "y": -5, "type": "single"}', 26.8)
        assert (r.t1, r.raw_x1, r.raw_y1, r.c1) == (26.8, 1000.0, 0.0, CT.SINGLE)

    def test_negative_time_clamped_to_zero(self):
        assert parse_pass1('{"time": -3, "x": 1, "y": 1, "type": "single"}', 10).t1 == 0.0

    def test_missing_type(self):
        with pytest.raises(ParseError):
            parse_pass1('{"time": 12, "x": 640, "y": 380}', 26.8)

    def test_numeric_strings_accepted(self):
        r = parse_pass1('{"time": "12.5", "x": "640", "y": " 380 ", "type": "rear_end"}', 26.8)
        assert (r.t1, r.raw_x1, r.raw_y1, r.c1) == (12.5, 640.0, 380.0, CT.REAR_END)

    @pytest.mark.parametrize("bad", [
        '{"time": "soon", "x": 1, "y": 1, "type": "single"}',
        '{"time": true, "x": 1, "y": 1, "type": "single"}',
        '{"time": null, "x": 1, "y": 1, "type": "single"}',
        '{"time": 1, "x": [1], "y": 1, "type": "single"}',
        '{"time": 1, "x": 1, "y": 1, "type": "collision"}',
        '{"time": 1, "y": 1, "type": "single"}',
    ])
    def test_rejections(self, bad):
        with pytest.raises(ParseError):
            parse_pass1(bad, 20.0)

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6),
           st.sampled_from(list(CT)), st.floats(0.1, 600))
    def test_output_always_within_bounds(self, t, x, y, c, D):
        text = json.dumps({"time": t, "x": x, "y": y, "type": c.value})
        r = parse_pass1(text, D)
        assert 0.0 <= r.t1 <= D
        assert 0.0 <= r.raw_x1 <= 1000.0 and 0.0 <= r.raw_y1 <= 1000.0
        assert r.c1 is c


class TestParsePass2:
    def test_schema_example(self):
        r = parse_pass2('{"time": 11.4, "x": 512, "y": 488}')
        assert (r.t2, r.raw_x2, r.raw_y2) == (11.4, 512.0, 488.0)

    def test_abstention(self):
        r = parse_pass2('{"time": -1, "x": 0, "y": 0}')
        assert (r.t2, r.raw_x2, r.raw_y2) == (-1.0, 0.0, 0.0)
        assert r.is_sentinel

    def test_invalid_coordinates_preserved(self):
        r = parse_pass2('{"time": 11.4, "x": -1, "y": -1}')
        assert (r.t2, r.raw_x2, r.raw_y2) == (11.4, -1.0, -1.0)

    def test_missing_key(self):
        with pytest.raises(ParseError):
            parse_pass2('{"time": 11.4, "x": 512}')

    @given(st.floats(-2000, 2000, allow_nan=False), st.floats(-5000, 5000), st.floats(-5000, 5000))
    def test_values_round_trip(self, t, x, y):
        r = parse_pass2(json.dumps({"time": t, "x": x, "y": y}))
        assert (r.t2, r.raw_x2, r.raw_y2) == (t, x, y)


class TestNormalizeType:
    @pytest.mark.parametrize("text,expected", [
        ("head_on", CT.HEAD_ON), ("T-Bone", CT.T_BONE), ("rear end", CT.REAR_END),
        ("SIDESWIPE", CT.SIDESWIPE), (" single ", CT.SINGLE), ("Head-On", CT.HEAD_ON),
    ])
    def test_accepts(self, text, expected):
        assert normalize_type(text) is expected

    @pytest.mark.parametrize("text", ["collision", "", "headon-ish", "t", "rear", "single car"])
    def test_rejects(self, text):
        with pytest.raises(ParseError):
            normalize_type(text)

    @given(st.sampled_from(["head on", "rear end", "t bone", "sideswipe", "single"]),
           st.sampled_from(["-", "_", " "]), st.data())
    def test_total_on_case_and_separator_closure(self, name, sep, data):
        spelled = name.replace(" ", sep)
        flips = data.draw(st.lists(st.booleans(), min_size=len(spelled), max_size=len(spelled)))
        cased = "".join(ch.upper() if f else ch for ch, f in zip(spelled, flips))
        assert normalize_type(cased).value.replace("-", " ") == name.replace("-", " ")

    @given(st.text(alphabet=st.sampled_from("headonrtbsiwplgxHEON-_ \t"), max_size=14) | st.text(max_size=8))
    def test_rejects_everything_else(self, text):
        # token view: the words between separators must spell exactly one class
        known = {("head", "on"): CT.HEAD_ON, ("rear", "end"): CT.REAR_END, ("t", "bone"): CT.T_BONE,
                 ("sideswipe",): CT.SIDESWIPE, ("single",): CT.SINGLE}
        tokens = tuple(w for w in re.split(r"[-_\s]+", text.lower()) if w)
        expected = known.get(tokens)
        if expected is None:
            with pytest.raises(ParseError):
                normalize_type(text)
        else:
            assert normalize_type(text) is expected


class TestParseType:
    @pytest.mark.parametrize("text,expected", [
        ("t_bone", CT.T_BONE),
        ("**rear-end**", CT.REAR_END),
        ('{"type": "head_on"}', CT.HEAD_ON),
        ("The collision type is sideswipe.", CT.SIDESWIPE),
        ("Single.", CT.SINGLE),
    ])
    def test_accepts(self, text, expected):
        assert parse_type(text) is expected

    @pytest.mark.parametrize("text", ["unclear", "either head-on or t-bone", ""])
    def test_rejects(self, text):
        with pytest.raises(ParseError):
            parse_type(text)
