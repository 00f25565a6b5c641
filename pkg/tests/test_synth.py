from random import Random

import numpy as np
import pytest

from mgml.motion import make_snippet_grid
from mgml.synth import (
    DEFAULT_CHANNELS, MotionEvent, SyntheticSpec, caption_for,
    edit_spec_statement, parse_statement, random_spec, script_for,
    statement_for, synth_motion,
)


def spec_of(events, **kwargs):
    return SyntheticSpec(tuple(MotionEvent(*e) for e in events), **kwargs)


class TestSynthMotion:
    def test_single_primitive_two_snippets(self):
        spec = spec_of([("right arm", 1, 2)])
        motion, statements = synth_motion(spec)
        assert statements == (
            ("raise your right arm upward",), ("raise your right arm upward",),
        )
        col = spec.channel_index("right arm")
        ramp = motion.frames[:, col]
        assert ramp[-1] == pytest.approx(1.0)
        assert np.all(np.diff(ramp) > 0)  # monotone ramp 0 -> 1
        others = np.delete(motion.frames, col, axis=1)
        assert np.all(others == 0)

    def test_stillness_motion_is_constant(self):
        spec = spec_of([(None, 1, 3)])
        motion, statements = synth_motion(spec)
        assert statements == ((), (), ())
        assert np.all(motion.frames == motion.frames[0])

    def test_localization_oracle(self):
        spec = spec_of([("left leg", 1, 1), ("right arm", -1, 1)])
        _, statements = synth_motion(spec)
        lower = statement_for(DEFAULT_CHANNELS[1], -1)
        assert lower not in statements[0]
        assert statements[1] == (lower,)

    def test_determinism(self):
        rng = Random(3)
        spec = random_spec(rng, seed=42)
        m1, s1 = synth_motion(spec)
        m2, s2 = synth_motion(spec)
        assert np.array_equal(m1.frames, m2.frames)
        assert s1 == s2

    def test_statement_nonempty_iff_event_overlaps(self):
        rng = Random(5)
        for _ in range(50):
            spec = random_spec(rng, seed=rng.randrange(1 << 16), stillness_prob=0.3,
                               max_event_snippets=2)
            _, statements = synth_motion(spec)
            cursor = 0
            active = [False] * spec.n_snippets
            for event in spec.events:
                for s in range(cursor, cursor + event.snippets):
                    active[s] = event.channel is not None
                cursor += event.snippets
            assert [bool(s) for s in statements] == active

    def test_grid_alignment(self):
        spec = spec_of([("head", 1, 2), (None, 1, 1), ("root x", -1, 1)])
        motion, statements = synth_motion(spec)
        grid = make_snippet_grid(motion, spec.snippet_seconds)
        assert grid.n_snippets == len(statements) == 4


class TestCaptions:
    def test_caption_lists_events_in_order(self):
        spec = spec_of([("left arm", 1, 1), ("right leg", -1, 1)])
        assert caption_for(spec) == (
            "a person raises the left arm upward then swings the right leg backward"
        )

    def test_caption_variants_share_clauses(self):
        spec = spec_of([("head", 1, 1)])
        assert caption_for(spec, 1) == "someone turns the head left slowly"

    def test_stillness_caption(self):
        assert caption_for(spec_of([(None, 1, 2)])) == "a person stays still"


class TestEditing:
    def test_parse_statement_round_trip(self):
        spec = spec_of([("left arm", 1, 1)])
        for channel in DEFAULT_CHANNELS:
            for d in (1, -1):
                assert parse_statement(spec, statement_for(channel, d)) == (channel.name, d)
        assert parse_statement(spec, "do something odd") is None

    def test_edit_changes_only_one_snippet_channels(self):
        spec = spec_of([("right arm", 1, 1), ("left leg", 1, 1), ("head", -1, 1)])
        before, _ = synth_motion(spec)
        edited = edit_spec_statement(spec, 1, "raise your left arm upward")
        after, statements = synth_motion(edited)
        assert statements[1] == ("raise your left arm upward",)
        delta = np.abs(np.asarray(before.frames) - np.asarray(after.frames))
        per = 10  # 0.5 s at 20 fps
        assert np.all(delta[:per] <= 1e-9)
        assert np.all(delta[2 * per:] <= 1e-9)
        touched = {spec.channel_index("left leg"), spec.channel_index("left arm")}
        snippet = delta[per:2 * per]
        for c in range(spec.dim):
            if c in touched:
                assert snippet[:, c].max() > 0.1
            else:
                assert snippet[:, c].max() <= 1e-9

    def test_edit_to_stillness(self):
        spec = spec_of([("right arm", 1, 1)])
        edited = edit_spec_statement(spec, 0, "")
        _, statements = synth_motion(edited)
        assert statements == ((),)

    def test_edit_rejects_multi_snippet_events(self):
        spec = spec_of([("right arm", 1, 2)])
        with pytest.raises(ValueError):
            edit_spec_statement(spec, 0, "lower your right arm downward")


class TestRandomSpec:
    def test_unique_statements_within_motion(self):
        rng = Random(9)
        for _ in range(100):
            spec = random_spec(rng, seed=rng.randrange(1 << 16))
            _, statements = synth_motion(spec)
            flat = [s for snippet in statements for s in snippet]
            assert len(flat) == len(set(flat))

    def test_snippet_budget_respected(self):
        rng = Random(10)
        for _ in range(100):
            spec = random_spec(rng, min_snippets=2, max_snippets=8)
            assert 2 <= spec.n_snippets <= 8
