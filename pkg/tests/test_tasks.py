from collections import Counter
from itertools import islice
from random import Random

import pytest

from mgml.errors import ConfigError, SchemaError, TaskNotFoundError
from mgml.script import parse_time_span, script_window, serialize_script
from mgml.tasks import (
    PLACEHOLDER_RE, all_tasks, derive_aux, finetune_set, get_task, instantiate,
    pretrain_stream, select_tasks, split_framed_blocks, wrap_tokens_text,
)
from mgml.vocab import MOTION_CLOSE, MOTION_OPEN

# Golden transcription of the published template tables: name -> (granularity,
# input-type count, template count).
EXPECTED_TASKS = {
    "Text-to-Motion": ("coarse", 1, 4),
    "Motion-to-Text": ("coarse", 1, 4),
    "Motion-to-(Text, Motion Script)": ("fine", 1, 3),
    "Motion-to-Motion Script": ("fine", 1, 4),
    "(Motion Script, Snippet Motion Script)-to-Time": ("fine", 1, 4),
    "(Motion, Snippet Motion)-to-Time": ("coarse", 1, 4),
    "(Text, Motion Script)-to-Motion": ("fine", 1, 3),
    "(Time, Motion Script)-to-Snippet Motion Script": ("fine", 2, 3),
    "(Time, Motion)-to-Snippet Motion": ("coarse", 2, 3),
    "(Motion, Snippet Motion Script)-to-Time": ("fine", 2, 4),
    "(Motion Script, Snippet Motion)-to-Time": ("fine", 2, 3),
    "(Text, Head Motion)-to-Motion": ("coarse", 2, 3),
    "(Text, Tail Motion)-to-Motion": ("coarse", 2, 3),
    "(Text, Random Motions)-to-Motion": ("coarse", 2, 3),
    "(Text, Motion Script, Head Motion)-to-Motion": ("fine", 2, 3),
    "(Text, Motion Script, Tail Motion)-to-Motion": ("fine", 2, 4),
    "(Text, Motion Script, Random Motions)-to-Motion": ("fine", 2, 3),
    "(Text, Time)-to-Motion": ("coarse", 2, 3),
    "(Motion, Time)-to-Snippet Motion Script": ("fine", 2, 4),
    "(Text, Snippet Motion)-to-Time": ("coarse", 2, 3),
    "(Text, Motion Script, Snippet Motion)-to-Time": ("fine", 2, 3),
    "(Text, Motion Script, Time)-to-Motion": ("fine", 2, 3),
    "(Text, Time, Head Motion)-to-Motion": ("coarse", 3, 3),
    "(Text, Time, Tail Motion)-to-Motion": ("coarse", 3, 3),
    "(Text, Time, Random Motions)-to-Motion": ("coarse", 3, 3),
    "(Text, Motion Script, Time, Head Motion)-to-Motion": ("fine", 3, 3),
    "(Text, Motion Script, Time, Tail Motion)-to-Motion": ("fine", 3, 3),
    "(Text, Motion Script, Time, Random Motions)-to-Motion": ("fine", 3, 4),
}


class TestRegistry:
    def test_exactly_28_tasks(self):
        assert len(all_tasks()) == 28

    def test_names_match_golden_manifest(self):
        assert {t.name for t in all_tasks()} == set(EXPECTED_TASKS)

    def test_granularity_split_12_coarse_16_fine(self):
        tasks = all_tasks()
        assert sum(t.granularity == "coarse" for t in tasks) == 12
        assert sum(t.granularity == "fine" for t in tasks) == 16

    def test_golden_structure(self):
        for task in all_tasks():
            granularity, n_inputs, n_templates = EXPECTED_TASKS[task.name]
            assert task.granularity == granularity, task.name
            assert len(task.input_types) == n_inputs, task.name
            assert len(task.templates) == n_templates, task.name

    def test_fine_means_script_placeholder(self):
        for task in all_tasks():
            has_script = any(
                p in task.placeholders
                for p in ("[motion script]", "[snippet motion script]")
            )
            assert (task.granularity == "fine") == has_script, task.name

    def test_pinned_template_strings(self):
        t2m = get_task("Text-to-Motion")
        assert "Give me a motion that represents the idea of [caption]." in t2m.templates
        tms = get_task("(Time, Motion Script)-to-Snippet Motion Script")
        assert any(t.startswith("Detail [time] in the scope of the whole motion script.")
                   for t in tms.templates)
        m2s = get_task("Motion-to-Motion Script")
        assert m2s.output.template == "### Motion Script ### [motion script]"
        assert tms.output.template == "### [time]'s Motion Script ### [snippet motion script]"
        slicer = get_task("(Time, Motion)-to-Snippet Motion")
        assert "Capture the motion for [time] within [motion]." in slicer.templates

    def test_no_motion_generation_from_detailed_text_alone(self):
        # Tasks that output motion and condition on a script always carry a
        # coarse caption too.
        for task in all_tasks():
            if "[motion]" not in task.output.template and \
               "[snippet motion]" not in task.output.template:
                continue
            scripts = {"[motion script]", "[snippet motion script]"} & set(task.placeholders)
            if scripts:
                assert "[caption]" in task.placeholders, task.name

    def test_framed_headers_byte_exact(self):
        headers = set()
        for task in all_tasks():
            for text in task.templates + (task.output.template,):
                _, blocks = split_framed_blocks(text)
                headers.update(name for name, _ in blocks)
        assert headers == {
            "Motion Summary", "Motion Script", "Whole Motion Script",
            "Snippet Motion Script", "[time]'s Motion Script",
        }

    def test_unknown_task_lookup(self):
        with pytest.raises(TaskNotFoundError):
            get_task("Motion-to-Sonnet")
        with pytest.raises(LookupError):
            get_task("Motion-to-Sonnet")

    def test_select_tasks_exclusion(self):
        remaining = select_tasks(None, ["Text-to-Motion"])
        assert len(remaining) == 27
        assert all(t.name != "Text-to-Motion" for t in remaining)


class TestDeriveAux:
    def test_head_tail_ceiling(self, tiny_samples):
        sample = next(s for s in tiny_samples if len(s.tokens) == 8)
        bindings = derive_aux(sample, ["[head motion]", "[tail motion]"], seed=1)
        assert bindings["[head motion]"] == wrap_tokens_text(sample.tokens[:2])
        assert bindings["[tail motion]"] == wrap_tokens_text(sample.tokens[-2:])

    def test_single_snippet_span_forced(self, tiny_quantizer):
        from conftest import make_samples
        sample = make_samples(tiny_quantizer, n=1, seed=99, min_snippets=1,
                              max_snippets=1)[0]
        bindings = derive_aux(sample, ["[time]"], seed=5)
        assert bindings["[time]"] == "from 0.0s to 0.5s"

    def test_deterministic(self, tiny_samples):
        needs = ["[time]", "[random motions]", "[snippet motion]"]
        a = derive_aux(tiny_samples[0], needs, seed=7)
        b = derive_aux(tiny_samples[0], needs, seed=7)
        assert a == b

    def test_random_motions_order_preserving(self, tiny_samples):
        sample = tiny_samples[0]
        for seed in range(20):
            text = derive_aux(sample, ["[random motions]"], seed=seed)["[random motions]"]
            inner = text[len(MOTION_OPEN):-len(MOTION_CLOSE)]
            ids = [int(x) for x in inner.replace("<motion_id_", " ").replace(">", " ").split()]
            assert 1 <= len(ids) <= max(1, len(sample.tokens) // 4)
            # order-preserving subsequence of the token list
            cursor = 0
            for token in ids:
                cursor = list(sample.tokens).index(token, cursor) + 1


class TestInstantiate:
    def test_text_to_motion_published_template(self, tiny_samples):
        task = get_task("Text-to-Motion")
        idx = task.templates.index("Give me a motion that represents the idea of [caption].")
        pair = instantiate(task, tiny_samples[0], seed=3, template_index=idx,
                           caption_index=0)
        assert pair.input_text == (
            f"Give me a motion that represents the idea of {tiny_samples[0].captions[0]}."
        )
        assert pair.target_text == wrap_tokens_text(tiny_samples[0].tokens)

    def test_motion_to_script_target_framing(self, tiny_samples):
        task = get_task("Motion-to-Motion Script")
        pair = instantiate(task, tiny_samples[0], seed=4)
        assert pair.target_text == (
            "### Motion Script ### " + serialize_script(tiny_samples[0].script)
        )

    def test_time_target_matches_snippet_block(self, tiny_samples):
        task = get_task("(Motion Script, Snippet Motion Script)-to-Time")
        for seed in range(30):
            pair = instantiate(task, tiny_samples[seed % len(tiny_samples)], seed=seed)
            span = parse_time_span(pair.target_text)
            sample = tiny_samples[seed % len(tiny_samples)]
            _, blocks = split_framed_blocks(pair.input_text)
            blocks = dict(blocks)
            expected = serialize_script(script_window(sample.script, span))
            assert blocks["Snippet Motion Script"] == expected
            assert blocks["Whole Motion Script"] == serialize_script(sample.script)

    def test_no_unresolved_placeholders_any_task(self, tiny_samples):
        for task in all_tasks():
            for seed in range(3):
                pair = instantiate(task, tiny_samples[seed], seed=seed)
                assert not PLACEHOLDER_RE.search(pair.input_text), (task.name, pair.input_text)
                assert not PLACEHOLDER_RE.search(pair.target_text), (task.name, pair.target_text)
                assert pair.target_text

    def test_span_scope_head_consistency(self, tiny_samples):
        # The target segment must begin with the conditioning head fragment.
        task = get_task("(Text, Time, Head Motion)-to-Motion")
        for seed in range(20):
            pair = instantiate(task, tiny_samples[seed % len(tiny_samples)], seed=seed)
            head = pair.input_text.split(MOTION_OPEN)[1].split(MOTION_CLOSE)[0]
            body = pair.target_text[len(MOTION_OPEN):-len(MOTION_CLOSE)]
            assert body.startswith(head)

    def test_determinism(self, tiny_samples):
        task = get_task("(Text, Motion Script, Time, Random Motions)-to-Motion")
        a = instantiate(task, tiny_samples[1], seed=42)
        b = instantiate(task, tiny_samples[1], seed=42)
        assert a == b

    def test_missing_caption_schema_error(self, tiny_samples):
        import dataclasses
        task = get_task("Text-to-Motion")
        bare = dataclasses.replace(tiny_samples[0], captions=())
        with pytest.raises(SchemaError):
            instantiate(task, bare, seed=0)


class TestPretrainStream:
    def test_uniform_mixture_small(self, tiny_samples):
        stream = pretrain_stream(tiny_samples, seed=0)
        counts = Counter(pair.task for pair in islice(stream, 5600))
        assert set(counts) == {t.name for t in all_tasks()}
        expected = 5600 / 28
        for name, count in counts.items():
            assert abs(count - expected) / expected < 0.45, (name, count)

    def test_deterministic(self, tiny_samples):
        a = [p.input_text for p in islice(pretrain_stream(tiny_samples, seed=9), 40)]
        b = [p.input_text for p in islice(pretrain_stream(tiny_samples, seed=9), 40)]
        assert a == b

    def test_single_task_whitelist(self, tiny_samples):
        stream = pretrain_stream(tiny_samples, seed=1, tasks=["Motion-to-Text"])
        assert all(p.task == "Motion-to-Text" for p in islice(stream, 50))

    def test_leave_one_out_exclusion(self, tiny_samples):
        stream = pretrain_stream(tiny_samples, seed=2, exclude=["Text-to-Motion"])
        assert all(p.task != "Text-to-Motion" for p in islice(stream, 300))

    def test_unsatisfiable_task_rejected(self, tiny_samples):
        import dataclasses
        captionless = [dataclasses.replace(s, captions=()) for s in tiny_samples]
        with pytest.raises(ConfigError):
            pretrain_stream(captionless, seed=0, tasks=["Text-to-Motion"])

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            pretrain_stream([], seed=0)


class TestFinetuneSet:
    def test_cartesian_count_for_caption_task(self, tiny_samples):
        pairs = finetune_set(tiny_samples, "Motion-to-Text", epoch=0)
        assert len(pairs) == len(tiny_samples) * 3  # three captions per sample

    def test_empty_dataset(self):
        assert finetune_set([], "Motion-to-Text") == []

    def test_epoch_rotates_templates_not_samples(self, tiny_samples):
        a = finetune_set(tiny_samples, "Motion-to-Text", epoch=0)
        b = finetune_set(tiny_samples, "Motion-to-Text", epoch=1)
        assert [(p.motion_id, p.task) for p in a] == [(p.motion_id, p.task) for p in b]
        assert [(p.template_index + 1) % 4 for p in a] == [p.template_index for p in b]

    def test_ordering_by_motion_id(self, tiny_samples):
        pairs = finetune_set(tiny_samples, "Motion-to-Motion Script")
        assert [p.motion_id for p in pairs] == sorted(p.motion_id for p in pairs)

    def test_unknown_task(self, tiny_samples):
        with pytest.raises(LookupError):
            finetune_set(tiny_samples, "No Such Task")
