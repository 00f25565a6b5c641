import numpy as np
import pytest

from mgml.embedding import (
    ContrastiveEmbedder, EventSequenceEmbedder, StatsHashEmbedder,
    embed_motions, embed_texts, train_contrastive,
)
from mgml.metrics import retrieval_metrics
from mgml.script import serialize_script
from mgml.synth import MotionEvent, SyntheticSpec, caption_for, script_for, synth_motion


def spec_of(events):
    return SyntheticSpec(tuple(MotionEvent(*e) for e in events))


@pytest.fixture(scope="module")
def oracle():
    return EventSequenceEmbedder()


class TestEventSequenceEmbedder:
    def test_motion_script_caption_agree_exactly(self, oracle):
        specs = [
            spec_of([("left arm", 1, 1), ("right leg", -1, 1)]),
            spec_of([("head", 1, 2), ("root x", -1, 1)]),
            spec_of([("upper body", -1, 1)]),
        ]
        for spec in specs:
            motion, _ = synth_motion(spec)
            from_motion = oracle.motion_embed(motion)
            from_script = oracle.text_embed(serialize_script(script_for(spec)))
            from_caption = oracle.text_embed(caption_for(spec))
            assert np.array_equal(from_motion, from_script)
            assert np.array_equal(from_motion, from_caption)

    def test_distinct_motions_distinct_embeddings(self, oracle):
        a, _ = synth_motion(spec_of([("left arm", 1, 1), ("right leg", -1, 1)]))
        b, _ = synth_motion(spec_of([("right leg", -1, 1), ("left arm", 1, 1)]))
        assert not np.array_equal(oracle.motion_embed(a), oracle.motion_embed(b))

    def test_order_sensitivity(self, oracle):
        forward = oracle.text_embed("raise your left arm upward<SEP>turn your head left slowly")
        backward = oracle.text_embed("turn your head left slowly<SEP>raise your left arm upward")
        assert not np.array_equal(forward, backward)

    def test_matched_pairs_retrieve_perfectly(self, oracle, tiny_samples):
        motions = embed_motions(oracle, [s.motion for s in tiny_samples])
        texts = embed_texts(oracle, [serialize_script(s.script) for s in tiny_samples])
        scores = retrieval_metrics(texts, motions, batch_size=len(tiny_samples))
        assert scores["R@1"] == 1.0
        assert scores["MM-Dist"] == 0.0

    def test_stillness_embeds_to_zero(self, oracle):
        motion, _ = synth_motion(spec_of([(None, 1, 3)]))
        assert np.all(oracle.motion_embed(motion) == 0)


class TestStatsHashEmbedder:
    def test_shapes_and_determinism(self, tiny_samples):
        emb = StatsHashEmbedder(dim=16)
        m = emb.motion_embed(tiny_samples[0].motion)
        assert m.shape == (16,)
        assert np.array_equal(m, emb.motion_embed(tiny_samples[0].motion))
        t = emb.text_embed("a person walks forward")
        assert t.shape == (16,)
        assert np.isclose(np.linalg.norm(t), 1.0)

    def test_handles_arbitrary_dimension(self):
        from mgml.motion import MotionSequence
        emb = StatsHashEmbedder(dim=16)
        wide = MotionSequence(
            np.random.default_rng(0).normal(size=(30, 263)).astype(np.float32), 20
        )
        assert np.isfinite(emb.motion_embed(wide)).all()


class TestContrastive:
    def test_training_aligns_matched_pairs(self, tiny_samples):
        pairs = [(s.captions[0], s.motion) for s in tiny_samples]
        model = train_contrastive(pairs, dim=8, steps=250, batch_size=8, seed=0)
        texts = np.stack([model.text_embed(c) for c, _ in pairs])
        motions = np.stack([model.motion_embed(m) for _, m in pairs])
        scores = retrieval_metrics(texts, motions, batch_size=len(pairs))
        assert scores["R@1"] > 1.5 / len(pairs)  # clearly better than chance
        assert model.descriptor == "trained-contrastive"

    def test_rejects_tiny_datasets(self):
        with pytest.raises(ValueError):
            train_contrastive([], dim=4)
