from random import Random

import pytest
import torch

from mgml.dataset import Sample
from mgml.motion import make_snippet_grid
from mgml.quantizer import MotionQuantizer, QuantizerConfig, encode_motion
from mgml.synth import captions_for, random_spec, script_for, synth_motion


@pytest.fixture(scope="session")
def tiny_quantizer():
    """Untrained (random but frozen) tokenizer: valid for plumbing tests."""
    torch.manual_seed(0)
    model = MotionQuantizer(QuantizerConfig(input_dim=8, codebook_size=16, code_dim=4,
                                            width=16))
    return model.freeze()


def make_samples(quantizer, n=8, seed=0, min_snippets=2, max_snippets=8):
    rng = Random(seed)
    samples = []
    for i in range(n):
        spec = random_spec(rng, min_snippets=min_snippets, max_snippets=max_snippets,
                           seed=seed * 1000 + i)
        motion, _ = synth_motion(spec)
        samples.append(Sample(
            id=f"s{i:03d}",
            motion=motion,
            tokens=tuple(encode_motion(motion, quantizer)),
            captions=tuple(captions_for(spec, 3)),
            script=script_for(spec),
            grid=make_snippet_grid(motion, spec.snippet_seconds),
            downsample=quantizer.config.downsample,
        ))
    return samples


@pytest.fixture(scope="session")
def tiny_samples(tiny_quantizer):
    return make_samples(tiny_quantizer, n=8, seed=0)
