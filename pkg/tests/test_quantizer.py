import math
from random import Random

import numpy as np
import pytest
import torch
from torch import nn

from mgml.errors import InvalidTokenError, TrainingError
from mgml.motion import MotionSequence
from mgml.quantizer import (
    MotionQuantizer, QuantizerConfig, TrainSchedule, encode_motion,
    load_quantizer, pad_to_multiple, quantize, reconstruct, save_quantizer,
    train_vqvae, vqvae_loss,
)


def brute_force_nearest(z_row, book):
    best, best_d = 0, float("inf")
    for k in range(book.shape[0]):
        d = float(np.linalg.norm(np.asarray(z_row, dtype=np.float64) - book[k]))
        if d < best_d:  # strict: keeps the lowest index on ties
            best, best_d = k, d
    return best


class TestQuantize:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            k = int(rng.integers(1, 65))
            d = int(rng.integers(1, 9))
            book = rng.normal(size=(k, d))
            z = rng.normal(size=(int(rng.integers(1, 5)), d))
            ids = quantize(z, book)
            assert ids == [brute_force_nearest(row, book) for row in z]

    def test_single_entry_codebook(self):
        book = np.array([[0.3, -0.7]])
        assert quantize(np.random.default_rng(1).normal(size=(5, 2)), book) == [0] * 5

    def test_hand_case(self):
        book = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        assert quantize(np.array([[0.9, 0.1]]), book) == [0]

    def test_tie_breaks_to_lowest_index(self):
        book = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        assert quantize(np.array([[0.0, 0.0]]), book) == [0]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            quantize(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            quantize(np.array([[np.nan, 0.0]]), np.zeros((2, 2)))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            book = rng.normal(size=(12, 4))
            z = rng.normal(size=(6, 4))
            perm = rng.permutation(12)
            inverse = np.argsort(perm)
            ids = np.asarray(quantize(z, book))
            permuted_ids = np.asarray(quantize(z, book[perm]))
            assert np.array_equal(permuted_ids, inverse[ids])


class TestEncodeDecode:
    def test_token_budget_at_frame_cap(self, tiny_quantizer):
        motion = MotionSequence(np.zeros((196, 8), dtype=np.float32), 20)
        tokens = encode_motion(motion, tiny_quantizer)
        assert len(tokens) == 49 <= 50

    def test_minimal_input(self, tiny_quantizer):
        motion = MotionSequence(np.zeros((4, 8), dtype=np.float32), 20)
        assert len(encode_motion(motion, tiny_quantizer)) == 1

    def test_length_law_randomized(self, tiny_quantizer):
        rng = Random(3)
        for _ in range(40):
            t = rng.randint(1, 200)
            motion = MotionSequence(
                np.asarray(np.random.default_rng(t).normal(size=(t, 8)), dtype=np.float32), 20
            )
            tokens = encode_motion(motion, tiny_quantizer)
            assert len(tokens) == math.ceil(t / 4)

    def test_deterministic(self, tiny_quantizer):
        motion = MotionSequence(
            np.asarray(np.random.default_rng(9).normal(size=(30, 8)), dtype=np.float32), 20
        )
        assert encode_motion(motion, tiny_quantizer) == encode_motion(motion, tiny_quantizer)

    def test_reconstruct_rejects_out_of_range_id(self, tiny_quantizer):
        with pytest.raises(InvalidTokenError):
            reconstruct([0, 16], tiny_quantizer, 8)

    def test_reconstruct_shapes(self, tiny_quantizer):
        motion = reconstruct([1, 2, 3], tiny_quantizer, 10, fps=20)
        assert motion.frames.shape == (10, 8)

    def test_constant_tokens_constant_output(self):
        torch.manual_seed(0)
        model = MotionQuantizer(QuantizerConfig(input_dim=3, codebook_size=8, code_dim=4,
                                                width=8))
        # 1x1 conv decoder maps each latent frame independently.
        model.decoder = nn.Conv1d(4, 3, 1)
        out = reconstruct([5, 5, 5], model, 12)
        assert np.allclose(out.frames, out.frames[0])

    def test_padding_policy(self):
        frames = np.arange(10, dtype=np.float32).reshape(5, 2)
        padded = pad_to_multiple(frames, 4)
        assert padded.shape == (8, 2)
        assert np.all(padded[5:] == frames[-1])


class _Const(nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, x):
        return self.value


class TestLossAlgebra:
    def test_hand_evaluated_toy(self):
        # Perfect reconstruction, Z=(1), nearest code 0: 0 + 1 + 0.25 * 1.
        model = MotionQuantizer(QuantizerConfig(input_dim=1, codebook_size=4, code_dim=1,
                                                width=4, beta=0.25))
        with torch.no_grad():
            model.codebook.zero_()
        x = torch.full((1, 4, 1), 0.5)
        model.encoder = _Const(torch.ones(1, 1, 1))
        model.decoder = _Const(x.transpose(1, 2))
        terms = {k: v.detach() for k, v in model.loss_terms(x).items()}
        assert float(terms["recon"]) == 0.0
        assert float(terms["embed"]) == pytest.approx(1.0)
        assert float(terms["commit"]) == pytest.approx(1.0)
        assert float(terms["total"]) == pytest.approx(1.25)

    def test_zero_loss_iff_perfect(self):
        model = MotionQuantizer(QuantizerConfig(input_dim=1, codebook_size=2, code_dim=1,
                                                width=4, beta=0.25))
        with torch.no_grad():
            model.codebook[0] = 1.0
        x = torch.full((1, 4, 1), 0.5)
        model.encoder = _Const(torch.ones(1, 1, 1))  # lands exactly on code 0
        model.decoder = _Const(x.transpose(1, 2))
        assert float(model.loss_terms(x)["total"]) == 0.0

    def test_loss_nonnegative(self, tiny_quantizer):
        rng = np.random.default_rng(4)
        for _ in range(10):
            motion = MotionSequence(rng.normal(size=(16, 8)).astype(np.float32), 20)
            loss, _ = vqvae_loss(motion, tiny_quantizer)
            assert loss >= 0


def frozen_straight_through_loss(model, x, ids, z0, zq0):
    """Forward value of the training loss with the code routing and every
    stop-gradient constant pinned at the base point; finite differences of
    this function are the reference for the straight-through gradients."""
    z = model.encode_latents(x)
    decoded = model.decode_latents(z + (zq0 - z0))
    recon = (x - decoded).pow(2).mean()
    embed = (model.codebook[ids].reshape(z0.shape) - z0).pow(2).mean()
    commit = (z - zq0).pow(2).mean()
    return recon + embed + model.config.beta * commit


def finite_difference_grads(model, x, h=1e-5):
    with torch.no_grad():
        z0 = model.encode_latents(x)
        ids = model.nearest_codes(z0.reshape(-1, z0.shape[-1]))
        zq0 = model.codebook[ids].reshape(z0.shape)
    grads = {}
    for name, p in model.named_parameters():
        grad = torch.zeros_like(p)
        flat = p.data.view(-1)
        grad_flat = grad.view(-1)
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + h
            with torch.no_grad():
                up = frozen_straight_through_loss(model, x, ids, z0, zq0)
            flat[i] = original - h
            with torch.no_grad():
                down = frozen_straight_through_loss(model, x, ids, z0, zq0)
            flat[i] = original
            grad_flat[i] = (up - down) / (2 * h)
        grads[name] = grad.numpy()
    return grads


def max_relative_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name in analytic:
        a = analytic[name].ravel()
        f = numeric[name].ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def gradient_check_instance(seed=0):
    torch.manual_seed(seed)
    model = MotionQuantizer(
        QuantizerConfig(input_dim=2, codebook_size=4, code_dim=3, width=4, beta=0.25),
        dtype=torch.float64,
    )
    with torch.no_grad():  # spread the codebook so the routing is stable
        model.codebook.copy_(torch.randn(4, 3, dtype=torch.float64))
    rng = np.random.default_rng(seed)
    motion = MotionSequence(rng.normal(size=(3, 2)).astype(np.float32), 20)
    return model, motion


class TestGradientCheck:
    def test_analytic_matches_central_differences(self):
        model, motion = gradient_check_instance(seed=0)
        _, analytic = vqvae_loss(motion, model)
        frames = pad_to_multiple(np.asarray(motion.frames), 4)
        x = torch.from_numpy(frames.copy()).to(torch.float64)[None]
        numeric = finite_difference_grads(model, x)
        assert max_relative_error(analytic, numeric) < 1e-4


class TestTraining:
    def _motions(self, n=6, seed=0):
        rng = Random(seed)
        out = []
        for i in range(n):
            t = rng.randint(12, 40)
            arr = np.random.default_rng(i).normal(scale=0.5, size=(t, 4))
            out.append(MotionSequence(arr.astype(np.float32), 20))
        return out

    def test_smoke_run_freezes_model(self):
        torch.manual_seed(1)
        model = MotionQuantizer(QuantizerConfig(input_dim=4, codebook_size=8, code_dim=4,
                                                width=8))
        curve = train_vqvae(self._motions(), model, TrainSchedule(steps=30, batch_size=4,
                                                                  log_every=10))
        assert len(curve) == 3
        assert all(np.isfinite(row[4]) for row in curve)
        assert not any(p.requires_grad for p in model.parameters())

    def test_degenerate_constant_dataset_fits_fast(self):
        torch.manual_seed(2)
        model = MotionQuantizer(QuantizerConfig(input_dim=2, codebook_size=4, code_dim=2,
                                                width=8))
        constant = MotionSequence(np.full((20, 2), 0.3, dtype=np.float32), 20)
        curve = train_vqvae([constant], model, TrainSchedule(steps=400, batch_size=4,
                                                             lr=1e-3, log_every=100))
        assert curve[-1][4] < 0.01

    def test_beta_zero_warns_and_trains(self, caplog):
        torch.manual_seed(3)
        model = MotionQuantizer(QuantizerConfig(input_dim=4, codebook_size=8, code_dim=4,
                                                width=8, beta=0.0))
        with caplog.at_level("WARNING"):
            train_vqvae(self._motions(), model, TrainSchedule(steps=10, batch_size=4))
        assert any("commitment" in r.message for r in caplog.records)

    def test_empty_dataset_rejected(self):
        model = MotionQuantizer(QuantizerConfig(input_dim=4, codebook_size=8, code_dim=4))
        with pytest.raises(ValueError):
            train_vqvae([], model, TrainSchedule(steps=5))


class TestCheckpoint:
    def test_round_trip_preserves_tokens(self, tiny_quantizer, tmp_path):
        path = tmp_path / "q.mgq"
        save_quantizer(path, tiny_quantizer)
        loaded = load_quantizer(path)
        motion = MotionSequence(
            np.random.default_rng(5).normal(size=(24, 8)).astype(np.float32), 20
        )
        assert encode_motion(motion, loaded) == encode_motion(motion, tiny_quantizer)
        for (name_a, a), (_, b) in zip(
            tiny_quantizer.state_dict().items(), loaded.state_dict().items()
        ):
            assert torch.equal(a, b), name_a
