import numpy as np
import pytest

from core.tensor import Tensor
from data.corpus import build_splits
from pixel.dit import MODULATION_VECTORS, DiT, count_block_parameters, grow_resolution
from pixel.flow import FlowSample, GaussianMixture, VelocityMLP, cfm_loss, euler_integrate, euler_sample, \
    flow_matching_loss, train_velocity_field
from pixel.patches import patchify, unpatchify
from pixel.trainer import PixelDecoderTrainer, passes_short_side, render_codes, short_side_filter
from tests.gradcheck import gradcheck
from tokenizer.hybrid import HybridTokenizer
from utils.config import DiTConfig, FSQConfig, StageConfig, ViTConfig
from utils.errors import ContractError, DimensionError

TINY_DIT = DiTConfig(resolution=8, patch_size=4, d=8, depth=2, heads=2, mlp_ratio=2, sample_steps=2)


def randomized_dit(share: bool = True, seed: int = 0) -> DiT:
    rng = np.random.default_rng(seed)
    dit = DiT(TINY_DIT.model_copy(update={"share_weights": share}), cond_dim=4, cond_tokens=4, seed=seed)
    for param in (dit.modulation, dit.ada.weight, dit.out.weight):
        param.data = rng.normal(0.0, 0.3, size=param.shape).astype(np.float32)
    return dit


def fixed_sample(rng: np.random.Generator) -> FlowSample:
    return FlowSample(x0=rng.normal(size=(2, 4, 48)), x1=rng.uniform(-1, 1, size=(2, 4, 48)),
                      t=np.array([0.3, 0.8]))


def test_patchify_round_trip():
    image = np.random.default_rng(0).uniform(size=(2, 8, 8, 3))
    tokens = patchify(image, 4)
    assert tokens.shape == (2, 4, 48)
    np.testing.assert_array_equal(tokens[0, 1], image[0, 0:4, 4:8].reshape(-1))
    np.testing.assert_array_equal(unpatchify(tokens, 4), image)
    with pytest.raises(DimensionError):
        patchify(image, 3)


def test_flow_sample_interpolates_linearly():
    sample = FlowSample(x0=np.zeros((2, 3)), x1=np.ones((2, 3)), t=np.array([0.25, 1.0]))
    np.testing.assert_allclose(sample.x_t, [[0.25] * 3, [1.0] * 3])
    np.testing.assert_allclose(sample.v_target, np.ones((2, 3)))
    with pytest.raises(ContractError):
        FlowSample(x0=np.zeros((1, 2)), x1=np.zeros((1, 2)), t=np.array([1.5]))
    with pytest.raises(DimensionError):
        FlowSample(x0=np.zeros((1, 2)), x1=np.zeros((1, 3)), t=np.array([0.5]))


def test_euler_follows_a_constant_field():
    field = lambda x, t, cond: np.ones_like(x)
    out = euler_integrate(np.zeros((3, 2)), field, 50)
    np.testing.assert_allclose(out, np.ones((3, 2)), atol=1e-5)
    clipped = euler_sample(None, lambda x, t, cond: np.full_like(x, 5.0), 4, (2, 2), np.random.default_rng(0))
    assert clipped.max() <= 1.0
    with pytest.raises(ContractError):
        euler_integrate(np.zeros((1, 2)), field, 0)


def test_zero_initialized_dit_starts_at_zero_velocity():
    dit = DiT(TINY_DIT, cond_dim=4, cond_tokens=4, seed=0)
    assert dit.modulation.shape == (2, MODULATION_VECTORS, 8)
    velocity = dit(np.ones((1, 4, 48)), np.array([0.5]), np.ones((1, 4, 4)))
    np.testing.assert_array_equal(velocity.data, np.zeros((1, 4, 48)))


def test_dit_rejects_bad_shapes():
    dit = DiT(TINY_DIT, cond_dim=4, cond_tokens=4, seed=0)
    with pytest.raises(DimensionError):
        dit(np.ones((1, 5, 48)), np.array([0.5]), np.ones((1, 4, 4)))
    with pytest.raises(DimensionError):
        dit(np.ones((1, 4, 48)), np.array([0.5]), np.ones((1, 3, 4)))


def test_adaln_modulation_gradients():
    rng = np.random.default_rng(1)
    dit = randomized_dit()
    sample, cond = fixed_sample(rng), rng.normal(size=(2, 4, 4))
    result = gradcheck(lambda: flow_matching_loss(sample, cond, dit), [dit.modulation, dit.ada.weight],
                       max_per_param=12)
    assert result.max_rel_err < 1e-3


def test_flow_matching_loss_gradients():
    rng = np.random.default_rng(2)
    dit = randomized_dit(share=False, seed=3)
    sample, cond = fixed_sample(rng), rng.normal(size=(2, 4, 4))
    result = gradcheck(lambda: flow_matching_loss(sample, cond, dit), dit.parameters(), max_per_param=3)
    assert result.checked > 20
    assert result.max_rel_err < 1e-3


def test_weight_sharing_shrinks_block_parameters():
    shared = count_block_parameters(TINY_DIT, 4, 4, share=True)
    unshared = count_block_parameters(TINY_DIT, 4, 4, share=False)
    assert shared < unshared
    per_block = unshared - shared
    assert per_block == shared - 2 * MODULATION_VECTORS * 8


def test_timestep_modulation_is_one_projection_for_every_block():
    shallow = DiT(TINY_DIT.model_copy(update={"depth": 1}), cond_dim=4, cond_tokens=4, seed=0)
    deep = DiT(TINY_DIT.model_copy(update={"depth": 3, "share_weights": False}), cond_dim=4, cond_tokens=4, seed=0)
    assert shallow.ada.weight.shape == deep.ada.weight.shape
    assert deep.modulation.shape == (3, MODULATION_VECTORS, 8)
    assert deep.modulation_input(np.array([0.25, 0.75])).shape == (2, MODULATION_VECTORS, 8)


def test_grow_resolution_keeps_shared_weights():
    dit = randomized_dit()
    grown = grow_resolution(dit, 16, seed=1)
    assert grown.config.num_patches == 16
    for name, value in dit.shared_weights_state().items():
        np.testing.assert_array_equal(grown.shared_weights_state()[name], value)
    np.testing.assert_array_equal(grown.modulation.data, dit.modulation.data)
    with pytest.raises(ContractError):
        grow_resolution(dit, 10)


def test_short_side_filter_is_inclusive():
    assert passes_short_side((48, 48, 3), 48)
    assert not passes_short_side((32, 64, 3), 48)
    assert short_side_filter([(32, 32, 3), (48, 48, 3), (64, 48, 3)], 48) == [1, 2]


def test_cfm_loss_decreases_on_two_modes():
    mixture = GaussianMixture.two_modes()
    field = VelocityMLP(hidden=32, seed=0)
    data = mixture.sample(512, np.random.default_rng(1))
    before = cfm_loss(data, None, field, np.random.default_rng(2)).item()
    train_velocity_field(field, mixture, steps=150, batch_size=128, lr=5e-3, seed=3)
    after = cfm_loss(data, None, field, np.random.default_rng(2)).item()
    assert after < before


def test_euler_samples_recover_both_modes():
    mixture = GaussianMixture.two_modes()
    field = VelocityMLP(seed=0)
    train_velocity_field(field, mixture, steps=2000, seed=0)
    points = euler_integrate(np.random.default_rng(1).standard_normal((1000, 2)), field, 50)
    summary = mixture.summarize(points)
    for recovered, target in zip(summary["means"], mixture.means):
        np.testing.assert_allclose(recovered, target, atol=0.15)
    for weight in summary["weights"]:
        assert abs(weight - 0.5) <= 0.1


def test_mixture_summary_counts_assignments():
    mixture = GaussianMixture.two_modes()
    points = np.array([[-2.1, 0.0], [-1.9, 0.1], [2.0, 0.0], [2.2, -0.1]])
    summary = mixture.summarize(points)
    np.testing.assert_allclose(summary["means"][0], [-2.0, 0.05])
    assert summary["weights"] == [0.5, 0.5]


def test_pixel_decoder_trains_without_touching_the_tokenizer():
    train, _ = build_splits(seed=2, train_size=6, eval_size=1, resolution=24)
    tokenizer = HybridTokenizer(ViTConfig(image_size=24, patch_size=4, d_vit=8, depth=1, heads=2),
                                FSQConfig(levels=[5, 5, 5]), d_model=4, seed=0)
    config = DiTConfig(resolution=24, patch_size=8, d=8, depth=1, heads=2, mlp_ratio=2, sample_steps=2)
    dit = DiT(config, tokenizer.d_model, tokenizer.tokens_per_image, seed=0)
    trainer = PixelDecoderTrainer(dit, tokenizer, train, StageConfig(stage="decoder-1", steps=2, batch_size=3),
                                  progress_bar=False)
    summary = trainer.train()
    assert np.isfinite(summary["loss"]) and summary["kept"] == 6
    images = render_codes(dit, tokenizer, tokenizer.encode_codes(train.images[:2]), steps=2)
    assert images.shape == (2, 24, 24, 3)
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_stage_two_drops_sources_below_its_resolution():
    train, _ = build_splits(seed=6, train_size=18, eval_size=1, resolution=48, source_sizes=[40, 48, 64])
    small = sum(r.source_size < 48 for r in train)
    assert 0 < small < len(train)
    tokenizer = HybridTokenizer(ViTConfig(image_size=24, patch_size=4, d_vit=8, depth=1, heads=2),
                                FSQConfig(levels=[5, 5, 5]), d_model=4, seed=0)
    first = DiT(DiTConfig(resolution=32, patch_size=8, d=8, depth=1, heads=2, mlp_ratio=2, sample_steps=2),
                tokenizer.d_model, tokenizer.tokens_per_image, seed=0)
    stage_one = PixelDecoderTrainer(first, tokenizer, train, StageConfig(stage="decoder-1", steps=1, batch_size=2),
                                    progress_bar=False)
    assert (stage_one.kept, stage_one.dropped) == (len(train), 0)

    second = grow_resolution(first, 48, seed=1)
    trainer = PixelDecoderTrainer(second, tokenizer, train, StageConfig(stage="decoder-2", steps=1, batch_size=2),
                                  progress_bar=False)
    summary = trainer.train()
    assert summary["dropped"] == small
    assert summary["kept"] + summary["dropped"] == len(train)
    assert len(trainer.targets) == len(trainer.conditioning) == summary["kept"]


def test_pixel_decoder_needs_large_enough_sources():
    train, _ = build_splits(seed=2, train_size=3, eval_size=1, resolution=24)
    tokenizer = HybridTokenizer(ViTConfig(image_size=24, patch_size=4, d_vit=8, depth=1, heads=2),
                                FSQConfig(levels=[5, 5, 5]), d_model=4, seed=0)
    config = DiTConfig(resolution=48, patch_size=8, d=8, depth=1, heads=2, mlp_ratio=2, sample_steps=2)
    dit = DiT(config, tokenizer.d_model, tokenizer.tokens_per_image, seed=0)
    with pytest.raises(ContractError):
        PixelDecoderTrainer(dit, tokenizer, train, StageConfig(stage="decoder-2", steps=1), progress_bar=False)


def test_tensor_velocity_is_accepted_by_the_loss():
    sample = FlowSample(x0=np.zeros((2, 2)), x1=np.ones((2, 2)), t=np.array([0.5, 0.5]))
    loss = flow_matching_loss(sample, None, lambda x, t, cond: Tensor(np.ones_like(x)))
    assert loss.item() == pytest.approx(0.0)
