import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from core.ops import round_ste
from core.tensor import Parameter, Tensor, mul, tsum
from data.corpus import build_splits
from tests.gradcheck import gradcheck
from tokenizer.adapters import DiscreteCodes, discrete_adapt
from tokenizer.fsq import FSQ, code_to_index, index_to_code, lattice_preimage
from tokenizer.hybrid import HybridTokenizer
from tokenizer.patch_quantizer import PatchQuantizer
from tokenizer.stc import FeatureGrid, stc_inverse, stc_rearrange
from tokenizer.trainer import PatchQuantizerTrainer, TokenizerTrainer
from utils.config import FULL_SCALE_FSQ_LEVELS, DecoderConfig, FSQConfig, StageConfig, ViTConfig
from utils.errors import ContractError, DimensionError

TOY = FSQConfig(levels=[5, 5, 5])
SMALL_VIT = ViTConfig(image_size=24, patch_size=4, d_vit=8, depth=1, heads=2)


def test_toy_codebook_is_a_bijection():
    fsq = FSQ(TOY)
    indices = np.arange(125)
    codes = fsq.to_codes(indices)
    assert len({tuple(c) for c in codes}) == 125
    np.testing.assert_array_equal(fsq.to_index(codes), indices)


@given(st.lists(st.integers(0, 8), min_size=5, max_size=5))
@settings(max_examples=100, deadline=None)
def test_full_size_codes_round_trip(digits):
    index = code_to_index(digits, FULL_SCALE_FSQ_LEVELS)
    assert 0 <= index < 9 ** 5
    np.testing.assert_array_equal(index_to_code(index, FULL_SCALE_FSQ_LEVELS), digits)


def test_index_out_of_range():
    with pytest.raises(ContractError):
        index_to_code(125, [5, 5, 5])
    with pytest.raises(ContractError):
        code_to_index([5, 0, 0], [5, 5, 5])


def test_even_levels_are_rejected():
    with pytest.raises(ValidationError):
        FSQConfig(levels=[4, 5])


def test_lattice_preimages_quantize_to_their_codes():
    fsq = FSQ(TOY)
    codes = fsq.to_codes(np.arange(125))
    recovered, quantized = fsq.quantize(Tensor(lattice_preimage(codes, fsq.levels)))
    np.testing.assert_array_equal(recovered, codes)
    np.testing.assert_array_equal(quantized.data, codes - 2)


def test_bound_saturates_at_half_level():
    fsq = FSQ(TOY)
    bounded = fsq.bound(Tensor(np.full((1, 3), 10.0))).data
    np.testing.assert_allclose(bounded, 2.0, atol=1e-4)


def test_straight_through_matches_unrounded_gradient():
    fsq = FSQ(TOY)
    rng = np.random.default_rng(4)
    z = Parameter(rng.normal(size=(6, 3)))
    w = rng.normal(size=(6, 3))
    result = gradcheck(lambda: tsum(mul(round_ste(fsq.bound(z)), Tensor(w))), [z],
                       reference_fn=lambda: tsum(mul(fsq.bound(z), Tensor(w))))
    assert result.max_rel_err < 1e-3


def test_stc_folds_blocks_and_inverts():
    rng = np.random.default_rng(0)
    grid = FeatureGrid(Tensor(rng.normal(size=(2, 36, 4))))
    folded = stc_rearrange(grid)
    assert folded.data.shape == (2, 4, 36)
    # first token holds the top-left 3x3 block, cells row-major
    np.testing.assert_array_equal(folded.data.data[0, 0, :4], grid.data.data[0, 0])
    np.testing.assert_array_equal(folded.data.data[0, 0, 12:16], grid.data.data[0, 6])
    np.testing.assert_array_equal(stc_inverse(folded).data.data, grid.data.data)


def test_stc_full_size_shape():
    folded = stc_rearrange(FeatureGrid(Tensor(np.zeros((42 * 42, 1024), dtype=np.float32))))
    assert (folded.side, folded.d) == (14, 9216)


def test_stc_rejects_indivisible_grid():
    with pytest.raises(DimensionError):
        stc_rearrange(FeatureGrid(Tensor(np.zeros((16, 2)))))
    with pytest.raises(DimensionError):
        FeatureGrid(Tensor(np.zeros((15, 2))))


def test_hybrid_tokenizer_shapes():
    tokenizer = HybridTokenizer(SMALL_VIT, TOY, d_model=16, seed=0)
    images = np.random.default_rng(0).uniform(size=(3, 24, 24, 3))
    assert tokenizer.grid_side == 2 and tokenizer.tokens_per_image == 4
    assert tokenizer.embed(images, "continuous").shape == (3, 4, 16)
    assert tokenizer.embed(images[0], "discrete").shape == (4, 16)
    codes = tokenizer.encode_codes(images)
    assert codes.shape == (3, 4)
    assert codes.min() >= 0 and codes.max() < 125
    assert 0.0 < tokenizer.codebook_usage(images) <= 1.0


def test_both_adapters_train_the_shared_encoder():
    tokenizer = HybridTokenizer(SMALL_VIT, TOY, d_model=16, seed=0)
    image = np.random.default_rng(1).uniform(size=(24, 24, 3))
    for adapter in ("continuous", "discrete"):
        tokenizer.zero_grad()
        tsum(tokenizer.embed(image, adapter)).backward()
        assert tokenizer.encoder.patch_embed.weight.grad is not None
        assert np.abs(tokenizer.encoder.patch_embed.weight.grad).sum() > 0


def test_parameter_groups_cover_every_parameter():
    tokenizer = HybridTokenizer(SMALL_VIT, TOY, d_model=16, seed=0)
    groups = tokenizer.parameter_groups()
    assert set(groups) == {"tokenizer.encoder", "tokenizer.continuous", "tokenizer.discrete"}
    assert sum(len(params) for params in groups.values()) == len(tokenizer.parameters())


def test_discrete_codes_validation():
    codes = DiscreteCodes(2, [0, 1, 2, 124])
    assert codes.validate(125) is codes
    with pytest.raises(ContractError):
        DiscreteCodes(2, [0, 1, 2, 125]).validate(125)
    with pytest.raises(DimensionError):
        DiscreteCodes(2, [0, 1, 2])


def test_discrete_adapt_single_grid():
    tokenizer = HybridTokenizer(SMALL_VIT, TOY, d_model=16, seed=0)
    grid = tokenizer.features(np.zeros((24, 24, 3)))
    codes, embeddings = discrete_adapt(grid, tokenizer.discrete)
    assert codes.side == 2
    assert embeddings.data.shape == (4, 16)


def test_tokenizer_trainer_runs_and_mixes_adapters():
    train, _ = build_splits(seed=0, train_size=12, eval_size=2, resolution=24)
    tokenizer = HybridTokenizer(SMALL_VIT, TOY, d_model=16, seed=0)
    stage = StageConfig(stage="tokenizer", steps=2, batch_size=4)
    trainer = TokenizerTrainer(tokenizer, train, stage,
                               decoder_config=DecoderConfig(d_model=16, depth=1, heads=2, max_seq_len=160,
                                                            mlp_ratio=2),
                               progress_bar=False)
    parts = trainer.train()
    assert np.isfinite(parts["loss"])
    assert 0.0 <= parts["codebook_usage"] <= 1.0
    trainer.build_batch(200)
    assert abs(trainer.continuous_fraction() - 0.5) < 0.12


def test_tokenizer_trainer_rejects_width_mismatch():
    train, _ = build_splits(seed=0, train_size=4, eval_size=1, resolution=24)
    tokenizer = HybridTokenizer(SMALL_VIT, TOY, d_model=16, seed=0)
    with pytest.raises(ContractError):
        TokenizerTrainer(tokenizer, train, StageConfig(stage="tokenizer"),
                         decoder_config=DecoderConfig(d_model=32, depth=1, heads=2), progress_bar=False)


def test_patch_quantizer_reduces_reconstruction_loss():
    train, _ = build_splits(seed=1, train_size=16, eval_size=1, resolution=24)
    quantizer = PatchQuantizer(24, 4, TOY, hidden=32, seed=0)
    before = quantizer.reconstruction_loss(train.images).item()
    PatchQuantizerTrainer(quantizer, train.images, StageConfig(stage="proxy-quantizer", steps=60, batch_size=16,
                                                               lr=1e-2), progress_bar=False).train()
    after = quantizer.reconstruction_loss(train.images).item()
    assert after < before
    codes = quantizer.encode_codes(train.images[:2])
    assert codes.shape == (2, quantizer.grid_side ** 2)
    assert quantizer.decode(codes).shape == (2, 24, 24, 3)
