import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.nn import module_hash
from core.tensor import Tensor, no_grad
from data.corpus import build_splits
from data.rng import Pcg32
from data.text import V_TEXT, text_tokenize
from llm.decoder import TransformerDecoder, batch_targets
from llm.generation import ANSWER_CAP, Sampler, answer_question, generate_image_sequence, generate_image_tokens
from llm.loss import combine_losses, unified_loss
from llm.sequence import (
    IMAGE,
    TEXT,
    MixedSequence,
    build_caption_sequence,
    build_generation_sequence,
    build_text_sequence,
    build_understanding_sequence,
)
from llm.trainer import UnifiedTrainer
from llm.vocab import Vocabulary
from tokenizer.hybrid import HybridTokenizer
from training.mixture import MixSampler
from utils.config import DecoderConfig, FSQConfig, LossWeights, SamplerConfig, StageConfig, ViTConfig
from utils.errors import ContractError, DegenerateLossError

VOCAB = Vocabulary(k=125)
TINY = DecoderConfig(d_model=16, depth=1, heads=2, max_seq_len=64, mlp_ratio=2)


@pytest.fixture(scope="module")
def decoder():
    return TransformerDecoder(TINY, VOCAB, seed=0)


def test_vocabulary_layout():
    assert VOCAB.size == V_TEXT + 125 + 5
    assert VOCAB.image_range == (V_TEXT, V_TEXT + 125)
    assert [VOCAB.pad, VOCAB.bos, VOCAB.eos, VOCAB.boi, VOCAB.eoi] == list(range(V_TEXT + 125, VOCAB.size))
    np.testing.assert_array_equal(VOCAB.codes_of(VOCAB.image_ids([0, 124])), [0, 124])
    assert VOCAB.image_logit_mask().sum() == 125
    assert VOCAB.answer_logit_mask().sum() == V_TEXT + 1
    with pytest.raises(ContractError):
        VOCAB.image_ids([125])
    with pytest.raises(ContractError):
        VOCAB.codes_of([VOCAB.bos])


def test_generation_sequence_supervises_image_tokens_only():
    codes = np.arange(16)
    seq = build_generation_sequence("a red circle", codes, VOCAB)
    ids = seq.token_ids
    boi = int(np.flatnonzero(ids == VOCAB.boi)[0])
    supervised = np.flatnonzero(seq.loss_mask)
    np.testing.assert_array_equal(supervised, np.arange(boi, len(seq) - 1))
    np.testing.assert_array_equal(seq.targets[supervised], np.append(VOCAB.image_ids(codes), VOCAB.eoi))
    assert np.all(seq.modality[supervised] == IMAGE)


def test_understanding_sequence_never_targets_span_rows():
    span = Tensor(np.zeros((4, 16)))
    seq = build_understanding_sequence(span, "how many circles?", "two", VOCAB)
    assert len(seq) == 1 + 4 + len("how many circles? ") + len("two") + 1
    supervised = np.flatnonzero(seq.loss_mask)
    assert len(supervised) == len("two") + 1
    np.testing.assert_array_equal(seq.targets[supervised], text_tokenize("two") + [VOCAB.eos])
    assert np.all(seq.modality[supervised] == TEXT)
    assert not set(seq.span_positions) & set(supervised + 1)


def test_caption_and_text_sequences():
    span = Tensor(np.zeros((4, 16)))
    caption = build_caption_sequence(span, "a blue square", VOCAB)
    assert caption.loss_mask.sum() == len("a blue square") + 1
    text = build_text_sequence("hello", VOCAB)
    assert text.loss_mask.sum() == len("hello") + 1


def test_combined_loss_weights():
    assert combine_losses(Tensor(np.float32(2.0)), Tensor(np.float32(1.0)), LossWeights()).item() == \
        pytest.approx(2.5, abs=1e-6)
    assert combine_losses(Tensor(np.float32(2.0)), None, LossWeights()).item() == pytest.approx(2.0)
    with pytest.raises(DegenerateLossError):
        combine_losses(None, None, LossWeights())


def test_unified_loss_on_a_sequence(decoder):
    seq = build_generation_sequence("a red circle", np.arange(16), VOCAB)
    loss = unified_loss(decoder.logits_for(seq), seq)
    # near-uniform logits at init: each image CE is close to log |V|, scaled by 0.5
    assert 0.3 * np.log(VOCAB.size) < loss.item() < np.log(VOCAB.size)


def test_decoder_is_causal(decoder):
    a = MixedSequence().add_tokens([VOCAB.bos, 3, 4, 5])
    b = MixedSequence().add_tokens([VOCAB.bos, 3, 4, 9])
    with no_grad():
        la = decoder.logits_for(a).data
        lb = decoder.logits_for(b).data
    np.testing.assert_allclose(la[:3], lb[:3], atol=1e-6)
    assert not np.allclose(la[3], lb[3])


def test_decoder_batches_pad_and_reject_long_sequences(decoder):
    short = build_text_sequence("hi", VOCAB)
    longer = build_text_sequence("hello there", VOCAB)
    emb, n = decoder.embed_batch([short, longer])
    assert emb.shape == (2, n, 16) and n == len(longer)
    targets, mask, modality = batch_targets([short, longer], n)
    assert mask.reshape(2, n)[0, len(short):].sum() == 0
    with pytest.raises(ContractError):
        decoder.embed_mixed(MixedSequence().add_tokens([VOCAB.bos] * 65))


@given(st.lists(st.integers(0, V_TEXT - 1), min_size=1, max_size=20), st.integers(0, 2 ** 16))
@settings(max_examples=20, deadline=None)
def test_constrained_generation_emits_exactly_one_image(decoder, prompt, seed):
    sampler = Sampler(SamplerConfig(temperature=1.0, top_k=0), rng=Pcg32(seed, 1))
    ids = generate_image_sequence(prompt, decoder, 4, sampler)
    assert ids[0] == VOCAB.bos and ids[len(prompt) + 1] == VOCAB.boi and ids[-1] == VOCAB.eoi
    span = ids[len(prompt) + 2:-1]
    assert len(span) == 16
    assert all(VOCAB.is_image(int(t)) for t in span)


def test_greedy_generation_is_deterministic(decoder):
    first = generate_image_tokens([1, 2, 3], decoder, 4, Sampler.greedy())
    second = generate_image_tokens([1, 2, 3], decoder, 4, Sampler.greedy())
    np.testing.assert_array_equal(first.indices, second.indices)
    first.validate(125)


def test_generation_rejects_prompt_past_the_context(decoder):
    with pytest.raises(ContractError):
        generate_image_sequence([0] * 60, decoder, 4, Sampler.greedy())


def test_sampler_respects_allowed_set():
    sampler = Sampler(SamplerConfig(temperature=2.0, top_k=3), rng=Pcg32(0, 0))
    logits = np.arange(10, dtype=np.float64)
    allowed = np.zeros(10, dtype=bool)
    allowed[[1, 4, 6, 7]] = True
    picks = {sampler.sample(logits, allowed) for _ in range(200)}
    assert picks <= {4, 6, 7}
    with pytest.raises(ContractError):
        sampler.sample(logits, np.zeros(10, dtype=bool))


def test_answer_is_text_and_capped():
    tokenizer = HybridTokenizer(ViTConfig(image_size=24, patch_size=4, d_vit=8, depth=1, heads=2),
                                FSQConfig(levels=[5, 5, 5]), d_model=16, seed=0)
    model = TransformerDecoder(DecoderConfig(d_model=16, depth=1, heads=2, max_seq_len=160, mlp_ratio=2),
                               VOCAB, seed=0)
    ids = answer_question(np.zeros((24, 24, 3)), "how many circles?", model, tokenizer)
    assert len(ids) <= ANSWER_CAP
    assert all(0 <= t < V_TEXT for t in ids)


def test_unified_trainer_keeps_tokenizer_frozen():
    train, _ = build_splits(seed=4, train_size=10, eval_size=2, resolution=24)
    tokenizer = HybridTokenizer(ViTConfig(image_size=24, patch_size=4, d_vit=8, depth=1, heads=2),
                                FSQConfig(levels=[5, 5, 5]), d_model=16, seed=0)
    model = TransformerDecoder(DecoderConfig(d_model=16, depth=1, heads=2, max_seq_len=160, mlp_ratio=2),
                               VOCAB, seed=0)
    stage = StageConfig(stage="llm-pretrain", steps=10, batch_size=3, lr=1e-2,
                        freeze=["tokenizer.encoder", "tokenizer.discrete"])
    encoder_hash = module_hash(tokenizer.encoder)
    discrete_hash = module_hash(tokenizer.discrete)
    model_hash = module_hash(model)
    trainer = UnifiedTrainer(model, tokenizer, train, stage, MixSampler(stage.mix, seed=0),
                             generation_codes=tokenizer.encode_codes(train.images), progress_bar=False)
    parts = trainer.train()
    assert np.isfinite(parts["loss"])
    assert module_hash(tokenizer.encoder) == encoder_hash
    assert module_hash(tokenizer.discrete) == discrete_hash
    assert module_hash(model) != model_hash
    norms = trainer.grad_norms_for([build_text_sequence("a red circle", VOCAB)])
    assert norms["llm"] > 0
    assert norms["tokenizer.encoder"] == 0.0


def test_unified_trainer_needs_codes_for_generation():
    train, _ = build_splits(seed=4, train_size=4, eval_size=1, resolution=24)
    tokenizer = HybridTokenizer(ViTConfig(image_size=24, patch_size=4, d_vit=8, depth=1, heads=2),
                                FSQConfig(levels=[5, 5, 5]), d_model=16, seed=0)
    model = TransformerDecoder(TINY, VOCAB, seed=0)
    stage = StageConfig(stage="llm-pretrain", steps=1, batch_size=8, mix={"und": 0.0, "gen": 1.0, "text": 0.0})
    trainer = UnifiedTrainer(model, tokenizer, train, stage, MixSampler(stage.mix), progress_bar=False)
    with pytest.raises(ContractError):
        trainer.train()
