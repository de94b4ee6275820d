"""Tests for attention, the two classifiers, and the AdamW optimiser."""
import math

import pytest
import torch

from koopman_ecg.errors import DimensionMismatchError, NonFiniteError, NonFiniteGradientError
from koopman_ecg.models import ClassifierKind, RnnConfig, TrainConfig, TransformerConfig
from koopman_ecg.services.classifiers import (
    DTYPE,
    AdamW,
    RNNClassifier,
    SeededDropout,
    TransformerClassifier,
    attention,
    backward,
    build_classifier,
    cross_entropy,
    embed_tokens,
    predict,
    rnn_forward,
    sinusoidal_encoding,
    transformer_forward,
)


def _brute_force_attention(Q, K, V):
    out = torch.zeros(Q.shape[0], V.shape[1], dtype=DTYPE)
    for i in range(Q.shape[0]):
        scores = [float(Q[i] @ K[j]) / math.sqrt(Q.shape[1]) for j in range(K.shape[0])]
        top = max(scores)
        weights = [math.exp(s - top) for s in scores]
        total = sum(weights)
        for j, w in enumerate(weights):
            out[i] += (w / total) * V[j]
    return out


def test_attention_single_token_returns_value():
    V = torch.tensor([[2.0, -1.0, 0.5]], dtype=DTYPE)
    out = attention(torch.randn(1, 3, dtype=DTYPE), torch.randn(1, 3, dtype=DTYPE), V)
    assert torch.allclose(out, V, atol=1e-15)


def test_attention_identical_keys_average_values():
    K = torch.ones(4, 2, dtype=DTYPE)
    V = torch.arange(8, dtype=DTYPE).reshape(4, 2)
    out = attention(torch.randn(3, 2, dtype=DTYPE), K, V)
    assert torch.allclose(out, V.mean(dim=0).expand(3, 2), atol=1e-12)


def test_attention_matches_brute_force():
    gen = torch.Generator().manual_seed(0)
    for _ in range(20):
        t, d = torch.randint(1, 7, (2,), generator=gen).tolist()
        Q = torch.randn(t, d, generator=gen, dtype=DTYPE)
        K = torch.randn(t, d, generator=gen, dtype=DTYPE)
        V = torch.randn(t, 3, generator=gen, dtype=DTYPE)
        assert torch.max(torch.abs(attention(Q, K, V) - _brute_force_attention(Q, K, V))) < 1e-12


def test_attention_is_stable_for_large_scores():
    Q = torch.full((2, 4), 1e4, dtype=DTYPE)
    K = torch.full((3, 4), 1e4, dtype=DTYPE)
    assert torch.isfinite(attention(Q, K, torch.randn(3, 2, dtype=DTYPE))).all()


def test_attention_rejects_nan_and_bad_shapes():
    x = torch.zeros(2, 4, dtype=DTYPE)
    with pytest.raises(NonFiniteError):
        attention(x, x, torch.full((2, 4), float("nan"), dtype=DTYPE))
    with pytest.raises(DimensionMismatchError):
        attention(x, torch.zeros(2, 3, dtype=DTYPE), x)


def test_sinusoidal_encoding_first_row():
    pe = sinusoidal_encoding(9, 8)
    assert pe.shape == (9, 8)
    assert torch.equal(pe[0, 0::2], torch.zeros(4, dtype=DTYPE))
    assert torch.equal(pe[0, 1::2], torch.ones(4, dtype=DTYPE))
    assert pe[1, 0].item() == pytest.approx(math.sin(1.0))


def test_embed_tokens_with_zero_projection_is_positional_table(tiny_transformer_config):
    model = TransformerClassifier(tiny_transformer_config, feature_dim=3, seed=0)
    with torch.no_grad():
        model.proj.weight.zero_()
        model.proj.bias.zero_()
    tokens = embed_tokens(torch.randn(4, 2, 3, dtype=DTYPE), model)
    assert tokens.shape == (4, 2, 8)
    assert torch.equal(tokens, sinusoidal_encoding(2, 8).expand(4, 2, 8))


def test_embed_tokens_identity_projection_adds_first_position(tiny_transformer_config):
    model = TransformerClassifier(tiny_transformer_config, feature_dim=3, seed=0)
    with torch.no_grad():
        model.proj.weight.copy_(torch.eye(8, 3, dtype=DTYPE))
        model.proj.bias.zero_()
    features = torch.tensor([[0.5, -2.0, 3.0]], dtype=DTYPE)
    padded = torch.cat([features[0], torch.zeros(5, dtype=DTYPE)])
    expected = padded + sinusoidal_encoding(1, 8)[0]
    assert torch.allclose(embed_tokens(features, model)[0], expected, rtol=0.0, atol=1e-15)

    with pytest.raises(DimensionMismatchError):
        embed_tokens(torch.zeros(1, 4, dtype=DTYPE), model)
    with pytest.raises(DimensionMismatchError):
        embed_tokens(torch.zeros(3, 3, dtype=DTYPE), model)


def test_cross_entropy_examples():
    uniform = cross_entropy(torch.zeros(4, dtype=DTYPE), torch.tensor(2))
    assert uniform.item() == pytest.approx(math.log(4))
    confident = cross_entropy(torch.tensor([[100.0, 0.0]], dtype=DTYPE), torch.tensor([0]))
    assert confident.item() < 1e-40
    wrong = cross_entropy(torch.tensor([[100.0, 0.0]], dtype=DTYPE), torch.tensor([1]))
    assert wrong.item() == pytest.approx(100.0)


def test_transformer_shapes_and_dtype(tiny_transformer_config):
    model = TransformerClassifier(tiny_transformer_config, feature_dim=5, seed=1)
    tokens = torch.randn(3, 2, 5, dtype=DTYPE)
    logits = transformer_forward(tokens, model, train_mode=False)
    assert logits.shape == (3, 2)
    assert logits.dtype == DTYPE
    assert transformer_forward(tokens[0], model, train_mode=False).shape == (2,)
    with pytest.raises(DimensionMismatchError):
        model(torch.randn(2, 4, dtype=DTYPE))
    with pytest.raises(DimensionMismatchError):
        model(torch.randn(3, 5, dtype=DTYPE))


def test_transformer_is_seeded(tiny_transformer_config):
    a = TransformerClassifier(tiny_transformer_config, feature_dim=5, seed=7)
    b = TransformerClassifier(tiny_transformer_config, feature_dim=5, seed=7)
    c = TransformerClassifier(tiny_transformer_config, feature_dim=5, seed=8)
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), name
    assert not torch.equal(a.proj.weight, c.proj.weight)


def test_transformer_eval_is_deterministic_despite_dropout():
    cfg = TransformerConfig(layers=1, heads=2, emb_dim=8, ff_dim=16, dropout=0.5, n_classes=2, max_tokens=3)
    model = TransformerClassifier(cfg, feature_dim=4, seed=3)
    tokens = torch.randn(2, 3, 4, dtype=DTYPE)
    first = transformer_forward(tokens, model, train_mode=False)
    assert torch.equal(first, transformer_forward(tokens, model, train_mode=False))
    assert not torch.equal(first, transformer_forward(tokens, model, train_mode=True))


def test_mean_pooled_tokens_feed_the_head(tiny_transformer_config):
    model = TransformerClassifier(tiny_transformer_config, feature_dim=3, seed=2)
    tokens = torch.randn(4, 2, 3, dtype=DTYPE)
    x = embed_tokens(tokens, model)
    for block in model.blocks:
        x = block(x)
    expected = model.head(x.mean(dim=1))
    assert torch.allclose(transformer_forward(tokens, model, train_mode=False), expected, rtol=0.0, atol=1e-14)
    outside = [name for name, m in model.named_modules() if isinstance(m, torch.nn.LayerNorm) and not name.startswith("blocks.")]
    assert outside == []


def test_token_order_matters():
    cfg = TransformerConfig(layers=1, heads=2, emb_dim=8, ff_dim=16, dropout=0.0, n_classes=2, max_tokens=3)
    model = TransformerClassifier(cfg, feature_dim=4, seed=5)
    tokens = torch.randn(3, 4, dtype=DTYPE)
    permuted = tokens[[2, 0, 1]]
    assert not torch.allclose(model(tokens), model(permuted), atol=1e-12)


def test_seeded_dropout_masks_repeat():
    x = torch.ones(100, dtype=DTYPE)
    a, b = SeededDropout(0.5, seed=11), SeededDropout(0.5, seed=11)
    first = a(x)
    assert torch.equal(first, b(x))
    assert set(first.unique().tolist()) <= {0.0, 2.0}
    assert not torch.equal(a(x), first)
    a.eval()
    assert torch.equal(a(x), x)


def test_rnn_with_zero_weights_returns_head_bias():
    model = RNNClassifier(RnnConfig(hidden=4, n_classes=3), seed=0)
    with torch.no_grad():
        for p in model.rnn.parameters():
            p.zero_()
        model.head.bias.copy_(torch.tensor([0.1, -0.2, 0.3], dtype=DTYPE))
    logits = rnn_forward(torch.randn(50, dtype=DTYPE), model)
    assert torch.allclose(logits, torch.tensor([0.1, -0.2, 0.3], dtype=DTYPE))


def test_rnn_rejects_empty_sequence():
    model = RNNClassifier(RnnConfig(hidden=4, n_classes=2), seed=0)
    with pytest.raises(DimensionMismatchError):
        model(torch.zeros(2, 0, dtype=DTYPE))


def _finite_difference_check(model, inputs, labels, h=1e-5, per_tensor=3):
    grads = backward(model, inputs, labels)
    gen = torch.Generator().manual_seed(0)
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        picks = torch.randint(0, flat.numel(), (min(per_tensor, flat.numel()),), generator=gen)
        for idx in picks.tolist():
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + h
                plus = cross_entropy(model(inputs), labels).item()
                flat[idx] = original - h
                minus = cross_entropy(model(inputs), labels).item()
                flat[idx] = original
            numeric = (plus - minus) / (2 * h)
            analytic = grads[name].view(-1)[idx].item()
            assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric), abs(analytic)), name


def test_transformer_gradients_match_finite_differences(tiny_transformer_config):
    model = TransformerClassifier(tiny_transformer_config, feature_dim=3, seed=2)
    model.eval()
    gen = torch.Generator().manual_seed(1)
    tokens = torch.randn(4, 2, 3, generator=gen, dtype=DTYPE)
    _finite_difference_check(model, tokens, torch.tensor([0, 1, 1, 0]))


def test_rnn_gradients_match_finite_differences():
    model = RNNClassifier(RnnConfig(hidden=5, n_classes=3), seed=2)
    model.eval()
    gen = torch.Generator().manual_seed(2)
    samples = torch.randn(3, 12, generator=gen, dtype=DTYPE)
    _finite_difference_check(model, samples, torch.tensor([0, 2, 1]))


def test_adamw_first_step_moves_by_lr():
    p = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=DTYPE))
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = torch.tensor([0.5, -3.0], dtype=DTYPE)
    opt.step()
    assert torch.allclose(p.detach(), torch.tensor([0.9, -1.9], dtype=DTYPE), atol=1e-7)


def test_adamw_zero_gradient_only_decays():
    p = torch.nn.Parameter(torch.tensor([2.0], dtype=DTYPE))
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    p.grad = torch.zeros(1, dtype=DTYPE)
    opt.step()
    assert p.item() == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_adamw_non_finite_gradient_leaves_state_untouched():
    a = torch.nn.Parameter(torch.tensor([1.0], dtype=DTYPE))
    b = torch.nn.Parameter(torch.tensor([1.0], dtype=DTYPE))
    opt = AdamW([a, b], lr=0.1)
    a.grad = torch.tensor([1.0], dtype=DTYPE)
    b.grad = torch.tensor([float("inf")], dtype=DTYPE)
    with pytest.raises(NonFiniteGradientError):
        opt.step()
    assert a.item() == 1.0 and b.item() == 1.0
    assert len(opt.state) == 0


def test_adamw_from_config():
    p = torch.nn.Parameter(torch.zeros(1, dtype=DTYPE))
    opt = AdamW.from_config([p], TrainConfig(lr=3e-3, weight_decay=0.0))
    assert opt.param_groups[0]["lr"] == 3e-3
    assert opt.param_groups[0]["betas"] == (0.9, 0.999)
    with pytest.raises(ValueError):
        AdamW([p], lr=0.0)


def test_predict_and_build_classifier(tiny_transformer_config):
    model = build_classifier(
        ClassifierKind.transformer, seed=4, transformer=tiny_transformer_config, feature_dim=3
    )
    assert isinstance(model, TransformerClassifier)
    preds = predict(model, torch.randn(5, 2, 3, dtype=DTYPE), batch=2)
    assert preds.shape == (5,)
    assert set(preds.tolist()) <= {0, 1}
    rnn = build_classifier(ClassifierKind.rnn, seed=4, rnn=RnnConfig(hidden=3, n_classes=2))
    assert isinstance(rnn, RNNClassifier)
    with pytest.raises(ValueError):
        build_classifier(ClassifierKind.transformer, seed=4)
