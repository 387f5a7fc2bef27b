import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from csi_llm.errors import DimensionError
from csi_llm.tokenization import (
    CsiEmbedding,
    EmbeddingConfig,
    embed_sequence,
    flatten_step,
    unflatten_step,
)


def test_flatten_length_default_geometry():
    step = np.zeros((2, 32, 4, 8), dtype=np.float32)
    assert flatten_step(step).shape == (2 * 32 * 4 * 8,) == (2048,)


def test_flatten_zero_is_zero():
    step = np.zeros((2, 4, 2, 2), dtype=np.float32)
    assert not flatten_step(step).any()


def test_flatten_one_hot_index():
    # (p=1, t=0, r=0, b=0) with n_tx=32, n_rx=4, n_prb=8 -> ((1*32+0)*4+0)*8+0 = 1024
    step = np.zeros((2, 32, 4, 8), dtype=np.float32)
    step[1, 0, 0, 0] = 1.0
    flat = flatten_step(step)
    assert flat[1024] == 1.0 and flat.sum() == 1.0


def test_flatten_index_formula_exhaustive():
    n_tx, n_rx, n_prb = 3, 2, 4
    step = np.arange(2 * n_tx * n_rx * n_prb, dtype=np.float32).reshape(2, n_tx, n_rx, n_prb)
    flat = flatten_step(step)
    for p in range(2):
        for t in range(n_tx):
            for r in range(n_rx):
                for b in range(n_prb):
                    idx = ((p * n_tx + t) * n_rx + r) * n_prb + b
                    assert flat[idx] == step[p, t, r, b]


@given(st.integers(min_value=0, max_value=2**31))
@settings(max_examples=30, deadline=None)
def test_flatten_round_trip(seed):
    rng = np.random.default_rng(seed)
    dims = (2, int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    step = rng.standard_normal(dims).astype(np.float32)
    assert np.array_equal(unflatten_step(flatten_step(step), dims), step)


def test_flatten_shape_mismatch():
    with pytest.raises(DimensionError):
        flatten_step(np.zeros((3, 2, 2, 2), dtype=np.float32))
    with pytest.raises(DimensionError):
        flatten_step(np.zeros((2, 2, 2), dtype=np.float32))
    with pytest.raises(DimensionError):
        flatten_step(np.zeros((2, 2, 2, 2), dtype=np.float32), step_shape=(2, 2, 2, 4))


def _embedding(feature_dims=(2, 4, 2, 2), model_dim=16, max_positions=32, seed=0):
    torch.manual_seed(seed)
    fd = int(np.prod(feature_dims))
    return CsiEmbedding(EmbeddingConfig(fd, model_dim, max_positions))


def test_embed_shapes():
    emb = _embedding()
    steps = torch.randn(16, 2, 4, 2, 2)
    seq = embed_sequence(steps, emb)
    assert seq.embeddings.shape == (16, 16)
    assert seq.length == 16 and seq.source_steps == list(range(16))
    one = embed_sequence(steps[:1], emb)
    assert one.embeddings.shape == (1, 16)


def test_embed_full_scale_dims():
    torch.manual_seed(0)
    emb = CsiEmbedding(EmbeddingConfig(2048, 768, 1024))
    steps = torch.randn(16, 2, 32, 4, 8)
    assert emb(steps).shape == (16, 768)


def test_embed_per_position_map():
    emb = _embedding()
    a = torch.randn(8, 2, 4, 2, 2)
    b = a.clone()
    b[5] += 1.0
    ea, eb = emb(a), emb(b)
    assert torch.equal(ea[:5], eb[:5])
    assert not torch.equal(ea[5], eb[5])


def test_embed_position_equivariance_before_positions():
    emb = _embedding()
    steps = torch.randn(6, 2, 4, 2, 2)
    perm = torch.tensor([3, 1, 5, 0, 2, 4])
    pre = emb(steps) - emb.position_tokens(6)
    pre_perm = emb(steps[perm]) - emb.position_tokens(6)
    assert torch.allclose(pre[perm], pre_perm)


def test_embed_length_errors():
    emb = _embedding(max_positions=8)
    with pytest.raises(DimensionError):
        emb(torch.randn(9, 2, 4, 2, 2))
    with pytest.raises(DimensionError):
        emb(torch.randn(3, 2, 4, 2, 3))  # wrong feature dim


def test_position_tokens_slice_and_prefix():
    emb = _embedding()
    table = emb.pos_table.detach()
    four = emb.position_tokens(4).detach()
    assert torch.equal(four, table[:4])
    assert torch.equal(emb.position_tokens(8)[:4], emb.position_tokens(4))


def test_position_tokens_rejects_bad_lengths():
    emb = _embedding(max_positions=8)
    with pytest.raises(DimensionError):
        emb.position_tokens(0)
    with pytest.raises(DimensionError):
        emb.position_tokens(9)


def test_compression_warning_when_not_compressive():
    with pytest.warns(UserWarning, match="compression"):
        EmbeddingConfig(feature_dim=8, model_dim=16)
