import numpy as np
import pytest

from objvid import autodiff as ad
from objvid import model as m
from objvid.autodiff import Tape, Tensor


def tiny_cfg(**over):
    base = dict(d=8, depth=2, heads=2, patch=2, frames=2, height=4, width=4,
                channels=3, objects=4, classes=6)
    base.update(over)
    return m.ModelConfig(**base)


def rand_frames(rng, cfg, b, t=None):
    t = cfg.frames if t is None else t
    return rng.random((b, t, cfg.height, cfg.width, cfg.channels))


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_cfg(height=5)
    with pytest.raises(ValueError):
        tiny_cfg(d=9)
    with pytest.raises(ValueError):
        tiny_cfg(objects=3)
    tiny_cfg(objects=0)  # disabling object tokens is allowed


def test_sequence_length_formula():
    for t, h, w, n in [(2, 4, 4, 4), (1, 4, 4, 4), (3, 8, 4, 0), (2, 4, 8, 4)]:
        cfg = tiny_cfg(frames=t, height=h, width=w, objects=n,
                       graph_heads=(n == 4))
        model = m.VideoTransformer(cfg, seed=0)
        frames = rand_frames(np.random.default_rng(0), cfg, 2, t)
        out = model.forward_video(frames)
        grid = (h // 2) * (w // 2)
        assert out["tokens"].tokens.shape == (2, t * (grid + n), 8)


def test_index_map_is_bijection():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=0)
    out = model.forward_video(rand_frames(np.random.default_rng(1), cfg, 1))
    tb = out["tokens"]
    both = np.concatenate([tb.patch_positions(), tb.object_positions()])
    assert sorted(both.tolist()) == list(range(tb.tokens.shape[1]))


def test_patch_count_arithmetic():
    cfg = m.ModelConfig(d=8, depth=1, heads=2, patch=8, frames=1,
                        height=32, width=32, objects=0, classes=6)
    assert cfg.grid == 16  # 32/8 * 32/8


def test_patchify_zero_frames_give_positional_embeddings():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=3)
    model.params["patch.bias"] = Tensor(np.zeros(cfg.d), requires_grad=True)
    frames = np.zeros((1, cfg.frames, cfg.height, cfg.width, cfg.channels))
    tok = model.patchify(frames, np.broadcast_to(np.arange(2), (1, 2))).data
    spatial = model.params["pos.spatial"].data
    temporal = model.params["pos.temporal"].data
    for t in range(2):
        np.testing.assert_array_equal(tok[0, t], spatial + temporal[t])


def test_object_tokens_share_prompt_differ_by_time():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=4)
    frames = rand_frames(np.random.default_rng(4), cfg, 1)
    tidx = np.broadcast_to(np.arange(2), (1, 2))
    tb = model.assemble(model.patchify(frames, tidx), tidx)
    toks = tb.tokens.data[0]
    obj = toks[tb.object_positions()].reshape(2, 4, cfg.d)
    o = model.params["prompt.object"].data
    r = model.params["pos.temporal"].data
    np.testing.assert_allclose(obj[0], o + r[0], atol=1e-15)
    np.testing.assert_allclose(obj[1], o + r[1], atol=1e-15)
    # same prompts, different r_t
    assert not np.allclose(obj[0], obj[1])


def test_object_tokens_identical_when_temporal_zeroed():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=5)
    model.params["pos.temporal"] = Tensor(np.zeros((2, cfg.d)), requires_grad=True)
    frames = rand_frames(np.random.default_rng(5), cfg, 1)
    tidx = np.broadcast_to(np.arange(2), (1, 2))
    tb = model.assemble(model.patchify(frames, tidx), tidx)
    obj = tb.tokens.data[0][tb.object_positions()].reshape(2, 4, cfg.d)
    np.testing.assert_array_equal(obj[0], obj[1])


def test_encode_is_identity_at_init():
    # residual output projections start at zero, so blocks pass through
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=6)
    frames = rand_frames(np.random.default_rng(6), cfg, 2)
    tidx = np.broadcast_to(np.arange(2), (2, 2))
    tb = model.assemble(model.patchify(frames, tidx), tidx)
    enc = model.encode(tb)
    np.testing.assert_array_equal(enc.tokens.data, tb.tokens.data)


def _naive_attention(x, wqkv, bqkv, wout, bout, heads):
    # per-query python loops, no batching tricks: the reference oracle
    L, d = x.shape
    dh = d // heads
    qkv = x @ wqkv + bqkv
    q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
    out = np.zeros((L, d))
    for h in range(heads):
        qs = q[:, h * dh:(h + 1) * dh]
        ks = k[:, h * dh:(h + 1) * dh]
        vs = v[:, h * dh:(h + 1) * dh]
        for i in range(L):
            scores = np.array([qs[i] @ ks[j] / np.sqrt(dh) for j in range(L)])
            w = np.exp(scores - scores.max())
            w = w / w.sum()
            out[i, h * dh:(h + 1) * dh] = sum(w[j] * vs[j] for j in range(L))
    return out @ wout + bout


def test_attention_matches_naive_reference():
    cfg = tiny_cfg(depth=1)
    model = m.VideoTransformer(cfg, seed=7)
    rng = np.random.default_rng(7)
    # random output projection so the sublayer actually transforms
    model.params["block0.attn.out.weight"] = Tensor(
        rng.normal(size=(cfg.d, cfg.d)) * 0.5, requires_grad=True)
    x = rng.normal(size=(1, 16, cfg.d))
    got = model._attention(Tensor(x), 0).data[0]
    want = _naive_attention(
        x[0],
        model.params["block0.attn.qkv.weight"].data,
        model.params["block0.attn.qkv.bias"].data,
        model.params["block0.attn.out.weight"].data,
        model.params["block0.attn.out.bias"].data,
        cfg.heads,
    )
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_attention_rows_sum_to_one():
    x = Tensor(np.random.default_rng(8).normal(size=(2, 3, 10, 10)))
    att = ad.softmax(x, axis=-1).data
    np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-12)


def test_f_cls_is_mean_of_patches_only():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=9)
    out = model.forward_video(rand_frames(np.random.default_rng(9), cfg, 2))
    tb = out["tokens"]
    want = tb.tokens.data[:, tb.patch_positions()].mean(axis=1)
    np.testing.assert_allclose(out["pooled"].data, want, atol=1e-15)
    # perturbing object-token outputs leaves the pooled vector fixed
    bumped = tb.tokens.data.copy()
    bumped[:, tb.object_positions()] += 10.0
    tb2 = m.TokenBatch(Tensor(bumped), tb.frames, tb.grid, tb.objects)
    np.testing.assert_array_equal(model.f_cls(tb2).data, out["pooled"].data)


def test_f_o_shapes_and_gather_roundtrip():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=10)
    out = model.forward_video(rand_frames(np.random.default_rng(10), cfg, 3))
    tb, obj = out["tokens"], out["objects"]
    assert obj.shape == (3, 2, 4, cfg.d)
    # scatter the gathered tokens back into place: exact round trip
    rebuilt = tb.tokens.data.copy()
    rebuilt[:, tb.object_positions()] = obj.data.reshape(3, -1, cfg.d)
    np.testing.assert_array_equal(rebuilt, tb.tokens.data)


def test_image_equals_t1_video_bit_identical():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=11)
    img = np.random.default_rng(11).random((2, cfg.height, cfg.width, cfg.channels))
    as_img = model.forward_image(img)
    as_vid = model.forward_video(img[:, None],
                                 time_indices=np.zeros((2, 1), dtype=np.intp))
    np.testing.assert_array_equal(as_img["objects"].data,
                                  as_vid["objects"].data[:, 0])
    np.testing.assert_array_equal(as_img["logits"].data, as_vid["logits"].data)
    np.testing.assert_array_equal(as_img["tokens"].tokens.data,
                                  as_vid["tokens"].tokens.data)


def test_frame_decomposition_uses_r0_by_default():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=12)
    clip = rand_frames(np.random.default_rng(12), cfg, 2)
    per_frame = model.forward_frames(clip)
    # each frame alone must equal its own image pass (which uses r_0)
    single = model.forward_image(clip[:, 1])
    np.testing.assert_array_equal(per_frame["objects"].data[:, 1],
                                  single["objects"].data)


def test_frame_decomposition_true_time_flag():
    cfg = tiny_cfg(frame_true_time=True)
    model = m.VideoTransformer(cfg, seed=13)
    clip = rand_frames(np.random.default_rng(13), cfg, 1)
    per_frame = model.forward_frames(clip)
    img_t1 = model.forward_video(
        clip[:, 1:2], time_indices=np.ones((1, 1), dtype=np.intp))
    np.testing.assert_array_equal(
        per_frame["objects"].data[:, 1],
        img_t1["objects"].data.reshape(1, 4, cfg.d))


def test_predict_haog_zero_heads():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=14)
    for name in ["head.box", "head.exist", "head.contact"]:
        for part in [".weight", ".bias"]:
            t = model.params[name + part]
            model.params[name + part] = Tensor(np.zeros_like(t.data),
                                               requires_grad=True)
    tokens = Tensor(np.random.default_rng(14).normal(size=(3, 4, cfg.d)))
    pred = model.predict_haog(tokens)
    np.testing.assert_array_equal(pred.box.data, np.full((3, 4, 4), 0.5))
    np.testing.assert_array_equal(pred.exist.data, np.zeros((3, 4)))
    np.testing.assert_array_equal(pred.contact.data, np.zeros((3, 2, 2)))


def test_contact_head_pairing_is_fixed():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=15)
    rng = np.random.default_rng(15)
    base = rng.normal(size=(1, 4, cfg.d))
    pred0 = model.predict_haog(Tensor(base))
    # changing slots 1 and 3 must not move edge 0's logits
    moved = base.copy()
    moved[0, 1] += 1.0
    moved[0, 3] -= 2.0
    pred1 = model.predict_haog(Tensor(moved))
    np.testing.assert_array_equal(pred0.contact.data[0, 0],
                                  pred1.contact.data[0, 0])
    assert not np.allclose(pred0.contact.data[0, 1], pred1.contact.data[0, 1])


def test_head_sharing_across_slots():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=16)
    tok = np.random.default_rng(16).normal(size=(1, 4, cfg.d))
    tok[0, 1] = tok[0, 0]  # identical tokens in slots 0 and 1
    pred = model.predict_haog(Tensor(tok))
    np.testing.assert_array_equal(pred.box.data[0, 0], pred.box.data[0, 1])
    assert pred.exist.data[0, 0] == pred.exist.data[0, 1]


def test_classifier_uniform_at_zero_and_linear():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=17)
    model.params["head.cls.weight"] = Tensor(np.zeros((cfg.d, cfg.classes)),
                                             requires_grad=True)
    v = Tensor(np.random.default_rng(17).normal(size=(1, cfg.d)))
    logits = model.classify(v)
    np.testing.assert_array_equal(logits.data, np.zeros((1, cfg.classes)))
    assert abs(ad.cross_entropy(ad.reshape(logits, (cfg.classes,)), 2).item()
               - np.log(cfg.classes)) < 1e-12
    # linearity with zero bias
    model.params["head.cls.weight"] = Tensor(
        np.random.default_rng(18).normal(size=(cfg.d, cfg.classes)),
        requires_grad=True)
    a = model.classify(v).data
    b = model.classify(Tensor(2.0 * v.data)).data
    np.testing.assert_allclose(b, 2.0 * a, atol=1e-12)


def test_param_count_closed_form():
    for cfg in [tiny_cfg(),
                tiny_cfg(objects=0, graph_heads=False),
                tiny_cfg(objects=0, graph_heads=False, pooled_graph_heads=True),
                tiny_cfg(contact_two_logits=False),
                m.ModelConfig()]:
        got = sum(int(np.prod(s)) for s in m.parameter_shapes(cfg).values())
        assert got == m.param_count(cfg), cfg


def test_shared_shapes_init_identically_across_configs():
    a = m.init_parameters(tiny_cfg(), seed=33)
    b = m.init_parameters(tiny_cfg(objects=0, graph_heads=False,
                                   pooled_graph_heads=True), seed=33)
    for name in set(a) & set(b):
        np.testing.assert_array_equal(a[name].data, b[name].data)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=19)
    path = tmp_path / "model.ckpt"
    m.save_checkpoint(path, model, extra={"note": "x"})
    loaded, meta = m.load_checkpoint(path)
    assert meta["note"] == "x"
    assert loaded.cfg == cfg
    assert set(loaded.params) == set(model.params)
    for k in model.params:
        assert np.array_equal(loaded.params[k].data, model.params[k].data)
    frames = rand_frames(np.random.default_rng(19), cfg, 1)
    np.testing.assert_array_equal(model.forward_video(frames)["logits"].data,
                                  loaded.forward_video(frames)["logits"].data)


def test_checkpoint_rejects_mismatched_params(tmp_path):
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=20)
    del model.params["head.cls.bias"]
    path = tmp_path / "broken.ckpt"
    m.save_checkpoint(path, model)
    with pytest.raises(ValueError):
        m.load_checkpoint(path)


def test_backbone_gradients_flow_to_all_parameter_groups():
    cfg = tiny_cfg()
    model = m.VideoTransformer(cfg, seed=21)
    rng = np.random.default_rng(21)
    # move off the zero-projection init so every path carries signal
    for k, t in model.params.items():
        model.params[k] = Tensor(t.data + rng.uniform(-0.2, 0.2, t.shape),
                                 requires_grad=True)
    frames = rand_frames(rng, cfg, 1)
    with Tape() as tape:
        out = model.forward_video(frames)
        pred = model.predict_haog(out["objects"])
        loss = (ad.cross_entropy(out["logits"], [3])
                + ad.mean(pred.box) + ad.mean(pred.exist)
                + ad.mean(pred.contact))
        tape.backward(loss)
    for k, t in model.params.items():
        assert t.grad is not None and np.any(t.grad != 0.0), k
