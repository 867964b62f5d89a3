import hashlib
import math

import numpy as np
import pytest

from owclip.encoders import HashTextEncoder
from owclip.errors import (ConfigError, DimensionError, InputError,
                           NumericsError, StateError)
from owclip.smoothing import TrainSample, build_target
from owclip.toy_vit import EncoderConfig, ToyImageEncoder, init_prompt_block
from owclip.tuner import (ClassEntry, ClassFeatureSource, Episode, Hyperparams,
                          classify, episode_objective, gradient_check,
                          init_class_entry, load_episode_checkpoint,
                          parameter_fingerprint, route_proposal,
                          save_episode_checkpoint, train_episode)
from owclip.vectors import l2_normalize


def make_source(vectors, episode_ids=None):
    source = ClassFeatureSource(dim=len(vectors[0]))
    for i, v in enumerate(vectors):
        eid = 0 if episode_ids is None else episode_ids[i]
        source.add(ClassEntry(label=f"c{i}", context_vector=np.asarray(v, float),
                              phrases=[], episode_id=eid))
    return source


def synthetic_problem(seed, q=4, d=16, n_per=200, sigma=0.35):
    rng = np.random.default_rng(seed)
    cents = np.linalg.qr(rng.standard_normal((d, q)))[0].T
    source = ClassFeatureSource(dim=d)
    for k in range(q):
        source.add(ClassEntry(f"c{k}", l2_normalize(rng.standard_normal(d)), [], 0))
    samples = []
    data = {}
    for k in range(q):
        target = build_target(q, 1.0, 1.0, k)
        vecs = np.stack([l2_normalize(cents[k] + sigma * rng.standard_normal(d))
                         for _ in range(n_per)])
        data[k] = vecs
        samples.extend(TrainSample(v, k, 1.0, "simple", target) for v in vecs)
    return source, samples, data


# ---- init_class_entry ----

def test_init_single_phrase_equals_embedding():
    txt = HashTextEncoder(dim=16)
    entry = init_class_entry("zebra", ["black and white stripes"], txt, 0)
    assert np.allclose(entry.context_vector,
                       txt.encode_text("black and white stripes"), atol=1e-12)


def test_init_two_phrases_mean_then_normalize():
    txt = HashTextEncoder(dim=16)
    u = txt.encode_text("long neck")
    v = txt.encode_text("patchy coat")
    entry = init_class_entry("giraffe", ["long neck", "patchy coat"], txt, 0)
    want = (u + v) / 2
    want = want / np.linalg.norm(want)
    assert np.allclose(entry.context_vector, want, atol=1e-12)


def test_init_empty_phrases_rejected():
    with pytest.raises(InputError):
        init_class_entry("x", [], HashTextEncoder(), 0)


def test_init_template_phrase_mode():
    # label-only fallback uses the plain template phrase
    txt = HashTextEncoder(dim=16)
    entry = init_class_entry("zebra", ["a photo of zebra"], txt, 0)
    assert np.allclose(entry.context_vector, txt.encode_text("a photo of zebra"))


# ---- classify / route ----

def test_classify_softmax_hand_value():
    e = np.zeros(4)
    e[0] = 1.0
    source = make_source([[0.9, 0.1, 0.0, 0.0], [0.1, 0.9, 0.0, 0.0]])
    # engineer scores (0.9, 0.1): use orthonormal basis directly
    source = make_source([np.eye(4)[0], np.eye(4)[1]])
    row = classify(np.array([0.9, 0.1, 0.0, 0.0]) / np.linalg.norm([0.9, 0.1, 0.0, 0.0]),
                   source, temperature=0.1)
    # scores are cosines; build the expected value from them directly
    s = row.scores
    want = np.exp(s / 0.1) / np.exp(s / 0.1).sum()
    assert np.allclose(row.probs, want, atol=1e-12)


def test_classify_hand_softmax_09_01():
    # probs of scores (0.9, 0.1) at tau 0.1: softmax(9, 1)
    z = np.array([9.0, 1.0])
    want = np.exp(z - z.max())
    want /= want.sum()
    assert want[0] == pytest.approx(0.999664650, abs=1e-9)
    source = make_source([np.eye(4)[0], np.eye(4)[1]])
    emb = l2_normalize(0.9 * np.eye(4)[0] + 0.1 * np.eye(4)[1])
    # cosines here are not exactly (0.9, 0.1); check the formula instead
    row = classify(emb, source, temperature=0.1)
    expect = np.exp(row.scores / 0.1)
    expect /= expect.sum()
    assert np.allclose(row.probs, expect, atol=1e-12)


def test_classify_one_hot_limit():
    source = make_source([np.eye(4)[0], np.eye(4)[1], np.eye(4)[2]])
    row = classify(np.eye(4)[1], source, temperature=0.01)
    assert row.probs[1] > 0.999999


def test_classify_equal_scores_uniform():
    source = make_source([np.eye(4)[0], np.eye(4)[1]])
    emb = l2_normalize(np.array([1.0, 1.0, 0.0, 0.0]))
    row = classify(emb, source, temperature=0.07)
    assert np.allclose(row.probs, [0.5, 0.5], atol=1e-12)


def test_classify_scale_invariant():
    source = make_source([np.eye(4)[0], np.eye(4)[1]])
    e = np.array([0.3, 0.5, 0.1, 0.2])
    a = classify(e, source)
    b = classify(7.5 * e, source)
    assert np.max(np.abs(a.probs - b.probs)) < 1e-9
    assert np.argmax(a.probs) == np.argmax(b.probs)


def test_classify_empty_source():
    with pytest.raises(StateError):
        classify(np.ones(4), ClassFeatureSource(dim=4))


def test_route_clear_margin():
    source = make_source([np.eye(4)[0], np.eye(4)[1]])
    decision = route_proposal(np.eye(4)[0], source, t_threshold=0.5, temperature=0.05)
    assert decision.known and decision.label == "c0"


def test_route_below_threshold_unknown():
    source = make_source([np.eye(4)[0], np.eye(4)[1]])
    emb = l2_normalize(np.array([1.0, 1.0, 0.0, 0.0]))  # max prob exactly 0.5
    decision = route_proposal(emb, source, t_threshold=0.51)
    assert not decision.known


def test_route_tie_breaks_to_lowest_index():
    source = make_source([np.eye(4)[1], np.eye(4)[0]])  # c0 along axis 1
    emb = l2_normalize(np.array([1.0, 1.0, 0.0, 0.0]))  # equidistant
    decision = route_proposal(emb, source, t_threshold=0.4)
    assert decision.known and decision.label == "c0" and decision.class_index == 0


def test_route_monotone_in_t():
    rng = np.random.default_rng(0)
    source = make_source([l2_normalize(rng.standard_normal(8)) for _ in range(3)])
    embs = [l2_normalize(rng.standard_normal(8)) for _ in range(40)]
    for t_lo, t_hi in [(0.3, 0.5), (0.5, 0.7), (0.35, 0.9)]:
        for e in embs:
            lo = route_proposal(e, source, t_lo)
            hi = route_proposal(e, source, t_hi)
            if hi.known:
                assert lo.known  # raising t can only move known -> unknown


# ---- training ----

def test_zero_epochs_leaves_parameters_unchanged():
    source, samples, _ = synthetic_problem(0, n_per=5)
    before = source.matrix().copy()
    ep = Episode(0, [0, 1, 2, 3], Hyperparams(epochs=0, seed=0))
    report = train_episode(samples, ep, source)
    assert np.array_equal(source.matrix(), before)
    assert report.epoch_losses == []
    assert report.final_train_accuracy is None


def test_training_deterministic_reports():
    source_a, samples_a, _ = synthetic_problem(3, n_per=40)
    source_b, samples_b, _ = synthetic_problem(3, n_per=40)
    ep_a = Episode(0, [0, 1, 2, 3], Hyperparams(epochs=5, seed=9))
    ep_b = Episode(0, [0, 1, 2, 3], Hyperparams(epochs=5, seed=9))
    rep_a = train_episode(samples_a, ep_a, source_a)
    rep_b = train_episode(samples_b, ep_b, source_b)
    assert rep_a == rep_b
    assert source_a.matrix().tobytes() == source_b.matrix().tobytes()


def test_training_beats_centroid_oracle_minus_margin():
    source, samples, data = synthetic_problem(1)
    ep = Episode(0, [0, 1, 2, 3], Hyperparams(seed=1, holdout_fraction=0.0))
    report = train_episode(samples, ep, source)

    cents = {k: l2_normalize(vs.mean(axis=0)) for k, vs in data.items()}
    hits = total = 0
    for k, vs in data.items():
        for v in vs:
            sims = [float(v @ cents[j]) for j in sorted(cents)]
            hits += int(np.argmax(sims) == k)
            total += 1
    oracle = hits / total
    assert report.final_train_accuracy >= oracle - 0.02


def test_loss_non_increasing_in_19_of_20_runs():
    monotone = 0
    for seed in range(20):
        source, samples, _ = synthetic_problem(seed)
        ep = Episode(0, [0, 1, 2, 3], Hyperparams(seed=seed, holdout_fraction=0.0))
        rep = train_episode(samples, ep, source)
        ok = all(rep.epoch_losses[i + 1] <= rep.epoch_losses[i]
                 for i in range(len(rep.epoch_losses) - 1))
        monotone += int(ok)
    assert monotone >= 19


def test_training_freezes_earlier_episodes():
    rng = np.random.default_rng(5)
    d = 16
    source = make_source([l2_normalize(rng.standard_normal(d)) for _ in range(3)],
                         episode_ids=[0, 0, 1])
    frozen_before = source.params_bytes(before_episode=1)
    fp_before = parameter_fingerprint(source, before_episode=1)

    target = build_target(3, 1.0, 1.0, 2)
    samples = [TrainSample(l2_normalize(rng.standard_normal(d)), 2, 1.0, "simple", target)
               for _ in range(40)]
    ep = Episode(1, [2], Hyperparams(epochs=3, seed=0))
    train_episode(samples, ep, source)
    assert source.params_bytes(before_episode=1) == frozen_before
    assert parameter_fingerprint(source, before_episode=1) == fp_before


def test_training_rejects_sample_for_inactive_class():
    source, samples, _ = synthetic_problem(0, n_per=3)
    ep = Episode(0, [0, 1], Hyperparams(epochs=1))
    with pytest.raises(InputError):
        train_episode(samples, ep, source)


def test_training_rejects_wrong_target_q():
    rng = np.random.default_rng(0)
    source = make_source([l2_normalize(rng.standard_normal(8)) for _ in range(3)])
    bad = [TrainSample(l2_normalize(rng.standard_normal(8)), 0, 1.0, "simple",
                       build_target(2, 1.0, 1.0, 0))]
    ep = Episode(0, [0, 1, 2], Hyperparams(epochs=1))
    with pytest.raises(DimensionError):
        train_episode(bad, ep, source)


def test_numerics_error_reports_epoch_and_batch():
    rng = np.random.default_rng(0)
    source = make_source([l2_normalize(rng.standard_normal(4)) for _ in range(2)])
    poisoned = np.array([np.inf, 0.0, 0.0, 0.0])
    samples = [TrainSample(poisoned, 0, 1.0, "simple", build_target(2, 1.0, 1.0, 0))]
    ep = Episode(0, [0, 1], Hyperparams(epochs=1, seed=0))
    with pytest.raises(NumericsError, match="epoch=0"):
        train_episode(samples, ep, source)


# ---- gradient checks ----

def test_gradient_check_quadratic():
    a = np.diag([1.0, 2.0, 3.0])

    def loss(p):
        return float(0.5 * p @ a @ p), a @ p

    err = gradient_check(loss, np.array([0.3, -0.7, 1.1]), h=1e-4)
    assert err < 1e-8


def test_gradient_check_rejects_bad_h():
    with pytest.raises(ConfigError):
        gradient_check(lambda p: (0.0, p * 0), np.ones(2), h=1e-2)


def full_pipeline_loss(seed):
    """Loss over (prompt tokens + active context vectors) for a tiny batch."""
    rng = np.random.default_rng(seed)
    enc = ToyImageEncoder(EncoderConfig(seed=seed))
    q, d, m = 3, 16, 4
    shape = (2, m, d)
    n_prompt = 2 * m * d

    from owclip.toy_vit import PromptBlock, TokenSequence

    seqs = [TokenSequence(cls=rng.standard_normal(d), patches=rng.standard_normal((4, d)))
            for _ in range(3)]
    targets = [build_target(q, 1.0, 0.8, i % q) for i in range(3)]
    samples = [TrainSample(np.zeros(d), i % q, 0.8, "simple", targets[i], tokens=seqs[i])
               for i in range(3)]
    frozen_ctx = rng.standard_normal((1, d))  # one frozen class as negative

    def loss(flat):
        block = PromptBlock(0, flat[:n_prompt].reshape(shape))
        ctx_active = flat[n_prompt:].reshape(q - 1, d)
        context = np.vstack([frozen_ctx, ctx_active])
        value, grad_ctx, grad_prompt, _ = episode_objective(
            samples, context, [1, 2], temperature=0.07,
            encoder=enc, blocks=[block], active_block=0)
        return value, np.concatenate([grad_prompt.ravel(), grad_ctx.ravel()])

    params = np.concatenate([
        0.05 * rng.standard_normal(n_prompt),
        rng.standard_normal((q - 1) * d)])
    return loss, params


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_check_full_pipeline(seed):
    loss, params = full_pipeline_loss(seed)
    assert gradient_check(loss, params, h=1e-5) < 1e-4


def test_prompt_gradients_update_only_active_block():
    rng = np.random.default_rng(2)
    enc = ToyImageEncoder(EncoderConfig(seed=2))
    d = 16
    frozen = init_prompt_block(0, 2, 3, d, seed=1).freeze()
    active = init_prompt_block(1, 2, 3, d, seed=2)
    frozen_bytes = frozen.tokens_per_layer.tobytes()
    source = make_source([l2_normalize(rng.standard_normal(d)) for _ in range(2)],
                         episode_ids=[1, 1])

    from owclip.toy_vit import TokenSequence

    samples = [TrainSample(np.zeros(d), i % 2, 1.0, "simple", build_target(2, 1.0, 1.0, i % 2),
                           tokens=TokenSequence(cls=rng.standard_normal(d),
                                                patches=rng.standard_normal((4, d))))
               for i in range(8)]
    ep = Episode(1, [0, 1], Hyperparams(epochs=2, seed=0), prompt_block=active)
    before_active = active.tokens_per_layer.copy()
    train_episode(samples, ep, source, encoder=enc, frozen_blocks=[frozen])
    assert frozen.tokens_per_layer.tobytes() == frozen_bytes
    assert not np.array_equal(active.tokens_per_layer, before_active)


# ---- checkpoints ----

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    source = make_source([l2_normalize(rng.standard_normal(8)) for _ in range(3)],
                         episode_ids=[0, 1, 1])
    block = init_prompt_block(1, 2, 4, 16, seed=3)
    ep = Episode(1, [1, 2], Hyperparams(epochs=7, seed=4), prompt_block=block,
                 frozen_fingerprint="ab" * 32, finalized=True)
    path = tmp_path / "ep1.ckpt"
    save_episode_checkpoint(path, ep, source)
    header, context, prompt, fp = load_episode_checkpoint(path)
    assert header["episode_id"] == 1
    assert header["labels"] == ["c1", "c2"]
    assert fp == "ab" * 32
    assert np.array_equal(context, np.stack([source.entries[1].context_vector,
                                             source.entries[2].context_vector]))
    assert np.array_equal(prompt, block.tokens_per_layer)
    # byte-exact when re-saved
    first = path.read_bytes()
    save_episode_checkpoint(path, ep, source)
    assert path.read_bytes() == first
