import numpy as np
import pytest

from emosteer.corpus import EKMAN, LabeledCorpus, fixture_path, load_corpus
from emosteer.stats import LAMBDA_GRID
from emosteer.steering import (
    MeanActivation,
    StyleLabelSet,
    StyleVectorSet,
    build_all_targets,
    build_style_vectors,
    collect_mean_activation,
    encode_samples,
    load_style_vectors,
    save_style_vectors,
    steer_generate,
)
from emosteer.synthetic import CONTRAST, TARGET, build_vectors, make_setup, target_score_curve
from emosteer.transformer import DecodeParams, ModelConfig, forward, new_model, next_token_distribution, tokenize

from oracles import difference_of_means, forward_oracle, softmax


def _mean(label, rows):
    arr = np.asarray(rows, dtype=np.float64)
    return MeanActivation(label, arr, 1)


# -- mean activations ---------------------------------------------------------

def test_mean_of_one_sample_is_that_sample(tiny_model):
    seq = tokenize("single sample")
    m = collect_mean_activation(tiny_model, [seq])
    assert np.array_equal(m.per_layer, forward(tiny_model, seq).acts.pooled("mean"))
    assert m.sample_count == 1 and m.pooling == "mean"


def test_mean_of_two_samples(tiny_model):
    a, b = tokenize("first"), tokenize("second one")
    u = forward(tiny_model, a).acts.pooled("last")
    w = forward(tiny_model, b).acts.pooled("last")
    m = collect_mean_activation(tiny_model, [a, b], pooling="last")
    np.testing.assert_array_equal(m.per_layer, (u + w) / 2)


def test_thirty_sample_mean_matches_oracle(tiny_model, fixture_corpus):
    texts = [s.text for s in fixture_corpus.samples[:30]]
    seqs = encode_samples(texts)
    m = collect_mean_activation(tiny_model, seqs)
    pooled = [forward_oracle(tiny_model, s)[1].mean(axis=1) for s in seqs]
    ref = sum(pooled) / len(pooled)
    assert np.max(np.abs(m.per_layer - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_parallel_collection_is_bit_identical(tiny_model, fixture_corpus):
    seqs = encode_samples([s.text for s in fixture_corpus.samples[:20]])
    serial = collect_mean_activation(tiny_model, seqs)
    threaded = collect_mean_activation(tiny_model, seqs, workers=4)
    assert np.array_equal(serial.per_layer, threaded.per_layer)


def test_collect_rejects_empty_and_bad_pooling(tiny_model):
    with pytest.raises(ValueError):
        collect_mean_activation(tiny_model, [])
    with pytest.raises(ValueError):
        collect_mean_activation(tiny_model, [[1, 2]], pooling="max")


# -- style vectors ------------------------------------------------------------

def test_single_contrast_difference():
    v = build_style_vectors(_mean("joy", [[1, 1]]), [_mean("sadness", [[0, 2]])])
    assert v.per_layer.tolist() == [[1, -1]]


def test_two_contrast_difference():
    v = build_style_vectors(_mean("joy", [[3, 3]]), [_mean("a", [[0, 0]]), _mean("b", [[2, 2]])])
    assert v.per_layer.tolist() == [[2, 2]]


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        build_style_vectors(_mean("joy", [[1, 1]]), [_mean("x", [[1, 1, 1]])])
    with pytest.raises(ValueError):
        build_style_vectors(_mean("joy", [[1, 1]]), [])


def test_contrast_order_does_not_matter(rng):
    t = _mean("t", rng.normal(size=(3, 5)))
    cs = [_mean(f"c{i}", rng.normal(size=(3, 5))) for i in range(6)]
    a = build_style_vectors(t, cs).per_layer
    b = build_style_vectors(t, cs[::-1]).per_layer
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_label_set_invariants():
    assert StyleLabelSet.ekman_default("joy").contrasts == ("anger", "disgust", "fear", "sadness", "surprise", "neutral")
    with pytest.raises(ValueError):
        StyleLabelSet("joy", ("joy",))
    with pytest.raises(ValueError):
        StyleLabelSet("joy", ())
    with pytest.raises(ValueError):
        StyleLabelSet("joy", ("fear", "fear"))


def test_six_targets_each_with_six_contrasts(default_vectors, fixture_corpus):
    assert set(default_vectors) == set(EKMAN)
    for target, vs in default_vectors.items():
        assert len(vs.provenance["contrasts"]) == 6
        assert "neutral" in vs.provenance["contrasts"]
        assert vs.provenance["corpus_hash"] == fixture_corpus.content_hash


def test_fixture_vectors_match_oracle(tiny_model, fixture_corpus):
    sets = build_all_targets(tiny_model, fixture_corpus)
    pooled = {}
    for label in fixture_corpus.counts:
        pooled[label] = [forward(tiny_model, s).acts.pooled("mean") for s in encode_samples(fixture_corpus.texts(label))]
    for target, vs in sets.items():
        ref = difference_of_means(pooled[target], [pooled[c] for c in vs.provenance["contrasts"]])
        assert np.max(np.abs(vs.per_layer - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_token_limit_clamped_to_context(fixture_corpus):
    small = new_model(ModelConfig(num_layers=1, hidden_dim=8, num_heads=2, max_context=16))
    sets = build_all_targets(small, fixture_corpus, targets=["joy"])
    assert sets["joy"].provenance["token_limit"] == 16


def test_missing_label_error(tiny_model, fixture_corpus):
    kept = LabeledCorpus.from_samples([s for s in fixture_corpus.samples if s.ekman_label != "fear"])
    with pytest.raises(KeyError, match="fear"):
        build_all_targets(tiny_model, kept)


def test_two_label_pairwise_difference(tiny_model):
    setup = make_setup(seed=1, samples_per_style=6, num_layers=2, hidden_dim=16)
    model = new_model(setup.model_config)
    vs = build_all_targets(model, setup.corpus, targets=[TARGET], contrasts={TARGET: [CONTRAST]},
                           tokenizer=setup.vocab)[TARGET]
    enc = {lab: [forward(model, setup.vocab.encode(t)).acts.pooled("mean") for t in setup.corpus.texts(lab)]
           for lab in (TARGET, CONTRAST)}
    ref = np.mean(enc[TARGET], axis=0) - np.mean(enc[CONTRAST], axis=0)
    np.testing.assert_allclose(vs.per_layer, ref, rtol=1e-12, atol=1e-14)


def test_provenance_required():
    with pytest.raises(ValueError):
        StyleVectorSet("joy", np.zeros((2, 4)), {})


def test_scaling_at_injection_point(default_model, default_vectors):
    """a(l2) - a(l1) equals (l2 - l1) v at the first injected layer."""
    vs = default_vectors["anger"]
    toks = tokenize("scaling check")
    for layer in (0, 2):
        mask = {layer, layer + 1}
        a1 = forward(default_model, toks, vs.plan(0.05, mask)).acts.per_position[layer]
        a2 = forward(default_model, toks, vs.plan(0.30, mask)).acts.per_position[layer]
        np.testing.assert_allclose(a2 - a1, np.broadcast_to(0.25 * vs.per_layer[layer], a1.shape),
                                   rtol=0, atol=1e-12)


# -- steered generation -------------------------------------------------------

def test_lambda_zero_text_is_target_independent(default_model, default_vectors):
    d = DecodeParams(max_new_tokens=32, seed=77)
    texts = {steer_generate(default_model, "Tell me a story.", default_vectors[t], 0.0, decode=d).text for t in EKMAN}
    assert len(texts) == 1


def test_generation_result_records_everything(default_model, default_vectors):
    d = DecodeParams(max_new_tokens=8, seed=1)
    r = steer_generate(default_model, "Hi", default_vectors["joy"], 0.1, layer_mask=[2, 0], decode=d)
    assert r.target == "joy" and r.lam == 0.1 and r.layer_mask == (0, 2)
    assert r.decode == d.as_dict()
    assert r.provenance["model_checksum"] == default_model.checksum()
    assert "corpus_hash" in r.provenance
    assert len(r.tokens) == 8


def test_large_lambda_warns(default_model, default_vectors):
    with pytest.warns(UserWarning, match="0.35"):
        r = steer_generate(default_model, "Hi", default_vectors["joy"], 0.5, decode=DecodeParams(max_new_tokens=2))
    assert r.warnings
    with pytest.raises(ValueError):
        steer_generate(default_model, "Hi", default_vectors["joy"], float("inf"))


def test_vector_file_round_trip(tmp_path, default_model, default_vectors, tiny_model):
    path = tmp_path / "v.json"
    save_style_vectors(default_vectors, path)
    back = load_style_vectors(path, default_model)
    for t in EKMAN:
        assert np.array_equal(back[t].per_layer, default_vectors[t].per_layer)
        assert back[t].provenance == dict(default_vectors[t].provenance)
    with pytest.raises(ValueError, match="model needs"):
        load_style_vectors(path, tiny_model)


# -- synthetic two-style setup on a 1-layer model -----------------------------

@pytest.fixture(scope="module")
def one_layer():
    setup = make_setup(seed=0, num_layers=1)
    model, vectors = build_vectors(setup)
    return setup, model, vectors


def _target_mass(model, vectors, toks, lam, ids):
    logits, _ = forward_oracle(model, toks, vectors.per_layer, lam)
    return float(softmax(logits[-1])[ids].sum())


def test_next_token_distribution_matches_oracle(one_layer):
    setup, model, vectors = one_layer
    toks = setup.vocab.encode(setup.prompts[0])
    ours = next_token_distribution(forward(model, toks, vectors.plan(0.35)).logits[-1], 1.0, 0)
    logits, _ = forward_oracle(model, toks, vectors.per_layer, 0.35)
    np.testing.assert_allclose(ours, softmax(logits[-1]), atol=1e-12)


def test_target_class_mass_rises_with_lambda(one_layer):
    setup, model, vectors = one_layer
    ids = sorted(setup.target_ids)
    masses = {lam: np.mean([_target_mass(model, vectors, setup.vocab.encode(p), lam, ids) for p in setup.prompts])
              for lam in (-0.15, 0.0, 0.15, 0.35)}
    assert masses[-0.15] < masses[0.0] < masses[0.15] < masses[0.35]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_steered_generation_sign(seed):
    setup = make_setup(seed=seed, num_layers=1)
    neg, zero, pos, high = target_score_curve(setup, (-0.15, 0.0, 0.15, 0.35))
    assert pos > zero
    assert high > zero
    assert neg <= zero
