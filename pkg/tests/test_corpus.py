import json
from collections import Counter

import numpy as np
import pytest

from isaiv.corpus import (
    SEP_ID,
    UNK_ID,
    CorpusFormatError,
    Example,
    SynthConfig,
    UnknownLabelError,
    Vocabulary,
    build_vocab,
    encode_example,
    encode_tokens,
    generate_confounded,
    load_jsonl,
    load_truth,
    save_jsonl,
    tokenize,
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_tokenize_detaches_punctuation():
    assert tokenize("Great Food, bad service!") == ("great", "food", ",", "bad", "service", "!")


def test_load_single_record(tmp_path):
    p = write_lines(tmp_path / "a.jsonl", ['{"text":"great food","label":"positive"}'])
    (ex,) = load_jsonl(p)
    assert ex.tokens == ("great", "food")
    assert ex.label == "positive"
    assert ex.aspect is None and ex.implicit is None
    assert ex.id == "1"


def test_load_optional_fields(tmp_path):
    p = write_lines(tmp_path / "a.jsonl", ['{"id":"x7","text":"ok","label":"Neutral","aspect":"Wine List","implicit":true}'])
    (ex,) = load_jsonl(p)
    assert (ex.id, ex.label, ex.aspect, ex.implicit) == ("x7", "neutral", ("wine", "list"), True)


def test_unknown_label_names_line(tmp_path):
    p = write_lines(tmp_path / "a.jsonl", ['{"text":"a","label":"positive"}', '{"text":"b","label":"mixed"}'])
    with pytest.raises(UnknownLabelError, match="line 2"):
        load_jsonl(p)


@pytest.mark.parametrize(
    "line",
    [
        "not json",
        '{"label":"positive"}',
        '{"text":"a","label":1}',
        '{"text":"a","label":"positive","implicit":"yes"}',
        '{"text":"!!","label":"positive","aspect":3}',
        '{"text":"   ","label":"positive"}',
    ],
)
def test_malformed_records(tmp_path, line):
    with pytest.raises(CorpusFormatError, match="line 1"):
        load_jsonl(write_lines(tmp_path / "a.jsonl", [line]))


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_jsonl(tmp_path / "nope.jsonl")


def test_jsonl_round_trip(tmp_path):
    exs = [
        Example("a", ("good", "food"), "positive"),
        Example("b", ("meh",), "neutral", aspect=("wine",), implicit=True),
        Example("c", ("bad",), "negative", implicit=False),
    ]
    save_jsonl(exs, tmp_path / "x.jsonl")
    assert load_jsonl(tmp_path / "x.jsonl") == exs


def test_vocab_examples():
    v = build_vocab([Example("0", ("a", "b", "a"), "positive")])
    assert v.stoi == {"<pad>": 0, "<unk>": 1, "[sep]": 2, "a": 3, "b": 4}
    assert build_vocab([Example("0", ("x",), "positive")], min_count=2).size == 3


def test_vocab_matches_hash_count_oracle():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(50)]
    exs = [Example(str(i), tuple(words[j] for j in rng.integers(50, size=6)), "positive") for i in range(100)]
    for min_count in (1, 3, 10):
        counts = Counter(t for ex in exs for t in ex.tokens)
        expected = {t for t, c in counts.items() if c >= min_count}
        v = build_vocab(exs, min_count)
        assert set(v.tokens()) == expected
        # bijection over ids >= 3, stable under rebuild
        assert sorted(v.stoi[t] for t in expected) == list(range(3, 3 + len(expected)))
        assert build_vocab(exs, min_count).itos == v.itos


def test_vocab_rebuilds_from_token_list():
    v = build_vocab([Example("0", ("a", "b"), "positive", aspect=("c",))])
    assert Vocabulary(v.tokens()).itos == v.itos


def test_encode_with_aspect():
    v = Vocabulary(["good", "food"])
    assert encode_tokens(v, ["good"], ["food"]) == [3, SEP_ID, 4]


def test_encode_oov_is_unk():
    v = Vocabulary(["good", "food"])
    assert encode_tokens(v, ["good", "zzz", "food"]) == [3, UNK_ID, 4]


def test_encode_length_invariant():
    v = Vocabulary(["a"])
    assert len(encode_example(v, Example("0", ("a", "b", "c"), "positive"))) == 3
    assert len(encode_example(v, Example("0", ("a", "b", "c"), "positive", aspect=("x", "y")))) == 6


# --- synthetic generator ---------------------------------------------------


def conf_class(ex, split):
    for tok in ex.tokens:
        if tok in split.ground_truth_confounder_tokens:
            return {"pos": "positive", "neu": "neutral", "neg": "negative"}[tok.split("_")[1]]
    raise AssertionError("no confounder token")


def causal_oracle(ex, split):
    hits = [t for t in ex.tokens if t in split.ground_truth_causal_tokens]
    assert len(hits) == 1
    return {"pos": "positive", "neu": "neutral", "neg": "negative"}[hits[0].split("_")[1]]


@pytest.mark.parametrize("scenario", ["basic", "inter_clause", "inter_aspect"])
def test_forced_cooccurrence(scenario):
    split = generate_confounded(SynthConfig(n_train=600, n_test=30, rho_train=1.0, scenario=scenario))
    assert all(conf_class(ex, split) == ex.label for ex in split.train)
    assert not any(ex.implicit for ex in split.train)


def test_rho_zero_never_matches():
    split = generate_confounded(SynthConfig(n_train=600, n_test=30, rho_train=0.0))
    assert all(conf_class(ex, split) != ex.label for ex in split.train)
    assert all(ex.implicit for ex in split.train)


def test_rho_half_counting_oracle():
    split = generate_confounded(SynthConfig(n_train=10000, n_test=10, rho_train=0.5))
    rate = np.mean([conf_class(ex, split) == ex.label for ex in split.train])
    assert abs(rate - 0.5) < 0.02


@pytest.mark.parametrize("scenario", ["basic", "inter_clause", "inter_aspect", "dynamic_neutral"])
def test_causal_oracle_is_perfect(scenario):
    split = generate_confounded(SynthConfig(scenario=scenario, n_train=500, n_test=2000, seed=2))
    assert all(causal_oracle(ex, split) == ex.label for ex in split.train + split.test)


@pytest.mark.parametrize("scenario", ["basic", "inter_clause", "inter_aspect"])
def test_confounder_oracle_tracks_rho_test(scenario):
    split = generate_confounded(SynthConfig(scenario=scenario, n_train=100, n_test=2000, rho_test=0.1, seed=3))
    acc = np.mean([conf_class(ex, split) == ex.label for ex in split.test])
    assert abs(acc - 0.1) < 0.03


def test_scenario_layouts():
    clause = generate_confounded(SynthConfig(scenario="inter_clause", n_train=50, n_test=5))
    for ex in clause.train:
        i = ex.tokens.index("but")
        assert any(t.startswith("conf_") for t in ex.tokens[:i])
        assert any(t.startswith("cause_") for t in ex.tokens[i + 1:])
    aspect = generate_confounded(SynthConfig(scenario="inter_aspect", n_train=50, n_test=5))
    for ex in aspect.train:
        assert ex.aspect is not None and len(ex.aspect) == 1
        half = len(ex.tokens) // 2
        assert ex.tokens[half] == ex.aspect[0]
        assert any(t.startswith("implicit_") for t in ex.tokens[half:])
        assert not any(t.startswith("cause_") for t in ex.tokens)


def neutral_rate(examples, split):
    present = [ex for ex in examples if split.neutral_token in ex.tokens]
    return np.mean([ex.label == split.neutral_class for ex in present]), len(present) / len(examples)


def test_dynamic_neutral_rates():
    split = generate_confounded(SynthConfig(scenario="dynamic_neutral", n_train=4000, n_test=2000, rho_train=0.9, rho_test=0.1))
    assert split.ground_truth_confounder_tokens == {split.neutral_token}
    tr, share_tr = neutral_rate(split.train, split)
    te, share_te = neutral_rate(split.test, split)
    assert abs(tr - 0.9) < 0.03 and abs(te - 0.1) < 0.03
    assert abs(share_tr - 1 / 3) < 0.03 and abs(share_te - 1 / 3) < 0.03
    assert all(ex.tokens.count(split.neutral_token) <= 1 for ex in split.train)


def test_dynamic_neutral_implicit_flag():
    split = generate_confounded(SynthConfig(scenario="dynamic_neutral", n_train=300, n_test=300))
    for ex in split.train + split.test:
        present = split.neutral_token in ex.tokens
        assert ex.implicit == (present != (ex.label == split.neutral_class))


def test_balanced_and_override_class_counts():
    split = generate_confounded(SynthConfig(n_train=300, n_test=30, class_counts_train=(200, 50, 50)))
    c = Counter(ex.label for ex in split.train)
    assert (c["positive"], c["neutral"], c["negative"]) == (200, 50, 50)
    c = Counter(ex.label for ex in split.test)
    assert set(c.values()) == {10}


def test_sentence_length():
    for sc in ("basic", "inter_clause", "inter_aspect", "dynamic_neutral"):
        split = generate_confounded(SynthConfig(scenario=sc, n_train=50, n_test=5, sentence_len=9))
        assert all(len(ex.tokens) == 9 for ex in split.train)


@pytest.mark.parametrize(
    "kwargs",
    [dict(rho_train=1.5), dict(n_train=0), dict(scenario="rhetoric"), dict(n_causal_tokens=0), dict(sentence_len=1)],
)
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        generate_confounded(SynthConfig(**kwargs))


def test_determinism_and_save(tmp_path):
    cfg = SynthConfig(scenario="dynamic_neutral", n_train=200, n_test=100, seed=9)
    a, b = generate_confounded(cfg), generate_confounded(cfg)
    assert a.train == b.train and a.test == b.test
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    for name in ("train.jsonl", "test.jsonl", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert load_jsonl(tmp_path / "a" / "train.jsonl") == a.train
    truth = load_truth(tmp_path / "a" / "truth.json")
    assert truth["neutral_token"] == "filler_0"
    assert set(truth["causal_tokens"]) == a.ground_truth_causal_tokens
    assert json.loads((tmp_path / "a" / "truth.json").read_text())["scenario"] == "dynamic_neutral"


def test_seed_changes_output():
    assert generate_confounded(SynthConfig(n_train=50, n_test=5, seed=0)).train != generate_confounded(
        SynthConfig(n_train=50, n_test=5, seed=1)
    ).train

