import pytest

from tiasu.tokens import token_to_id, tokenize


def test_synthetic_tokens_map_to_their_slot():
    assert token_to_id("w17", 64) == 17
    assert token_to_id("w70", 64) == 6  # wraps at the vocab size


def test_arbitrary_tokens_hash_stably():
    a = token_to_id("hello", 64)
    assert a == token_to_id("hello", 64)
    assert 0 <= a < 64


def test_tokenize_splits_on_whitespace():
    assert tokenize("w1 w2  w3", 64) == [1, 2, 3]


def test_tokenize_rejects_empty():
    with pytest.raises(ValueError):
        tokenize("   ", 64)
