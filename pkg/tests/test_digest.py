import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jitcheck.digest import (
    IDENTITY_PARAMS,
    MD5_IV,
    DigestParams,
    md5_reference,
    parameterized_digest,
)
from jitcheck.program import generate_program, ArtifactId
from md5_oracle import md5_oracle

RFC1321_VECTORS = [
    (b"", "d41d8cd98f00b204e9800998ecf8427e"),
    (b"a", "0cc175b9c0f1b6a831c399e269772661"),
    (b"abc", "900150983cd24fb0d6963f7d28e17f72"),
    (b"message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
    (b"abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
    (
        b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789",
        "d174ab98d277d9f5a5611c2c9f419d9f",
    ),
    (b"1234567890" * 8, "57edf4a22be3c955ac49da2e2107b67a"),
]

words = st.integers(min_value=0, max_value=0xFFFFFFFF)
params_strategy = st.builds(
    DigestParams,
    iv=st.tuples(words, words, words, words),
    round_masks=st.lists(words, min_size=64, max_size=64).map(tuple),
    out_mask=st.binary(min_size=16, max_size=16),
)


def random_params(rng):
    return DigestParams(
        tuple(rng.getrandbits(32) for _ in range(4)),
        tuple(rng.getrandbits(32) for _ in range(64)),
        rng.randbytes(16),
    )


@pytest.mark.parametrize("message,expected", RFC1321_VECTORS)
def test_rfc1321_vectors(message, expected):
    assert md5_reference(message).hex() == expected
    assert parameterized_digest(IDENTITY_PARAMS, message).hex() == expected
    assert md5_oracle(message).hex() == expected


def test_identity_params_shape():
    assert IDENTITY_PARAMS.iv == MD5_IV
    assert IDENTITY_PARAMS.round_masks == (0,) * 64
    assert IDENTITY_PARAMS.out_mask == bytes(16)
    assert IDENTITY_PARAMS.is_identity()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(iv=(1, 2, 3), round_masks=(0,) * 64, out_mask=bytes(16)),
        dict(iv=(1, 2, 3, 4), round_masks=(0,) * 63, out_mask=bytes(16)),
        dict(iv=(1, 2, 3, 4), round_masks=(0,) * 64, out_mask=bytes(15)),
        dict(iv=(1, 2, 3, 1 << 32), round_masks=(0,) * 64, out_mask=bytes(16)),
    ],
)
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        DigestParams(**kwargs)


@pytest.mark.parametrize("n", [0, 1, 55, 56, 57, 63, 64, 65, 119, 120, 127, 128, 129, 4096])
def test_identity_padding_boundaries(n):
    msg = bytes((i * 7 + 3) % 256 for i in range(n))
    assert parameterized_digest(IDENTITY_PARAMS, msg) == hashlib.md5(msg).digest()


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=4096))
def test_identity_matches_md5(msg):
    assert parameterized_digest(IDENTITY_PARAMS, msg) == hashlib.md5(msg).digest()


@settings(max_examples=100, deadline=None)
@given(params_strategy, st.binary(max_size=300))
def test_variant_matches_independent_oracle(params, msg):
    expected = md5_oracle(msg, params.iv, params.round_masks, params.out_mask)
    assert parameterized_digest(params, msg) == expected


@settings(max_examples=200, deadline=None)
@given(params_strategy, st.binary(min_size=16, max_size=16), st.binary(max_size=512))
def test_out_mask_linearity(params, mask, msg):
    base = parameterized_digest(params.with_out_mask(bytes(16)), msg)
    masked = parameterized_digest(params.with_out_mask(mask), msg)
    assert masked == bytes(a ^ b for a, b in zip(base, mask))


def test_deterministic():
    p = random_params(random.Random(5))
    msg = b"x" * 1000
    assert parameterized_digest(p, msg) == parameterized_digest(p, msg)


def test_single_bit_flip_changes_digest():
    rng = random.Random(2024)
    checked = 0
    while checked < 1000:
        p = random_params(rng) if rng.random() < 0.8 else IDENTITY_PARAMS
        msg = rng.randbytes(rng.randint(1, 200))
        bit = rng.randrange(len(msg) * 8)
        flipped = bytearray(msg)
        flipped[bit // 8] ^= 1 << (bit % 8)
        assert parameterized_digest(p, msg) != parameterized_digest(p, bytes(flipped))
        checked += 1


def test_generated_params_differ_from_md5():
    p = generate_program(
        "node-42", [ArtifactId("sp2pen.jar")], now=1_700_000_000, ttl=60, rng=random.Random(42)
    )
    got = parameterized_digest(p.params, b"abc")
    assert got != md5_reference(b"abc")
    # regression fixture from the first verified run
    assert got.hex() == "9940810b2d8da3fcee17854b63475ed1"
    assert got == md5_oracle(b"abc", p.params.iv, p.params.round_masks, p.params.out_mask)
