import math
import random
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from uniso.textcodec import (
    CATEGORIES,
    DEFAULT_VOCAB,
    CodecError,
    DesignSpace,
    Kind,
    Metadata,
    Variable,
    Vocabulary,
    compose_input,
    detokenize,
    p10_decode,
    p10_encode,
    serialize_design,
    token_categories,
    tokenize,
)

V = DEFAULT_VOCAB


def toks(*names):
    out = []
    for n in names:
        if n == "+":
            out.append(V.sign_plus)
        elif n == "-":
            out.append(V.sign_minus)
        elif n.startswith("E"):
            out.append(V.exponent(int(n[1:])))
        else:
            out.append(V.digit(int(n)))
    return out


def test_vocabulary_size_formula():
    for e_max in (1, 8, 16):
        assert Vocabulary(e_max).size == 256 + 4 + 2 + 10 + 2 * e_max + 1
    assert V.size == 305
    assert len(V.token_names()) == V.size


def test_vocabulary_fingerprint_is_stable_and_sensitive():
    assert Vocabulary(16).fingerprint() == V.fingerprint()
    assert Vocabulary(8).fingerprint() != V.fingerprint()


def test_space_invariants():
    with pytest.raises(ValueError):
        DesignSpace((Variable("a", Kind.CONTINUOUS), Variable("a", Kind.CONTINUOUS)))
    with pytest.raises(ValueError):
        Variable("a", Kind.CONTINUOUS, lo=1.0, hi=1.0)
    with pytest.raises(ValueError):
        Variable("a", Kind.CATEGORICAL, k=1)


def test_metadata_invariants():
    with pytest.raises(ValueError):
        Metadata("", "d", "o")
    with pytest.raises(ValueError):
        Metadata("n", "two\nlines", "o")


def test_serialize_categorical_example():
    assert serialize_design(DesignSpace.categorical(2, 2), [0, 1]) == '{"x0":0,"x1":1}'


def test_serialize_rounds_to_sig_digits():
    space = DesignSpace.continuous(1, -1, 1)
    assert serialize_design(space, [0.123456], 4) == '{"x0":0.1235}'
    assert serialize_design(space, [0.0], 4) == '{"x0":0}'


def test_serialize_rejects_bad_input():
    with pytest.raises(CodecError):
        serialize_design(DesignSpace(()), [])
    with pytest.raises(CodecError, match="x1"):
        serialize_design(DesignSpace.continuous(2, 0, 1), [0.5, 1.5])
    with pytest.raises(CodecError):
        serialize_design(DesignSpace.continuous(1, 0, 1), [0.5], sig_digits=2)


def test_serialize_injective_at_precision():
    space = DesignSpace.continuous(3, -5, 5)
    rng = np.random.default_rng(0)
    xs = np.round(space.sample(500, rng), 2)
    texts = {serialize_design(space, x) for x in xs}
    assert len(texts) == len({tuple(x) for x in xs})


def test_compose_input_template():
    m = Metadata("Sphere8", "toy", "minimize")
    text = compose_input(m, '{"x0":0}')
    assert text == 'name: Sphere8; description: toy; objective: minimize; x: {"x0":0}'
    other = compose_input(Metadata("Other", "toy", "minimize"), '{"x0":0}')
    assert text.endswith('x: {"x0":0}') and other.endswith('x: {"x0":0}') and text != other


def test_tokenize_examples():
    assert tokenize("A") == [V.bos, 65, V.eos]
    assert tokenize("") == [V.bos, V.eos]
    assert detokenize([V.bos, 72, 73, V.eos]) == "HI"
    assert detokenize([V.bos, V.eos]) == ""
    with pytest.raises(CodecError):
        detokenize([V.bos, 72, V.pad, 73, V.eos])


def test_tokenize_roundtrip_random_ascii():
    rng = random.Random(0)
    for _ in range(1000):
        s = "".join(chr(rng.randrange(32, 127)) for _ in range(rng.randrange(0, 40)))
        t = tokenize(s)
        assert len(t) == len(s.encode()) + 2
        assert detokenize(t) == s


def test_composed_input_lossless():
    m = Metadata("Levy 10", "valleys, 10 reals", "min Levy")
    space = DesignSpace.continuous(3, -10, 10)
    text = compose_input(m, serialize_design(space, [1.5, -2.25, 9.999]))
    assert detokenize(tokenize(text)) == text


def test_p10_examples():
    assert p10_encode(1.31) == toks("+", "1", "3", "1", "E-2")
    assert p10_encode(0.0) == toks("+", "0", "0", "0", "E0")
    assert p10_encode(-0.00456) == toks("-", "4", "5", "6", "E-5")
    assert p10_decode(toks("+", "1", "3", "1", "E-2")) == 1.31
    assert p10_decode(toks("-", "0", "0", "0", "E0")) == 0.0
    assert p10_decode(toks("+", "9", "9", "9", "E-3")) == 0.999


def test_p10_half_even_and_carry():
    assert p10_decode(p10_encode(1.2345, 4)) == 1.234
    assert p10_decode(p10_encode(9.995, 3)) in (9.99, 10.0)
    assert p10_encode(999.5, 3) == toks("+", "1", "0", "0", "E1")


def test_p10_rejects_overflow_and_malformed():
    with pytest.raises(CodecError, match="e_max"):
        p10_encode(1e30)
    with pytest.raises(CodecError):
        p10_encode(float("nan"))
    with pytest.raises(CodecError):
        p10_decode(toks("1", "+", "3", "E0"))
    with pytest.raises(CodecError):
        p10_decode([V.sign_plus, V.digit(1), 65, V.exponent(0)])


@settings(max_examples=300, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(1, 6))
def test_p10_roundtrip_within_half_ulp(y, m):
    assume(y == 0 or abs(y) >= 1e-9)
    back = p10_decode(p10_encode(y, m))
    if y == 0:
        assert back == 0.0
        return
    ulp = Decimal(1).scaleb(math.floor(math.log10(abs(y))) - m + 1)
    assert abs(Decimal(back) - Decimal(y)) <= Decimal("0.5") * ulp * Decimal("1.000001")


def test_token_categories_partition_input():
    m = Metadata("OneMax 12", "12 bits", "max ones")
    text = compose_input(m, serialize_design(DesignSpace.categorical(2, 2), [0, 1]))
    cats = token_categories(text)
    assert len(cats) == len(tokenize(text))
    assert set(cats) <= set(CATEGORIES)
    assert cats[0] == "structural" and cats[-1] == "eos"
    design = text[text.index("{"):]
    tail = cats[-1 - len(design):-1]
    assert tail == ["structural", "structural", "key", "key", "structural", "structural", "numeric",
                    "structural", "structural", "key", "key", "structural", "structural", "numeric", "structural"]
