import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostforge.errors import ConfigError, ContractError, DegenerateMeasurementError
from ghostforge.optics import MeasurementRecord, generate_patterns, measure_sequence
from ghostforge.recon import ReconConfig, differential_cgi, normalize_unit, reconstruct, traditional_cgi

from helpers import dcgi_oracle, tgi_oracle


def run(obj, seed, n):
    h, w = obj.shape
    pats = generate_patterns(seed, n, h, w)
    return pats, measure_sequence(obj, pats)


def test_constant_object_is_null():
    pats, recs = run(np.full((6, 6), 0.4), 3, 50)
    assert np.abs(differential_cgi(pats, recs).pixels).max() <= 1e-10


def test_single_pattern_is_null():
    pats, recs = run(np.random.default_rng(0).random((5, 5)), 4, 1)
    img = differential_cgi(pats, recs, 1)
    assert np.all(img.pixels == 0.0) and img.n == 1
    assert np.all(traditional_cgi(pats, recs, 1).pixels == 0.0)


def test_toy_matches_oracle():
    obj = np.array([[1.0, 0.0], [0.0, 0.5]])
    pats, recs = run(obj, 17, 3)
    got = differential_cgi(pats, recs, 3).pixels
    want = dcgi_oracle([p.pixels.tolist() for p in pats], [r.s for r in recs], [r.r for r in recs])
    assert np.abs(got - want).max() < 1e-12


def test_traditional_toy_matches_oracle():
    obj = np.array([[1.0, 0.0], [0.0, 0.5]])
    pats, recs = run(obj, 17, 3)
    got = traditional_cgi(pats, recs, 3).pixels
    want = tgi_oracle([p.pixels.tolist() for p in pats], [r.s for r in recs])
    assert np.abs(got - want).max() < 1e-12


def test_traditional_not_null_for_constant_object():
    pats, recs = run(np.full((4, 4), 0.7), 5, 30)
    assert np.abs(traditional_cgi(pats, recs).pixels).max() > 1e-6
    assert np.abs(differential_cgi(pats, recs).pixels).max() <= 1e-10


def batched_dcgi_oracle(objects: np.ndarray, pats: np.ndarray) -> np.ndarray:
    """Differential estimate for many objects at once, straight from the formula."""
    flat = pats.reshape(len(pats), -1)
    s = objects.reshape(len(objects), -1) @ flat.T
    r = flat.sum(axis=1)
    coeff = s / r - s.mean(axis=1, keepdims=True) / r.mean()
    return (coeff @ (flat - flat.mean(axis=0))).reshape(objects.shape) / len(pats)


def test_every_binary_4x4_object_matches_oracle():
    pats = generate_patterns(99, 8, 4, 4)
    stack = np.array([p.pixels for p in pats])
    codes = np.arange(65536)
    objects = ((codes[:, None] >> np.arange(16)) & 1).astype(float).reshape(-1, 4, 4)
    want = batched_dcgi_oracle(objects, stack)
    plist = [p.pixels.tolist() for p in pats]
    for obj, expected in zip(objects, want):
        recs = measure_sequence(obj, pats, threads=1)
        got = differential_cgi(pats, recs, 8).pixels
        assert np.abs(got - expected).max() <= 1e-12
    # cross-check the batched oracle against the straight-line one on a few objects
    for k in (0, 1, 4660, 65535):
        recs = measure_sequence(objects[k], pats)
        straight = dcgi_oracle(plist, [r.s for r in recs], [r.r for r in recs])
        assert np.abs(straight - want[k]).max() <= 1e-12


def test_degenerate_reference():
    pats = generate_patterns(1, 3, 2, 2)
    recs = [MeasurementRecord(0, 1.0, 1.0), MeasurementRecord(1, 0.0, 0.0), MeasurementRecord(2, 1.0, 2.0)]
    with pytest.raises(DegenerateMeasurementError) as err:
        differential_cgi(pats, recs, 3)
    assert err.value.index == 1


def test_n_contract():
    pats, recs = run(np.ones((2, 2)), 1, 4)
    with pytest.raises(ContractError):
        differential_cgi(pats, recs, 0)
    with pytest.raises(ContractError):
        differential_cgi(pats, recs, 5)
    with pytest.raises(ContractError):
        traditional_cgi(pats, recs, 0)
    with pytest.raises(ConfigError):
        ReconConfig(n=0)
    with pytest.raises(ConfigError):
        ReconConfig(method="normalized")


def test_prefix_semantics():
    obj = np.random.default_rng(2).random((5, 5))
    pats, recs = run(obj, 8, 40)
    short_pats, short_recs = run(obj, 8, 25)
    a = differential_cgi(pats, recs, 25).pixels
    b = differential_cgi(short_pats, short_recs).pixels
    assert np.array_equal(a, b)
    stack = np.array([p.pixels for p in pats])
    assert np.array_equal(differential_cgi(stack, recs, 25).pixels, a)
    assert np.array_equal(reconstruct(pats, recs, ReconConfig("differential", 25)).pixels, a)


def test_reconstruction_correlates_with_object():
    obj = np.zeros((8, 8))
    obj[2:6, 2:6] = 1.0
    pats, recs = run(obj, 1, 3000)
    img = differential_cgi(pats, recs).pixels
    assert np.corrcoef(img.ravel(), obj.ravel())[0, 1] > 0.8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.integers(1, 30))
def test_null_property_any_seed(seed, c, n):
    pats, recs = run(np.full((4, 4), c), seed, n)
    assert np.abs(differential_cgi(pats, recs, n).pixels).max() <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_linearity(seed):
    rng = np.random.default_rng(seed)
    t1, t2 = rng.random((4, 4)) * 0.5, rng.random((4, 4)) * 0.5
    pats = generate_patterns(seed, 12, 4, 4)
    total = differential_cgi(pats, measure_sequence(t1 + t2, pats)).pixels
    parts = differential_cgi(pats, measure_sequence(t1, pats)).pixels + differential_cgi(pats, measure_sequence(t2, pats)).pixels
    assert np.abs(total - parts).max() <= 1e-10


def test_normalize_unit():
    out, flag = normalize_unit(np.array([-2.0, 0.0, 2.0]))
    assert out.tolist() == [0.0, 0.5, 1.0] and not flag
    x = np.array([[0.0, 0.3], [1.0, 0.7]])
    assert np.array_equal(normalize_unit(x)[0], x)
    out, flag = normalize_unit(np.full((3, 3), 4.2))
    assert flag and np.all(out == 0.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
def test_normalize_idempotent(values):
    x = np.array(values)
    once, _ = normalize_unit(x)
    twice, _ = normalize_unit(once)
    assert np.array_equal(once, twice)
    assert once.min() >= 0 and once.max() <= 1


def test_normalize_tolerance_flags_rounding_noise():
    pats, recs = run(np.full((6, 6), 0.3), 1, 20)
    img = differential_cgi(pats, recs)
    out, flag = normalize_unit(img, tol=1e-10)
    assert flag and np.all(out == 0.5)
