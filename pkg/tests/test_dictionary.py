import itertools

import numpy as np
import pytest
from sklearn.base import clone

from shiftdml import DictionarySpec, PolynomialFeatureMap, expand, expand_matrix
from shiftdml.dictionary import term_names


def brute_force_monomial_count(n_vars, max_order):
    """Count exponent vectors with total degree <= max_order by enumeration."""
    count = 0
    for exponents in itertools.product(range(max_order + 1), repeat=n_vars):
        if sum(exponents) <= max_order:
            count += 1
    return count


def test_expand_two_vars_order_two():
    spec = DictionarySpec(2, 2)
    a, b = 2.0, 3.0
    np.testing.assert_array_equal(
        expand(spec, np.array([a, b])), [1.0, a, b, a * a, a * b, b * b]
    )


def test_expand_zero_input_kills_nonconstant_terms():
    spec = DictionarySpec(6, 2)
    out = expand(spec, np.zeros(6))
    assert out.shape == (28,)
    assert out[0] == 1.0
    assert np.all(out[1:] == 0.0)


def test_output_dim_matches_brute_force_enumeration():
    for k, order in [(6, 2), (2, 3), (4, 1), (3, 4)]:
        spec = DictionarySpec(k, order)
        assert spec.output_dim == brute_force_monomial_count(k, order)
    assert DictionarySpec(6, 2).output_dim == 28


def test_order_one_is_affine_expansion():
    spec = DictionarySpec(4, 1)
    x = np.array([1.5, -2.0, 0.25, 3.0])
    np.testing.assert_array_equal(expand(spec, x), np.concatenate([[1.0], x]))


def test_intercept_only_dictionary():
    spec = DictionarySpec(3, 0)
    assert spec.output_dim == 1
    np.testing.assert_array_equal(expand(spec, np.array([4.0, 5.0, 6.0])), [1.0])


def test_no_intercept_drops_constant_term():
    spec = DictionarySpec(2, 2, include_intercept=False)
    assert spec.output_dim == 5
    np.testing.assert_array_equal(
        expand(spec, np.array([2.0, 3.0])), [2.0, 3.0, 4.0, 6.0, 9.0]
    )


def test_cross_terms_stored_once():
    spec = DictionarySpec(3, 2)
    names = term_names(spec)
    assert names.count("x0*x1") == 1
    assert "x1*x0" not in names
    assert len(names) == len(set(names))


def test_expand_matrix_single_row_matches_expand():
    spec = DictionarySpec(3, 2)
    row = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(
        expand_matrix(spec, row[np.newaxis, :])[0], expand(spec, row)
    )


def test_expand_matrix_empty_dataset():
    spec = DictionarySpec(3, 2)
    out = expand_matrix(spec, np.empty((0, 3)))
    assert out.shape == (0, spec.output_dim)


def test_expand_matrix_permutation_equivariant():
    spec = DictionarySpec(4, 2)
    rng = np.random.default_rng(0)
    data = rng.standard_normal((20, 4))
    perm = rng.permutation(20)
    np.testing.assert_array_equal(
        expand_matrix(spec, data)[perm], expand_matrix(spec, data[perm])
    )


def test_expand_is_pure():
    spec = DictionarySpec(5, 3)
    x = np.random.default_rng(1).standard_normal(5)
    first = expand(spec, x)
    second = expand(spec, x)
    assert np.array_equal(first, second)


def test_dimension_mismatch_raises():
    spec = DictionarySpec(3, 2)
    with pytest.raises(ValueError):
        expand(spec, np.zeros(4))
    with pytest.raises(ValueError):
        expand_matrix(spec, np.zeros((5, 2)))


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        DictionarySpec(0, 2)
    with pytest.raises(ValueError):
        DictionarySpec(2, -1)
    with pytest.raises(ValueError):
        DictionarySpec(2, 0, include_intercept=False)


def test_feature_map_transformer_matches_function():
    rng = np.random.default_rng(2)
    data = rng.standard_normal((10, 3))
    fm = PolynomialFeatureMap(max_order=2).fit(data)
    np.testing.assert_array_equal(
        fm.transform(data), expand_matrix(DictionarySpec(3, 2), data)
    )
    assert list(fm.get_feature_names_out()[:4]) == ["1", "x0", "x1", "x2"]


def test_feature_map_sklearn_contract():
    fm = PolynomialFeatureMap(max_order=3, include_intercept=False)
    cloned = clone(fm)
    assert cloned.get_params() == fm.get_params()
    data = np.random.default_rng(3).standard_normal((6, 2))
    np.testing.assert_array_equal(
        cloned.fit_transform(data), fm.fit(data).transform(data)
    )
