from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hamstat.fieldio import FieldFormatError, read_field, write_field
from hamstat.fields import Grid, ScalarField
from hamstat.linalg import small_det, small_inv, sym_apply, sym_eig


@pytest.mark.parametrize("suffix", [".fld", ".fldb"])
def test_field_round_trip_is_bit_exact(tmp_path, suffix):
    g = Grid((0.1, -2.0), (1 / 3, 0.7), (5, 6))
    f = ScalarField(g, np.random.default_rng(0).normal(size=g.shape))
    path = tmp_path / f"u{suffix}"
    write_field(f, path)
    back = read_field(path)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)


def test_field_file_errors(tmp_path):
    p = tmp_path / "bad.fld"
    p.write_text('{"n": 1, "shape": [3], "origin": [0], "spacing": [1]}\n1\n2\n')
    with pytest.raises(FieldFormatError):
        read_field(p)
    p.write_text("not json\n1\n")
    with pytest.raises(FieldFormatError):
        read_field(p)
    p.write_text('{"n": 2, "shape": [3], "origin": [0], "spacing": [1]}\n1\n2\n3\n')
    with pytest.raises(FieldFormatError):
        read_field(p)
    with pytest.raises(FieldFormatError):
        read_field(tmp_path / "x.txt")


def _sym(n):
    return arrays(np.float64, (n, n), elements=st.floats(-50, 50)).map(lambda a: a + a.T)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([1, 2, 3]).flatmap(_sym))
def test_jacobi_matches_reference(a):
    lam, V = sym_eig(a)
    ref = np.linalg.eigvalsh(a)
    scale = max(1.0, np.abs(a).max())
    assert np.all(np.diff(lam) >= 0)
    assert np.allclose(lam, ref, atol=1e-12 * scale)
    assert np.allclose(V.T @ V, np.eye(len(a)), atol=1e-12)
    assert np.allclose(V @ np.diag(lam) @ V.T, a, atol=1e-11 * scale)


def test_jacobi_batched_and_degenerate():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 5, 3, 3))
    A = A + np.swapaxes(A, -1, -2)
    lam, V = sym_eig(A)
    assert lam.shape == (4, 5, 3) and V.shape == (4, 5, 3, 3)
    assert np.allclose(sym_apply(lambda l: l, lam, V), A, atol=1e-12)
    lam, V = sym_eig(np.eye(3) * 2.0)
    assert np.array_equal(lam, [2.0, 2.0, 2.0])
    lam, _ = sym_eig(np.zeros((2, 2)))
    assert np.array_equal(lam, [0.0, 0.0])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_closed_form_det_and_inverse(n):
    rng = np.random.default_rng(n)
    a = rng.normal(size=(50, n, n)) + 3 * np.eye(n)
    inv, det = small_inv(a)
    assert np.allclose(det, np.linalg.det(a), rtol=1e-12)
    assert np.allclose(small_det(a), det)
    assert np.allclose(inv, np.linalg.inv(a), rtol=1e-10, atol=1e-12)
