"""Backend agreement and hand-checked contracts for the hot-loop kernels.

The numpy implementations are the reference; the jitted path must match them
exactly where the arithmetic is sequential in both (adam, polyphase, window
variance, softmax, gelu) and to float64 round-off where numpy vectorization
reassociates sums (layernorm's variance accumulator, gauss_accum's exp).
"""

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plita.kernels import numpy_ref

numba_jit = pytest.importorskip("plita.kernels.numba_jit")


def _rand(rng, shape, dtype=np.float32):
    return rng.standard_normal(shape).astype(dtype)


@pytest.fixture(scope="module")
def arrays():
    rng = np.random.default_rng(7)
    return rng


class TestAgreement:
    def test_layernorm_fwd(self, arrays):
        x = _rand(arrays, (257, 48))
        g = _rand(arrays, 48)
        b = _rand(arrays, 48)
        y_r, mean_r, rstd_r = numpy_ref.layernorm_fwd(x, g, b, 1e-5)
        y_j, mean_j, rstd_j = numba_jit.layernorm_fwd(x, g, b, 1e-5)
        # float32 output must agree bitwise; the float64 helper stats may
        # differ by reassociation of the variance sum
        np.testing.assert_array_equal(y_r, y_j)
        np.testing.assert_allclose(mean_r, mean_j, rtol=0, atol=1e-13)
        np.testing.assert_allclose(rstd_r, rstd_j, rtol=1e-12, atol=0)

    def test_layernorm_bwd(self, arrays):
        x = _rand(arrays, (181, 32))
        g = _rand(arrays, 32)
        b = _rand(arrays, 32)
        dy = _rand(arrays, (181, 32))
        _, mean, rstd = numpy_ref.layernorm_fwd(x, g, b, 1e-5)
        out_r = numpy_ref.layernorm_bwd(dy, x, g, mean, rstd)
        out_j = numba_jit.layernorm_bwd(dy, x, g, mean, rstd)
        for r, j in zip(out_r, out_j):
            np.testing.assert_allclose(r, j, rtol=1e-6, atol=1e-7)

    def test_softmax_fwd_bitwise(self, arrays):
        x = _rand(arrays, (300, 51))
        np.testing.assert_array_equal(numpy_ref.softmax_fwd(x), numba_jit.softmax_fwd(x))

    def test_softmax_bwd_bitwise(self, arrays):
        y = numpy_ref.softmax_fwd(_rand(arrays, (100, 17)))
        dy = _rand(arrays, (100, 17))
        np.testing.assert_array_equal(
            numpy_ref.softmax_bwd(dy, y), numba_jit.softmax_bwd(dy, y)
        )

    def test_gelu_bitwise(self, arrays):
        x = _rand(arrays, 40_000)
        dy = _rand(arrays, 40_000)
        np.testing.assert_array_equal(numpy_ref.gelu_fwd(x), numba_jit.gelu_fwd(x))
        np.testing.assert_array_equal(
            numpy_ref.gelu_bwd(dy, x), numba_jit.gelu_bwd(dy, x)
        )

    def test_adam_update_bitwise(self, arrays):
        n = 5000
        p_r = _rand(arrays, n)
        g = _rand(arrays, n)
        m_r = _rand(arrays, n) * 0.1
        v_r = np.abs(_rand(arrays, n)) * 0.01
        p_j, m_j, v_j = p_r.copy(), m_r.copy(), v_r.copy()
        numpy_ref.adam_update(p_r, g, m_r, v_r, 3, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        numba_jit.adam_update(p_j, g, m_j, v_j, 3, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        np.testing.assert_array_equal(p_r, p_j)
        np.testing.assert_array_equal(m_r, m_j)
        np.testing.assert_array_equal(v_r, v_j)

    def test_polyphase_bitwise(self, arrays):
        x = arrays.standard_normal(4000)
        taps = np.hanning(65) * np.sinc(np.linspace(-4, 4, 65))
        up, down = 2, 5
        phases = np.zeros((up, (taps.size + up - 1) // up))
        for i, t in enumerate(taps):
            phases[i % up, i // up] = t
        n_out = (x.size * up) // down
        y_r = numpy_ref.polyphase_apply(x, phases, up, down, 32, n_out)
        y_j = numba_jit.polyphase_apply(x, phases, up, down, 32, n_out)
        np.testing.assert_array_equal(y_r, y_j)

    def test_gauss_accum_close(self, arrays):
        sig_r = np.zeros(8000)
        sig_j = np.zeros(8000)
        centers = np.sort(arrays.uniform(0, 7999, 220))
        amps = arrays.uniform(0.1, 1.2, 220)
        sigmas = arrays.uniform(2.0, 25.0, 220)
        numpy_ref.gauss_accum(sig_r, centers, amps, sigmas)
        numba_jit.gauss_accum(sig_j, centers, amps, sigmas)
        np.testing.assert_allclose(sig_r, sig_j, rtol=0, atol=1e-12)

    def test_min_window_var_bitwise(self, arrays):
        x = _rand(arrays, 3000)
        assert numpy_ref.min_window_var(x, 100) == numba_jit.min_window_var(x, 100)


class TestContracts:
    def test_min_window_var_hand_case(self):
        # window [2,2,2,2] inside otherwise noisy data has variance 0
        x = np.array([1.0, 5.0, 2.0, 2.0, 2.0, 2.0, 9.0, 1.0])
        assert numpy_ref.min_window_var(x, 4) == 0.0
        # constant-slope window: var of [0,1,2] with mean 1 is 2/3
        y = np.array([10.0, 0.0, 1.0, 2.0, 10.0])
        assert numpy_ref.min_window_var(y, 3) == pytest.approx(2.0 / 3.0, rel=1e-12)

    def test_min_window_var_short_input(self):
        assert numpy_ref.min_window_var(np.ones(3), 5) == np.inf

    def test_adam_first_step_hand_case(self):
        # closed-form first step with zero state, written out independently
        p = np.array([1.0], dtype=np.float32)
        g = np.array([0.5], dtype=np.float32)
        m = np.zeros(1, dtype=np.float32)
        v = np.zeros(1, dtype=np.float32)
        lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.0
        numpy_ref.adam_update(p, g, m, v, 1, lr, b1, b2, eps, wd)
        m_hat = (1 - b1) * 0.5 / (1 - b1)
        v_hat = (1 - b2) * 0.25 / (1 - b2)
        expected = 1.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
        assert p[0] == pytest.approx(expected, rel=1e-6)

    def test_gauss_accum_single_peak(self):
        sig = np.zeros(101)
        numpy_ref.gauss_accum(
            sig, np.array([50.0]), np.array([2.0]), np.array([5.0])
        )
        assert sig[50] == pytest.approx(2.0, rel=1e-12)
        assert sig[55] == pytest.approx(2.0 * np.exp(-0.5), rel=1e-12)
        # support is clipped to +/- 4 sigma
        assert sig[0] == 0.0 and sig[100] == 0.0

    @given(st.integers(2, 40), st.integers(1, 12))
    @settings(max_examples=30, deadline=None)
    def test_softmax_rows_normalized(self, rows, cols):
        rng = np.random.default_rng(rows * 100 + cols)
        x = rng.standard_normal((rows, cols)).astype(np.float32) * 5
        y = numpy_ref.softmax_fwd(x)
        assert np.all(y > 0)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=1e-5)

    @given(st.integers(5, 200))
    @settings(max_examples=25, deadline=None)
    def test_min_window_var_nonnegative(self, n):
        rng = np.random.default_rng(n)
        x = rng.standard_normal(n)
        w = max(2, n // 3)
        v = numpy_ref.min_window_var(x, w)
        assert v >= 0.0
        # never larger than the variance of any particular window
        assert v <= np.var(x[:w]) + 1e-12

    def test_layernorm_normalizes(self):
        rng = np.random.default_rng(3)
        x = (rng.standard_normal((50, 32)) * 3 + 1).astype(np.float32)
        y, _, _ = numpy_ref.layernorm_fwd(
            x, np.ones(32, np.float32), np.zeros(32, np.float32), 1e-5
        )
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.std(axis=1), 1.0, atol=1e-3)


class TestDispatch:
    def _active(self, env_value):
        code = (
            "import os\n"
            f"os.environ['PLITA_BACKEND'] = {env_value!r}\n"
            "from plita import backend\n"
            "print(backend.ACTIVE)\n"
        )
        return subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True
        )

    def test_forced_numpy(self):
        out = self._active("numpy")
        assert out.returncode == 0 and out.stdout.strip() == "numpy"

    def test_forced_numba(self):
        out = self._active("numba")
        assert out.returncode == 0 and out.stdout.strip() == "numba"

    def test_bad_backend_rejected(self):
        out = self._active("cuda")
        assert out.returncode != 0
        assert "PLITA_BACKEND" in out.stderr

    def test_kernels_module_honors_selection(self):
        code = (
            "import os\n"
            "os.environ['PLITA_BACKEND'] = 'numpy'\n"
            "from plita import kernels\n"
            "from plita.kernels import numpy_ref\n"
            "print(kernels.gelu_fwd is numpy_ref.gelu_fwd)\n"
        )
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True
        )
        assert out.stdout.strip() == "True"
