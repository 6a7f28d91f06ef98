import numpy as np
import pytest

from cascademat.metrics import (
    MetricReport, conn_error, evaluate_pair, grad_error, mean_report, mse, sad,
    _gaussian_derivative_kernel,
)


@pytest.fixture
def rng():
    return np.random.default_rng(2718)


def correlate_nearest_loop(img, kernel):
    """Explicit-loop correlation with replicate borders (oracle)."""
    h, w = img.shape
    kh, kw = kernel.shape
    hy, hx = kh // 2, kw // 2
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    ii = min(max(i + a - hy, 0), h - 1)
                    jj = min(max(j + b - hx, 0), w - 1)
                    acc += img[ii, jj] * kernel[a, b]
            out[i, j] = acc
    return out


def grad_error_loop_oracle(pred, gt, sigma=1.4):
    """Dense filter-then-difference computation, sharing only the kernel."""
    k = np.asarray(_gaussian_derivative_kernel(sigma))

    def amplitude(img):
        # correlation flips the odd derivative axis -> sign-only change,
        # so amplitudes match the production convolution exactly
        gx = correlate_nearest_loop(img, k)
        gy = correlate_nearest_loop(img, k.T)
        return np.sqrt(gx ** 2 + gy ** 2)

    return float(((amplitude(pred) - amplitude(gt)) ** 2).sum() / 1000.0)


def largest_component_loop(mask):
    """Flood-fill 4-connected labeling (oracle)."""
    h, w = mask.shape
    best = np.zeros_like(mask, dtype=bool)
    seen = np.zeros_like(mask, dtype=bool)
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or seen[si, sj]:
                continue
            comp = []
            stack = [(si, sj)]
            seen[si, sj] = True
            while stack:
                i, j = stack.pop()
                comp.append((i, j))
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] \
                            and not seen[ni, nj]:
                        seen[ni, nj] = True
                        stack.append((ni, nj))
            if len(comp) > best.sum():
                best[:] = False
                for i, j in comp:
                    best[i, j] = True
    return best


def conn_error_loop_oracle(pred, gt):
    h, w = pred.shape
    last = np.full((h, w), -1.0)
    for k in range(1, 10):
        theta = k / 10
        region = largest_component_loop((pred >= theta) & (gt >= theta))
        for i in range(h):
            for j in range(w):
                if last[i, j] == -1.0 and not region[i, j]:
                    last[i, j] = (k - 1) / 10
    last[last == -1.0] = 1.0
    total = 0.0
    for i in range(h):
        for j in range(w):
            pd = pred[i, j] - last[i, j]
            gd = gt[i, j] - last[i, j]
            phi_p = 1.0 - (pd if pd >= 0.15 else 0.0)
            phi_g = 1.0 - (gd if gd >= 0.15 else 0.0)
            total += abs(phi_p - phi_g)
    return total / 1000.0


class TestSad:
    def test_identity(self, rng):
        x = rng.uniform(size=(16, 16))
        assert sad(x, x) == 0.0

    def test_full_resolution_magnitude(self):
        assert sad(np.zeros((512, 512)), np.ones((512, 512))) == pytest.approx(262.144)

    def test_single_pixel_linearity(self):
        a = np.zeros((8, 8))
        b = a.copy()
        b[3, 4] = 0.5
        assert sad(a, b) == pytest.approx(0.0005)

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(9, 9)), rng.uniform(size=(9, 9))
        assert sad(a, b) == sad(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sad(np.zeros((4, 4)), np.zeros((5, 5)))


class TestMse:
    def test_identity(self, rng):
        x = rng.uniform(size=(12, 12))
        assert mse(x, x) == 0.0

    def test_unit_error(self):
        assert mse(np.zeros((6, 6)), np.ones((6, 6))) == pytest.approx(1.0)

    def test_constant_offset(self):
        a = np.full((10, 10), 0.4)
        assert mse(a, a + 0.1) == pytest.approx(0.01)

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(7, 7)), rng.uniform(size=(7, 7))
        assert mse(a, b) == mse(b, a)


class TestGradError:
    def test_identity(self, rng):
        x = rng.uniform(size=(20, 20))
        assert grad_error(x, x) == 0.0

    def test_constant_fields(self):
        a = np.full((16, 16), 0.25)
        b = np.full((16, 16), 0.8)
        assert grad_error(a, b) <= 1e-12

    def test_step_edges_match_loop_oracle(self):
        a = np.zeros((16, 16))
        a[:, 8:] = 1.0
        b = np.zeros((16, 16))
        b[:, 10:] = 1.0
        got = grad_error(a, b)
        assert got > 0
        assert got == pytest.approx(grad_error_loop_oracle(a, b), abs=1e-9)

    def test_random_inputs_match_loop_oracle(self, rng):
        for size in (5, 12, 32):
            a = rng.uniform(size=(size, size))
            b = rng.uniform(size=(size, size))
            assert grad_error(a, b) == pytest.approx(
                grad_error_loop_oracle(a, b), abs=1e-9)

    def test_storage_order_irrelevant(self, rng):
        a = rng.uniform(size=(10, 10))
        b = rng.uniform(size=(10, 10))
        assert grad_error(np.asfortranarray(a), np.asfortranarray(b)) == \
            grad_error(a, b)


class TestConnError:
    def test_identity(self, rng):
        x = rng.uniform(size=(10, 10))
        assert conn_error(x, x) == 0.0

    def test_fully_opaque_pair(self):
        ones = np.ones((8, 8))
        assert conn_error(ones, ones.copy()) == 0.0

    def test_detached_island_positive_and_matches_oracle(self):
        gt = np.zeros((8, 8))
        gt[1:5, 1:5] = 1.0  # main body
        pred = gt.copy()
        pred[6:8, 6:8] = 1.0  # detached fully-opaque island
        got = conn_error(pred, gt)
        assert got > 0
        assert got == pytest.approx(conn_error_loop_oracle(pred, gt), abs=1e-12)

    def test_random_inputs_match_oracle(self, rng):
        for _ in range(4):
            pred = np.round(rng.uniform(size=(8, 8)), 2)
            gt = np.round(rng.uniform(size=(8, 8)), 2)
            assert conn_error(pred, gt) == pytest.approx(
                conn_error_loop_oracle(pred, gt), abs=1e-12)


class TestReports:
    def test_all_zero_on_equal_inputs(self, rng):
        x = rng.uniform(size=(16, 16))
        r = evaluate_pair(x, x.copy())
        assert (r.sad, r.mse, r.grad, r.conn) == (0.0, 0.0, 0.0, 0.0)

    def test_mean_report(self):
        rs = [MetricReport(1.0, 0.5, 2.0, 3.0), MetricReport(3.0, 1.5, 4.0, 5.0)]
        m = mean_report(rs)
        assert (m.sad, m.mse, m.grad, m.conn) == (2.0, 1.0, 3.0, 4.0)

    def test_tensor_inputs_accepted(self, rng):
        from cascademat.tensor import Tensor
        x = rng.uniform(size=(1, 1, 8, 8))
        assert evaluate_pair(Tensor(x), Tensor(x.copy())).sad == 0.0
