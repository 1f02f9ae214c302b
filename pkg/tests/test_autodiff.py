import numpy as np
import pytest

import evseen.autodiff as ad
from evseen.autodiff import Tensor, collect_tape, grad_check, max_grad_error


def rand(shape, seed):
    return Tensor(np.random.default_rng(seed).normal(size=shape), requires_grad=True)


class TestForward:
    def test_matmul_hand_checked(self):
        a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        b = Tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        out = ad.matmul(a, b)
        assert np.allclose(out.data, [[4.0, 5.0], [10.0, 11.0]])

    def test_softmax_of_zeros(self):
        out = ad.softmax_lastdim(Tensor(np.zeros(3)))
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_mean_backward_is_uniform(self):
        x = rand((4, 5), 0)
        ad.mean(x).backward()
        assert np.allclose(x.grad, 1.0 / 20.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_division_by_zero(self):
        with pytest.raises(ZeroDivisionError):
            Tensor(np.ones(3)) / Tensor(np.array([1.0, 0.0, 2.0]))
        with pytest.raises(ZeroDivisionError):
            Tensor(np.ones(3)) / 0.0

    def test_scalar_ops(self):
        x = Tensor(np.array([1.0, -2.0]))
        assert np.allclose((x * 2.0 + 1.0).data, [3.0, -3.0])
        assert np.allclose((1.0 - x).data, [0.0, 3.0])


class TestGradCheck:
    PRIMITIVE_CASES = None  # built lazily below

    def test_sum_of_squares(self):
        assert grad_check(lambda t: ad.mean(t * t), rand((3, 4), 1), h=1e-4, tol=1e-6)

    def test_charbonnier_vs_zero_target(self):
        assert grad_check(lambda t: ad.mean(ad.sqrt(t * t + 1e-6)), rand((4, 4), 2), tol=1e-4)

    def test_wrong_backward_fails(self):
        def broken(t):
            out = ad._make(t.data * 2.0, (t,), lambda g: (g * 3.0,))
            return ad.mean(out)

        assert not grad_check(broken, rand((3,), 3))

    def test_every_primitive_on_seeded_shapes(self):
        rng = np.random.default_rng(100)
        shapes = [(3,), (4, 2), (2, 3), (5,), (3, 3), (1, 4), (6,), (2, 2), (4, 4), (2, 5)]
        for i, shape in enumerate(shapes):
            x = Tensor(rng.normal(size=shape), requires_grad=True)
            w = Tensor(rng.normal(size=shape))
            cases = {
                "add": lambda t: ad.mean((t + w) * w),
                "sub": lambda t: ad.mean((t - w) * w),
                "mul": lambda t: ad.mean(t * w),
                "div": lambda t: ad.mean(t / Tensor(np.abs(w.data) + 1.0)),
                "relu": lambda t: ad.mean(ad.relu(t) * w),
                "sigmoid": lambda t: ad.mean(ad.sigmoid(t) * w),
                "softmax": lambda t: ad.mean(ad.softmax_lastdim(t) * w),
                "abs": lambda t: ad.mean(ad.absolute(t) * w),
                "sqrt": lambda t: ad.mean(ad.sqrt(t * t + 0.1)),
                "mean": lambda t: ad.mean(t) * 2.0,
                "reshape": lambda t: ad.mean(ad.reshape(t, (t.size,)) * ad.reshape(w, (w.size,))),
                "concat_slice": lambda t: ad.mean(
                    ad.concat_lastdim(
                        [
                            ad.slice_axis(t, t.data.ndim - 1, 0, 1),
                            ad.slice_axis(t, t.data.ndim - 1, 1, t.shape[-1]),
                        ]
                    )
                    * w
                ),
                "scalar": lambda t: ad.mean(t * 3.0 + 1.5),
            }
            if len(shape) == 2:
                m = Tensor(rng.normal(size=(shape[1], 3)))
                cases["matmul"] = lambda t: ad.mean(ad.matmul(t, m))
                wt = Tensor(rng.normal(size=(shape[1], shape[0])))
                cases["transpose"] = lambda t: ad.mean(ad.transpose2(t) * wt)
            for name, f in cases.items():
                err = max_grad_error(f, x, h=1e-5)
                assert err < 1e-4, f"{name} on shape {shape}: err {err}"

    def test_accumulation_on_reused_value(self):
        x = Tensor(np.array([2.0, -3.0]), requires_grad=True)
        out = ad.mean(x * x)
        out.backward()
        assert np.allclose(x.grad, 2.0 * x.data / x.size)

    def test_two_path_accumulation(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = x * 2.0 + x * 3.0
        ad.mean(y).backward()
        assert np.allclose(x.grad, 5.0 / 2.0)

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError):
            rand((2, 2), 5).backward()
        with pytest.raises(ValueError):
            max_grad_error(lambda t: t * 2.0, rand((2,), 6))


class TestTape:
    def test_topological_order(self):
        x = rand((3,), 7)
        y = ad.mean(ad.relu(x * 2.0) + ad.sigmoid(x))
        tape = collect_tape(y)
        assert tape.is_topologically_ordered()
        assert len(tape.nodes) >= 5

    def test_determinism_bitwise(self):
        def run():
            x = Tensor(np.linspace(-1, 1, 12).reshape(3, 4), requires_grad=True)
            out = ad.mean(ad.softmax_lastdim(x * 1.7) * ad.sigmoid(x))
            out.backward()
            return out.data.copy(), x.grad.copy()

        (v1, g1), (v2, g2) = run(), run()
        assert (v1 == v2).all()
        assert (g1 == g2).all()

    def test_inference_builds_no_tape(self):
        x = Tensor(np.ones((2, 2)))
        y = ad.relu(x * 2.0)
        assert y._node is None
