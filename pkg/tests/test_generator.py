import numpy as np
import pytest

from pccomplete import tensor as T
from pccomplete.config import desk_config
from pccomplete.errors import ContractViolation
from pccomplete.generator import (CoarseDecoder, Encoder, Generator, GeneratorConfig, LiftingModule,
                                  build_mean_shapes)
from pccomplete.geometry import grid_codes, mirror_xy
from pccomplete.losses import reconstruction_loss
from pccomplete.synthetic import gen_synthetic
from pccomplete.tensor import Tensor


def small_config(**kw):
    return GeneratorConfig(num_coarse=16, latent_width=12, enc1_widths=(8, 10), enc2_widths=(14, 12),
                           coarse_widths=(20,), lift_widths=(16, 8, 6), **kw)


@pytest.fixture(scope="module")
def default_generator():
    with T.default_dtype(np.float64):
        return Generator(GeneratorConfig(), seed=0)


@pytest.fixture
def small_generator():
    return Generator(small_config(), seed=3)


def relu(x):
    return np.maximum(x, 0)


def mlp_forward(mlp, x, final_relu=False):
    layers = mlp.layers
    for i, layer in enumerate(layers):
        x = x @ layer.weight.data + layer.bias.data
        if i < len(layers) - 1 or final_relu:
            x = relu(x)
    return x


def encoder_oracle(enc, pts):
    """Explicit concat of per-point and tiled pooled features."""
    local = mlp_forward(enc.h1, pts)
    pooled = local.max(axis=0, keepdims=True)
    cat = np.concatenate([local, np.repeat(pooled, len(pts), axis=0)], axis=1)
    h = relu(cat @ enc.h2_in.weight.data + enc.h2_in.bias.data)
    return mlp_forward(enc.h2, h).max(axis=0, keepdims=True)


def lift_oracle(lift, pts, f, f_m):
    """Literal per-row concat [xyz, f_m, f, code], then the shared layers."""
    m = len(pts)
    tiled = np.repeat(pts, 2, axis=0)
    codes = grid_codes(m, 2, lift.cfg.grid_scale)
    rows = 2 * m
    f_m_in = f_m if lift.cfg.use_mean_shape else np.zeros_like(f_m)
    feat = np.concatenate([tiled, np.repeat(f_m_in, rows, 0), np.repeat(f, rows, 0), codes], axis=1)
    h = relu(feat @ lift.first.weight.data + lift.first.bias.data)
    h = relu(h @ lift.second.weight.data + lift.second.bias.data)
    if lift.cfg.use_contraction_expansion:
        g = lift.cfg.ce_group
        c = relu(h @ lift.contract.weight.data + lift.contract.bias.data).reshape(rows // g, -1)
        e = (c @ lift.expand.weight.data + lift.expand.bias.data).reshape(rows, -1)
        h = h + e
    return tiled + mlp_forward(lift.tail, h)


class TestEncoder:
    def test_latent_shape(self, default_generator, rng):
        f = default_generator.encode(rng.standard_normal((256, 3)))
        assert f.shape == (1, 1024)

    def test_permutation_invariant_bit_exact(self, small_generator, rng):
        pts = rng.standard_normal((40, 3))
        ref = small_generator.encode(pts).data
        for _ in range(100):
            perm = rng.permutation(40)
            assert small_generator.encode(pts[perm]).data.tobytes() == ref.tobytes()

    def test_duplicates_do_not_change_code(self, small_generator, rng):
        pts = rng.standard_normal((20, 3))
        doubled = np.repeat(pts, 2, axis=0)
        assert small_generator.encode(doubled).data.tobytes() == small_generator.encode(pts).data.tobytes()

    def test_matches_explicit_concat_oracle(self, small_generator, rng):
        pts = rng.standard_normal((2, 3))
        got = small_generator.encode(pts).data
        np.testing.assert_allclose(got, encoder_oracle(small_generator.encoder, pts), rtol=0, atol=1e-12)

    def test_hand_set_weights(self):
        cfg = GeneratorConfig(latent_width=2, enc1_widths=(3,), enc2_widths=(2,), num_coarse=4,
                              coarse_widths=(4,), lift_widths=(4, 2))
        enc = Encoder(cfg, np.random.default_rng(0))
        enc.h1.layers[0].weight.data = np.eye(3)
        enc.h1.layers[0].bias.data = np.zeros((1, 3))
        w = np.zeros((6, 2))
        w[0, 0] = 1.0   # local x
        w[4, 1] = 1.0   # pooled y
        enc.h2_in.weight.data = w
        enc.h2_in.bias.data = np.zeros((1, 2))
        # no further h2 layers beyond the first: f = max over points of relu(h2_in)
        pts = np.array([[1.0, 2.0, 0.0], [3.0, -1.0, 5.0]])
        # h1 (linear, single layer) = pts; pooled = (3, 2, 5); row values: (x_i, 2)
        f = enc(pts).data
        np.testing.assert_array_equal(f, [[3.0, 2.0]])

    def test_empty_rejected(self, small_generator):
        with pytest.raises(ContractViolation):
            small_generator.encode(np.zeros((0, 3)))


class TestCoarseDecoder:
    def test_default_shape(self, default_generator, rng):
        f = default_generator.encode(rng.standard_normal((64, 3)))
        assert default_generator.coarse(f).shape == (512, 3)

    def test_zero_final_layer_gives_bias(self, rng):
        cfg = small_config()
        dec = CoarseDecoder(cfg, rng)
        last = dec.mlp.layers[-1]
        last.weight.data = np.zeros_like(last.weight.data)
        last.bias.data = np.arange(3 * cfg.num_coarse, dtype=np.float64).reshape(1, -1)
        out = dec(Tensor(rng.standard_normal((1, cfg.latent_width)))).data
        np.testing.assert_array_equal(out, np.arange(3 * cfg.num_coarse).reshape(-1, 3))

    def test_golden_coordinates(self):
        """Seed-fixed parameters and code give stable coordinates (first rows pinned)."""
        cfg = small_config()
        dec = CoarseDecoder(cfg, np.random.default_rng(42))
        f = Tensor(np.linspace(-1, 1, cfg.latent_width).reshape(1, -1))
        out = dec(f).data
        again = CoarseDecoder(cfg, np.random.default_rng(42))(f).data
        assert out.tobytes() == again.tobytes()
        np.testing.assert_allclose(out, mlp_forward(dec.mlp, f.data).reshape(-1, 3), rtol=0, atol=1e-13)


class TestMergeInputs:
    def test_size_default(self, default_generator, rng):
        merged = default_generator.merge_inputs(rng.standard_normal((256, 3)), Tensor(np.zeros((512, 3))))
        assert merged.shape == (1024, 3)

    def test_subset_of_union_and_coarse_below(self, small_generator, rng):
        partial = rng.standard_normal((30, 3))
        coarse = Tensor(rng.standard_normal((16, 3)))
        merged = small_generator.merge_inputs(partial, coarse).data
        union = {tuple(p) for p in np.vstack([partial, mirror_xy(partial)])}
        assert all(tuple(p) in union for p in merged[:16])
        assert len({tuple(p) for p in merged[:16]}) == 16
        np.testing.assert_array_equal(merged[16:], coarse.data)

    def test_symmetric_input_union_close_to_input(self, small_generator):
        partial = gen_synthetic("sphere-shell", 64, 0).points
        merged = small_generator.merge_inputs(partial, Tensor(np.zeros((16, 3)))).data[:16]
        d = np.sqrt(((merged[:, None] - partial[None]) ** 2).sum(-1)).min(1)
        assert d.max() <= 1e-6

    def test_cycles_when_too_few_points(self, small_generator):
        partial = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.0]])  # union has 4 rows
        merged = small_generator.merge_inputs(partial, Tensor(np.zeros((16, 3)))).data[:16]
        assert merged.shape == (16, 3)
        np.testing.assert_array_equal(merged[:4], merged[4:8])

    def test_without_mirror_uses_partial_only(self, rng):
        g = Generator(small_config(use_mirror=False), seed=0)
        partial = rng.standard_normal((30, 3)) + [0, 0, 5]
        merged = g.merge_inputs(partial, Tensor(np.zeros((16, 3)))).data[:16]
        assert (merged[:, 2] > 0).all()


class TestLifting:
    def test_doubles_rows(self, small_generator, rng):
        pts = Tensor(rng.standard_normal((32, 3)))
        f = Tensor(rng.standard_normal((1, 12)))
        assert small_generator.lifting(pts, f, f).shape == (64, 3)

    @pytest.mark.parametrize("ce", [True, False])
    @pytest.mark.parametrize("mean_shape", [True, False])
    def test_matches_concat_oracle(self, ce, mean_shape, rng):
        cfg = small_config(use_contraction_expansion=ce, use_mean_shape=mean_shape)
        lift = LiftingModule(cfg, rng)
        pts, f, fm = rng.standard_normal((2, 3)), rng.standard_normal((1, 12)), rng.standard_normal((1, 12))
        got = lift(Tensor(pts), Tensor(f), Tensor(fm)).data
        np.testing.assert_allclose(got, lift_oracle(lift, pts, f, fm), rtol=0, atol=1e-12)

    def test_zero_head_is_tiling(self, small_generator, rng):
        layer = small_generator.lifting.displacement_layer
        layer.weight.data = np.zeros_like(layer.weight.data)
        layer.bias.data = np.zeros_like(layer.bias.data)
        pts = rng.standard_normal((8, 3))
        out = small_generator.lifting(Tensor(pts), Tensor(np.ones((1, 12))), Tensor(np.ones((1, 12)))).data
        assert out.tobytes() == np.repeat(pts, 2, axis=0).tobytes()

    def test_group_must_divide_rows(self, rng):
        lift = LiftingModule(small_config(ce_group=3), rng)
        with pytest.raises(ContractViolation):
            lift(Tensor(rng.standard_normal((4, 3))), Tensor(np.zeros((1, 12))), Tensor(np.zeros((1, 12))))


class TestComplete:
    @pytest.mark.parametrize("resolution, lifts", [(2048, 1), (4096, 2), (8192, 3), (16384, 4)])
    def test_sizes_and_lift_counts(self, default_generator, resolution, lifts, rng, monkeypatch):
        calls = []
        real = LiftingModule.__call__

        def counting(self, points, f, f_m):
            calls.append(points.shape[0])
            return real(self, points, f, f_m)

        monkeypatch.setattr(LiftingModule, "__call__", counting)
        before = default_generator.num_parameters()
        with T.no_grad():
            coarse, fine = default_generator.complete(rng.standard_normal((256, 3)) * 0.3, resolution)
        assert fine.shape == (resolution, 3) and coarse.shape == (512, 3)
        assert calls == [1024 * 2 ** j for j in range(lifts)]
        assert default_generator.num_parameters() == before

    def test_unsupported_resolution(self, small_generator, rng):
        with pytest.raises(ContractViolation, match="supported"):
            small_generator.complete(rng.standard_normal((10, 3)), 1000)

    def test_zero_head_returns_interleaved_copies(self, small_generator, rng):
        layer = small_generator.lifting.displacement_layer
        layer.weight.data = np.zeros_like(layer.weight.data)
        layer.bias.data = np.zeros_like(layer.bias.data)
        partial = rng.standard_normal((20, 3))
        _, fine, stages = small_generator.decode(small_generator.encode(partial), partial, 256,
                                                 return_stages=True)
        p_s = stages[0].data
        assert fine.data.tobytes() == np.repeat(p_s, 8, axis=0).tobytes()
        assert [s.shape[0] for s in stages] == [32, 64, 128, 256]

    def test_mean_shape_changes_output(self, small_generator, rng):
        partial = rng.standard_normal((20, 3))
        _, a = small_generator.complete(partial, 64, np.zeros(12))
        _, b = small_generator.complete(partial, 64, np.ones(12))
        assert not np.array_equal(a.data, b.data)

    def test_prior_width_checked(self, small_generator, rng):
        with pytest.raises(ContractViolation):
            small_generator.complete(rng.standard_normal((20, 3)), 64, np.zeros(5))


class TestInterpolate:
    def test_endpoints_and_spacing(self, small_generator, rng):
        a, b = rng.standard_normal((20, 3)), rng.standard_normal((25, 3))
        fa, fb = rng.standard_normal(12), rng.standard_normal(12)
        out = small_generator.interpolate(a, b, 5, 64, fa, fb, conditioning="nearest")
        assert [alpha for alpha, _ in out] == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert out[0][1].tobytes() == small_generator.complete(a, 64, fa)[1].data.tobytes()
        assert out[-1][1].tobytes() == small_generator.complete(b, 64, fb)[1].data.tobytes()

    def test_fixed_conditioning_uses_a(self, small_generator, rng):
        a, b = rng.standard_normal((20, 3)), rng.standard_normal((25, 3))
        out = small_generator.interpolate(a, b, 2, 64)
        f_b = small_generator.encode(b)
        expect = small_generator.decode(f_b, a, 64)[1].data
        assert out[-1][1].tobytes() == expect.tobytes()
        assert out[0][1].tobytes() == small_generator.complete(a, 64)[1].data.tobytes()

    def test_same_code_all_identical(self, small_generator, rng):
        a = rng.standard_normal((20, 3))
        out = small_generator.interpolate(a, a.copy(), 4, 64)
        assert len({o.tobytes() for _, o in out}) == 1

    def test_needs_two_steps(self, small_generator, rng):
        with pytest.raises(ContractViolation):
            small_generator.interpolate(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)), 1, 64)


class TestMeanShapes:
    def test_single_instance(self, small_generator, rng):
        c = rng.standard_normal((30, 3))
        table = build_mean_shapes({"x": [c]}, small_generator.encoder)
        np.testing.assert_array_equal(table["x"], small_generator.encode(c).data.reshape(-1))

    def test_opposite_embeddings_average_to_zero(self):
        class Fixed:
            def __call__(self, t):
                return Tensor(t.data[:1, :2])

        table = build_mean_shapes({"x": [np.array([[1.0, -2.0, 0.0]]), np.array([[-1.0, 2.0, 0.0]])]}, Fixed())
        np.testing.assert_array_equal(table["x"], [0.0, 0.0])

    def test_ten_instances_two_pass_oracle(self, small_generator, rng):
        clouds = [rng.standard_normal((25, 3)) for _ in range(10)]
        table = build_mean_shapes({"a": clouds[:4], "b": clouds[4:]}, small_generator.encoder)
        for name, group in (("a", clouds[:4]), ("b", clouds[4:])):
            embs = np.array([small_generator.encode(c).data.reshape(-1) for c in group])
            total = np.zeros(embs.shape[1])
            for e in embs:
                total = total + e
            mean = total / len(embs)
            # second pass: correct by the mean residual
            mean = mean + (embs - mean).sum(axis=0) / len(embs)
            np.testing.assert_allclose(table[name], mean, rtol=0, atol=1e-12)

    def test_empty_category_rejected(self, small_generator):
        with pytest.raises(ContractViolation):
            build_mean_shapes({"x": []}, small_generator.encoder)


class TestGradientFlow:
    def test_every_parameter_group_receives_gradient(self, rng):
        # desk widths: the toy widths (3 contraction units) can start with a dead branch
        cfg = desk_config().generator_config()
        g = Generator(cfg, seed=1)
        partial = rng.standard_normal((128, 3)) * 0.3
        q = rng.standard_normal((512, 3)) * 0.3
        coarse, fine = g.complete(partial, 2048, rng.standard_normal(cfg.latent_width))
        T.backward(reconstruction_loss(coarse, fine, q, 0.5).value, g.parameters())
        assert all(np.abs(p.grad).sum() > 0 for p in g.parameters())
        groups = {}
        for name, p in g.named_parameters().items():
            top = ".".join(name.split(".")[:2])
            groups[top] = groups.get(top, 0.0) + float(np.linalg.norm(p.grad))
        assert {k.split(".")[0] for k in groups} == {"encoder", "coarse", "lifting"}
        assert all(v > 0 for v in groups.values()), groups

    def test_parameter_count_invariant(self, small_generator):
        n = small_generator.num_parameters()
        for r in small_generator.cfg.resolutions:
            small_generator.complete(np.ones((4, 3)) * np.arange(4)[:, None], r)
            assert small_generator.num_parameters() == n
