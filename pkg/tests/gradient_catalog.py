"""Builders for the finite-difference gradient sweep.

Each case is (name, builder); builder(rng) returns (build_loss, params)
where build_loss reconstructs the scalar loss graph from the params'
current data, so central differences can re-evaluate it after nudging
a coordinate.  Inputs keep a margin from kink points (relu corners,
clip boundaries) so the numeric derivative is meaningful.
"""

import numpy as np

from ganhash import autodiff as ad
from ganhash.config import RunConfig
from ganhash.losses import (
    adversarial_loss,
    content_loss,
    neighborhood_loss,
    nonsaturating_generator_loss,
)
from ganhash.networks import build_model


def _away_from(rng, shape, kinks, lo=-2.0, hi=2.0, margin=0.05):
    x = rng.uniform(lo, hi, size=shape)
    for _ in range(100):
        bad = np.zeros(x.shape, dtype=bool)
        for k in kinks:
            bad |= np.abs(x - k) < margin
        if not bad.any():
            break
        x[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
    return x


def _leaf(rng, shape, kinks=(), lo=-2.0, hi=2.0):
    return ad.Tensor(_away_from(rng, shape, kinks, lo, hi), requires_grad=True)


def _shape(rng):
    return tuple(int(s) for s in rng.integers(1, 5, size=int(rng.integers(1, 4))))


def _sq_sum(t):
    return ad.ssum(ad.square(t))


def op_cases():
    def case_add(rng):
        sh = _shape(rng)
        a, b = _leaf(rng, sh), _leaf(rng, sh)
        return lambda: _sq_sum(ad.add(a, b)), [a, b]

    def case_sub(rng):
        sh = _shape(rng)
        a, b = _leaf(rng, sh), _leaf(rng, sh)
        return lambda: _sq_sum(ad.sub(a, b)), [a, b]

    def case_mul(rng):
        sh = _shape(rng)
        a, b = _leaf(rng, sh), _leaf(rng, sh)
        return lambda: _sq_sum(ad.mul(a, b)), [a, b]

    def case_scale(rng):
        a = _leaf(rng, _shape(rng))
        c = float(rng.uniform(-3, 3))
        return lambda: _sq_sum(ad.scale(a, c)), [a]

    def case_matmul(rng):
        n, k, m = (int(v) for v in rng.integers(1, 5, size=3))
        a, b = _leaf(rng, (n, k)), _leaf(rng, (k, m))
        return lambda: _sq_sum(ad.matmul(a, b)), [a, b]

    def case_transpose(rng):
        a = _leaf(rng, (int(rng.integers(1, 5)), int(rng.integers(1, 5))))
        return lambda: _sq_sum(ad.transpose(a)), [a]

    def case_reshape(rng):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        a = _leaf(rng, (n, m))
        return lambda: _sq_sum(ad.reshape(a, (m * n,))), [a]

    def case_square(rng):
        a = _leaf(rng, _shape(rng))
        return lambda: ad.ssum(ad.square(a)), [a]

    def case_log(rng):
        a = _leaf(rng, _shape(rng), lo=0.2, hi=3.0)
        return lambda: ad.ssum(ad.log(a)), [a]

    def case_clamp(rng):
        a = _leaf(rng, _shape(rng), kinks=(-0.7, 0.9))
        return lambda: _sq_sum(ad.clamp(a, -0.7, 0.9)), [a]

    def case_ssum(rng):
        sh = _shape(rng)
        a, b = _leaf(rng, sh), _leaf(rng, sh)
        return lambda: ad.ssum(ad.mul(a, b)), [a, b]

    def case_mean(rng):
        a = _leaf(rng, _shape(rng))
        return lambda: ad.mean(ad.square(a)), [a]

    def case_relu(rng):
        a = _leaf(rng, _shape(rng), kinks=(0.0,))
        return lambda: _sq_sum(ad.relu(a)), [a]

    def case_elu(rng):
        a = _leaf(rng, _shape(rng), kinks=(0.0,))
        return lambda: _sq_sum(ad.elu(a)), [a]

    def case_tanh(rng):
        a = _leaf(rng, _shape(rng))
        return lambda: _sq_sum(ad.tanh_act(a)), [a]

    def case_sigmoid(rng):
        a = _leaf(rng, _shape(rng))
        return lambda: _sq_sum(ad.sigmoid(a)), [a]

    def case_app(rng):
        beta = float(rng.uniform(1.0, 3.0))
        a = ad.Tensor(
            _away_from(rng, _shape(rng), kinks=(-1.0 / beta, 1.0 / beta)),
            requires_grad=True,
        )
        return lambda: _sq_sum(ad.app_act(a, beta)), [a]

    def case_conv2d(rng):
        x = _leaf(rng, (2, 2, 5, 5), lo=-1, hi=1)
        w = _leaf(rng, (3, 2, 3, 3), lo=-1, hi=1)
        stride = int(rng.integers(1, 3))
        return lambda: _sq_sum(ad.conv2d(x, w, stride=stride, pad=1)), [x, w]

    def case_tconv2d(rng):
        x = _leaf(rng, (2, 3, 4, 4), lo=-1, hi=1)
        w = _leaf(rng, (3, 2, 4, 4), lo=-1, hi=1)
        return lambda: _sq_sum(ad.transposed_conv2d(x, w, stride=2, pad=1)), [x, w]

    def case_batchnorm(rng):
        x = _leaf(rng, (4, 3), lo=-1, hi=1)
        gamma = _leaf(rng, (3,), lo=0.5, hi=1.5)
        beta = _leaf(rng, (3,), lo=-0.5, hi=0.5)
        # asymmetric weights keep the loss sensitive to single inputs; a plain
        # square-sum of normalised outputs is nearly x-invariant, which starves
        # the finite differences of signal
        w = ad.Tensor(rng.uniform(0.5, 1.5, size=(4, 3)))

        def build():
            rm, rv = np.zeros(3), np.ones(3)  # fresh stats; loss must not depend on them
            return _sq_sum(ad.mul(ad.batchnorm(x, gamma, beta, rm, rv, training=True), w))

        return build, [x, gamma, beta]

    return [
        ("add", case_add),
        ("sub", case_sub),
        ("mul", case_mul),
        ("scale", case_scale),
        ("matmul", case_matmul),
        ("transpose", case_transpose),
        ("reshape", case_reshape),
        ("square", case_square),
        ("log", case_log),
        ("clamp", case_clamp),
        ("ssum", case_ssum),
        ("mean", case_mean),
        ("relu", case_relu),
        ("elu", case_elu),
        ("tanh_act", case_tanh),
        ("sigmoid", case_sigmoid),
        ("app_act", case_app),
        ("conv2d", case_conv2d),
        ("transposed_conv2d", case_tconv2d),
        ("batchnorm", case_batchnorm),
    ]


def _micro_model(rng):
    cfg = RunConfig(
        code_bits=4,
        encoder_channels=(3,),
        encoder_dense=8,
        generator_channels=(4, 3),
        discriminator_channels=(3,),
        discriminator_dense=6,
        dtype="float64",
    )
    return build_model(cfg, (1, 8, 8), seed=int(rng.integers(0, 2**31)))


def _sample_params(rng, groups, names, k=3):
    pool = [p for name in names for p in groups[name].values()]
    if len(pool) <= k:
        return pool
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def _pixels(rng, n=2):
    return rng.uniform(0.05, 0.95, size=(n, 1, 8, 8))


def _pair_matrix(rng, n=2):
    upper = np.where(rng.random((n, n)) < 0.5, -1, 1)
    s = np.triu(upper, 1)
    s = s + s.T
    np.fill_diagonal(s, 1)
    return s.astype(np.int8)


def composite_cases():
    def case_encoder(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng))
        params = _sample_params(rng, model.param_groups(), ("theta", "w_h"))
        return lambda: _sq_sum(model.encode(x, 1.5, "tanh", training=True)), params

    def case_generator(rng):
        model = _micro_model(rng)
        codes = ad.Tensor(rng.uniform(-0.9, 0.9, size=(2, 4)))
        params = _sample_params(rng, model.param_groups(), ("pi",))
        return lambda: _sq_sum(model.generate(codes, training=True)), params

    def case_discriminator(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng))
        params = _sample_params(rng, model.param_groups(), ("psi",))

        def build():
            d = model.discriminate(x, training=True)
            return ad.add(_sq_sum(d.p), ad.scale(_sq_sum(d.phi_map), 0.1))

        return build, params

    def case_pair_loss(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng, n=3))
        s = _pair_matrix(rng, n=3)
        params = _sample_params(rng, model.param_groups(), ("theta", "w_h"))

        def build():
            codes = model.encode(x, 1.5, "tanh", training=True)
            return neighborhood_loss(codes, s, 4)

        return build, params

    def case_content_loss(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng))
        groups = model.param_groups()
        # the feature map taps the conv stack only; dense head sees no content grad
        phi_psi = {k: p for k, p in groups["psi"].items() if k.startswith("conv")}
        params = _sample_params(rng, {**groups, "psi": phi_psi}, ("theta", "pi", "psi"))

        def build():
            codes = model.encode(x, 1.5, "tanh", training=True)
            recon = model.generate(codes, training=True)
            d_real = model.discriminate(x, training=True)
            d_fake = model.discriminate(recon, training=True)
            l_c, _, _ = content_loss(x, recon, d_real.phi_map, d_fake.phi_map)
            return l_c

        return build, params

    def case_adversarial_loss(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng))
        params = _sample_params(rng, model.param_groups(), ("psi", "pi", "theta"))

        def build():
            codes = model.encode(x, 1.5, "tanh", training=True)
            recon = model.generate(codes, training=True)
            return adversarial_loss(
                model.discriminate(x, training=True).p,
                model.discriminate(recon, training=True).p,
            )

        return build, params

    def case_nonsaturating_loss(rng):
        model = _micro_model(rng)
        codes = ad.Tensor(rng.uniform(-0.9, 0.9, size=(2, 4)))
        params = _sample_params(rng, model.param_groups(), ("pi",))

        def build():
            recon = model.generate(codes, training=True)
            return nonsaturating_generator_loss(model.discriminate(recon, training=True).p)

        return build, params

    def _full_parts(model, x, s):
        codes = model.encode(x, 1.5, "tanh", training=True)
        recon = model.generate(codes, training=True)
        d_real = model.discriminate(x, training=True)
        d_fake = model.discriminate(recon, training=True)
        l_n = neighborhood_loss(codes, s, 4)
        l_c, _, _ = content_loss(x, recon, d_real.phi_map, d_fake.phi_map)
        l_a = adversarial_loss(d_real.p, d_fake.p)
        return l_n, l_c, l_a

    def case_objective_encoder_group(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng, n=3))
        s = _pair_matrix(rng, n=3)
        params = _sample_params(rng, model.param_groups(), ("theta", "w_h"))

        def build():
            l_n, l_c, _ = _full_parts(model, x, s)
            return ad.add(l_n, ad.scale(l_c, 0.1))

        return build, params

    def case_objective_generator_group(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng, n=3))
        s = _pair_matrix(rng, n=3)
        params = _sample_params(rng, model.param_groups(), ("pi",))

        def build():
            _, l_c, l_a = _full_parts(model, x, s)
            return ad.add(ad.scale(l_c, 0.1), ad.scale(l_a, 0.1))

        return build, params

    def case_objective_discriminator_group(rng):
        model = _micro_model(rng)
        x = model.as_input(_pixels(rng, n=3))
        s = _pair_matrix(rng, n=3)
        params = _sample_params(rng, model.param_groups(), ("psi",))

        def build():
            _, _, l_a = _full_parts(model, x, s)
            return l_a

        return build, params

    return [
        ("encoder", case_encoder),
        ("generator", case_generator),
        ("discriminator", case_discriminator),
        ("pair_loss", case_pair_loss),
        ("content_loss", case_content_loss),
        ("adversarial_loss", case_adversarial_loss),
        ("nonsaturating_loss", case_nonsaturating_loss),
        ("objective_encoder_group", case_objective_encoder_group),
        ("objective_generator_group", case_objective_generator_group),
        ("objective_discriminator_group", case_objective_discriminator_group),
    ]
