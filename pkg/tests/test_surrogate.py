import dataclasses

import numpy as np
import pytest
from scipy.stats import spearmanr

from hetmap import rng as rngmod
from hetmap.errors import ConfigError, ContractError
from hetmap.noise import NoiseConfig
from hetmap.remap import RowAssignment
from hetmap.surrogate import (AccuracyEvaluator, SurrogateModel, default_perturb_std, empirical_row_deltas,
                              fisher_diagonal, forward, gradients, homogeneous_assignment, loss, row_sensitivity,
                              sensitivity_draws, tier_fidelity_order)
from hetmap.tiers import tiers_by_id
from hetmap.workload import TIER_ORDER, TierId, TierSupportMatrix

from oracles import finite_difference_check

CFG = NoiseConfig()


def test_gradients_match_finite_differences_away_from_relu_kinks(surrogate):
    # weight decay parks dead fc1 units exactly at z = 0, so only kink-free stencils are a valid oracle
    model, x, y = surrogate
    worst, checked, kinks = finite_difference_check(model, x, y, np.random.default_rng(0))
    assert checked + kinks >= 100 * model.n_layers - 20
    assert checked >= 250
    assert worst <= 1.0


def test_gradients_match_finite_differences_random_model():
    # small smooth-enough instance: every sampled coordinate is checked, no kink resampling
    r = np.random.default_rng(3)
    model = SurrogateModel((r.normal(size=(5, 3)), r.normal(size=(4, 5)), r.normal(size=(3, 4))),
                           (r.normal(size=5), r.normal(size=4), r.normal(size=3)))
    x = r.normal(size=(40, 3))
    y = r.integers(0, 3, size=40)
    worst, checked, _ = finite_difference_check(model, x, y, r, per_layer=12, resample_kinks=False)
    assert checked == 12 + 12 + 12
    assert worst <= 1.0


def test_bias_gradients_match_finite_differences(surrogate):
    model, x, y = surrogate
    grads = gradients(model, x, y)
    for l, b in enumerate(model.biases):
        for i in range(min(len(b), 10)):
            bp, bm = list(model.biases), list(model.biases)
            bp[l] = b.copy()
            bp[l][i] += 1e-4
            bm[l] = b.copy()
            bm[l][i] -= 1e-4
            fd = (loss(SurrogateModel(model.weights, tuple(bp)), x, y)
                  - loss(SurrogateModel(model.weights, tuple(bm)), x, y)) / 2e-4
            assert abs(grads[l][1][i] - fd) <= max(1e-4 * abs(fd), 1e-7) * 10


def test_zero_inputs_and_weights_give_zero_hidden_gradients():
    model = SurrogateModel((np.zeros((8, 2)), np.zeros((8, 8)), np.zeros((4, 8))),
                           (np.zeros(8), np.zeros(8), np.zeros(4)))
    grads = gradients(model, np.zeros((10, 2)), np.arange(10) % 4)
    for gw, gb in grads[:-1]:
        assert not gw.any() and not gb.any()


def test_duplicated_batch_leaves_mean_gradient_unchanged(surrogate):
    model, x, y = surrogate
    g1 = gradients(model, x[:50], y[:50])
    g2 = gradients(model, np.concatenate([x[:50]] * 2), np.concatenate([y[:50]] * 2))
    for (a, b), (c, d) in zip(g1, g2):
        np.testing.assert_allclose(a, c, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(b, d, rtol=1e-9, atol=1e-12)


def test_fisher_diagonal_equals_mean_of_squared_per_sample_gradients(surrogate):
    model, x, y = surrogate
    xs, ys = x[:7], y[:7]
    per_sample = [gradients(model, xs[i:i + 1], ys[i:i + 1]) for i in range(7)]
    fisher = fisher_diagonal(model, xs, ys)
    for l in range(model.n_layers):
        ref = np.mean([np.square(ps[l][0]) for ps in per_sample], axis=0)
        np.testing.assert_allclose(fisher[l], ref, rtol=1e-10, atol=1e-15)


def test_checkpoint_round_trip(surrogate, tmp_path):
    model, _, _ = surrogate
    model.save(tmp_path / "ck")
    back = SurrogateModel.load(tmp_path / "ck")
    for a, b in zip(model.weights + model.biases, back.weights + back.biases):
        assert np.array_equal(a, b)
    raw = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "ck.bin").write_bytes(raw[:-4])
    with pytest.raises(ConfigError):
        SurrogateModel.load(tmp_path / "ck")


def test_model_shape_invariants():
    with pytest.raises(ContractError):
        SurrogateModel((np.zeros((4, 2)), np.zeros((3, 5))), (np.zeros(4), np.zeros(3)))
    with pytest.raises(ContractError):
        SurrogateModel((np.full((2, 2), np.nan),), (np.zeros(2),))


def _hom(model, tier):
    return homogeneous_assignment(model, tier, TIER_ORDER)


def test_all_sram_is_the_baseline(surrogate, tiers, support):
    model, x, y = surrogate
    ev = AccuracyEvaluator(model, x, y, tiers, support, CFG, seed=1)
    res = ev.evaluate(_hom(model, TierId.SRAM))
    assert res.accuracy == ev.acc0 and res.gap == 0.0
    assert ev.degradation(res) == 0.0


def test_sram_path_is_noise_free(surrogate, tiers):
    model, x, y = surrogate
    a = forward(model, x, y, _hom(model, TierId.SRAM), tiers, CFG, rngmod.stream(0, "a"))
    b = forward(model, x, y, _hom(model, TierId.SRAM), tiers, CFG, rngmod.stream(99, "b"))
    assert a == b


def test_forward_is_pure(surrogate, tiers):
    model, x, y = surrogate
    mixed = RowAssignment(tuple(np.arange(r) % 3 for r in model.rows), TIER_ORDER)
    a = forward(model, x, y, mixed, tiers, CFG, rngmod.stream(4, "f"))
    b = forward(model, x, y, mixed, tiers, CFG, rngmod.stream(4, "f"))
    assert a == b


def test_noiseless_8_bit_photonic_equals_sram_bit_exactly(surrogate, tiers):
    model, x, y = surrogate
    by_id = tiers_by_id(tiers)
    ph8 = dataclasses.replace(by_id[TierId.PHOTONIC], weight_bits=8, input_bits=8)
    swapped = [ph8 if t.tier_id is TierId.PHOTONIC else t for t in tiers]
    quiet = NoiseConfig(photonic_sigma=0.0)
    ph = forward(model, x, y, _hom(model, TierId.PHOTONIC), swapped, quiet, rngmod.stream(0, "x"))
    sr = forward(model, x, y, _hom(model, TierId.SRAM), swapped, quiet, rngmod.stream(0, "x"))
    assert ph.loss == sr.loss and ph.accuracy == sr.accuracy


def test_photonic_degrades_accuracy(surrogate, tiers, support):
    model, x, y = surrogate
    ev = AccuracyEvaluator(model, x, y, tiers, support, CFG, seed=0)
    res = ev.evaluate(_hom(model, TierId.PHOTONIC))
    assert res.accuracy < ev.acc0 and res.gap > 0
    # value recorded when the checkpoint was built
    assert res.gap == pytest.approx(0.068, abs=1e-9)


def test_gap_is_exactly_acc0_minus_accuracy(surrogate, tiers, support):
    model, x, y = surrogate
    ev = AccuracyEvaluator(model, x, y, tiers, support, CFG, seed=2)
    res = ev.evaluate(_hom(model, TierId.RERAM))
    assert res.gap == res.acc0 - res.accuracy
    assert res.perplexity == pytest.approx(np.exp(res.loss))


def test_homogeneous_accuracy_ordering_over_seeds(surrogate, tiers):
    model, x, y = surrogate
    acc = {t: [] for t in TIER_ORDER}
    for seed in range(10):
        for t in TIER_ORDER:
            acc[t].append(forward(model, x, y, _hom(model, t), tiers, CFG, rngmod.stream(seed, "order"),
                                  acc0=0.0).accuracy)
    s, r, p = (np.array(acc[t]) for t in TIER_ORDER)
    assert s.mean() >= r.mean() >= p.mean()
    assert np.sum(s >= r) > 5 and np.sum(r >= p) > 5


def test_assignment_shape_mismatch_is_a_contract_error(surrogate, tiers):
    model, x, y = surrogate
    bad = RowAssignment((np.zeros(64, dtype=int), np.zeros(63, dtype=int), np.zeros(4, dtype=int)), TIER_ORDER)
    with pytest.raises(ContractError):
        forward(model, x, y, bad, tiers, CFG, rngmod.stream(0, "e"))


def test_evaluator_rejects_unsupported_tiers(surrogate, tiers):
    model, x, y = surrogate
    no_reram = TierSupportMatrix.from_dict({"linear": ["SRAM", "Photonic"]})
    ev = AccuracyEvaluator(model, x, y, tiers, no_reram, CFG)
    with pytest.raises(ContractError):
        ev.evaluate(_hom(model, TierId.RERAM))


def test_perplexity_mode(surrogate, tiers, support):
    model, x, y = surrogate
    ev = AccuracyEvaluator(model, x, y, tiers, support, CFG, metric="perplexity")
    res = ev.evaluate(_hom(model, TierId.PHOTONIC))
    assert ev.degradation(res) == pytest.approx(res.perplexity - ev.baseline.perplexity)
    assert ev.quality(res) == res.perplexity


def test_dead_row_has_zero_sensitivity(surrogate):
    model, x, y = surrogate
    w2 = model.weights[1].copy()
    w2[:, 5] = 0.0  # hidden unit 5 of fc1 feeds nothing
    dead = model.with_weights((model.weights[0], w2, model.weights[2]))
    prof = row_sensitivity(dead, x, y, probes=64, perturb_std=0.05, rng=rngmod.stream(0, "dead"))
    assert abs(prof.s[0][5]) < 1e-8
    assert [len(s) for s in prof.s] == model.rows


def test_sensitivity_tracks_measured_loss_change(surrogate, tiers):
    model, x, y = surrogate
    std = default_perturb_std(model, tiers_by_id(tiers)[TierId.PHOTONIC])
    draws = sensitivity_draws(model, 64, std, rngmod.stream(1, "fid"))
    prof = row_sensitivity(model, x, y, perturb_std=std, draws=draws)
    measured = empirical_row_deltas(model, x, y, draws)
    rho = spearmanr(np.concatenate(prof.s), np.concatenate(measured)).statistic
    assert rho >= 0.8


def test_second_order_term_scales_with_variance(surrogate):
    model, x, y = surrogate
    a = row_sensitivity(model, x, y, probes=256, perturb_std=0.02, rng=rngmod.stream(0, "sa"))
    b = row_sensitivity(model, x, y, probes=256, perturb_std=0.04, rng=rngmod.stream(0, "sb"))
    ratio = sum(v.sum() for v in b.s) / sum(v.sum() for v in a.s)
    assert ratio == pytest.approx(4.0, rel=0.2)


def test_probes_and_std_validation(surrogate):
    model, _, _ = surrogate
    with pytest.raises(ContractError):
        sensitivity_draws(model, 0, 0.1, rngmod.stream(0, "v"))
    with pytest.raises(ContractError):
        sensitivity_draws(model, 4, 0.0, rngmod.stream(0, "v"))


def test_fidelity_order_default(surrogate, tiers):
    model, x, y = surrogate
    assert tier_fidelity_order(model, x, y, tiers, CFG) == [TierId.SRAM, TierId.RERAM, TierId.PHOTONIC]


def test_fidelity_order_single_tier(surrogate, tiers):
    model, x, y = surrogate
    only = [t for t in tiers if t.tier_id is TierId.RERAM]
    assert tier_fidelity_order(model, x, y, only, CFG) == [TierId.RERAM]


def test_fidelity_order_ties_broken_by_energy(surrogate, tiers):
    model, x, y = surrogate
    by_id = tiers_by_id(tiers)
    # a noiseless ReRAM with SRAM precision behaves exactly like SRAM
    clone = dataclasses.replace(by_id[TierId.SRAM], tier_id=TierId.RERAM)
    pair = [by_id[TierId.SRAM], clone]
    quiet = NoiseConfig(boltzmann_k=0.0, electron_q=0.0)
    cheap_reram = {TierId.SRAM: 2.0, TierId.RERAM: 1.0}
    cheap_sram = {TierId.SRAM: 1.0, TierId.RERAM: 2.0}
    first = tier_fidelity_order(model, x, y, pair, quiet, energy=cheap_reram)
    assert first == [TierId.RERAM, TierId.SRAM]
    assert tier_fidelity_order(model, x, y, pair, quiet, energy=cheap_reram) == first
    assert tier_fidelity_order(model, x, y, pair, quiet, energy=cheap_sram) == [TierId.SRAM, TierId.RERAM]
