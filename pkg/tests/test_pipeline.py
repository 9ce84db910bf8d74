import numpy as np
import pytest

import guided_inpaint.sampler as sampler_mod
from guided_inpaint.data import make_benchmark_mask
from guided_inpaint.mixture import GaussianMixtureModel, MixtureClassifier, MixtureDenoiser
from guided_inpaint.sampler import (
    GuidanceConfig,
    SamplerError,
    auto_select,
    disable_guidance,
    disable_stochastic,
    handoff_timestep,
    run_deterministic_refinement,
    run_pipeline,
    run_stochastic_phase,
)
from guided_inpaint.schedule import build_linear_schedule, build_skip_sequence, full_sequence


SIZE = 16


def image_patterns(size=SIZE):
    """Two well-separated near-binary patterns: a disc blob and its negation."""
    yy, xx = np.mgrid[0:size, 0:size]
    disc = np.where(
        (yy - size / 2 + 0.5) ** 2 + (xx - size / 2 + 0.5) ** 2 <= (size * 0.3) ** 2,
        0.9,
        -0.9,
    )[None]
    return np.stack([disc, -disc])


@pytest.fixture(scope="module")
def image_gmm():
    return GaussianMixtureModel(
        weights=np.array([0.5, 0.5]), means=image_patterns(), sigmas=np.array([0.05, 0.05])
    )


@pytest.fixture(scope="module")
def image_setup(image_gmm):
    sched = build_linear_schedule(250)
    skip = build_skip_sequence(250, [50, 50, 25, 25, 5])
    den = MixtureDenoiser(image_gmm, sched)
    # guidance classifier over the same means but much wider components:
    # gradient scales comparable to a trained net, and no float64 saturation
    # to exactly p=1 (which would zero the guidance signal)
    clf = MixtureClassifier(
        GaussianMixtureModel(image_gmm.weights, image_gmm.means, np.array([4.0, 4.0]))
    )
    return sched, skip, den, clf


class TestHandoff:
    def test_full_sequence_default(self):
        skip = full_sequence(250)
        assert handoff_timestep(skip, 130) == 130

    def test_paper_skip_config(self):
        skip = build_skip_sequence(250, [50, 50, 25, 25, 5])
        assert 124 in skip.taus
        assert handoff_timestep(skip, 124) == 124

    def test_threshold_below_sequence(self):
        skip = build_skip_sequence(20, [2, 2])
        assert handoff_timestep(skip, 0) == skip.taus[0]


class TestStochasticPhase:
    def test_bitwise_determinism(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[0]
        mask = make_benchmark_mask("half", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=2, seed=42, labels=(0,), t_stop_comp=124, i_guid=1, i_inp=1)
        a = run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip)
        b = run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip)
        for ca, cb in zip(a, b):
            np.testing.assert_array_equal(ca.x_t, cb.x_t)
            np.testing.assert_array_equal(ca.preview_x0, cb.preview_x0)

    def test_serial_matches_parallel(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[1]
        mask = make_benchmark_mask("square", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=3, seed=7, labels=(1,), t_stop_comp=124, i_guid=1, i_inp=1)
        serial = run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip, parallel=False)
        par = run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip, parallel=True)
        for cs, cp in zip(serial, par):
            np.testing.assert_array_equal(cs.x_t, cp.x_t)

    def test_no_ss_never_composites(self, image_gmm, image_setup, monkeypatch):
        sched, skip, den, clf = image_setup
        calls = {"n": 0}
        orig = sampler_mod.composite_renoise

        def counting(*args, **kwargs):
            calls["n"] += 1
            return orig(*args, **kwargs)

        monkeypatch.setattr(sampler_mod, "composite_renoise", counting)
        gt = image_gmm.means[0]
        mask = make_benchmark_mask("half", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=1, seed=3, labels=(0,), t_stop_comp=124,
                             i_guid=1, i_inp=1, enable_ss=False)
        run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip)
        assert calls["n"] == 0
        cfg_on = GuidanceConfig(candidates=1, seed=3, labels=(0,), t_stop_comp=124,
                                i_guid=1, i_inp=1)
        run_stochastic_phase(gt, mask, den, clf, cfg_on, sched, skip)
        assert calls["n"] > 0

    def test_fully_known_image_reproduced_in_previews(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[0]
        mask = np.ones_like(gt)
        cfg = GuidanceConfig(candidates=2, seed=11, labels=(0,), t_stop_comp=124,
                             i_guid=1, i_inp=1)
        for cand in run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip):
            assert np.max(np.abs(cand.preview_x0 - gt)) < 1e-2

    def test_branch_error_carries_id(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[0]
        cfg = GuidanceConfig(candidates=1, seed=0, labels=(5,), t_stop_comp=124)  # bad label
        with pytest.raises(SamplerError, match="branch 0"):
            run_stochastic_phase(gt, np.ones_like(gt), den, clf, cfg, sched, skip)


class TestRefinement:
    def test_determinism_and_known_region(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[0]
        mask = make_benchmark_mask("expand", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=1, seed=5, labels=(0,), t_stop_comp=124,
                             i_guid=1, i_inp=1)
        (cand,) = run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip)
        f1, r1 = run_deterministic_refinement(cand, gt, mask, den, clf, cfg, sched, skip)
        f2, r2 = run_deterministic_refinement(cand, gt, mask, den, clf, cfg, sched, skip)
        np.testing.assert_array_equal(f1, f2)
        np.testing.assert_array_equal(r1, r2)
        np.testing.assert_array_equal(f1 * mask, gt * mask)

    def test_shape_mismatch_rejected(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[0]
        mask = make_benchmark_mask("half", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=1, seed=5, labels=(0,), t_stop_comp=124)
        (cand,) = run_stochastic_phase(gt, mask, den, clf, cfg, sched, skip)
        with pytest.raises(SamplerError):
            run_deterministic_refinement(
                cand, np.zeros((1, 4, 4)), np.ones((1, 4, 4)), den, clf, cfg, sched, skip
            )


class TestPipeline:
    def test_one_dimensional_degenerate_inpainting(self, gmm_1d):
        sched = build_linear_schedule(250)
        skip = full_sequence(250)
        den = MixtureDenoiser(gmm_1d, sched)
        clf = MixtureClassifier(gmm_1d)
        gt = np.array([1.0])
        cfg = GuidanceConfig(candidates=1, seed=1, labels=(1,))
        res = run_pipeline(gt, np.ones(1), cfg, den, clf, sched, skip)
        assert abs(res.final_raw[0] - 1.0) < 1e-2
        np.testing.assert_array_equal(res.final, gt)

    def test_candidate_cardinality_and_selection(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[1]
        mask = make_benchmark_mask("half", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=3, seed=9, labels=(1,), t_stop_comp=124,
                             i_guid=1, i_inp=1)
        res = run_pipeline(gt, mask, cfg, den, clf, sched, skip)
        assert len(res.candidates) == 3
        assert res.selected_id in {c.id for c in res.candidates}
        best = max(res.candidates, key=lambda c: (c.score, -c.branch))
        assert res.selected_id == best.id

    def test_explicit_selection_and_unknown_id(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[0]
        mask = make_benchmark_mask("square", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=2, seed=2, labels=(0,), t_stop_comp=124,
                             i_guid=1, i_inp=1)
        res = run_pipeline(gt, mask, cfg, den, clf, sched, skip, selection="c001")
        assert res.selected_id == "c001"
        with pytest.raises(SamplerError):
            run_pipeline(gt, mask, cfg, den, clf, sched, skip, selection="c009")

    def test_ablation_toggles_run(self, image_gmm, image_setup):
        sched, skip, den, clf = image_setup
        gt = image_gmm.means[0]
        mask = make_benchmark_mask("half", SIZE, SIZE)
        cfg = GuidanceConfig(candidates=1, seed=4, labels=(0,), t_stop_comp=124,
                             i_guid=1, i_inp=1)
        no_cg = disable_guidance(cfg)
        no_ss = disable_stochastic(cfg)
        assert not no_cg.enable_cg and no_cg.enable_ss
        assert not no_ss.enable_ss and no_ss.enable_cg
        res_cg = run_pipeline(gt, mask, no_cg, den, clf, sched, skip)
        res_ss = run_pipeline(gt, mask, no_ss, den, clf, sched, skip)
        res_full = run_pipeline(gt, mask, cfg, den, clf, sched, skip)
        assert not np.array_equal(res_cg.final_raw, res_full.final_raw)
        assert not np.array_equal(res_ss.final_raw, res_full.final_raw)

    def test_auto_select_empty_errors(self):
        with pytest.raises(SamplerError):
            auto_select([])
