import dataclasses
import math

import numpy as np
import pytest

from markedmse.distributions import RandomStream
from markedmse.errors import ConfigurationError
from markedmse.experiments import (
    DESK_MCMC,
    FULL_MCMC,
    METHODS,
    SETTING_A,
    SETTING_B,
    SETTING_C,
    DGPSpec,
    ReplicateResult,
    ReplicateTruth,
    _chain_seed,
    aggregate_results,
    generate_setting,
    pooled_missing_summary,
    prior_grid,
    run_replication_study,
    run_sensitivity,
    write_replicates_csv,
    write_sensitivity_csv,
    write_study_csv,
)
from markedmse.sampler import MCMCSettings, ModelConfig, run_chain

TINY_MCMC = MCMCSettings(iterations=300, burn_in=100, thin=2)
SMALL_A = dataclasses.replace(SETTING_A, n_population=400)


def test_dgp_spec_validation():
    with pytest.raises(ConfigurationError, match="sum to one"):
        dataclasses.replace(SETTING_B, weights=(0.5, 0.4, 0.4))
    with pytest.raises(ConfigurationError, match="lengths"):
        dataclasses.replace(SETTING_B, mark_means=(1.0, 2.0))
    with pytest.raises(ConfigurationError, match="positive"):
        dataclasses.replace(SETTING_A, mark_sds=(0.0,))
    with pytest.raises(ConfigurationError, match="capture"):
        dataclasses.replace(SETTING_A, capture=((0.4, 0.0, 0.1, 0.1),))
    with pytest.raises(ConfigurationError):
        ReplicateTruth(n0=5, total=3.0)


def test_preset_retention_counts():
    assert DESK_MCMC.n_retained == 4000
    assert FULL_MCMC.n_retained == 250_000


def test_generate_setting_identities():
    for spec in (SETTING_A, SETTING_B, SETTING_C):
        dataset, truth = generate_setting(spec, RandomStream(11).split(0))
        assert dataset.m + truth.n0 == spec.n_population
        assert truth.total >= truth.n0 - 1e-9
        assert dataset.n_lists == 4
        assert dataset.n_strata == 1
        marks = dataset.marks
        assert np.all(marks >= 1)
        np.testing.assert_array_equal(marks, np.rint(marks))


def test_generate_setting_certain_capture():
    spec = dataclasses.replace(SETTING_A, capture=((1.0, 0.10, 0.12, 0.20),))
    dataset, truth = generate_setting(spec, 3)
    assert truth.n0 == 0
    assert truth.total == 0.0
    assert dataset.m == spec.n_population


def test_setting_a_observed_count_mean():
    # q = 0.6 * 0.9 * 0.88 * 0.8, so E[m] = 2500 (1 - q) = 1549.6.
    q = SETTING_A.nondetection_by_class()[0]
    assert q == pytest.approx(0.38016, rel=1e-12)
    stream = RandomStream(2207)
    ms = [
        generate_setting(SETTING_A, stream.split(i))[0].m for i in range(200)
    ]
    se = math.sqrt(2500 * q * (1 - q)) / math.sqrt(200)
    assert abs(np.mean(ms) - 2500 * (1 - q)) < 3 * se


def test_setting_b_missed_share_favors_low_capture_class():
    q = SETTING_B.nondetection_by_class()
    # Hand arithmetic, straight off the capture rows.
    assert q[0] == pytest.approx(0.4 * 0.45 * 0.4 * 0.45, rel=1e-12)
    assert q[2] == pytest.approx(0.85 * 0.82 * 0.85 * 0.82, rel=1e-12)
    w = np.array(SETTING_B.weights)
    share = w * np.array(q)
    share = share / share.sum()
    assert share[2] > 0.30
    assert share[2] > share[0] and share[2] > share[1]


def test_replicate_seeding_is_stable():
    base = run_replication_study(
        [SMALL_A], methods=["naive"], replicates=3, root_seed=99
    )
    again = run_replication_study(
        [SMALL_A], methods=["naive"], replicates=3, root_seed=99
    )
    assert base.results == again.results
    more = run_replication_study(
        [SMALL_A], methods=["naive"], replicates=5, root_seed=99
    )
    assert more.results[:3] == base.results

    small_b = dataclasses.replace(SETTING_B, n_population=400)
    joint = run_replication_study(
        [small_b, SMALL_A], methods=["naive"], replicates=3, root_seed=99
    )
    a_rows = tuple(r for r in joint.results if r.setting == "A")
    assert a_rows == base.results


def test_empty_study():
    study = run_replication_study([SMALL_A], methods=["naive"], replicates=0)
    assert study.results == ()
    assert study.summaries == ()


def test_study_rejects_bad_input():
    with pytest.raises(ConfigurationError, match="unknown methods"):
        run_replication_study([SMALL_A], methods=["chao"], replicates=1)
    with pytest.raises(ConfigurationError, match="distinct"):
        run_replication_study([SMALL_A, SMALL_A], methods=["naive"], replicates=1)
    with pytest.raises(ConfigurationError, match="nonnegative"):
        run_replication_study([SMALL_A], methods=["naive"], replicates=-1)


def make_row(setting, method, replicate, n0_hat, total_hat, status="ok", **kw):
    return ReplicateResult(
        setting=setting,
        method=method,
        replicate=replicate,
        status=status,
        n0_hat=n0_hat,
        d0_hat=math.nan,
        total_hat=total_hat,
        n0_true=100,
        total_true=1000.0,
        **kw,
    )


def test_aggregation_matches_hand_computation():
    rows = [
        make_row("A", "naive", 0, 110.0, 1100.0),
        make_row("A", "naive", 1, 90.0, 800.0),
        make_row("A", "naive", 2, 100.0, 1300.0),
        make_row("A", "naive", 3, 120.0, 1000.0),
        make_row("A", "naive", 4, math.nan, math.nan, status="undefined"),
    ]
    (summary,) = aggregate_results(rows)
    assert summary.n_replicates == 5
    assert summary.n_excluded == 1
    # Relative errors: 0.1, -0.1, 0.0, 0.2 for n0.
    assert summary.mre_n0 == pytest.approx(0.05, rel=1e-12)
    assert summary.log_rmse_n0 == pytest.approx(
        math.log(math.sqrt((100 + 100 + 0 + 400) / 4)), rel=1e-12
    )
    # Relative errors: 0.1, -0.2, 0.3, 0.0 for the total.
    assert summary.mre_total == pytest.approx(0.05, rel=1e-12)
    assert summary.log_rmse_total == pytest.approx(
        math.log(math.sqrt((10000 + 40000 + 90000 + 0) / 4)), rel=1e-12
    )
    assert math.isnan(summary.coverage_n0)


def test_aggregation_coverage_and_overall():
    rows = []
    for setting, flags in (("A", (True, True, False, True)), ("B", (True,) * 4)):
        for i, flag in enumerate(flags):
            rows.append(
                make_row(
                    setting, "mixture", i, 100.0, 1000.0,
                    n0_covered=flag, total_covered=not flag,
                )
            )
    summaries = aggregate_results(rows)
    by_setting = {s.setting: s for s in summaries}
    assert by_setting["A"].coverage_n0 == 0.75
    assert by_setting["B"].coverage_n0 == 1.0
    assert by_setting["overall"].coverage_n0 == pytest.approx((0.75 + 1.0) / 2)
    assert by_setting["overall"].n_replicates == 8
    assert by_setting["A"].coverage_total == 0.25


def test_study_with_mixture_method(tmp_path):
    study = run_replication_study(
        [SMALL_A],
        methods=["naive", "mixture"],
        replicates=2,
        config=ModelConfig(n_clusters=20),
        mcmc=TINY_MCMC,
        root_seed=5,
        out_dir=tmp_path,
    )
    mix = [r for r in study.results if r.method == "mixture"]
    assert len(mix) == 2
    for r in mix:
        assert r.status == "ok"
        assert r.n0_lo <= r.n0_hat <= r.n0_hi
        assert r.total_lo <= r.total_hat <= r.total_hi
        assert isinstance(r.n0_covered, bool)
    summary = study.summary("A", "mixture")
    assert 0.0 <= summary.coverage_n0 <= 1.0
    assert math.isnan(study.summary("A", "naive").coverage_n0)

    again = run_replication_study(
        [SMALL_A],
        methods=["naive", "mixture"],
        replicates=2,
        config=ModelConfig(n_clusters=20),
        mcmc=TINY_MCMC,
        root_seed=5,
    )
    assert again.results == study.results

    lines = (tmp_path / "replicates.csv").read_text().splitlines()
    assert lines[0].startswith("setting,method,replicate,status,n0_hat")
    assert len(lines) == 1 + 4
    mix_line = [l for l in lines if ",mixture," in l][0]
    assert mix_line.split(",")[-1] in ("0", "1")
    summary_lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert len(summary_lines) == 1 + 2


def test_csv_nan_cells_are_empty(tmp_path):
    rows = [make_row("A", "naive", 0, math.nan, math.nan, status="undefined")]
    write_replicates_csv(rows, tmp_path / "r.csv")
    body = (tmp_path / "r.csv").read_text().splitlines()[1]
    assert ",undefined,,," in body
    write_study_csv(aggregate_results(rows), tmp_path / "s.csv")
    srow = (tmp_path / "s.csv").read_text().splitlines()[1]
    assert srow.startswith("A,naive,1,1,")


def test_prior_grid_shape():
    grid = prior_grid()
    assert len(grid) == 108
    specs = [spec for spec, _ in grid]
    assert len(set(specs)) == 108
    first, first_config = grid[0]
    assert (first.n_clusters, first.c0, first.C0) == (80, 3.5, 1.0)
    assert first.alpha_mode == "fixed-1"
    assert first_config.fixed_alpha == 1.0
    assert first_config.n_clusters == 80

    baselines = [spec for spec in specs if spec.is_baseline]
    assert len(baselines) == 1
    assert baselines[0].n_clusters == 100
    assert baselines[0].c0 == 4.0
    assert baselines[0].C0 == 1.0
    assert baselines[0].alpha_mode == "gamma-1-1"

    modes = {spec.alpha_mode for spec in specs}
    assert modes == {"fixed-1", "gamma-1-1", "gamma-0.25-0.25", "gamma-2-4"}
    for spec, config in grid:
        if spec.alpha_mode == "fixed-1":
            assert config.fixed_alpha == 1.0
        else:
            assert config.fixed_alpha is None
    gamma24 = [c for s, c in grid if s.alpha_mode == "gamma-2-4"][0]
    assert (gamma24.a_alpha, gamma24.b_alpha) == (2.0, 4.0)


def test_sensitivity_degenerate_grid_matches_plain_chain(tmp_path):
    dataset, _ = generate_setting(SMALL_A, RandomStream(77).split(0))
    grid = [cell for cell in prior_grid() if cell[0].is_baseline]
    config = grid[0][1]
    rows = run_sensitivity(
        dataset, grid, mcmc=TINY_MCMC, root_seed=123, out_dir=tmp_path
    )
    assert len(rows) == 1
    row = rows[0]
    assert row.status == "ok"
    assert row.baseline

    seed = _chain_seed(RandomStream(123).split(0))
    draws = run_chain(dataset, config, dataclasses.replace(TINY_MCMC, seed=seed))
    expected = pooled_missing_summary(draws)
    assert (
        row.n0_median, row.n0_lo, row.n0_hi,
        row.total_median, row.total_lo, row.total_hi,
    ) == expected
    assert row.n0_lo <= row.n0_median <= row.n0_hi

    text = (tmp_path / "sensitivity.csv").read_text().splitlines()
    assert text[0].startswith("label,n_clusters,c0,C0,alpha_mode,baseline,status")
    assert len(text) == 2
    assert text[1].startswith("K100-c4-C1-gamma-1-1,100,")


def test_full_grid_completes_on_small_data():
    small_c = dataclasses.replace(SETTING_C, n_population=70)
    dataset, _ = generate_setting(small_c, RandomStream(41).split(0))
    mcmc = MCMCSettings(iterations=150, burn_in=50, thin=2)
    rows = run_sensitivity(dataset, prior_grid(), mcmc=mcmc, root_seed=8)
    assert len(rows) == 108
    assert all(r.status == "ok" for r in rows)
    for r in rows:
        assert math.isfinite(r.n0_median) and math.isfinite(r.total_hi)
        assert r.n0_lo <= r.n0_median <= r.n0_hi
        assert r.total_lo <= r.total_median <= r.total_hi
    assert sum(r.baseline for r in rows) == 1


def test_diffuse_variance_prior_fattens_missing_mark_tail():
    # On a small heavy-tailed dataset the prior on the mark variances
    # leaks into the imputed-mark tail: a larger scale C0 (and, more
    # weakly, a smaller shape c0) should raise the 97.5% quantile of
    # the missing mark total in most paired comparisons.
    from markedmse.experiments import PriorGridSpec

    small_c = dataclasses.replace(SETTING_C, n_population=70)
    dataset, _ = generate_setting(small_c, RandomStream(41).split(0))
    mcmc = MCMCSettings(iterations=8000, burn_in=2000, thin=1)
    grid = [
        (PriorGridSpec(40, c0, C0, "gamma-1-1"),
         ModelConfig(n_clusters=40, c0=c0, C0=C0))
        for c0 in (3.5, 4.0, 4.5)
        for C0 in (1.0, 2.0)
    ]
    rows = run_sensitivity(dataset, grid, mcmc=mcmc, root_seed=60)
    hi = {(r.c0, r.C0): r.total_hi for r in rows}
    comparisons = [
        hi[(3.5, 2.0)] > hi[(3.5, 1.0)],
        hi[(4.0, 2.0)] > hi[(4.0, 1.0)],
        hi[(4.5, 2.0)] > hi[(4.5, 1.0)],
        hi[(3.5, 1.0)] > hi[(4.5, 1.0)],
        hi[(3.5, 2.0)] > hi[(4.5, 2.0)],
    ]
    assert sum(comparisons) >= 3


def test_sensitivity_continues_past_failures(tmp_path):
    # An unobservable dataset makes every chain refuse to start; the
    # grid must still produce one row per cell.
    from markedmse.data import Dataset

    empty = Dataset((), ("all",), n_lists=4)
    grid = prior_grid()[:2]
    rows = run_sensitivity(empty, grid, mcmc=TINY_MCMC)
    assert len(rows) == 2
    for row in rows:
        assert row.status.startswith("error:")
        assert math.isnan(row.n0_median)
    write_sensitivity_csv(rows, tmp_path / "sens.csv")
    body = (tmp_path / "sens.csv").read_text().splitlines()[1]
    assert "error:" in body
