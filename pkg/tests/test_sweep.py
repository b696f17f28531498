"""
Test frequency grids, verdicts, low-frequency fits and the implication audit
"""
import sys
import os

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evanscope.determinants import DeterminantSample, StabilityEvaluator
from evanscope.errors import ConfigError, ConjugationError
from evanscope.sweep import FrequencyGrid, StabilityReport, finalize, low_freq_fit, run_sweep


def _synthetic_samples(grid, zeta_hat=(0.0, 1.0), dm_dip=None):
    """Samples of a stable shock: D_Lop = 2, DD_s = rho/2 + rho^2/10, D_m = beta = D_red = 1."""
    samples = [
        DeterminantSample("D_Lop", 2j, zeta_hat, 0.0),
        DeterminantSample("D_Lop_m", 1.0 + 0j, zeta_hat, 0.0),
        DeterminantSample("beta_K", 1.0 + 0j, zeta_hat, 0.0),
    ]
    for rho in grid.rho_ladder:
        rho = float(rho)
        dm = 1e-12 if dm_dip is not None and rho == dm_dip else 1.0
        samples += [
            DeterminantSample("D_s", complex(rho, 0.0), zeta_hat, rho),
            DeterminantSample("DD_s", complex(0.5 * rho + 0.1 * rho ** 2, 0.0), zeta_hat, rho),
            DeterminantSample("D_s_tilde", complex(rho * dm, 0.0), zeta_hat, rho),
            DeterminantSample("D_m", complex(dm, 0.0), zeta_hat, rho),
            DeterminantSample("D_red", complex(dm, 0.0), zeta_hat, rho),
            DeterminantSample("beta", 1.0 + 0j, zeta_hat, rho),
            DeterminantSample("D_m_direct", complex(dm, 0.0), zeta_hat, rho),
        ]
    return samples


def test_grid_presets_one_dimensional():
    grid = FrequencyGrid.build(1, "coarse")
    assert grid.size == 9
    assert grid.rho_ladder.size == 7
    assert np.all(grid.zeta_hat[:, 1] >= 0.0), "closed upper half circle"
    assert np.allclose(np.linalg.norm(grid.zeta_hat, axis=1), 1.0)
    assert grid.zeta_hat[-1, 1] == 0.0, "the glancing endpoint is exactly on the boundary"
    assert grid.rho_ladder[0] == pytest.approx(1e-4) and grid.rho_ladder[-1] == pytest.approx(1e-1)


def test_grid_hemisphere_and_mid_set():
    grid = FrequencyGrid.build(2, "coarse", mid_rho=[0.05, 0.5, 1.0])
    assert grid.zeta_hat.shape == (4 * 5 + 1, 3)
    assert np.all(grid.zeta_hat[:, 1] >= 0.0)
    assert grid.mid_rho.tolist() == [0.5, 1.0], "mid-frequency points must lie above the ladder"
    assert grid.describe()["points"] == 21


def test_grid_rejects_bad_settings():
    with pytest.raises(ConfigError):
        FrequencyGrid.build(1, "huge")
    with pytest.raises(ConfigError):
        FrequencyGrid.build(1, "coarse", rho_min=0.1, rho_max=0.01)


def test_verdicts_and_audit_for_stable_samples():
    grid = FrequencyGrid.build(1, "coarse")
    report = finalize(StabilityReport(_synthetic_samples(grid), grid, "strongly-transversal"))

    assert report.verdicts["uniformLopatinski"]["value"] is True
    assert report.verdicts["uniformLopatinski"]["min_modulus"] == pytest.approx(2.0)
    assert report.verdicts["lowFreqStandardEvans"]["value"] is True
    assert report.verdicts["lowFreqModifiedEvans"]["value"] is True
    assert report.verdicts["standardUniformEvans"]["value"] is None, "no mid-frequency samples"
    assert all(row["status"] == "consistent" for row in report.audit)
    assert np.isnan(report.cross_checks["dm_beta_dred_max_relative_error"]), "needs per-ray D_m_direct data"
    assert report.cross_checks["ds_vanishing_mismatches"] == 0


def test_low_frequency_fit_recovers_slope():
    """|DD_s| = rho/2 + rho^2/10 gives slope 1/2 and ratio slope / (|beta_K| |D_Lop|) = 1/4"""
    grid = FrequencyGrid.build(1, "coarse")
    report = StabilityReport(_synthetic_samples(grid), grid, "strongly-transversal")
    fit = low_freq_fit(report, (0.0, 1.0))
    assert not fit.failed
    assert fit.slope == pytest.approx(0.5, rel=1e-9)
    assert fit.ratio == pytest.approx(0.25, rel=1e-9)
    assert fit.ds_dm_limit == pytest.approx(1.0)
    assert fit.quad_residual == pytest.approx(0.1, rel=1e-6)


def test_fit_needs_enough_points():
    grid = FrequencyGrid.build(1, "coarse", rho_min=1e-2, rho_max=2e-2, rho_points=2)
    report = StabilityReport(_synthetic_samples(grid), grid, "strongly-transversal")
    assert low_freq_fit(report, (0.0, 1.0)).failed


def test_audit_flags_inconsistent_verdicts():
    """A vanishing D_m under a nonvanishing D_s is a numerical inconsistency"""
    grid = FrequencyGrid.build(1, "coarse")
    dip = float(grid.rho_ladder[2])
    report = finalize(StabilityReport(_synthetic_samples(grid, dm_dip=dip), grid, "strongly-transversal"))
    assert report.verdicts["lowFreqModifiedEvans"]["value"] is False
    row = next(r for r in report.audit if r["conclusion"] == "lowFreqModifiedEvans")
    assert row["status"] == "inconsistent"
    assert row["offending"][0]["rho"] == dip


def test_withheld_verdicts_are_not_evaluable():
    grid = FrequencyGrid.build(1, "coarse")
    report = finalize(StabilityReport(_synthetic_samples(grid), grid, "degenerate",
                                      withheld="connection is degenerate"))
    assert all(v["value"] is None for v in report.verdicts.values())
    assert all(row["status"] == "not evaluable" for row in report.audit)
    assert report.to_dict()["withheld"] == "connection is degenerate"


def test_flagged_samples_never_enter_minimum():
    grid = FrequencyGrid.build(1, "coarse")
    samples = _synthetic_samples(grid)
    samples.append(DeterminantSample("D_Lop", 0j, (1.0, 0.0), 0.0, "continuity-suspect"))
    report = finalize(StabilityReport(samples, grid, "strongly-transversal"))
    assert report.verdicts["uniformLopatinski"]["value"] is True
    assert len(report.continuity_suspects) == 1
    assert report.failed == []


def test_sample_table_columns():
    grid = FrequencyGrid.build(1, "coarse")
    report = StabilityReport(_synthetic_samples(grid), grid, "strongly-transversal")
    frame = report.to_frame()
    assert list(frame.columns) == ["zetahat_0", "zetahat_1", "rho", "kind", "re", "im", "flag"]
    plot = report.plot_frame()
    assert set(plot["kind"]) <= {"DD_s", "D_s", "D_m", "D_red"}
    assert "modulus" in plot.columns


@pytest.mark.slow
def test_burgers_sweep_verdicts():
    """A small Burgers sweep: Lopatinski modulus 2, low-frequency Evans verdicts hold, audit consistent"""
    from evanscope.chart import build_chart
    from evanscope.systems import get_reference_connection

    cp = get_reference_connection("burgers")
    chart = build_chart(cp, [0])
    grid = FrequencyGrid.build(1, "coarse", angles=3, rho_min=1e-3, rho_max=1e-1, rho_points=5, mid_rho=[0.5])
    report = run_sweep(cp, chart.chi_prime(), grid, chart.verdict, threads=2, progress=False)

    assert report.withheld is None
    assert report.verdicts["uniformLopatinski"]["value"] is True
    assert report.verdicts["uniformLopatinski"]["min_modulus"] == pytest.approx(2.0, rel=1e-6)
    assert report.verdicts["lowFreqStandardEvans"]["value"] is True
    assert all(row["status"] == "consistent" for row in report.audit)
    assert report.cross_checks["dm_beta_dred_max_relative_error"] <= 1e-6
    zeta_order = [tuple(z) for z in grid.zeta_hat.tolist()]
    seen = []
    for s in report.samples:
        if s.zeta_hat not in seen:
            seen.append(s.zeta_hat)
    assert np.allclose(seen, zeta_order), "rows keep grid order regardless of thread count"


def test_setup_failures_block_dependent_verdicts():
    """A failed rho = 0 stage leaves the modified Evans verdict and the fits unevaluated, with the code"""
    grid = FrequencyGrid.build(1, "coarse")
    report = finalize(StabilityReport(_synthetic_samples(grid), grid, "strongly-transversal",
                                      setup_errors={"rho0_frames": "conjugation"}))
    verdict = report.verdicts["lowFreqModifiedEvans"]
    assert verdict["value"] is None
    assert "rho0_frames" in verdict["reason"] and "conjugation" in verdict["reason"]
    assert report.verdicts["uniformLopatinski"]["value"] is True, "Lopatinski does not use rho = 0 frames"
    assert report.to_dict()["setup_errors"] == {"rho0_frames": "conjugation"}


def test_run_sweep_records_failed_setup(monkeypatch):
    """The rho = 0 setup error is kept in the report and flags every HP sample"""
    from evanscope.chart import build_chart
    from evanscope.systems import get_reference_connection

    def failing(self):
        raise ConjugationError("conjugator condition 1.00e+09 on side +")

    monkeypatch.setattr(StabilityEvaluator, "_build_base", failing)
    cp = get_reference_connection("burgers")
    chart = build_chart(cp, [0])
    grid = FrequencyGrid.build(1, "coarse", angles=3, rho_min=1e-3, rho_max=1e-1, rho_points=3, mid_rho=[])
    report = run_sweep(cp, chart.chi_prime(), grid, chart.verdict, threads=1, progress=False)

    assert report.setup_errors == {"rho0_frames": "conjugation", "beta_K": "conjugation"}
    assert all(s.flag == "conjugation" for s in report.select("beta_K", valid=False))
    hp_flags = {s.flag for s in report.samples if s.kind in ("DD_s", "D_m", "D_red")}
    assert "conjugation" in hp_flags and "ok" not in hp_flags
    assert report.verdicts["lowFreqModifiedEvans"]["value"] is None
    assert report.verdicts["lowFreqStandardEvans"]["value"] is not None, "D_s needs no rho = 0 frames"
    assert all(f.failed and "rho0_frames" in f.reason for f in report.fits)


def _low_frequency_sweep(model_id):
    from evanscope.chart import build_chart
    from evanscope.systems import get_reference_connection, reference_shock

    cp = get_reference_connection(model_id)
    chart = build_chart(cp, reference_shock(model_id).alpha)
    grid = FrequencyGrid.build(1, "coarse", angles=5, rho_min=1e-3, rho_max=1e-1, rho_points=7, mid_rho=[])
    return run_sweep(cp, chart.chi_prime(), grid, chart.verdict, threads=2, progress=False,
                     tangents=chart.tangent_space())


@pytest.mark.slow
@pytest.mark.parametrize("model_id", ["burgers", "burgers-transport"])
def test_low_frequency_identities_on_real_sweep(model_id):
    """|DD_s| slope matches |beta_K| |D_Lop| at interior zeta_hat; D_s / (rho D_m) has a limit"""
    report = _low_frequency_sweep(model_id)

    assert report.setup_errors == {}, f"setup failed: {report.setup_errors}"
    interior = [f for f in report.fits if f.zeta_hat[1] >= 0.1]
    assert interior, "the grid must contain interior zeta_hat"
    for fit in interior:
        assert not fit.failed, f"{model_id} {fit.zeta_hat}: {fit.reason}"
        assert 0.999 <= fit.ratio <= 1.001, f"{model_id} {fit.zeta_hat}: ratio {fit.ratio}"
        assert np.isfinite(fit.ds_dm_limit) and fit.ds_dm_limit > 0.0
        assert np.isfinite(fit.ds_dm_constant)
    assert report.cross_checks["dm_beta_dred_max_relative_error"] <= 1e-6
    assert report.cross_checks["dm_direct_vanishing_mismatches"] == 0
    assert report.cross_checks["tangent_residual"] <= 1e-6
    assert report.cross_checks["complement_kernel_angle"] <= 1e-8
