//! The four experiment families.

use chernoff_core::asymptotics::{
    log_spaced, measure_normalized, measure_unnormalized, predict_normalized,
    predict_unnormalized, tail_threshold,
};
use chernoff_core::chernoff::{convergence_study, self_convergence_study, step_operators};
use chernoff_core::conditioned::{
    fdd_estimate, fdd_reference, off_partition_normalization, shell_density_limit,
};
use chernoff_core::{
    apply_product, uniform_partition, GridFunction, ProductTest, ScalarGeneratorModel,
};
use serde::Serialize;

use crate::config::{
    AsymptoticsConfig, ConvergeConfig, DensityCheckConfig, Experiment, ExperimentConfig,
    McFddConfig, ReferenceKind,
};
use crate::error::CliError;
use crate::output::{fmt_f64, RunOutput};

/// Tolerance of the exact algebraic invariants.
const INVARIANT_TOLERANCE: f64 = 1e-12;

pub fn run_experiment(config: &ExperimentConfig, seed: u64, out: &mut RunOutput) -> Result<(), CliError> {
    match &config.experiment {
        Experiment::Converge(c) => converge(config, c, out),
        Experiment::Asymptotics(a) => asymptotics(config, a, out),
        Experiment::McFdd(m) => mc_fdd(config, m, seed, out),
        Experiment::DensityCheck(d) => density_check(config, d, out),
    }
}

#[derive(Serialize)]
struct ConvergeSummary {
    reference: ReferenceKind,
    test_function: String,
    order: f64,
    log_log_slope: Option<f64>,
    log_log_slope_ci95: Option<(f64, f64)>,
    corrected_order: Option<f64>,
    reference_mesh: Option<f64>,
    strictly_decreasing: bool,
    final_error: f64,
    max_row_sum_defect: f64,
    constant_preservation_error: f64,
}

fn converge(config: &ExperimentConfig, c: &ConvergeConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let grid = config.grid()?;
    let spec = *grid.spec();
    let [s, t] = config.interval;
    let f = c.test_function.spectral(&spec)?;
    let f_grid = f.to_grid(&grid);
    let table = match c.reference {
        ReferenceKind::Spectral => {
            let model = ScalarGeneratorModel::new(spec, &config.scaling)?;
            let reference = model.propagate(s, t, &f)?.to_grid(&grid);
            convergence_study(&grid, &config.scaling, s, t, &f_grid, &c.n_list, &reference)?
        }
        ReferenceKind::SelfConvergence => {
            self_convergence_study(&grid, &config.scaling, s, t, &f_grid, &c.n_list)?
        }
    };

    let finest = uniform_partition(s, t, c.n_list[c.n_list.len() - 1])?;
    let max_row_sum_defect = step_operators(&grid, &config.scaling, &finest)?
        .iter()
        .map(|op| op.row_sum_defect())
        .fold(0.0, f64::max);
    let ones = GridFunction::constant(&grid, 1.0);
    let constant_preservation_error =
        apply_product(&grid, &config.scaling, &finest, &ones)?.sup_distance(&ones)?;

    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![r.n.to_string(), fmt_f64(r.mesh), fmt_f64(r.sup_error)])
        .collect();
    out.write_csv("convergence.csv", &["n", "mesh", "sup_error"], &rows)?;
    let final_error = table.rows.last().map_or(f64::NAN, |r| r.sup_error);
    let summary = ConvergeSummary {
        reference: c.reference,
        test_function: c.test_function.id(),
        order: table.order(),
        log_log_slope: table.fit.as_ref().map(|f| f.slope),
        log_log_slope_ci95: table.fit.as_ref().map(|f| f.slope_ci95),
        corrected_order: table.corrected_order,
        reference_mesh: table.reference_mesh,
        strictly_decreasing: table.strictly_decreasing(),
        final_error,
        max_row_sum_defect,
        constant_preservation_error,
    };
    out.write_json("convergence.json", &summary)?;

    out.check(
        "order",
        summary.order >= c.min_order,
        format!("fitted order {} >= {}", summary.order, c.min_order),
    );
    if c.require_decreasing {
        out.check("strictly_decreasing", summary.strictly_decreasing, "errors decrease with n");
    }
    if let Some(max) = c.max_final_error {
        out.check(
            "final_error",
            final_error <= max,
            format!("final sup error {final_error} <= {max}"),
        );
    }
    out.check(
        "row_sums",
        max_row_sum_defect <= INVARIANT_TOLERANCE,
        format!("max row sum defect {max_row_sum_defect}"),
    );
    out.check(
        "constants_preserved",
        constant_preservation_error <= INVARIANT_TOLERANCE,
        format!("product of constant deviates by {constant_preservation_error}"),
    );
    Ok(())
}

#[derive(Serialize)]
struct AsymptoticsSummary {
    source: chernoff_core::ExpansionSource,
    test_function: String,
    point: chernoff_core::Point,
    predicted_a0: f64,
    predicted_a1: f64,
    a0_hat: f64,
    a1_hat: f64,
    b_hat: f64,
    a1_error: f64,
    a1_relative_error: f64,
    a1_tolerance: f64,
    remainder_exponent: f64,
    remainder_exponent_vs_prediction: f64,
    k_hat: f64,
    k_hat_vs_prediction: f64,
    condition: f64,
    t_window: (f64, f64),
    tail_t0: Option<f64>,
}

fn asymptotics(config: &ExperimentConfig, a: &AsymptoticsConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let grid = config.grid()?;
    let spec = *grid.spec();
    let y = a.point.resolve(&grid, "experiment.point")?;
    let g = a.test_function.spectral(&spec)?;
    let ts = log_spaced(a.t_samples.min, a.t_samples.max, a.t_samples.count);
    let (fit, prediction) = if a.normalized {
        (measure_normalized(&grid, &g, &y, &ts)?, predict_normalized(&spec, &g, &y)?)
    } else {
        (measure_unnormalized(&grid, &g, &y, &ts)?, predict_unnormalized(&spec, &g, &y)?)
    };
    let against = fit.against_prediction(&prediction)?;
    let tail_t0 = tail_threshold(&grid, &y, &log_spaced(a.t_samples.min, 1.0, 25))?;

    let rows: Vec<Vec<String>> = fit
        .samples
        .iter()
        .map(|&(t, v)| {
            vec![
                fmt_f64(t),
                fmt_f64(v),
                fmt_f64(prediction.a0 + prediction.a1 * t),
                fmt_f64(fit.a0_hat + fit.a1_hat * t + fit.b_hat * t.powf(1.5)),
            ]
        })
        .collect();
    out.write_csv("samples.csv", &["t", "value", "predicted", "fitted"], &rows)?;

    let a1_error = (fit.a1_hat - prediction.a1).abs();
    let a1_tolerance = (a.relative_tolerance * prediction.a1.abs()).max(a.absolute_tolerance);
    let summary = AsymptoticsSummary {
        source: fit.source,
        test_function: a.test_function.id(),
        point: y,
        predicted_a0: prediction.a0,
        predicted_a1: prediction.a1,
        a0_hat: fit.a0_hat,
        a1_hat: fit.a1_hat,
        b_hat: fit.b_hat,
        a1_error,
        a1_relative_error: a1_error / prediction.a1.abs(),
        a1_tolerance,
        remainder_exponent: fit.remainder_exponent,
        remainder_exponent_vs_prediction: against.remainder_exponent,
        k_hat: fit.k_hat,
        k_hat_vs_prediction: against.k_hat,
        condition: fit.condition,
        t_window: fit.t_window,
        tail_t0,
    };
    out.write_json("asymptotics.json", &summary)?;

    out.check(
        "a1_agreement",
        a1_error <= a1_tolerance,
        format!("|a1_hat - a1| = |{} - {}| = {a1_error} <= {a1_tolerance}", fit.a1_hat, prediction.a1),
    );
    out.check(
        "remainder_exponent",
        fit.remainder_exponent >= a.min_remainder_exponent,
        format!("exponent {} >= {}", fit.remainder_exponent, a.min_remainder_exponent),
    );
    Ok(())
}

#[derive(Serialize)]
struct FddSummary {
    report: chernoff_core::FddReport,
    within_diffusion_band: bool,
    gaps: Vec<GapRow>,
    gaps_decreasing: Option<bool>,
}

#[derive(Serialize)]
struct GapRow {
    n: usize,
    chain: f64,
    diffusion: Option<f64>,
    gap: Option<f64>,
}

fn mc_fdd(config: &ExperimentConfig, m: &McFddConfig, seed: u64, out: &mut RunOutput) -> Result<(), CliError> {
    let grid = config.grid()?;
    let spec = *grid.spec();
    let [s, t] = config.interval;
    let x0 = m.x0.node(&grid, "experiment.x0")?;
    let factors = m
        .factors
        .iter()
        .map(|f| f.spectral(&spec))
        .collect::<Result<Vec<_>, _>>()?;
    let id = m.factors.iter().map(|f| f.id()).collect::<Vec<_>>().join(" x ");
    let test = ProductTest::new(id, factors);
    let partition = uniform_partition(s, t, m.partition_n)?;
    let report = fdd_estimate(&grid, &config.scaling, &partition, x0, &m.times, &test, m.paths, seed)?;

    let gaps = m
        .gap_n_list
        .iter()
        .map(|&n| {
            let p = uniform_partition(s, t, n)?;
            let r = fdd_reference(&grid, &config.scaling, &p, x0, &m.times, &test)?;
            Ok(GapRow {
                n,
                chain: r.chain,
                diffusion: r.diffusion,
                gap: r.diffusion.map(|b| (r.chain - b).abs()),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let gap_values: Option<Vec<f64>> = gaps.iter().map(|g| g.gap).collect();
    let gaps_decreasing = gap_values
        .filter(|g| g.len() >= 2)
        .map(|g| g.windows(2).all(|w| w[1] < w[0]));

    let opt = |x: Option<f64>| x.map_or_else(String::new, fmt_f64);
    let times = m.times.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(";");
    out.write_csv(
        "fdd.csv",
        &["seed", "paths", "times", "test_function", "mc_mean", "mc_stderr", "chain_reference", "diffusion_reference", "z_score"],
        &[vec![
            seed.to_string(),
            report.paths.to_string(),
            times,
            report.test_id.clone(),
            fmt_f64(report.mc_mean),
            fmt_f64(report.mc_stderr),
            fmt_f64(report.chain_reference),
            opt(report.diffusion_reference),
            fmt_f64(report.z_score),
        ]],
    )?;
    if !gaps.is_empty() {
        let rows: Vec<Vec<String>> = gaps
            .iter()
            .map(|g| vec![g.n.to_string(), fmt_f64(g.chain), opt(g.diffusion), opt(g.gap)])
            .collect();
        out.write_csv("gaps.csv", &["n", "chain", "diffusion", "gap"], &rows)?;
    }
    let summary = FddSummary {
        within_diffusion_band: report.within_diffusion_band(),
        report,
        gaps,
        gaps_decreasing,
    };
    out.write_json("fdd.json", &summary)?;

    out.check(
        "z_score",
        summary.report.z_score <= m.z_max,
        format!("z = {} <= {}", summary.report.z_score, m.z_max),
    );
    out.check(
        "diffusion_band",
        summary.within_diffusion_band,
        "|mc - diffusion| <= |chain - diffusion| + 3 stderr",
    );
    if let Some(decreasing) = gaps_decreasing {
        out.check("gaps_decreasing", decreasing, "chain-to-diffusion gap decreases with n");
    }
    Ok(())
}

#[derive(Serialize)]
struct DensitySummary {
    normalization: f64,
    normalization_error: f64,
    shell: chernoff_core::ShellTable,
    deviation_decreasing: bool,
}

fn density_check(config: &ExperimentConfig, d: &DensityCheckConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let grid = config.grid()?;
    let n = &d.normalization;
    let z = n.z.resolve(&grid, "experiment.normalization.z")?;
    let total = off_partition_normalization(
        &grid,
        &config.scaling,
        n.r,
        &z,
        n.tau,
        n.t_next,
        n.half_widths,
        n.nodes_per_axis,
    )?;
    let sh = &d.shell;
    let x = sh.x.resolve(&grid, "experiment.shell.x")?;
    let f = sh.test_function.on_grid(&grid);
    let table = shell_density_limit(&grid, &config.scaling, sh.s, &x, sh.t, &sh.eps_list, &f)?;

    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![fmt_f64(r.eps), fmt_f64(r.shell), fmt_f64(r.limit), fmt_f64(r.deviation)])
        .collect();
    out.write_csv("shell.csv", &["eps", "shell", "limit", "deviation"], &rows)?;
    let summary = DensitySummary {
        normalization: total,
        normalization_error: (total - 1.0).abs(),
        deviation_decreasing: table.deviation_decreasing(),
        shell: table,
    };
    out.write_json("density.json", &summary)?;

    out.check(
        "normalization",
        summary.normalization_error <= n.tolerance,
        format!("|integral - 1| = {} <= {}", summary.normalization_error, n.tolerance),
    );
    out.check("shell_monotone", summary.deviation_decreasing, "shell deviation decreases with eps");
    let last = summary.shell.rows.last().map_or(f64::NAN, |r| r.deviation);
    out.check(
        "shell_limit",
        last <= sh.max_final_deviation,
        format!("final deviation {last} <= {}", sh.max_final_deviation),
    );
    Ok(())
}
