//! One function per subcommand. Each returns the CSV table and the JSON
//! results; points are seeded by their index, so the output does not depend
//! on the worker count.

use pcm_core::chiral_mc::{cosh_mass, find_plateau, measure_correlator, simulate};
use pcm_core::concentration::{gaussianity_report, mean_vs_t0, variance_scaling_fit, MIN_GAUSSIANITY_SAMPLES};
use pcm_core::contour::{catalog_function, verify_rotation};
use pcm_core::gap::{dropped_term_ratio, solve_gap};
use pcm_core::lattice::propagator_kernel;
use pcm_core::orthogonal::{leading_moment, mc_moment};
use pcm_core::rng::stream;
use pcm_core::spectral::{t0_closed_form, variance_prediction};
use pcm_core::{
    ContourTestCase, Dispersion, EmpiricalMoments, LatticeSpec, MomentSpec, SamplingPoint, ScalingAxis,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{
    AxisConfig, ContourConfig, GapConfig, HaarMomentsConfig, PropagatorConfig, SamplingConfig, SimulateConfig,
    VarianceScalingConfig,
};
use crate::report::{Cell, Summary, Table};
use crate::CliError;

pub const HAAR_HEADERS: &[&str] = &["subcommand", "seed", "n", "moment", "samples", "estimate", "stderr", "leading", "z_score"];
pub const CONCENTRATION_HEADERS: &[&str] = &[
    "subcommand", "seed", "side", "volume", "n", "mu", "samples", "mean", "mean_stderr", "variance",
    "variance_stderr", "skewness", "excess_kurtosis", "t0", "variance_prediction",
];
pub const MEAN_CHECK_HEADERS: &[&str] = &[
    "subcommand", "seed", "side", "volume", "n", "mu", "samples", "mean", "mean_stderr", "t0", "gap",
    "gap_in_stderr", "relative_gap",
];
pub const VARIANCE_HEADERS: &[&str] = &[
    "subcommand", "seed", "axis", "side", "volume", "n", "mu", "samples", "variance", "variance_stderr",
];
pub const GAP_HEADERS: &[&str] = &[
    "subcommand", "seed", "side", "volume", "lambda", "m_numeric", "residual", "iterations", "asymptotic",
    "log_offset", "dropped_term_ratio",
];
pub const SIMULATE_HEADERS: &[&str] = &[
    "subcommand", "seed", "side", "n", "lambda", "r", "correlator", "correlator_error", "effective_mass",
];
pub const CONTOUR_HEADERS: &[&str] = &[
    "subcommand", "seed", "function", "radius", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "gap", "tail_bound",
    "quadrature_error",
];
pub const PROPAGATOR_HEADERS: &[&str] = &["subcommand", "seed", "side", "volume", "mass", "dx", "dy", "value"];

fn label(spec: &[[usize; 2]]) -> String {
    spec.iter().map(|p| format!("{}.{}", p[0], p[1])).collect::<Vec<_>>().join(" ")
}

pub fn haar_moments(cfg: &HaarMomentsConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let points: Vec<(usize, &Vec<[usize; 2]>)> = cfg
        .ns
        .iter()
        .flat_map(|&n| cfg.moments.iter().map(move |m| (n, m)))
        .collect();
    let estimates = points
        .par_iter()
        .enumerate()
        .map(|(i, &(n, m))| {
            let pairs: Vec<(usize, usize)> = m.iter().map(|p| (p[0], p[1])).collect();
            let spec = MomentSpec::from_pairs(&pairs)?;
            let est = mc_moment(n, &spec, cfg.samples, &mut stream(seed, i as u64, 0))?;
            Ok((est, leading_moment(n, &spec)?))
        })
        .collect::<Result<Vec<_>, pcm_core::Error>>()?;
    let mut table = Table::new(HAAR_HEADERS);
    let mut within = true;
    let mut trends = Vec::new();
    for (&(n, m), (est, lead)) in points.iter().zip(&estimates) {
        let z = (est.estimate - lead) / est.stderr;
        // Only the degree-2 moments are exact at leading order.
        if m.len() == 2 {
            within &= z.abs() < 4.0;
        }
        table.push(vec![
            "haar-moments".into(),
            seed.into(),
            n.into(),
            label(m).into(),
            cfg.samples.into(),
            est.estimate.into(),
            est.stderr.into(),
            (*lead).into(),
            z.into(),
        ])?;
    }
    for (k, m) in cfg.moments.iter().enumerate() {
        let rel: Vec<(f64, f64)> = (0..cfg.ns.len())
            .map(|i| estimates[i * cfg.moments.len() + k])
            .filter(|(_, lead)| *lead != 0.0)
            .map(|(e, lead)| ((e.estimate / lead - 1.0).abs(), e.stderr / lead.abs()))
            .collect();
        let decreasing = rel.windows(2).all(|w| w[1].0 <= w[0].0 + w[0].1 + w[1].1);
        trends.push(json!({ "moment": label(m), "relative_deviation": rel, "decreasing": decreasing }));
    }
    let all_decreasing = trends.iter().all(|t| t["decreasing"] == true);
    Ok((
        table,
        Summary {
            results: json!({ "trends": trends }),
            criteria: json!({
                "degree_two_within_4_stderr": within,
                "leading_order_deviation_decreasing": all_decreasing,
            }),
        },
    ))
}

fn sampling_point(cfg: &SamplingConfig, side: usize, n: usize, seed: u64, index: usize) -> Result<SamplingPoint, CliError> {
    Ok(SamplingPoint {
        lattice: LatticeSpec::new(side, cfg.volume)?,
        dispersion: cfg.dispersion.into(),
        mu: cfg.mu,
        spectrum: cfg.spectrum.build(n)?,
        samples: cfg.samples,
        seed,
        point: index as u64,
    })
}

fn sample_all(cfg: &SamplingConfig, seed: u64) -> Result<Vec<(SamplingPoint, EmpiricalMoments)>, CliError> {
    cfg.points()
        .into_iter()
        .enumerate()
        .map(|(i, (side, n))| {
            let p = sampling_point(cfg, side, n, seed, i)?;
            let em = EmpiricalMoments::from_samples(&p.t_samples()?)?;
            Ok((p, em))
        })
        .collect()
}

pub fn concentration(cfg: &SamplingConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let runs = sample_all(cfg, seed)?;
    let mut table = Table::new(CONCENTRATION_HEADERS);
    let mut gauss = Vec::new();
    for (p, em) in &runs {
        let (mean, ms) = (p.spectrum.mean(), p.spectrum.mean_square());
        table.push(vec![
            "concentration".into(),
            seed.into(),
            p.lattice.side().into(),
            cfg.volume.into(),
            p.spectrum.len().into(),
            cfg.mu.into(),
            cfg.samples.into(),
            em.mean.into(),
            em.mean_stderr.into(),
            em.variance.into(),
            em.variance_stderr.into(),
            em.skewness.into(),
            em.excess_kurtosis.into(),
            t0_closed_form(&p.lattice, p.dispersion, p.mu, mean)?.into(),
            variance_prediction(&p.lattice, p.spectrum.len(), mean, ms).into(),
        ])?;
        if em.sample_count >= MIN_GAUSSIANITY_SAMPLES {
            gauss.push(gaussianity_report(em)?);
        }
    }
    let criteria = if gauss.is_empty() {
        json!({})
    } else {
        json!({ "gaussian_shape": gauss.iter().all(|g| g.both_small) })
    };
    Ok((
        table,
        Summary {
            results: json!({ "gaussianity": gauss }),
            criteria,
        },
    ))
}

pub fn mean_check(cfg: &SamplingConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let runs = sample_all(cfg, seed)?;
    let mut table = Table::new(MEAN_CHECK_HEADERS);
    let mut by_side: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    for (p, em) in &runs {
        let g = mean_vs_t0(em, &p.lattice, p.dispersion, p.mu, p.spectrum.mean())?;
        let t0 = t0_closed_form(&p.lattice, p.dispersion, p.mu, p.spectrum.mean())?;
        table.push(vec![
            "mean-check".into(),
            seed.into(),
            p.lattice.side().into(),
            cfg.volume.into(),
            p.spectrum.len().into(),
            cfg.mu.into(),
            cfg.samples.into(),
            em.mean.into(),
            em.mean_stderr.into(),
            t0.into(),
            g.gap.into(),
            g.gap_in_stderr.into(),
            g.relative_gap.into(),
        ])?;
        match by_side.last_mut() {
            Some((s, z, rel)) if *s == p.lattice.side() => {
                z.push(g.gap_in_stderr);
                *rel = g.relative_gap;
            }
            _ => by_side.push((p.lattice.side(), vec![g.gap_in_stderr], g.relative_gap)),
        }
    }
    let decreasing = by_side.iter().all(|(_, z, _)| z.windows(2).all(|w| w[1] < w[0]));
    let relative = by_side.iter().all(|(_, _, rel)| *rel < 0.02);
    Ok((
        table,
        Summary {
            results: json!({}),
            criteria: json!({
                "gap_in_stderr_decreasing_in_n": decreasing,
                "relative_gap_below_2_percent_at_largest_n": relative,
            }),
        },
    ))
}

pub fn variance_scaling(cfg: &VarianceScalingConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let sampling = cfg.sampling();
    let runs = sample_all(&sampling, seed)?;
    let axis = match cfg.axis {
        AxisConfig::N => ScalingAxis::N,
        AxisConfig::Side => ScalingAxis::Side,
    };
    let mut table = Table::new(VARIANCE_HEADERS);
    let mut fit_input = Vec::new();
    for (p, em) in &runs {
        let x = match axis {
            ScalingAxis::N => p.spectrum.len(),
            ScalingAxis::Side => p.lattice.side(),
        };
        fit_input.push((x as f64, *em));
        table.push(vec![
            "variance-scaling".into(),
            seed.into(),
            Cell::Text(match axis {
                ScalingAxis::N => "n".into(),
                ScalingAxis::Side => "side".into(),
            }),
            p.lattice.side().into(),
            cfg.volume.into(),
            p.spectrum.len().into(),
            cfg.mu.into(),
            cfg.samples.into(),
            em.variance.into(),
            em.variance_stderr.into(),
        ])?;
    }
    let fit = variance_scaling_fit(&fit_input, axis)?;
    let target = axis.target_exponent();
    let in_window = (fit.exponent - target).abs() <= 0.15 * target.abs();
    Ok((
        table,
        Summary {
            results: json!({
                "exponent": fit.exponent,
                "exponent_stderr": fit.exponent_stderr,
                "intercept": fit.intercept,
                "target_exponent": target,
            }),
            criteria: json!({ "exponent_within_15_percent_of_target": in_window }),
        },
    ))
}

pub fn gap(cfg: &GapConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let spectrum = cfg.spectrum.build(cfg.n)?;
    let dispersion: Dispersion = cfg.dispersion.into();
    let mut table = Table::new(GAP_HEADERS);
    let mut per_side = Vec::new();
    let (mut residual_ok, mut monotone, mut bounded, mut dropped_ok) = (true, true, true, true);
    for &side in &cfg.sides {
        let lattice = LatticeSpec::new(side, cfg.volume)?;
        let sols = cfg
            .lambdas
            .iter()
            .map(|&l| solve_gap(&lattice, dispersion, l))
            .collect::<pcm_core::Result<Vec<_>>>()?;
        let mut offsets = Vec::new();
        for s in &sols {
            let ratio = dropped_term_ratio(&lattice, cfg.n, spectrum.mean(), spectrum.mean_square(), s.lambda);
            if side >= 16 {
                dropped_ok &= ratio < 1e-3;
            }
            residual_ok &= s.residual.abs() < 1e-12 * (0.5 / s.lambda);
            offsets.push(s.log_offset());
            table.push(vec![
                "gap".into(),
                seed.into(),
                side.into(),
                cfg.volume.into(),
                s.lambda.into(),
                s.m.into(),
                s.residual.into(),
                s.iterations.into(),
                s.asymptotic_value.into(),
                s.log_offset().into(),
                ratio.into(),
            ])?;
        }
        let mut order: Vec<usize> = (0..sols.len()).collect();
        order.sort_by(|&a, &b| sols[a].lambda.total_cmp(&sols[b].lambda));
        monotone &= order.windows(2).all(|w| sols[w[1]].m > sols[w[0]].m);
        let spread = offsets.iter().cloned().fold(f64::MIN, f64::max) - offsets.iter().cloned().fold(f64::MAX, f64::min);
        bounded &= spread < 1.5;
        per_side.push(json!({ "side": side, "log_offsets": offsets, "log_offset_spread": spread }));
    }
    Ok((
        table,
        Summary {
            results: json!({ "sides": per_side }),
            criteria: json!({
                "residual_below_tolerance": residual_ok,
                "mass_monotone_in_lambda": monotone,
                "log_offset_spread_below_1_5": bounded,
                "dropped_term_below_1e-3": dropped_ok,
            }),
        },
    ))
}

pub fn simulate_campaign(cfg: &SimulateConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let mut table = Table::new(SIMULATE_HEADERS);
    let mut results = Vec::new();
    let mut masses = Vec::new();
    let (mut decorrelated, mut shape, mut plateaus) = (true, true, true);
    for &lambda in &cfg.lambdas {
        let ens = simulate(&cfg.params(lambda, seed))?;
        let corr = measure_correlator(&ens)?;
        let nt = corr.nt;
        for r in 0..=nt / 2 {
            let m = if r < nt / 2 {
                cosh_mass(corr.values[r], corr.values[r + 1], r, nt)
            } else {
                f64::NAN
            };
            // Undefined effective masses are written as empty fields.
            let m = if m.is_finite() { Cell::Float(m) } else { Cell::Text(String::new()) };
            table.push(vec![
                "simulate".into(),
                seed.into(),
                cfg.side.into(),
                cfg.n.into(),
                lambda.into(),
                r.into(),
                corr.values[r].into(),
                corr.errors[r].into(),
                m,
            ])?;
        }
        decorrelated &= corr.effective_measurements >= 200.0;
        let last = (nt / 2).min(8);
        let positive = (1..=last).all(|r| corr.values[r] > -2.0 * corr.errors[r]);
        let decreasing = (1..last).all(|r| {
            let d: Vec<f64> = corr.jackknife.iter().map(|c| c[r] - c[r + 1]).collect();
            corr.values[r] - corr.values[r + 1] > -2.0 * pcm_core::stats::jackknife_error(&d)
        });
        shape &= positive && decreasing;
        let plateau = find_plateau(&corr, cfg.r_min, cfg.min_points, cfg.min_p_value);
        plateaus &= plateau.is_ok();
        let acceptance = ens.iter().map(|e| e.acceptance).sum::<f64>() / ens.len() as f64;
        let fit = match &plateau {
            Ok(m) => {
                masses.push((lambda, m.plateau, m.plateau_error));
                json!({ "mass": m.plateau, "mass_error": m.plateau_error, "window": m.window, "chi2_per_dof": m.chi2_per_dof, "p_value": m.p_value })
            }
            Err(e) => json!({ "error": e.to_string() }),
        };
        results.push(json!({
            "lambda": lambda,
            "tau_int": corr.tau_int,
            "measurements": corr.measurements,
            "effective_measurements": corr.effective_measurements,
            "acceptance": acceptance,
            "epsilon": ens.iter().map(|e| e.epsilon).collect::<Vec<_>>(),
            "max_orthogonality_defect": ens.iter().map(|e| e.max_defect).fold(0.0, f64::max),
            "plateau": fit,
        }));
    }
    masses.sort_by(|a, b| a.0.total_cmp(&b.0));
    let increasing = plateaus && masses.windows(2).all(|w| w[1].1 - w[1].2 > w[0].1 + w[0].2);
    Ok((
        table,
        Summary {
            results: json!({ "points": results }),
            criteria: json!({
                "at_least_200_decorrelated": decorrelated,
                "correlator_positive_and_decreasing": shape,
                "plateau_found": plateaus,
                "mass_increasing_in_lambda": increasing,
            }),
        },
    ))
}

pub fn contour_check(cfg: &ContourConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let mut table = Table::new(CONTOUR_HEADERS);
    let mut worst: f64 = 0.0;
    let mut closed_form = None;
    let checks = cfg
        .functions
        .par_iter()
        .map(|name| {
            let case = ContourTestCase::new(catalog_function(name)?)
                .with_radius(cfg.radius)
                .with_tolerance(cfg.tolerance);
            verify_rotation(&case)
        })
        .collect::<pcm_core::Result<Vec<_>>>()?;
    for (name, r) in cfg.functions.iter().zip(&checks) {
        worst = worst.max(r.gap);
        if name == "inv_sq_i" {
            let err = r.lhs_re.hypot(r.lhs_im + 1.0).max(r.rhs_re.hypot(r.rhs_im + 1.0));
            closed_form = Some(err);
        }
        table.push(vec![
            "contour-check".into(),
            seed.into(),
            name.as_str().into(),
            cfg.radius.into(),
            r.lhs_re.into(),
            r.lhs_im.into(),
            r.rhs_re.into(),
            r.rhs_im.into(),
            r.gap.into(),
            r.tail_bound.into(),
            r.quadrature_error.into(),
        ])?;
    }
    let mut criteria = json!({ "gap_below_1e-6": worst < 1e-6 });
    if let Some(e) = closed_form {
        criteria["closed_form_within_1e-8"] = json!(e < 1e-8);
    }
    Ok((
        table,
        Summary {
            results: json!({ "max_gap": worst, "closed_form_error": closed_form }),
            criteria,
        },
    ))
}

pub fn propagator(cfg: &PropagatorConfig, seed: u64) -> Result<(Table, Summary), CliError> {
    let lattice = LatticeSpec::new(cfg.side, cfg.volume)?;
    let mut table = Table::new(PROPAGATOR_HEADERS);
    let mut symmetric = true;
    let mut positive = true;
    for &m in &cfg.masses {
        let g = propagator_kernel(&lattice, cfg.dispersion.into(), m)?;
        for dx in 0..cfg.side {
            for dy in 0..cfg.side {
                let v = g.at([0, 0], [dx, dy]);
                let mirror = g.at([dx, dy], [0, 0]);
                symmetric &= (v - mirror).abs() <= 1e-12 * v.abs().max(1e-300);
                positive &= v > 0.0;
                table.push(vec![
                    "propagator".into(),
                    seed.into(),
                    cfg.side.into(),
                    cfg.volume.into(),
                    m.into(),
                    dx.into(),
                    dy.into(),
                    v.into(),
                ])?;
            }
        }
    }
    Ok((
        table,
        Summary {
            results: json!({}),
            criteria: json!({ "symmetric": symmetric, "positive": positive }),
        },
    ))
}
