//! Acceptance criteria 1–10. Each test prints one `criterion N: PASS|FAIL`
//! line and then asserts. Tests share a lock so the reported runtimes are not
//! inflated by each other.

use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DMatrix;
use pcm_core::chiral_mc::{find_plateau, measure_correlator, simulate, McParams};
use pcm_core::concentration::{mean_vs_t0, variance_scaling_fit, SamplingPoint};
use pcm_core::contour::{catalog, verify_rotation};
use pcm_core::gap::{dropped_term_ratio, solve_gap};
use pcm_core::lattice::build_lattice;
use pcm_core::orthogonal::mc_moment;
use pcm_core::rng::stream;
use pcm_core::spectral::{averaged_j_prediction, lipschitz_ratio, SourceField};
use pcm_core::stats::jackknife_error;
use pcm_core::{
    ContourTestCase, Dispersion, EmpiricalMoments, MomentSpec, MultiplierField, ScalingAxis, SpectrumEnsemble,
};

static SERIAL: Mutex<()> = Mutex::new(());

const SEED: u64 = 20_240_501;

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, pass: bool, detail: String) {
    println!("criterion {criterion}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn two_point_point(side: usize, n: usize, samples: usize, point: u64) -> SamplingPoint {
    SamplingPoint {
        lattice: build_lattice(side, 1.0).unwrap(),
        dispersion: Dispersion::Continuum,
        mu: 1.0,
        spectrum: SpectrumEnsemble::two_point(n, 0.0, 1.0).unwrap(),
        samples,
        seed: SEED,
        point,
    }
}

#[test]
fn criterion_01_weingarten_k1() {
    let _g = serial();
    let clock = Instant::now();
    let mut rng = stream(SEED, 100, 0);
    let diag = mc_moment(4, &MomentSpec::from_pairs(&[(1, 2), (1, 2)]).unwrap(), 200_000, &mut rng).unwrap();
    let off = mc_moment(4, &MomentSpec::from_pairs(&[(1, 2), (3, 4)]).unwrap(), 200_000, &mut rng).unwrap();
    let z_diag = (diag.estimate - 0.25) / diag.stderr;
    let z_off = off.estimate / off.stderr;
    let secs = clock.elapsed().as_secs_f64();
    report(
        1,
        z_diag.abs() < 4.0 && z_off.abs() < 4.0 && secs < 60.0,
        format!(
            "E[O12 O12] = {:.5} ± {:.5} ({z_diag:+.2}σ), E[O12 O34] = {:.5} ± {:.5} ({z_off:+.2}σ), {secs:.1}s",
            diag.estimate, diag.stderr, off.estimate, off.stderr
        ),
    );
}

#[test]
fn criterion_02_weingarten_k2() {
    let _g = serial();
    let clock = Instant::now();
    let spec = MomentSpec::from_pairs(&[(1, 1), (1, 1), (2, 2), (2, 2)]).unwrap();
    let mut devs = Vec::new();
    for (i, n) in [8usize, 16, 32, 64].into_iter().enumerate() {
        let mut rng = stream(SEED, 200 + i as u64, 0);
        let est = mc_moment(n, &spec, 1_000_000, &mut rng).unwrap();
        let n2 = (n * n) as f64;
        devs.push((n, (n2 * est.estimate - 1.0).abs(), n2 * est.stderr));
    }
    let monotone = devs.windows(2).all(|w| w[1].1 <= w[0].1 + w[0].2 + w[1].2);
    let secs = clock.elapsed().as_secs_f64();
    let table: Vec<String> = devs.iter().map(|(n, d, e)| format!("N={n}: {d:.2e}±{e:.1e}")).collect();
    report(2, monotone && secs < 600.0, format!("|N²E − 1| {}, {secs:.1}s", table.join(", ")));
}

#[test]
fn criterion_03_mean_concentration() {
    let _g = serial();
    let clock = Instant::now();
    let mut rows = Vec::new();
    for (i, n) in [8usize, 32, 64].into_iter().enumerate() {
        let p = two_point_point(8, n, 400, 300 + i as u64);
        let em = EmpiricalMoments::from_samples(&p.t_samples().unwrap()).unwrap();
        let g = mean_vs_t0(&em, &p.lattice, p.dispersion, p.mu, p.spectrum.mean()).unwrap();
        rows.push((n, g));
    }
    let decreasing = rows.windows(2).all(|w| w[1].1.gap_in_stderr < w[0].1.gap_in_stderr);
    let relative = rows.last().unwrap().1.relative_gap;
    let secs = clock.elapsed().as_secs_f64();
    let table: Vec<String> = rows
        .iter()
        .map(|(n, g)| format!("N={n}: gap {:.3e} = {:.1} se", g.gap, g.gap_in_stderr))
        .collect();
    report(
        3,
        decreasing && relative < 0.02 && secs < 900.0,
        format!(
            "{}; se-gap decreasing: {decreasing}; relative gap at N=64 {relative:.2e}; {secs:.1}s",
            table.join(", ")
        ),
    );
}

#[test]
fn criterion_04_variance_scaling() {
    let _g = serial();
    let clock = Instant::now();
    let by_n: Vec<_> = [8usize, 16, 32, 64]
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let p = two_point_point(8, n, 400, 400 + i as u64);
            (n as f64, EmpiricalMoments::from_samples(&p.t_samples().unwrap()).unwrap())
        })
        .collect();
    let by_side: Vec<_> = [4usize, 6, 8, 12]
        .into_iter()
        .enumerate()
        .map(|(i, side)| {
            let p = two_point_point(side, 32, 400, 410 + i as u64);
            (side as f64, EmpiricalMoments::from_samples(&p.t_samples().unwrap()).unwrap())
        })
        .collect();
    let fit_n = variance_scaling_fit(&by_n, ScalingAxis::N).unwrap();
    let fit_side = variance_scaling_fit(&by_side, ScalingAxis::Side).unwrap();
    let ok_n = (-2.3..=-1.7).contains(&fit_n.exponent);
    let ok_side = (-4.6..=-3.4).contains(&fit_side.exponent);
    let secs = clock.elapsed().as_secs_f64();
    report(
        4,
        ok_n && ok_side && secs < 1800.0,
        format!(
            "exponent vs N {:.3} ± {:.3}, vs side {:.3} ± {:.3}, {secs:.1}s",
            fit_n.exponent, fit_n.exponent_stderr, fit_side.exponent, fit_side.exponent_stderr
        ),
    );
}

#[test]
fn criterion_05_j_average() {
    let _g = serial();
    let clock = Instant::now();
    let mut gaps = Vec::new();
    for (i, n) in [32usize, 64].into_iter().enumerate() {
        let p = two_point_point(8, n, 200, 500 + i as u64);
        let j = SourceField::random_normal(&p.lattice, n, &mut stream(SEED, 510 + i as u64, 0));
        let em = EmpiricalMoments::from_samples(&p.j_samples(&j).unwrap()).unwrap();
        let pred = averaged_j_prediction(&p.lattice, p.dispersion, p.mu, p.spectrum.mean(), &j).unwrap();
        gaps.push((n, (em.mean - pred).abs(), em.mean_stderr, pred));
    }
    let ratio = gaps[1].1 / gaps[0].1;
    let secs = clock.elapsed().as_secs_f64();
    let table: Vec<String> = gaps
        .iter()
        .map(|(n, g, e, p)| format!("N={n}: gap {g:.4e} (se {e:.1e}, prediction {p:.4e})"))
        .collect();
    report(
        5,
        ratio < 0.7 && secs < 600.0,
        format!("{}; ratio {ratio:.3}; {secs:.1}s", table.join(", ")),
    );
}

/// `(I − εA)⁻¹(I + εA)` for a random antisymmetric `A`.
fn small_rotation(n: usize, eps: f64, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(rand_distr::StandardNormal));
    let a = (&g - g.transpose()) * (0.5 * eps);
    let id = DMatrix::<f64>::identity(n, n);
    (&id - &a).lu().solve(&(&id + &a)).unwrap()
}

#[test]
fn criterion_06_lipschitz() {
    let _g = serial();
    let clock = Instant::now();
    let lattice = build_lattice(4, 1.0).unwrap();
    let spectrum = SpectrumEnsemble::two_point(8, 0.0, 1.0).unwrap();
    let j = SourceField::random_normal(&lattice, 8, &mut stream(SEED, 600, 0));
    let mut worst: Option<pcm_core::spectral::LipschitzCheck> = None;
    let mut violations = 0;
    for pair in 0..500u64 {
        let mut rng = stream(SEED, 601, pair);
        let a = MultiplierField::haar(lattice, spectrum.clone(), &mut rng);
        // Alternate between independent pairs and nearby pairs, where the
        // difference ratio approaches the local derivative.
        let b = if pair % 2 == 0 {
            MultiplierField::haar(lattice, spectrum.clone(), &mut rng)
        } else {
            let eps = 10f64.powi(-((pair % 7) as i32) - 1);
            a.map_rotations(|_, o| small_rotation(8, eps, &mut rng) * o.matrix()).unwrap()
        };
        let c = lipschitz_ratio(Dispersion::Continuum, 1.0, &j, &a, &b).unwrap();
        if !c.holds() {
            violations += 1;
        }
        if worst.as_ref().is_none_or(|w| c.ratio / c.bound > w.ratio / w.bound) {
            worst = Some(c);
        }
    }
    let w = worst.unwrap();
    let secs = clock.elapsed().as_secs_f64();
    report(
        6,
        violations == 0 && secs < 300.0,
        format!(
            "max ratio {:.4e} vs bound {:.4e} ({violations} violations in 500 pairs), {secs:.1}s",
            w.ratio, w.bound
        ),
    );
}

#[test]
fn criterion_07_gap_equation() {
    let _g = serial();
    let clock = Instant::now();
    let lattice = build_lattice(64, 1.0).unwrap();
    let sols: Vec<_> = [1.0, 2.0, 3.0, 4.0]
        .into_iter()
        .map(|l| solve_gap(&lattice, Dispersion::Continuum, l).unwrap())
        .collect();
    let residual_ok = sols.iter().all(|s| s.residual < 1e-12 * (0.5 / s.lambda));
    let monotone = sols.windows(2).all(|w| w[1].m > w[0].m);
    let offsets: Vec<f64> = sols.iter().map(|s| s.log_offset()).collect();
    let spread = offsets.iter().cloned().fold(f64::MIN, f64::max) - offsets.iter().cloned().fold(f64::MAX, f64::min);
    let secs = clock.elapsed().as_secs_f64();
    let ms: Vec<String> = sols.iter().map(|s| format!("{:.6e}", s.m)).collect();
    let offs: Vec<String> = offsets.iter().map(|o| format!("{o:.3}")).collect();
    report(
        7,
        residual_ok && monotone && spread < 1.5 && secs < 60.0,
        format!(
            "m = [{}], residuals ok: {residual_ok}, monotone: {monotone}, log offsets [{}], spread {spread:.3}, {secs:.2}s",
            ms.join(", "),
            offs.join(", ")
        ),
    );
}

#[test]
fn criterion_08_contour_rotation() {
    let _g = serial();
    let clock = Instant::now();
    let mut worst = 0.0f64;
    let mut closed_form_err = f64::INFINITY;
    for f in catalog() {
        let name = f.name.clone();
        let r = verify_rotation(&ContourTestCase::new(f)).unwrap();
        worst = worst.max(r.gap);
        if name == "inv_sq_i" {
            closed_form_err = (r.lhs() - num_complex::Complex64::new(0.0, -1.0))
                .norm()
                .max((r.rhs() - num_complex::Complex64::new(0.0, -1.0)).norm());
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        8,
        worst < 1e-6 && closed_form_err < 1e-8 && secs < 60.0,
        format!("max gap {worst:.3e}, |value − (−i)| {closed_form_err:.3e}, {secs:.2}s"),
    );
}

#[test]
fn criterion_09_free_massive_trend() {
    let _g = serial();
    let clock = Instant::now();
    let mut masses = Vec::new();
    let mut notes = Vec::new();
    let mut ok = true;
    for lambda in [1.0, 2.0, 3.0] {
        let params = McParams {
            thermalization: 2000,
            measurements: 3000,
            interval: 20,
            ..McParams::square(16, 8, lambda, SEED)
        };
        let corr = measure_correlator(&simulate(&params).unwrap()).unwrap();
        let decorrelated = corr.effective_measurements >= 200.0;
        let positive = (1..=8).all(|r| corr.values[r] > -2.0 * corr.errors[r]);
        let decreasing = (1..8).all(|r| {
            let diffs: Vec<f64> = corr.jackknife.iter().map(|c| c[r] - c[r + 1]).collect();
            corr.values[r] - corr.values[r + 1] > -2.0 * jackknife_error(&diffs)
        });
        let plateau = find_plateau(&corr, 1, 3, 0.05);
        let plateau_ok = plateau.is_ok();
        ok &= decorrelated && positive && decreasing && plateau_ok;
        match plateau {
            Ok(m) => {
                notes.push(format!(
                    "λ={lambda}: m {:.4} ± {:.4} on {:?} (χ²/dof {:.2}, p {:.2}), {:.0} eff. meas.",
                    m.plateau, m.plateau_error, m.window, m.chi2_per_dof, m.p_value, corr.effective_measurements
                ));
                masses.push((m.plateau, m.plateau_error));
            }
            Err(e) => notes.push(format!("λ={lambda}: no plateau ({e})")),
        }
        if !(positive && decreasing) {
            notes.push(format!("λ={lambda}: positive {positive}, decreasing {decreasing}"));
        }
    }
    let increasing = masses.len() == 3 && masses.windows(2).all(|w| w[1].0 - w[1].1 > w[0].0 + w[0].1);
    let secs = clock.elapsed().as_secs_f64();
    report(
        9,
        ok && increasing && secs < 900.0,
        format!("{}; masses increasing: {increasing}; {secs:.0}s", notes.join("; ")),
    );
}

#[test]
fn criterion_10_dropped_term() {
    let _g = serial();
    let spectrum = SpectrumEnsemble::two_point(32, 0.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for side in [16usize, 32, 64] {
        let lattice = build_lattice(side, 1.0).unwrap();
        for lambda in [1.0, 2.0, 3.0, 4.0] {
            solve_gap(&lattice, Dispersion::Continuum, lambda).unwrap();
            let r = dropped_term_ratio(&lattice, 32, spectrum.mean(), spectrum.mean_square(), lambda);
            worst = worst.max(r);
        }
    }
    report(10, worst < 1e-3, format!("max ratio over sides 16, 32, 64 and λ = 1..4: {worst:.3e}"));
}
