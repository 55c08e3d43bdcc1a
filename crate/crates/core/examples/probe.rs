//! Scratch diagnostic: oracle fit-quality floor for the linear benchmark.
//!
//! Draws M particles from the EXACT smoothed optimal density (1D inverse-CDF
//! along the symmetry axis + isotropic perpendicular component), fits the
//! mixture, and measures the resulting IS estimator quality. This isolates
//! the fit/estimator floor from ensemble-convergence effects.
use aldi_is::estimator::{is_estimate, log_standard_normal};
use aldi_is::lsf::{create, CallLedger, Evaluator, RegistryConfig};
use aldi_is::sampler::{run_schedule, AldiConfig, Ensemble, LevelSchedule};
use aldi_is::smoothing::SmoothingConfig;
use aldi_is::vmfnm::{fit_em, log_pdf, sample};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

const BETA: f64 = 5.0;
const SIGMA: f64 = 0.05513288954217921;
const MU: f64 = 0.6789849362210306;

/// Inverse-CDF table for the x_u marginal of the smoothed optimal density:
/// density ∝ sigmoid((x - (BETA - MU)) / SIGMA) * exp(-x^2 / 2).
struct Marginal {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Marginal {
    fn build() -> Self {
        let lo = 2.0;
        let hi = 9.0;
        let n = 70_001usize;
        let h = (hi - lo) / (n - 1) as f64;
        let dens = |x: f64| {
            let s = (x - (BETA - MU)) / SIGMA;
            let sig = if s > 0.0 { 1.0 / (1.0 + (-s).exp()) } else { s.exp() / (1.0 + s.exp()) };
            sig * (-(x * x) / 2.0).exp()
        };
        let xs: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens(xs[i - 1]) + dens(xs[i]));
        }
        let total = cdf[n - 1];
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Marginal { xs, cdf }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c < u).min(self.xs.len() - 1).max(1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xs[i - 1] + t * (self.xs[i] - self.xs[i - 1])
    }
}

fn oracle_points<R: Rng + ?Sized>(
    marginal: &Marginal,
    u: &DVector<f64>,
    d: usize,
    m: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut pts = DMatrix::zeros(d, m);
    for j in 0..m {
        let xu = marginal.draw(rng);
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z_perp = &z - u * z.dot(u);
        pts.set_column(j, &(u * xu + z_perp));
    }
    pts
}

fn stats(tag: &str, rep: usize, pts: &DMatrix<f64>, u: &DVector<f64>) {
    let m = pts.ncols();
    let d = pts.nrows();
    let xu: Vec<f64> = (0..m).map(|j| pts.column(j).dot(u)).collect();
    let mean_xu = xu.iter().sum::<f64>() / m as f64;
    let sd_xu =
        (xu.iter().map(|v| (v - mean_xu) * (v - mean_xu)).sum::<f64>() / (m - 1) as f64).sqrt();
    let radii: Vec<f64> = (0..m).map(|j| pts.column(j).norm()).collect();
    let mean_r = radii.iter().sum::<f64>() / m as f64;
    let sd_r =
        (radii.iter().map(|v| (v - mean_r) * (v - mean_r)).sum::<f64>() / (m - 1) as f64).sqrt();
    // Mean per-coordinate variance of the component perpendicular to u.
    let mut perp_var = 0.0;
    let mut mean_pt = DVector::zeros(d);
    for j in 0..m {
        mean_pt += pts.column(j);
    }
    mean_pt /= m as f64;
    for j in 0..m {
        let c = pts.column(j) - &mean_pt;
        let c_perp = &c - u * c.dot(u);
        perp_var += c_perp.norm_squared();
    }
    perp_var /= ((m - 1) * (d - 1)) as f64;
    println!(
        "  [{tag} {rep}] x_u {mean_xu:.3} +- {sd_xu:.3}  r {mean_r:.2} +- {sd_r:.2}  perp var {perp_var:.3}"
    );
}

fn main() {
    let d = 100usize;
    let n_is = 2000usize;
    let reps = 200usize;
    let cfg = RegistryConfig { d, linear_threshold: BETA, ..Default::default() };
    let lsf = create("linear", &cfg).unwrap();
    let p_ref = 2.8665157188630015e-7;
    let u = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let marginal = Marginal::build();

    for &m in &[50usize, 100] {
        let mut rng = ChaCha12Rng::seed_from_u64(777 + m as u64);
        let mut estimates = Vec::with_capacity(reps);
        let mut kappas = Vec::new();
        let mut esses = Vec::new();
        for _ in 0..reps {
            let pts = oracle_points(&marginal, &u, d, m, &mut rng);
            let (model, _) = fit_em(&pts, 1, 500, 1e-6, &mut rng).unwrap();
            let samples = sample(&model, n_is, &mut rng).unwrap();
            let ledger = CallLedger::new();
            let ev = Evaluator::auto(lsf.as_ref(), &ledger);
            let rep = is_estimate(&samples, |x| log_pdf(x, &model), &ev).unwrap();
            estimates.push(rep.p_hat);
            esses.push(rep.weight_stats.effective_sample_size);
            let c = &model.components()[0];
            kappas.push((c.concentration(), c.shape(), c.spread()));
        }
        let nrmse = {
            let mse: f64 =
                estimates.iter().map(|p| (p - p_ref) * (p - p_ref)).sum::<f64>() / reps as f64;
            mse.sqrt() / p_ref
        };
        let mean: f64 = estimates.iter().sum::<f64>() / reps as f64;
        esses.sort_by(f64::total_cmp);
        kappas.sort_by(|a, b| a.0.total_cmp(&b.0));
        println!(
            "oracle M={m}: nRMSE {nrmse:.4}  mean {:.3e}  (ref {:.3e})",
            mean, p_ref
        );
        println!(
            "  ESS min/med/max = {:.0}/{:.0}/{:.0} of {n_is}",
            esses[0],
            esses[reps / 2],
            esses[reps - 1]
        );
        println!(
            "  kappa med {:.1}  shape med {:.1}  spread med {:.1}",
            kappas[reps / 2].0,
            kappas[reps / 2].1,
            kappas[reps / 2].2
        );
    }

    // Compare converged ALDI ensembles against oracle draws.
    let smoothing = SmoothingConfig::from_sigma_r(0.1).unwrap();
    let schedule = LevelSchedule::standard(0.01);
    let aldi = AldiConfig { k_min: 60, ..Default::default() };
    let mut rng = ChaCha12Rng::seed_from_u64(4242);
    println!("--- converged ALDI ensembles (k_min=60) vs oracle draws ---");
    for rep in 0..6 {
        let ledger = CallLedger::new();
        let ev = Evaluator::auto(lsf.as_ref(), &ledger);
        let init = Ensemble::standard_normal(d, 50, &mut rng).unwrap();
        let (ens, _diag) = run_schedule(init, &ev, &smoothing, &schedule, &aldi, &mut rng).unwrap();
        stats("aldi", rep, &ens.particles, &u);
        let pts = oracle_points(&marginal, &u, d, 50, &mut rng);
        stats("orac", rep, &pts, &u);
        let (model, _) = fit_em(&ens.particles, 1, 500, 1e-6, &mut rng).unwrap();
        let c = &model.components()[0];
        let samples = sample(&model, n_is, &mut rng).unwrap();
        let rp = is_estimate(&samples, |x| log_pdf(x, &model), &ev).unwrap();
        println!(
            "      aldi fit: kappa {:.1} shape {:.1} spread {:.1}  p_hat {:.2e} ess {:.0}",
            c.concentration(),
            c.shape(),
            c.spread(),
            rp.p_hat,
            rp.weight_stats.effective_sample_size
        );
    }

    // Sampler/density consistency: E_h[rho/h] must equal 1.
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let pts = oracle_points(&marginal, &u, d, 50, &mut rng);
    let (model, _) = fit_em(&pts, 1, 500, 1e-6, &mut rng).unwrap();
    let big = 200_000usize;
    let samples = sample(&model, big, &mut rng).unwrap();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for j in 0..big {
        let x = samples.column(j).into_owned();
        let w = (log_standard_normal(&x) - log_pdf(&x, &model).unwrap()).exp();
        sum += w;
        sum2 += w * w;
    }
    let mean = sum / big as f64;
    let sd = ((sum2 / big as f64 - mean * mean) / big as f64).sqrt();
    println!("consistency: E_h[rho/h] = {mean:.4} +- {sd:.4} (target 1)");
}
