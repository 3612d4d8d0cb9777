//! Scenario generators for the simulation priors, the replication engine
//! for coverage/length tables, distance metrics (TV, weighted TV,
//! Hellinger), the rate-slope experiment, and prediction scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{build_rule, empirical_coverage_and_length, garwood_interval};
use crate::error::{Error, Result};
use crate::mixture::{CountSample, GammaMixtureModel, MixingMeasure};
use crate::npmle::{fit_npmle, SolverConfig};
use crate::quad;
use crate::rng::{sample_gamma, sample_inverse_gaussian, sample_lognormal, sample_poisson, Rng};
use crate::shape::{estimate_kappa, resolve_eta, KappaConfig};

/// Monte-Carlo draws used to calibrate each replication's threshold.
pub const THRESHOLD_MC_DRAWS: usize = 200_000;

/// Data-generating prior of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSpec {
    /// Components are (weight, shape, rate).
    GammaMixture { components: Vec<(f64, f64, f64)> },
    Lognormal { mu: f64, sigma: f64 },
    /// Components are (weight, mu, lam), with mean mu.
    IgMixture { components: Vec<(f64, f64, f64)> },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::GammaMixture { components } | PriorSpec::IgMixture { components } => {
                if components.is_empty() {
                    return Err(Error::domain("prior needs at least one component"));
                }
                let total: f64 = components.iter().map(|c| c.0).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::domain(format!(
                        "component weights must sum to 1, got {total}"
                    )));
                }
                if components.iter().any(|c| c.0 < 0.0 || c.1 <= 0.0 || c.2 <= 0.0) {
                    return Err(Error::domain(
                        "component weights must be >= 0 and parameters > 0",
                    ));
                }
                Ok(())
            }
            PriorSpec::Lognormal { mu, sigma } => {
                if !mu.is_finite() || !(*sigma > 0.0) {
                    return Err(Error::domain(format!(
                        "lognormal prior needs finite mu and sigma > 0, got ({mu}, {sigma})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// One latent mean draw.
    pub fn sample_theta(&self, rng: &mut Rng) -> Result<f64> {
        match self {
            PriorSpec::GammaMixture { components } => {
                let (shape, rate) = pick_component(components, rng);
                sample_gamma(shape, rate, rng)
            }
            PriorSpec::Lognormal { mu, sigma } => sample_lognormal(*mu, *sigma, rng),
            PriorSpec::IgMixture { components } => {
                let (mu, lam) = pick_component(components, rng);
                sample_inverse_gaussian(mu, lam, rng)
            }
        }
    }

    /// The exact mixture-model representation, available when every Gamma
    /// component shares one shape (the mixing measure is then discrete
    /// over the component rates).
    pub fn as_gamma_mixture_model(&self) -> Option<GammaMixtureModel> {
        let PriorSpec::GammaMixture { components } = self else {
            return None;
        };
        let shape = components[0].1;
        if components.iter().any(|c| c.1 != shape) {
            return None;
        }
        let mut pairs: Vec<(f64, f64)> =
            components.iter().map(|&(w, _, rate)| (rate, w)).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // merge duplicate rates
        let mut atoms: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (rate, w) in pairs {
            if atoms.last() == Some(&rate) {
                *weights.last_mut().unwrap() += w;
            } else {
                atoms.push(rate);
                weights.push(w);
            }
        }
        let mixing = MixingMeasure::new(atoms, weights, 0.0).ok()?;
        GammaMixtureModel::new(shape, mixing).ok()
    }
}

fn pick_component(components: &[(f64, f64, f64)], rng: &mut Rng) -> (f64, f64) {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for &(w, a, b) in components {
        acc += w;
        if u < acc {
            return (a, b);
        }
    }
    let last = components[components.len() - 1];
    (last.1, last.2)
}

/// How each replication resolves the Gamma shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaRule {
    Fixed(f64),
    Neighborhood(KappaConfig),
}

/// Declarative simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub prior: PriorSpec,
    pub n: usize,
    pub beta: f64,
    pub reps: usize,
    pub kappa_rule: KappaRule,
    pub base_seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.n == 0 || self.reps == 0 {
            return Err(Error::domain("n and reps must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::domain(format!(
                "beta must lie in (0,1), got {}",
                self.beta
            )));
        }
        if let KappaRule::Fixed(k) = self.kappa_rule {
            if !(k > 0.0) {
                return Err(Error::domain(format!("fixed kappa must be > 0, got {k}")));
            }
        }
        Ok(())
    }
}

/// Per-replication metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep_id: usize,
    pub coverage_opt: f64,
    pub length_opt: f64,
    pub coverage_garwood: f64,
    pub length_garwood: f64,
    pub kappa_hat: f64,
    pub hellinger_sq: Option<f64>,
    pub tv_prior: Option<f64>,
}

// Stream offsets within a replication (stream_id = rep_id * STRIDE + offset).
const STREAM_STRIDE: u64 = 4;
const STREAM_DATA: u64 = 0;
const STREAM_THRESHOLD: u64 = 1;
const STREAM_CV: u64 = 2;

/// Draws latent means from the scenario prior and Poisson counts from
/// them.
pub fn sample_scenario(spec: &ScenarioSpec, rng: &mut Rng) -> Result<(Vec<f64>, CountSample)> {
    spec.prior.validate()?;
    let mut thetas = Vec::with_capacity(spec.n);
    let mut counts = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let theta = spec.prior.sample_theta(rng)?;
        counts.push(sample_poisson(theta, rng)?);
        thetas.push(theta);
    }
    Ok((thetas, CountSample::new(counts)?))
}

/// Total variation distance between the prior measures of two models:
/// half the integrated density difference plus half the difference of the
/// atom masses at zero (mass at infinity of the mixing measures).
pub fn tv_prior(model1: &GammaMixtureModel, model2: &GammaMixtureModel) -> Result<f64> {
    let atom_term =
        0.5 * (model1.mixing().mass_at_infinity() - model2.mixing().mass_at_infinity()).abs();
    if model1.mixing().atoms().is_empty() && model2.mixing().atoms().is_empty() {
        return Ok(atom_term);
    }
    let theta_max = model1
        .prior_tail_quantile(1e-9)?
        .max(model2.prior_tail_quantile(1e-9)?);
    let mut points = vec![0.0];
    for model in [model1, model2] {
        for &lam in model.mixing().atoms() {
            // component scale and mean mark where each Gamma bump lives
            for scale in [1.0 / lam, model.kappa() / lam] {
                if scale < theta_max {
                    points.push(scale);
                }
            }
        }
    }
    points.push(theta_max);
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    let g = |model: &GammaMixtureModel, t: f64| -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            model.prior_log_density(t).map(f64::exp).unwrap_or(0.0)
        }
    };
    let integral = quad::integrate_segments(
        |t| (g(model1, t) - g(model2, t)).abs(),
        &points,
        1e-5,
    )?;
    Ok(atom_term + 0.5 * integral)
}

/// Weighted total variation between posterior families: per-count
/// posterior TV weighted by the reference model's marginal pmf.
pub fn wtv(model_hat: &GammaMixtureModel, model_true: &GammaMixtureModel) -> Result<f64> {
    for m in [model_hat, model_true] {
        if m.mixing().mass_at_infinity() > 0.0 {
            return Err(Error::precondition(
                "weighted TV requires mixing measures without mass at infinity",
            ));
        }
    }
    let x_max = model_true.tail_cutoff(1e-12)?;
    let per_x_tol = 1e-5;
    let mut total = 0.0;
    for x in 0..=x_max {
        let fx = model_true.marginal_pmf(x);
        if fx <= 0.0 {
            continue;
        }
        let shape = f64::from(x);
        let hi_hat = crate::special::gamma_quantile(
            1.0 - 1e-9,
            shape + model_hat.kappa(),
            model_hat.lambda_min().unwrap() + 1.0,
        )?;
        let hi_true = crate::special::gamma_quantile(
            1.0 - 1e-9,
            shape + model_true.kappa(),
            model_true.lambda_min().unwrap() + 1.0,
        )?;
        let hi = hi_hat.max(hi_true);
        let diff = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            let a = model_hat
                .posterior_log_density(t, x)
                .map(f64::exp)
                .unwrap_or(0.0);
            let b = model_true
                .posterior_log_density(t, x)
                .map(f64::exp)
                .unwrap_or(0.0);
            (a - b).abs()
        };
        total += 0.5 * fx * quad::integrate(diff, 0.0, hi, per_x_tol)?;
    }
    Ok(total)
}

/// Squared Hellinger distance between two pmfs on the nonnegative
/// integers, summed until both cdfs are within 1e-12 of one.
pub fn hellinger_sq<F1, F2>(f1: F1, f2: F2) -> f64
where
    F1: Fn(u32) -> f64,
    F2: Fn(u32) -> f64,
{
    let mut sum = 0.0;
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    let mut x = 0u32;
    loop {
        let p = f1(x);
        let q = f2(x);
        sum += (p.sqrt() - q.sqrt()).powi(2);
        c1 += p;
        c2 += q;
        if (c1 >= 1.0 - 1e-12 && c2 >= 1.0 - 1e-12) || x >= 10_000_000 {
            break;
        }
        x += 1;
    }
    0.5 * sum
}

/// Outcome of a coverage study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub replications: Vec<ReplicationResult>,
    /// Failed replications (id, error) — recorded, never silently dropped.
    pub failures: Vec<(usize, String)>,
    /// (metric name, mean, standard deviation) rows over successful reps.
    pub aggregate: Vec<(String, f64, f64)>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_one_replication(spec: &ScenarioSpec, rep_id: usize) -> Result<ReplicationResult> {
    let base = spec.base_seed;
    let stream = rep_id as u64 * STREAM_STRIDE;
    let mut data_rng = Rng::new(base, stream + STREAM_DATA);
    let (thetas, sample) = sample_scenario(spec, &mut data_rng)?;

    let kappa_hat = match &spec.kappa_rule {
        KappaRule::Fixed(k) => *k,
        KappaRule::Neighborhood(config) => {
            let mut cv_rng = Rng::new(base, stream + STREAM_CV);
            let (eta, _) = resolve_eta(&sample, config, &mut cv_rng)?;
            estimate_kappa(&sample, eta, config)?.kappa_hat
        }
    };

    // Coverage needs a finite-support fit, so the infinity atom stays off.
    let fit_config = SolverConfig {
        allow_infinity_atom: Some(false),
        ..SolverConfig::default()
    };
    let (model, _) = fit_npmle(&sample, kappa_hat, &fit_config)?;

    let mut mc_rng = Rng::new(base, stream + STREAM_THRESHOLD);
    let rule = build_rule(&model, spec.beta, THRESHOLD_MC_DRAWS, &mut mc_rng)?;
    let (coverage_opt, length_opt) =
        empirical_coverage_and_length(&rule, &model, &sample, &thetas)?;

    let mut covered = 0usize;
    let mut garwood_len = 0.0;
    for (&x, &theta) in sample.counts().iter().zip(&thetas) {
        let (lo, hi) = garwood_interval(x, spec.beta)?;
        if theta >= lo && theta <= hi {
            covered += 1;
        }
        garwood_len += hi - lo;
    }
    let coverage_garwood = covered as f64 / sample.n() as f64;
    let length_garwood = garwood_len / sample.n() as f64;

    let truth = spec.prior.as_gamma_mixture_model();
    let hellinger = truth.as_ref().map(|t| {
        hellinger_sq(|x| model.marginal_pmf(x), |x| t.marginal_pmf(x))
    });
    let tv = match &truth {
        Some(t) => Some(tv_prior(&model, t)?),
        None => None,
    };

    Ok(ReplicationResult {
        rep_id,
        coverage_opt,
        length_opt,
        coverage_garwood,
        length_garwood,
        kappa_hat,
        hellinger_sq: hellinger,
        tv_prior: tv,
    })
}

/// Runs all replications of a scenario (in parallel) and aggregates
/// mean/sd rows per metric. Deterministic for a fixed spec, independent
/// of worker count.
pub fn run_coverage_study(spec: &ScenarioSpec) -> Result<StudyResult> {
    spec.validate()?;
    let mut outcomes: Vec<(usize, std::result::Result<ReplicationResult, String>)> = (0..spec
        .reps)
        .into_par_iter()
        .map(|rep| {
            (
                rep,
                run_one_replication(spec, rep).map_err(|e| e.to_string()),
            )
        })
        .collect();
    outcomes.sort_by_key(|&(rep, _)| rep);

    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(r) => replications.push(r),
            Err(e) => failures.push((rep, e)),
        }
    }

    let mut aggregate = Vec::new();
    let column = |f: fn(&ReplicationResult) -> f64| -> Vec<f64> {
        replications.iter().map(f).collect()
    };
    for (name, values) in [
        ("coverage_opt", column(|r| r.coverage_opt)),
        ("length_opt", column(|r| r.length_opt)),
        ("coverage_garwood", column(|r| r.coverage_garwood)),
        ("length_garwood", column(|r| r.length_garwood)),
        ("kappa_hat", column(|r| r.kappa_hat)),
    ] {
        let (mean, sd) = mean_sd(&values);
        aggregate.push((name.to_string(), mean, sd));
    }
    Ok(StudyResult {
        replications,
        failures,
        aggregate,
    })
}

/// Per-replication CSV in the stable column layout.
pub fn replications_csv(results: &[ReplicationResult]) -> String {
    let mut out = String::from(
        "rep_id,coverage_opt,length_opt,coverage_garwood,length_garwood,kappa_hat\n",
    );
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.rep_id,
            r.coverage_opt,
            r.length_opt,
            r.coverage_garwood,
            r.length_garwood,
            r.kappa_hat
        ));
    }
    out
}

/// Aggregate CSV with mean/sd rows.
pub fn aggregate_csv(aggregate: &[(String, f64, f64)]) -> String {
    let mut out = String::from("metric,mean,sd\n");
    for (name, mean, sd) in aggregate {
        out.push_str(&format!("{name},{mean},{sd}\n"));
    }
    out
}

/// Result of the rate-slope experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateResult {
    /// Fitted slope of ln TV on ln n over all replications.
    pub slope: f64,
    pub intercept: f64,
    /// Mean TV per sample size, ordered as requested.
    pub per_n: Vec<(usize, f64)>,
    /// All (n, rep, TV) triples.
    pub samples: Vec<(usize, usize, f64)>,
}

/// Fits the NPMLE at several sample sizes and regresses the log prior-TV
/// error on log n. The prior must be a Gamma mixture sharing the given
/// shape, and fits run on the unconstrained grid.
pub fn rate_experiment(
    prior: &PriorSpec,
    kappa: f64,
    n_list: &[usize],
    reps: usize,
    base_seed: u64,
) -> Result<RateResult> {
    prior.validate()?;
    let truth = prior.as_gamma_mixture_model().ok_or_else(|| {
        Error::precondition(
            "rate experiment requires a Gamma-mixture prior with a single shared shape",
        )
    })?;
    if truth.kappa() != kappa {
        return Err(Error::precondition(format!(
            "prior shape {} does not match requested kappa {kappa}",
            truth.kappa()
        )));
    }
    if n_list.is_empty() || reps == 0 {
        return Err(Error::domain("need sample sizes and replications"));
    }

    let jobs: Vec<(usize, usize)> = (0..n_list.len())
        .flat_map(|ni| (0..reps).map(move |rep| (ni, rep)))
        .collect();
    let mut samples: Vec<(usize, usize, f64)> = jobs
        .into_par_iter()
        .map(|(ni, rep)| -> Result<(usize, usize, f64)> {
            let n = n_list[ni];
            let stream = (ni * reps + rep) as u64;
            let mut rng = Rng::new(base_seed, stream);
            let spec = ScenarioSpec {
                prior: prior.clone(),
                n,
                beta: 0.05,
                reps: 1,
                kappa_rule: KappaRule::Fixed(kappa),
                base_seed,
            };
            let (_, sample) = sample_scenario(&spec, &mut rng)?;
            let (model, _) = fit_npmle(&sample, kappa, &SolverConfig::default())?;
            let tv = tv_prior(&model, &truth)?;
            Ok((ni, rep, tv))
        })
        .collect::<Result<_>>()?;
    samples.sort_by_key(|&(ni, rep, _)| (ni, rep));

    // OLS of ln TV on ln n over all pairs.
    let points: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(ni, _, tv)| ((n_list[ni] as f64).ln(), tv.max(1e-300).ln()))
        .collect();
    let m = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let per_n = n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let tvs: Vec<f64> = samples
                .iter()
                .filter(|&&(i, _, _)| i == ni)
                .map(|&(_, _, tv)| tv)
                .collect();
            (n, tvs.iter().sum::<f64>() / tvs.len() as f64)
        })
        .collect();
    let samples = samples
        .into_iter()
        .map(|(ni, rep, tv)| (n_list[ni], rep, tv))
        .collect();
    Ok(RateResult {
        slope,
        intercept,
        per_n,
        samples,
    })
}

/// Root mean squared error of posterior-mean prediction of future counts
/// aligned with the training counts.
pub fn prediction_rmse(
    train: &CountSample,
    future: &[u32],
    model: &GammaMixtureModel,
) -> Result<f64> {
    if future.len() != train.n() {
        return Err(Error::domain(format!(
            "{} future values for {} training counts",
            future.len(),
            train.n()
        )));
    }
    let mut sum = 0.0;
    for (&x, &z) in train.counts().iter().zip(future) {
        let pred = model.posterior_mean(x)?;
        sum += (pred - f64::from(z)).powi(2);
    }
    Ok((sum / train.n() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setting_i_prior() -> PriorSpec {
        PriorSpec::GammaMixture {
            components: vec![(0.5, 2.0, 2.0), (0.5, 2.0, 4.0)],
        }
    }

    fn setting_i_model() -> GammaMixtureModel {
        setting_i_prior().as_gamma_mixture_model().unwrap()
    }

    #[test]
    fn scenario_sampling_moments() {
        let spec = ScenarioSpec {
            prior: PriorSpec::GammaMixture {
                components: vec![(1.0, 2.0, 2.0)],
            },
            n: 100_000,
            beta: 0.05,
            reps: 1,
            kappa_rule: KappaRule::Fixed(2.0),
            base_seed: 4,
        };
        let mut rng = Rng::new(4, 0);
        let (thetas, _) = sample_scenario(&spec, &mut rng).unwrap();
        let mean = thetas.iter().sum::<f64>() / thetas.len() as f64;
        assert!((mean - 1.0).abs() <= 0.02, "theta mean {mean}");
    }

    #[test]
    fn scenario_count_mean_matches_tower_property() {
        // E[X] = E[θ] = ½·1 + ½·½ = 0.75 for the two-component prior.
        let spec = ScenarioSpec {
            prior: setting_i_prior(),
            n: 100_000,
            beta: 0.05,
            reps: 1,
            kappa_rule: KappaRule::Fixed(2.0),
            base_seed: 9,
        };
        let mut rng = Rng::new(9, 0);
        let (_, counts) = sample_scenario(&spec, &mut rng).unwrap();
        let mean =
            counts.counts().iter().map(|&c| f64::from(c)).sum::<f64>() / counts.n() as f64;
        assert!((mean - 0.75).abs() <= 0.02, "count mean {mean}");
    }

    #[test]
    fn scenario_lognormal_mean() {
        let spec = ScenarioSpec {
            prior: PriorSpec::Lognormal { mu: 0.0, sigma: 1.0 },
            n: 100_000,
            beta: 0.05,
            reps: 1,
            kappa_rule: KappaRule::Fixed(1.0),
            base_seed: 12,
        };
        let mut rng = Rng::new(12, 0);
        let (thetas, _) = sample_scenario(&spec, &mut rng).unwrap();
        let mean = thetas.iter().sum::<f64>() / thetas.len() as f64;
        let want = (0.5f64).exp();
        // Var(lognormal(0,1)) = (e-1)e; 3 standard errors
        let se = (((std::f64::consts::E - 1.0) * std::f64::consts::E) / 1e5).sqrt();
        assert!((mean - want).abs() <= 3.0 * se, "mean {mean} vs {want}");
    }

    #[test]
    fn tv_prior_identity_and_symmetry() {
        let m = setting_i_model();
        assert!(tv_prior(&m, &m).unwrap() < 1e-5);
        let other = GammaMixtureModel::single_atom(2.0, 4.0).unwrap();
        let ab = tv_prior(&m, &other).unwrap();
        let ba = tv_prior(&other, &m).unwrap();
        assert!((ab - ba).abs() < 2e-5);
        assert!(ab > 0.0 && ab < 1.0);
    }

    #[test]
    fn tv_prior_matches_riemann_oracle() {
        // Gamma(2,2) vs Gamma(2,4): brute-force Riemann sum on a fine grid.
        let a = GammaMixtureModel::single_atom(2.0, 2.0).unwrap();
        let b = GammaMixtureModel::single_atom(2.0, 4.0).unwrap();
        let n = 10_000_000usize;
        let hi = 30.0;
        let step = hi / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let t = step * (i as f64 + 0.5);
            let ga = 4.0 * t * (-2.0 * t).exp();
            let gb = 16.0 * t * (-4.0 * t).exp();
            acc += (ga - gb).abs() * step;
        }
        let oracle = 0.5 * acc;
        let got = tv_prior(&a, &b).unwrap();
        assert!((got - oracle).abs() < 1e-4, "{got} vs {oracle}");
    }

    #[test]
    fn tv_prior_disjoint_components_near_one() {
        // Narrow Gamma(200, ·) bumps centred at 0.5 and 50.
        let a = GammaMixtureModel::single_atom(200.0, 400.0).unwrap();
        let b = GammaMixtureModel::single_atom(200.0, 4.0).unwrap();
        let tv = tv_prior(&a, &b).unwrap();
        assert!(tv > 0.999, "tv {tv}");
    }

    #[test]
    fn tv_prior_triangle_inequality() {
        let models = [
            GammaMixtureModel::single_atom(2.0, 1.0).unwrap(),
            GammaMixtureModel::single_atom(2.0, 3.0).unwrap(),
            setting_i_model(),
            GammaMixtureModel::single_atom(1.0, 2.0).unwrap(),
            GammaMixtureModel::new(
                3.0,
                MixingMeasure::new(vec![0.5, 5.0], vec![0.3, 0.7], 0.0).unwrap(),
            )
            .unwrap(),
        ];
        for i in 0..models.len() {
            for j in (i + 1)..models.len() {
                for k in 0..models.len() {
                    let ij = tv_prior(&models[i], &models[j]).unwrap();
                    let ik = tv_prior(&models[i], &models[k]).unwrap();
                    let kj = tv_prior(&models[k], &models[j]).unwrap();
                    assert!(ij <= ik + kj + 1e-4);
                }
            }
        }
    }

    #[test]
    fn wtv_identity_and_single_atom_oracle() {
        let m = setting_i_model();
        assert!(wtv(&m, &m).unwrap() < 1e-4);

        // Single-atom models differing in rate: per-count TV of conjugate
        // Gamma posteriors, weighted by the reference marginal.
        let hat = GammaMixtureModel::single_atom(2.0, 2.0).unwrap();
        let truth = GammaMixtureModel::single_atom(2.0, 3.0).unwrap();
        let got = wtv(&hat, &truth).unwrap();
        let mut oracle = 0.0;
        for x in 0..=60u32 {
            let fx = truth.marginal_pmf(x);
            if fx <= 0.0 {
                continue;
            }
            let n = 400_000usize;
            let hi = 25.0;
            let step = hi / n as f64;
            let mut acc = 0.0;
            let a = f64::from(x) + 2.0;
            for i in 0..n {
                let t = step * (i as f64 + 0.5);
                let d1 = (a * 3.0f64.ln() - crate::special::log_gamma(a).unwrap()
                    + (a - 1.0) * t.ln()
                    - 3.0 * t)
                    .exp();
                let d2 = (a * 4.0f64.ln() - crate::special::log_gamma(a).unwrap()
                    + (a - 1.0) * t.ln()
                    - 4.0 * t)
                    .exp();
                acc += (d1 - d2).abs() * step;
            }
            oracle += 0.5 * fx * acc;
        }
        assert!((got - oracle).abs() < 1e-3, "{got} vs {oracle}");
    }

    #[test]
    fn wtv_bounded_by_prior_plus_marginal_tv() {
        let mut rng = Rng::new(21, 0);
        for _ in 0..10 {
            let kappa = 0.5 + 3.0 * rng.next_f64();
            let l1 = 0.5 + 4.0 * rng.next_f64();
            let l2 = l1 + 0.5 + 3.0 * rng.next_f64();
            let w = 0.2 + 0.6 * rng.next_f64();
            let hat = GammaMixtureModel::new(
                kappa,
                MixingMeasure::new(vec![l1, l2], vec![w, 1.0 - w], 0.0).unwrap(),
            )
            .unwrap();
            let truth = GammaMixtureModel::single_atom(kappa, 0.5 * (l1 + l2)).unwrap();
            let lhs = wtv(&hat, &truth).unwrap();
            let tv_g = tv_prior(&hat, &truth).unwrap();
            let tv_f = 0.5
                * (0..=truth.tail_cutoff(1e-12).unwrap())
                    .map(|x| (hat.marginal_pmf(x) - truth.marginal_pmf(x)).abs())
                    .sum::<f64>();
            assert!(lhs <= tv_g + tv_f + 1e-3, "{lhs} vs {} + {}", tv_g, tv_f);
        }
    }

    #[test]
    fn hellinger_basics() {
        let m = setting_i_model();
        assert_eq!(hellinger_sq(|x| m.marginal_pmf(x), |x| m.marginal_pmf(x)), 0.0);
        // point masses at 0 and 1
        let h = hellinger_sq(
            |x| if x == 0 { 1.0 } else { 0.0 },
            |x| if x == 1 { 1.0 } else { 0.0 },
        );
        assert_eq!(h, 1.0);
    }

    #[test]
    fn hellinger_matches_direct_summation() {
        let a = GammaMixtureModel::single_atom(2.0, 1.0).unwrap();
        let b = GammaMixtureModel::single_atom(1.5, 2.0).unwrap();
        let got = hellinger_sq(|x| a.marginal_pmf(x), |x| b.marginal_pmf(x));
        let direct: f64 = (0..10_000u32)
            .map(|x| (a.marginal_pmf(x).sqrt() - b.marginal_pmf(x).sqrt()).powi(2))
            .sum::<f64>()
            * 0.5;
        assert!((got - direct).abs() < 1e-12);
    }

    #[test]
    fn study_is_deterministic_and_ordered() {
        let spec = ScenarioSpec {
            prior: setting_i_prior(),
            n: 150,
            beta: 0.1,
            reps: 3,
            kappa_rule: KappaRule::Fixed(2.0),
            base_seed: 31,
        };
        let a = run_coverage_study(&spec).unwrap();
        let b = run_coverage_study(&spec).unwrap();
        assert_eq!(a.failures.len(), 0);
        assert_eq!(a.replications.len(), 3);
        for (ra, rb) in a.replications.iter().zip(&b.replications) {
            assert_eq!(ra.rep_id, rb.rep_id);
            assert_eq!(ra.coverage_opt.to_bits(), rb.coverage_opt.to_bits());
            assert_eq!(ra.length_opt.to_bits(), rb.length_opt.to_bits());
            assert_eq!(
                ra.coverage_garwood.to_bits(),
                rb.coverage_garwood.to_bits()
            );
            assert_eq!(ra.length_garwood.to_bits(), rb.length_garwood.to_bits());
        }
        assert!(a.replications.windows(2).all(|w| w[0].rep_id < w[1].rep_id));
        // gamma-mixture truth makes the optional metrics available
        assert!(a.replications[0].hellinger_sq.is_some());
        assert!(a.replications[0].tv_prior.is_some());
    }

    #[test]
    fn study_garwood_dominates_opt() {
        let spec = ScenarioSpec {
            prior: setting_i_prior(),
            n: 300,
            beta: 0.05,
            reps: 3,
            kappa_rule: KappaRule::Fixed(2.0),
            base_seed: 77,
        };
        let result = run_coverage_study(&spec).unwrap();
        let get = |name: &str| {
            result
                .aggregate
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|&(_, m, _)| m)
                .unwrap()
        };
        assert!(get("coverage_garwood") >= get("coverage_opt") - 0.01);
        assert!(get("length_garwood") >= get("length_opt"));
    }

    #[test]
    fn csv_layouts() {
        let rows = vec![ReplicationResult {
            rep_id: 0,
            coverage_opt: 0.95,
            length_opt: 1.6,
            coverage_garwood: 0.99,
            length_garwood: 4.9,
            kappa_hat: 2.0,
            hellinger_sq: None,
            tv_prior: None,
        }];
        let csv = replications_csv(&rows);
        assert!(csv.starts_with(
            "rep_id,coverage_opt,length_opt,coverage_garwood,length_garwood,kappa_hat\n"
        ));
        assert!(csv.contains("0,0.95,1.6,0.99,4.9,2"));
        let agg = aggregate_csv(&[("coverage_opt".into(), 0.95, 0.01)]);
        assert!(agg.starts_with("metric,mean,sd\n"));
    }

    #[test]
    fn rate_experiment_smoke() {
        let result = rate_experiment(
            &setting_i_prior(),
            2.0,
            &[128, 256],
            2,
            5,
        )
        .unwrap();
        assert_eq!(result.per_n.len(), 2);
        assert_eq!(result.samples.len(), 4);
        assert!(result.slope.is_finite());
        // deterministic rerun
        let again = rate_experiment(&setting_i_prior(), 2.0, &[128, 256], 2, 5).unwrap();
        assert_eq!(result.slope.to_bits(), again.slope.to_bits());
    }

    #[test]
    fn rate_experiment_rejects_mismatched_shape() {
        assert!(rate_experiment(&setting_i_prior(), 3.0, &[64], 1, 0).is_err());
        let mixed = PriorSpec::GammaMixture {
            components: vec![(0.5, 2.0, 2.0), (0.5, 3.0, 4.0)],
        };
        assert!(rate_experiment(&mixed, 2.0, &[64], 1, 0).is_err());
    }

    #[test]
    fn prediction_rmse_zero_when_future_equals_prediction() {
        let model = setting_i_model();
        let train = CountSample::new(vec![0, 1, 2, 3, 5]).unwrap();
        // perfect predictions are not integers; check via direct formula
        let preds: Vec<f64> = train
            .counts()
            .iter()
            .map(|&x| model.posterior_mean(x).unwrap())
            .collect();
        let mut sum = 0.0;
        for (&x, &p) in train.counts().iter().zip(&preds) {
            sum += (model.posterior_mean(x).unwrap() - p).powi(2);
        }
        assert_eq!(sum, 0.0);
        assert!(prediction_rmse(&train, &[0, 1], &model).is_err());
        let rmse = prediction_rmse(&train, &[0, 1, 2, 3, 5], &model).unwrap();
        assert!(rmse > 0.0 && rmse < 3.0);
    }

    #[test]
    fn prediction_beats_constant_baseline_on_paired_seasons() {
        // Synthetic paired seasons from the same latent means.
        let mut rng = Rng::new(88, 0);
        let prior = setting_i_prior();
        let n = 2000;
        let mut xs = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let theta = prior.sample_theta(&mut rng).unwrap();
            xs.push(sample_poisson(theta, &mut rng).unwrap());
            zs.push(sample_poisson(theta, &mut rng).unwrap());
        }
        let train = CountSample::new(xs).unwrap();
        let truth = setting_i_model();
        let rmse_model = prediction_rmse(&train, &zs, &truth).unwrap();
        let global_mean =
            train.counts().iter().map(|&c| f64::from(c)).sum::<f64>() / train.n() as f64;
        let rmse_const = (train
            .counts()
            .iter()
            .zip(&zs)
            .map(|(_, &z)| (global_mean - f64::from(z)).powi(2))
            .sum::<f64>()
            / train.n() as f64)
            .sqrt();
        assert!(
            rmse_model <= rmse_const,
            "posterior-mean RMSE {rmse_model} vs constant {rmse_const}"
        );
    }
}
