//! Marginal coverage sets: a global posterior-density threshold calibrated
//! by Monte Carlo, per-count level sets as unions of intervals, exact
//! model-based coverage, and the Garwood chi-square baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{poisson_log_pmf, CountSample, GammaMixtureModel};
use crate::quad;
use crate::rng::{sample_gamma, sample_poisson, Rng};
use crate::special::{chi_square_quantile, gamma_quantile_from};

/// Ordered union of disjoint intervals on the latent-mean axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for w in &intervals {
            if !(w.0 >= 0.0 && w.0 < w.1 && w.1.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "bad interval ({}, {})",
                    w.0, w.1
                )));
            }
        }
        if intervals.windows(2).any(|w| w[0].1 >= w[1].0) {
            return Err(Error::InvalidModel(
                "intervals must be sorted and pairwise disjoint".into(),
            ));
        }
        Ok(IntervalUnion { intervals })
    }

    pub fn empty() -> Self {
        IntervalUnion {
            intervals: Vec::new(),
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.intervals
            .iter()
            .any(|&(lo, hi)| theta >= lo && theta <= hi)
    }
}

/// Global threshold plus per-count coverage sets for x = 0..=x_max.
#[derive(Debug, Clone)]
pub struct CoverageRule {
    pub beta: f64,
    pub threshold: f64,
    pub mc_draws: usize,
    sets: Vec<IntervalUnion>,
    pub x_max: u32,
    /// Content hash of the model the rule was built from.
    pub model_ref: String,
}

impl CoverageRule {
    pub fn set(&self, x: u32) -> Option<&IntervalUnion> {
        self.sets.get(x as usize)
    }

    pub fn sets(&self) -> &[IntervalUnion] {
        &self.sets
    }

    /// Serializes to the rule JSON schema.
    pub fn to_json_string(&self) -> Result<String> {
        let mut sets = BTreeMap::new();
        for (x, set) in self.sets.iter().enumerate() {
            sets.insert(
                x.to_string(),
                set.intervals().iter().map(|&(a, b)| [a, b]).collect(),
            );
        }
        let json = RuleJson {
            beta: self.beta,
            threshold: self.threshold,
            mc_draws: self.mc_draws as u64,
            sets,
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    /// Parses and validates the rule JSON schema.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let json: RuleJson = serde_json::from_str(s)?;
        if !(json.beta > 0.0 && json.beta < 1.0) {
            return Err(Error::InvalidModel(format!("bad beta {}", json.beta)));
        }
        if json.sets.is_empty() {
            return Err(Error::InvalidModel("rule has no sets".into()));
        }
        let mut by_x: Vec<(u32, Vec<[f64; 2]>)> = Vec::with_capacity(json.sets.len());
        for (key, ivs) in json.sets {
            let x: u32 = key
                .parse()
                .map_err(|_| Error::InvalidModel(format!("bad set key '{key}'")))?;
            by_x.push((x, ivs));
        }
        by_x.sort_by_key(|&(x, _)| x);
        let x_max = by_x.last().unwrap().0;
        if by_x.len() != x_max as usize + 1 || by_x.iter().enumerate().any(|(i, &(x, _))| x != i as u32)
        {
            return Err(Error::InvalidModel(
                "rule sets must cover every x in 0..=x_max".into(),
            ));
        }
        let mut sets = Vec::with_capacity(by_x.len());
        for (_, ivs) in by_x {
            sets.push(IntervalUnion::new(
                ivs.into_iter().map(|[a, b]| (a, b)).collect(),
            )?);
        }
        Ok(CoverageRule {
            beta: json.beta,
            threshold: json.threshold,
            mc_draws: json.mc_draws as usize,
            sets,
            x_max,
            model_ref: String::from("unknown"),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RuleJson {
    beta: f64,
    threshold: f64,
    mc_draws: u64,
    sets: BTreeMap<String, Vec<[f64; 2]>>,
}

fn require_no_infinity_mass(model: &GammaMixtureModel) -> Result<()> {
    if model.mixing().mass_at_infinity() > 0.0 {
        return Err(Error::precondition(
            "coverage requires a mixing measure without mass at infinity",
        ));
    }
    if model.mixing().atoms().is_empty() {
        return Err(Error::precondition(
            "coverage requires at least one finite atom",
        ));
    }
    Ok(())
}

/// Draws (λ, θ, X) from the model hierarchy and returns the lower
/// β-quantile of the posterior density evaluated at the drawn pairs:
/// the plug-in estimate of the global threshold.
pub fn estimate_threshold(
    model: &GammaMixtureModel,
    beta: f64,
    mc_draws: usize,
    rng: &mut Rng,
) -> Result<f64> {
    require_no_infinity_mass(model)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!(
            "beta must lie in (0,1), got {beta}"
        )));
    }
    if mc_draws == 0 {
        return Err(Error::domain("mc_draws must be positive"));
    }
    let atoms = model.mixing().atoms();
    let weights = model.mixing().weights();
    let kappa = model.kappa();
    let mut values = Vec::with_capacity(mc_draws);
    for _ in 0..mc_draws {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut j = atoms.len() - 1;
        for (idx, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = idx;
                break;
            }
        }
        let theta = sample_gamma(kappa, atoms[j], rng)?;
        let x = sample_poisson(theta, rng)?;
        values.push(model.posterior_density(theta, x)?);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // lower β-quantile: order statistic ⌈β·B⌉
    let idx = ((beta * mc_draws as f64).ceil() as usize).clamp(1, mc_draws);
    Ok(values[idx - 1])
}

/// Number of grid points scanned per count when extracting a level set.
const LEVEL_SET_GRID: usize = 2048;
/// Reference-quantile mass left outside the scan window.
const LEVEL_SET_TAIL: f64 = 1e-10;

/// Level set {θ ≥ 0 : π(θ|x) ≥ k} as a union of intervals. The posterior
/// is scanned on a grid spaced uniformly in the cdf of the widest
/// posterior component, and each threshold crossing is refined by
/// bisection. When x + κ < 1 the density diverges at 0+ and the set
/// includes a left-closed interval starting at 0.
pub fn level_set(model: &GammaMixtureModel, x: u32, k: f64) -> Result<IntervalUnion> {
    require_no_infinity_mass(model)?;
    if !(k > 0.0) {
        return Err(Error::domain(format!("threshold must be > 0, got {k}")));
    }
    let kappa = model.kappa();
    let shape = f64::from(x) + kappa;
    let rate = model.lambda_min().unwrap() + 1.0;
    let p_hi = 1.0 - LEVEL_SET_TAIL;
    let theta_hi = crate::special::gamma_quantile(p_hi, shape, rate)?;
    let ln_k = k.ln();

    // Sign of π - k as θ -> 0+: the exponent of θ decides the limit.
    let exponent = shape - 1.0;
    let sign_at_zero = if exponent.abs() < 1e-12 {
        let mut terms = Vec::with_capacity(model.mixing().atoms().len());
        for (j, &lam) in model.mixing().atoms().iter().enumerate() {
            terms.push(model.mixing().weights()[j].ln() + kappa * lam.ln());
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        // lnΓ(x+1) = 0 here since x + κ = 1 forces x = 0
        let ln_f = model.log_marginal_pmf(x);
        let ln_limit = lse - crate::special::log_gamma(kappa)? - ln_f;
        ln_limit >= ln_k
    } else {
        exponent < 0.0
    };

    // cdf-spaced grid with warm-started quantile inversion
    let mut thetas = Vec::with_capacity(LEVEL_SET_GRID);
    let mut guess = theta_hi * 1e-6;
    for i in 1..=LEVEL_SET_GRID {
        let p = p_hi * i as f64 / LEVEL_SET_GRID as f64;
        let t = gamma_quantile_from(p, shape, rate, guess)?;
        guess = t;
        thetas.push(t);
    }

    let above = |theta: f64| -> Result<bool> {
        Ok(model.posterior_log_density(theta, x)? >= ln_k)
    };

    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut inside = sign_at_zero;
    let mut open_lo = if inside { Some(0.0) } else { None };
    let mut prev_theta = 0.0f64;
    for &theta in &thetas {
        let now = above(theta)?;
        if now != inside {
            // Bisect the crossing in (prev_theta, theta); the sign at
            // prev_theta is `inside`.
            let mut lo = prev_theta;
            let mut hi = theta;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if above(mid)? == inside {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-10 * hi.max(1e-300) {
                    break;
                }
            }
            let crossing = 0.5 * (lo + hi);
            if inside {
                // closing an interval
                if let Some(start) = open_lo.take() {
                    if crossing > start {
                        intervals.push((start, crossing));
                    }
                }
            } else {
                open_lo = Some(crossing);
            }
            inside = now;
        }
        prev_theta = theta;
    }
    if let Some(start) = open_lo {
        if theta_hi > start {
            intervals.push((start, theta_hi));
        }
    }
    IntervalUnion::new(intervals)
}

/// Builds the full coverage rule: Monte-Carlo threshold, then level sets
/// for every count up to the marginal tail cutoff.
pub fn build_rule(
    model: &GammaMixtureModel,
    beta: f64,
    mc_draws: usize,
    rng: &mut Rng,
) -> Result<CoverageRule> {
    let threshold = estimate_threshold(model, beta, mc_draws, rng)?;
    let x_max = model.tail_cutoff(1e-8)?;
    let sets: Vec<IntervalUnion> = (0..=x_max)
        .map(|x| level_set(model, x, threshold))
        .collect::<Result<_>>()?;
    Ok(CoverageRule {
        beta,
        threshold,
        mc_draws,
        sets,
        x_max,
        model_ref: model_fingerprint(model)?,
    })
}

/// FNV-1a hash of the canonical model JSON, as a short stable identifier.
fn model_fingerprint(model: &GammaMixtureModel) -> Result<String> {
    let json = model.to_json_string()?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    Ok(format!("{hash:016x}"))
}

/// Posterior density sampled on the cdf-spaced grid that level-set
/// extraction scans; for plotting and CSV emission.
pub fn posterior_density_grid(
    model: &GammaMixtureModel,
    x: u32,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    require_no_infinity_mass(model)?;
    let shape = f64::from(x) + model.kappa();
    let rate = model.lambda_min().unwrap() + 1.0;
    let p_hi = 1.0 - LEVEL_SET_TAIL;
    let mut out = Vec::with_capacity(points);
    let mut guess = shape / rate;
    for i in 1..=points {
        let p = p_hi * i as f64 / points as f64;
        let theta = gamma_quantile_from(p, shape, rate, guess)?;
        guess = theta;
        out.push((theta, model.posterior_density(theta, x)?));
    }
    Ok(out)
}

/// Membership by density comparison: π(θ|x) ≥ k.
pub fn contains(model: &GammaMixtureModel, k: f64, x: u32, theta: f64) -> Result<bool> {
    if k <= 0.0 {
        return Ok(true);
    }
    Ok(model.posterior_log_density(theta, x)? >= k.ln())
}

/// Exact conditional marginal coverage of a rule under a reference model:
/// Σ_x ∫_{sets[x]} p_θ(x) g(θ) dθ, to absolute tolerance 1e-4. Counts
/// beyond the rule's x_max contribute below the tail cutoff and are
/// dropped.
pub fn exact_coverage(rule: &CoverageRule, truth: &GammaMixtureModel) -> Result<f64> {
    require_no_infinity_mass(truth)?;
    let pieces: usize = rule.sets.iter().map(|s| s.intervals().len()).sum();
    if pieces == 0 {
        return Ok(0.0);
    }
    let piece_tol = 1e-4 / (2.0 * pieces as f64);
    let mut total = 0.0;
    for (x, set) in rule.sets.iter().enumerate() {
        let x = x as u32;
        for &(lo, hi) in set.intervals() {
            let integrand = |theta: f64| {
                if theta <= 0.0 {
                    return 0.0;
                }
                let ln_g = match truth.prior_log_density(theta) {
                    Ok(v) => v,
                    Err(_) => return 0.0,
                };
                (poisson_log_pmf(x, theta) + ln_g).exp()
            };
            total += quad::integrate(integrand, lo, hi, piece_tol)?;
        }
    }
    Ok(total)
}

/// Garwood exact Poisson confidence interval from chi-square quantiles.
pub fn garwood_interval(x: u32, beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!(
            "beta must lie in (0,1), got {beta}"
        )));
    }
    let lo = if x == 0 {
        0.0
    } else {
        0.5 * chi_square_quantile(beta / 2.0, 2.0 * f64::from(x))?
    };
    let hi = 0.5 * chi_square_quantile(1.0 - beta / 2.0, 2.0 * f64::from(x) + 2.0)?;
    Ok((lo, hi))
}

/// Empirical coverage and mean length of a rule over an observed sample
/// with known latent means; counts beyond the rule's range fall back to a
/// freshly computed level set.
pub fn empirical_coverage_and_length(
    rule: &CoverageRule,
    model: &GammaMixtureModel,
    sample: &CountSample,
    thetas: &[f64],
) -> Result<(f64, f64)> {
    if thetas.len() != sample.n() {
        return Err(Error::domain(format!(
            "{} latent means for {} counts",
            thetas.len(),
            sample.n()
        )));
    }
    let mut covered = 0usize;
    let mut length_sum = 0.0;
    let mut extra_sets: BTreeMap<u32, IntervalUnion> = BTreeMap::new();
    for (&x, &theta) in sample.counts().iter().zip(thetas) {
        if contains(model, rule.threshold, x, theta)? {
            covered += 1;
        }
        let length = match rule.set(x) {
            Some(s) => s.total_length(),
            None => {
                if !extra_sets.contains_key(&x) {
                    extra_sets.insert(x, level_set(model, x, rule.threshold)?);
                }
                extra_sets[&x].total_length()
            }
        };
        length_sum += length;
    }
    Ok((
        covered as f64 / sample.n() as f64,
        length_sum / sample.n() as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::MixingMeasure;

    fn two_atom_model() -> GammaMixtureModel {
        GammaMixtureModel::new(
            2.0,
            MixingMeasure::new(vec![2.0, 4.0], vec![0.5, 0.5], 0.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn interval_union_validation() {
        assert!(IntervalUnion::new(vec![(0.0, 1.0), (2.0, 3.0)]).is_ok());
        assert!(IntervalUnion::new(vec![(0.0, 1.0), (0.5, 3.0)]).is_err());
        assert!(IntervalUnion::new(vec![(1.0, 1.0)]).is_err());
        let u = IntervalUnion::new(vec![(0.0, 1.0), (2.0, 3.5)]).unwrap();
        assert_eq!(u.total_length(), 2.5);
        assert!(u.contains(0.5) && u.contains(3.0) && !u.contains(1.5));
    }

    #[test]
    fn threshold_matches_larger_oracle_quantile() {
        // Single-atom model: compare the 2e5-draw threshold against a
        // 1e7-draw oracle within two Monte-Carlo standard errors.
        let model = GammaMixtureModel::single_atom(2.0, 1.0).unwrap();
        let beta = 0.05;
        let big = 10_000_000usize;
        let mut rng = Rng::new(314, 0);
        let mut values = Vec::with_capacity(big);
        for _ in 0..big {
            let theta = sample_gamma(2.0, 1.0, &mut rng).unwrap();
            let x = sample_poisson(theta, &mut rng).unwrap();
            values.push(model.posterior_density(theta, x).unwrap());
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((beta * big as f64).ceil() as usize).clamp(1, big);
        let oracle = values[idx - 1];
        // density of the π-value distribution at the quantile, by a
        // central difference of order statistics
        let h = (big as f64 * 1e-3) as usize;
        let spread = values[idx - 1 + h] - values[idx - 1 - h];
        let density = 2e-3 / spread;

        let small = 200_000usize;
        let mut rng2 = Rng::new(2718, 6);
        let got = estimate_threshold(&model, beta, small, &mut rng2).unwrap();
        let se = (beta * (1.0 - beta) / small as f64).sqrt() / density;
        assert!(
            (got - oracle).abs() <= 2.0 * se,
            "threshold {got} vs oracle {oracle} (2se = {})",
            2.0 * se
        );
    }

    #[test]
    fn threshold_vanishes_as_beta_shrinks() {
        let model = two_atom_model();
        let mut rng = Rng::new(10, 0);
        let tiny = estimate_threshold(&model, 1e-5, 100_000, &mut rng).unwrap();
        let mut rng = Rng::new(10, 0);
        let normal = estimate_threshold(&model, 0.05, 100_000, &mut rng).unwrap();
        assert!(tiny < normal);
        assert!(tiny < 1e-3);
    }

    #[test]
    fn threshold_rejects_infinity_mass() {
        let model = GammaMixtureModel::new(
            2.0,
            MixingMeasure::new(vec![1.0], vec![0.7], 0.3).unwrap(),
        )
        .unwrap();
        let mut rng = Rng::new(0, 0);
        assert!(matches!(
            estimate_threshold(&model, 0.05, 100, &mut rng),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn level_set_tiny_threshold_spans_window() {
        let model = two_atom_model();
        let x = 2u32;
        let shape = f64::from(x) + 2.0;
        let theta_hi = crate::special::gamma_quantile(1.0 - 1e-10, shape, 3.0).unwrap();
        let set = level_set(&model, x, 1e-12).unwrap();
        assert_eq!(set.intervals().len(), 1);
        assert!((set.total_length() - theta_hi) / theta_hi < 1e-3);
        assert!(set.intervals()[0].0 < 1e-3);
    }

    #[test]
    fn level_set_single_atom_is_one_interval_at_level() {
        // Unimodal conjugate posterior: exactly one interval whose
        // endpoints sit on the level.
        let model = GammaMixtureModel::single_atom(2.0, 1.0).unwrap();
        let x = 3u32;
        let k = 0.2;
        let set = level_set(&model, x, k).unwrap();
        assert_eq!(set.intervals().len(), 1);
        let (lo, hi) = set.intervals()[0];
        for endpoint in [lo, hi] {
            let pi = model.posterior_density(endpoint, x).unwrap();
            assert!(
                (pi - k).abs() <= 1e-6 * k,
                "endpoint density {pi} vs level {k}"
            );
        }
    }

    #[test]
    fn level_set_above_maximum_is_empty() {
        let model = GammaMixtureModel::single_atom(2.0, 1.0).unwrap();
        let set = level_set(&model, 3, 10.0).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.total_length(), 0.0);
    }

    #[test]
    fn level_set_divergent_origin_starts_at_zero() {
        // x + κ < 1: the posterior diverges at 0+, so the set includes a
        // left-closed piece at the origin.
        let model = GammaMixtureModel::single_atom(0.5, 1.0).unwrap();
        let set = level_set(&model, 0, 0.5).unwrap();
        assert!(!set.is_empty());
        assert_eq!(set.intervals()[0].0, 0.0);
    }

    #[test]
    fn level_set_matches_dense_grid_membership() {
        // Dense-grid oracle: measure of symmetric difference between the
        // union and pointwise density comparison stays tiny.
        let model = two_atom_model();
        let x = 1u32;
        let k = 0.3;
        let set = level_set(&model, x, k).unwrap();
        let theta_hi = crate::special::gamma_quantile(1.0 - 1e-10, 3.0, 3.0).unwrap();
        let n = 1_000_000usize;
        let step = theta_hi / n as f64;
        let mut mismatch = 0usize;
        for i in 1..=n {
            let theta = step * i as f64;
            let direct = model.posterior_density(theta, x).unwrap() >= k;
            if direct != set.contains(theta) {
                mismatch += 1;
            }
        }
        let diff_len = mismatch as f64 * step;
        assert!(
            diff_len < 1e-4 * set.total_length(),
            "symmetric difference {diff_len}"
        );
    }

    #[test]
    fn level_set_monotone_in_threshold() {
        let model = two_atom_model();
        for x in [0u32, 2, 5] {
            let loose = level_set(&model, x, 0.1).unwrap();
            let tight = level_set(&model, x, 0.3).unwrap();
            assert!(tight.total_length() <= loose.total_length() + 1e-9);
            // pointwise containment on a grid
            for i in 1..500 {
                let theta = 8.0 * f64::from(i) / 500.0;
                if tight.contains(theta) {
                    assert!(loose.contains(theta), "x={x}, theta={theta}");
                }
            }
        }
    }

    #[test]
    fn contains_agrees_with_level_set_membership() {
        let model = two_atom_model();
        let k = 0.25;
        let mut rng = Rng::new(4, 4);
        let sets: Vec<IntervalUnion> = (0..=10)
            .map(|x| level_set(&model, x, k).unwrap())
            .collect();
        let mut checked = 0;
        for _ in 0..10_000 {
            let x = (rng.next_u64() % 11) as u32;
            let theta = 10.0 * rng.next_open01();
            let by_set = sets[x as usize].contains(theta);
            let by_density = contains(&model, k, x, theta).unwrap();
            // skip points within 1e-8 of any endpoint
            let near_edge = sets[x as usize]
                .intervals()
                .iter()
                .any(|&(lo, hi)| (theta - lo).abs() < 1e-8 || (theta - hi).abs() < 1e-8);
            if !near_edge {
                assert_eq!(by_set, by_density, "x={x}, theta={theta}");
                checked += 1;
            }
        }
        assert!(checked > 9000);
        assert!(contains(&model, 0.0, 3, 0.17).unwrap());
    }

    #[test]
    fn rule_nesting_in_beta() {
        let model = two_atom_model();
        let mut rng_a = Rng::new(7, 1);
        let rule_10 = build_rule(&model, 0.10, 50_000, &mut rng_a).unwrap();
        let mut rng_b = Rng::new(7, 1);
        let rule_05 = build_rule(&model, 0.05, 50_000, &mut rng_b).unwrap();
        assert!(rule_10.threshold >= rule_05.threshold);
        for x in 0..=rule_10.x_max.min(rule_05.x_max) {
            for i in 1..300 {
                let theta = 9.0 * f64::from(i) / 300.0;
                if rule_10.set(x).unwrap().contains(theta) {
                    assert!(
                        rule_05.set(x).unwrap().contains(theta),
                        "x={x}, theta={theta}"
                    );
                }
            }
        }
    }

    #[test]
    fn rule_sets_nonempty_where_marginal_mass_lives() {
        let model = two_atom_model();
        let mut rng = Rng::new(3, 9);
        let rule = build_rule(&model, 0.05, 100_000, &mut rng).unwrap();
        for x in 0..=rule.x_max {
            if model.marginal_pmf(x) >= 1e-6 {
                assert!(!rule.set(x).unwrap().is_empty(), "empty set at x={x}");
            }
        }
    }

    #[test]
    fn exact_coverage_self_consistency() {
        // Built from and evaluated against the same model, coverage is
        // 1 - β up to Monte-Carlo threshold error.
        let model = two_atom_model();
        let mut rng = Rng::new(42, 0);
        let rule = build_rule(&model, 0.05, 200_000, &mut rng).unwrap();
        let cov = exact_coverage(&rule, &model).unwrap();
        assert!((cov - 0.95).abs() <= 0.005, "coverage {cov}");
    }

    #[test]
    fn exact_coverage_near_one_for_tiny_threshold() {
        let model = two_atom_model();
        let mut rng = Rng::new(42, 1);
        let rule = build_rule(&model, 1e-5, 100_000, &mut rng).unwrap();
        let cov = exact_coverage(&rule, &model).unwrap();
        assert!(cov >= 0.999, "coverage {cov}");
    }

    #[test]
    fn coverage_monotone_in_threshold() {
        let model = two_atom_model();
        let mut rng = Rng::new(8, 8);
        let rule = build_rule(&model, 0.05, 50_000, &mut rng).unwrap();
        let mut last = f64::INFINITY;
        for factor in [0.5, 1.0, 2.0] {
            let k = rule.threshold * factor;
            let sets: Vec<IntervalUnion> = (0..=rule.x_max)
                .map(|x| level_set(&model, x, k).unwrap())
                .collect();
            let scaled = CoverageRule {
                beta: rule.beta,
                threshold: k,
                mc_draws: rule.mc_draws,
                x_max: rule.x_max,
                model_ref: rule.model_ref.clone(),
                sets,
            };
            let cov = exact_coverage(&scaled, &model).unwrap();
            assert!(cov <= last + 1e-4);
            last = cov;
        }
    }

    #[test]
    fn garwood_reference_values() {
        let (lo, hi) = garwood_interval(0, 0.05).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 3.688_879_454_113_936).abs() < 1e-9);
        for &beta in &[0.01, 0.05, 0.5] {
            assert_eq!(garwood_interval(0, beta).unwrap().0, 0.0);
        }
        let (lo, hi) = garwood_interval(7, 0.05).unwrap();
        assert!(lo > 0.0 && lo < 7.0 && hi > 7.0);
    }

    #[test]
    fn garwood_frequentist_coverage_exact_summation() {
        // Σ_x 1(θ ∈ I(x)) p_θ(x) ≥ 1 - β by direct pmf summation.
        for &theta in &[0.5, 2.0, 7.0] {
            let mut covered = 0.0;
            for x in 0..200u32 {
                let (lo, hi) = garwood_interval(x, 0.05).unwrap();
                if theta >= lo && theta <= hi {
                    covered += poisson_log_pmf(x, theta).exp();
                }
            }
            assert!(covered >= 0.95, "theta={theta}: coverage {covered}");
        }
    }

    #[test]
    fn rule_json_round_trip_byte_identical() {
        let model = two_atom_model();
        let mut rng = Rng::new(5, 5);
        let rule = build_rule(&model, 0.05, 20_000, &mut rng).unwrap();
        let s1 = rule.to_json_string().unwrap();
        let reloaded = CoverageRule::from_json_str(&s1).unwrap();
        let s2 = reloaded.to_json_string().unwrap();
        assert_eq!(s1, s2);
        assert_eq!(reloaded.x_max, rule.x_max);
        assert_eq!(reloaded.threshold, rule.threshold);
    }

    #[test]
    fn rule_json_rejects_gaps() {
        let bad = r#"{"beta":0.05,"threshold":0.2,"mc_draws":10,"sets":{"0":[[0.1,0.5]],"2":[[0.2,0.9]]}}"#;
        assert!(CoverageRule::from_json_str(bad).is_err());
    }
}
