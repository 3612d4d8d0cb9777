//! Mixing measures over Gamma rates, the Gamma-mixture model, count
//! samples, and evaluators for the negative-binomial kernel, marginal pmf,
//! prior density, posterior density, and posterior mean.
//!
//! All pmf/density accumulation runs in log space with log-sum-exp; atoms
//! like λ = 50 at x = 60 underflow in linear space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::special::{gamma_quantile, ln_factorial, log_gamma};

/// Sum tolerance for the simplex invariant of a mixing measure.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Discrete probability measure over Gamma rate atoms, with an optional
/// atom at infinity (whose kernel is the point mass at count zero).
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    mass_at_infinity: f64,
}

impl MixingMeasure {
    /// Builds a measure from strictly increasing positive atoms, matching
    /// nonnegative weights, and mass at infinity summing to one.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>, mass_at_infinity: f64) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if !atoms.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(Error::InvalidModel(
                "atoms must be finite and > 0".into(),
            ));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidModel(
                "atoms must be strictly increasing".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidModel("weights must be >= 0".into()));
        }
        if !(0.0..=1.0 + WEIGHT_SUM_TOL).contains(&mass_at_infinity) {
            return Err(Error::InvalidModel(format!(
                "mass_at_infinity must lie in [0,1], got {mass_at_infinity}"
            )));
        }
        let total: f64 = weights.iter().sum::<f64>() + mass_at_infinity;
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "weights plus mass_at_infinity must sum to 1, got {total}"
            )));
        }
        Ok(MixingMeasure {
            atoms,
            weights,
            mass_at_infinity,
        })
    }

    /// Point mass at a single finite rate.
    pub fn dirac(lambda: f64) -> Result<Self> {
        MixingMeasure::new(vec![lambda], vec![1.0], 0.0)
    }

    /// The degenerate measure with all mass at infinity (prior atom at 0).
    pub fn dirac_infinity() -> Self {
        MixingMeasure {
            atoms: Vec::new(),
            weights: Vec::new(),
            mass_at_infinity: 1.0,
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass_at_infinity(&self) -> f64 {
        self.mass_at_infinity
    }
}

/// Log of the negative-binomial mixture kernel r_{κ,λ}(x): the pmf of a
/// count with mean parameter integrated over Gamma(κ, λ). For λ = ∞ the
/// kernel degenerates to the indicator of x = 0.
pub fn nb_log_kernel(kappa: f64, lam: f64, x: u32) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::domain(format!(
            "nb_log_kernel requires kappa > 0, got {kappa}"
        )));
    }
    if lam.is_infinite() && lam > 0.0 {
        return Ok(if x == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::domain(format!(
            "nb_log_kernel requires lam > 0 or +inf, got {lam}"
        )));
    }
    let xf = f64::from(x);
    // kappa*(ln λ - ln(λ+1)) = -kappa*ln(1 + 1/λ), kept in ln_1p form so
    // large rates do not cancel.
    Ok(log_gamma(xf + kappa)? - ln_factorial(x) - log_gamma(kappa)?
        - xf * (lam + 1.0).ln()
        - kappa * (1.0 / lam).ln_1p())
}

/// Poisson log pmf ln p_θ(x).
pub(crate) fn poisson_log_pmf(x: u32, theta: f64) -> f64 {
    if theta <= 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    f64::from(x) * theta.ln() - theta - ln_factorial(x)
}

/// Streaming log-sum-exp over `n` terms produced by `term`.
fn log_sum_exp_by<F: Fn(usize) -> f64>(n: usize, term: F) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for j in 0..n {
        let t = term(j);
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for j in 0..n {
        sum += (term(j) - max).exp();
    }
    max + sum.ln()
}

/// Gamma shape κ plus a mixing measure over rates; evaluator for the
/// marginal pmf, prior density, posterior density, and posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMixtureModel {
    kappa: f64,
    mixing: MixingMeasure,
    n_fit: usize,
    loglik: Option<f64>,
    // caches, fixed at construction
    ln_weights: Vec<f64>,
    ln_lam_plus1: Vec<f64>,
    kappa_ln_lam: Vec<f64>,
    kappa_ln_ratio: Vec<f64>,
    ln_gamma_kappa: f64,
}

impl GammaMixtureModel {
    pub fn new(kappa: f64, mixing: MixingMeasure) -> Result<Self> {
        Self::with_fit_info(kappa, mixing, 0, None)
    }

    pub fn with_fit_info(
        kappa: f64,
        mixing: MixingMeasure,
        n_fit: usize,
        loglik: Option<f64>,
    ) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidModel(format!(
                "kappa must be > 0, got {kappa}"
            )));
        }
        let ln_weights = mixing.weights.iter().map(|w| w.ln()).collect();
        let ln_lam_plus1 = mixing.atoms.iter().map(|l| (l + 1.0).ln()).collect();
        let kappa_ln_lam = mixing.atoms.iter().map(|l| kappa * l.ln()).collect();
        let kappa_ln_ratio = mixing
            .atoms
            .iter()
            .map(|l| -kappa * (1.0 / l).ln_1p())
            .collect();
        let ln_gamma_kappa = log_gamma(kappa)?;
        Ok(GammaMixtureModel {
            kappa,
            mixing,
            n_fit,
            loglik,
            ln_weights,
            ln_lam_plus1,
            kappa_ln_lam,
            kappa_ln_ratio,
            ln_gamma_kappa,
        })
    }

    /// Convenience constructor for a single-atom (conjugate) model.
    pub fn single_atom(kappa: f64, lambda: f64) -> Result<Self> {
        GammaMixtureModel::new(kappa, MixingMeasure::dirac(lambda)?)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mixing(&self) -> &MixingMeasure {
        &self.mixing
    }

    pub fn n_fit(&self) -> usize {
        self.n_fit
    }

    pub fn loglik(&self) -> Option<f64> {
        self.loglik
    }

    /// Smallest finite atom, if any.
    pub fn lambda_min(&self) -> Option<f64> {
        self.mixing.atoms.first().copied()
    }

    fn n_atoms(&self) -> usize {
        self.mixing.atoms.len()
    }

    /// ln r_{κ,λ_j}(x) using the cached per-atom terms.
    fn ln_kernel_atom(&self, j: usize, x: u32) -> f64 {
        let xf = f64::from(x);
        let ln_gamma_xk = log_gamma(xf + self.kappa).expect("x + kappa > 0");
        ln_gamma_xk - ln_factorial(x) - self.ln_gamma_kappa - xf * self.ln_lam_plus1[j]
            + self.kappa_ln_ratio[j]
    }

    /// Log marginal pmf over the full measure, including the infinity atom
    /// contribution at x = 0.
    pub fn log_marginal_pmf(&self, x: u32) -> f64 {
        let extra = x == 0 && self.mixing.mass_at_infinity > 0.0;
        let n = self.n_atoms() + usize::from(extra);
        log_sum_exp_by(n, |j| {
            if j < self.n_atoms() {
                self.ln_weights[j] + self.ln_kernel_atom(j, x)
            } else {
                self.mixing.mass_at_infinity.ln()
            }
        })
    }

    /// Marginal pmf f(x).
    pub fn marginal_pmf(&self, x: u32) -> f64 {
        self.log_marginal_pmf(x).exp()
    }

    /// Log marginal pmf restricted to the finite-atom part of the measure.
    fn log_marginal_pmf_finite(&self, x: u32) -> f64 {
        log_sum_exp_by(self.n_atoms(), |j| {
            self.ln_weights[j] + self.ln_kernel_atom(j, x)
        })
    }

    /// Log prior density of the latent mean at θ > 0 (finite-atom part;
    /// mass at infinity corresponds to a prior atom at θ = 0 tracked as
    /// measure mass, not density).
    pub fn prior_log_density(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0) {
            return Err(Error::domain(format!(
                "prior density requires theta > 0, got {theta}"
            )));
        }
        let inner = log_sum_exp_by(self.n_atoms(), |j| {
            self.ln_weights[j] + self.kappa_ln_lam[j] - self.mixing.atoms[j] * theta
        });
        Ok((self.kappa - 1.0) * theta.ln() - self.ln_gamma_kappa + inner)
    }

    /// Prior density g(θ).
    pub fn prior_density(&self, theta: f64) -> Result<f64> {
        Ok(self.prior_log_density(theta)?.exp())
    }

    /// Log posterior density ln π(θ | x), normalized against the
    /// finite-atom part of the marginal so it integrates to one.
    pub fn posterior_log_density(&self, theta: f64, x: u32) -> Result<f64> {
        if !(theta > 0.0) {
            return Err(Error::domain(format!(
                "posterior density requires theta > 0, got {theta}"
            )));
        }
        let ln_f = self.log_marginal_pmf_finite(x);
        if ln_f == f64::NEG_INFINITY {
            return Err(Error::evaluation(format!(
                "marginal pmf vanishes at x = {x}; posterior undefined"
            )));
        }
        let inner = log_sum_exp_by(self.n_atoms(), |j| {
            self.ln_weights[j] + self.kappa_ln_lam[j] - (self.mixing.atoms[j] + 1.0) * theta
        });
        Ok((f64::from(x) + self.kappa - 1.0) * theta.ln() + inner
            - ln_factorial(x)
            - self.ln_gamma_kappa
            - ln_f)
    }

    /// Posterior density π(θ | x).
    pub fn posterior_density(&self, theta: f64, x: u32) -> Result<f64> {
        Ok(self.posterior_log_density(theta, x)?.exp())
    }

    /// Posterior mean E[θ | X = x] via the ratio (x+1) f(x+1) / f(x).
    /// The degenerate all-mass-at-infinity fit predicts 0 for every x.
    pub fn posterior_mean(&self, x: u32) -> Result<f64> {
        if self.n_atoms() == 0 {
            return Ok(0.0);
        }
        let ln_fx = self.log_marginal_pmf(x);
        if ln_fx == f64::NEG_INFINITY {
            return Err(Error::evaluation(format!(
                "marginal pmf vanishes at x = {x}; posterior mean undefined"
            )));
        }
        let ln_fx1 = self.log_marginal_pmf(x + 1);
        Ok((f64::from(x) + 1.0) * (ln_fx1 - ln_fx).exp())
    }

    /// Smallest X with cumulative marginal mass at least 1 - eps, located
    /// by doubling the scan horizon.
    pub fn tail_cutoff(&self, eps: f64) -> Result<u32> {
        let target = 1.0 - eps;
        let mut cum = 0.0;
        let mut x = 0u32;
        let mut horizon = 16u32;
        loop {
            while x <= horizon {
                cum += self.marginal_pmf(x);
                if cum >= target {
                    return Ok(x);
                }
                x += 1;
            }
            if horizon >= 20_000_000 {
                return Err(Error::evaluation(format!(
                    "marginal tail cutoff not reached by x = {horizon} (cumulative {cum})"
                )));
            }
            horizon *= 2;
        }
    }

    /// θ beyond which the prior carries mass below `eps`, from the
    /// componentwise Gamma quantiles.
    pub fn prior_tail_quantile(&self, eps: f64) -> Result<f64> {
        let mut theta_max: f64 = 0.0;
        for &lam in &self.mixing.atoms {
            theta_max = theta_max.max(gamma_quantile(1.0 - eps, self.kappa, lam)?);
        }
        Ok(theta_max)
    }

    /// Integral of the prior density over (0, ∞) by adaptive quadrature
    /// with panels split at each atom scale 1/λ.
    pub fn prior_density_integral(&self, abs_tol: f64) -> Result<f64> {
        if self.n_atoms() == 0 {
            return Ok(0.0);
        }
        let theta_max = self.prior_tail_quantile(1e-10)?;
        let mut points: Vec<f64> = vec![0.0];
        for &lam in self.mixing.atoms.iter().rev() {
            for scale in [1.0 / lam, self.kappa / lam] {
                if scale < theta_max {
                    points.push(scale);
                }
            }
        }
        points.push(theta_max);
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quad::integrate_segments(
            |t| {
                if t <= 0.0 {
                    0.0
                } else {
                    self.prior_density(t).unwrap_or(0.0)
                }
            },
            &points,
            abs_tol,
        )
    }

    /// Serializes to the model JSON schema.
    pub fn to_json_string(&self) -> Result<String> {
        let json = ModelJson {
            kappa: self.kappa,
            atoms: self.mixing.atoms.clone(),
            weights: self.mixing.weights.clone(),
            mass_at_infinity: self.mixing.mass_at_infinity,
            loglik: self.loglik,
            n_fit: self.n_fit as u64,
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    /// Parses and validates the model JSON schema.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let json: ModelJson = serde_json::from_str(s)?;
        let mixing = MixingMeasure::new(json.atoms, json.weights, json.mass_at_infinity)?;
        GammaMixtureModel::with_fit_info(json.kappa, mixing, json.n_fit as usize, json.loglik)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    kappa: f64,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    mass_at_infinity: f64,
    loglik: Option<f64>,
    n_fit: u64,
}

/// Convergence-rate exponent α*(L, U) for mixing measures supported on
/// [L, U]: the balance point between the geometric approximation factor
/// ρ = 2^{-τ} and the basis-coefficient growth factor B.
pub fn alpha_star(lower: f64, upper: f64) -> Result<f64> {
    if !(lower > 0.0 && upper > lower) || !upper.is_finite() {
        return Err(Error::domain(format!(
            "alpha_star requires 0 < L < U < inf, got L={lower}, U={upper}"
        )));
    }
    let tau = (0.25f64).min(
        std::f64::consts::E * lower * (1.0 + lower)
            / (4.0 * (upper - lower) * (1.0 + lower + upper)),
    );
    let ln_inv_rho = tau * std::f64::consts::LN_2;
    let ln_b = (4.0 + 3.0 * lower + 3.0 * upper + 2.0 * lower * upper) / (upper - lower);
    Ok(ln_inv_rho / (2.0 * (ln_b + ln_inv_rho)))
}

/// Nonnegative integer observations with cached aggregates: maximum,
/// multiplicities of distinct values, and exact empirical pmf/cdf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSample {
    counts: Vec<u32>,
    max_count: u32,
    // (value, multiplicity), sorted by value, plus cumulative multiplicity
    distinct: Vec<(u32, usize)>,
    cumulative: Vec<usize>,
}

impl CountSample {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::domain("count sample must be nonempty"));
        }
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let max_count = *sorted.last().unwrap();
        let mut distinct: Vec<(u32, usize)> = Vec::new();
        for &c in &sorted {
            match distinct.last_mut() {
                Some((v, m)) if *v == c => *m += 1,
                _ => distinct.push((c, 1)),
            }
        }
        let mut cumulative = Vec::with_capacity(distinct.len());
        let mut acc = 0usize;
        for &(_, m) in &distinct {
            acc += m;
            cumulative.push(acc);
        }
        debug_assert_eq!(acc, counts.len());
        Ok(CountSample {
            counts,
            max_count,
            distinct,
            cumulative,
        })
    }

    /// Observations in their original order.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn max_count(&self) -> u32 {
        self.max_count
    }

    /// Distinct observed values with multiplicities, ascending.
    pub fn distinct(&self) -> &[(u32, usize)] {
        &self.distinct
    }

    /// Empirical pmf at x (multiplicity over n; exact rational over n).
    pub fn empirical_pmf(&self, x: u32) -> f64 {
        match self.distinct.binary_search_by_key(&x, |&(v, _)| v) {
            Ok(i) => self.distinct[i].1 as f64 / self.n() as f64,
            Err(_) => 0.0,
        }
    }

    /// Empirical cdf at x; equals 1 exactly at and beyond the maximum.
    pub fn empirical_cdf(&self, x: u32) -> f64 {
        match self.distinct.binary_search_by_key(&x, |&(v, _)| v) {
            Ok(i) => self.cumulative[i] as f64 / self.n() as f64,
            Err(0) => 0.0,
            Err(i) => self.cumulative[i - 1] as f64 / self.n() as f64,
        }
    }

    /// Empirical cdf tabulated on 0..=max_count.
    pub fn empirical_cdf_table(&self) -> Vec<f64> {
        (0..=self.max_count).map(|x| self.empirical_cdf(x)).collect()
    }
}
