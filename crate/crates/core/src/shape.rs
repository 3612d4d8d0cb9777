//! Estimation of the minimal Gamma shape parameter by the neighborhood
//! procedure: for each candidate shape κ, the best Kolmogorov–Smirnov fit
//! of a grid mixture to the empirical count cdf is a small linear program;
//! κ̂ is the smallest grid shape whose fit comes within a radius η.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::CountSample;
use crate::npmle::{self, log_spaced};
use crate::rng::Rng;
use crate::simplex::{solve, LpProblem};

/// Rule for the neighborhood radius η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// Use this value directly.
    Fixed(f64),
    /// η = C·sqrt(ln n / n) with the given C > 1/sqrt(2).
    Dkw(f64),
    /// K-fold cross-validation over a candidate grid.
    Cv,
}

impl std::str::FromStr for EtaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cv" {
            return Ok(EtaRule::Cv);
        }
        if let Some(c) = s.strip_prefix("dkw:") {
            let c: f64 = c
                .parse()
                .map_err(|_| Error::domain(format!("bad dkw constant in eta rule '{s}'")))?;
            return Ok(EtaRule::Dkw(c));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::domain(format!("bad eta rule '{s}' (want value, dkw:C, or cv)")))?;
        Ok(EtaRule::Fixed(v))
    }
}

/// Configuration of the shape-selection procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaConfig {
    /// Candidate shapes, strictly increasing.
    #[serde(default = "default_kappa_grid")]
    pub kappa_grid: Vec<f64>,
    /// Atoms per candidate shape in the KS linear program.
    #[serde(default = "default_atom_grid_size")]
    pub atom_grid_size: usize,
    #[serde(default = "default_eta_rule")]
    pub eta: EtaRule,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    /// Candidate radii for cross-validation; empty selects
    /// C·sqrt(ln n / n) over C in {0.3, 0.5, 0.75, 1.0, 1.5, 2.0}.
    #[serde(default)]
    pub cv_eta_grid: Vec<f64>,
}

fn default_kappa_grid() -> Vec<f64> {
    (1..=60).map(|i| f64::from(i) / 10.0).collect()
}

fn default_atom_grid_size() -> usize {
    150
}

fn default_eta_rule() -> EtaRule {
    EtaRule::Cv
}

fn default_cv_folds() -> usize {
    5
}

impl Default for KappaConfig {
    fn default() -> Self {
        KappaConfig {
            kappa_grid: default_kappa_grid(),
            atom_grid_size: default_atom_grid_size(),
            eta: default_eta_rule(),
            cv_folds: default_cv_folds(),
            cv_eta_grid: Vec::new(),
        }
    }
}

impl KappaConfig {
    fn validate(&self) -> Result<()> {
        if self.kappa_grid.is_empty() {
            return Err(Error::domain("kappa_grid must be nonempty"));
        }
        if self
            .kappa_grid
            .windows(2)
            .any(|w| w[0] >= w[1] || w[0] <= 0.0)
        {
            return Err(Error::domain(
                "kappa_grid must be strictly increasing and positive",
            ));
        }
        if self.cv_folds < 2 {
            return Err(Error::domain("cv_folds must be at least 2"));
        }
        if self.atom_grid_size == 0 {
            return Err(Error::domain("atom_grid_size must be positive"));
        }
        Ok(())
    }
}

/// Kolmogorov–Smirnov distance between two cdf tables over a common range.
pub fn ks_distance(f1: &[f64], f2: &[f64]) -> Result<f64> {
    if f1.len() != f2.len() || f1.is_empty() {
        return Err(Error::domain(format!(
            "cdf tables must share a nonempty range, got lengths {} and {}",
            f1.len(),
            f2.len()
        )));
    }
    Ok(f1
        .iter()
        .zip(f2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Cumulative kernel column: F_{λ,κ}(m) for m = 0..=m_max, via the
/// pmf recurrence r(x+1) = r(x)·(x+κ)/((x+1)(λ+1)).
fn kernel_cdf_column(kappa: f64, lam: f64, m_max: u32) -> Vec<f64> {
    let mut pmf = (kappa * (lam / (lam + 1.0)).ln()).exp();
    let mut cdf = Vec::with_capacity(m_max as usize + 1);
    let mut acc = pmf;
    cdf.push(acc);
    for x in 0..m_max {
        pmf *= (f64::from(x) + kappa) / ((f64::from(x) + 1.0) * (lam + 1.0));
        acc += pmf;
        cdf.push(acc.min(1.0));
    }
    cdf
}

/// Result of the Chebyshev KS fit at one shape.
#[derive(Debug, Clone)]
pub struct MinKsFit {
    /// Mixing weights over the supplied atoms.
    pub weights: Vec<f64>,
    /// Optimal KS distance δ.
    pub delta: f64,
    /// |achieved KS distance − LP objective|; near zero certifies an
    /// active constraint at the optimum.
    pub active_residual: f64,
    /// Dual feasibility residual of the simplex solution.
    pub dual_residual: f64,
}

/// Best KS fit of a grid mixture to a sample's empirical cdf.
pub fn min_ks_fit(sample: &CountSample, kappa: f64, atoms: &[f64]) -> Result<MinKsFit> {
    min_ks_fit_cdf(&sample.empirical_cdf_table(), kappa, atoms)
}

/// Best KS fit against an arbitrary target cdf table on 0..=m_max.
pub fn min_ks_fit_cdf(target_cdf: &[f64], kappa: f64, atoms: &[f64]) -> Result<MinKsFit> {
    if atoms.is_empty() {
        return Err(Error::domain("atom grid must be nonempty"));
    }
    if target_cdf.is_empty() {
        return Err(Error::domain("target cdf must be nonempty"));
    }
    if !(kappa > 0.0) {
        return Err(Error::domain(format!("kappa must be > 0, got {kappa}")));
    }
    let m_max = (target_cdf.len() - 1) as u32;
    let n_atoms = atoms.len();
    let columns: Vec<Vec<f64>> = atoms
        .iter()
        .map(|&lam| kernel_cdf_column(kappa, lam, m_max))
        .collect();

    // Variables (w_1..w_M, t): minimize t subject to
    //   Σ_j F_j(m) w_j - t <= F_n(m) and -Σ_j F_j(m) w_j - t <= -F_n(m).
    let mut ub_rows = Vec::with_capacity(2 * target_cdf.len());
    for (m, &target) in target_cdf.iter().enumerate() {
        let mut pos = Vec::with_capacity(n_atoms + 1);
        let mut neg = Vec::with_capacity(n_atoms + 1);
        for col in &columns {
            pos.push(col[m]);
            neg.push(-col[m]);
        }
        pos.push(-1.0);
        neg.push(-1.0);
        ub_rows.push((pos, target));
        ub_rows.push((neg, -target));
    }
    let mut simplex_row = vec![1.0; n_atoms];
    simplex_row.push(0.0);
    let mut objective = vec![0.0; n_atoms];
    objective.push(1.0);
    let problem = LpProblem {
        objective,
        ub_rows,
        eq_rows: vec![(simplex_row, 1.0)],
    };
    let solution = solve(&problem)?;

    let mut weights: Vec<f64> = solution.x[..n_atoms]
        .iter()
        .map(|&w| w.max(0.0))
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Solver("LP returned a zero weight vector".into()));
    }
    for w in &mut weights {
        *w /= total;
    }
    let delta = solution.objective.max(0.0);
    // Achieved distance re-evaluated from the weights.
    let mut achieved = 0.0f64;
    for (m, &target) in target_cdf.iter().enumerate() {
        let fitted: f64 = weights
            .iter()
            .zip(&columns)
            .map(|(w, col)| w * col[m])
            .sum();
        achieved = achieved.max((fitted - target).abs());
    }
    Ok(MinKsFit {
        weights,
        delta,
        active_residual: (achieved - delta).abs(),
        dual_residual: solution.dual_residual,
    })
}

/// Atom grid for the KS linear program at shape κ.
fn lp_atom_grid(sample: &CountSample, kappa: f64, size: usize) -> Vec<f64> {
    let lo = if sample.max_count() == 0 {
        kappa
    } else {
        kappa / f64::from(sample.max_count())
    };
    let hi = (10.0 * kappa * sample.n() as f64).min(1e6).max(lo * 10.0);
    log_spaced(lo, hi, size)
}

/// Radius profile value δ_{n,M}(κ) at one shape.
pub fn delta_at(sample: &CountSample, kappa: f64, config: &KappaConfig) -> Result<f64> {
    let atoms = lp_atom_grid(sample, kappa, config.atom_grid_size);
    Ok(min_ks_fit(sample, kappa, &atoms)?.delta)
}

/// Full (κ, δ) profile over the candidate grid.
pub fn delta_profile(sample: &CountSample, config: &KappaConfig) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    config
        .kappa_grid
        .iter()
        .map(|&k| Ok((k, delta_at(sample, k, config)?)))
        .collect()
}

/// Result of the neighborhood procedure.
#[derive(Debug, Clone)]
pub struct KappaEstimate {
    pub kappa_hat: f64,
    /// True when no grid shape met the radius and the largest grid value
    /// was returned as a fallback.
    pub saturated: bool,
    /// The (κ, δ) pairs evaluated along the way, ascending in κ.
    pub profile: Vec<(f64, f64)>,
}

/// Smallest grid shape whose KS radius is within `eta`. Exploits the
/// monotone nonincreasing profile by binary search, with verification at
/// the boundary and its predecessor.
pub fn estimate_kappa(
    sample: &CountSample,
    eta: f64,
    config: &KappaConfig,
) -> Result<KappaEstimate> {
    config.validate()?;
    if !(eta > 0.0) {
        return Err(Error::domain(format!("eta must be > 0, got {eta}")));
    }
    let grid = &config.kappa_grid;
    let mut evaluated: Vec<(usize, f64)> = Vec::new();
    let eval = |idx: usize, evaluated: &mut Vec<(usize, f64)>| -> Result<f64> {
        if let Some(&(_, d)) = evaluated.iter().find(|&&(i, _)| i == idx) {
            return Ok(d);
        }
        let d = delta_at(sample, grid[idx], config)?;
        evaluated.push((idx, d));
        Ok(d)
    };

    // Binary search for the first index with δ <= eta.
    let mut lo = 0usize;
    let mut hi = grid.len(); // exclusive; hi == len means "none found yet"
    let d_last = eval(grid.len() - 1, &mut evaluated)?;
    if d_last <= eta {
        hi = grid.len() - 1;
    }
    let d_first = eval(0, &mut evaluated)?;
    if d_first <= eta {
        hi = 0;
    } else {
        lo = 1;
    }
    while lo < hi.min(grid.len() - 1) {
        let mid = (lo + hi.min(grid.len() - 1)) / 2;
        let d = eval(mid, &mut evaluated)?;
        if d <= eta {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }

    let (kappa_hat, saturated) = if hi >= grid.len() {
        (grid[grid.len() - 1], true)
    } else {
        // verification at the boundary and its predecessor
        let d = eval(hi, &mut evaluated)?;
        debug_assert!(d <= eta);
        if hi > 0 {
            let d_prev = eval(hi - 1, &mut evaluated)?;
            debug_assert!(d_prev > eta);
        }
        (grid[hi], false)
    };

    evaluated.sort_by(|a, b| a.0.cmp(&b.0));
    // The profile must be nonincreasing in κ (nestedness of the shape
    // families); a material violation flags an LP failure.
    for w in evaluated.windows(2) {
        if w[1].1 > w[0].1 + 1e-9 {
            return Err(Error::evaluation(format!(
                "KS radius profile not monotone: delta({}) = {:.3e} < delta({}) = {:.3e}",
                grid[w[0].0],
                w[0].1,
                grid[w[1].0],
                w[1].1
            )));
        }
    }
    let profile = evaluated
        .into_iter()
        .map(|(i, d)| (grid[i], d))
        .collect();
    Ok(KappaEstimate {
        kappa_hat,
        saturated,
        profile,
    })
}

/// DKW-style radius η = C·sqrt(ln n / n); requires C > 1/sqrt(2) so the
/// almost-sure coverage of the empirical cdf band applies.
pub fn dkw_eta(n: usize, c: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("dkw_eta requires n >= 2"));
    }
    if !(c > std::f64::consts::FRAC_1_SQRT_2) {
        return Err(Error::domain(format!(
            "dkw_eta requires C > 1/sqrt(2) = 0.7071..., got {c}"
        )));
    }
    let nf = n as f64;
    Ok(c * (nf.ln() / nf).sqrt())
}

/// Cross-validated radius choice.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub eta: f64,
    /// (candidate η, mean held-out log-likelihood) pairs, ascending in η.
    pub scores: Vec<(f64, f64)>,
}

/// Floor for held-out log marginal mass at counts beyond the fitted
/// model's representable tail.
const HELD_OUT_LOG_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Selects η by K-fold cross-validation: for each fold and candidate,
/// estimate κ̂ on the training counts, fit the smooth NPMLE at κ̂, and score
/// the mean held-out log marginal likelihood. Ties break toward larger η.
pub fn cv_select_eta(
    sample: &CountSample,
    config: &KappaConfig,
    rng: &mut Rng,
) -> Result<CvSelection> {
    config.validate()?;
    let n = sample.n();
    if n < config.cv_folds {
        return Err(Error::domain(format!(
            "need at least {} observations for {}-fold cross-validation, got {n}",
            config.cv_folds, config.cv_folds
        )));
    }
    let mut candidates = if config.cv_eta_grid.is_empty() {
        [0.3, 0.5, 0.75, 1.0, 1.5, 2.0]
            .iter()
            .map(|c| c * ((n as f64).ln() / n as f64).sqrt())
            .collect::<Vec<f64>>()
    } else {
        config.cv_eta_grid.clone()
    };
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if candidates.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::domain("cv_eta_grid entries must be > 0"));
    }

    // Seeded Fisher–Yates permutation defines the folds.
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    let folds = config.cv_folds;
    let mut fold_of = vec![0usize; n];
    for (rank, &idx) in perm.iter().enumerate() {
        fold_of[idx] = rank * folds / n;
    }

    let mut sums = vec![0.0f64; candidates.len()];
    for fold in 0..folds {
        let mut train = Vec::with_capacity(n);
        let mut valid = Vec::new();
        for (i, &c) in sample.counts().iter().enumerate() {
            if fold_of[i] == fold {
                valid.push(c);
            } else {
                train.push(c);
            }
        }
        if valid.is_empty() {
            continue;
        }
        let train_sample = CountSample::new(train)?;
        let profile = delta_profile(&train_sample, config)?;
        let mut fits: Vec<(f64, crate::mixture::GammaMixtureModel)> = Vec::new();
        for (ci, &eta) in candidates.iter().enumerate() {
            let kappa_hat = profile
                .iter()
                .find(|&&(_, d)| d <= eta)
                .map(|&(k, _)| k)
                .unwrap_or_else(|| config.kappa_grid[config.kappa_grid.len() - 1]);
            let model = match fits.iter().find(|(k, _)| *k == kappa_hat) {
                Some((_, m)) => m.clone(),
                None => {
                    let (m, _) = npmle::fit_npmle(
                        &train_sample,
                        kappa_hat,
                        &npmle::SolverConfig::default(),
                    )?;
                    fits.push((kappa_hat, m.clone()));
                    m
                }
            };
            let score: f64 = valid
                .iter()
                .map(|&x| model.log_marginal_pmf(x).max(HELD_OUT_LOG_FLOOR))
                .sum::<f64>()
                / valid.len() as f64;
            sums[ci] += score;
        }
    }

    let scores: Vec<(f64, f64)> = candidates
        .iter()
        .zip(&sums)
        .map(|(&e, &s)| (e, s / folds as f64))
        .collect();
    // ascending candidates + ">=" keeps the largest η among ties
    let mut best = scores[0];
    for &p in &scores[1..] {
        if p.1 >= best.1 {
            best = p;
        }
    }
    Ok(CvSelection {
        eta: best.0,
        scores,
    })
}

/// Resolves an [`EtaRule`] to a concrete radius, returning the rule name
/// for reporting.
pub fn resolve_eta(
    sample: &CountSample,
    config: &KappaConfig,
    rng: &mut Rng,
) -> Result<(f64, &'static str)> {
    match config.eta {
        EtaRule::Fixed(v) => {
            if !(v > 0.0) {
                return Err(Error::domain(format!("fixed eta must be > 0, got {v}")));
            }
            Ok((v, "fixed"))
        }
        EtaRule::Dkw(c) => Ok((dkw_eta(sample.n(), c)?, "dkw")),
        EtaRule::Cv => Ok((cv_select_eta(sample, config, rng)?.eta, "cv")),
    }
}

/// Shape-selection report in the stable JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa_hat: f64,
    pub eta: f64,
    pub eta_rule: String,
    pub profile: Vec<(f64, f64)>,
}
