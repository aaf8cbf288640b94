//! Two-group Monte Carlo studies of the robust tests.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(seed, replicate, purpose | row, attempt)`, so each replicate (and each
//! row redraw) is reproducible on its own regardless of scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution as _, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constrained::{AugLagOptions, ConstraintTarget};
use crate::constraint::ConstraintSpec;
use crate::data::{CountMatrix, DesignMatrix};
use crate::error::{Error, Result};
use crate::inference::{robust_score_test, robust_wald_test};
use crate::penalized::{fit_unconstrained, FitOptions};

/// Redraw budget for a single all-zero row.
const MAX_ROW_ATTEMPTS: u64 = 10_000;

const STREAM_COUNTS: u64 = 0;
const STREAM_OFFSETS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CountDistribution {
    Poisson,
    /// `xi * NB(mu, phi)` with `P(xi = 1) = keep`; NB variance `mu + mu^2 / phi`.
    Zinb { phi: f64, keep: f64 },
}

impl CountDistribution {
    pub fn zinb() -> Self {
        Self::Zinb { phi: 5.0, keep: 0.4 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Poisson => "poisson",
            Self::Zinb { .. } => "zinb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    Null,
    /// Target coefficient set to 1.
    WeakAlt,
    /// Target coefficient set to 5.
    StrongAlt,
}

impl Hypothesis {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Null => "null",
            Self::WeakAlt => "weak-alt",
            Self::StrongAlt => "strong-alt",
        }
    }
}

/// Sample-specific offsets `z_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZPolicy {
    #[default]
    Zero,
    /// i.i.d. standard normal.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub n_categories: usize,
    pub distribution: CountDistribution,
    pub hypothesis: Hypothesis,
    pub seed: u64,
    #[serde(default)]
    pub z_policy: ZPolicy,
}

impl SimDesign {
    pub fn new(n: usize, n_categories: usize, distribution: CountDistribution, hypothesis: Hypothesis, seed: u64) -> Self {
        Self { n, n_categories, distribution, hypothesis, seed, z_policy: ZPolicy::Zero }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(Error::InvalidInput(format!("n must be even and at least 4, got {}", self.n)));
        }
        if self.n_categories < 4 {
            return Err(Error::InvalidInput(format!("J must be at least 4, got {}", self.n_categories)));
        }
        if let CountDistribution::Zinb { phi, keep } = self.distribution {
            if !(phi > 0.0 && phi.is_finite()) || !(keep > 0.0 && keep <= 1.0) {
                return Err(Error::InvalidInput(format!("invalid ZINB parameters phi={phi}, keep={keep}")));
            }
        }
        Ok(())
    }

    /// The tested element: row 1, position `floor(J / 2)` counted from one.
    pub fn target(&self) -> ConstraintTarget {
        ConstraintTarget::new(1, self.n_categories / 2 - 1)
    }

    pub fn covariates(&self) -> Result<DesignMatrix<f64>> {
        DesignMatrix::two_group(self.n / 2, self.n / 2)
    }
}

fn linspace(from: f64, to: f64, len: usize) -> Vec<f64> {
    match len {
        0 => vec![],
        1 => vec![from],
        _ => (0..len).map(|i| from + (to - from) * i as f64 / (len - 1) as f64).collect(),
    }
}

/// `2 x J` coefficients of the simulation study.
///
/// Row 0 interleaves an increasing grid on `[-3, 3]` (odd positions, counted
/// from one) with a decreasing one. Row 1 is `5 sinh(x) / sinh(10)` on an even
/// grid over `[-10, 10]`, with positions `m` and `m + 1` zeroed
/// (`m = floor(J / 2)`, from one); alternatives then set position `m`.
pub fn generate_beta(n_categories: usize, hypothesis: Hypothesis) -> Result<DMatrix<f64>> {
    if n_categories < 4 {
        return Err(Error::InvalidInput(format!("J must be at least 4, got {n_categories}")));
    }
    let odd = linspace(-3.0, 3.0, n_categories.div_ceil(2));
    let even = linspace(3.0, -3.0, n_categories / 2);
    let x = linspace(-10.0, 10.0, n_categories);
    let mut beta = DMatrix::zeros(2, n_categories);
    for j in 0..n_categories {
        beta[(0, j)] = if j % 2 == 0 { odd[j / 2] } else { even[j / 2] };
        beta[(1, j)] = 5.0 * x[j].sinh() / 10f64.sinh();
    }
    let m = n_categories / 2 - 1;
    beta[(1, m)] = 0.0;
    beta[(1, m + 1)] = 0.0;
    beta[(1, m)] = match hypothesis {
        Hypothesis::Null => 0.0,
        Hypothesis::WeakAlt => 1.0,
        Hypothesis::StrongAlt => 5.0,
    };
    Ok(beta)
}

/// ChaCha8 stream for one `(seed, replicate, stream, attempt)` tuple.
pub fn stream_rng(seed: u64, replicate: u64, stream: u64, attempt: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, replicate, stream, attempt]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One draw from `distribution` with mean parameter `mu`.
pub fn draw_count<R: Rng + ?Sized>(distribution: &CountDistribution, mu: f64, rng: &mut R) -> f64 {
    let poisson = |lambda: f64, rng: &mut R| {
        if lambda > 0.0 {
            Poisson::new(lambda).map_or(0.0, |d| d.sample(rng))
        } else {
            0.0
        }
    };
    match *distribution {
        CountDistribution::Poisson => poisson(mu, rng),
        CountDistribution::Zinb { phi, keep } => {
            let kept = Bernoulli::new(keep).map_or(true, |d| d.sample(rng));
            let lambda = Gamma::new(phi, mu / phi).map_or(0.0, |d| d.sample(rng));
            let y = poisson(lambda, rng);
            if kept {
                y
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub counts: CountMatrix<f64>,
    pub design: DesignMatrix<f64>,
    pub z: DVector<f64>,
    /// Rows that came out all-zero and were drawn again.
    pub redraws: usize,
}

/// Counts for `replicate` with means `exp(X_i beta^j + z_i)`.
pub fn simulate_counts(design: &SimDesign, beta: &DMatrix<f64>, replicate: u64) -> Result<SimulatedData> {
    design.validate()?;
    let x = design.covariates()?;
    if beta.shape() != (2, design.n_categories) {
        return Err(Error::DimensionMismatch(format!(
            "beta is {}x{}, expected 2x{}",
            beta.nrows(),
            beta.ncols(),
            design.n_categories
        )));
    }
    let n = design.n;
    let z = match design.z_policy {
        ZPolicy::Zero => DVector::zeros(n),
        ZPolicy::Normal => {
            let mut rng = stream_rng(design.seed, replicate, STREAM_OFFSETS, 0);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            DVector::from_fn(n, |_, _| normal.sample(&mut rng))
        }
    };
    let eta = x.values() * beta;
    let mut values = DMatrix::zeros(n, design.n_categories);
    let mut redraws = 0;
    for i in 0..n {
        let mu: Vec<f64> = eta.row(i).iter().map(|&e| (e + z[i]).exp()).collect();
        let mut attempt = 0;
        loop {
            let mut rng = stream_rng(design.seed, replicate, STREAM_COUNTS | i as u64, attempt);
            let mut total = 0.0;
            for (j, &m) in mu.iter().enumerate() {
                let y = draw_count(&design.distribution, m, &mut rng);
                values[(i, j)] = y;
                total += y;
            }
            if total > 0.0 {
                break;
            }
            attempt += 1;
            redraws += 1;
            if attempt >= MAX_ROW_ATTEMPTS {
                return Err(Error::EmptySample { row: i });
            }
        }
    }
    Ok(SimulatedData { counts: CountMatrix::from_matrix(values)?, design: x, z, redraws })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    pub score: bool,
    pub wald: bool,
}

impl Default for TestSet {
    fn default() -> Self {
        Self { score: true, wald: true }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationSettings {
    pub tests: TestSet,
    /// Rejection level.
    pub alpha: f64,
    /// Identifiability constraint of the tested contrast.
    pub constraint: ConstraintSpec<f64>,
    pub fit: FitOptions<f64>,
    pub auglag: AugLagOptions<f64>,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl Default for ReplicationSettings {
    fn default() -> Self {
        Self {
            tests: TestSet::default(),
            alpha: 0.05,
            constraint: ConstraintSpec::PseudoHuber { delta: 0.1 },
            fit: FitOptions::default(),
            auglag: AugLagOptions::default(),
            threads: None,
        }
    }
}

/// Outcome of one replicate. A `None` p-value means the test was not
/// requested or failed; failures carry their message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub score_p_value: Option<f64>,
    pub wald_p_value: Option<f64>,
    pub redraws: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rejections: usize,
    /// Replicates where the test produced a p-value.
    pub completed: usize,
    pub failures: usize,
    pub rate: f64,
}

impl RateSummary {
    fn tally(p_values: impl Iterator<Item = Option<f64>>, alpha: f64) -> Self {
        let (mut rejections, mut completed, mut failures) = (0, 0, 0);
        for p in p_values {
            match p {
                Some(p) => {
                    completed += 1;
                    rejections += (p < alpha) as usize;
                }
                None => failures += 1,
            }
        }
        let rate = if completed > 0 { rejections as f64 / completed as f64 } else { f64::NAN };
        Self { rejections, completed, failures, rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub design: SimDesign,
    pub replicates: usize,
    pub alpha: f64,
    pub score: Option<RateSummary>,
    pub wald: Option<RateSummary>,
    pub total_redraws: usize,
    pub outcomes: Vec<ReplicateOutcome>,
}

impl ReplicationReport {
    pub fn rejection_rate_score(&self) -> Option<f64> {
        self.score.map(|s| s.rate)
    }

    pub fn rejection_rate_wald(&self) -> Option<f64> {
        self.wald.map(|s| s.rate)
    }
}

fn run_one(design: &SimDesign, beta: &DMatrix<f64>, replicate: u64, settings: &ReplicationSettings) -> ReplicateOutcome {
    let mut outcome = ReplicateOutcome { replicate, score_p_value: None, wald_p_value: None, redraws: 0, error: None };
    let mut errors = Vec::new();
    let mut run = || -> Result<()> {
        let data = simulate_counts(design, beta, replicate)?;
        outcome.redraws = data.redraws;
        let constraint = settings.constraint;
        let target = design.target();
        let fit = fit_unconstrained(&data.counts, &data.design, &constraint, &settings.fit)?;
        if settings.tests.wald {
            match robust_wald_test(&data.counts, &data.design, &constraint, target, &fit) {
                Ok(r) => outcome.wald_p_value = Some(r.p_value),
                Err(e) => errors.push(format!("wald: {e}")),
            }
        }
        if settings.tests.score {
            match robust_score_test(&data.counts, &data.design, &constraint, target, &fit, &settings.auglag) {
                Ok(r) => outcome.score_p_value = Some(r.result.p_value),
                Err(e) => errors.push(format!("score: {e}")),
            }
        }
        Ok(())
    };
    if let Err(e) = run() {
        errors.push(e.to_string());
    }
    if !errors.is_empty() {
        outcome.error = Some(errors.join("; "));
    }
    outcome
}

/// Runs `replicates` independent replicates and tallies rejections at
/// `settings.alpha`. Failed replicates are kept in `outcomes` with their
/// error and counted per test; they do not enter the rates.
pub fn run_replications(design: &SimDesign, replicates: usize, settings: &ReplicationSettings) -> Result<ReplicationReport> {
    design.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", settings.alpha)));
    }
    settings.fit.validate()?;
    settings.auglag.validate()?;
    settings.constraint.validate(design.n_categories)?;
    let beta = generate_beta(design.n_categories, design.hypothesis)?;

    let work = || -> Vec<ReplicateOutcome> {
        (0..replicates as u64)
            .into_par_iter()
            .map(|r| run_one(design, &beta, r, settings))
            .collect()
    };
    let outcomes = match settings.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let score = settings
        .tests
        .score
        .then(|| RateSummary::tally(outcomes.iter().map(|o| o.score_p_value), settings.alpha));
    let wald = settings
        .tests
        .wald
        .then(|| RateSummary::tally(outcomes.iter().map(|o| o.wald_p_value), settings.alpha));
    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {replicates} replicates recorded failures");
    }
    Ok(ReplicationReport {
        design: *design,
        replicates,
        alpha: settings.alpha,
        score,
        wald,
        total_redraws: outcomes.iter().map(|o| o.redraws).sum(),
        outcomes,
    })
}
