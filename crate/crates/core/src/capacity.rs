//! Capacity expressions for intensity-modulated MIMO links under peak and
//! average intensity constraints. All values are in nats.
//!
//! Three constraint regimes are covered:
//!
//! * Case I: peak and average constraints with `alpha` in (0, 1/2).
//! * Case II: peak and average constraints with `alpha` in [1/2, 1]; the
//!   average constraint is inactive and the result equals `alpha = 1/2`.
//! * Case III: average constraint only (`alpha -> 0`).
//!
//! Every asymptotic capacity is a regime-dependent offset plus the common
//! term `1/2 ln det(H^T K^-1 H) + sum ln X_i`.

use std::f64::consts::{E, PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::align_opt::cholesky_inverse_factor;
use crate::error::{Error, Result};
use crate::linalg::{factor_logdet, inverse_spd, softplus, LogDet};

const MU_BRACKET: (f64, f64) = (1e-9, 1e6);
const MU_MAX_ITER: usize = 200;

/// Intensity constraint regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapacityCase {
    #[serde(rename = "I")]
    CaseI,
    #[serde(rename = "II")]
    CaseII,
    #[serde(rename = "III")]
    CaseIII,
}

impl CapacityCase {
    /// Regime implied by a peak/average ratio.
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 0.5 {
            Ok(Self::CaseI)
        } else if (0.5..=1.0).contains(&alpha) {
            Ok(Self::CaseII)
        } else {
            Err(Error::OutOfRange(format!("alpha = {alpha} is outside (0, 1]")))
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::CaseI => "I",
            Self::CaseII => "II",
            Self::CaseIII => "III",
        }
    }

    pub fn check_alpha(self, alpha: f64) -> Result<()> {
        let ok = match self {
            Self::CaseI => alpha > 0.0 && alpha < 0.5,
            Self::CaseII => (0.5..=1.0).contains(&alpha),
            Self::CaseIII => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::CaseMismatch {
                case: self.label().into(),
                alpha,
            })
        }
    }
}

impl std::str::FromStr for CapacityCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" | "CASEI" => Ok(Self::CaseI),
            "II" | "2" | "CASEII" => Ok(Self::CaseII),
            "III" | "3" | "CASEIII" => Ok(Self::CaseIII),
            other => Err(Error::InvalidConfig(format!("unknown case '{other}'"))),
        }
    }
}

/// Peak vector, average vector and their ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConstraintSet {
    /// Peak intensities `A_i` (infinite when only the average is constrained).
    pub peak: Vec<f64>,
    /// Average intensities `E_i`.
    pub average: Vec<f64>,
    /// `E = sum E_i`.
    pub total_average: f64,
    /// `E / sum A_i`; zero for average-only constraints.
    pub alpha: f64,
}

impl PowerConstraintSet {
    /// Peak-constrained set with `E_i = alpha * A_i`.
    pub fn with_ratio(peak: &[f64], alpha: f64) -> Result<Self> {
        if peak.is_empty() || peak.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::OutOfRange("peak intensities must be positive".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::OutOfRange(format!("alpha = {alpha} is outside (0, 1]")));
        }
        let average: Vec<f64> = peak.iter().map(|a| a * alpha).collect();
        Ok(Self {
            peak: peak.to_vec(),
            total_average: average.iter().sum(),
            average,
            alpha,
        })
    }

    /// Average-only set (Case III).
    pub fn average_only(average: &[f64]) -> Result<Self> {
        if average.is_empty() || average.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::OutOfRange("average intensities must be positive".into()));
        }
        Ok(Self {
            peak: vec![f64::INFINITY; average.len()],
            average: average.to_vec(),
            total_average: average.iter().sum(),
            alpha: 0.0,
        })
    }

    /// The intensity vector entering the common objective for `case`.
    pub fn intensities(&self, case: CapacityCase) -> &[f64] {
        match case {
            CapacityCase::CaseIII => &self.average,
            _ => &self.peak,
        }
    }
}

/// Gaussian noise covariance with its whitening factor `S` (`S^T S = K^-1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub k: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Per-branch standard deviation when `K = sigma^2 I`.
    pub sigma: Option<f64>,
}

impl NoiseModel {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::DimensionMismatch("noise covariance must be square".into()));
        }
        let asym = (&k - k.transpose()).amax();
        if asym > 1e-12 * k.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let s = cholesky_inverse_factor(&k)?;
        Ok(Self { k, s, sigma: None })
    }

    /// `K = sigma^2 I`.
    pub fn white(n: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::OutOfRange(format!("noise deviation {sigma} must be positive")));
        }
        Ok(Self {
            k: DMatrix::identity(n, n) * (sigma * sigma),
            s: DMatrix::identity(n, n) / sigma,
            sigma: Some(sigma),
        })
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// `K^-1 = S^T S`.
    pub fn precision(&self) -> DMatrix<f64> {
        self.s.transpose() * &self.s
    }

    /// `H^T K^-1 H`.
    pub fn gram(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let b = &self.s * h;
        b.transpose() * b
    }

    /// `ln det(H^T K^-1 H)`, ridged and flagged when near singular.
    pub fn log_det_gram(&self, h: &DMatrix<f64>) -> LogDet {
        factor_logdet(&(&self.s * h))
    }
}

/// Complementary CDF of the standard normal.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// `1 - 2 Q(x)`, accurate for small `x`.
fn one_minus_two_q(x: f64) -> f64 {
    libm::erf(x / SQRT_2)
}

/// Mean-to-peak ratio of the truncated exponential with rate `mu`:
/// `1/mu - e^-mu / (1 - e^-mu)`.
pub fn alpha_of_mu(mu: f64) -> f64 {
    if mu < 1e-4 {
        0.5 - mu / 12.0 + mu.powi(3) / 720.0
    } else {
        1.0 / mu - 1.0 / mu.exp_m1()
    }
}

/// Root `mu*` of `alpha = 1/mu - e^-mu / (1 - e^-mu)` for `alpha` in (0, 1/2),
/// by bisection on the decreasing map `mu -> alpha(mu)`.
pub fn solve_mu_star(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::OutOfRange(format!("alpha = {alpha} must lie in (0, 1/2)")));
    }
    let (mut lo, mut hi) = MU_BRACKET;
    if alpha > alpha_of_mu(lo) || alpha < alpha_of_mu(hi) {
        return Err(Error::OutOfRange(format!("alpha = {alpha} is outside the solvable bracket")));
    }
    for _ in 0..MU_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if alpha_of_mu(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = ((alpha_of_mu(lo) - alpha).abs(), (alpha_of_mu(hi) - alpha).abs());
    Ok(if rl <= rh { lo } else { hi })
}

/// `ln(1 - alpha mu*)` written through `mu*` alone: `ln mu - ln(e^mu - 1)`.
fn ln_one_minus_alpha_mu(mu: f64) -> f64 {
    let ln_expm1 = if mu > 30.0 { mu + (-(-mu).exp()).ln_1p() } else { mu.exp_m1().ln() };
    mu.ln() - ln_expm1
}

/// Capacity offset `chi(alpha)` for `n_t` transmitters.
pub fn chi(alpha: f64, n_t: usize) -> Result<f64> {
    let nt = n_t as f64;
    let half_ln_2pie = 0.5 * (2.0 * PI * E).ln();
    if alpha > 0.0 && alpha < 0.5 {
        let mu = solve_mu_star(alpha)?;
        Ok(-nt * (half_ln_2pie + ln_one_minus_alpha_mu(mu) + mu * (1.0 - alpha)))
    } else if (0.5..=1.0).contains(&alpha) {
        Ok(-nt * half_ln_2pie)
    } else {
        Err(Error::OutOfRange(format!("alpha = {alpha} is outside (0, 1]")))
    }
}

/// Constant of the average-only asymptotic capacity: `-(N_t/2) ln(2 pi N_t^2 / e)`.
pub fn average_only_offset(n_t: usize) -> f64 {
    let nt = n_t as f64;
    -0.5 * nt * (2.0 * PI * nt * nt / E).ln()
}

fn check_dims(h: &DMatrix<f64>, noise: &NoiseModel, x: &[f64]) -> Result<()> {
    if h.nrows() != noise.dim() || h.ncols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, K is {}x{}, intensity vector has {} entries",
            h.nrows(),
            h.ncols(),
            noise.dim(),
            noise.dim(),
            x.len()
        )));
    }
    if h.nrows() < h.ncols() {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

fn full_rank_log_det(h: &DMatrix<f64>, noise: &NoiseModel) -> Result<f64> {
    let ld = noise.log_det_gram(h);
    if ld.degenerate {
        Err(Error::RankDeficient)
    } else {
        Ok(ld.value)
    }
}

/// Common term `1/2 ln det(H^T K^-1 H) + sum ln X_i`.
pub fn common_objective(h: &DMatrix<f64>, noise: &NoiseModel, x: &[f64]) -> Result<f64> {
    check_dims(h, noise, x)?;
    if x.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::OutOfRange("intensities must be positive".into()));
    }
    let ld = full_rank_log_det(h, noise)?;
    Ok(0.5 * ld + x.iter().map(|v| v.ln()).sum::<f64>())
}

/// High-SNR capacity for the given regime.
pub fn asymptotic_capacity(
    h: &DMatrix<f64>,
    noise: &NoiseModel,
    constraints: &PowerConstraintSet,
    case: CapacityCase,
) -> Result<f64> {
    case.check_alpha(constraints.alpha)?;
    let n_t = h.ncols();
    let x = constraints.intensities(case);
    let common = common_objective(h, noise, x)?;
    let offset = match case {
        CapacityCase::CaseIII => average_only_offset(n_t),
        _ => chi(constraints.alpha, n_t)?,
    };
    Ok(common + offset)
}

/// Per-branch deviations of the equivalent noise `(H^T K^-1 H)^-1`; equal to
/// the diagonal of `H^-1 K H^-T` for square `H`.
pub fn equivalent_noise_deviations(h: &DMatrix<f64>, noise: &NoiseModel) -> Result<Vec<f64>> {
    let cov = inverse_spd(&noise.gram(h)).ok_or(Error::RankDeficient)?;
    Ok(cov.diagonal().iter().map(|v| v.sqrt()).collect())
}

/// One branch of the peak/average upper bound, without the shared
/// `1/2 ln det` term. `sigma` is the branch's equivalent noise deviation.
pub fn upper_bound_branch(peak: f64, sigma: f64, alpha: f64, mu: f64) -> f64 {
    let a = peak;
    let s = sigma;
    // margin around [0, A] where the output law switches to Gaussian tails,
    // chosen so that delta / sigma grows like ln(A / sigma)
    let delta = s * (a / s).ln_1p();
    let r = delta / s;
    let inner = one_minus_two_q(r);
    let outer = one_minus_two_q((2.0 * delta + a) / (2.0 * s));
    let gauss = |u: f64| (-0.5 * u * u).exp();
    let sqrt_2pi = (2.0 * PI).sqrt();

    let t_tail = q_function(r) - 0.5;
    let t_edges = mu * s / (sqrt_2pi * a) * (gauss(r) - gauss((delta + a) / s));
    let t_mean = mu * alpha * outer;
    let t_margin = r / sqrt_2pi * gauss(r);
    let t_var = s.ln();
    // ln(e^{mu d/A} - e^{-mu(1 + d/A)}) = mu d/A + ln(1 - e^{-mu(1 + 2d/A)})
    let ln_span = mu * delta / a + (-(-mu * (1.0 + 2.0 * delta / a)).exp_m1()).ln();
    let t_log = outer * (a.ln() + ln_span - s.ln() - sqrt_2pi.ln() - mu.ln() - inner.ln());
    t_tail + t_edges + t_mean + t_margin + t_var + t_log
}

/// Finite-SNR upper bound for Case I.
pub fn upper_bound_case1(h: &DMatrix<f64>, noise: &NoiseModel, peak: &[f64], alpha: f64) -> Result<f64> {
    check_dims(h, noise, peak)?;
    let mu = solve_mu_star(alpha)?;
    let ld = full_rank_log_det(h, noise)?;
    let sigmas = equivalent_noise_deviations(h, noise)?;
    let branches: f64 = peak
        .iter()
        .zip(&sigmas)
        .map(|(&a, &s)| upper_bound_branch(a, s, alpha, mu))
        .sum();
    Ok(branches + 0.5 * ld)
}

/// Differential entropy of the entropy-maximizing input on LED `i`.
pub fn input_entropy(constraints: &PowerConstraintSet, case: CapacityCase, i: usize) -> Result<f64> {
    let n_t = constraints.average.len() as f64;
    match case {
        CapacityCase::CaseI => {
            let mu = solve_mu_star(constraints.alpha)?;
            let a = constraints.peak[i];
            Ok((a * -(-mu).exp_m1() / mu).ln() + mu * constraints.alpha)
        }
        CapacityCase::CaseII => Ok(constraints.peak[i].ln()),
        CapacityCase::CaseIII => Ok(1.0 + (constraints.average[i] / n_t).ln()),
    }
}

/// Entropy-power-inequality lower bound.
pub fn lower_bound_epi(
    h: &DMatrix<f64>,
    noise: &NoiseModel,
    constraints: &PowerConstraintSet,
    case: CapacityCase,
) -> Result<f64> {
    case.check_alpha(constraints.alpha)?;
    check_dims(h, noise, &constraints.average)?;
    let n_t = h.ncols() as f64;
    let ld = full_rank_log_det(h, noise)?;
    let h_noise = 0.5 * n_t * (2.0 * PI * E).ln() - 0.5 * ld;
    let mut h_input = 0.0;
    for i in 0..h.ncols() {
        h_input += input_entropy(constraints, case, i)?;
    }
    Ok(0.5 * n_t * softplus(2.0 / n_t * (h_input - h_noise)))
}

/// Asymptotic value and finite-SNR bounds for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub asymptotic: f64,
    pub lower: f64,
    /// Only available for Case I.
    pub upper: Option<f64>,
    pub mu_star: Option<f64>,
    /// Set when `H` is tall and the per-branch deviations come from the
    /// generalized (pseudo-inverse) equivalent noise.
    pub tall_channel: bool,
}

/// Evaluates everything available for `case`.
pub fn evaluate(
    h: &DMatrix<f64>,
    noise: &NoiseModel,
    constraints: &PowerConstraintSet,
    case: CapacityCase,
) -> Result<CapacityResult> {
    let asymptotic = asymptotic_capacity(h, noise, constraints, case)?;
    let lower = lower_bound_epi(h, noise, constraints, case)?;
    let (upper, mu_star) = match case {
        CapacityCase::CaseI => (
            Some(upper_bound_case1(h, noise, &constraints.peak, constraints.alpha)?),
            Some(solve_mu_star(constraints.alpha)?),
        ),
        _ => (None, None),
    };
    Ok(CapacityResult {
        asymptotic,
        lower,
        upper,
        mu_star,
        tall_channel: h.nrows() > h.ncols(),
    })
}
