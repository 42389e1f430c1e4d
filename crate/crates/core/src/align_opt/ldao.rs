//! Alternating corner search on a log-det surrogate. Each outer iteration
//! linearizes `ln det` at the current channel, then updates the LED choice
//! and the PD choice of every element in turn by enumerating the corners of
//! its feasible set.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::objective_f1;
use crate::capacity::NoiseModel;
use crate::channel::{assemble_h2, Alignment, Cascade};
use crate::error::{Error, Result};
use crate::linalg::PIVOT_RATIO;

/// Ridge used when `B~^T B~` is singular.
pub const SURROGATE_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaoConfig {
    pub max_outer: usize,
    /// Stop once the true objective improves by less than this.
    pub tol: f64,
    /// How often the linearization point `B~` is refreshed.
    pub relinearize: Relinearize,
    /// Reject a corner move when it lowers the true objective.
    pub safeguard: bool,
    /// Include the unassigned corner among the candidates.
    pub zero_corner: bool,
}

/// Refresh schedule of the linearization point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relinearize {
    /// Once per outer iteration.
    Outer,
    /// Before the LED sweep and before the PD sweep.
    Sweep,
    /// Before every element update.
    Row,
}

impl Default for LdaoConfig {
    fn default() -> Self {
        Self {
            max_outer: 100,
            tol: 1e-9,
            relinearize: Relinearize::Row,
            safeguard: false,
            zero_corner: true,
        }
    }
}

/// Which half of the assignment a corner search updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Led,
    Pd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaoState {
    /// `S (H1 + H2)` at the last linearization point.
    pub b_tilde: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub alignment: Alignment,
    /// True objective after each accepted outer iteration, starting with the init.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaoOutcome {
    pub state: LdaoState,
    /// `ln det(H^T K^-1 H)` of the returned alignment.
    pub objective: f64,
    pub outer_iterations: usize,
    /// Number of surrogate evaluations spent in corner searches.
    pub corner_evaluations: usize,
    /// An outer iteration lowered the true objective and was undone.
    pub reverted: bool,
    pub hit_cap: bool,
}

impl LdaoOutcome {
    pub fn alignment(&self) -> &Alignment {
        &self.state.alignment
    }
}

/// Quadratic upper bound of `ln det(H^T K^-1 H)` in `H2`, tight at the
/// linearization point. With `B~ = QR` the bound reads
/// `||S (H1 + H2) R^-1||^2 + ln det(B~^T B~) - N_t`.
struct Surrogate {
    /// `R^-1`, so that `R^-1 R^-T = (B~^T B~)^-1`.
    r_inv: DMatrix<f64>,
    s: DMatrix<f64>,
    /// `S H1 R^-1`
    direct: DMatrix<f64>,
    log_det: f64,
}

/// Upper triangular `R` with `R^T R = B^T B`, ridged when `B` is rank deficient.
fn gram_factor(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = b.ncols();
    let scale = b.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
    if b.nrows() >= n {
        let r = b.clone().qr().r();
        if (0..n).all(|i| r[(i, i)].is_finite() && r[(i, i)].powi(2) > PIVOT_RATIO * scale) {
            return Ok(r);
        }
    }
    let ridge = SURROGATE_RIDGE * scale.max(f64::MIN_POSITIVE);
    let gram = b.transpose() * b + DMatrix::identity(n, n) * ridge;
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    Ok(chol.l().transpose())
}

impl Surrogate {
    fn new(b_tilde: &DMatrix<f64>, s: &DMatrix<f64>, h1: &DMatrix<f64>) -> Result<Self> {
        let n_t = b_tilde.ncols();
        let r = gram_factor(b_tilde)?;
        let log_det = 2.0 * (0..n_t).map(|i| r[(i, i)].abs().ln()).sum::<f64>();
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(n_t, n_t))
            .ok_or(Error::RankDeficient)?;
        let direct = s * h1 * &r_inv;
        Ok(Self {
            r_inv,
            s: s.clone(),
            direct,
            log_det,
        })
    }

    fn value(&self, h2: &DMatrix<f64>) -> f64 {
        let whitened = &self.direct + &self.s * h2 * &self.r_inv;
        whitened.norm_squared() + self.log_det - self.r_inv.ncols() as f64
    }
}

/// Surrogate value of `alignment` linearized at `b_tilde`.
pub fn surrogate_objective(
    alignment: &Alignment,
    b_tilde: &DMatrix<f64>,
    s: &DMatrix<f64>,
    h1: &DMatrix<f64>,
    cascade: &Cascade,
) -> Result<f64> {
    let h2 = assemble_h2(cascade, alignment)?;
    Ok(Surrogate::new(b_tilde, s, h1)?.value(&h2))
}

/// Surrogate value of an arbitrary reflected matrix `h2`.
pub fn surrogate_value_h2(b_tilde: &DMatrix<f64>, s: &DMatrix<f64>, h1: &DMatrix<f64>, h2: &DMatrix<f64>) -> Result<f64> {
    Ok(Surrogate::new(b_tilde, s, h1)?.value(h2))
}

fn contribution(cascade: &Cascade, n: usize, led: Option<usize>, pd: Option<usize>) -> Option<(usize, usize, f64)> {
    match (led, pd) {
        (Some(i), Some(j)) => Some((j, i, cascade.get(n, i, j))),
        _ => None,
    }
}

/// Best corner for one side of element `n`, with `h2` the reflected matrix
/// of the current alignment. Returns the choice and the evaluations spent.
fn best_corner(
    sur: &Surrogate,
    cascade: &Cascade,
    alignment: &Alignment,
    h2: &mut DMatrix<f64>,
    n: usize,
    side: Side,
    zero_corner: bool,
) -> (Option<usize>, usize) {
    let (current, width) = match side {
        Side::Led => (alignment.led[n], alignment.n_leds),
        Side::Pd => (alignment.pd[n], alignment.n_pds),
    };
    let with = |choice: Option<usize>| match side {
        Side::Led => contribution(cascade, n, choice, alignment.pd[n]),
        Side::Pd => contribution(cascade, n, alignment.led[n], choice),
    };
    let base = with(current);
    let eval = |choice: Option<usize>, h2: &mut DMatrix<f64>| {
        if let Some((r, c, g)) = base {
            h2[(r, c)] -= g;
        }
        let added = with(choice);
        if let Some((r, c, g)) = added {
            h2[(r, c)] += g;
        }
        let v = sur.value(h2);
        if let Some((r, c, g)) = added {
            h2[(r, c)] -= g;
        }
        if let Some((r, c, g)) = base {
            h2[(r, c)] += g;
        }
        v
    };
    let mut best = current;
    let mut best_value = eval(current, h2);
    let mut evaluations = 1;
    for choice in std::iter::once(None).chain((0..width).map(Some)) {
        if choice == current || (choice.is_none() && !zero_corner) {
            continue;
        }
        let v = eval(choice, h2);
        evaluations += 1;
        if v > best_value + 1e-12 * best_value.abs().max(1.0) {
            best = choice;
            best_value = v;
        }
    }
    (best, evaluations)
}

/// Globally optimal corner of the surrogate for one side of element `n`,
/// other rows held fixed. Ties keep the current choice, then prefer the
/// unassigned corner, then the lowest index.
pub fn corner_solve(
    n: usize,
    side: Side,
    alignment: &Alignment,
    b_tilde: &DMatrix<f64>,
    s: &DMatrix<f64>,
    h1: &DMatrix<f64>,
    cascade: &Cascade,
) -> Result<Option<usize>> {
    let sur = Surrogate::new(b_tilde, s, h1)?;
    let mut h2 = assemble_h2(cascade, alignment)?;
    if n >= alignment.n_elements() {
        return Err(Error::OutOfRange(format!("element {n} of {}", alignment.n_elements())));
    }
    Ok(best_corner(&sur, cascade, alignment, &mut h2, n, side, true).0)
}

struct SweepContext<'a> {
    h1: &'a DMatrix<f64>,
    cascade: &'a Cascade,
    noise: &'a NoiseModel,
    config: &'a LdaoConfig,
}

impl SweepContext<'_> {
    fn surrogate(&self, h2: &DMatrix<f64>) -> Result<(DMatrix<f64>, Surrogate)> {
        let b = &self.noise.s * (self.h1 + h2);
        let sur = Surrogate::new(&b, &self.noise.s, self.h1)?;
        Ok((b, sur))
    }

    fn true_value(&self, h2: &DMatrix<f64>) -> f64 {
        self.noise.log_det_gram(&(self.h1 + h2)).value
    }

    /// Updates one side of every element in order. Returns the number of
    /// surrogate evaluations.
    fn sweep(
        &self,
        sur: &mut Surrogate,
        b_tilde: &mut DMatrix<f64>,
        alignment: &mut Alignment,
        h2: &mut DMatrix<f64>,
        side: Side,
    ) -> Result<usize> {
        let cascade = self.cascade;
        let mut evaluations = 0;
        let mut current = if self.config.safeguard { self.true_value(h2) } else { 0.0 };
        for n in 0..alignment.n_elements() {
            if self.config.relinearize == Relinearize::Row && n > 0 {
                let (b, s) = self.surrogate(h2)?;
                *b_tilde = b;
                *sur = s;
            }
            let before = contribution(cascade, n, alignment.led[n], alignment.pd[n]);
            let (choice, e) = best_corner(sur, cascade, alignment, h2, n, side, self.config.zero_corner);
            evaluations += e;
            let old = match side {
                Side::Led => std::mem::replace(&mut alignment.led[n], choice),
                Side::Pd => std::mem::replace(&mut alignment.pd[n], choice),
            };
            if old == choice {
                continue;
            }
            let after = contribution(cascade, n, alignment.led[n], alignment.pd[n]);
            if let Some((r, c, g)) = before {
                h2[(r, c)] -= g;
            }
            if let Some((r, c, g)) = after {
                h2[(r, c)] += g;
            }
            if self.config.safeguard {
                let v = self.true_value(h2);
                if v < current {
                    if let Some((r, c, g)) = after {
                        h2[(r, c)] -= g;
                    }
                    if let Some((r, c, g)) = before {
                        h2[(r, c)] += g;
                    }
                    match side {
                        Side::Led => alignment.led[n] = old,
                        Side::Pd => alignment.pd[n] = old,
                    }
                } else {
                    current = v;
                }
            }
        }
        Ok(evaluations)
    }
}

/// Alternating corner search from `init`. The true objective never
/// decreases across accepted outer iterations.
pub fn ldao_optimize(
    h1: &DMatrix<f64>,
    cascade: &Cascade,
    noise: &NoiseModel,
    init: &Alignment,
    config: &LdaoConfig,
) -> Result<LdaoOutcome> {
    let ctx = SweepContext {
        h1,
        cascade,
        noise,
        config,
    };
    let mut alignment = init.clone();
    let mut objective = objective_f1(h1, cascade, noise, &alignment)?;
    let mut trace = vec![objective];
    let mut evaluations = 0;
    let mut reverted = false;
    let mut converged = false;
    let mut outer = 0;
    let mut h2 = assemble_h2(cascade, &alignment)?;
    let (mut b_tilde, _) = ctx.surrogate(&h2)?;

    while outer < config.max_outer {
        outer += 1;
        let previous = alignment.clone();
        h2 = assemble_h2(cascade, &alignment)?;
        let (b, mut sur) = ctx.surrogate(&h2)?;
        b_tilde = b;
        evaluations += ctx.sweep(&mut sur, &mut b_tilde, &mut alignment, &mut h2, Side::Led)?;
        if config.relinearize != Relinearize::Outer {
            let (b, s) = ctx.surrogate(&h2)?;
            b_tilde = b;
            sur = s;
        }
        evaluations += ctx.sweep(&mut sur, &mut b_tilde, &mut alignment, &mut h2, Side::Pd)?;

        let next = objective_f1(h1, cascade, noise, &alignment)?;
        if next < objective {
            alignment = previous;
            reverted = true;
            converged = true;
            break;
        }
        trace.push(next);
        let gain = next - objective;
        objective = next;
        if gain < config.tol {
            converged = true;
            break;
        }
    }

    Ok(LdaoOutcome {
        state: LdaoState {
            b_tilde,
            s: noise.s.clone(),
            alignment,
            trace,
        },
        objective,
        outer_iterations: outer,
        corner_evaluations: evaluations,
        reverted,
        hit_cap: !converged,
    })
}
