//! Barrier (interior-point) ascent over the relaxed assignment matrix,
//! followed by nearest-one-hot rounding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{alignment_to_v, gradient_logdet_v, objective_f1, relaxed_f1, v_to_alignment, RelaxedAlignment, TraceRow};
use crate::capacity::NoiseModel;
use crate::channel::{Alignment, Cascade};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LipConfig {
    pub t_initial: f64,
    pub t_multiplier: f64,
    /// Inner loop stops once the predicted or realized gain of the barrier
    /// objective divided by `t` drops below this.
    pub inner_tol: f64,
    /// Outer loop stops once the duality-gap proxy `N (N_t N_r + 1) / t` drops below this.
    pub outer_tol: f64,
    /// Step shrink factor of the backtracking line search.
    pub shrink: f64,
    /// Sufficient-increase constant of the backtracking line search.
    pub armijo: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Mass moved off one-hot entries of the starting point.
    pub interior_pull: f64,
    /// Adds the zero row as a rounding candidate.
    pub allow_unassigned: bool,
    /// Start each line search from a Barzilai-Borwein step instead of
    /// twice the previous step.
    pub bb_steps: bool,
}

impl Default for LipConfig {
    fn default() -> Self {
        Self {
            t_initial: 1.0,
            t_multiplier: 10.0,
            inner_tol: 1e-9,
            outer_tol: 1e-6,
            shrink: 0.5,
            armijo: 1e-4,
            max_inner: 5000,
            max_outer: 50,
            interior_pull: 1e-3,
            allow_unassigned: false,
            bb_steps: true,
        }
    }
}

impl LipConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_initial > 0.0
            && self.t_multiplier > 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.armijo > 0.0
            && self.armijo < 0.5
            && self.inner_tol > 0.0
            && self.outer_tol > 0.0
            && self.interior_pull > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid LIP settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipOutcome {
    pub alignment: Alignment,
    /// Last relaxed iterate before rounding.
    pub relaxed: RelaxedAlignment,
    /// `ln det(H^T K^-1 H)` of `alignment`.
    pub objective: f64,
    pub init_objective: f64,
    pub rounded_objective: f64,
    /// The rounded point did not beat the initialization, which was returned instead.
    pub used_fallback: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// An iteration cap was hit before the tolerances were met.
    pub hit_cap: bool,
    pub trace: Vec<TraceRow>,
}

struct Barrier<'a> {
    h1: &'a DMatrix<f64>,
    cascade: &'a Cascade,
    noise: &'a NoiseModel,
}

impl Barrier<'_> {
    fn slacks(v: &DMatrix<f64>) -> Vec<f64> {
        (0..v.nrows()).map(|n| 1.0 - v.row(n).sum()).collect()
    }

    fn value(&self, x: &RelaxedAlignment, t: f64) -> f64 {
        if x.v.iter().any(|&e| !(e > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let slacks = Self::slacks(&x.v);
        if slacks.iter().any(|&s| !(s > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let f1 = match relaxed_f1(self.h1, self.cascade, self.noise, x) {
            Ok(v) if v.is_finite() => v,
            _ => return f64::NEG_INFINITY,
        };
        t * f1 + x.v.iter().map(|e| e.ln()).sum::<f64>() + slacks.iter().map(|s| s.ln()).sum::<f64>()
    }

    fn gradient(&self, x: &RelaxedAlignment, t: f64) -> Result<DMatrix<f64>> {
        let mut g = gradient_logdet_v(x, self.h1, self.cascade, self.noise)? * t;
        let slacks = Self::slacks(&x.v);
        for n in 0..g.nrows() {
            for p in 0..g.ncols() {
                g[(n, p)] += 1.0 / x.v[(n, p)] - 1.0 / slacks[n];
            }
        }
        Ok(g)
    }
}

/// Largest step along `d` keeping every entry positive and every row slack positive.
fn max_feasible_step(v: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for n in 0..v.nrows() {
        let mut row_d = 0.0;
        let mut row_v = 0.0;
        for p in 0..v.ncols() {
            let (x, dx) = (v[(n, p)], d[(n, p)]);
            if dx < 0.0 {
                alpha = alpha.min(x / -dx);
            }
            row_d += dx;
            row_v += x;
        }
        if row_d > 0.0 {
            alpha = alpha.min((1.0 - row_v) / row_d);
        }
    }
    alpha
}

/// Maximizes `t ln det(H^T K^-1 H) + sum ln v + sum ln(1 - row sum)` for an
/// increasing sequence of `t`, then rounds to the nearest binary alignment.
/// Never returns an alignment worse than `init`.
///
/// Ascent directions are gradients scaled entrywise by the inverse diagonal
/// of the barrier Hessian, which keeps steps near the boundary in
/// proportion to the distance left.
pub fn lip_optimize(
    h1: &DMatrix<f64>,
    cascade: &Cascade,
    noise: &NoiseModel,
    init: &Alignment,
    config: &LipConfig,
) -> Result<LipOutcome> {
    config.validate()?;
    let init_objective = objective_f1(h1, cascade, noise, init)?;
    let start = alignment_to_v(init);
    let n_elements = cascade.n_elements();
    let n_pairs = cascade.n_pairs();
    if n_elements == 0 || n_pairs == 0 {
        return Ok(LipOutcome {
            alignment: init.clone(),
            relaxed: start,
            objective: init_objective,
            init_objective,
            rounded_objective: init_objective,
            used_fallback: true,
            outer_iterations: 0,
            inner_iterations: 0,
            hit_cap: false,
            trace: Vec::new(),
        });
    }
    if config.interior_pull * n_pairs as f64 >= 1.0 {
        return Err(Error::InvalidConfig("interior pull too large for the pair count".into()));
    }

    let barrier = Barrier { h1, cascade, noise };
    let mut x = start.pulled_inside(config.interior_pull);
    let mut t = config.t_initial;
    let mut trace = Vec::new();
    let mut inner_total = 0;
    let mut outer = 0;
    let mut hit_cap = false;
    let gap_numerator = (n_elements * (n_pairs + 1)) as f64;

    loop {
        outer += 1;
        let mut step: f64 = 1.0;
        let mut value = barrier.value(&x, t);
        let mut previous: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
        let mut converged = false;
        for inner in 1..=config.max_inner {
            inner_total += 1;
            let g = match barrier.gradient(&x, t) {
                Ok(g) => g,
                Err(_) => break,
            };
            let slacks = Barrier::slacks(&x.v);
            let mut scale = DMatrix::zeros(g.nrows(), g.ncols());
            for n in 0..g.nrows() {
                let s2 = slacks[n] * slacks[n];
                for p in 0..g.ncols() {
                    let v2 = x.v[(n, p)] * x.v[(n, p)];
                    scale[(n, p)] = v2 * s2 / (v2 + s2);
                }
            }
            let d = g.component_mul(&scale);
            // Barzilai-Borwein trial step in the scaled metric
            let trial = match previous.take() {
                Some((px, pg)) if config.bb_steps => {
                    let sx = &x.v - px;
                    let yg = &g - pg;
                    let curv = -sx.dot(&yg);
                    let metric = sx.component_div(&scale).dot(&sx);
                    if curv > 0.0 && metric > 0.0 {
                        metric / curv
                    } else {
                        2.0 * step
                    }
                }
                _ => 2.0 * step,
            };
            previous = Some((x.v.clone(), g.clone()));
            let slope = g.dot(&d);
            if 0.5 * slope / t <= config.inner_tol {
                converged = true;
                break;
            }
            let cap = 0.99 * max_feasible_step(&x.v, &d);
            let mut alpha = trial.min(cap);
            let mut accepted = None;
            while alpha > 1e-18 {
                let cand = RelaxedAlignment {
                    v: &x.v + &d * alpha,
                    n_leds: x.n_leds,
                    n_pds: x.n_pds,
                };
                let cv = barrier.value(&cand, t);
                if cv >= value + config.armijo * alpha * slope {
                    accepted = Some((cand, cv));
                    break;
                }
                alpha *= config.shrink;
            }
            let Some((cand, cv)) = accepted else {
                converged = true;
                break;
            };
            let gain = cv - value;
            x = cand;
            value = cv;
            step = alpha;
            trace.push(TraceRow {
                outer_iter: outer,
                inner_iter: inner,
                objective: relaxed_f1(h1, cascade, noise, &x)?,
                step_size: alpha,
                t,
            });
            if gain / t <= config.inner_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            hit_cap = true;
        }
        if gap_numerator / t < config.outer_tol {
            break;
        }
        if outer >= config.max_outer {
            hit_cap = true;
            break;
        }
        t *= config.t_multiplier;
    }

    let rounded = v_to_alignment(&x, config.allow_unassigned);
    let rounded_objective = objective_f1(h1, cascade, noise, &rounded)?;
    let used_fallback = !(rounded_objective > init_objective);
    let (alignment, objective) = if used_fallback {
        (init.clone(), init_objective)
    } else {
        (rounded, rounded_objective)
    };
    Ok(LipOutcome {
        alignment,
        relaxed: x,
        objective,
        init_objective,
        rounded_objective,
        used_fallback,
        outer_iterations: outer,
        inner_iterations: inner_total,
        hit_cap,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_beneficial_element_is_aligned() {
        let h1 = DMatrix::from_element(1, 1, 1.0);
        let cascade = Cascade::from_fn(1, 1, 1, |_, _, _| 0.5);
        let noise = NoiseModel::white(1, 0.1).unwrap();
        let out = lip_optimize(&h1, &cascade, &noise, &Alignment::empty(1, 1, 1), &LipConfig::default()).unwrap();
        assert_eq!(out.alignment.pair_of(0), Some((0, 0)));
        assert!(!out.used_fallback);
        assert!(out.relaxed.is_feasible(0.0));
    }

    #[test]
    fn flat_objective_returns_init() {
        let h1 = DMatrix::identity(2, 2);
        let cascade = Cascade::zeros(3, 2, 2);
        let noise = NoiseModel::white(2, 1.0).unwrap();
        let mut init = Alignment::empty(3, 2, 2);
        init.led[1] = Some(1);
        init.pd[1] = Some(0);
        let out = lip_optimize(&h1, &cascade, &noise, &init, &LipConfig::default()).unwrap();
        assert_eq!(out.alignment, init);
        assert!(out.used_fallback);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = LipConfig {
            t_multiplier: 1.0,
            ..LipConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
