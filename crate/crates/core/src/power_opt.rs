//! Emission power allocation maximizing `sum ln A_i` under per-LED caps and a
//! total budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    /// Per-LED emission caps, W.
    pub a_max: Vec<f64>,
    /// Total emission budget, W.
    pub a_total: f64,
}

impl Default for PowerBudget {
    fn default() -> Self {
        Self {
            a_max: vec![1.6, 1.4, 0.7, 1.0],
            a_total: 4.0,
        }
    }
}

impl PowerBudget {
    pub fn new(a_max: Vec<f64>, a_total: f64) -> Result<Self> {
        let b = Self { a_max, a_total };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a_max.is_empty() {
            return Err(Error::InvalidConfig("empty power cap vector".into()));
        }
        if self.a_max.iter().any(|a| !(*a > 0.0) || !a.is_finite()) || !(self.a_total > 0.0) || !self.a_total.is_finite() {
            return Err(Error::InvalidConfig("power caps and budget must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn n_leds(&self) -> usize {
        self.a_max.len()
    }
}

/// Lagrange multipliers certifying an allocation: `varpi` for the budget,
/// `nu` for the caps and `zeta` for positivity.
#[derive(Debug, Clone, PartialEq)]
pub struct KktMultipliers {
    pub varpi: f64,
    pub nu: Vec<f64>,
    pub zeta: Vec<f64>,
}

/// Which branch of the closed form produced an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationBranch {
    /// Caps fit inside the budget.
    Caps,
    /// Every cap is at least the equal share.
    EqualShare,
    /// Water level between the caps.
    WaterLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub power: Vec<f64>,
    pub branch: AllocationBranch,
    /// Common level of uncapped LEDs (`1 / varpi`), when the budget binds.
    pub water_level: Option<f64>,
    /// Bisection iterations spent (0 outside the water-level branch).
    pub iterations: usize,
}

/// Optimal allocation.
pub fn optimize_power(budget: &PowerBudget) -> Result<Vec<f64>> {
    Ok(allocate(budget)?.power)
}

/// Optimal allocation with its branch and bisection count.
pub fn allocate(budget: &PowerBudget) -> Result<PowerAllocation> {
    budget.validate()?;
    let n = budget.n_leds() as f64;
    let cap_sum: f64 = budget.a_max.iter().sum();
    if cap_sum <= budget.a_total {
        return Ok(PowerAllocation {
            power: budget.a_max.clone(),
            branch: AllocationBranch::Caps,
            water_level: None,
            iterations: 0,
        });
    }
    let share = budget.a_total / n;
    let min_cap = budget.a_max.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_cap >= share {
        return Ok(PowerAllocation {
            power: vec![share; budget.n_leds()],
            branch: AllocationBranch::EqualShare,
            water_level: Some(share),
            iterations: 0,
        });
    }
    let max_cap = budget.a_max.iter().cloned().fold(0.0, f64::max);
    let filled = |level: f64| budget.a_max.iter().map(|a| a.min(level)).sum::<f64>();
    let (mut lo, mut hi) = (min_cap * 1e-6, max_cap);
    let mut iterations = 0;
    while iterations < BISECTION_MAX_ITER {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if filled(mid) > budget.a_total {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let level = if (filled(lo) - budget.a_total).abs() <= (filled(hi) - budget.a_total).abs() { lo } else { hi };
    let mut power: Vec<f64> = budget.a_max.iter().map(|a| a.min(level)).collect();
    // push the last rounding residue onto the uncapped entries so the budget is met
    let residue = budget.a_total - power.iter().sum::<f64>();
    let free: Vec<usize> = (0..power.len()).filter(|&i| budget.a_max[i] > level).collect();
    if residue < 0.0 && !free.is_empty() {
        let d = residue / free.len() as f64;
        for i in free {
            power[i] += d;
        }
    }
    Ok(PowerAllocation {
        power,
        branch: AllocationBranch::WaterLevel,
        water_level: Some(level),
        iterations,
    })
}

/// Equal allocation `min(min_j A_max_j, A_total / N_t)`.
pub fn uniform_power(budget: &PowerBudget) -> Result<Vec<f64>> {
    budget.validate()?;
    let min_cap = budget.a_max.iter().cloned().fold(f64::INFINITY, f64::min);
    let level = min_cap.min(budget.a_total / budget.n_leds() as f64);
    Ok(vec![level; budget.n_leds()])
}

/// `sum ln A_i`.
pub fn log_power_objective(power: &[f64]) -> f64 {
    power.iter().map(|a| a.ln()).sum()
}

/// Multipliers satisfying stationarity `-1/A_i - zeta_i + nu_i + varpi = 0`
/// for an allocation returned by [`allocate`].
pub fn kkt_multipliers(budget: &PowerBudget, alloc: &PowerAllocation) -> KktMultipliers {
    let varpi = match alloc.branch {
        AllocationBranch::Caps => 0.0,
        AllocationBranch::EqualShare | AllocationBranch::WaterLevel => 1.0 / alloc.water_level.unwrap_or(f64::INFINITY),
    };
    let nu = alloc.power.iter().map(|a| (1.0 / a - varpi).max(0.0)).collect();
    KktMultipliers {
        varpi,
        nu,
        zeta: vec![0.0; budget.n_leds()],
    }
}

/// Largest violation among stationarity and complementary slackness.
pub fn kkt_residual(budget: &PowerBudget, power: &[f64], m: &KktMultipliers) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &a) in power.iter().enumerate() {
        worst = worst.max((-1.0 / a - m.zeta[i] + m.nu[i] + m.varpi).abs());
        worst = worst.max((m.zeta[i] * a).abs());
        worst = worst.max((m.nu[i] * (a - budget.a_max[i])).abs());
    }
    let slack = power.iter().sum::<f64>() - budget.a_total;
    worst.max((m.varpi * slack).abs())
}
