//! Element alignment: shared objective, the relaxed assignment matrix and
//! the two solvers ([`lip`] and [`ldao`]).

pub mod ldao;
pub mod lip;

use nalgebra::DMatrix;

use crate::capacity::NoiseModel;
use crate::channel::{assemble_h2, Alignment, Cascade};
use crate::error::{Error, Result};
use crate::geometry::Scene;
use crate::linalg::inverse_spd;

pub use ldao::{corner_solve, ldao_optimize, surrogate_objective, surrogate_value_h2, LdaoConfig, LdaoOutcome, LdaoState, Relinearize, Side};
pub use lip::{lip_optimize, LipConfig, LipOutcome};

/// One row of a solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub objective: f64,
    pub step_size: f64,
    pub t: f64,
}

/// Trace as CSV with header `outer_iter,inner_iter,objective_nats,step_size,t`.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("outer_iter,inner_iter,objective_nats,step_size,t\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{:.11e},{:.11e},{:.11e}\n",
            r.outer_iter, r.inner_iter, r.objective, r.step_size, r.t
        ));
    }
    out
}

/// `S` with `S^T S = K^-1`: the inverse of the lower Cholesky factor of `K`.
pub fn cholesky_inverse_factor(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch("noise covariance must be square".into()));
    }
    let chol = k.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let n = k.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite)
}

/// `ln det(H^T K^-1 H)` with `H = H1 + H2(alignment)`. Near-singular Gram
/// matrices are ridged rather than rejected so that solvers can compare
/// poor candidates.
pub fn objective_f1(h1: &DMatrix<f64>, cascade: &Cascade, noise: &NoiseModel, alignment: &Alignment) -> Result<f64> {
    let h2 = assemble_h2(cascade, alignment)?;
    Ok(noise.log_det_gram(&(h1 + h2)).value)
}

/// Each element steered to its nearest LED and nearest PD.
pub fn init_nearest(scene: &Scene) -> Alignment {
    let nearest = |from: crate::geometry::Vec3, to: &[crate::geometry::OrientedPoint]| {
        let mut best: Option<(usize, f64)> = None;
        for (k, d) in to.iter().enumerate() {
            let dist = (d.position - from).norm();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((k, dist));
            }
        }
        best.map(|(k, _)| k)
    };
    let mut a = Alignment::empty(scene.n_elements(), scene.n_leds(), scene.n_pds());
    for (n, e) in scene.oirs.iter().enumerate() {
        a.led[n] = nearest(e.position, &scene.leds);
        a.pd[n] = nearest(e.position, &scene.pds);
    }
    a
}

/// Relaxed assignment matrix `V` (`N x N_t N_r`), entry `(n, p)` in `[0, 1]`
/// and each row summing to at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedAlignment {
    pub v: DMatrix<f64>,
    pub n_leds: usize,
    pub n_pds: usize,
}

impl RelaxedAlignment {
    pub fn n_elements(&self) -> usize {
        self.v.nrows()
    }

    pub fn row_sum(&self, n: usize) -> f64 {
        self.v.row(n).sum()
    }

    /// True when every entry is nonnegative and every row sums to at most
    /// `1 + tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.v.iter().all(|&x| x >= 0.0) && (0..self.n_elements()).all(|n| self.row_sum(n) <= 1.0 + tol)
    }

    /// Moves `pull` of mass off every one-hot entry and spreads it evenly,
    /// so all barrier terms are finite. Unassigned rows become `pull` per
    /// entry.
    pub fn pulled_inside(&self, pull: f64) -> RelaxedAlignment {
        let p = self.v.ncols() as f64;
        let mut v = self.v.clone();
        for x in v.iter_mut() {
            *x = if *x > 0.5 { 1.0 - pull * p } else { pull };
        }
        RelaxedAlignment {
            v,
            n_leds: self.n_leds,
            n_pds: self.n_pds,
        }
    }
}

/// `v_{n,p} = g_{n,i} f_{n,j}` with `p = j + i N_r`.
pub fn alignment_to_v(alignment: &Alignment) -> RelaxedAlignment {
    let p = alignment.n_leds * alignment.n_pds;
    let mut v = DMatrix::zeros(alignment.n_elements(), p);
    for n in 0..alignment.n_elements() {
        if let Some((i, j)) = alignment.pair_of(n) {
            v[(n, j + i * alignment.n_pds)] = 1.0;
        }
    }
    RelaxedAlignment {
        v,
        n_leds: alignment.n_leds,
        n_pds: alignment.n_pds,
    }
}

/// Nearest one-hot per row (lowest index on ties). With `allow_unassigned`
/// the zero row is also a candidate and wins when no entry exceeds 1/2.
pub fn v_to_alignment(relaxed: &RelaxedAlignment, allow_unassigned: bool) -> Alignment {
    let n_pds = relaxed.n_pds;
    let mut a = Alignment::empty(relaxed.n_elements(), relaxed.n_leds, n_pds);
    for n in 0..relaxed.n_elements() {
        let row = relaxed.v.row(n);
        let mut best = 0;
        for p in 1..row.len() {
            if row[p] > row[best] {
                best = p;
            }
        }
        if row.is_empty() || (allow_unassigned && row[best] < 0.5) {
            continue;
        }
        a.led[n] = Some(best / n_pds);
        a.pd[n] = Some(best % n_pds);
    }
    a
}

fn check_relaxed(h1: &DMatrix<f64>, cascade: &Cascade, relaxed: &RelaxedAlignment) -> Result<()> {
    if h1.nrows() != cascade.n_pds()
        || h1.ncols() != cascade.n_leds()
        || relaxed.v.nrows() != cascade.n_elements()
        || relaxed.v.ncols() != cascade.n_pairs()
    {
        return Err(Error::DimensionMismatch(format!(
            "H1 {:?}, V {:?}, cascade {}x{}",
            h1.shape(),
            relaxed.v.shape(),
            cascade.n_elements(),
            cascade.n_pairs()
        )));
    }
    Ok(())
}

/// Channel for a relaxed assignment: `[vec H]_p = [vec H1]_p + sum_n h(n,p) v_{n,p}`,
/// returned in matrix form (`N_r x N_t`).
pub fn vec_channel(h1: &DMatrix<f64>, cascade: &Cascade, relaxed: &RelaxedAlignment) -> Result<DMatrix<f64>> {
    check_relaxed(h1, cascade, relaxed)?;
    let mut h = h1.clone();
    {
        let flat = h.as_mut_slice();
        for n in 0..cascade.n_elements() {
            for (p, slot) in flat.iter_mut().enumerate() {
                *slot += cascade.pair_gain(n, p) * relaxed.v[(n, p)];
            }
        }
    }
    Ok(h)
}

/// `ln det(H^T K^-1 H)` at a relaxed point.
pub fn relaxed_f1(h1: &DMatrix<f64>, cascade: &Cascade, noise: &NoiseModel, relaxed: &RelaxedAlignment) -> Result<f64> {
    let h = vec_channel(h1, cascade, relaxed)?;
    Ok(noise.log_det_gram(&h).value)
}

/// Gradient of `ln det(H^T K^-1 H)` with respect to `V`:
/// `2 h(n,p) [vec(K^-1 H (H^T K^-1 H)^-1)]_p`.
pub fn gradient_logdet_v(
    relaxed: &RelaxedAlignment,
    h1: &DMatrix<f64>,
    cascade: &Cascade,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let h = vec_channel(h1, cascade, relaxed)?;
    let gram_inv = inverse_spd(&noise.gram(&h)).ok_or(Error::RankDeficient)?;
    let z = noise.precision() * &h * gram_inv;
    let zs = z.as_slice();
    let mut grad = DMatrix::zeros(cascade.n_elements(), cascade.n_pairs());
    for n in 0..cascade.n_elements() {
        for p in 0..cascade.n_pairs() {
            grad[(n, p)] = 2.0 * cascade.pair_gain(n, p) * zs[p];
        }
    }
    Ok(grad)
}
