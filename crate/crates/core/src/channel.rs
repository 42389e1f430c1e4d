//! Line-of-sight optical channels: the direct LED-to-PD matrix, the
//! per-element reflected gains and the alignment-dependent assembly of the
//! reflected matrix.
//!
//! Matrices are `N_r x N_t` (row = photodetector, column = LED). Pair
//! indices follow the column-major vectorization of such a matrix, so the
//! pair (LED `i`, PD `j`) has index `p = j + i * N_r` (zero based).

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{path_geometry, GeometricPath, Scene};

/// Lambertian emitter/receiver constants and the surface reflectivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambertianParams {
    /// Refractive index of the receiver concentrator.
    pub q: f64,
    /// Lambertian order of the LEDs.
    pub m: f64,
    /// Detector area, m^2.
    pub a_pd: f64,
    /// Optical filter gain.
    pub g_of: f64,
    /// Field-of-view semi-angle, radians.
    pub phi0: f64,
    /// Reflectivity of a surface element.
    pub gamma: f64,
}

impl Default for LambertianParams {
    fn default() -> Self {
        Self {
            q: 1.5,
            m: 1.0,
            a_pd: 1e-4,
            g_of: 1.0,
            phi0: 70f64.to_radians(),
            gamma: 0.9,
        }
    }
}

impl LambertianParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.q > 0.0
            && self.m > 0.0
            && self.a_pd > 0.0
            && self.g_of > 0.0
            && self.phi0 > 0.0
            && self.phi0 <= std::f64::consts::FRAC_PI_2
            && self.gamma >= 0.0
            && self.gamma <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Lambertian parameters {self:?}")))
        }
    }

    /// Path-independent factor `q^2 (m+1) A_PD g_of / (2 pi sin^2 phi0)`.
    fn prefactor(&self) -> f64 {
        let s = self.phi0.sin();
        self.q * self.q * (self.m + 1.0) * self.a_pd * self.g_of / (2.0 * std::f64::consts::PI * s * s)
    }

    /// Angular factor `cos^m(irr) cos(inc)`, zero outside the field of view
    /// or behind the emitter.
    fn angular(&self, cos_irradiance: f64, cos_incidence: f64) -> f64 {
        if cos_irradiance <= 0.0 || cos_incidence < self.phi0.cos() || cos_incidence > 1.0 + 1e-12 {
            return 0.0;
        }
        cos_irradiance.powf(self.m) * cos_incidence.min(1.0)
    }

    /// Direct gain for one LED/PD path.
    pub fn direct_gain(&self, path: &GeometricPath) -> f64 {
        self.prefactor() * self.angular(path.cos_irradiance, path.cos_incidence) / (path.distance * path.distance)
    }

    /// Reflected gain for the LED-element and element-PD legs, using the
    /// additive path length `(d1 + d2)^2`.
    pub fn reflected_gain(&self, to_element: &GeometricPath, to_pd: &GeometricPath) -> f64 {
        let d = to_element.distance + to_pd.distance;
        self.gamma * self.prefactor() * self.angular(to_element.cos_irradiance, to_pd.cos_incidence) / (d * d)
    }
}

/// Reflected gains `h(n, i, j)` for every element `n`, LED `i` and PD `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    n_elements: usize,
    n_leds: usize,
    n_pds: usize,
    data: Vec<f64>,
}

impl Cascade {
    pub fn zeros(n_elements: usize, n_leds: usize, n_pds: usize) -> Self {
        Self {
            n_elements,
            n_leds,
            n_pds,
            data: vec![0.0; n_elements * n_leds * n_pds],
        }
    }

    /// Builds a tensor from a closure over `(n, i, j)`.
    pub fn from_fn(n_elements: usize, n_leds: usize, n_pds: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut c = Self::zeros(n_elements, n_leds, n_pds);
        let pairs = c.n_pairs();
        for n in 0..n_elements {
            for i in 0..n_leds {
                for j in 0..n_pds {
                    let p = c.pair(i, j);
                    c.data[n * pairs + p] = f(n, i, j);
                }
            }
        }
        c
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_leds(&self) -> usize {
        self.n_leds
    }

    pub fn n_pds(&self) -> usize {
        self.n_pds
    }

    pub fn n_pairs(&self) -> usize {
        self.n_leds * self.n_pds
    }

    /// Pair index of (LED `i`, PD `j`).
    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> usize {
        j + i * self.n_pds
    }

    /// (LED, PD) of pair index `p`.
    #[inline]
    pub fn unpair(&self, p: usize) -> (usize, usize) {
        (p / self.n_pds, p % self.n_pds)
    }

    #[inline]
    pub fn get(&self, n: usize, i: usize, j: usize) -> f64 {
        self.data[n * self.n_pairs() + self.pair(i, j)]
    }

    #[inline]
    pub fn pair_gain(&self, n: usize, p: usize) -> f64 {
        self.data[n * self.n_pairs() + p]
    }

    /// Per-element matrix with entry `(j, i) = h(n, i, j)`.
    pub fn element_matrix(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_pds, self.n_leds, |j, i| self.get(n, i, j))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// Same tensor restricted to the first `n` elements.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_elements);
        Self {
            n_elements: n,
            data: self.data[..n * self.n_pairs()].to_vec(),
            ..self.clone()
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Element-to-device assignment. `led[n]` / `pd[n]` hold the LED and PD the
/// element is steered toward, if any. An element reflects into the link only
/// when both are set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alignment {
    pub n_leds: usize,
    pub n_pds: usize,
    pub led: Vec<Option<usize>>,
    pub pd: Vec<Option<usize>>,
}

impl Alignment {
    /// Every element unassigned.
    pub fn empty(n_elements: usize, n_leds: usize, n_pds: usize) -> Self {
        Self {
            n_leds,
            n_pds,
            led: vec![None; n_elements],
            pd: vec![None; n_elements],
        }
    }

    pub fn n_elements(&self) -> usize {
        self.led.len()
    }

    /// The (LED, PD) pair element `n` links, if fully assigned.
    pub fn pair_of(&self, n: usize) -> Option<(usize, usize)> {
        Some((self.led[n]?, self.pd[n]?))
    }

    /// Binary `N x N_t` matrix G.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        one_hot_rows(&self.led, self.n_leds)
    }

    /// Binary `N x N_r` matrix F.
    pub fn f_matrix(&self) -> DMatrix<f64> {
        one_hot_rows(&self.pd, self.n_pds)
    }

    /// Parses binary G and F, enforcing at most one 1 per row.
    pub fn from_matrices(g: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<Self> {
        if g.nrows() != f.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "G has {} rows but F has {}",
                g.nrows(),
                f.nrows()
            )));
        }
        Ok(Self {
            n_leds: g.ncols(),
            n_pds: f.ncols(),
            led: parse_one_hot_rows(g, "G")?,
            pd: parse_one_hot_rows(f, "F")?,
        })
    }

    fn check_dims(&self, cascade: &Cascade) -> Result<()> {
        if self.n_elements() != cascade.n_elements()
            || self.n_leds != cascade.n_leds()
            || self.n_pds != cascade.n_pds()
            || self.pd.len() != self.led.len()
        {
            return Err(Error::DimensionMismatch(format!(
                "alignment {}x({},{}) vs cascade {}x({},{})",
                self.n_elements(),
                self.n_leds,
                self.n_pds,
                cascade.n_elements(),
                cascade.n_leds(),
                cascade.n_pds()
            )));
        }
        let bad = self.led.iter().flatten().any(|&i| i >= self.n_leds) || self.pd.iter().flatten().any(|&j| j >= self.n_pds);
        if bad {
            return Err(Error::OutOfRange("alignment index beyond device count".into()));
        }
        Ok(())
    }
}

fn one_hot_rows(rows: &[Option<usize>], width: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), width);
    for (n, k) in rows.iter().enumerate() {
        if let Some(k) = k {
            m[(n, *k)] = 1.0;
        }
    }
    m
}

fn parse_one_hot_rows(m: &DMatrix<f64>, name: &str) -> Result<Vec<Option<usize>>> {
    (0..m.nrows())
        .map(|n| {
            let mut hit = None;
            for k in 0..m.ncols() {
                match m[(n, k)] {
                    0.0 => {}
                    1.0 => {
                        if hit.is_some() {
                            return Err(Error::InvalidConfig(format!("row {n} of {name} has more than one 1")));
                        }
                        hit = Some(k);
                    }
                    v => return Err(Error::InvalidConfig(format!("{name}[{n},{k}] = {v} is not binary"))),
                }
            }
            Ok(hit)
        })
        .collect()
}

/// Direct matrix, reflected gains and the normalization applied to both.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h1: DMatrix<f64>,
    pub cascade: Cascade,
    pub scale: f64,
}

impl ChannelSet {
    /// Synthesizes both channel parts for `scene`.
    pub fn from_scene(scene: &Scene, params: &LambertianParams) -> Result<Self> {
        Ok(Self {
            h1: direct_channel(scene, params)?,
            cascade: cascade_gains(scene, params)?,
            scale: 1.0,
        })
    }

    /// `H = H1 + H2(alignment)`.
    pub fn total(&self, alignment: &Alignment) -> Result<DMatrix<f64>> {
        total_channel(&self.h1, &assemble_h2(&self.cascade, alignment)?)
    }

    /// Channel export: one CSV row per direct entry, then one per reflected
    /// gain, both in index order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,element,led,pd,gain\n");
        for i in 0..self.h1.ncols() {
            for j in 0..self.h1.nrows() {
                let _ = writeln!(out, "direct,,{i},{j},{:.12e}", self.h1[(j, i)]);
            }
        }
        let c = &self.cascade;
        for n in 0..c.n_elements() {
            for i in 0..c.n_leds() {
                for j in 0..c.n_pds() {
                    let _ = writeln!(out, "reflected,{n},{i},{j},{:.12e}", c.get(n, i, j));
                }
            }
        }
        out
    }
}

/// Direct line-of-sight matrix `H1` (`N_r x N_t`).
pub fn direct_channel(scene: &Scene, params: &LambertianParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let mut h = DMatrix::zeros(scene.n_pds(), scene.n_leds());
    for (i, led) in scene.leds.iter().enumerate() {
        for (j, pd) in scene.pds.iter().enumerate() {
            h[(j, i)] = params.direct_gain(&path_geometry(led, pd)?);
        }
    }
    Ok(h)
}

/// Reflected gain tensor for every element and LED/PD pair.
pub fn cascade_gains(scene: &Scene, params: &LambertianParams) -> Result<Cascade> {
    params.validate()?;
    let legs_in: Vec<Vec<GeometricPath>> = scene
        .oirs
        .iter()
        .map(|e| scene.leds.iter().map(|l| path_geometry(l, e)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let legs_out: Vec<Vec<GeometricPath>> = scene
        .oirs
        .iter()
        .map(|e| scene.pds.iter().map(|p| path_geometry(e, p)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    Ok(Cascade::from_fn(scene.n_elements(), scene.n_leds(), scene.n_pds(), |n, i, j| {
        params.reflected_gain(&legs_in[n][i], &legs_out[n][j])
    }))
}

/// Reflected matrix `H2` for a given alignment.
pub fn assemble_h2(cascade: &Cascade, alignment: &Alignment) -> Result<DMatrix<f64>> {
    alignment.check_dims(cascade)?;
    let mut h2 = DMatrix::zeros(cascade.n_pds(), cascade.n_leds());
    for n in 0..alignment.n_elements() {
        if let Some((i, j)) = alignment.pair_of(n) {
            h2[(j, i)] += cascade.get(n, i, j);
        }
    }
    Ok(h2)
}

/// `H = H1 + H2`.
pub fn total_channel(h1: &DMatrix<f64>, h2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if h1.shape() != h2.shape() {
        return Err(Error::DimensionMismatch(format!("H1 {:?} vs H2 {:?}", h1.shape(), h2.shape())));
    }
    Ok(h1 + h2)
}

/// Scales `H1` to unit Frobenius norm and the reflected gains by the same
/// factor. The factor is accumulated in `scale`.
pub fn normalize(set: &ChannelSet) -> Result<ChannelSet> {
    let norm = set.h1.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroChannel);
    }
    let s = 1.0 / norm;
    Ok(ChannelSet {
        h1: &set.h1 * s,
        cascade: set.cascade.scaled(s),
        scale: set.scale * s,
    })
}
