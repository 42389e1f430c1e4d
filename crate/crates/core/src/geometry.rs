//! Room geometry: LED, photodetector and reflecting-element poses, and the
//! distance/angle quantities every line-of-sight gain is built from.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const POSITION_SLACK: f64 = 1e-9;

/// A point or direction in the room frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 1e-300 && n.is_finite() {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with_component(mut self, axis: usize, value: f64) -> Vec3 {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            _ => self.z = value,
        }
        self
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A device pose: where it sits and which way it faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedPoint {
    pub position: Vec3,
    pub normal: Vec3,
}

impl OrientedPoint {
    /// Builds a pose, normalizing `normal` to unit length.
    pub fn new(position: Vec3, normal: Vec3) -> Result<Self> {
        let normal = normal
            .normalized()
            .ok_or_else(|| Error::ZeroNormal(format!("device at {:?}", <[f64; 3]>::from(position))))?;
        if !position.is_finite() {
            return Err(Error::InvalidConfig("non-finite device position".into()));
        }
        Ok(Self { position, normal })
    }
}

/// Distance and the two cosines entering a Lambertian line-of-sight gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricPath {
    pub distance: f64,
    /// Cosine of the emission angle at the source, measured from its normal.
    pub cos_irradiance: f64,
    /// Cosine of the arrival angle at the destination, measured from its normal.
    pub cos_incidence: f64,
}

/// Line-of-sight geometry from `src` to `dst`.
pub fn path_geometry(src: &OrientedPoint, dst: &OrientedPoint) -> Result<GeometricPath> {
    let delta = dst.position - src.position;
    let distance = delta.norm();
    if !(distance > 0.0) {
        return Err(Error::CoincidentPoints(format!(
            "{:?}",
            <[f64; 3]>::from(src.position)
        )));
    }
    Ok(GeometricPath {
        distance,
        cos_irradiance: src.normal.dot(delta) / distance,
        cos_incidence: dst.normal.dot(-delta) / distance,
    })
}

/// Near/far-field demarcation distance `2 L^2 f / c` for an aperture `L`
/// (meters) at carrier frequency `f` (Hz).
pub fn rayleigh_distance(aperture: f64, frequency: f64) -> Result<f64> {
    if !(aperture > 0.0) || !(frequency > 0.0) {
        return Err(Error::OutOfRange(format!(
            "aperture {aperture} and frequency {frequency} must be positive"
        )));
    }
    Ok(2.0 * aperture * aperture * frequency / SPEED_OF_LIGHT)
}

/// Placement of LEDs or photodetectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum DeviceLayout {
    /// Explicit `[position, normal]` pairs.
    Explicit { devices: Vec<[Vec3; 2]> },
    /// Near-square grid in a horizontal plane, filled row-major.
    Grid {
        count: usize,
        spacing: f64,
        center: Vec3,
        normal: Vec3,
    },
}

/// Placement of the reflecting elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum SurfaceLayout {
    Explicit {
        elements: Vec<[Vec3; 2]>,
    },
    /// Uniform grid of cell centers inside an axis-aligned wall rectangle
    /// spanned by `min` and `max` (equal along exactly one axis).
    Wall {
        count: usize,
        min: Vec3,
        max: Vec3,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        normal: Option<Vec3>,
    },
}

/// JSON scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub room: Vec3,
    pub leds: DeviceLayout,
    pub pds: DeviceLayout,
    pub oirs: SurfaceLayout,
}

impl Default for SceneConfig {
    /// 8 x 8 x 3.5 m room, four ceiling LEDs 0.5 m apart above the room
    /// center, a 2 x 2 receiver array at (2, 3.2, 1) m with 0.2 m spacing and
    /// 32 elements on the x = 0 wall between y = 1..7 m and z = 1.2..2.9 m.
    fn default() -> Self {
        Self {
            room: Vec3::new(8.0, 8.0, 3.5),
            leds: DeviceLayout::Grid {
                count: 4,
                spacing: 0.5,
                center: Vec3::new(4.0, 4.0, 3.5),
                normal: Vec3::new(0.0, 0.0, -1.0),
            },
            pds: DeviceLayout::Grid {
                count: 4,
                spacing: 0.2,
                center: Vec3::new(2.0, 3.2, 1.0),
                normal: Vec3::new(0.0, 0.0, 1.0),
            },
            oirs: SurfaceLayout::Wall {
                count: 32,
                min: Vec3::new(0.0, 1.0, 1.2),
                max: Vec3::new(0.0, 7.0, 2.9),
                normal: None,
            },
        }
    }
}

impl SceneConfig {
    /// Same scene with a different number of reflecting elements.
    pub fn with_element_count(mut self, n: usize) -> Self {
        match &mut self.oirs {
            SurfaceLayout::Wall { count, .. } => *count = n,
            SurfaceLayout::Explicit { elements } => elements.truncate(n),
        }
        self
    }
}

/// Immutable room with its devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: Vec3,
    pub leds: Vec<OrientedPoint>,
    pub pds: Vec<OrientedPoint>,
    pub oirs: Vec<OrientedPoint>,
}

impl Scene {
    /// Assembles a scene from explicit poses, checking every invariant.
    pub fn new(
        room: Vec3,
        leds: Vec<OrientedPoint>,
        pds: Vec<OrientedPoint>,
        oirs: Vec<OrientedPoint>,
    ) -> Result<Self> {
        if !(room.x > 0.0 && room.y > 0.0 && room.z > 0.0) || !room.is_finite() {
            return Err(Error::InvalidConfig("room extents must be positive".into()));
        }
        if leds.is_empty() || pds.is_empty() {
            return Err(Error::InvalidConfig("need at least one LED and one PD".into()));
        }
        for (what, set) in [("LED", &leds), ("PD", &pds), ("OIRS element", &oirs)] {
            for (k, p) in set.iter().enumerate() {
                check_inside(room, p.position, &format!("{what} {k}"))?;
                if (p.normal.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!("{what} {k} normal is not unit length")));
                }
            }
        }
        Ok(Self { room, leds, pds, oirs })
    }

    pub fn n_leds(&self) -> usize {
        self.leds.len()
    }

    pub fn n_pds(&self) -> usize {
        self.pds.len()
    }

    pub fn n_elements(&self) -> usize {
        self.oirs.len()
    }

    /// Copy of the scene shifted by `offset`.
    pub fn translated(&self, offset: Vec3) -> Scene {
        let shift = |v: &Vec<OrientedPoint>| {
            v.iter()
                .map(|p| OrientedPoint {
                    position: p.position + offset,
                    normal: p.normal,
                })
                .collect()
        };
        Scene {
            room: self.room,
            leds: shift(&self.leds),
            pds: shift(&self.pds),
            oirs: shift(&self.oirs),
        }
    }
}

fn check_inside(room: Vec3, p: Vec3, what: &str) -> Result<()> {
    let inside = (0..3).all(|a| {
        let c = p.component(a);
        c >= -POSITION_SLACK && c <= room.component(a) + POSITION_SLACK
    });
    if inside {
        Ok(())
    } else {
        Err(Error::OutsideRoom {
            what: what.to_string(),
            x: p.x,
            y: p.y,
            z: p.z,
        })
    }
}

/// Builds the scene described by `config`.
pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    let leds = place_devices(&config.leds, "LED")?;
    let pds = place_devices(&config.pds, "PD")?;
    let oirs = place_surface(&config.oirs, config.room)?;
    Scene::new(config.room, leds, pds, oirs)
}

fn place_devices(layout: &DeviceLayout, what: &str) -> Result<Vec<OrientedPoint>> {
    match layout {
        DeviceLayout::Explicit { devices } => devices
            .iter()
            .map(|[p, n]| OrientedPoint::new(*p, *n))
            .collect(),
        DeviceLayout::Grid {
            count,
            spacing,
            center,
            normal,
        } => {
            if *count == 0 {
                return Err(Error::InvalidConfig(format!("{what} count must be positive")));
            }
            if !(*spacing >= 0.0) {
                return Err(Error::InvalidConfig(format!("{what} spacing must be non-negative")));
            }
            let cols = (*count as f64).sqrt().ceil() as usize;
            let rows = count.div_ceil(cols);
            (0..*count)
                .map(|k| {
                    let (r, c) = (k / cols, k % cols);
                    let dx = (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing;
                    let dy = (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing;
                    OrientedPoint::new(*center + Vec3::new(dx, dy, 0.0), *normal)
                })
                .collect()
        }
    }
}

/// Rows x columns for `n` cells on a rectangle of the given aspect ratio
/// (column-axis length over row-axis length): the exact factorization whose
/// shape is closest to the rectangle.
pub fn grid_shape(n: usize, aspect: f64) -> (usize, usize) {
    let mut best = (1, n);
    let mut best_err = f64::INFINITY;
    for rows in 1..=n {
        if !n.is_multiple_of(rows) {
            continue;
        }
        let cols = n / rows;
        let err = ((cols as f64 / rows as f64).ln() - aspect.ln()).abs();
        if err < best_err {
            best_err = err;
            best = (rows, cols);
        }
    }
    best
}

fn place_surface(layout: &SurfaceLayout, room: Vec3) -> Result<Vec<OrientedPoint>> {
    match layout {
        SurfaceLayout::Explicit { elements } => elements
            .iter()
            .map(|[p, n]| OrientedPoint::new(*p, *n))
            .collect(),
        SurfaceLayout::Wall {
            count,
            min,
            max,
            normal,
        } => {
            if *count == 0 {
                return Ok(Vec::new());
            }
            let extent = *max - *min;
            let flat: Vec<usize> = (0..3).filter(|&a| extent.component(a).abs() < 1e-12).collect();
            if flat.len() != 1 {
                return Err(Error::InvalidConfig(
                    "wall rectangle must be flat along exactly one axis".into(),
                ));
            }
            let wall_axis = flat[0];
            let spans: Vec<usize> = (0..3).filter(|&a| a != wall_axis).collect();
            let (col_axis, row_axis) = (spans[0], spans[1]);
            let normal = match normal {
                Some(n) => *n,
                None => {
                    let at = min.component(wall_axis);
                    let dir = if at < room.component(wall_axis) / 2.0 { 1.0 } else { -1.0 };
                    Vec3::default().with_component(wall_axis, dir)
                }
            };
            let col_len = extent.component(col_axis);
            let row_len = extent.component(row_axis);
            let aspect = if row_len.abs() > 0.0 {
                (col_len / row_len).abs()
            } else {
                f64::INFINITY
            };
            let (rows, cols) = grid_shape(*count, aspect);
            (0..*count)
                .map(|k| {
                    let (r, c) = (k / cols, k % cols);
                    let u = (c as f64 + 0.5) / cols as f64;
                    let v = (r as f64 + 0.5) / rows as f64;
                    let pos = min
                        .with_component(col_axis, min.component(col_axis) + u * col_len)
                        .with_component(row_axis, min.component(row_axis) + v * row_len);
                    OrientedPoint::new(pos, normal)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pose(p: [f64; 3], n: [f64; 3]) -> OrientedPoint {
        OrientedPoint::new(p.into(), n.into()).unwrap()
    }

    #[test]
    fn axis_aligned_path() {
        let g = path_geometry(&pose([0., 0., 3.], [0., 0., -1.]), &pose([0., 0., 0.], [0., 0., 1.])).unwrap();
        assert_relative_eq!(g.distance, 3.0);
        assert_relative_eq!(g.cos_irradiance, 1.0);
        assert_relative_eq!(g.cos_incidence, 1.0);
    }

    #[test]
    fn forty_five_degree_path() {
        let g = path_geometry(&pose([0., 0., 3.], [0., 0., -1.]), &pose([3., 0., 0.], [0., 0., 1.])).unwrap();
        assert_relative_eq!(g.distance, 18f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(g.cos_irradiance, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(g.cos_incidence, 0.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn destination_behind_source_plane() {
        let g = path_geometry(&pose([0., 0., 2.], [0., 0., -1.]), &pose([1., 0., 3.], [0., 0., 1.])).unwrap();
        assert!(g.cos_irradiance < 0.0);
    }

    #[test]
    fn coincident_points_rejected() {
        let p = pose([1., 1., 1.], [0., 0., 1.]);
        assert!(matches!(path_geometry(&p, &p), Err(Error::CoincidentPoints(_))));
    }

    #[test]
    fn rayleigh_distance_values() {
        assert_relative_eq!(rayleigh_distance(1.0, SPEED_OF_LIGHT / 2.0).unwrap(), 1.0);
        let a = rayleigh_distance(0.3, 1e9).unwrap();
        let b = rayleigh_distance(0.6, 1e9).unwrap();
        assert_relative_eq!(b / a, 4.0, epsilon = 1e-12);
        // 2 * 0.01 * 3e9 / c
        assert_relative_eq!(rayleigh_distance(0.1, 3e9).unwrap(), 6e7 / SPEED_OF_LIGHT, epsilon = 1e-15);
        assert_relative_eq!(rayleigh_distance(0.1, 3e9).unwrap(), 0.2, epsilon = 1e-3);
        assert!(rayleigh_distance(0.0, 1.0).is_err());
        assert!(rayleigh_distance(1.0, -1.0).is_err());
    }

    #[test]
    fn default_scene_layout() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        assert_eq!(scene.n_leds(), 4);
        assert_eq!(scene.n_pds(), 4);
        assert_eq!(scene.n_elements(), 32);
        for e in &scene.oirs {
            assert_eq!(e.position.x, 0.0);
            assert!(e.position.y > 1.0 && e.position.y < 7.0);
            assert!(e.position.z > 1.2 && e.position.z < 2.9);
            assert_eq!(e.normal, Vec3::new(1.0, 0.0, 0.0));
        }
        for l in &scene.leds {
            assert_eq!(l.normal, Vec3::new(0.0, 0.0, -1.0));
        }
        for p in &scene.pds {
            assert_eq!(p.normal, Vec3::new(0.0, 0.0, 1.0));
            assert_relative_eq!((p.position.x - 2.0).abs(), 0.1, epsilon = 1e-12);
            assert_relative_eq!((p.position.y - 3.2).abs(), 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn no_elements_is_allowed() {
        let scene = build_scene(&SceneConfig::default().with_element_count(0)).unwrap();
        assert!(scene.oirs.is_empty());
    }

    #[test]
    fn receiver_outside_room_is_rejected() {
        let mut cfg = SceneConfig::default();
        cfg.pds = DeviceLayout::Grid {
            count: 4,
            spacing: 0.2,
            center: Vec3::new(9.0, 3.2, 1.0),
            normal: Vec3::new(0.0, 0.0, 1.0),
        };
        assert!(matches!(build_scene(&cfg), Err(Error::OutsideRoom { .. })));
    }

    #[test]
    fn zero_normal_is_rejected() {
        let mut cfg = SceneConfig::default();
        cfg.leds = DeviceLayout::Explicit {
            devices: vec![[Vec3::new(1.0, 1.0, 3.0), Vec3::default()]],
        };
        assert!(matches!(build_scene(&cfg), Err(Error::ZeroNormal(_))));
    }

    #[test]
    fn grid_shapes_follow_aspect() {
        let aspect = 6.0 / 1.7;
        assert_eq!(grid_shape(32, aspect), (4, 8));
        assert_eq!(grid_shape(16, aspect), (2, 8));
        assert_eq!(grid_shape(8, aspect), (2, 4));
        assert_eq!(grid_shape(7, aspect), (1, 7));
    }

    #[test]
    fn scene_json_round_trip() {
        let cfg = SceneConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: SceneConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
        let partial: SceneConfig = serde_json::from_str(r#"{"room":[5,5,3]}"#).unwrap();
        assert_eq!(partial.room, Vec3::new(5.0, 5.0, 3.0));
    }
}
