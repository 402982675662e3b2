//! Geometry of the bounded workspace: ellipsoidal obstacles, free-space
//! predicates and named task entities, plus the scenario file format.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sampling step for [`segment_min_clearance`], meters.
pub const DEFAULT_CLEARANCE_STEP: f64 = 0.05;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(String),
    #[error("obstacle {index}: shape matrix is not symmetric")]
    NotSymmetric { index: usize },
    #[error("obstacle {index}: shape matrix is not positive definite")]
    NotPositiveDefinite { index: usize },
    #[error("obstacle {index}: semi-axes must be positive")]
    BadSemiAxes { index: usize },
    #[error("bounds are empty: min must be below max on every axis")]
    EmptyBounds,
    #[error("duplicate entity id {0:?}")]
    DuplicateEntity(String),
    #[error("entity {0:?} is not in free space")]
    EntityNotFree(String),
    #[error("scenario I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// A point or displacement in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector, or zero when the input is (numerically) zero.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 1e-12 {
            self * (1.0 / n)
        } else {
            Vec3::ZERO
        }
    }

    /// Scales the vector down so its norm does not exceed `max`.
    pub fn clamp_norm(self, max: f64) -> Vec3 {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self
        }
    }

    /// Rotation about the world z axis by `angle` radians (counter-clockwise
    /// seen from above).
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
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
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2}, {:.2})", self.x, self.y, self.z)
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )
}

/// Rotation matrix for intrinsic z-y-x (yaw, pitch, roll) angles.
fn rotation_matrix(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

/// Pivoted LDLᵀ on a symmetric 3×3 matrix. Succeeds iff every pivot is
/// strictly positive, i.e. the matrix is positive definite.
fn pivoted_cholesky_ok(m: &Mat3) -> bool {
    let mut a = *m;
    let mut remaining = [0usize, 1, 2];
    let mut n = 3;
    while n > 0 {
        // largest remaining diagonal entry
        let (k, _) = remaining[..n]
            .iter()
            .enumerate()
            .map(|(k, &i)| (k, a[i][i]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let p = remaining[k];
        let pivot = a[p][p];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return false;
        }
        remaining.swap(k, n - 1);
        n -= 1;
        for &i in &remaining[..n] {
            for &j in &remaining[..n] {
                a[i][j] -= a[i][p] * a[p][j] / pivot;
            }
        }
    }
    true
}

/// How an obstacle's shape was written in the scenario file. Kept so that
/// saving reproduces the original representation exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShapeSpec {
    Matrix {
        shape_matrix: Mat3,
    },
    /// Semi-axis lengths (m) and `[roll, pitch, yaw]` in radians.
    Axes {
        semi_axes: [f64; 3],
        #[serde(default)]
        rotation: [f64; 3],
    },
}

/// Region `{p : (p−c)ᵀM(p−c) ≤ 1}` with `M` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub label: Option<String>,
    pub center: Vec3,
    shape: Mat3,
    spec: ShapeSpec,
}

impl Ellipsoid {
    pub fn from_matrix(center: Vec3, shape: Mat3) -> Result<Self, WorldError> {
        Self::from_spec(None, center, ShapeSpec::Matrix { shape_matrix: shape }, 0)
    }

    pub fn from_axes(center: Vec3, semi_axes: [f64; 3], rotation: [f64; 3]) -> Result<Self, WorldError> {
        Self::from_spec(None, center, ShapeSpec::Axes { semi_axes, rotation }, 0)
    }

    pub fn sphere(center: Vec3, radius: f64) -> Result<Self, WorldError> {
        Self::from_axes(center, [radius; 3], [0.0; 3])
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    fn from_spec(label: Option<String>, center: Vec3, spec: ShapeSpec, index: usize) -> Result<Self, WorldError> {
        if !center.is_finite() {
            return Err(WorldError::NonFinite(format!("obstacle {index} center")));
        }
        let shape = match &spec {
            ShapeSpec::Matrix { shape_matrix } => *shape_matrix,
            ShapeSpec::Axes { semi_axes, rotation } => {
                if semi_axes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
                    return Err(WorldError::BadSemiAxes { index });
                }
                let r = rotation_matrix(rotation[0], rotation[1], rotation[2]);
                let d = semi_axes.map(|a| 1.0 / (a * a));
                let mut m = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in i..3 {
                        let v = (0..3).map(|k| r[i][k] * d[k] * r[j][k]).sum::<f64>();
                        m[i][j] = v;
                        m[j][i] = v;
                    }
                }
                m
            }
        };
        if shape.iter().flatten().any(|v| !v.is_finite()) {
            return Err(WorldError::NonFinite(format!("obstacle {index} shape")));
        }
        for i in 0..3 {
            for j in 0..3 {
                if (shape[i][j] - shape[j][i]).abs() > SYMMETRY_TOLERANCE {
                    return Err(WorldError::NotSymmetric { index });
                }
            }
        }
        if !pivoted_cholesky_ok(&shape) {
            return Err(WorldError::NotPositiveDefinite { index });
        }
        Ok(Self { label, center, shape, spec })
    }

    pub fn shape(&self) -> &Mat3 {
        &self.shape
    }

    pub fn spec(&self) -> &ShapeSpec {
        &self.spec
    }

    /// `(p−c)ᵀM(p−c) − 1`: negative inside, zero on the surface.
    pub fn margin(&self, p: Vec3) -> f64 {
        let d = p - self.center;
        d.dot(mat_vec(&self.shape, d)) - 1.0
    }

    /// Gradient of the quadratic form at `p`, pointing away from the center.
    pub fn margin_gradient(&self, p: Vec3) -> Vec3 {
        mat_vec(&self.shape, p - self.center) * 2.0
    }

    /// Half-extent of the axis-aligned bounding box (sqrt of diag(M⁻¹)).
    pub fn half_extent(&self) -> Vec3 {
        let m = &self.shape;
        let cof = |a: usize, b: usize, c: usize, d: usize| m[a][c] * m[b][d] - m[a][d] * m[b][c];
        let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
        Vec3::new(
            (cof(1, 2, 1, 2) / det).sqrt(),
            (cof(0, 2, 0, 2) / det).sqrt(),
            (cof(0, 1, 0, 1) / det).sqrt(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, WorldError> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(WorldError::NonFinite("bounds".into()));
        }
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(WorldError::EmptyBounds);
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Target,
    Landmark,
    House,
    Tree,
    Car,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EntityKind::Target => "target",
            EntityKind::Landmark => "landmark",
            EntityKind::House => "house",
            EntityKind::Tree => "tree",
            EntityKind::Car => "car",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntity {
    pub id: String,
    pub kind: EntityKind,
    pub position: Vec3,
}

/// Where the harness places the swarm's spawn grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnArea {
    pub center: Vec3,
    pub spacing: f64,
}

/// Obstacles, entities and bounds. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub name: String,
    pub bounds: Bounds,
    pub obstacles: Vec<Ellipsoid>,
    pub entities: Vec<TaskEntity>,
    pub spawn: Option<SpawnArea>,
}

impl WorldState {
    pub fn new(bounds: Bounds, obstacles: Vec<Ellipsoid>, entities: Vec<TaskEntity>) -> Result<Self, WorldError> {
        let w = Self { name: String::new(), bounds, obstacles, entities, spawn: None };
        w.check_entities()?;
        Ok(w)
    }

    pub fn empty(bounds: Bounds) -> Self {
        Self { name: String::new(), bounds, obstacles: Vec::new(), entities: Vec::new(), spawn: None }
    }

    fn check_entities(&self) -> Result<(), WorldError> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entities {
            if !seen.insert(e.id.as_str()) {
                return Err(WorldError::DuplicateEntity(e.id.clone()));
            }
            if !e.position.is_finite() {
                return Err(WorldError::NonFinite(format!("entity {}", e.id)));
            }
            if !point_is_free(e.position, self) {
                return Err(WorldError::EntityNotFree(e.id.clone()));
            }
        }
        Ok(())
    }

    pub fn entity(&self, id: &str) -> Option<&TaskEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entities_of(&self, kind: EntityKind) -> impl Iterator<Item = &TaskEntity> {
        self.entities.iter().filter(move |e| e.kind == kind)
    }

    /// Smallest obstacle margin at `p`, `+∞` without obstacles.
    pub fn margin(&self, p: Vec3) -> f64 {
        self.obstacles.iter().map(|o| o.margin(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WorldError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let bounds = Bounds::new(file.bounds.min, file.bounds.max)?;
        let obstacles = file
            .obstacles
            .into_iter()
            .enumerate()
            .map(|(i, o)| Ellipsoid::from_spec(o.label, o.center, o.shape, i))
            .collect::<Result<Vec<_>, _>>()?;
        let w = Self { name: file.name, bounds, obstacles, entities: file.entities, spawn: file.spawn };
        w.check_entities()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            name: self.name.clone(),
            bounds: self.bounds,
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleRecord { label: o.label.clone(), center: o.center, shape: o.spec.clone() })
                .collect(),
            entities: self.entities.clone(),
            spawn: self.spawn,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Canonical urban scenario shipped with the crate: six houses and three
    /// trees as obstacles, eight cars and three landmarks as entities.
    pub fn urban() -> Self {
        Self::from_json(URBAN_SCENARIO).expect("bundled urban scenario is valid")
    }
}

pub const URBAN_SCENARIO: &str = include_str!("../scenarios/urban.scn");

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    name: String,
    bounds: Bounds,
    #[serde(default)]
    obstacles: Vec<ObstacleRecord>,
    #[serde(default)]
    entities: Vec<TaskEntity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spawn: Option<SpawnArea>,
}

#[derive(Serialize, Deserialize)]
struct ObstacleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    center: Vec3,
    #[serde(flatten)]
    shape: ShapeSpec,
}

/// True iff `p` lies inside the bounds and strictly outside every obstacle.
pub fn point_is_free(p: Vec3, w: &WorldState) -> bool {
    w.bounds.contains(p) && w.obstacles.iter().all(|o| o.margin(p) > 0.0)
}

/// Minimum obstacle margin sampled along `a→b` every `step` meters
/// (endpoints included). Returns `+∞` when the world has no obstacles.
pub fn segment_min_clearance(a: Vec3, b: Vec3, w: &WorldState, step: f64) -> f64 {
    if w.obstacles.is_empty() {
        return f64::INFINITY;
    }
    let len = a.distance(b);
    let n = ((len / step).ceil() as usize).max(1);
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            w.margin(a + (b - a) * t)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_box() -> Bounds {
        Bounds::new(Vec3::new(-10.0, -10.0, -10.0), Vec3::new(10.0, 10.0, 10.0)).unwrap()
    }

    fn world_with(obstacles: Vec<Ellipsoid>) -> WorldState {
        WorldState::new(ten_box(), obstacles, vec![]).unwrap()
    }

    const ID: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn obstacle_center_is_occupied() {
        let c = Vec3::new(1.0, 2.0, 3.0);
        let w = world_with(vec![Ellipsoid::from_matrix(c, ID).unwrap()]);
        assert!(!point_is_free(c, &w));
        assert_eq!(w.obstacles[0].margin(c), -1.0);
    }

    #[test]
    fn point_outside_unit_sphere_is_free() {
        let w = world_with(vec![Ellipsoid::from_matrix(Vec3::ZERO, ID).unwrap()]);
        assert!(point_is_free(Vec3::new(2.0, 0.0, 0.0), &w));
        assert!(!point_is_free(Vec3::new(11.0, 0.0, 0.0), &w));
    }

    #[test]
    fn stretched_ellipsoid_contains_point() {
        let m = [[1.0, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.0, 1.0]];
        let e = Ellipsoid::from_matrix(Vec3::ZERO, m).unwrap();
        let p = Vec3::new(0.0, 1.5, 0.0);
        // hand check: 1.5² · 0.25 = 0.5625
        assert!((e.margin(p) + 1.0 - 0.5625).abs() < 1e-15);
        assert!(!point_is_free(p, &world_with(vec![e])));
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(Ellipsoid::from_matrix(Vec3::ZERO, asym), Err(WorldError::NotSymmetric { .. })));
        let indefinite = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            Ellipsoid::from_matrix(Vec3::ZERO, indefinite),
            Err(WorldError::NotPositiveDefinite { .. })
        ));
        let semidef = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Ellipsoid::from_matrix(Vec3::ZERO, semidef).is_err());
        assert!(matches!(
            Ellipsoid::from_axes(Vec3::ZERO, [1.0, -1.0, 1.0], [0.0; 3]),
            Err(WorldError::BadSemiAxes { .. })
        ));
    }

    #[test]
    fn axes_form_matches_matrix_form() {
        let e = Ellipsoid::from_axes(Vec3::ZERO, [2.0, 1.0, 0.5], [0.0, 0.0, std::f64::consts::FRAC_PI_2]).unwrap();
        // yaw 90°: the 2 m axis now lies along y
        assert!(e.margin(Vec3::new(0.0, 1.99, 0.0)) < 0.0);
        assert!(e.margin(Vec3::new(1.01, 0.0, 0.0)) > 0.0);
        let h = e.half_extent();
        assert!((h.x - 1.0).abs() < 1e-12 && (h.y - 2.0).abs() < 1e-12 && (h.z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clearance_through_center_is_negative() {
        let w = world_with(vec![Ellipsoid::sphere(Vec3::ZERO, 1.0).unwrap()]);
        let m = segment_min_clearance(Vec3::new(-3.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0), &w, DEFAULT_CLEARANCE_STEP);
        assert!((m + 1.0).abs() < 1e-12);
        let far = segment_min_clearance(Vec3::new(-3.0, 5.0, 0.0), Vec3::new(3.0, 5.0, 0.0), &w, DEFAULT_CLEARANCE_STEP);
        assert!(far > 0.0);
    }

    #[test]
    fn clearance_matches_dense_sampling() {
        let w = world_with(vec![Ellipsoid::sphere(Vec3::ZERO, 1.0).unwrap()]);
        let a = Vec3::new(-2.0, 0.5, 0.0);
        let b = Vec3::new(2.0, 0.5, 0.0);
        // oracle: 1 mm sampling
        let oracle = (0..=4000)
            .map(|i| {
                let p = a + (b - a) * (i as f64 / 4000.0);
                p.dot(p) - 1.0
            })
            .fold(f64::INFINITY, f64::min);
        assert!((oracle + 0.75).abs() < 1e-12);
        let got = segment_min_clearance(a, b, &w, DEFAULT_CLEARANCE_STEP);
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn clearance_without_obstacles_is_infinite() {
        let w = world_with(vec![]);
        assert_eq!(segment_min_clearance(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0), &w, 0.05), f64::INFINITY);
    }

    #[test]
    fn degenerate_segment_equals_point_margin() {
        let w = world_with(vec![Ellipsoid::sphere(Vec3::new(1.0, 0.0, 0.0), 2.0).unwrap()]);
        let p = Vec3::new(3.5, 1.0, -0.5);
        assert_eq!(segment_min_clearance(p, p, &w, 0.05), w.margin(p));
    }

    #[test]
    fn entity_validation() {
        let e = |id: &str, p: Vec3| TaskEntity { id: id.into(), kind: EntityKind::Car, position: p };
        let obs = vec![Ellipsoid::sphere(Vec3::ZERO, 1.0).unwrap()];
        let dup = WorldState::new(ten_box(), vec![], vec![e("a", Vec3::ZERO), e("a", Vec3::new(1.0, 0.0, 0.0))]);
        assert!(matches!(dup, Err(WorldError::DuplicateEntity(_))));
        let blocked = WorldState::new(ten_box(), obs, vec![e("a", Vec3::ZERO)]);
        assert!(matches!(blocked, Err(WorldError::EntityNotFree(_))));
    }

    #[test]
    fn urban_scenario_loads() {
        let w = WorldState::urban();
        assert_eq!(w.entities_of(EntityKind::Car).count(), 8);
        let labels: Vec<_> = w.obstacles.iter().filter_map(|o| o.label.as_deref()).collect();
        assert_eq!(labels.iter().filter(|l| l.starts_with("house")).count(), 6);
        assert_eq!(labels.iter().filter(|l| l.starts_with("tree")).count(), 3);
        assert!(w.spawn.is_some());
    }

    #[test]
    fn scenario_round_trip_is_byte_exact() {
        let w = WorldState::urban();
        let once = w.to_json();
        let again = WorldState::from_json(&once).unwrap();
        assert_eq!(again, w);
        assert_eq!(again.to_json(), once);
        assert!(matches!(w.obstacles[0].spec(), ShapeSpec::Axes { .. }));
        assert!(w.obstacles.iter().any(|o| matches!(o.spec(), ShapeSpec::Matrix { .. })));
    }
}
