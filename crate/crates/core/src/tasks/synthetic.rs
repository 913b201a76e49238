//! Seeded primitive-surface clouds standing in for a real shape benchmark.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledCloud;
use crate::error::{invalid_arg, Result};
use crate::geometry::{Point3, PointCloud};
use crate::training::mix_seed;

pub const CLASS_NAMES: [&str; 4] = ["sphere", "cube", "cylinder", "cone"];
pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// Relative standard deviation of the per-point jitter.
pub const JITTER: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    /// Flat slab on four thin legs; not one of the benchmark classes.
    Table,
}

impl ShapeKind {
    pub fn from_label(label: usize) -> Result<Self> {
        match label {
            0 => Ok(Self::Sphere),
            1 => Ok(Self::Cube),
            2 => Ok(Self::Cylinder),
            3 => Ok(Self::Cone),
            _ => invalid_arg(format!("class label {label} outside [0, {NUM_CLASSES})")),
        }
    }
}

/// A generated cloud together with its noise-free canonical surface points.
#[derive(Debug, Clone)]
pub struct ShapeSample {
    pub cloud: PointCloud,
    /// Pre-pose surface point behind each cloud point.
    pub canonical: Vec<Point3>,
    /// Canonical length times this factor gives a length in cloud units.
    pub unit_scale: f64,
    /// Surface part per point: a face or cap id, or `1 + leg` for tables.
    pub parts: Vec<u8>,
}

impl ShapeSample {
    /// Cloud-unit distance from each point to the nearest edge of a canonical
    /// cube with half-side 1.
    pub fn cube_edge_distance(&self) -> Vec<f64> {
        self.canonical
            .iter()
            .map(|p| {
                // On a face one coordinate is ±1; the edge distance is the
                // smaller gap of the other two to ±1.
                let mut gaps: Vec<f64> = p.iter().map(|c| 1.0 - c.abs()).collect();
                gaps.sort_by(f64::total_cmp);
                gaps[1] * self.unit_scale
            })
            .collect()
    }
}

struct Part {
    area: f64,
    sample: fn(&mut ChaCha8Rng) -> Point3,
    id: u8,
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..=1.0)
}

fn disk(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..2.0 * PI);
    (r * t.cos(), r * t.sin())
}

const CYL_R: f64 = 0.6;
const CONE_R: f64 = 0.8;
const TABLE_TOP: [f64; 3] = [1.0, 0.6, 0.03];
const TABLE_TOP_Z: f64 = 0.67;
const LEG_R: f64 = 0.04;
const LEG_H: f64 = 0.64;
const LEG_XY: [f64; 2] = [0.85, 0.45];

fn sphere(rng: &mut ChaCha8Rng) -> Point3 {
    let v: Point3 = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-300);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn face(axis: usize, sign: f64, rng: &mut ChaCha8Rng) -> Point3 {
    let mut p = [unit(rng), unit(rng), unit(rng)];
    p[axis] = sign;
    p
}

fn cylinder_side(rng: &mut ChaCha8Rng) -> Point3 {
    let t = rng.random_range(0.0..2.0 * PI);
    [CYL_R * t.cos(), CYL_R * t.sin(), unit(rng)]
}

fn cylinder_cap(rng: &mut ChaCha8Rng, z: f64) -> Point3 {
    let (x, y) = disk(rng, CYL_R);
    [x, y, z]
}

fn cone_side(rng: &mut ChaCha8Rng) -> Point3 {
    // Apex at z = 1; surface density grows linearly with distance from it.
    let s = rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..2.0 * PI);
    [CONE_R * s * t.cos(), CONE_R * s * t.sin(), 1.0 - 2.0 * s]
}

fn cone_base(rng: &mut ChaCha8Rng) -> Point3 {
    let (x, y) = disk(rng, CONE_R);
    [x, y, -1.0]
}

fn table_top(rng: &mut ChaCha8Rng) -> Point3 {
    let [a, b, c] = TABLE_TOP;
    let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut f = 0;
    while pick >= areas[f] && f < 5 {
        pick -= areas[f];
        f += 1;
    }
    let mut p = [a * unit(rng), b * unit(rng), c * unit(rng)];
    let axis = f / 2;
    p[axis] = TABLE_TOP[axis] * if f % 2 == 0 { 1.0 } else { -1.0 };
    p[2] += TABLE_TOP_Z;
    p
}

fn table_leg(rng: &mut ChaCha8Rng, leg: usize) -> Point3 {
    let cx = if leg & 1 == 0 { LEG_XY[0] } else { -LEG_XY[0] };
    let cy = if leg & 2 == 0 { LEG_XY[1] } else { -LEG_XY[1] };
    let t = rng.random_range(0.0..2.0 * PI);
    [cx + LEG_R * t.cos(), cy + LEG_R * t.sin(), rng.random_range(0.0..LEG_H)]
}

fn parts(kind: ShapeKind) -> Vec<Part> {
    macro_rules! part {
        ($area:expr, $id:expr, $f:expr) => {
            Part { area: $area, sample: $f, id: $id }
        };
    }
    let cyl_side = 2.0 * PI * CYL_R * 2.0;
    let cyl_cap = PI * CYL_R * CYL_R;
    let cone_side_area = PI * CONE_R * (CONE_R * CONE_R + 4.0).sqrt();
    let leg = 2.0 * PI * LEG_R * LEG_H;
    let [a, b, c] = TABLE_TOP;
    let top = 8.0 * (a * b + a * c + b * c);
    match kind {
        ShapeKind::Sphere => vec![part!(1.0, 0, sphere)],
        ShapeKind::Cube => vec![
            part!(4.0, 0, |r| face(0, 1.0, r)),
            part!(4.0, 1, |r| face(0, -1.0, r)),
            part!(4.0, 2, |r| face(1, 1.0, r)),
            part!(4.0, 3, |r| face(1, -1.0, r)),
            part!(4.0, 4, |r| face(2, 1.0, r)),
            part!(4.0, 5, |r| face(2, -1.0, r)),
        ],
        ShapeKind::Cylinder => vec![
            part!(cyl_side, 0, cylinder_side),
            part!(cyl_cap, 1, |r| cylinder_cap(r, 1.0)),
            part!(cyl_cap, 2, |r| cylinder_cap(r, -1.0)),
        ],
        ShapeKind::Cone => vec![
            part!(cone_side_area, 0, cone_side),
            part!(PI * CONE_R * CONE_R, 1, cone_base),
        ],
        ShapeKind::Table => vec![
            part!(top, 0, table_top),
            part!(leg, 1, |r| table_leg(r, 0)),
            part!(leg, 2, |r| table_leg(r, 1)),
            part!(leg, 3, |r| table_leg(r, 2)),
            part!(leg, 4, |r| table_leg(r, 3)),
        ],
    }
}

fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `n` surface points of `kind` under a seeded random pose.
///
/// Points are drawn area-weighted, rotated, scaled by a factor in
/// `[0.8, 1.2]`, jittered with `σ = JITTER · scale`, then centred and scaled
/// into the unit ball.
pub fn sample_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<ShapeSample> {
    if n == 0 {
        return invalid_arg("a shape needs at least one point");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = rotation(&mut rng);
    let scale = rng.random_range(0.8..=1.2);
    let noise = Normal::new(0.0, JITTER * scale).expect("positive sigma");
    let parts = parts(kind);
    let total: f64 = parts.iter().map(|p| p.area).sum();
    let mut canonical = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut posed = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.random_range(0.0..total);
        let mut i = 0;
        while i + 1 < parts.len() && pick >= parts[i].area {
            pick -= parts[i].area;
            i += 1;
        }
        let c = (parts[i].sample)(&mut rng);
        let r: Point3 = std::array::from_fn(|a| {
            scale * (rot[a][0] * c[0] + rot[a][1] * c[1] + rot[a][2] * c[2]) + noise.sample(&mut rng)
        });
        canonical.push(c);
        labels.push(parts[i].id);
        posed.push(r);
    }
    let centre = crate::geometry::centroid_of(posed.iter());
    for p in &mut posed {
        for a in 0..3 {
            p[a] -= centre[a];
        }
    }
    let radius = posed
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max)
        .max(1e-12);
    for p in &mut posed {
        for v in p.iter_mut() {
            *v /= radius;
        }
    }
    Ok(ShapeSample {
        cloud: PointCloud::new(posed)?,
        canonical,
        unit_scale: scale / radius,
        parts: labels,
    })
}

/// `num_per_class` clouds of every class, grouped by class.
pub fn make_synthetic_dataset(num_per_class: usize, n_points: usize, seed: u64) -> Result<Vec<LabeledCloud>> {
    if num_per_class == 0 || n_points == 0 {
        return invalid_arg("dataset counts must be at least 1");
    }
    let mut out = Vec::with_capacity(num_per_class * NUM_CLASSES);
    for label in 0..NUM_CLASSES {
        let kind = ShapeKind::from_label(label)?;
        for i in 0..num_per_class {
            let s = mix_seed(seed, (label * num_per_class + i) as u64);
            out.push(LabeledCloud { cloud: sample_shape(kind, n_points, s)?.cloud, label });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_balanced_finite_and_reproducible() {
        let a = make_synthetic_dataset(3, 64, 11).unwrap();
        assert_eq!(a.len(), 12);
        for label in 0..NUM_CLASSES {
            assert_eq!(a.iter().filter(|c| c.label == label).count(), 3);
        }
        for item in &a {
            assert_eq!(item.cloud.len(), 64);
            for p in item.cloud.coords() {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                assert!(r.is_finite() && r <= 1.0 + 1e-12);
            }
        }
        let b = make_synthetic_dataset(3, 64, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cloud.coords(), y.cloud.coords());
        }
        assert!(make_synthetic_dataset(0, 64, 1).is_err());
    }

    #[test]
    fn canonical_points_lie_on_their_surfaces() {
        let cube = sample_shape(ShapeKind::Cube, 200, 1).unwrap();
        for p in &cube.canonical {
            let m = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            assert!((m - 1.0).abs() < 1e-12);
        }
        let cone = sample_shape(ShapeKind::Cone, 200, 2).unwrap();
        for (p, &part) in cone.canonical.iter().zip(&cone.parts) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if part == 0 {
                assert!((r - CONE_R * (1.0 - p[2]) / 2.0).abs() < 1e-9);
            } else {
                assert_eq!(p[2], -1.0);
            }
        }
        let table = sample_shape(ShapeKind::Table, 2000, 3).unwrap();
        for leg in 1..=4u8 {
            assert!(table.parts.contains(&leg));
        }
    }

    #[test]
    fn unit_scale_maps_canonical_lengths() {
        // Pairwise distances survive the pose up to jitter.
        let s = sample_shape(ShapeKind::Cube, 50, 5).unwrap();
        let d = |a: &Point3, b: &Point3| crate::geometry::dist2(a, b).sqrt();
        let (a, b) = (0, 1);
        let canon = d(&s.canonical[a], &s.canonical[b]) * s.unit_scale;
        let cloud = d(s.cloud.point(a), s.cloud.point(b));
        assert!((canon - cloud).abs() < 0.05, "{canon} vs {cloud}");
        let edges = s.cube_edge_distance();
        assert!(edges.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = rotation(&mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
