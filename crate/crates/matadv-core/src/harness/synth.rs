//! Procedural shape dataset: eight analytic surfaces sampled uniformly by
//! area, per-cloud size jitter, random rotation, Gaussian noise, and unit
//! sphere normalization. Every cloud derives its own RNG from a labeled hash
//! of the dataset seed, so per-class streams are independent.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, PointCloud};
use crate::seeds;

const TAU: f64 = std::f64::consts::TAU;

/// The eight synthetic surface classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Capsule,
    Pyramid,
    Ell,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Capsule,
        ShapeClass::Pyramid,
        ShapeClass::Ell,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Capsule => "capsule",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::Ell => "ell",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape class: {s:?}")))
    }
}

/// Sampling recipe for one class: jitter scales the whole cloud by a uniform
/// factor in [1−jitter, 1+jitter], rotation is uniform over SO(3), noise is
/// isotropic Gaussian added per point before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    pub size_jitter: f64,
    pub noise_sigma: f64,
    pub points: usize,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.size_jitter >= 0.0 && self.size_jitter < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "shape spec: size jitter {} outside [0, 1)",
                self.size_jitter
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "shape spec: noise sigma {} must be finite and >= 0",
                self.noise_sigma
            )));
        }
        if self.points < 64 {
            return Err(Error::InvalidArgument(format!(
                "shape spec: {} points below the 64-point minimum",
                self.points
            )));
        }
        Ok(())
    }

    /// One labeled cloud: surface points, scaled, rotated, noised, normalized.
    pub fn sample_cloud(&self, label: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
        self.validate()?;
        let scale = 1.0 - self.size_jitter + 2.0 * self.size_jitter * rng.random::<f64>();
        let rot = geom::random_rotation(rng);
        let mut pts = surface_points(self.class, self.points, rng);
        for p in &mut pts {
            *p = geom::mat_vec(&rot, [p[0] * scale, p[1] * scale, p[2] * scale]);
        }
        // σ = 0 draws nothing, leaving antipodal sphere pairs exactly opposed
        // so that centering cannot move points off the unit shell.
        if self.noise_sigma > 0.0 {
            for p in &mut pts {
                let g = geom::gaussian3(rng);
                for a in 0..3 {
                    p[a] += self.noise_sigma * g[a];
                }
            }
        }
        let cloud = PointCloud::new(pts, Some(label))?;
        let (normed, _) = geom::normalize_unit_sphere(&cloud);
        Ok(normed)
    }
}

/// Whole-dataset recipe: class list plus shared sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub classes: Vec<ShapeClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub size_jitter: f64,
    pub noise_sigma: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: ShapeClass::ALL.to_vec(),
            train_per_class: 100,
            test_per_class: 25,
            points: 256,
            size_jitter: 0.2,
            noise_sigma: 0.01,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset spec: {} classes, need at least 2",
                self.classes.len()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::InvalidArgument(format!(
                    "dataset spec: duplicate class {c}"
                )));
            }
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidArgument(
                "dataset spec: per-class counts must be positive".into(),
            ));
        }
        self.shape_spec(self.classes[0]).validate()
    }

    pub fn shape_spec(&self, class: ShapeClass) -> ShapeSpec {
        ShapeSpec {
            class,
            size_jitter: self.size_jitter,
            noise_sigma: self.noise_sigma,
            points: self.points,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Labeled train/test split; labels index into the generating class list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn labels(clouds: &[PointCloud]) -> Result<Vec<usize>> {
        clouds
            .iter()
            .map(|c| {
                c.label
                    .ok_or_else(|| Error::InvalidArgument("dataset: unlabeled cloud".into()))
            })
            .collect()
    }
}

/// Deterministic dataset synthesis; train and test clouds draw from disjoint
/// labeled seed streams, so the splits never share a cloud.
pub fn synth_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut train = Vec::with_capacity(spec.classes.len() * spec.train_per_class);
    let mut test = Vec::with_capacity(spec.classes.len() * spec.test_per_class);
    for (label, &class) in spec.classes.iter().enumerate() {
        let shape = spec.shape_spec(class);
        shape.validate()?;
        for (split, count, out) in [
            ("train", spec.train_per_class, &mut train),
            ("test", spec.test_per_class, &mut test),
        ] {
            let stream = format!("synth-{split}-{}", class.name());
            for i in 0..count {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeds::stream_seed(&stream, seed, i as u64));
                out.push(shape.sample_cloud(label, &mut rng)?);
            }
        }
    }
    Ok(Dataset { train, test })
}

/// Writes one xyz file per cloud under `dir/train` and `dir/test`, zero-padded
/// so a lexical listing restores dataset order.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for (split, clouds) in [("train", &dataset.train), ("test", &dataset.test)] {
        let sub = dir.join(split);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, cloud) in clouds.iter().enumerate() {
            geom::save_xyz(cloud, sub.join(format!("{i:05}.xyz")))?;
        }
    }
    Ok(())
}

/// Reloads a directory written by [`save_dataset`]; file order is the dataset
/// order.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut splits: Vec<Vec<PointCloud>> = Vec::new();
    for split in ["train", "test"] {
        let sub = dir.join(split);
        let entries = std::fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut names: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "xyz"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no xyz files under {}",
                sub.display()
            )));
        }
        let mut clouds = Vec::with_capacity(names.len());
        for name in names {
            clouds.push(geom::load_xyz(&name)?);
        }
        splits.push(clouds);
    }
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset { train, test })
}

fn unit_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let g = geom::gaussian3(rng);
        let n2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
        if n2 > 1e-24 {
            let n = n2.sqrt();
            return [g[0] / n, g[1] / n, g[2] / n];
        }
    }
}

fn surface_points(class: ShapeClass, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    match class {
        ShapeClass::Sphere => sphere_points(n, rng),
        other => {
            (0..n)
                .map(|_| match other {
                    ShapeClass::Sphere => unreachable!(),
                    ShapeClass::Cube => cube_point(rng),
                    ShapeClass::Cylinder => cylinder_point(rng),
                    ShapeClass::Cone => cone_point(rng),
                    ShapeClass::Torus => torus_point(rng),
                    ShapeClass::Capsule => capsule_point(rng),
                    ShapeClass::Pyramid => pyramid_point(rng),
                    ShapeClass::Ell => ell_point(rng),
                })
                .collect()
        }
    }
}

/// Antithetic pairs (u, −u): adjacent pairs cancel exactly in the centroid
/// sum, so a noiseless sphere stays centered at the origin to the last bit
/// and normalization leaves every norm at 1 up to rounding. Odd counts close
/// with a 120° triple whose third member is the exact negated float sum of
/// the first two, keeping the centroid at rounding scale instead of ~1/n.
fn sphere_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(n);
    let pairs = if n % 2 == 1 { n.saturating_sub(3) / 2 } else { n / 2 };
    for _ in 0..pairs {
        let u = unit_direction(rng);
        pts.push(u);
        pts.push([-u[0], -u[1], -u[2]]);
    }
    if n % 2 == 1 {
        if n < 3 {
            pts.push(unit_direction(rng));
            return pts;
        }
        let a = unit_direction(rng);
        let w = orthonormal_to(a, rng);
        let h = 0.75_f64.sqrt();
        let b = [
            -0.5 * a[0] + h * w[0],
            -0.5 * a[1] + h * w[1],
            -0.5 * a[2] + h * w[2],
        ];
        let c = [-(a[0] + b[0]), -(a[1] + b[1]), -(a[2] + b[2])];
        pts.push(a);
        pts.push(b);
        pts.push(c);
    }
    pts
}

/// Unit vector orthogonal to `a` via Gram–Schmidt on fresh Gaussian draws.
fn orthonormal_to(a: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let g = geom::gaussian3(rng);
        let d = g[0] * a[0] + g[1] * a[1] + g[2] * a[2];
        let w = [g[0] - d * a[0], g[1] - d * a[1], g[2] - d * a[2]];
        let n2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
        if n2 > 1e-12 {
            let n = n2.sqrt();
            return [w[0] / n, w[1] / n, w[2] / n];
        }
    }
}

/// Cube of side 2: six equal-area faces.
fn cube_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let face = rng.random_range(0..6usize);
    let a = rng.random_range(-1.0..1.0);
    let b = rng.random_range(-1.0..1.0);
    match face {
        0 => [1.0, a, b],
        1 => [-1.0, a, b],
        2 => [a, 1.0, b],
        3 => [a, -1.0, b],
        4 => [a, b, 1.0],
        _ => [a, b, -1.0],
    }
}

/// Cylinder radius 0.7, z ∈ [−1, 1]; lateral shell versus caps weighted by
/// area (lateral share 2h/(2h+2r) with h = half-height 1).
fn cylinder_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const R: f64 = 0.7;
    let t = TAU * rng.random::<f64>();
    if rng.random::<f64>() < 2.0 / (2.0 + R) {
        [R * t.cos(), R * t.sin(), rng.random_range(-1.0..1.0)]
    } else {
        let rho = R * rng.random::<f64>().sqrt();
        let z = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
        [rho * t.cos(), rho * t.sin(), z]
    }
}

/// Cone: base radius 0.9 at z = −0.9, apex at z = +0.9. Lateral density grows
/// linearly from the apex, hence the √u radial fraction.
fn cone_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const R: f64 = 0.9;
    const H: f64 = 1.8;
    let slant = (R * R + H * H).sqrt();
    let t = TAU * rng.random::<f64>();
    if rng.random::<f64>() < slant / (slant + R) {
        let f = rng.random::<f64>().sqrt();
        [f * R * t.cos(), f * R * t.sin(), 0.9 - f * H]
    } else {
        let rho = R * rng.random::<f64>().sqrt();
        [rho * t.cos(), rho * t.sin(), -0.9]
    }
}

/// Torus (major 0.8, minor 0.3) in the xy-plane; the tube angle is drawn by
/// rejection against the (R + r·cosφ) area factor.
fn torus_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const RMAJ: f64 = 0.8;
    const RMIN: f64 = 0.3;
    let theta = TAU * rng.random::<f64>();
    let phi = loop {
        let phi = TAU * rng.random::<f64>();
        if rng.random::<f64>() < (RMAJ + RMIN * phi.cos()) / (RMAJ + RMIN) {
            break phi;
        }
    };
    let w = RMAJ + RMIN * phi.cos();
    [w * theta.cos(), w * theta.sin(), RMIN * phi.sin()]
}

/// Capsule: radius 0.5 tube with half-length 0.7 plus hemispherical caps; a
/// uniform sphere direction picks the cap side, keeping both caps uniform.
fn capsule_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const R: f64 = 0.5;
    const L: f64 = 0.7;
    if rng.random::<f64>() < L / (L + R) {
        let t = TAU * rng.random::<f64>();
        [R * t.cos(), R * t.sin(), rng.random_range(-L..L)]
    } else {
        let u = unit_direction(rng);
        let off = if u[2] >= 0.0 { L } else { -L };
        [R * u[0], R * u[1], off + R * u[2]]
    }
}

/// Square pyramid: half-extent 0.8 base at z = −0.8, apex at (0, 0, 0.8);
/// base versus triangular faces weighted by area, faces sampled barycentrically.
fn pyramid_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const A: f64 = 0.8;
    const APEX: f64 = 0.8;
    const BASE: f64 = -0.8;
    let h = APEX - BASE;
    let face_area = A * (h * h + A * A).sqrt();
    let base_area = 4.0 * A * A;
    if rng.random::<f64>() < base_area / (base_area + 4.0 * face_area) {
        [rng.random_range(-A..A), rng.random_range(-A..A), BASE]
    } else {
        const CORNERS: [[f64; 2]; 4] = [[A, A], [A, -A], [-A, -A], [-A, A]];
        let f = rng.random_range(0..4usize);
        let c1 = CORNERS[f];
        let c2 = CORNERS[(f + 1) % 4];
        let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        [
            r1 * c1[0] + r2 * c2[0],
            r1 * c1[1] + r2 * c2[1],
            APEX + (r1 + r2) * (BASE - APEX),
        ]
    }
}

/// L-shaped prism: the unit 2×2 square minus its +x,+y quadrant, extruded to
/// z ∈ [−0.4, 0.4]. Faces sample by rejection, walls by a perimeter walk.
fn ell_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const HZ: f64 = 0.4;
    const V: [[f64; 2]; 6] = [
        [-1.0, -1.0],
        [1.0, -1.0],
        [1.0, 0.0],
        [0.0, 0.0],
        [0.0, 1.0],
        [-1.0, 1.0],
    ];
    const PERIMETER: f64 = 8.0;
    const FACE_AREA: f64 = 3.0;
    let face_w = 2.0 * FACE_AREA / (2.0 * FACE_AREA + PERIMETER * 2.0 * HZ);
    if rng.random::<f64>() < face_w {
        let z = if rng.random::<f64>() < 0.5 { HZ } else { -HZ };
        loop {
            let x = rng.random_range(-1.0..1.0);
            let y = rng.random_range(-1.0..1.0);
            if !(x > 0.0 && y > 0.0) {
                return [x, y, z];
            }
        }
    } else {
        let mut d = PERIMETER * rng.random::<f64>();
        let z = rng.random_range(-HZ..HZ);
        for i in 0..6 {
            let a = V[i];
            let b = V[(i + 1) % 6];
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if d <= len {
                let t = d / len;
                return [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), z];
            }
            d -= len;
        }
        [V[0][0], V[0][1], z]
    }
}
