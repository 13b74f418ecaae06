//! Point-cloud container, file I/O, normalization, sampling, and neighbor
//! queries used by every other module.
//!
//! All operations are pure functions of their inputs; tie-breaking is always
//! lowest-index so downstream consumers are fully deterministic.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense N×3 coordinate set with an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    /// Point coordinates in model units.
    pub points: Vec<[f64; 3]>,
    /// Class index in `[0, Z)` when the cloud is labeled.
    pub label: Option<usize>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty or non-finite input.
    pub fn new(points: Vec<[f64; 3]>, label: Option<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "point cloud contains non-finite coordinates".into(),
            ));
        }
        Ok(PointCloud { points, label })
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the cloud holds no points (constructors forbid this).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Arithmetic mean of the points.
    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        for d in 0..3 {
            c[d] /= n;
        }
        c
    }

    /// Flattens coordinates row-major.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Rebuilds a cloud from a row-major coordinate slice.
    pub fn from_flat(data: &[f64], label: Option<usize>) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "flat coordinate length {} is not a multiple of 3",
                data.len()
            )));
        }
        let points = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        PointCloud::new(points, label)
    }
}

/// Ordered list of distinct point indices into some cloud.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    /// Validates bounds and uniqueness.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {n} points"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!("duplicate index {i}")));
            }
            seen[i] = true;
        }
        Ok(IndexSet { indices })
    }

    /// The indices in selection order.
    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    /// Number of indices.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// True when no indices are held.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn sqdist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Reads an XYZ text file: optional first line `# label <int>`, then one
/// `x y z` triple per non-empty line.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut label = None;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("label"), Some(v), None) if points.is_empty() && label.is_none() => {
                    label = Some(v.parse::<usize>().map_err(|_| Error::MalformedLine {
                        path: path.into(),
                        line: lineno,
                        msg: format!("bad label {v:?}"),
                    })?);
                    continue;
                }
                _ => {
                    return Err(Error::MalformedLine {
                        path: path.into(),
                        line: lineno,
                        msg: "unrecognized comment line (expected '# label <int>')".into(),
                    })
                }
            }
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                path: path.into(),
                line: lineno,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (d, f) in fields.iter().enumerate() {
            p[d] = f.parse::<f64>().map_err(|_| Error::MalformedLine {
                path: path.into(),
                line: lineno,
                msg: format!("bad number {f:?}"),
            })?;
        }
        points.push(p);
    }
    PointCloud::new(points, label)
}

/// Writes a cloud as XYZ text. Coordinates use Rust's shortest exact decimal
/// representation, so a load round-trip reproduces them bit-for-bit.
pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    if let Some(label) = cloud.label {
        out.push_str(&format!("# label {label}\n"));
    }
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Centers the cloud on its centroid and scales the farthest point to norm 1.
///
/// Returns the normalized cloud and a degeneracy flag: a cloud whose points
/// are all identical maps to all zeros with the flag set instead of failing.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> (PointCloud, bool) {
    let c = cloud.centroid();
    let mut centered: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_norm = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0_f64, f64::max);
    let degenerate = max_norm < 1e-12;
    if degenerate {
        for p in &mut centered {
            *p = [0.0; 3];
        }
    } else {
        for p in &mut centered {
            for d in 0..3 {
                p[d] /= max_norm;
            }
        }
    }
    (
        PointCloud {
            points: centered,
            label: cloud.label,
        },
        degenerate,
    )
}

/// Farthest point sampling: the first index is drawn from a seeded RNG, each
/// subsequent index maximizes the minimum distance to the chosen set, ties
/// broken by lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed: u64) -> Result<IndexSet> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "farthest_point_sample: m = {m} out of range for {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    farthest_point_sample_from(cloud, m, first)
}

/// FPS with an explicit first index; the greedy rule is identical to
/// [`farthest_point_sample`].
pub fn farthest_point_sample_from(cloud: &PointCloud, m: usize, first: usize) -> Result<IndexSet> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "farthest_point_sample: m = {m} out of range for {n} points"
        )));
    }
    if first >= n {
        return Err(Error::InvalidArgument(format!(
            "farthest_point_sample: first index {first} out of range for {n} points"
        )));
    }
    let mut chosen = Vec::with_capacity(m);
    chosen.push(first);
    // min squared distance from each point to the chosen set
    let mut best = vec![f64::INFINITY; n];
    let mut last = first;
    for _ in 1..m {
        let lp = cloud.points[last];
        let mut arg = 0;
        let mut max_d = f64::NEG_INFINITY;
        for (i, p) in cloud.points.iter().enumerate() {
            let d = sqdist(p, &lp);
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > max_d {
                max_d = best[i];
                arg = i;
            }
        }
        chosen.push(arg);
        best[arg] = f64::NEG_INFINITY;
        last = arg;
    }
    IndexSet::new(chosen, n)
}

/// Brute-force k-nearest-neighbor query: row `i` lists the `k` base indices
/// nearest `query.points[i]`, ascending by distance, ties lowest-index first.
/// A query point contained in `base` includes itself.
pub fn knn(query: &PointCloud, base: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > base.len() {
        return Err(Error::InvalidArgument(format!(
            "knn: k = {k} out of range for base of {} points",
            base.len()
        )));
    }
    Ok(query
        .points
        .iter()
        .map(|q| knn_one(q, base, k))
        .collect())
}

/// Neighbor row for a single query point; same ordering contract as [`knn`].
pub fn knn_one(q: &[f64; 3], base: &PointCloud, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..base.len()).collect();
    let d: Vec<f64> = base.points.iter().map(|b| sqdist(q, b)).collect();
    order.sort_unstable_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Golden-ratio lattice directions on the unit sphere; a pure function of `s`
/// (no RNG), so every call returns identical rows.
pub fn fibonacci_directions(s: usize) -> Vec<[f64; 3]> {
    // golden angle in radians
    let ga = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..s)
        .map(|j| {
            let z = 1.0 - 2.0 * (j as f64 + 0.5) / s as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = j as f64 * ga;
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}

/// Deterministic uniform samples on a sphere surface: `center + radius·u_j`
/// over the Fibonacci lattice directions.
pub fn sample_sphere_surface(center: [f64; 3], radius: f64, s: usize) -> Result<Vec<[f64; 3]>> {
    if radius < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sample_sphere_surface: negative radius {radius}"
        )));
    }
    if s == 0 {
        return Err(Error::InvalidArgument(
            "sample_sphere_surface: s must be ≥ 1".into(),
        ));
    }
    Ok(fibonacci_directions(s)
        .into_iter()
        .map(|u| {
            [
                center[0] + radius * u[0],
                center[1] + radius * u[1],
                center[2] + radius * u[2],
            ]
        })
        .collect())
}

/// Box–Muller pair from uniforms; the log argument stays in (0, 1].
fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// Three standard normals; consumes exactly four uniforms from `rng`.
pub fn gaussian3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let (a, b) = gaussian_pair(rng);
    let (c, _) = gaussian_pair(rng);
    [a, b, c]
}

/// Applies a 3×3 matrix to a vector.
pub fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Uniform rotation from a uniform unit quaternion (subgroup algorithm).
/// Consumes exactly three uniforms from `rng`.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t2, t3) = (std::f64::consts::TAU * u2, std::f64::consts::TAU * u3);
    let (x, y, z, w) = (a * t2.sin(), a * t2.cos(), b * t3.sin(), b * t3.cos());
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}
