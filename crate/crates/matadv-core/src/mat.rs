//! Deep medial-axis-transform autoencoder: the encoder maps a cloud to
//! sphere centers, radii, and features Θ = ⟨C, R, Z⟩; the decoder samples
//! each sphere's surface, interpolates features onto the samples, and
//! refines them with skip-connected MLPs.

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{self, PointCloud};
use crate::nn::Mlp;
use crate::weights::ParamSet;

/// Architecture sizes shared by encoder and decoder.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatConfig {
    /// Sphere count n.
    pub n_spheres: usize,
    /// Feature width D_F.
    pub feature_dim: usize,
    /// FPS subset size N′ fed to the backbone.
    pub n_sampled: usize,
    /// Grouping neighborhood for the backbone.
    pub k_b: usize,
    /// Surface samples per sphere s (decode output is n·s points).
    pub pts_per_sphere: usize,
    /// Interpolation neighborhood: centers per decoded point.
    pub k_i: usize,
}

impl Default for MatConfig {
    fn default() -> Self {
        // Desk defaults: N = 256 inputs give s = N / n = 2.
        MatConfig {
            n_spheres: 128,
            feature_dim: 64,
            n_sampled: 256,
            k_b: 16,
            pts_per_sphere: 2,
            k_i: 8,
        }
    }
}

impl MatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_spheres == 0
            || self.feature_dim == 0
            || self.n_sampled == 0
            || self.pts_per_sphere == 0
        {
            return Err(Error::InvalidArgument("mat config: zero-sized field".into()));
        }
        if self.k_b == 0 || self.k_b > self.n_sampled {
            return Err(Error::InvalidArgument(format!(
                "mat config: k_b {} out of range for {} sampled points",
                self.k_b, self.n_sampled
            )));
        }
        if self.k_i == 0 || self.k_i > self.n_spheres {
            return Err(Error::InvalidArgument(format!(
                "mat config: k_i {} out of range for {} spheres",
                self.k_i, self.n_spheres
            )));
        }
        Ok(())
    }
}

/// Θ = ⟨C, R, Z⟩: validated sphere centers (n×3), radii (n×1, nonnegative),
/// and features (n×D_F).
#[derive(Debug, Clone, PartialEq)]
pub struct MATRep {
    pub centers: Tensor,
    pub radii: Tensor,
    pub features: Tensor,
}

#[derive(Serialize, Deserialize)]
struct MatRepJson {
    centers: Vec<[f64; 3]>,
    radii: Vec<f64>,
    features: Vec<Vec<f64>>,
}

impl MATRep {
    pub fn new(centers: Tensor, radii: Tensor, features: Tensor) -> Result<Self> {
        let n = centers.rows();
        if centers.cols() != 3 || radii.shape() != (n, 1) || features.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "mat_rep",
                detail: format!(
                    "centers {:?}, radii {:?}, features {:?}",
                    centers.shape(),
                    radii.shape(),
                    features.shape()
                ),
            });
        }
        if n == 0 {
            return Err(Error::InvalidArgument("mat_rep: zero spheres".into()));
        }
        if !(centers.all_finite() && radii.all_finite() && features.all_finite()) {
            return Err(Error::NonFinite { op: "mat_rep" });
        }
        if radii.data().iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidArgument("mat_rep: negative radius".into()));
        }
        Ok(MATRep {
            centers,
            radii,
            features,
        })
    }

    pub fn n(&self) -> usize {
        self.centers.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mirror = MatRepJson {
            centers: self.centers.to_points()?,
            radii: self.radii.data().to_vec(),
            features: self.features.to_nested(),
        };
        Ok(serde_json::to_string(&mirror)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mirror: MatRepJson = serde_json::from_str(s)?;
        let n = mirror.centers.len();
        MATRep::new(
            Tensor::from_points(&mirror.centers),
            Tensor::new(n, 1, mirror.radii)?,
            Tensor::from_nested(&mirror.features)?,
        )
    }
}

/// Tape handles produced by one encoder pass.
pub struct EncVars {
    pub c: Var,
    pub r: Var,
    pub z: Var,
    pub w: Var,
    pub ps: Var,
}

/// FPS + local-grouping backbone and the convex weight head.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub cfg: MatConfig,
    pub backbone: Mlp,
    pub weight_head: Mlp,
    /// Fixes the FPS starting point so encode is deterministic.
    pub fps_seed: u64,
}

impl EncoderModel {
    pub fn new(cfg: MatConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(EncoderModel {
            backbone: Mlp::new("enc.backbone", &[3, 32, cfg.feature_dim], &mut rng),
            weight_head: Mlp::new(
                "enc.weight_head",
                &[cfg.feature_dim, 64, cfg.n_spheres],
                &mut rng,
            ),
            cfg,
            fps_seed: seed,
        })
    }

    /// Encodes a point Var already on `tape`. Sampling and grouping indices
    /// come from the Var's current values; gradients flow through gathers.
    pub fn build_encode(
        &self,
        tape: &mut Tape,
        points: Var,
        trainable: bool,
    ) -> Result<(EncVars, Vec<Var>)> {
        let cfg = &self.cfg;
        let pts = tape.value(points).to_points()?;
        if pts.len() < cfg.n_sampled {
            return Err(Error::InvalidArgument(format!(
                "encode: {} points < N' {}",
                pts.len(),
                cfg.n_sampled
            )));
        }
        let cloud = PointCloud::new(pts, None)?;
        let fps = geom::farthest_point_sample(&cloud, cfg.n_sampled, self.fps_seed)?;
        let ps_cloud = PointCloud::new(
            fps.as_slice().iter().map(|&i| cloud.points[i]).collect(),
            None,
        )?;
        let groups = geom::knn(&ps_cloud, &cloud, cfg.k_b)?;

        let bb = self.backbone.bind(tape, trainable);
        let wh = self.weight_head.bind(tape, trainable);
        let mut params = bb.vars();
        params.extend(wh.vars());

        let ps = tape.gather_rows(points, fps.as_slice())?;
        let mut anchor_idx = Vec::with_capacity(cfg.n_sampled * cfg.k_b);
        let mut member_idx = Vec::with_capacity(cfg.n_sampled * cfg.k_b);
        for (i, row) in groups.iter().enumerate() {
            for &j in row {
                anchor_idx.push(i);
                member_idx.push(j);
            }
        }
        let members = tape.gather_rows(points, &member_idx)?;
        let anchors = tape.gather_rows(ps, &anchor_idx)?;
        let local = tape.sub(members, anchors)?;
        let h = bb.apply(tape, local)?;
        let h = tape.relu(h)?;
        let fs = tape.group_max(h, cfg.k_b)?;

        let wl = wh.apply(tape, fs)?;
        let w = tape.col_softmax(wl)?;

        let c = tape.matmul_tn(w, ps)?;
        let z = tape.matmul_tn(w, fs)?;
        let d2 = tape.pairwise_sqdist(ps, c)?;
        let dmin = tape.min_over_cols(d2)?;
        let d = tape.sqrt(dmin)?;
        let r = tape.matmul_tn(w, d)?;
        Ok((EncVars { c, r, z, w, ps }, params))
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<MATRep> {
        Ok(self.encode_detail(cloud)?.0)
    }

    /// Encode plus the convex weights W and the sampled subset P^s, for
    /// convexity audits.
    pub fn encode_detail(&self, cloud: &PointCloud) -> Result<(MATRep, Tensor, Vec<[f64; 3]>)> {
        let mut tape = Tape::new();
        let points = tape.constant(Tensor::from_points(&cloud.points));
        let (vars, _) = self.build_encode(&mut tape, points, false)?;
        let rep = MATRep::new(
            tape.value(vars.c).clone(),
            tape.value(vars.r).clone(),
            tape.value(vars.z).clone(),
        )?;
        let w = tape.value(vars.w).clone();
        let ps = tape.value(vars.ps).to_points()?;
        Ok((rep, w, ps))
    }
}

impl ParamSet for EncoderModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut t = self.backbone.named_tensors();
        t.extend(self.weight_head.named_tensors());
        t
    }
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut t = self.backbone.named_tensors_mut();
        t.extend(self.weight_head.named_tensors_mut());
        t
    }
}

/// Tape handles produced by one decoder pass.
pub struct DecodeVars {
    /// Refined output (n·s×3).
    pub out: Var,
    /// Raw sphere-surface samples before refinement (n·s×3).
    pub q: Var,
    /// Interpolated per-point features (n·s×D_F).
    pub y: Var,
}

/// Sphere-surface sampler plus two skip-connected refinement MLPs.
#[derive(Debug, Clone)]
pub struct DecoderModel {
    pub cfg: MatConfig,
    pub mlp1: Mlp,
    pub mlp2: Mlp,
}

impl DecoderModel {
    pub fn new(cfg: MatConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = 3 + cfg.feature_dim;
        Ok(DecoderModel {
            mlp1: Mlp::new("dec.stage1", &[width, 128, 3], &mut rng),
            mlp2: Mlp::new("dec.stage2", &[width, 128, 3], &mut rng),
            cfg,
        })
    }

    /// Decodes Θ Vars already on `tape` with `s` surface samples per sphere
    /// over the fixed Fibonacci lattice. Radii pass through a zero-clamp, so
    /// negative perturbed radii behave as zero.
    pub fn build_decode(
        &self,
        tape: &mut Tape,
        c: Var,
        r: Var,
        z: Var,
        s: usize,
        trainable: bool,
    ) -> Result<(DecodeVars, Vec<Var>)> {
        if s == 0 {
            return Err(Error::InvalidArgument("decode: s must be positive".into()));
        }
        let n = tape.value(c).rows();
        let lattice = geom::fibonacci_directions(s);
        let mut tile = Vec::with_capacity(n * s);
        for _ in 0..n {
            tile.extend_from_slice(&lattice);
        }
        self.build_decode_tile(tape, c, r, z, &tile, trainable)
    }

    /// Decode with an explicit unit direction per output row, in the row
    /// order of [`sphere_samples_tile_var`]. Training feeds per-sphere
    /// rotated lattices through here.
    pub fn build_decode_tile(
        &self,
        tape: &mut Tape,
        c: Var,
        r: Var,
        z: Var,
        tile: &[[f64; 3]],
        trainable: bool,
    ) -> Result<(DecodeVars, Vec<Var>)> {
        let n = tape.value(c).rows();
        let feature_dim = tape.value(z).cols();
        if tape.value(c).cols() != 3
            || tape.value(r).shape() != (n, 1)
            || tape.value(z).rows() != n
        {
            return Err(Error::ShapeMismatch {
                op: "decode",
                detail: format!(
                    "C {:?}, R {:?}, Z {:?}",
                    tape.value(c).shape(),
                    tape.value(r).shape(),
                    tape.value(z).shape()
                ),
            });
        }
        if self.cfg.k_i > n {
            return Err(Error::InvalidArgument(format!(
                "decode: k_i {} > {} spheres",
                self.cfg.k_i, n
            )));
        }
        if feature_dim != self.cfg.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "decode",
                detail: format!(
                    "feature width {feature_dim} vs model {}",
                    self.cfg.feature_dim
                ),
            });
        }

        let q = sphere_samples_tile_var(tape, c, r, tile)?;

        let d2 = tape.pairwise_sqdist(q, c)?;
        let mask = nearest_mask(tape.value(d2), self.cfg.k_i);
        let d = tape.sqrt(d2)?;
        let neg_d = tape.neg(d)?;
        let wgt = tape.masked_row_softmax(neg_d, &mask)?;
        let y = tape.matmul(wgt, z)?;

        let m1 = self.mlp1.bind(tape, trainable);
        let m2 = self.mlp2.bind(tape, trainable);
        let mut params = m1.vars();
        params.extend(m2.vars());

        let qy = tape.concat_cols(q, y)?;
        let h1 = m1.apply(tape, qy)?;
        let s1 = tape.add(q, h1)?;
        let s1y = tape.concat_cols(s1, y)?;
        let h2 = m2.apply(tape, s1y)?;
        let out = tape.add(s1, h2)?;
        Ok((DecodeVars { out, q, y }, params))
    }

    /// Pure reconstruction; identical inputs give identical outputs.
    pub fn decode(&self, rep: &MATRep) -> Result<PointCloud> {
        self.decode_with(rep, self.cfg.pts_per_sphere, true)
    }

    /// Raw sphere samples Q without refinement.
    pub fn decode_coarse(&self, rep: &MATRep) -> Result<PointCloud> {
        self.decode_with(rep, self.cfg.pts_per_sphere, false)
    }

    /// Decode with an explicit per-sphere sample count; `refine` selects the
    /// MLP output versus raw Q.
    pub fn decode_with(&self, rep: &MATRep, s: usize, refine: bool) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let c = tape.constant(rep.centers.clone());
        let r = tape.constant(rep.radii.clone());
        let z = tape.constant(rep.features.clone());
        let (vars, _) = self.build_decode(&mut tape, c, r, z, s, false)?;
        let chosen = if refine { vars.out } else { vars.q };
        PointCloud::new(tape.value(chosen).to_points()?, None)
    }
}

impl ParamSet for DecoderModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut t = self.mlp1.named_tensors();
        t.extend(self.mlp2.named_tensors());
        t
    }
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut t = self.mlp1.named_tensors_mut();
        t.extend(self.mlp2.named_tensors_mut());
        t
    }
}

/// Encoder and decoder as one persistable parameter set.
#[derive(Debug, Clone)]
pub struct MatAutoencoder {
    pub enc: EncoderModel,
    pub dec: DecoderModel,
}

impl MatAutoencoder {
    pub fn new(cfg: MatConfig, seed: u64) -> Result<Self> {
        Ok(MatAutoencoder {
            enc: EncoderModel::new(cfg.clone(), seed)?,
            dec: DecoderModel::new(cfg, seed.wrapping_add(1))?,
        })
    }
}

impl ParamSet for MatAutoencoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut t = self.enc.named_params();
        t.extend(self.dec.named_params());
        t
    }
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut t = self.enc.named_params_mut();
        t.extend(self.dec.named_params_mut());
        t
    }
}

/// Surface samples for every sphere in sphere-major, lattice-index-minor
/// order: row j·s+t is cⱼ + max(rⱼ,0)·uₜ over the s-point Fibonacci lattice.
/// Shared by the decoder and by encoder pretraining (which scores raw
/// coverage without refinement).
pub fn sphere_samples_var(tape: &mut Tape, c: Var, r: Var, s: usize) -> Result<Var> {
    let n = tape.value(c).rows();
    if s == 0 {
        return Err(Error::InvalidArgument("sphere samples: s must be positive".into()));
    }
    let lattice = geom::fibonacci_directions(s);
    let mut tile = Vec::with_capacity(n * s);
    for _ in 0..n {
        tile.extend_from_slice(&lattice);
    }
    sphere_samples_tile_var(tape, c, r, &tile)
}

/// Surface samples with an explicit direction per output row. `tile` row
/// j·s+t is the unit direction for sphere j's sample t, where s is inferred
/// as `tile.len() / n`. Training rotates the lattice per sphere through this
/// entry point so refinement generalizes to directions unseen at any fixed s.
pub fn sphere_samples_tile_var(
    tape: &mut Tape,
    c: Var,
    r: Var,
    tile: &[[f64; 3]],
) -> Result<Var> {
    let n = tape.value(c).rows();
    if tile.is_empty() || tile.len() % n != 0 {
        return Err(Error::InvalidArgument(format!(
            "sphere samples: {} directions not a positive multiple of {n} spheres",
            tile.len()
        )));
    }
    let s = tile.len() / n;
    let rc = tape.relu(r)?;
    let sphere_idx: Vec<usize> = (0..n).flat_map(|j| std::iter::repeat(j).take(s)).collect();
    let flat: Vec<f64> = tile.iter().flatten().copied().collect();
    let u_tile = tape.constant(Tensor::new(n * s, 3, flat)?);
    let centers_rep = tape.gather_rows(c, &sphere_idx)?;
    let radii_rep = tape.gather_rows(rc, &sphere_idx)?;
    let offsets = tape.mul(u_tile, radii_rep)?;
    tape.add(offsets, centers_rep)
}

/// Fibonacci lattice rotated by an independent uniform rotation per sphere,
/// flattened in the sphere-major row order of [`sphere_samples_tile_var`].
pub fn rotated_lattice_tile(n: usize, s: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let lattice = geom::fibonacci_directions(s);
    let mut tile = Vec::with_capacity(n * s);
    for _ in 0..n {
        let rot = geom::random_rotation(rng);
        tile.extend(lattice.iter().map(|&u| geom::mat_vec(&rot, u)));
    }
    tile
}

/// Per-row boolean mask marking each row's `k` smallest entries (ties to the
/// lowest column index).
fn nearest_mask(d2: &Tensor, k: usize) -> Vec<bool> {
    let (rows, cols) = d2.shape();
    let mut mask = vec![false; rows * cols];
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..rows {
        order.clear();
        order.extend(0..cols);
        order.sort_by(|&a, &b| d2.at(r, a).total_cmp(&d2.at(r, b)).then(a.cmp(&b)));
        for &c in order.iter().take(k) {
            mask[r * cols + c] = true;
        }
    }
    mask
}

/// Re-expresses `cloud` through the autoencoder with `s` surface samples per
/// sphere (n·s output points); `refine` picks refined versus raw samples.
pub fn resample_from_mat(
    enc: &EncoderModel,
    dec: &DecoderModel,
    cloud: &PointCloud,
    s: usize,
    refine: bool,
) -> Result<PointCloud> {
    let rep = enc.encode(cloud)?;
    dec.decode_with(&rep, s, refine)
}
