//! Voxel-guided ray sampling, occupancy compositing, uncertainty, losses and
//! the joint feature/decoder training step.
//!
//! A [`FieldModel`] lives in its own (anchor) frame; callers hand it rays and
//! camera poses already expressed in that frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DepthImage, KeyframePacket, RgbImage};
use crate::geometry::{Intrinsics, Pose, Ray};
use crate::nets::{Adam, AdamConfig, Head, MlpDecoder, SparseAdam, HIDDEN_WIDTH, MAX_HIDDEN};
use crate::octree::{GradientBuffer, GridConfig, OctreeFeatureGrid, QueryRecord};

/// Variance reported for rays that hit no allocated voxel.
pub const UNOBSERVED_VARIANCE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Samples per intersected leaf voxel.
    pub n_point: usize,
    /// Weight of the photometric term in the total loss.
    pub lambda_p: f64,
    /// Far limit for ray traversal (m).
    pub t_far: f64,
    /// Stop compositing once transmittance falls below this (0 disables).
    pub termination: f64,
    /// Rays per parallel work unit; results do not depend on it.
    pub chunk_rays: usize,
    /// Color written for rays that hit nothing.
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_point: 10,
            lambda_p: 1.0,
            t_far: 20.0,
            termination: 1e-4,
            chunk_rays: 128,
            background: [0.0; 3],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_point == 0 {
            return fail("n_point must be at least 1");
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return fail("lambda_p must be non-negative");
        }
        if !(self.t_far > 0.0) {
            return fail("t_far must be positive");
        }
        if !(0.0..1.0).contains(&self.termination) {
            return fail("termination must lie in [0, 1)");
        }
        if self.chunk_rays == 0 {
            return fail("chunk_rays must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub decoder_lr: f64,
    pub feature_lr: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: HIDDEN_WIDTH,
            decoder_lr: 1e-3,
            feature_lr: 1e-2,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden > MAX_HIDDEN {
            return Err(Error::Config(format!("hidden width must be in 1..={MAX_HIDDEN}")));
        }
        if !(self.decoder_lr > 0.0 && self.feature_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Feature grid, both decoders and their optimizer state.
#[derive(Clone, Debug)]
pub struct FieldModel {
    pub grid: OctreeFeatureGrid,
    pub occupancy: MlpDecoder,
    pub color: MlpDecoder,
    pub occupancy_opt: Adam,
    pub color_opt: Adam,
    pub feature_opt: SparseAdam,
}

impl FieldModel {
    pub fn new(grid: GridConfig, decoders: &DecoderConfig) -> Result<Self> {
        decoders.validate()?;
        let seed = grid.seed;
        let grid = OctreeFeatureGrid::new(grid)?;
        let f = grid.feature_dim();
        let occupancy = MlpDecoder::new(Head::Occupancy, f, decoders.hidden, seed.wrapping_add(1));
        let color = MlpDecoder::new(Head::Color, f, decoders.hidden, seed.wrapping_add(2));
        Ok(Self::from_parts(grid, occupancy, color, decoders))
    }

    pub fn from_parts(
        grid: OctreeFeatureGrid,
        occupancy: MlpDecoder,
        color: MlpDecoder,
        decoders: &DecoderConfig,
    ) -> Self {
        let f = grid.feature_dim();
        Self {
            occupancy_opt: Adam::new(AdamConfig::with_lr(decoders.decoder_lr), occupancy.param_count()),
            color_opt: Adam::new(AdamConfig::with_lr(decoders.decoder_lr), color.param_count()),
            feature_opt: SparseAdam::new(AdamConfig::with_lr(decoders.feature_lr), f),
            grid,
            occupancy,
            color,
        }
    }

    /// Checksum over every learnable value (features and decoder weights).
    pub fn parameter_checksum(&self) -> u64 {
        crate::octree::fnv1a(
            self.grid
                .features()
                .iter()
                .chain(self.occupancy.params())
                .chain(self.color.params())
                .map(|v| v.to_bits()),
        )
    }

    /// Occupancy at a point of the model frame, or `None` where no active
    /// level is allocated or the point is outside the extent.
    pub fn occupancy_at(&self, p: &crate::geometry::Vec3) -> Option<f64> {
        let mut z = vec![0.0; self.grid.feature_dim()];
        let rec = self.grid.interpolate_into(p, &mut z).ok()?;
        if rec.observation == crate::octree::Observation::Unobserved {
            return None;
        }
        let mut h = vec![0.0; self.occupancy.hidden_dim()];
        let mut o = [0.0];
        self.occupancy.forward_into(&z, &mut h, &mut o);
        Some(o[0])
    }

    /// Color at a point of the model frame, clamped to `[0, 1]`.
    pub fn color_at(&self, p: &crate::geometry::Vec3) -> Option<[f64; 3]> {
        let mut z = vec![0.0; self.grid.feature_dim()];
        let rec = self.grid.interpolate_into(p, &mut z).ok()?;
        if rec.observation == crate::octree::Observation::Unobserved {
            return None;
        }
        let mut h = vec![0.0; self.color.hidden_dim()];
        let mut c = [0.0; 3];
        self.color.forward_into(&z, &mut h, &mut c);
        Some(c.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Sample depths along one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub depths: Vec<f64>,
    /// Number of intersected leaf voxels.
    pub voxels: usize,
}

impl RaySamples {
    pub fn observed(&self) -> bool {
        !self.depths.is_empty()
    }
}

/// Stratified samples, `n_point` per intersected leaf. With `rng` the sample
/// is jittered within its stratum, otherwise it sits at the stratum midpoint.
pub fn sample_ray<R: Rng>(
    grid: &OctreeFeatureGrid,
    ray: &Ray,
    n_point: usize,
    t_far: f64,
    mut rng: Option<&mut R>,
) -> RaySamples {
    let hits = grid.ray_voxel_intersections(ray, 0.0, t_far);
    let mut depths = Vec::with_capacity(hits.len() * n_point);
    for hit in &hits {
        let w = (hit.t_exit - hit.t_entry) / n_point as f64;
        for j in 0..n_point {
            let u = match rng.as_deref_mut() {
                Some(r) => r.random::<f64>(),
                None => 0.5,
            };
            depths.push(hit.t_entry + (j as f64 + u) * w);
        }
    }
    RaySamples {
        depths,
        voxels: hits.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub depth: f64,
    pub color: [f64; 3],
    pub weights: Vec<f64>,
    pub observed: bool,
}

/// Weights `w_i = T_i · o_i` with exclusive transmittance
/// `T_i = Π_{j<i} (1 − o_j)`; depth and color are the weighted sums.
pub fn composite(depths: &[f64], occupancies: &[f64], colors: &[[f64; 3]]) -> Result<Composite> {
    if depths.len() != occupancies.len() || depths.len() != colors.len() {
        return Err(Error::DimensionMismatch {
            expected: depths.len(),
            got: occupancies.len().min(colors.len()),
        });
    }
    let mut weights = Vec::with_capacity(depths.len());
    let mut t = 1.0;
    let mut depth = 0.0;
    let mut color = [0.0; 3];
    for i in 0..depths.len() {
        let o = occupancies[i];
        if !(0.0..=1.0).contains(&o) {
            return Err(Error::OccupancyOutOfRange(o));
        }
        let w = t * o;
        weights.push(w);
        depth += w * depths[i];
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        t *= 1.0 - o;
    }
    Ok(Composite {
        depth,
        color,
        weights,
        observed: !depths.is_empty(),
    })
}

/// Mean Bernoulli variance `o(1 − o)` along the ray; 0.25 with no samples.
pub fn render_uncertainty(occupancies: &[f64]) -> f64 {
    if occupancies.is_empty() {
        return UNOBSERVED_VARIANCE;
    }
    let s: f64 = occupancies.iter().map(|o| o * (1.0 - o)).sum();
    (s / occupancies.len() as f64).clamp(0.0, UNOBSERVED_VARIANCE)
}

/// Mixes a ray's sample variance with the unobserved value in proportion
/// to the transmittance left at the end of the ray.
pub fn blend_unobserved(variance: f64, transmittance: f64) -> f64 {
    let t = transmittance.clamp(0.0, 1.0);
    ((1.0 - t) * variance + t * UNOBSERVED_VARIANCE).clamp(0.0, UNOBSERVED_VARIANCE)
}

/// Rendered values for one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOutput {
    pub depth: f64,
    pub color: [f64; 3],
    pub uncertainty: f64,
    pub observed: bool,
}

/// Ground truth for one ray; depth `<= 0` is invalid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayTarget {
    pub color: [f64; 3],
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub photometric: f64,
    pub geometric: f64,
    pub total: f64,
    /// Observed rays contributing to the photometric term.
    pub color_rays: usize,
    /// Observed rays with valid depth contributing to the geometric term.
    pub depth_rays: usize,
}

/// Mean squared color error over observed rays and channels, mean absolute
/// depth error over observed rays with valid ground-truth depth.
pub fn compute_losses(outputs: &[RayOutput], targets: &[RayTarget], lambda_p: f64) -> Result<LossReport> {
    if outputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: outputs.len(),
            got: targets.len(),
        });
    }
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut report = LossReport::default();
    for (out, gt) in outputs.iter().zip(targets) {
        if !out.observed {
            continue;
        }
        report.color_rays += 1;
        for c in 0..3 {
            sq += (out.color[c] - gt.color[c]).powi(2);
        }
        if DepthImage::is_valid(gt.depth) {
            report.depth_rays += 1;
            abs += (out.depth - gt.depth).abs();
        }
    }
    if report.color_rays == 0 {
        return Err(Error::NoObservedRays);
    }
    report.photometric = sq / (3 * report.color_rays) as f64;
    report.geometric = if report.depth_rays > 0 {
        abs / report.depth_rays as f64
    } else {
        0.0
    };
    report.total = lambda_p * report.photometric + report.geometric;
    Ok(report)
}

/// Rays with fixed sample depths and their targets.
#[derive(Clone, Debug, Default)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub samples: Vec<RaySamples>,
    pub targets: Vec<RayTarget>,
}

/// Gradients of the total loss.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub occupancy: Vec<f64>,
    pub color: Vec<f64>,
    pub features: GradientBuffer,
}

/// Per-chunk scratch and results of the differentiable pass.
struct ChunkResult {
    occupancy: Vec<f64>,
    color: Vec<f64>,
    records: Vec<QueryRecord>,
    dz: Vec<f64>,
    sq: f64,
    abs: f64,
}

struct Scratch {
    z: Vec<f64>,
    occ_h: Vec<f64>,
    col_h: Vec<f64>,
    occ: Vec<f64>,
    col: Vec<[f64; 3]>,
    trans: Vec<f64>,
    records: Vec<QueryRecord>,
}

impl Scratch {
    fn new() -> Self {
        Self {
            z: Vec::new(),
            occ_h: Vec::new(),
            col_h: Vec::new(),
            occ: Vec::new(),
            col: Vec::new(),
            trans: Vec::new(),
            records: Vec::new(),
        }
    }
}

/// Evaluates features and both decoders on the ray's samples, stopping once
/// transmittance drops below `termination`. Returns the number of samples used.
fn forward_ray(
    model: &FieldModel,
    ray: &Ray,
    depths: &[f64],
    termination: f64,
    s: &mut Scratch,
) -> Result<usize> {
    let f = model.grid.feature_dim();
    let h = model.occupancy.hidden_dim();
    let n = depths.len();
    s.z.resize(n * f, 0.0);
    s.occ_h.resize(n * h, 0.0);
    s.col_h.resize(n * h, 0.0);
    s.occ.resize(n, 0.0);
    s.col.resize(n, [0.0; 3]);
    s.trans.resize(n, 0.0);
    s.records.clear();
    let mut t = 1.0;
    let mut used = 0;
    for (i, &d) in depths.iter().enumerate() {
        let p = ray.at(d);
        let z = &mut s.z[i * f..(i + 1) * f];
        s.records.push(model.grid.interpolate_into(&p, z)?);
        let mut o = [0.0];
        model.occupancy.forward_into(z, &mut s.occ_h[i * h..(i + 1) * h], &mut o);
        model.color.forward_into(z, &mut s.col_h[i * h..(i + 1) * h], &mut s.col[i]);
        s.occ[i] = o[0];
        s.trans[i] = t;
        t *= 1.0 - o[0];
        used = i + 1;
        if t < termination {
            break;
        }
    }
    Ok(used)
}

fn differentiate_chunk(
    model: &FieldModel,
    batch: &RayBatch,
    range: std::ops::Range<usize>,
    termination: f64,
    color_scale: f64,
    depth_scale: f64,
) -> Result<ChunkResult> {
    let f = model.grid.feature_dim();
    let h = model.occupancy.hidden_dim();
    let mut out = ChunkResult {
        occupancy: vec![0.0; model.occupancy.param_count()],
        color: vec![0.0; model.color.param_count()],
        records: Vec::new(),
        dz: Vec::new(),
        sq: 0.0,
        abs: 0.0,
    };
    let mut s = Scratch::new();
    let mut dz_occ = vec![0.0; f];
    let mut dz_col = vec![0.0; f];
    for r in range {
        let samples = &batch.samples[r];
        if !samples.observed() {
            continue;
        }
        let ray = &batch.rays[r];
        let target = &batch.targets[r];
        let n = forward_ray(model, ray, &samples.depths, termination, &mut s)?;
        let d = &samples.depths[..n];
        let mut depth = 0.0;
        let mut color = [0.0; 3];
        for i in 0..n {
            let w = s.trans[i] * s.occ[i];
            depth += w * d[i];
            for c in 0..3 {
                color[c] += w * s.col[i][c];
            }
        }
        let mut g_color = [0.0; 3];
        for c in 0..3 {
            let e = color[c] - target.color[c];
            out.sq += e * e;
            g_color[c] = color_scale * 2.0 * e;
        }
        let mut g_depth = 0.0;
        if DepthImage::is_valid(target.depth) {
            let e = depth - target.depth;
            out.abs += e.abs();
            g_depth = depth_scale * e.signum();
            if e == 0.0 {
                g_depth = 0.0;
            }
        }
        // Suffix sums S_k = o_k v_k + (1 − o_k) S_{k+1} give the stable
        // derivative dV/do_k = T_k (v_k − S_{k+1}).
        let mut sd = 0.0;
        let mut sc = [0.0; 3];
        for i in (0..n).rev() {
            let o = s.occ[i];
            let t = s.trans[i];
            let mut g_o = g_depth * t * (d[i] - sd);
            let w = t * o;
            let mut g_c = [0.0; 3];
            for c in 0..3 {
                g_o += g_color[c] * t * (s.col[i][c] - sc[c]);
                g_c[c] = g_color[c] * w;
            }
            sd = o * d[i] + (1.0 - o) * sd;
            for c in 0..3 {
                sc[c] = o * s.col[i][c] + (1.0 - o) * sc[c];
            }
            let z = &s.z[i * f..(i + 1) * f];
            model.occupancy.backward_into(
                z,
                &s.occ_h[i * h..(i + 1) * h],
                &[o],
                &[g_o],
                &mut dz_occ,
                &mut out.occupancy,
            );
            model.color.backward_into(
                z,
                &s.col_h[i * h..(i + 1) * h],
                &s.col[i],
                &g_c,
                &mut dz_col,
                &mut out.color,
            );
            out.records.push(s.records[i].clone());
            out.dz.extend(dz_occ.iter().zip(&dz_col).map(|(a, b)| a + b));
        }
    }
    Ok(out)
}

fn chunks(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(size)).map(|c| c * size..((c + 1) * size).min(n)).collect()
}

/// Total loss and its exact gradients for a batch with fixed samples.
///
/// Work is split into fixed-size ray chunks processed in parallel; partial
/// gradients are merged in chunk order so the result does not depend on the
/// number of threads.
pub fn loss_and_gradients(
    model: &FieldModel,
    batch: &RayBatch,
    config: &RenderConfig,
) -> Result<(LossReport, Gradients)> {
    let mut report = LossReport::default();
    for (s, t) in batch.samples.iter().zip(&batch.targets) {
        if s.observed() {
            report.color_rays += 1;
            if DepthImage::is_valid(t.depth) {
                report.depth_rays += 1;
            }
        }
    }
    if report.color_rays == 0 {
        return Err(Error::NoObservedRays);
    }
    let color_scale = config.lambda_p / (3 * report.color_rays) as f64;
    let depth_scale = if report.depth_rays > 0 {
        1.0 / report.depth_rays as f64
    } else {
        0.0
    };
    let results: Vec<Result<ChunkResult>> = chunks(batch.rays.len(), config.chunk_rays)
        .into_par_iter()
        .map(|range| {
            differentiate_chunk(model, batch, range, config.termination, color_scale, depth_scale)
        })
        .collect();
    let mut grads = Gradients {
        occupancy: vec![0.0; model.occupancy.param_count()],
        color: vec![0.0; model.color.param_count()],
        features: model.grid.gradient_buffer(),
    };
    let f = model.grid.feature_dim();
    let (mut sq, mut abs) = (0.0, 0.0);
    for result in results {
        let chunk = result?;
        sq += chunk.sq;
        abs += chunk.abs;
        for (a, b) in grads.occupancy.iter_mut().zip(&chunk.occupancy) {
            *a += b;
        }
        for (a, b) in grads.color.iter_mut().zip(&chunk.color) {
            *a += b;
        }
        for (i, rec) in chunk.records.iter().enumerate() {
            model
                .grid
                .scatter_gradient(rec, &chunk.dz[i * f..(i + 1) * f], &mut grads.features)?;
        }
    }
    report.photometric = sq / (3 * report.color_rays) as f64;
    report.geometric = if report.depth_rays > 0 {
        abs / report.depth_rays as f64
    } else {
        0.0
    };
    report.total = config.lambda_p * report.photometric + report.geometric;
    Ok((report, grads))
}

/// Applies one optimizer step. A non-finite gradient aborts before any
/// parameter changes.
pub fn apply_gradients(model: &mut FieldModel, grads: &Gradients) -> Result<()> {
    let finite = grads.occupancy.iter().chain(&grads.color).all(|g| g.is_finite())
        && grads.features.is_finite();
    if !finite {
        return Err(Error::NonFiniteGradient);
    }
    model.occupancy_opt.step(model.occupancy.params_mut(), &grads.occupancy)?;
    model.color_opt.step(model.color.params_mut(), &grads.color)?;
    model.feature_opt.step(model.grid.features_mut(), &grads.features)?;
    Ok(())
}

/// A keyframe together with its camera pose in the model frame.
#[derive(Clone, Copy, Debug)]
pub struct TrainView<'a> {
    pub packet: &'a KeyframePacket,
    pub pose: Pose,
}

/// Camera ray for pixel `(u, v)` of a camera at `pose` (model ← camera).
pub fn camera_ray(intr: &Intrinsics, pose: &Pose, u: u32, v: u32) -> Ray {
    Ray {
        origin: pose.translation,
        direction: pose.rotation * intr.camera_direction(u, v),
        pixel: (u, v),
    }
}

/// Draws `m_pixels` pixels uniformly over the views, renders them, and
/// takes one optimizer step on features and decoder weights.
pub fn train_step(
    model: &mut FieldModel,
    views: &[TrainView<'_>],
    m_pixels: usize,
    config: &RenderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    if views.is_empty() || m_pixels == 0 {
        return Err(Error::NoObservedRays);
    }
    let mut rays = Vec::with_capacity(m_pixels);
    let mut targets = Vec::with_capacity(m_pixels);
    for _ in 0..m_pixels {
        let view = &views[rng.random_range(0..views.len())];
        let intr = &view.packet.intrinsics;
        let u = rng.random_range(0..intr.width);
        let v = rng.random_range(0..intr.height);
        rays.push(camera_ray(intr, &view.pose, u, v));
        targets.push(RayTarget {
            color: view.packet.color.get(u, v),
            depth: view.packet.depth.get(u, v),
        });
    }
    let seed: u64 = rng.random();
    let grid = &model.grid;
    let samples: Vec<RaySamples> = chunks(rays.len(), config.chunk_rays)
        .into_par_iter()
        .flat_map_iter(|range| {
            let mut chunk_rng = ChaCha8Rng::seed_from_u64(seed ^ (range.start as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            range
                .map(|r| sample_ray(grid, &rays[r], config.n_point, config.t_far, Some(&mut chunk_rng)))
                .collect::<Vec<_>>()
        })
        .collect();
    let batch = RayBatch {
        rays,
        samples,
        targets,
    };
    let (report, grads) = loss_and_gradients(model, &batch, config)?;
    apply_gradients(model, &grads)?;
    Ok(report)
}

/// Deterministic render of one ray: midpoint samples, colors clamped to
/// `[0, 1]`. The sample variance is weighted by the ray's accumulated
/// opacity and the remaining transmittance counts as unobserved, so a ray
/// that crosses only free space in this model reports close to 0.25.
pub fn render_ray(model: &FieldModel, ray: &Ray, config: &RenderConfig) -> Result<RayOutput> {
    let samples = sample_ray::<ChaCha8Rng>(&model.grid, ray, config.n_point, config.t_far, None);
    if !samples.observed() {
        return Ok(RayOutput {
            depth: 0.0,
            color: config.background,
            uncertainty: UNOBSERVED_VARIANCE,
            observed: false,
        });
    }
    let f = model.grid.feature_dim();
    let mut z = vec![0.0; f];
    let mut h = vec![0.0; model.occupancy.hidden_dim()];
    let mut t = 1.0;
    let mut depth = 0.0;
    let mut color = [0.0; 3];
    let mut variance = 0.0;
    for &d in &samples.depths {
        model.grid.interpolate_into(&ray.at(d), &mut z)?;
        let mut o = [0.0];
        model.occupancy.forward_into(&z, &mut h, &mut o);
        let o = o[0];
        variance += o * (1.0 - o);
        if t >= config.termination && t > 0.0 {
            let w = t * o;
            let mut c = [0.0; 3];
            model.color.forward_into(&z, &mut h, &mut c);
            depth += w * d;
            for k in 0..3 {
                color[k] += w * c[k].clamp(0.0, 1.0);
            }
            t *= 1.0 - o;
        }
    }
    Ok(RayOutput {
        depth,
        color,
        uncertainty: blend_unobserved(variance / samples.depths.len() as f64, t),
        observed: true,
    })
}

/// Per-pixel rendered color, depth and uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub color: RgbImage,
    pub depth: DepthImage,
    pub uncertainty: Vec<f64>,
    pub observed: Vec<bool>,
}

impl RenderedView {
    pub fn unobserved(width: u32, height: u32, background: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        Self {
            color: RgbImage::filled(width, height, background),
            depth: DepthImage::filled(width, height, 0.0),
            uncertainty: vec![UNOBSERVED_VARIANCE; n],
            observed: vec![false; n],
        }
    }

    pub fn mean_uncertainty(&self) -> f64 {
        self.uncertainty.iter().sum::<f64>() / self.uncertainty.len().max(1) as f64
    }
}

/// Renders a full image from a camera at `pose` (model ← camera).
pub fn render_view(
    model: &FieldModel,
    pose: &Pose,
    intr: &Intrinsics,
    config: &RenderConfig,
) -> Result<RenderedView> {
    let (w, h) = (intr.width, intr.height);
    let n = intr.pixel_count();
    let outputs: Vec<Result<RayOutput>> = chunks(n, config.chunk_rays)
        .into_par_iter()
        .flat_map_iter(|range| {
            range
                .map(|i| {
                    let ray = camera_ray(intr, pose, i as u32 % w, i as u32 / w);
                    render_ray(model, &ray, config)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut view = RenderedView::unobserved(w, h, config.background);
    for (i, out) in outputs.into_iter().enumerate() {
        let out = out?;
        view.color.data[i] = out.color;
        view.depth.data[i] = out.depth;
        view.uncertainty[i] = out.uncertainty;
        view.observed[i] = out.observed;
    }
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn transparent_samples() {
        let c = composite(&[1.0, 2.0], &[0.0, 0.0], &[[1.0; 3], [1.0; 3]]).unwrap();
        assert_eq!(c.depth, 0.0);
        assert_eq!(c.color, [0.0; 3]);
        assert_eq!(c.weights.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn opaque_first_sample() {
        let c = composite(&[1.0, 2.0, 3.0], &[1.0, 0.7, 0.2], &[[0.1, 0.2, 0.3], [1.0; 3], [1.0; 3]]).unwrap();
        assert_eq!(c.depth, 1.0);
        assert_eq!(c.color, [0.1, 0.2, 0.3]);
        assert_eq!(c.weights, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn half_then_opaque() {
        let c = composite(&[1.0, 2.0], &[0.5, 1.0], &[[0.0; 3]; 2]).unwrap();
        assert_eq!(c.weights, vec![0.5, 0.5]);
        assert_eq!(c.depth, 1.5);
    }

    #[test]
    fn empty_ray_is_unobserved() {
        let c = composite(&[], &[], &[]).unwrap();
        assert!(!c.observed);
        assert_eq!(c.depth, 0.0);
        assert_eq!(render_uncertainty(&[]), 0.25);
    }

    #[test]
    fn occupancy_range_is_checked() {
        assert!(matches!(
            composite(&[1.0], &[1.5], &[[0.0; 3]]),
            Err(Error::OccupancyOutOfRange(_))
        ));
    }

    #[test]
    fn uncertainty_extremes() {
        assert_eq!(render_uncertainty(&[0.0, 1.0, 1.0, 0.0]), 0.0);
        assert_eq!(render_uncertainty(&[0.5; 7]), 0.25);
    }

    #[test]
    fn losses_by_hand() {
        let out = [RayOutput {
            depth: 1.2,
            color: [0.6, 0.6, 0.6],
            uncertainty: 0.0,
            observed: true,
        }];
        let gt = [RayTarget {
            color: [0.5; 3],
            depth: 1.0,
        }];
        let r = compute_losses(&out, &gt, 1.0).unwrap();
        assert!((r.photometric - 0.01).abs() < 1e-15);
        assert!((r.geometric - 0.2).abs() < 1e-15);
        assert!((r.total - 0.21).abs() < 1e-15);
        let r2 = compute_losses(&out, &gt, 2.0).unwrap();
        assert!((r2.total - r.geometric - 2.0 * r.photometric).abs() < 1e-15);
        assert_eq!(compute_losses(&out, &out.map(|o| RayTarget { color: o.color, depth: o.depth }), 1.0).unwrap().total, 0.0);
    }

    #[test]
    fn invalid_depth_and_unobserved_rays_are_excluded() {
        let out = [
            RayOutput { depth: 1.0, color: [0.0; 3], uncertainty: 0.0, observed: true },
            RayOutput { depth: 5.0, color: [1.0; 3], uncertainty: 0.25, observed: false },
        ];
        let gt = [
            RayTarget { color: [0.0; 3], depth: 0.0 },
            RayTarget { color: [0.0; 3], depth: 1.0 },
        ];
        let r = compute_losses(&out, &gt, 1.0).unwrap();
        assert_eq!((r.color_rays, r.depth_rays), (1, 0));
        assert_eq!(r.total, 0.0);
        assert!(matches!(compute_losses(&out[1..], &gt[1..], 1.0), Err(Error::NoObservedRays)));
    }

    #[test]
    fn leftover_transmittance_counts_as_unobserved() {
        assert_eq!(blend_unobserved(0.1, 0.0), 0.1);
        assert_eq!(blend_unobserved(0.1, 1.0), 0.25);
        assert!((blend_unobserved(0.05, 0.5) - 0.15).abs() < 1e-15);
        assert_eq!(blend_unobserved(0.3, 0.0), 0.25);
    }

    fn constant_occupancy_model(logit: f64) -> FieldModel {
        let mut cfg = GridConfig::centered(2.0, 4, 4);
        cfg.seed = 1;
        let mut model = FieldModel::new(cfg, &DecoderConfig::default()).unwrap();
        model.grid = small_grid();
        let (f, h) = (model.grid.feature_dim(), model.occupancy.hidden_dim());
        model.occupancy = MlpDecoder::zeros(Head::Occupancy, f, h);
        *model.occupancy.params_mut().last_mut().unwrap() = logit;
        model
    }

    #[test]
    fn free_space_ray_reports_unobserved_variance() {
        let ray = Ray {
            origin: Vec3::new(0.05, 0.05, -0.9),
            direction: Vec3::new(0.0, 0.0, 1.0),
            pixel: (0, 0),
        };
        let config = RenderConfig::default();
        let empty = render_ray(&constant_occupancy_model(-30.0), &ray, &config).unwrap();
        assert!(empty.observed);
        assert!(empty.uncertainty > 0.2499, "{}", empty.uncertainty);
        let solid = render_ray(&constant_occupancy_model(30.0), &ray, &config).unwrap();
        assert!(solid.uncertainty < 1e-9, "{}", solid.uncertainty);
    }

    fn small_grid() -> OctreeFeatureGrid {
        let mut cfg = GridConfig::centered(2.0, 4, 4);
        cfg.seed = 1;
        let mut grid = OctreeFeatureGrid::new(cfg).unwrap();
        let pts: Vec<Vec3> = (0..8).map(|i| Vec3::new(0.05, 0.05, 0.1 + 0.125 * i as f64)).collect();
        grid.insert_points(&pts);
        grid
    }

    #[test]
    fn samples_per_voxel() {
        let grid = small_grid();
        let ray = Ray {
            origin: Vec3::new(0.05, 0.05, -0.9),
            direction: Vec3::new(0.0, 0.0, 1.0),
            pixel: (0, 0),
        };
        let hits = grid.ray_voxel_intersections(&ray, 0.0, 10.0);
        assert!(hits.len() >= 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_ray(&grid, &ray, 10, 10.0, Some(&mut rng));
        assert_eq!(s.depths.len(), 10 * hits.len());
        for (k, hit) in hits.iter().enumerate() {
            let w = (hit.t_exit - hit.t_entry) / 10.0;
            for j in 0..10 {
                let d = s.depths[k * 10 + j];
                assert!(d >= hit.t_entry + j as f64 * w && d <= hit.t_entry + (j + 1) as f64 * w);
            }
        }
        assert!(s.depths.windows(2).all(|p| p[0] < p[1]));
        let miss = Ray {
            origin: Vec3::new(0.9, 0.9, -0.9),
            direction: Vec3::new(0.0, 0.0, 1.0),
            pixel: (0, 0),
        };
        assert!(!sample_ray::<ChaCha8Rng>(&grid, &miss, 10, 10.0, None).observed());
    }
}
