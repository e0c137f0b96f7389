//! Submap lifecycle: keyframe-to-submap assignment by coverage, anchor-frame
//! bookkeeping, two-stage loop-closure correction, and fused rendering.
//!
//! Every submap stores its grid and decoders in the frame of its anchor
//! keyframe. Moving the anchor moves the whole submap without touching any
//! learned parameter.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DepthImage, KeyframePacket};
use crate::geometry::{Intrinsics, Pose, Vec3};
use crate::octree::GridConfig;
use crate::renderer::{
    render_view, train_step, DecoderConfig, FieldModel, LossReport, RenderConfig, RenderedView, TrainView,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    /// Edge of each submap's cubic extent, centred on its anchor (m).
    pub extent: f64,
    pub max_depth: u8,
    /// Feature-carrying levels; empty selects the deepest two.
    pub active_levels: Vec<u8>,
    pub feature_dim: usize,
    pub init_scale: f64,
    pub decoder: DecoderConfig,
    pub render: RenderConfig,
    /// Pixels per training iteration.
    pub m_pixels: usize,
    /// Training iterations per integrated keyframe.
    pub iterations: usize,
    /// Keyframes per training window (current plus random members).
    pub window: usize,
    /// Coverage fraction needed to join an existing submap.
    pub tau_covis: f64,
    /// Member motion relative to the anchor that triggers fine-tuning.
    pub finetune_translation: f64,
    pub finetune_rotation_deg: f64,
    /// Fine-tuning iterations per affected submap.
    pub finetune_budget: usize,
    /// Pixel stride of the coverage test.
    pub coverage_stride: u32,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            extent: 12.8,
            max_depth: 9,
            active_levels: Vec::new(),
            feature_dim: 16,
            init_scale: 1e-2,
            decoder: DecoderConfig::default(),
            render: RenderConfig::default(),
            m_pixels: 5000,
            iterations: 20,
            window: 5,
            tau_covis: 0.85,
            finetune_translation: 0.01,
            finetune_rotation_deg: 0.5,
            finetune_budget: 60,
            coverage_stride: 4,
        }
    }
}

impl MappingConfig {
    pub fn grid_config(&self, seed: u64) -> GridConfig {
        let mut g = GridConfig::centered(self.extent, self.max_depth, self.feature_dim);
        if !self.active_levels.is_empty() {
            g.active_levels = self.active_levels.clone();
        }
        g.init_scale = self.init_scale;
        g.seed = seed;
        g
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_config(0).validate()?;
        self.decoder.validate()?;
        self.render.validate()?;
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.m_pixels == 0 {
            return fail("m_pixels must be positive");
        }
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tau_covis) {
            return fail("tau_covis must lie in [0, 1]");
        }
        if !(self.finetune_translation >= 0.0 && self.finetune_rotation_deg >= 0.0) {
            return fail("fine-tune thresholds must be non-negative");
        }
        if self.coverage_stride == 0 {
            return fail("coverage_stride must be positive");
        }
        Ok(())
    }

    pub fn leaf_size(&self) -> f64 {
        self.extent / (1u64 << self.max_depth) as f64
    }
}

#[derive(Clone, Debug)]
pub struct Submap {
    pub id: u64,
    pub anchor_kf: u64,
    /// World ← anchor.
    pub anchor_pose: Pose,
    pub model: FieldModel,
    /// Member keyframes in assignment order.
    pub members: Vec<u64>,
    /// Member pose relative to the anchor when its geometry was last
    /// integrated; used to decide when fine-tuning is needed.
    pub integrated: BTreeMap<u64, Pose>,
    /// Wall time spent training this submap (s).
    pub training_seconds: f64,
}

impl Submap {
    /// Fraction of world points inside allocated leaves of this submap.
    fn covered(&self, points_world: &[Vec3]) -> Vec<bool> {
        let inv = self.anchor_pose.inverse();
        points_world
            .iter()
            .map(|p| self.model.grid.leaf_allocated(&inv.transform_point(p)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentKind {
    /// Joined a submap covering at least `tau_covis` of the view.
    Existing,
    /// Revisited space that existing submaps jointly cover.
    Revisit,
    Created,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub submap: u64,
    pub kind: AssignmentKind,
    /// Best single-submap coverage fraction.
    pub coverage: f64,
}

#[derive(Clone, Debug)]
pub struct SubmapAtlas {
    pub config: MappingConfig,
    pub seed: u64,
    pub submaps: Vec<Submap>,
    pub active: Option<u64>,
    /// Keyframe → owning submap.
    pub assignment: BTreeMap<u64, u64>,
    /// Current world pose estimate of every keyframe.
    pub poses: BTreeMap<u64, Pose>,
    pub keyframes: BTreeMap<u64, KeyframePacket>,
}

/// Valid-depth pixels back-projected into the world, every `stride` pixels.
pub fn back_project_depth(packet: &KeyframePacket, pose: &Pose, stride: u32) -> Vec<Vec3> {
    let intr = &packet.intrinsics;
    let mut pts = Vec::new();
    for v in (0..intr.height).step_by(stride as usize) {
        for u in (0..intr.width).step_by(stride as usize) {
            let d = packet.depth.get(u, v);
            if DepthImage::is_valid(d) {
                pts.push(pose.transform_point(&(intr.camera_direction(u, v) * d)));
            }
        }
    }
    pts
}

/// The 8 points `p ± h/2` per axis, so that the 2×2×2 block of leaves
/// around a surface point is allocated.
fn dilate(p: &Vec3, half: f64, out: &mut Vec<Vec3>) {
    for k in 0..8 {
        let s = |bit: usize| if k >> bit & 1 == 1 { half } else { -half };
        out.push(p + Vec3::new(s(0), s(1), s(2)));
    }
}

impl SubmapAtlas {
    pub fn new(config: MappingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            seed,
            submaps: Vec::new(),
            active: None,
            assignment: BTreeMap::new(),
            poses: BTreeMap::new(),
            keyframes: BTreeMap::new(),
        })
    }

    pub fn submap(&self, id: u64) -> Option<&Submap> {
        self.submaps.iter().find(|s| s.id == id)
    }

    fn index_of(&self, id: u64) -> Result<usize> {
        self.submaps
            .iter()
            .position(|s| s.id == id)
            .ok_or(Error::UnknownKeyframe(id))
    }

    pub fn node_count(&self) -> usize {
        self.submaps.iter().map(|s| s.model.grid.node_count()).sum()
    }

    fn pose_of(&self, kf: u64) -> Result<Pose> {
        self.poses.get(&kf).copied().ok_or(Error::UnknownKeyframe(kf))
    }

    /// Chooses (or creates) the submap for a keyframe from the coverage of
    /// its back-projected depth by each submap's allocated leaves.
    pub fn select_local_map(&mut self, kf: &KeyframePacket) -> Result<Assignment> {
        let pts = back_project_depth(kf, &kf.pose, self.config.coverage_stride);
        let mut best: Option<(u64, f64)> = None;
        let mut union = vec![false; pts.len()];
        for s in &self.submaps {
            let cov = s.covered(&pts);
            let n = cov.iter().filter(|c| **c).count();
            for (u, c) in union.iter_mut().zip(&cov) {
                *u |= *c;
            }
            let frac = if pts.is_empty() { 0.0 } else { n as f64 / pts.len() as f64 };
            if best.is_none_or(|(_, b)| frac > b) {
                best = Some((s.id, frac));
            }
        }
        let union_frac = if pts.is_empty() {
            0.0
        } else {
            union.iter().filter(|c| **c).count() as f64 / pts.len() as f64
        };
        let tau = self.config.tau_covis;
        let assignment = match best {
            Some((id, frac)) if frac >= tau => Assignment {
                submap: id,
                kind: AssignmentKind::Existing,
                coverage: frac,
            },
            Some((id, frac)) if union_frac >= tau => Assignment {
                submap: id,
                kind: AssignmentKind::Revisit,
                coverage: frac,
            },
            _ => {
                let id = self.submaps.last().map_or(0, |s| s.id + 1);
                let grid = self.config.grid_config(self.seed.wrapping_add(id.wrapping_mul(7919)));
                let model = FieldModel::new(grid, &self.config.decoder)?;
                self.submaps.push(Submap {
                    id,
                    anchor_kf: kf.id,
                    anchor_pose: kf.pose,
                    model,
                    members: Vec::new(),
                    integrated: BTreeMap::new(),
                    training_seconds: 0.0,
                });
                Assignment {
                    submap: id,
                    kind: AssignmentKind::Created,
                    coverage: best.map_or(0.0, |b| b.1),
                }
            }
        };
        Ok(assignment)
    }

    fn grow(&mut self, idx: usize, packet: &KeyframePacket, pose: &Pose, only_uncovered: bool) -> usize {
        let world = back_project_depth(packet, pose, 1);
        let keep: Vec<bool> = if only_uncovered {
            let mut covered = vec![false; world.len()];
            for s in &self.submaps {
                for (c, hit) in covered.iter_mut().zip(s.covered(&world)) {
                    *c |= hit;
                }
            }
            covered.into_iter().map(|c| !c).collect()
        } else {
            vec![true; world.len()]
        };
        let submap = &mut self.submaps[idx];
        let inv = submap.anchor_pose.inverse();
        let half = 0.5 * self.config.leaf_size();
        let mut pts = Vec::with_capacity(world.len() * 8);
        for (p, k) in world.iter().zip(keep) {
            if k {
                dilate(&inv.transform_point(p), half, &mut pts);
            }
        }
        submap.model.grid.insert_points(&pts).new_nodes
    }

    /// Registers a keyframe with its submap and grows that submap's grid.
    /// Returns the number of new octree nodes.
    pub fn integrate(&mut self, kf: KeyframePacket, assignment: &Assignment) -> Result<usize> {
        kf.validate()?;
        let idx = self.index_of(assignment.submap)?;
        let id = kf.id;
        self.poses.insert(id, kf.pose);
        let new_nodes = self.grow(idx, &kf, &kf.pose, assignment.kind != AssignmentKind::Created);
        let submap = &mut self.submaps[idx];
        submap.members.push(id);
        submap.integrated.insert(id, Pose::between(&submap.anchor_pose, &kf.pose));
        self.assignment.insert(id, assignment.submap);
        self.active = Some(assignment.submap);
        self.keyframes.insert(id, kf);
        Ok(new_nodes)
    }

    /// Training views for a submap, poses relative to its anchor.
    fn views<'a>(&'a self, submap: &Submap, ids: &[u64]) -> Result<Vec<TrainView<'a>>> {
        ids.iter()
            .map(|id| {
                let packet = self.keyframes.get(id).ok_or(Error::UnknownKeyframe(*id))?;
                Ok(TrainView {
                    packet,
                    pose: Pose::between(&submap.anchor_pose, &self.pose_of(*id)?),
                })
            })
            .collect()
    }

    /// Runs `iterations` training steps on the submap owning `kf`, each on a
    /// window made of `kf` and up to `window − 1` random other members.
    pub fn train_keyframe(&mut self, kf: u64, iterations: usize, rng: &mut ChaCha8Rng) -> Result<Option<LossReport>> {
        let sid = *self.assignment.get(&kf).ok_or(Error::UnknownKeyframe(kf))?;
        let idx = self.index_of(sid)?;
        let others: Vec<u64> = self.submaps[idx].members.iter().copied().filter(|&m| m != kf).collect();
        let mut last = None;
        let start = Instant::now();
        let mut model = self.submaps[idx].model.clone();
        for _ in 0..iterations {
            let mut ids = vec![kf];
            let extra = (self.config.window - 1).min(others.len());
            ids.extend(sample(rng, others.len(), extra).into_iter().map(|i| others[i]));
            let views = self.views(&self.submaps[idx], &ids)?;
            last = Some(train_step(&mut model, &views, self.config.m_pixels, &self.config.render, rng)?);
        }
        let submap = &mut self.submaps[idx];
        submap.model = model;
        submap.training_seconds += start.elapsed().as_secs_f64();
        Ok(last)
    }

    /// Stage one of loop correction: installs the new keyframe pose table and
    /// moves each anchor to its keyframe's new pose. Learned parameters are
    /// untouched. Returns how many anchors changed.
    pub fn adjust_submaps(&mut self, poses: &BTreeMap<u64, Pose>) -> Result<usize> {
        for s in &self.submaps {
            if !poses.contains_key(&s.anchor_kf) {
                return Err(Error::MissingAnchorPose(s.anchor_kf));
            }
        }
        let mut moved = 0;
        for s in &mut self.submaps {
            let new = poses[&s.anchor_kf];
            if new != s.anchor_pose {
                moved += 1;
                s.anchor_pose = new;
            }
        }
        for (id, p) in poses {
            self.poses.insert(*id, *p);
        }
        Ok(moved)
    }

    /// Submaps whose members moved relative to the anchor beyond the
    /// fine-tune thresholds since they were integrated.
    pub fn submaps_needing_finetune(&self) -> Vec<u64> {
        let t_tol = self.config.finetune_translation;
        let r_tol = self.config.finetune_rotation_deg.to_radians();
        self.submaps
            .iter()
            .filter(|s| {
                s.integrated.iter().any(|(id, old)| {
                    let Some(pose) = self.poses.get(id) else {
                        return false;
                    };
                    let now = Pose::between(&s.anchor_pose, pose);
                    let d = Pose::between(old, &now);
                    d.translation.norm() > t_tol || d.rotation_angle() > r_tol
                })
            })
            .map(|s| s.id)
            .collect()
    }

    /// Stage two of loop correction: re-grows and retrains each submap whose
    /// members moved relative to its anchor, for `budget` iterations over
    /// windows drawn from all of its members.
    pub fn finetune_submaps(&mut self, budget: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(u64, LossReport)>> {
        let mut reports = Vec::new();
        if budget == 0 {
            return Ok(reports);
        }
        for sid in self.submaps_needing_finetune() {
            let idx = self.index_of(sid)?;
            let start = Instant::now();
            let members = self.submaps[idx].members.clone();
            for id in &members {
                let pose = self.pose_of(*id)?;
                let packet = self.keyframes.get(id).ok_or(Error::UnknownKeyframe(*id))?.clone();
                self.grow(idx, &packet, &pose, false);
                let s = &mut self.submaps[idx];
                let rel = Pose::between(&s.anchor_pose, &pose);
                s.integrated.insert(*id, rel);
            }
            let mut model = self.submaps[idx].model.clone();
            let mut last = None;
            for _ in 0..budget {
                let k = self.config.window.min(members.len());
                let ids: Vec<u64> = sample(rng, members.len(), k).into_iter().map(|i| members[i]).collect();
                let views = self.views(&self.submaps[idx], &ids)?;
                last = Some(train_step(&mut model, &views, self.config.m_pixels, &self.config.render, rng)?);
            }
            let s = &mut self.submaps[idx];
            s.model = model;
            s.training_seconds += start.elapsed().as_secs_f64();
            if let Some(r) = last {
                reports.push((sid, r));
            }
        }
        Ok(reports)
    }

    /// Submaps whose allocated bounds may intersect the view frustum, with
    /// the camera pose expressed in each submap's anchor frame.
    pub fn candidates(&self, pose: &Pose, intr: &Intrinsics) -> Vec<(usize, Pose)> {
        let mut out = Vec::new();
        for (i, s) in self.submaps.iter().enumerate() {
            let rel = Pose::between(&s.anchor_pose, pose);
            if let Some(bounds) = s.model.grid.allocated_bounds() {
                if box_in_frustum(&bounds, &rel, intr, self.config.render.t_far) {
                    out.push((i, rel));
                }
            }
        }
        out
    }

    /// Per-pixel fusion: each pixel takes the color and depth of the submap
    /// with the lowest uncertainty there (ties to the lowest submap id).
    pub fn render_fused(&self, pose: &Pose, intr: &Intrinsics) -> Result<RenderedView> {
        let cfg = &self.config.render;
        let mut fused = RenderedView::unobserved(intr.width, intr.height, cfg.background);
        for (i, rel) in self.candidates(pose, intr) {
            let view = render_view(&self.submaps[i].model, &rel, intr, cfg)?;
            for p in 0..view.uncertainty.len() {
                if view.observed[p] && view.uncertainty[p] < fused.uncertainty[p] {
                    fused.uncertainty[p] = view.uncertainty[p];
                    fused.color.data[p] = view.color.data[p];
                    fused.depth.data[p] = view.depth.data[p];
                    fused.observed[p] = true;
                }
            }
        }
        Ok(fused)
    }

    /// Occupancy and color at a world point from the covering submap with
    /// the lowest point variance `o(1 − o)`.
    pub fn query_fused(&self, p: &Vec3) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, f64, usize, Vec3)> = None;
        for (i, s) in self.submaps.iter().enumerate() {
            let local = s.anchor_pose.inverse().transform_point(p);
            if let Some(o) = s.model.occupancy_at(&local) {
                let var = o * (1.0 - o);
                if best.is_none_or(|b| var < b.1) {
                    best = Some((o, var, i, local));
                }
            }
        }
        let (o, _, i, local) = best?;
        let c = self.submaps[i].model.color_at(&local)?;
        Some((o, c))
    }

    /// Every keyframe belongs to exactly one submap's member list.
    pub fn check_membership(&self) -> bool {
        let mut seen = BTreeSet::new();
        for s in &self.submaps {
            for m in &s.members {
                if !seen.insert(*m) || self.assignment.get(m) != Some(&s.id) {
                    return false;
                }
            }
        }
        seen.len() == self.assignment.len()
    }

    pub fn parameter_checksum(&self) -> u64 {
        crate::octree::fnv1a(self.submaps.iter().map(|s| s.model.parameter_checksum()))
    }

    /// Random members for evaluation or diagnostics.
    pub fn random_keyframes(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let ids: Vec<u64> = self.assignment.keys().copied().collect();
        (0..n.min(ids.len())).map(|_| ids[rng.random_range(0..ids.len())]).collect()
    }
}

/// Conservative box/frustum test: rejects only when every corner lies
/// behind the camera or beyond the far limit, or outside one side plane.
fn box_in_frustum(bounds: &(Vec3, Vec3), cam: &Pose, intr: &Intrinsics, t_far: f64) -> bool {
    let inv = cam.inverse();
    let (lo, hi) = bounds;
    let corners: Vec<Vec3> = (0..8)
        .map(|k| {
            let p = Vec3::new(
                if k & 1 == 0 { lo[0] } else { hi[0] },
                if k & 2 == 0 { lo[1] } else { hi[1] },
                if k & 4 == 0 { lo[2] } else { hi[2] },
            );
            inv.transform_point(&p)
        })
        .collect();
    // generous margin of one pixel on each side
    let x_min = (-0.5 - 1.0 - intr.cx) / intr.fx;
    let x_max = (intr.width as f64 - 0.5 + 1.0 - intr.cx) / intr.fx;
    let y_min = (-0.5 - 1.0 - intr.cy) / intr.fy;
    let y_max = (intr.height as f64 - 0.5 + 1.0 - intr.cy) / intr.fy;
    let all = |f: &dyn Fn(&Vec3) -> bool| corners.iter().all(f);
    if all(&|c| c[2] <= 0.0) || all(&|c| c.norm() > t_far + 1e-9 && c[2] > t_far) {
        return false;
    }
    !(all(&|c| c[0] < x_min * c[2])
        || all(&|c| c[0] > x_max * c[2])
        || all(&|c| c[1] < y_min * c[2])
        || all(&|c| c[1] > y_max * c[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::RgbImage;

    fn intr() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 20.0, 15.0, 40, 30).unwrap()
    }

    fn wall_packet(id: u64, pose: Pose, dist: f64) -> KeyframePacket {
        let i = intr();
        let mut depth = DepthImage::filled(i.width, i.height, 0.0);
        for v in 0..i.height {
            for u in 0..i.width {
                let dir = i.camera_direction(u, v);
                depth.set(u, v, dist / dir[2]);
            }
        }
        KeyframePacket {
            id,
            timestamp: id as f64,
            intrinsics: i,
            pose,
            color: RgbImage::filled(i.width, i.height, [0.5; 3]),
            depth,
        }
    }

    fn small_config() -> MappingConfig {
        MappingConfig {
            extent: 6.4,
            max_depth: 7,
            feature_dim: 4,
            m_pixels: 64,
            iterations: 2,
            ..MappingConfig::default()
        }
    }

    #[test]
    fn first_keyframe_creates_submap() {
        let mut atlas = SubmapAtlas::new(small_config(), 0).unwrap();
        let kf = wall_packet(0, Pose::identity(), 2.0);
        let a = atlas.select_local_map(&kf).unwrap();
        assert_eq!(a.kind, AssignmentKind::Created);
        atlas.integrate(kf, &a).unwrap();
        assert_eq!(atlas.submaps[0].anchor_kf, 0);
        // same view again is fully covered
        let again = wall_packet(1, Pose::identity(), 2.0);
        let b = atlas.select_local_map(&again).unwrap();
        assert_eq!(b.kind, AssignmentKind::Existing);
        assert!(b.coverage > 0.99);
        atlas.integrate(again, &b).unwrap();
        assert_eq!(atlas.submaps.len(), 1);
        assert!(atlas.check_membership());
    }

    #[test]
    fn unrelated_view_creates_second_submap() {
        let mut atlas = SubmapAtlas::new(small_config(), 0).unwrap();
        let kf = wall_packet(0, Pose::identity(), 2.0);
        let a = atlas.select_local_map(&kf).unwrap();
        atlas.integrate(kf, &a).unwrap();
        let turned = wall_packet(1, Pose::rot_y(std::f64::consts::PI * 0.75), 2.0);
        let b = atlas.select_local_map(&turned).unwrap();
        assert_eq!(b.kind, AssignmentKind::Created);
        assert_eq!(b.submap, 1);
    }

    #[test]
    fn identity_adjustment_moves_nothing() {
        let mut atlas = SubmapAtlas::new(small_config(), 0).unwrap();
        let kf = wall_packet(0, Pose::identity(), 2.0);
        let a = atlas.select_local_map(&kf).unwrap();
        atlas.integrate(kf, &a).unwrap();
        let sum = atlas.parameter_checksum();
        let poses = atlas.poses.clone();
        assert_eq!(atlas.adjust_submaps(&poses).unwrap(), 0);
        assert_eq!(atlas.parameter_checksum(), sum);
        assert!(atlas.submaps_needing_finetune().is_empty());
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        assert!(atlas.finetune_submaps(10, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn adjustment_requires_anchor_poses() {
        let mut atlas = SubmapAtlas::new(small_config(), 0).unwrap();
        let kf = wall_packet(0, Pose::identity(), 2.0);
        let a = atlas.select_local_map(&kf).unwrap();
        atlas.integrate(kf, &a).unwrap();
        assert!(matches!(atlas.adjust_submaps(&BTreeMap::new()), Err(Error::MissingAnchorPose(0))));
    }

    #[test]
    fn frustum_rejects_boxes_behind() {
        let b = (Vec3::new(-1.0, -1.0, -5.0), Vec3::new(1.0, 1.0, -3.0));
        assert!(!box_in_frustum(&b, &Pose::identity(), &intr(), 20.0));
        let front = (Vec3::new(-1.0, -1.0, 3.0), Vec3::new(1.0, 1.0, 5.0));
        assert!(box_in_frustum(&front, &Pose::identity(), &intr(), 20.0));
        let side = (Vec3::new(50.0, -1.0, 1.0), Vec3::new(51.0, 1.0, 2.0));
        assert!(!box_in_frustum(&side, &Pose::identity(), &intr(), 20.0));
    }
}
