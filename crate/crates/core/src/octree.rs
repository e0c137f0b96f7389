//! Incremental sparse octree holding multi-level feature vectors on voxel
//! corners.
//!
//! Nodes are addressed by `(level, Morton code)`. Only the levels listed in
//! [`GridConfig::active_levels`] carry features; their corners live in a
//! shared table keyed by corner grid coordinates, so neighbouring voxels read
//! and write the same storage slot for a shared corner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

const NONE: u32 = u32::MAX;
const MORTON_BITS: u32 = 21;
/// Deepest supported tree. Corner coordinates at this level still fit in
/// 57 bits of Morton code, leaving room for the level tag in the key.
pub const MAX_SUPPORTED_DEPTH: u8 = 18;

fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x1f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact_bits(code: u64) -> u32 {
    let mut x = code & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x1f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x1f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Interleaves the bits of `(x, y, z)`: x takes bit 0, y bit 1, z bit 2.
pub fn morton_encode(x: u32, y: u32, z: u32) -> Result<u64> {
    for c in [x, y, z] {
        if c >> MORTON_BITS != 0 {
            return Err(Error::MortonOverflow(c));
        }
    }
    Ok(spread_bits(x) | spread_bits(y) << 1 | spread_bits(z) << 2)
}

pub fn morton_decode(code: u64) -> (u32, u32, u32) {
    (
        compact_bits(code),
        compact_bits(code >> 1),
        compact_bits(code >> 2),
    )
}

/// Morton code of a node at a given tree level; `code < 8^level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MortonCode {
    pub code: u64,
    pub level: u8,
}

impl MortonCode {
    pub fn new(x: u32, y: u32, z: u32, level: u8) -> Result<Self> {
        let limit = 1u64 << level;
        for c in [x, y, z] {
            if c as u64 >= limit {
                return Err(Error::MortonOverflow(c));
            }
        }
        Ok(Self {
            code: morton_encode(x, y, z)?,
            level,
        })
    }

    pub fn coords(&self) -> (u32, u32, u32) {
        morton_decode(self.code)
    }

    fn key(&self) -> u64 {
        node_key(self.level, self.code)
    }
}

fn node_key(level: u8, code: u64) -> u64 {
    (level as u64) << 58 | code
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Leaf voxels are `size / 2^max_depth` wide.
    pub max_depth: u8,
    /// Minimum corner of the cubic extent (submap frame).
    pub origin: [f64; 3],
    /// Edge length of the cubic extent in meters.
    pub size: f64,
    /// Levels that store features, ascending.
    pub active_levels: Vec<u8>,
    pub feature_dim: usize,
    /// New corner features are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::centered(12.8, 9, 16)
    }
}

impl GridConfig {
    /// Cube of edge `size` centred on the frame origin, features on the
    /// deepest two levels.
    pub fn centered(size: f64, max_depth: u8, feature_dim: usize) -> Self {
        let active_levels = if max_depth == 0 {
            vec![0]
        } else {
            vec![max_depth - 1, max_depth]
        };
        Self {
            max_depth,
            origin: [-0.5 * size; 3],
            size,
            active_levels,
            feature_dim,
            init_scale: 1e-2,
            seed: 0,
        }
    }

    pub fn leaf_size(&self) -> f64 {
        self.level_size(self.max_depth)
    }

    pub fn level_size(&self, level: u8) -> f64 {
        self.size / (1u64 << level) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidGridConfig(m));
        if self.max_depth > MAX_SUPPORTED_DEPTH {
            return fail(format!(
                "max_depth {} exceeds {}",
                self.max_depth, MAX_SUPPORTED_DEPTH
            ));
        }
        if !(self.size > 0.0 && self.size.is_finite()) {
            return fail(format!("extent size {} must be positive", self.size));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if self.active_levels.is_empty() {
            return fail("at least one active level is required".into());
        }
        if !self.active_levels.windows(2).all(|w| w[0] < w[1]) {
            return fail("active levels must be strictly ascending".into());
        }
        if self.active_levels.iter().any(|&l| l > self.max_depth) {
            return fail("active level deeper than max_depth".into());
        }
        if !(self.init_scale >= 0.0) {
            return fail("init_scale must be non-negative".into());
        }
        Ok(())
    }

    fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.origin[i] && p[i] <= self.origin[i] + self.size)
    }
}

#[derive(Clone, Debug)]
struct Node {
    level: u8,
    coord: [u32; 3],
    children: [u32; 8],
    corners: [u32; 8],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InsertReport {
    pub new_nodes: usize,
    pub dropped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Full,
    /// Some active level had no allocated node at the query point.
    Partial,
    Unobserved,
}

/// Corner slots and trilinear weights contributed by one active level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelContribution {
    pub level: u8,
    pub slots: [u32; 8],
    pub weights: [f64; 8],
}

/// Which feature slots an interpolation read, for routing gradients back.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub version: u64,
    pub levels: SmallVec<[LevelContribution; 2]>,
    pub observation: Observation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelHit {
    pub code: u64,
    pub t_entry: f64,
    pub t_exit: f64,
}

/// Per-slot gradient accumulator matching one structural version of a grid.
#[derive(Clone, Debug, Default)]
pub struct GradientBuffer {
    version: u64,
    dim: usize,
    grads: Vec<f64>,
    touched: Vec<u32>,
    flags: Vec<bool>,
}

impl GradientBuffer {
    pub fn slot(&self, slot: u32) -> &[f64] {
        let s = slot as usize * self.dim;
        &self.grads[s..s + self.dim]
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    /// Slots that received gradient since the last reset, in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &slot in &self.touched {
            let s = slot as usize * self.dim;
            self.grads[s..s + self.dim].fill(0.0);
            self.flags[slot as usize] = false;
        }
        self.touched.clear();
    }

    pub fn is_finite(&self) -> bool {
        self.touched.iter().all(|&slot| self.slot(slot).iter().all(|g| g.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct OctreeFeatureGrid {
    config: GridConfig,
    nodes: Vec<Node>,
    node_index: FxHashMap<u64, u32>,
    corner_index: FxHashMap<u64, u32>,
    corner_keys: Vec<u64>,
    features: Vec<f64>,
    level_active: Vec<bool>,
    leaf_count: usize,
    bounds: Option<([u32; 3], [u32; 3])>,
    version: u64,
    rng: ChaCha8Rng,
}

impl OctreeFeatureGrid {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let mut level_active = vec![false; config.max_depth as usize + 1];
        for &l in &config.active_levels {
            level_active[l as usize] = true;
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            nodes: Vec::new(),
            node_index: FxHashMap::default(),
            corner_index: FxHashMap::default(),
            corner_keys: Vec::new(),
            features: Vec::new(),
            level_active,
            leaf_count: 0,
            bounds: None,
            version: 0,
            rng,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn slot_count(&self) -> usize {
        self.corner_keys.len()
    }

    /// Structural version; bumps whenever nodes are added.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn slot_feature(&self, slot: u32) -> &[f64] {
        let f = self.config.feature_dim;
        &self.features[slot as usize * f..(slot as usize + 1) * f]
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf_coord(&self, p: &Vec3) -> [u32; 3] {
        let n = 1u64 << self.config.max_depth;
        let leaf = self.config.leaf_size();
        let mut c = [0u32; 3];
        for i in 0..3 {
            let v = ((p[i] - self.config.origin[i]) / leaf).floor();
            c[i] = v.clamp(0.0, (n - 1) as f64) as u32;
        }
        c
    }

    fn new_slot(&mut self, key: u64) -> u32 {
        let slot = self.corner_keys.len() as u32;
        self.corner_keys.push(key);
        self.corner_index.insert(key, slot);
        let scale = self.config.init_scale;
        for _ in 0..self.config.feature_dim {
            let v = if scale > 0.0 {
                self.rng.random_range(-scale..=scale)
            } else {
                0.0
            };
            self.features.push(v);
        }
        slot
    }

    fn corner_slot(&mut self, level: u8, c: [u32; 3]) -> u32 {
        let key = node_key(level, spread_bits(c[0]) | spread_bits(c[1]) << 1 | spread_bits(c[2]) << 2);
        match self.corner_index.get(&key) {
            Some(&slot) => slot,
            None => self.new_slot(key),
        }
    }

    fn push_node(&mut self, level: u8, coord: [u32; 3]) -> u32 {
        let mut corners = [NONE; 8];
        if self.level_active[level as usize] {
            for (i, slot) in corners.iter_mut().enumerate() {
                let c = [
                    coord[0] + (i as u32 & 1),
                    coord[1] + (i as u32 >> 1 & 1),
                    coord[2] + (i as u32 >> 2 & 1),
                ];
                *slot = self.corner_slot(level, c);
            }
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            level,
            coord,
            children: [NONE; 8],
            corners,
        });
        let code = spread_bits(coord[0]) | spread_bits(coord[1]) << 1 | spread_bits(coord[2]) << 2;
        self.node_index.insert(node_key(level, code), id);
        if level == self.config.max_depth {
            self.leaf_count += 1;
            self.bounds = Some(match self.bounds {
                None => (coord, coord),
                Some((lo, hi)) => (
                    [lo[0].min(coord[0]), lo[1].min(coord[1]), lo[2].min(coord[2])],
                    [hi[0].max(coord[0]), hi[1].max(coord[1]), hi[2].max(coord[2])],
                ),
            });
        }
        id
    }

    fn find(&self, level: u8, coord: [u32; 3]) -> Option<u32> {
        let code = spread_bits(coord[0]) | spread_bits(coord[1]) << 1 | spread_bits(coord[2]) << 2;
        self.node_index.get(&node_key(level, code)).copied()
    }

    /// Allocates the root-to-leaf path of every point inside the extent.
    pub fn insert_points(&mut self, points: &[Vec3]) -> InsertReport {
        let mut report = InsertReport::default();
        let depth = self.config.max_depth;
        for p in points {
            if !p.iter().all(|v| v.is_finite()) || !self.config.contains(p) {
                report.dropped += 1;
                continue;
            }
            let leaf = self.leaf_coord(p);
            if self.find(depth, leaf).is_some() {
                continue;
            }
            let mut parent = NONE;
            for level in 0..=depth {
                let shift = depth - level;
                let coord = [leaf[0] >> shift, leaf[1] >> shift, leaf[2] >> shift];
                let id = match self.find(level, coord) {
                    Some(id) => id,
                    None => {
                        let id = self.push_node(level, coord);
                        if parent != NONE {
                            let child = (coord[0] & 1) | (coord[1] & 1) << 1 | (coord[2] & 1) << 2;
                            self.nodes[parent as usize].children[child as usize] = id;
                        }
                        report.new_nodes += 1;
                        id
                    }
                };
                parent = id;
            }
        }
        if report.new_nodes > 0 {
            self.version += 1;
        }
        report
    }

    pub fn leaf_allocated(&self, p: &Vec3) -> bool {
        self.config.contains(p) && self.find(self.config.max_depth, self.leaf_coord(p)).is_some()
    }

    /// Summed multi-level feature at `p`, written into `out`.
    pub fn interpolate_into(&self, p: &Vec3, out: &mut [f64]) -> Result<QueryRecord> {
        let f = self.config.feature_dim;
        if out.len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: out.len(),
            });
        }
        if !self.config.contains(p) {
            return Err(Error::OutsideExtent([p[0], p[1], p[2]]));
        }
        out.fill(0.0);
        let mut levels = SmallVec::new();
        for &level in &self.config.active_levels {
            let n = 1u64 << level;
            let size = self.config.level_size(level);
            let mut coord = [0u32; 3];
            let mut frac = [0.0; 3];
            for i in 0..3 {
                let u = (p[i] - self.config.origin[i]) / size;
                let c = u.floor().clamp(0.0, (n - 1) as f64);
                coord[i] = c as u32;
                frac[i] = (u - c).clamp(0.0, 1.0);
            }
            let Some(id) = self.find(level, coord) else {
                continue;
            };
            let node = &self.nodes[id as usize];
            let weights = trilinear_weights(frac);
            for (k, &slot) in node.corners.iter().enumerate() {
                let w = weights[k];
                let z = &self.features[slot as usize * f..(slot as usize + 1) * f];
                for (o, v) in out.iter_mut().zip(z) {
                    *o += w * v;
                }
            }
            levels.push(LevelContribution {
                level,
                slots: node.corners,
                weights,
            });
        }
        let observation = if levels.is_empty() {
            Observation::Unobserved
        } else if levels.len() < self.config.active_levels.len() {
            Observation::Partial
        } else {
            Observation::Full
        };
        Ok(QueryRecord {
            version: self.version,
            levels,
            observation,
        })
    }

    pub fn interpolate(&self, p: &Vec3) -> Result<(Vec<f64>, QueryRecord)> {
        let mut out = vec![0.0; self.config.feature_dim];
        let record = self.interpolate_into(p, &mut out)?;
        Ok((out, record))
    }

    /// Gradient buffer sized for the current structure.
    pub fn gradient_buffer(&self) -> GradientBuffer {
        let mut buf = GradientBuffer::default();
        self.prepare_gradient_buffer(&mut buf);
        buf
    }

    /// Clears `buf` and resizes it to the current structure.
    pub fn prepare_gradient_buffer(&self, buf: &mut GradientBuffer) {
        if buf.dim != self.config.feature_dim {
            *buf = GradientBuffer {
                dim: self.config.feature_dim,
                ..Default::default()
            };
        }
        buf.clear();
        buf.grads.resize(self.slot_count() * buf.dim, 0.0);
        buf.flags.resize(self.slot_count(), false);
        buf.version = self.version;
    }

    /// Accumulates `weight * grad` into every corner slot the query read.
    pub fn scatter_gradient(
        &self,
        record: &QueryRecord,
        grad: &[f64],
        buf: &mut GradientBuffer,
    ) -> Result<()> {
        if record.version != self.version {
            return Err(Error::StaleRecord {
                record: record.version,
                grid: self.version,
            });
        }
        if buf.version != self.version {
            return Err(Error::StaleRecord {
                record: buf.version,
                grid: self.version,
            });
        }
        let f = self.config.feature_dim;
        if grad.len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: grad.len(),
            });
        }
        for contribution in &record.levels {
            for (&slot, &w) in contribution.slots.iter().zip(&contribution.weights) {
                let s = slot as usize;
                if !buf.flags[s] {
                    buf.flags[s] = true;
                    buf.touched.push(slot);
                }
                let dst = &mut buf.grads[s * f..(s + 1) * f];
                for (d, g) in dst.iter_mut().zip(grad) {
                    *d += w * g;
                }
            }
        }
        Ok(())
    }

    fn node_bounds(&self, level: u8, coord: [u32; 3]) -> (Vec3, Vec3) {
        let size = self.config.level_size(level);
        let o = &self.config.origin;
        let lo = Vec3::new(
            o[0] + coord[0] as f64 * size,
            o[1] + coord[1] as f64 * size,
            o[2] + coord[2] as f64 * size,
        );
        (lo, lo + Vec3::repeat(size))
    }

    /// Axis-aligned box of a leaf voxel from its Morton code.
    pub fn leaf_bounds(&self, code: u64) -> (Vec3, Vec3) {
        let (x, y, z) = morton_decode(code);
        self.node_bounds(self.config.max_depth, [x, y, z])
    }

    /// Box enclosing every allocated leaf, in the grid frame.
    pub fn allocated_bounds(&self) -> Option<(Vec3, Vec3)> {
        let (lo, hi) = self.bounds?;
        let d = self.config.max_depth;
        Some((self.node_bounds(d, lo).0, self.node_bounds(d, hi).1))
    }

    /// Allocated leaves pierced by the ray within `[t_min, t_max]`, sorted by
    /// entry distance (ties by Morton code). Intervals are clipped to the range.
    pub fn ray_voxel_intersections(&self, ray: &Ray, t_min: f64, t_max: f64) -> Vec<VoxelHit> {
        let mut hits = Vec::new();
        if self.nodes.is_empty() || !(t_max > t_min) {
            return hits;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let depth = self.config.max_depth;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let (lo, hi) = self.node_bounds(node.level, node.coord);
            let (t0, t1) = slab(&ray.origin, &inv, &lo, &hi);
            let (a, b) = (t0.max(t_min), t1.min(t_max));
            if node.level == depth {
                if a < b {
                    let code = spread_bits(node.coord[0])
                        | spread_bits(node.coord[1]) << 1
                        | spread_bits(node.coord[2]) << 2;
                    hits.push(VoxelHit {
                        code,
                        t_entry: a,
                        t_exit: b,
                    });
                }
            } else if a <= b + 1e-9 {
                stack.extend(node.children.iter().copied().filter(|&c| c != NONE));
            }
        }
        hits.sort_by(|x, y| x.t_entry.total_cmp(&y.t_entry).then(x.code.cmp(&y.code)));
        hits
    }

    /// FNV-1a over the feature bits; cheap equality check for tests and logs.
    pub fn feature_checksum(&self) -> u64 {
        fnv1a(self.features.iter().map(|v| v.to_bits()))
    }

    /// Node Morton codes in allocation order.
    pub fn node_codes(&self) -> impl Iterator<Item = MortonCode> + '_ {
        self.nodes.iter().map(|n| MortonCode {
            code: spread_bits(n.coord[0]) | spread_bits(n.coord[1]) << 1 | spread_bits(n.coord[2]) << 2,
            level: n.level,
        })
    }

    /// Corner keys `(level, corner Morton code)` in slot order.
    pub fn corner_codes(&self) -> impl Iterator<Item = MortonCode> + '_ {
        self.corner_keys.iter().map(|&k| MortonCode {
            code: k & ((1u64 << 58) - 1),
            level: (k >> 58) as u8,
        })
    }

    /// Rebuilds a grid from its serialized parts. Nodes must be listed
    /// parents-first (allocation order), corners in slot order.
    pub fn from_parts(
        config: GridConfig,
        nodes: &[MortonCode],
        corners: &[MortonCode],
        features: Vec<f64>,
        version: u64,
    ) -> Result<Self> {
        let mut grid = Self::new(config)?;
        let f = grid.config.feature_dim;
        if features.len() != corners.len() * f {
            return Err(Error::CorruptCheckpoint(format!(
                "{} feature values for {} corners of dim {}",
                features.len(),
                corners.len(),
                f
            )));
        }
        for (slot, c) in corners.iter().enumerate() {
            let key = c.key();
            if grid.corner_index.insert(key, slot as u32).is_some() {
                return Err(Error::CorruptCheckpoint("duplicate corner key".into()));
            }
            grid.corner_keys.push(key);
        }
        grid.features = features;
        let corner_count = grid.corner_keys.len();
        for n in nodes {
            if n.level > grid.config.max_depth {
                return Err(Error::CorruptCheckpoint("node deeper than max_depth".into()));
            }
            let (x, y, z) = n.coords();
            let coord = [x, y, z];
            if grid.find(n.level, coord).is_some() {
                return Err(Error::CorruptCheckpoint("duplicate node".into()));
            }
            let parent = if n.level == 0 {
                None
            } else {
                let pc = [x >> 1, y >> 1, z >> 1];
                Some(grid.find(n.level - 1, pc).ok_or_else(|| {
                    Error::CorruptCheckpoint("node listed before its parent".into())
                })?)
            };
            let id = grid.push_node(n.level, coord);
            if grid.corner_keys.len() != corner_count {
                return Err(Error::CorruptCheckpoint("node corner missing from table".into()));
            }
            if let Some(p) = parent {
                let child = (x & 1) | (y & 1) << 1 | (z & 1) << 2;
                grid.nodes[p as usize].children[child as usize] = id;
            }
        }
        grid.version = version;
        Ok(grid)
    }
}

pub(crate) fn fnv1a(words: impl Iterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

/// Corner `i` sits at offset `(i & 1, i >> 1 & 1, i >> 2 & 1)`.
pub fn trilinear_weights(frac: [f64; 3]) -> [f64; 8] {
    let [x, y, z] = frac;
    let (x0, y0, z0) = (1.0 - x, 1.0 - y, 1.0 - z);
    [
        x0 * y0 * z0,
        x * y0 * z0,
        x0 * y * z0,
        x * y * z0,
        x0 * y0 * z,
        x * y0 * z,
        x0 * y * z,
        x * y * z,
    ]
}

/// Slab test; a zero direction component constrains only by containment.
pub(crate) fn slab(origin: &Vec3, inv_dir: &Vec3, lo: &Vec3, hi: &Vec3) -> (f64, f64) {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if inv_dir[i].is_infinite() {
            if origin[i] < lo[i] || origin[i] > hi[i] {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            continue;
        }
        let a = (lo[i] - origin[i]) * inv_dir[i];
        let b = (hi[i] - origin[i]) * inv_dir[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0, t1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn unit_config(max_depth: u8, active: Vec<u8>, f: usize) -> GridConfig {
        GridConfig {
            max_depth,
            origin: [0.0; 3],
            size: 1.0,
            active_levels: active,
            feature_dim: f,
            init_scale: 1e-2,
            seed: 3,
        }
    }

    /// Bit-by-bit interleaving, independent of the magic-number spreading.
    fn morton_oracle(x: u32, y: u32, z: u32) -> u64 {
        let mut code = 0u64;
        for bit in 0..21 {
            code |= ((x as u64 >> bit) & 1) << (3 * bit);
            code |= ((y as u64 >> bit) & 1) << (3 * bit + 1);
            code |= ((z as u64 >> bit) & 1) << (3 * bit + 2);
        }
        code
    }

    #[test]
    fn morton_known_values() {
        assert_eq!(morton_encode(0, 0, 0).unwrap(), 0);
        assert_eq!(morton_encode(1, 1, 1).unwrap(), 7);
        assert_eq!(morton_encode(1, 0, 0).unwrap(), 1);
        assert_eq!(morton_encode(0, 1, 0).unwrap(), 2);
        assert_eq!(morton_encode(0, 0, 1).unwrap(), 4);
        // oracle: x=0b011, y=0b101, z=0b001
        assert_eq!(morton_oracle(3, 5, 1), 0b010_001_111);
        assert_eq!(morton_encode(3, 5, 1).unwrap(), 0b010_001_111);
    }

    #[test]
    fn morton_matches_oracle_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let (x, y, z) = (
                rng.random_range(0..1 << 21),
                rng.random_range(0..1 << 21),
                rng.random_range(0..1 << 21),
            );
            let code = morton_encode(x, y, z).unwrap();
            assert_eq!(code, morton_oracle(x, y, z));
            assert_eq!(morton_decode(code), (x, y, z));
        }
    }

    #[test]
    fn morton_overflow_is_rejected() {
        assert!(matches!(morton_encode(1 << 21, 0, 0), Err(Error::MortonOverflow(_))));
        assert!(MortonCode::new(4, 0, 0, 2).is_err());
        let m = MortonCode::new(3, 2, 1, 2).unwrap();
        assert!(m.code < 8u64.pow(2));
    }

    #[test]
    fn single_point_allocates_one_path() {
        let mut grid = OctreeFeatureGrid::new(unit_config(5, vec![4, 5], 4)).unwrap();
        let r = grid.insert_points(&[Vec3::new(0.3, 0.6, 0.2)]);
        assert_eq!(r.new_nodes, 6);
        assert_eq!(grid.node_count(), 6);
        assert_eq!(grid.leaf_count(), 1);
        let r2 = grid.insert_points(&[Vec3::new(0.3, 0.6, 0.2)]);
        assert_eq!(r2.new_nodes, 0);
    }

    #[test]
    fn node_count_matches_distinct_path_oracle() {
        let depth = 6u8;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let a = Vec3::new(rng.random(), rng.random(), rng.random());
            // same leaf, or random elsewhere
            let b = if rng.random_bool(0.5) {
                a + Vec3::repeat(1e-4)
            } else {
                Vec3::new(rng.random(), rng.random(), rng.random())
            };
            let mut grid = OctreeFeatureGrid::new(unit_config(depth, vec![depth], 2)).unwrap();
            let report = grid.insert_points(&[a, b]);
            let mut expected = BTreeSet::new();
            for p in [a, b] {
                for level in 0..=depth {
                    let n = (1u32 << level) as f64;
                    let c = p.map(|v| (v * n).floor().min(n - 1.0) as u32);
                    expected.insert((level, morton_oracle(c[0], c[1], c[2])));
                }
            }
            assert_eq!(report.new_nodes, expected.len());
        }
    }

    #[test]
    fn outside_points_are_dropped() {
        let mut grid = OctreeFeatureGrid::new(unit_config(3, vec![3], 2)).unwrap();
        let r = grid.insert_points(&[Vec3::new(1.5, 0.5, 0.5), Vec3::new(0.5, 0.5, 0.5)]);
        assert_eq!(r.dropped, 1);
        assert_eq!(r.new_nodes, 4);
    }

    #[test]
    fn children_always_have_parents() {
        let mut grid = OctreeFeatureGrid::new(unit_config(7, vec![6, 7], 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        grid.insert_points(&pts);
        for code in grid.node_codes() {
            if code.level > 0 {
                let (x, y, z) = code.coords();
                assert!(grid.find(code.level - 1, [x >> 1, y >> 1, z >> 1]).is_some());
            }
        }
        assert!(grid.node_count() <= pts.len() * 8);
        assert!(grid.node_count() < 8usize.pow(7));
    }

    #[test]
    fn adjacent_voxels_share_corner_slots() {
        let mut grid = OctreeFeatureGrid::new(unit_config(2, vec![2], 3)).unwrap();
        // two voxels adjacent along x at level 2 (size 0.25)
        grid.insert_points(&[Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.35, 0.1, 0.1)]);
        let a = grid.find(2, [0, 0, 0]).unwrap() as usize;
        let b = grid.find(2, [1, 0, 0]).unwrap() as usize;
        // corner with x offset 1 in voxel a is corner with x offset 0 in voxel b
        for (ia, ib) in [(1, 0), (3, 2), (5, 4), (7, 6)] {
            assert_eq!(grid.nodes[a].corners[ia], grid.nodes[b].corners[ib]);
        }
        assert_eq!(grid.slot_count(), 12);
    }

    #[test]
    fn interpolation_at_corner_and_center() {
        let mut grid = OctreeFeatureGrid::new(unit_config(1, vec![1], 2)).unwrap();
        grid.insert_points(&[Vec3::new(0.1, 0.1, 0.1)]);
        let node = grid.nodes[grid.find(1, [0, 0, 0]).unwrap() as usize].clone();
        // exactly at corner 0 -> that corner's feature
        let (z, rec) = grid.interpolate(&Vec3::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(z, grid.slot_feature(node.corners[0]));
        assert_eq!(rec.observation, Observation::Full);
        // centre -> mean of the 8 corners
        let (z, _) = grid.interpolate(&Vec3::new(0.25, 0.25, 0.25)).unwrap();
        for d in 0..2 {
            let mean: f64 = node.corners.iter().map(|&s| grid.slot_feature(s)[d]).sum::<f64>() / 8.0;
            assert!((z[d] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn two_levels_sum_their_interpolations() {
        let mut grid = OctreeFeatureGrid::new(unit_config(2, vec![1, 2], 1)).unwrap();
        grid.insert_points(&[Vec3::new(0.1, 0.1, 0.1)]);
        // set corner values to a known linear function f(x,y,z) = level + 2x + 3y + 5z
        let keys: Vec<MortonCode> = grid.corner_codes().collect();
        for (slot, key) in keys.iter().enumerate() {
            let (x, y, z) = key.coords();
            let s = 0.5f64.powi(key.level as i32);
            grid.features[slot] =
                key.level as f64 + 2.0 * x as f64 * s + 3.0 * y as f64 * s + 5.0 * z as f64 * s;
        }
        let p = Vec3::new(0.2, 0.05, 0.15);
        let (z, _) = grid.interpolate(&p).unwrap();
        // trilinear reproduces linear functions exactly at each level
        let per_level = |l: f64| l + 2.0 * p[0] + 3.0 * p[1] + 5.0 * p[2];
        assert!((z[0] - (per_level(1.0) + per_level(2.0))).abs() < 1e-12);
    }

    #[test]
    fn unallocated_levels_are_flagged() {
        let mut grid = OctreeFeatureGrid::new(unit_config(2, vec![1, 2], 1)).unwrap();
        grid.insert_points(&[Vec3::new(0.1, 0.1, 0.1)]);
        // level-1 node [0,0,0] exists, level-2 node [1,1,1] does not
        let (_, rec) = grid.interpolate(&Vec3::new(0.3, 0.3, 0.3)).unwrap();
        assert_eq!(rec.observation, Observation::Partial);
        let (z, rec) = grid.interpolate(&Vec3::new(0.9, 0.9, 0.9)).unwrap();
        assert_eq!(rec.observation, Observation::Unobserved);
        assert_eq!(z, vec![0.0]);
        assert!(grid.interpolate(&Vec3::new(1.1, 0.5, 0.5)).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let w = trilinear_weights([rng.random(), rng.random(), rng.random()]);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_continuous_across_faces() {
        let mut grid = OctreeFeatureGrid::new(unit_config(3, vec![2, 3], 4)).unwrap();
        grid.insert_points(&[Vec3::new(0.2, 0.3, 0.3), Vec3::new(0.3, 0.3, 0.3)]);
        let eps = 1e-7;
        let face = 0.25;
        let (a, _) = grid.interpolate(&Vec3::new(face - eps, 0.3, 0.3)).unwrap();
        let (b, _) = grid.interpolate(&Vec3::new(face + eps, 0.3, 0.3)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6 * 10.0);
        }
    }

    #[test]
    fn scatter_distributes_by_weight() {
        let mut grid = OctreeFeatureGrid::new(unit_config(1, vec![1], 2)).unwrap();
        grid.insert_points(&[Vec3::new(0.1, 0.1, 0.1)]);
        let node = grid.nodes[0 + grid.find(1, [0, 0, 0]).unwrap() as usize].clone();
        let g = [1.0, -2.0];

        let mut buf = grid.gradient_buffer();
        let (_, rec) = grid.interpolate(&Vec3::new(0.0, 0.0, 0.0)).unwrap();
        grid.scatter_gradient(&rec, &g, &mut buf).unwrap();
        assert_eq!(buf.slot(node.corners[0]), &g);
        for &s in &node.corners[1..] {
            assert_eq!(buf.slot(s), &[0.0, 0.0]);
        }

        grid.prepare_gradient_buffer(&mut buf);
        let (_, rec) = grid.interpolate(&Vec3::new(0.25, 0.25, 0.25)).unwrap();
        grid.scatter_gradient(&rec, &g, &mut buf).unwrap();
        for &s in &node.corners {
            assert_eq!(buf.slot(s), &[0.125, -0.25]);
        }
    }

    #[test]
    fn scatter_is_linear() {
        let mut grid = OctreeFeatureGrid::new(unit_config(3, vec![2, 3], 3)).unwrap();
        grid.insert_points(&[Vec3::new(0.4, 0.4, 0.4)]);
        let (_, rec) = grid.interpolate(&Vec3::new(0.41, 0.43, 0.38)).unwrap();
        let g1 = [0.3, -1.0, 2.0];
        let g2 = [1.5, 0.25, -0.75];
        let mut a = grid.gradient_buffer();
        grid.scatter_gradient(&rec, &g1, &mut a).unwrap();
        grid.scatter_gradient(&rec, &g2, &mut a).unwrap();
        let mut b = grid.gradient_buffer();
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| x + y).collect();
        grid.scatter_gradient(&rec, &sum, &mut b).unwrap();
        for (x, y) in a.grads().iter().zip(b.grads()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn scatter_matches_finite_differences() {
        let mut grid = OctreeFeatureGrid::new(unit_config(4, vec![3, 4], 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = Vec3::new(0.53, 0.47, 0.61);
        grid.insert_points(&[p]);
        let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, rec) = grid.interpolate(&p).unwrap();
        let mut buf = grid.gradient_buffer();
        grid.scatter_gradient(&rec, &g, &mut buf).unwrap();
        // objective g · z(p) as a function of every feature value
        let objective = |grid: &OctreeFeatureGrid| -> f64 {
            let (z, _) = grid.interpolate(&p).unwrap();
            z.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let h = 1e-4;
        for i in 0..grid.features.len() {
            let mut plus = grid.clone();
            plus.features[i] += h;
            let mut minus = grid.clone();
            minus.features[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let an = buf.grads()[i];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn stale_records_are_rejected() {
        let mut grid = OctreeFeatureGrid::new(unit_config(3, vec![3], 2)).unwrap();
        grid.insert_points(&[Vec3::new(0.1, 0.1, 0.1)]);
        let (_, rec) = grid.interpolate(&Vec3::new(0.1, 0.1, 0.1)).unwrap();
        grid.insert_points(&[Vec3::new(0.9, 0.9, 0.9)]);
        let mut buf = grid.gradient_buffer();
        assert!(matches!(
            grid.scatter_gradient(&rec, &[1.0, 1.0], &mut buf),
            Err(Error::StaleRecord { .. })
        ));
    }

    #[test]
    fn ray_missing_extent_hits_nothing() {
        let mut grid = OctreeFeatureGrid::new(unit_config(3, vec![3], 1)).unwrap();
        grid.insert_points(&[Vec3::new(0.5, 0.5, 0.5)]);
        let ray = Ray {
            origin: Vec3::new(2.0, 2.0, 2.0),
            direction: Vec3::new(0.0, 0.0, 1.0),
            pixel: (0, 0),
        };
        assert!(grid.ray_voxel_intersections(&ray, 0.0, 10.0).is_empty());
    }

    #[test]
    fn axis_ray_through_single_voxel() {
        let mut grid = OctreeFeatureGrid::new(unit_config(3, vec![3], 1)).unwrap();
        grid.insert_points(&[Vec3::new(0.56, 0.56, 0.56)]);
        let ray = Ray {
            origin: Vec3::new(0.56, 0.56, -1.0),
            direction: Vec3::new(0.0, 0.0, 1.0),
            pixel: (0, 0),
        };
        let hits = grid.ray_voxel_intersections(&ray, 0.0, 10.0);
        assert_eq!(hits.len(), 1);
        let len = hits[0].t_exit - hits[0].t_entry;
        assert!(len > 0.0 && len <= 0.125 * 3f64.sqrt() + 1e-12);
        assert!((hits[0].t_entry - 1.5).abs() < 1e-12);
    }
}
