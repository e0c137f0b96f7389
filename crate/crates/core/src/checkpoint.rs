//! Binary atlas checkpoint. Little-endian layout:
//!
//! ```text
//! magic "NIMAPCKP" | format u32 | sha256(payload) [32] | payload
//! payload = config (TOML) | scene hash [32] | pose table | submaps
//! ```
//!
//! Poses are stored as raw rotation matrices and translations, and every
//! float as its exact bit pattern, so a loaded atlas renders bitwise
//! identically to the saved one.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::nets::{Head, MlpDecoder};
use crate::octree::{GridConfig, MortonCode, OctreeFeatureGrid};
use crate::renderer::FieldModel;
use crate::submaps::{Submap, SubmapAtlas};

const MAGIC: &[u8; 8] = b"NIMAPCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to render, mesh and evaluate a finished run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub atlas: SubmapAtlas,
    /// Ground-truth keyframe poses, kept for trajectory evaluation.
    pub ground_truth: BTreeMap<u64, Pose>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.0.extend(b);
    }
    fn pose(&mut self, p: &Pose) {
        for v in p.to_array() {
            self.f64(v);
        }
    }
    fn floats(&mut self, v: &[f64]) {
        self.len(v.len());
        for x in v {
            self.f64(*x);
        }
    }
    fn codes(&mut self, codes: impl ExactSizeIterator<Item = MortonCode>) {
        self.len(codes.len());
        for c in codes {
            self.u8(c.level);
            self.u64(c.code);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(corrupt("length exceeds remaining data"));
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }
    fn pose(&mut self) -> Result<Pose> {
        let mut a = [0.0; 12];
        for v in &mut a {
            *v = self.f64()?;
        }
        Ok(Pose::from_array(&a))
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn codes(&mut self) -> Result<Vec<MortonCode>> {
        let n = self.len(9)?;
        (0..n)
            .map(|_| {
                let level = self.u8()?;
                Ok(MortonCode {
                    code: self.u64()?,
                    level,
                })
            })
            .collect()
    }
}

fn write_decoder(w: &mut Writer, d: &MlpDecoder) {
    w.len(d.input_dim());
    w.len(d.hidden_dim());
    w.floats(d.params());
}

fn read_decoder(r: &mut Reader, head: Head) -> Result<MlpDecoder> {
    let input = r.u64()? as usize;
    let hidden = r.u64()? as usize;
    if hidden == 0 || hidden > crate::nets::MAX_HIDDEN {
        return Err(corrupt(format!("decoder hidden width {hidden}")));
    }
    MlpDecoder::from_params(head, input, hidden, r.floats()?)
}

pub fn encode(config: &RunConfig, atlas: &SubmapAtlas, gt: &BTreeMap<u64, Pose>) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(config.to_toml().as_bytes());
    w.0.extend(config.scene_hash());
    w.len(atlas.poses.len());
    for (id, pose) in &atlas.poses {
        w.u64(*id);
        w.pose(pose);
        match gt.get(id) {
            Some(g) => {
                w.u8(1);
                w.pose(g);
            }
            None => w.u8(0),
        }
    }
    w.u64(atlas.seed);
    w.len(atlas.submaps.len());
    for s in &atlas.submaps {
        w.u64(s.id);
        w.u64(s.anchor_kf);
        w.pose(&s.anchor_pose);
        w.f64(s.training_seconds);
        w.len(s.members.len());
        for m in &s.members {
            w.u64(*m);
        }
        w.len(s.integrated.len());
        for (id, p) in &s.integrated {
            w.u64(*id);
            w.pose(p);
        }
        let grid = &s.model.grid;
        w.bytes(serde_json::to_string(grid.config()).expect("grid config serializes").as_bytes());
        w.u64(grid.version());
        w.codes(grid.node_codes().collect::<Vec<_>>().into_iter());
        w.codes(grid.corner_codes().collect::<Vec<_>>().into_iter());
        w.floats(grid.features());
        write_decoder(&mut w, &s.model.occupancy);
        write_decoder(&mut w, &s.model.color);
    }
    let payload = w.0;
    let mut out = Vec::with_capacity(payload.len() + 44);
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend(Sha256::digest(&payload));
    out.extend(payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 44 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let payload = &bytes[44..];
    if Sha256::digest(payload).as_slice() != &bytes[12..44] {
        return Err(corrupt("payload hash mismatch"));
    }
    let mut r = Reader { buf: payload, pos: 0 };
    let config = RunConfig::from_toml(&r.string()?)?;
    let hash = r.take(32)?;
    if hash != config.scene_hash() {
        return Err(corrupt("stored scene hash does not match stored config"));
    }
    let mut poses = BTreeMap::new();
    let mut gt = BTreeMap::new();
    for _ in 0..r.len(8 * 13 + 1)? {
        let id = r.u64()?;
        poses.insert(id, r.pose()?);
        if r.u8()? == 1 {
            gt.insert(id, r.pose()?);
        }
    }
    let seed = r.u64()?;
    let mut atlas = SubmapAtlas::new(config.mapping.clone(), seed)?;
    atlas.poses = poses;
    for _ in 0..r.len(8)? {
        let id = r.u64()?;
        let anchor_kf = r.u64()?;
        let anchor_pose = r.pose()?;
        let training_seconds = r.f64()?;
        let members: Vec<u64> = (0..r.len(8)?).map(|_| r.u64()).collect::<Result<_>>()?;
        let mut integrated = BTreeMap::new();
        for _ in 0..r.len(8 * 13)? {
            let kf = r.u64()?;
            integrated.insert(kf, r.pose()?);
        }
        let grid_cfg: GridConfig =
            serde_json::from_slice(r.bytes()?).map_err(|e| corrupt(format!("grid config: {e}")))?;
        let grid_version = r.u64()?;
        let nodes = r.codes()?;
        let corners = r.codes()?;
        let features = r.floats()?;
        let grid = OctreeFeatureGrid::from_parts(grid_cfg, &nodes, &corners, features, grid_version)?;
        let occupancy = read_decoder(&mut r, Head::Occupancy)?;
        let color = read_decoder(&mut r, Head::Color)?;
        if occupancy.input_dim() != grid.feature_dim() || color.input_dim() != grid.feature_dim() {
            return Err(corrupt("decoder input width differs from feature dimension"));
        }
        for m in &members {
            atlas.assignment.insert(*m, id);
        }
        atlas.submaps.push(Submap {
            id,
            anchor_kf,
            anchor_pose,
            model: FieldModel::from_parts(grid, occupancy, color, &config.mapping.decoder),
            members,
            integrated,
            training_seconds,
        });
    }
    if r.pos != payload.len() {
        return Err(corrupt("trailing bytes"));
    }
    atlas.active = atlas.submaps.last().map(|s| s.id);
    Ok(Checkpoint {
        config,
        atlas,
        ground_truth: gt,
    })
}

pub fn save(path: &Path, config: &RunConfig, atlas: &SubmapAtlas, gt: &BTreeMap<u64, Pose>) -> Result<()> {
    crate::io::write_file(path, &encode(config, atlas, gt))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{DepthImage, KeyframePacket, RgbImage};
    use crate::geometry::Intrinsics;
    use rand::SeedableRng;

    fn small_atlas() -> (RunConfig, SubmapAtlas) {
        let mut cfg = RunConfig::default();
        cfg.mapping.extent = 6.4;
        cfg.mapping.max_depth = 6;
        cfg.mapping.feature_dim = 4;
        cfg.mapping.m_pixels = 32;
        let intr = Intrinsics::new(20.0, 20.0, 10.0, 7.5, 20, 15).unwrap();
        cfg.camera = intr;
        let mut atlas = SubmapAtlas::new(cfg.mapping.clone(), 3).unwrap();
        let packet = KeyframePacket {
            id: 0,
            timestamp: 0.0,
            intrinsics: intr,
            pose: Pose::rot_y(0.2),
            color: RgbImage::filled(20, 15, [0.3, 0.6, 0.9]),
            depth: DepthImage::filled(20, 15, 1.5),
        };
        let a = atlas.select_local_map(&packet).unwrap();
        atlas.integrate(packet, &a).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        atlas.train_keyframe(0, 3, &mut rng).unwrap();
        (cfg, atlas)
    }

    #[test]
    fn round_trip_renders_bitwise() {
        let (cfg, atlas) = small_atlas();
        let gt: BTreeMap<u64, Pose> = [(0, Pose::identity())].into();
        let bytes = encode(&cfg, &atlas, &gt);
        let ck = decode(&bytes).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.ground_truth, gt);
        assert_eq!(ck.atlas.parameter_checksum(), atlas.parameter_checksum());
        let pose = Pose::rot_y(0.25);
        let a = atlas.render_fused(&pose, &cfg.camera).unwrap();
        let b = ck.atlas.render_fused(&pose, &cfg.camera).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode(&ck.config, &ck.atlas, &ck.ground_truth), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let (cfg, atlas) = small_atlas();
        let mut bytes = encode(&cfg, &atlas, &BTreeMap::new());
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(decode(b"garbage"), Err(Error::CorruptCheckpoint(_))));
        let mut wrong_version = encode(&cfg, &atlas, &BTreeMap::new());
        wrong_version[8] = 99;
        assert!(matches!(decode(&wrong_version), Err(Error::CorruptCheckpoint(_))));
    }
}
