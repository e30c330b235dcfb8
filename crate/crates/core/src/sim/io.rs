//! Clip-set container.
//!
//! ```text
//! magic "LCCS", format_version u32
//! config_hash [u8; 32], split u8, count u64
//! count × record (u64 length + body)
//! checksum [u8; 32]
//! ```
//!
//! Record body: clip_id str, category u8, seed u64, 16 × (x, y, yaw, speed, yaw_rate),
//! 64 × (x, y, yaw), agent count u32 then per agent (id u64, type u8, length, width,
//! state count u32, states as (x, y, yaw, speed, yaw_rate, valid u8)), drivable vertex count u32
//! and (x, y) pairs, route count u32 and (x, y, yaw) triples.

use std::path::Path;

use super::{AgentState, AgentTrack, AgentType, Category, Clip, ClipSet, EgoState, SimError, Split};
use crate::binio::{read_file, write_file, BinReader, BinWriter, FormatError};
use crate::geom::{Point2, Polygon, Pose2D};

pub const CLIPSET_FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"LCCS";

fn put_pose(w: &mut BinWriter, p: &Pose2D) {
    w.put_f64s(&[p.x, p.y, p.yaw]);
}

fn get_pose(r: &mut BinReader) -> Result<Pose2D, FormatError> {
    let v = r.f64s(3)?;
    Ok(Pose2D { x: v[0], y: v[1], yaw: v[2] })
}

fn encode_clip(c: &Clip) -> Vec<u8> {
    let mut w = BinWriter::raw();
    w.put_str(&c.clip_id);
    w.put_u8(c.category.index());
    w.put_u64(c.seed);
    w.put_u32(c.ego_history.len() as u32);
    for s in &c.ego_history {
        put_pose(&mut w, &s.pose);
        w.put_f64(s.speed);
        w.put_f64(s.yaw_rate);
    }
    w.put_u32(c.ego_future.len() as u32);
    for p in &c.ego_future {
        put_pose(&mut w, p);
    }
    w.put_u32(c.agents.len() as u32);
    for a in &c.agents {
        w.put_u64(a.agent_id);
        w.put_u8(a.agent_type.index() as u8);
        w.put_f64(a.length);
        w.put_f64(a.width);
        w.put_u32(a.states.len() as u32);
        for s in &a.states {
            put_pose(&mut w, &s.pose);
            w.put_f64(s.speed);
            w.put_f64(s.yaw_rate);
            w.put_u8(s.valid as u8);
        }
    }
    w.put_u32(c.drivable.vertices.len() as u32);
    for v in &c.drivable.vertices {
        w.put_f64(v.x);
        w.put_f64(v.y);
    }
    w.put_u32(c.route.len() as u32);
    for p in &c.route {
        put_pose(&mut w, p);
    }
    w.into_inner()
}

fn decode_clip(r: &mut BinReader) -> Result<Clip, FormatError> {
    let clip_id = r.str()?;
    let cat = r.u8()?;
    let category = Category::from_index(cat).ok_or_else(|| FormatError::Invalid(format!("category {cat}")))?;
    let seed = r.u64()?;
    let n = r.u32()? as usize;
    let mut ego_history = Vec::with_capacity(n);
    for _ in 0..n {
        let pose = get_pose(r)?;
        ego_history.push(EgoState { pose, speed: r.f64()?, yaw_rate: r.f64()? });
    }
    let n = r.u32()? as usize;
    let ego_future = (0..n).map(|_| get_pose(r)).collect::<Result<_, _>>()?;
    let n = r.u32()? as usize;
    let mut agents = Vec::with_capacity(n);
    for _ in 0..n {
        let agent_id = r.u64()?;
        let t = r.u8()?;
        let agent_type = AgentType::from_index(t).ok_or_else(|| FormatError::Invalid(format!("agent type {t}")))?;
        let length = r.f64()?;
        let width = r.f64()?;
        let m = r.u32()? as usize;
        let mut states = Vec::with_capacity(m);
        for _ in 0..m {
            let pose = get_pose(r)?;
            let speed = r.f64()?;
            let yaw_rate = r.f64()?;
            let valid = r.u8()? != 0;
            states.push(AgentState { pose, speed, yaw_rate, valid });
        }
        agents.push(AgentTrack { agent_id, agent_type, length, width, states });
    }
    let n = r.u32()? as usize;
    let xy = r.f64s(2 * n)?;
    // stored already in canonical orientation; bypass re-orientation to keep the round trip exact
    let drivable = Polygon { vertices: xy.chunks_exact(2).map(|p| Point2::new(p[0], p[1])).collect() };
    drivable.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    let n = r.u32()? as usize;
    let route = (0..n).map(|_| get_pose(r)).collect::<Result<_, _>>()?;
    Ok(Clip { clip_id, category, seed, ego_history, ego_future, agents, drivable, route })
}

pub fn clipset_to_bytes(set: &ClipSet) -> Vec<u8> {
    let mut w = BinWriter::new(MAGIC, CLIPSET_FORMAT_VERSION);
    w.put_bytes(&set.config_hash);
    w.put_u8(match set.split {
        Split::Train => 0,
        Split::Val => 1,
    });
    w.put_u64(set.clips.len() as u64);
    for c in &set.clips {
        w.put_record(&encode_clip(c));
    }
    w.finish()
}

pub fn clipset_from_bytes(data: &[u8]) -> Result<ClipSet, FormatError> {
    let mut r = BinReader::open(data, MAGIC, CLIPSET_FORMAT_VERSION)?;
    let config_hash: [u8; 32] = r.bytes(32)?.try_into().unwrap();
    let split = match r.u8()? {
        0 => Split::Train,
        1 => Split::Val,
        s => return Err(FormatError::Invalid(format!("split {s}"))),
    };
    let count = r.u64()? as usize;
    let mut clips = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut rec = r.record()?;
        clips.push(decode_clip(&mut rec)?);
        rec.expect_end()?;
    }
    r.expect_end()?;
    Ok(ClipSet { split, config_hash, category_histogram: ClipSet::histogram_of(&clips), clips })
}

pub fn write_clipset(set: &ClipSet, path: &Path) -> Result<(), SimError> {
    Ok(write_file(path, &clipset_to_bytes(set))?)
}

pub fn read_clipset(path: &Path) -> Result<ClipSet, SimError> {
    Ok(clipset_from_bytes(&read_file(path)?)?)
}
