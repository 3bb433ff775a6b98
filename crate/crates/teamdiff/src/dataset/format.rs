//! Versioned binary dataset format.
//!
//! Layout (all little-endian):
//!   magic "PADF" | version u32 | env name | codec descriptor
//!   | trajectory count u64 | one checksummed record per trajectory.
//!
//! Each record is length-prefixed and followed by an FNV-1a 64-bit
//! checksum of its payload, so truncation and bit rot surface as
//! "corrupt dataset" rather than garbage trajectories.

use super::{Dataset, TrajStep, Trajectory};
use crate::envs::{Role, SlotDesc, StateCodec};
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 4] = b"PADF";
pub const DATASET_VERSION: u32 = 1;

fn write_codec<W: std::io::Write>(w: &mut Writer<W>, codec: &StateCodec) -> Result<()> {
    w.u32(codec.grid_w as u32)?;
    w.u32(codec.grid_h as u32)?;
    w.u64(codec.horizon as u64)?;
    w.u32(codec.slots.len() as u32)?;
    for slot in &codec.slots {
        w.u8(slot.role.code())?;
        w.u8(slot.level)?;
    }
    Ok(())
}

fn read_codec<R: std::io::Read>(r: &mut Reader<R>) -> Result<StateCodec> {
    let grid_w = r.u32()? as i32;
    let grid_h = r.u32()? as i32;
    let horizon = r.u64()? as usize;
    let n_slots = r.u32()? as usize;
    if n_slots > 1 << 16 {
        return Err(Error::data("corrupt dataset"));
    }
    let mut slots = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let role = Role::from_code(r.u8()?)?;
        let level = r.u8()?;
        slots.push(SlotDesc { role, level });
    }
    Ok(StateCodec { grid_w, grid_h, horizon, slots })
}

fn encode_trajectory(traj: &Trajectory, bits: usize) -> Result<Vec<u8>> {
    let mut w = Writer::new(Vec::new());
    w.u64(traj.episode_id)?;
    w.u64(traj.seed)?;
    w.u8(u8::from(traj.terminal))?;
    w.u32(traj.teammate_ids.len() as u32)?;
    for id in &traj.teammate_ids {
        w.string(id)?;
    }
    w.u64(traj.steps.len() as u64)?;
    for step in &traj.steps {
        if step.state_bits.len() != bits {
            return Err(Error::invalid("trajectory state length does not match codec"));
        }
        w.bytes(&step.state_bits)?;
        w.u8(step.ego_action)?;
        w.u8(step.teammate_actions.len() as u8)?;
        w.bytes(&step.teammate_actions)?;
        w.f64(step.reward)?;
    }
    Ok(w.into_inner())
}

fn decode_trajectory(payload: &[u8], env_name: &str, bits: usize) -> Result<Trajectory> {
    let mut r = Reader::new(payload, "dataset");
    let episode_id = r.u64()?;
    let seed = r.u64()?;
    let terminal = r.u8()? != 0;
    let n_ids = r.u32()? as usize;
    if n_ids > 1 << 10 {
        return Err(Error::data("corrupt dataset"));
    }
    let mut teammate_ids = Vec::with_capacity(n_ids);
    for _ in 0..n_ids {
        teammate_ids.push(r.string()?);
    }
    let n_steps = r.u64()? as usize;
    if n_steps > 1 << 24 {
        return Err(Error::data("corrupt dataset"));
    }
    let mut steps = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let state_bits = r.bytes(bits)?;
        let ego_action = r.u8()?;
        let n_tm = r.u8()? as usize;
        let teammate_actions = r.bytes(n_tm)?;
        let reward = r.f64()?;
        steps.push(TrajStep { state_bits, ego_action, teammate_actions, reward });
    }
    r.expect_eof()?;
    Ok(Trajectory {
        episode_id,
        env_name: env_name.to_string(),
        seed,
        teammate_ids,
        steps,
        terminal,
    })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut w = Writer::new(BufWriter::new(file));
    w.bytes(DATASET_MAGIC)?;
    w.u32(DATASET_VERSION)?;
    w.string(&dataset.env_name)?;
    write_codec(&mut w, &dataset.codec)?;
    w.u64(dataset.trajectories.len() as u64)?;
    let bits = dataset.codec.bits();
    for traj in &dataset.trajectories {
        let payload = encode_trajectory(traj, bits)?;
        w.record(&payload)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file =
        File::open(path).map_err(|e| Error::Io(format!("cannot open {}: {e}", path.display())))?;
    let mut r = Reader::new(BufReader::new(file), "dataset");
    let magic = r.bytes(4)?;
    if magic != DATASET_MAGIC {
        return Err(Error::data("not a dataset file (bad magic)"));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::data(format!(
            "unsupported version {version} (expected {DATASET_VERSION})"
        )));
    }
    let env_name = r.string()?;
    let codec = read_codec(&mut r)?;
    let count = r.u64()? as usize;
    if count > 1 << 24 {
        return Err(Error::data("corrupt dataset"));
    }
    let bits = codec.bits();
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let payload = r.record()?;
        trajectories.push(decode_trajectory(&payload, &env_name, bits)?);
    }
    r.expect_eof()?;
    Ok(Dataset { env_name, codec, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::collect_dataset;
    use crate::envs::{Env, PpConfig, PpEnv};
    use crate::teammates::default_train_pools;

    fn sample_dataset(episodes: usize) -> Dataset {
        let env = PpEnv::new(PpConfig { horizon: 6, ..PpConfig::default() }).unwrap();
        let pools = default_train_pools("pp").unwrap();
        collect_dataset(&env, &pools, episodes, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = sample_dataset(12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.padf");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.trajectories.iter().zip(&back.trajectories) {
            for (sa, sb) in a.steps.iter().zip(&b.steps) {
                assert_eq!(sa.reward.to_bits(), sb.reward.to_bits());
            }
        }
        // Writing again produces identical bytes.
        let path2 = dir.path().join("d2.padf");
        write_dataset(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let ds = sample_dataset(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.padf");
        write_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.padf");
        std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        let err = read_dataset(&cut).unwrap_err();
        assert!(err.to_string().contains("corrupt dataset"), "{err}");
    }

    #[test]
    fn flipped_bit_fails_the_checksum() {
        let ds = sample_dataset(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.padf");
        write_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_dataset(&path).is_err());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let ds = sample_dataset(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.padf");
        write_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99; // version field
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported version"), "{err}");
    }

    #[test]
    fn empty_dataset_round_trips() {
        let env = PpEnv::new(PpConfig::default()).unwrap();
        let ds = Dataset {
            env_name: "pp".into(),
            codec: env.codec().clone(),
            trajectories: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.padf");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.trajectories.len(), 0);
        assert_eq!(back, ds);
    }
}
