//! Checkpoint serialization.
//!
//! Layout (little-endian): magic "CGRN", u32 version (1), u32 record
//! count, then that many named records — u16 name length, UTF-8 name,
//! one tensor record. Model parameters and buffers keep their store
//! names (`θe/…`, `θc/…`, `θg/…`, `θd/…`, `fontemb/…`); optimizer
//! moments follow as `adam/m/<param>` and `adam/v/<param>`. A fixed
//! footer carries the step counters and the shuffle RNG state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::{ParameterStore, SLICE_DISCRIMINATOR};
use crate::rng::Rng;
use crate::tensor::{Dtype, Tensor};
use crate::train::{TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"CGRN";
const VERSION: u32 = 1;

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    let bytes = name.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Checkpoint(format!("name too long: {name}")));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad record name: {e}")))
}

pub fn save_checkpoint(path: &Path, store: &ParameterStore, state: &TrainState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let joint = state.adam_joint.moments_sorted();
    let disc = state.adam_d.moments_sorted();
    let n_store = store.names().count();
    let n_total = n_store + 2 * (joint.len() + disc.len());
    w.write_all(&(n_total as u32).to_le_bytes())?;

    for (name, t) in store.iter() {
        write_name(&mut w, name)?;
        t.write_cgtn(&mut w, Dtype::F64)?;
    }
    for (name, m, v) in joint.iter().chain(disc.iter()) {
        write_name(&mut w, &format!("adam/m/{name}"))?;
        Tensor::new(vec![m.len()], (*m).clone())?.write_cgtn(&mut w, Dtype::F64)?;
        write_name(&mut w, &format!("adam/v/{name}"))?;
        Tensor::new(vec![v.len()], (*v).clone())?.write_cgtn(&mut w, Dtype::F64)?;
    }

    w.write_all(&state.step.to_le_bytes())?;
    w.write_all(&state.epoch.to_le_bytes())?;
    w.write_all(&state.adam_joint.step.to_le_bytes())?;
    w.write_all(&state.adam_d.step.to_le_bytes())?;
    w.write_all(&state.rng_shuffle.state().to_le_bytes())?;
    w.flush()?;
    Ok(())
}

/// Restore parameters and training state. Optimizer hyperparameters are
/// not stored in the file; they come from `tcfg`.
pub fn load_checkpoint(path: &Path, tcfg: &TrainConfig) -> Result<(ParameterStore, TrainState)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut store = ParameterStore::new();
    let mut state = TrainState::new(tcfg);
    for _ in 0..count {
        let name = read_name(&mut r)?;
        let t = Tensor::read_cgtn(&mut r)?;
        if let Some(pname) = name.strip_prefix("adam/m/") {
            stash_moment(&mut state, pname, t.data().to_vec(), true)?;
        } else if let Some(pname) = name.strip_prefix("adam/v/") {
            stash_moment(&mut state, pname, t.data().to_vec(), false)?;
        } else if name.ends_with("/bn_rm") || name.ends_with("/bn_rv") {
            store.insert_buffer(&name, t)?;
        } else {
            store.insert(&name, t)?;
        }
    }

    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    state.step = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    state.epoch = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    state.adam_joint.step = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    state.adam_d.step = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    state.rng_shuffle = Rng::from_state(u64::from_le_bytes(u64buf));
    Ok((store, state))
}

/// Half-restored moment pairs accumulate here until both halves arrive.
fn stash_moment(state: &mut TrainState, pname: &str, vals: Vec<f64>, is_m: bool) -> Result<()> {
    let adam = if pname.starts_with(SLICE_DISCRIMINATOR) {
        &mut state.adam_d
    } else {
        &mut state.adam_joint
    };
    adam.stash_half_moment(pname, vals, is_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, NetworkConfig};
    use crate::rng::Rng as R;
    use crate::train::{train_step, Batch};

    fn tiny_cfg() -> NetworkConfig {
        let mut cfg = NetworkConfig::desk();
        cfg.width_num = 1;
        cfg.width_den = 32;
        cfg.num_classes = 4;
        cfg.num_fonts = 2;
        cfg.font_embed_dim = 8;
        cfg
    }

    fn tiny_batch(cfg: &NetworkConfig, seed: u64) -> Batch {
        let mut rng = R::new(seed);
        let bsz = 2;
        let n = bsz * 3 * 64 * 64;
        let mk = |rng: &mut R| {
            Tensor::new(vec![bsz, 3, 64, 64], (0..n).map(|_| rng.uniform()).collect()).unwrap()
        };
        Batch {
            x: mk(&mut rng),
            labels: vec![1, 3],
            targets: (0..cfg.num_fonts).map(|_| mk(&mut rng)).collect(),
            slot_fonts: vec![vec![1, 2], vec![2, 1]],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = tiny_cfg();
        let tcfg = TrainConfig { batch: 2, ..TrainConfig::default() };
        let mut store = init_params(&cfg, 42).unwrap();
        let mut state = TrainState::new(&tcfg);
        // a couple of steps so moments, running stats and counters are hot
        for s in 0..2 {
            train_step(&mut store, &mut state, &cfg, &tcfg, &tiny_batch(&cfg, 50 + s)).unwrap();
        }
        let dir = std::env::temp_dir().join("cgrn_ckpt_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.cgrn");
        save_checkpoint(&path, &store, &state).unwrap();
        let (store2, state2) = load_checkpoint(&path, &tcfg).unwrap();

        let names: Vec<_> = store.names().collect();
        let names2: Vec<_> = store2.names().collect();
        assert_eq!(names, names2, "record order must survive");
        for (name, t) in store.iter() {
            let t2 = store2.get(name).unwrap();
            assert_eq!(t.data(), t2.data(), "{name}");
            assert_eq!(t.requires_grad(), t2.requires_grad(), "{name} trainability");
        }
        assert_eq!(state.step, state2.step);
        assert_eq!(state.epoch, state2.epoch);
        assert_eq!(state.rng_shuffle.state(), state2.rng_shuffle.state());

        // resuming must produce a bit-identical next step
        let batch = tiny_batch(&cfg, 99);
        let (mut sa, mut ta) = (store, state);
        let (mut sb, mut tb) = (store2, state2);
        let ra = train_step(&mut sa, &mut ta, &cfg, &tcfg, &batch).unwrap();
        let rb = train_step(&mut sb, &mut tb, &cfg, &tcfg, &batch).unwrap();
        assert_eq!(ra.composite.to_bits(), rb.composite.to_bits());
        for (name, t) in sa.iter() {
            assert_eq!(t.data(), sb.get(name).unwrap().data(), "{name} diverged after resume");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = std::env::temp_dir().join("cgrn_ckpt_badmagic");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.cgrn");
        std::fs::write(&path, b"PK\x03\x04junk").unwrap();
        let err = match load_checkpoint(&path, &TrainConfig::default()) {
            Err(e) => e,
            Ok(_) => panic!("foreign file accepted"),
        };
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
