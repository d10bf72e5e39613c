//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "COTNETCK"
//! version  u32      currently 1
//! dtype    u8       0 = f32, 1 = f64 (element type of every payload)
//! epoch    u32      epochs completed when the file was written
//! spec     u32 len + UTF-8 model description (specfile format)
//! model    entry table: parameters and buffers in visit order
//! opt      u8 flag; if 1: steps u64, momentum f64, weight_decay f64,
//!          entry table of per-parameter velocities
//! ema      u8 flag; if 1: decay f64, entry table of shadow weights
//! rng      32-byte seed, word_pos u128, stream u64
//! ```
//!
//! An entry table is a u32 count followed by entries of the form
//! `name_len u32, name, rank u8, extents u64 x rank, dtype u8, payload`.
//! Serialization is pure and ordered, so identical state produces
//! identical bytes, and a load/save round trip is byte-exact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::{Dtype, Element};
use crate::error::{Error, Result};
use crate::layers::Slot;
use crate::models::specfile::{export_spec, parse_spec};
use crate::models::{build_model, ModelSpec, Network};
use crate::train::{Ema, Sgd};

const MAGIC: &[u8; 8] = b"COTNETCK";
const VERSION: u32 = 1;

fn dtype_tag(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    fn entry<E: Element>(&mut self, name: &str, shape: &[usize], data: &[E]) {
        self.str(name);
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u64(d as u64);
        }
        self.u8(dtype_tag(E::DTYPE));
        for &v in data {
            v.write_le(&mut self.buf);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }

    fn entry<E: Element>(&mut self) -> Result<(String, Vec<usize>, Vec<E>)> {
        let name = self.str()?;
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let tag = self.u8()?;
        if tag != dtype_tag(E::DTYPE) {
            return Err(Error::Checkpoint(format!(
                "entry '{name}' holds dtype tag {tag}, expected {} ({})",
                dtype_tag(E::DTYPE),
                E::DTYPE
            )));
        }
        let len: usize = shape.iter().product();
        let size = E::DTYPE.size_bytes();
        let raw = self.take(len * size)?;
        let data = raw.chunks_exact(size).map(E::read_le).collect();
        Ok((name, shape, data))
    }
}

fn rng_state(rng: &ChaCha8Rng) -> ([u8; 32], u128, u64) {
    (rng.get_seed(), rng.get_word_pos(), rng.get_stream())
}

/// Serialize model, optimizer, EMA and RNG state to bytes.
pub fn checkpoint_bytes<E: Element>(
    net: &Network<E>,
    optimizer: Option<&Sgd<E>>,
    ema: Option<&Ema<E>>,
    rng: &ChaCha8Rng,
    epoch: u32,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(dtype_tag(E::DTYPE));
    w.u32(epoch);
    w.str(&export_spec(&net.spec));

    let mut slots: Vec<(String, Vec<usize>, Vec<E>)> = Vec::new();
    net.visit(&mut |slot| match slot {
        Slot::Param { name, tensor } => {
            slots.push((name, tensor.shape().to_vec(), tensor.to_vec()));
        }
        Slot::Buffer { name, data } => {
            let v = data.borrow().clone();
            slots.push((name, vec![v.len()], v));
        }
    });
    w.u32(slots.len() as u32);
    for (name, shape, data) in &slots {
        w.entry(name, shape, data);
    }

    let params = net.parameters();
    match optimizer {
        Some(opt) => {
            w.u8(1);
            w.u64(opt.steps);
            w.f64(opt.momentum);
            w.f64(opt.weight_decay);
            w.u32(params.len() as u32);
            for ((name, _), v) in params.iter().zip(&opt.velocities) {
                w.entry(name, &[v.len()], v);
            }
        }
        None => w.u8(0),
    }

    match ema {
        Some(e) => {
            w.u8(1);
            w.f64(e.decay);
            w.u32(params.len() as u32);
            for ((name, _), s) in params.iter().zip(&e.shadow) {
                w.entry(name, &[s.len()], s);
            }
        }
        None => w.u8(0),
    }

    let (seed, word_pos, stream) = rng_state(rng);
    w.bytes(&seed);
    w.u128(word_pos);
    w.u64(stream);
    w.buf
}

pub fn save_checkpoint<E: Element>(
    path: &Path,
    net: &Network<E>,
    optimizer: Option<&Sgd<E>>,
    ema: Option<&Ema<E>>,
    rng: &ChaCha8Rng,
    epoch: u32,
) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(net, optimizer, ema, rng, epoch))
        .map_err(|e| Error::io(path, e))
}

/// Everything a checkpoint restores.
pub struct LoadedCheckpoint<E: Element> {
    pub spec: ModelSpec,
    pub network: Network<E>,
    pub optimizer: Option<Sgd<E>>,
    pub ema: Option<Ema<E>>,
    pub rng: ChaCha8Rng,
    pub epoch: u32,
}

/// Aligned per-parameter vectors (velocities, shadows) from an entry
/// table that must match the network's parameter list exactly.
fn read_aligned<E: Element>(
    r: &mut Reader,
    params: &[(String, crate::tensor::Tensor<E>)],
    what: &str,
) -> Result<Vec<Vec<E>>> {
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "{what} table has {count} entries, model has {} parameters",
            params.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for (name, tensor) in params {
        let (entry_name, _, data) = r.entry::<E>()?;
        if &entry_name != name {
            return Err(Error::Checkpoint(format!(
                "{what} entry '{entry_name}' does not match parameter '{name}'"
            )));
        }
        if data.len() != tensor.len() {
            return Err(Error::Checkpoint(format!(
                "{what} entry '{entry_name}' holds {} values, parameter has {}",
                data.len(),
                tensor.len()
            )));
        }
        out.push(data);
    }
    Ok(out)
}

pub fn load_checkpoint_bytes<E: Element>(bytes: &[u8]) -> Result<LoadedCheckpoint<E>> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let tag = r.u8()?;
    if tag != dtype_tag(E::DTYPE) {
        return Err(Error::Checkpoint(format!(
            "file stores dtype tag {tag}, loader expects {}",
            E::DTYPE
        )));
    }
    let epoch = r.u32()?;
    let spec = parse_spec(&r.str()?)?;

    // Seed is irrelevant: every slot is overwritten below.
    let network = build_model::<E>(&spec, 0)?;
    let count = r.u32()? as usize;
    let mut entries = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, shape, data) = r.entry::<E>()?;
        if entries.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry '{name}'")));
        }
    }
    let mut restored = 0usize;
    let mut failure: Option<Error> = None;
    network.visit(&mut |slot| {
        if failure.is_some() {
            return;
        }
        let name = slot.name().to_string();
        let Some((shape, data)) = entries.get(&name) else {
            failure = Some(Error::Checkpoint(format!("missing entry '{name}'")));
            return;
        };
        match slot {
            Slot::Param { tensor, .. } => {
                if shape != tensor.shape() {
                    failure = Some(Error::Checkpoint(format!(
                        "entry '{name}' has shape {shape:?}, model wants {:?}",
                        tensor.shape()
                    )));
                    return;
                }
                tensor.data_mut().copy_from_slice(data);
            }
            Slot::Buffer { data: buf, .. } => {
                let mut b = buf.borrow_mut();
                if data.len() != b.len() {
                    failure = Some(Error::Checkpoint(format!(
                        "buffer '{name}' has {} values, model wants {}",
                        data.len(),
                        b.len()
                    )));
                    return;
                }
                b.copy_from_slice(data);
            }
        }
        restored += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if restored != count {
        return Err(Error::Checkpoint(format!(
            "file has {count} entries, model consumed {restored}"
        )));
    }

    let params = network.parameters();
    let optimizer = if r.u8()? == 1 {
        let steps = r.u64()?;
        let momentum = r.f64()?;
        let weight_decay = r.f64()?;
        let velocities = read_aligned(&mut r, &params, "velocity")?;
        let mut opt = Sgd::new(&params, momentum, weight_decay);
        opt.velocities = velocities;
        opt.steps = steps;
        Some(opt)
    } else {
        None
    };

    let ema = if r.u8()? == 1 {
        let decay = r.f64()?;
        let shadow = read_aligned(&mut r, &params, "ema")?;
        Some(Ema { decay, shadow })
    } else {
        None
    };

    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let word_pos = r.u128()?;
    let stream = r.u64()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after RNG state",
            bytes.len() - r.pos
        )));
    }

    Ok(LoadedCheckpoint { spec, network, optimizer, ema, rng, epoch })
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<LoadedCheckpoint<E>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn small_net() -> Network<f32> {
        let spec = crate::models::canonical("resnet_tiny").unwrap();
        build_model::<f32>(&spec, 5).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let net = small_net();
        let params = net.parameters();
        let mut opt = Sgd::new(&params, 0.9, 1e-4);
        opt.steps = 17;
        let ema = Ema::new(&params, 0.999);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(9);
        rng.next_u64();
        let bytes = checkpoint_bytes(&net, Some(&opt), Some(&ema), &rng, 4);

        let loaded = load_checkpoint_bytes::<f32>(&bytes).unwrap();
        assert_eq!(loaded.epoch, 4);
        assert_eq!(loaded.optimizer.as_ref().unwrap().steps, 17);
        let again = checkpoint_bytes(
            &loaded.network,
            loaded.optimizer.as_ref(),
            loaded.ema.as_ref(),
            &loaded.rng,
            loaded.epoch,
        );
        assert_eq!(bytes, again, "save/load/save changed bytes");
    }

    #[test]
    fn restored_rng_continues_the_sequence() {
        let net = small_net();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        rng.set_stream(2);
        for _ in 0..5 {
            rng.next_u64();
        }
        let bytes = checkpoint_bytes(&net, None, None, &rng, 0);
        let mut restored = load_checkpoint_bytes::<f32>(&bytes).unwrap().rng;
        assert_eq!(rng.next_u64(), restored.next_u64());
    }

    #[test]
    fn wrong_magic_version_and_dtype_are_rejected() {
        let net = small_net();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let good = checkpoint_bytes(&net, None, None, &rng, 0);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(load_checkpoint_bytes::<f32>(&bad), Err(Error::Checkpoint(_))));

        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(load_checkpoint_bytes::<f32>(&bad), Err(Error::Checkpoint(_))));

        assert!(matches!(load_checkpoint_bytes::<f64>(&good), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let net = small_net();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let good = checkpoint_bytes(&net, None, None, &rng, 0);
        let err = load_checkpoint_bytes::<f32>(&good[..good.len() - 3]);
        assert!(matches!(err, Err(Error::Checkpoint(_))));
        let mut padded = good;
        padded.push(0);
        assert!(matches!(load_checkpoint_bytes::<f32>(&padded), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn loaded_network_reproduces_logits_bit_for_bit() {
        use crate::layers::Mode;
        let net = small_net();
        let ds = crate::train::data::ToyDataset::new(crate::train::data::Split::Val, 4, 0);
        let (x, _) = ds.batch::<f32>(&[0, 1, 2, 3]).unwrap();
        let before = crate::no_grad(|| net.forward(&x, Mode::Eval)).unwrap().to_vec();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let bytes = checkpoint_bytes(&net, None, None, &rng, 0);
        let loaded = load_checkpoint_bytes::<f32>(&bytes).unwrap();
        let after = crate::no_grad(|| loaded.network.forward(&x, Mode::Eval)).unwrap().to_vec();
        assert_eq!(
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
