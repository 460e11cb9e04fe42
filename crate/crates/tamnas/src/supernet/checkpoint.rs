//! Supernet checkpoint codec.
//!
//! Layout: magic "TAMN", format version, preset digest, sampler state,
//! named tensor blobs (learned then running statistics; name, dtype, shape,
//! little-endian f32 data) and a trailing CRC-32 of everything before it.
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use super::sampler::{Phase, SamplerState};
use crate::blocks::SubnetParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TAMN";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub preset_digest: [u8; 32],
    pub sampler: SamplerState,
    pub params: SubnetParams,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.display().to_string() });
    }
    decode(&fs::read(path)?)
}

fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.preset_digest);
    let s = &ckpt.sampler;
    out.push(match s.phase {
        Phase::BlockOnly => 0,
        Phase::Joint => 1,
    });
    out.extend_from_slice(&(s.epoch as u64).to_le_bytes());
    out.push(s.active_channels.len() as u8);
    for &c in &s.active_channels {
        out.push(c as u8);
    }
    out.extend_from_slice(&s.window.0.to_le_bytes());
    out.extend_from_slice(&s.window.1.to_le_bytes());
    out.extend_from_slice(&s.seed.to_le_bytes());
    out.extend_from_slice(&s.draws.to_le_bytes());
    for map in [&ckpt.params.learned, &ckpt.params.stats] {
        out.extend_from_slice(&(map.len() as u32).to_le_bytes());
        for (name, tensor) in map {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(0); // dtype f32
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint {
                msg: format!("truncated at byte {} (wanted {n} more)", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::Checkpoint { msg: "file too small".into() });
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let want = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let got = crc32fast::hash(body);
    if want != got {
        return Err(Error::Checkpoint { msg: format!("crc mismatch: {got:08x} != {want:08x}") });
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint { msg: "bad magic".into() });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint { msg: format!("unsupported version {version}") });
    }
    let mut digest = [0u8; 32];
    digest.copy_from_slice(r.take(32)?);
    let phase = match r.u8()? {
        0 => Phase::BlockOnly,
        1 => Phase::Joint,
        other => return Err(Error::Checkpoint { msg: format!("bad phase {other}") }),
    };
    let epoch = r.u64()? as usize;
    let n_channels = r.u8()? as usize;
    let mut active_channels = Vec::with_capacity(n_channels);
    for _ in 0..n_channels {
        active_channels.push(r.u8()? as usize);
    }
    let window = (r.u64()?, r.u64()?);
    let seed = r.u64()?;
    let draws = r.u64()?;
    let sampler = SamplerState { phase, epoch, active_channels, window, seed, draws };

    let mut params = SubnetParams::default();
    for learned in [true, false] {
        let count = r.u32()? as usize;
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint { msg: "non-utf8 tensor name".into() })?;
            let dtype = r.u8()?;
            if dtype != 0 {
                return Err(Error::Checkpoint { msg: format!("unsupported dtype {dtype}") });
            }
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint {
                msg: format!("tensor {name}: {e}"),
            })?;
            if learned {
                params.learned.insert(name, tensor);
            } else {
                params.stats.insert(name, tensor);
            }
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint {
            msg: format!("{} trailing bytes", body.len() - r.pos),
        });
    }
    Ok(Checkpoint { preset_digest: digest, sampler, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::space::{ParamTable, Preset};
    use crate::supernet::WeightStore;

    fn sample_checkpoint() -> Checkpoint {
        let preset = Preset::mini();
        let table = ParamTable::build(&preset).unwrap();
        let store = WeightStore::init(&preset, &mut rng_from_seed(11)).unwrap();
        let sampler = SamplerState::new_block_phase(&preset, &table, 42);
        Checkpoint { preset_digest: preset.digest(), sampler, params: store.params }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let bytes = encode(&ckpt);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.preset_digest, ckpt.preset_digest);
        assert_eq!(back.sampler, ckpt.sampler);
        assert_eq!(back.params.learned, ckpt.params.learned);
        assert_eq!(back.params.stats, ckpt.params.stats);
        // encoding again yields identical bytes
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let ckpt = sample_checkpoint();
        let mut bytes = encode(&ckpt);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint { .. })));
        // truncation too
        let ok = encode(&ckpt);
        assert!(decode(&ok[..ok.len() - 9]).is_err());
    }

    #[test]
    fn missing_file_is_a_dependency_error() {
        let err = load_checkpoint(Path::new("/nonexistent/supernet.tamn")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
    }
}
