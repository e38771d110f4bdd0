//! Binary checkpoint container.
//!
//! Layout: magic `IDFK`, a little-endian `u32` format version, a `u32`
//! section count, then length-prefixed named sections. The `config` section
//! is a key-value text block; tensor sections (`params`, `ema`, `adam_m`,
//! `adam_v`) store each tensor as path, shape, and raw little-endian `f64`
//! payload, so float round trips are bit-identical. The loader validates
//! every length and rejects unknown versions; nothing partial is ever
//! returned.

use std::collections::BTreeMap;
use std::path::Path;

use super::DataError;
use crate::denoiser::{ConditioningMode, DenoiserConfig};
use crate::numerics::{ParamSet, Tensor};
use crate::optim::{AdamState, EmaState};
use crate::schedule::{ScheduleConfig, SigmaKind};
use crate::textnum;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"IDFK";

/// Full training state: live parameters, EMA shadow, optimizer moments, and
/// every scalar needed to resume or reproduce the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub denoiser_config: DenoiserConfig,
    pub params: ParamSet,
    pub ema: EmaState,
    pub adam: AdamState,
    pub schedule: ScheduleConfig,
    pub cpd_p: f64,
    pub cpd_rescale: bool,
    pub global_step: u64,
    pub init_seed: u64,
    pub train_seed: u64,
}

fn config_text(ck: &ModelCheckpoint) -> String {
    let d = &ck.denoiser_config;
    let s = &ck.schedule;
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    line("denoiser.data_dim", d.data_dim.to_string());
    line("denoiser.hidden_dim", d.hidden_dim.to_string());
    line("denoiser.depth", d.depth.to_string());
    line("denoiser.time_embed_dim", d.time_embed_dim.to_string());
    line("denoiser.context_dim", d.context_dim.to_string());
    line("denoiser.conditioning", d.conditioning.as_str().to_string());
    line("denoiser.attention_heads", d.attention_heads.to_string());
    line("schedule.t", s.t_steps.to_string());
    line("schedule.beta_start", textnum::fmt_f64(s.beta_start));
    line("schedule.beta_end", textnum::fmt_f64(s.beta_end));
    line("schedule.sigma", s.sigma.as_str().to_string());
    line("adam.beta1", textnum::fmt_f64(ck.adam.beta1));
    line("adam.beta2", textnum::fmt_f64(ck.adam.beta2));
    line("adam.eps", textnum::fmt_f64(ck.adam.eps));
    line("adam.step", ck.adam.step.to_string());
    line("ema.power", textnum::fmt_f64(ck.ema.power));
    line("ema.step", ck.ema.step.to_string());
    line("cpd_p", textnum::fmt_f64(ck.cpd_p));
    line("cpd_rescale", ck.cpd_rescale.to_string());
    line("global_step", ck.global_step.to_string());
    line("seed.init", ck.init_seed.to_string());
    line("seed.train", ck.train_seed.to_string());
    out
}

fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, DataError> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Corrupt(format!("config line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn tensor_section(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (path, tensor) in params.iter() {
        out.extend_from_slice(&(path.len() as u32).to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated { context });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    fn f64(&mut self, context: &'static str) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, context: &'static str) -> Result<String, DataError> {
        String::from_utf8(self.take(len, context)?.to_vec())
            .map_err(|_| DataError::Corrupt(format!("non-utf8 {context}")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn parse_tensor_section(bytes: &[u8]) -> Result<ParamSet, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u32("tensor count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let path_len = r.u32("tensor path length")? as usize;
        let path = r.string(path_len, "tensor path")?;
        // lengths are untrusted: bound every allocation by the bytes that
        // are actually present
        let rank = r.u32("tensor rank")? as usize;
        if rank * 8 > r.remaining() {
            return Err(DataError::Truncated {
                context: "tensor shape",
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor shape")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| DataError::Corrupt(format!("tensor {path:?} shape overflows")))?;
        if len.checked_mul(8).is_none_or(|bytes| bytes > r.remaining()) {
            return Err(DataError::Truncated {
                context: "tensor data",
            });
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64("tensor data")?);
        }
        params.insert(path, Tensor::new(shape, data)?)?;
    }
    if !r.done() {
        return Err(DataError::Corrupt("trailing bytes in tensor section".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(ck: &ModelCheckpoint, path: &Path) -> Result<(), DataError> {
    let sections: [(&str, Vec<u8>); 5] = [
        ("config", config_text(ck).into_bytes()),
        ("params", tensor_section(&ck.params)),
        ("ema", tensor_section(&ck.ema.shadow)),
        ("adam_m", tensor_section(&ck.adam.m)),
        ("adam_v", tensor_section(&ck.adam.v)),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ck.format_version.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, payload) in &sections {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(payload);
    }
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = r.u32("format version")?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(DataError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let section_count = r.u32("section count")?;
    let mut sections: BTreeMap<String, &[u8]> = BTreeMap::new();
    for _ in 0..section_count {
        let name_len = r.u32("section name length")? as usize;
        let name = r.string(name_len, "section name")?;
        let payload_len = r.u64("section length")? as usize;
        let payload = r.take(payload_len, "section payload")?;
        sections.insert(name, payload);
    }
    if !r.done() {
        return Err(DataError::Corrupt("trailing bytes after sections".into()));
    }

    let section = |name: &str| {
        sections
            .get(name)
            .copied()
            .ok_or_else(|| DataError::Corrupt(format!("missing section {name:?}")))
    };
    let config_bytes = section("config")?;
    let config_text = String::from_utf8(config_bytes.to_vec())
        .map_err(|_| DataError::Corrupt("non-utf8 config".into()))?;
    let kv = parse_config_text(&config_text)?;
    let get = |key: &str| {
        kv.get(key)
            .ok_or_else(|| DataError::Corrupt(format!("missing config key {key:?}")))
    };
    let get_usize =
        |key: &str| textnum::parse_usize(get(key)?).map_err(DataError::Corrupt);
    let get_u64 = |key: &str| textnum::parse_u64(get(key)?).map_err(DataError::Corrupt);
    let get_f64 = |key: &str| textnum::parse_f64(get(key)?).map_err(DataError::Corrupt);

    let denoiser_config = DenoiserConfig {
        data_dim: get_usize("denoiser.data_dim")?,
        hidden_dim: get_usize("denoiser.hidden_dim")?,
        depth: get_usize("denoiser.depth")?,
        time_embed_dim: get_usize("denoiser.time_embed_dim")?,
        context_dim: get_usize("denoiser.context_dim")?,
        conditioning: ConditioningMode::parse(get("denoiser.conditioning")?)
            .ok_or_else(|| DataError::Corrupt("bad conditioning mode".into()))?,
        attention_heads: get_usize("denoiser.attention_heads")?,
    };
    denoiser_config.validate()?;
    let schedule = ScheduleConfig {
        t_steps: get_usize("schedule.t")?,
        beta_start: get_f64("schedule.beta_start")?,
        beta_end: get_f64("schedule.beta_end")?,
        sigma: SigmaKind::parse(get("schedule.sigma")?)
            .ok_or_else(|| DataError::Corrupt("bad sigma kind".into()))?,
    };

    let params = parse_tensor_section(section("params")?)?;
    let ema_shadow = parse_tensor_section(section("ema")?)?;
    let adam_m = parse_tensor_section(section("adam_m")?)?;
    let adam_v = parse_tensor_section(section("adam_v")?)?;

    let cpd_rescale = match get("cpd_rescale")?.as_str() {
        "true" => true,
        "false" => false,
        other => return Err(DataError::Corrupt(format!("bad cpd_rescale {other:?}"))),
    };

    Ok(ModelCheckpoint {
        format_version: version,
        denoiser_config,
        params,
        ema: EmaState {
            shadow: ema_shadow,
            power: get_f64("ema.power")?,
            step: get_u64("ema.step")?,
        },
        adam: AdamState {
            step: get_u64("adam.step")?,
            beta1: get_f64("adam.beta1")?,
            beta2: get_f64("adam.beta2")?,
            eps: get_f64("adam.eps")?,
            m: adam_m,
            v: adam_v,
        },
        schedule,
        cpd_p: get_f64("cpd_p")?,
        cpd_rescale,
        global_step: get_u64("global_step")?,
        init_seed: get_u64("seed.init")?,
        train_seed: get_u64("seed.train")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_params;

    fn sample_checkpoint() -> ModelCheckpoint {
        let cfg = DenoiserConfig {
            data_dim: 4,
            hidden_dim: 8,
            depth: 1,
            time_embed_dim: 4,
            context_dim: 3,
            conditioning: ConditioningMode::AdaGn,
            attention_heads: 2,
        };
        let params = init_params(&cfg, 9).unwrap();
        let ema = EmaState::new(&params, 0.75);
        let adam = AdamState::new(&params);
        ModelCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            denoiser_config: cfg,
            params,
            ema,
            adam,
            schedule: ScheduleConfig::default(),
            cpd_p: 0.25,
            cpd_rescale: true,
            global_step: 123,
            init_seed: 9,
            train_seed: 10,
        }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let ck = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.idfk");
        save_checkpoint(&ck, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ck);

        // identical bytes when saved again
        let bytes = std::fs::read(&path).unwrap();
        save_checkpoint(&loaded, &path).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncation_yields_error_not_partial_state() {
        let ck = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.idfk");
        save_checkpoint(&ck, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, DataError::Truncated { .. }), "{err:?}");
    }

    #[test]
    fn version_bump_is_rejected() {
        let ck = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.idfk");
        save_checkpoint(&ck, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let bumped = (CHECKPOINT_FORMAT_VERSION + 1).to_le_bytes();
        bytes[4..8].copy_from_slice(&bumped);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(
            err,
            DataError::UnsupportedVersion { found, .. } if found == CHECKPOINT_FORMAT_VERSION + 1
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_checkpoint");
        std::fs::write(&path, b"HELLO WORLD").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DataError::BadMagic)
        ));
    }
}
