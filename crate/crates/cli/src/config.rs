//! The flat key-value run configuration.
//!
//! Every experiment knob lives in one schema: defaults first, then the
//! optional config file, then repeated `--set key=value` overrides, in that
//! order. Unknown keys are rejected, and the fully resolved configuration is
//! echoed next to each command's primary output so runs are self-describing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use idkit_core::context::CpdSettings;
use idkit_core::denoiser::{ConditioningMode, DenoiserConfig};
use idkit_core::schedule::{ScheduleConfig, SigmaKind};
use idkit_core::textnum;
use idkit_core::train::TrainSettings;

use crate::commands::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Usize,
    U64,
    F64,
    Bool,
    Choice(&'static [&'static str]),
    Text,
}

struct KeySpec {
    key: &'static str,
    kind: Kind,
    default: &'static str,
    help: &'static str,
}

const SCHEMA: &[KeySpec] = &[
    KeySpec { key: "schedule.t", kind: Kind::Usize, default: "1000", help: "diffusion steps T" },
    KeySpec { key: "schedule.beta_start", kind: Kind::F64, default: "0.0001", help: "variance at t=1" },
    KeySpec { key: "schedule.beta_end", kind: Kind::F64, default: "0.02", help: "variance at t=T" },
    KeySpec { key: "schedule.sigma", kind: Kind::Choice(&["beta", "tilde_beta"]), default: "beta", help: "sampler noise scale" },
    KeySpec { key: "model.hidden_dim", kind: Kind::Usize, default: "64", help: "hidden width" },
    KeySpec { key: "model.depth", kind: Kind::Usize, default: "2", help: "hidden blocks" },
    KeySpec { key: "model.time_embed_dim", kind: Kind::Usize, default: "32", help: "sinusoidal embedding width (even)" },
    KeySpec { key: "model.heads", kind: Kind::Usize, default: "4", help: "cross-attention heads" },
    KeySpec { key: "model.conditioning", kind: Kind::Choice(&["xattn", "adagn", "unconditional"]), default: "xattn", help: "identity conditioning mechanism" },
    KeySpec { key: "train.cpd_p", kind: Kind::F64, default: "0", help: "contextual partial dropout probability" },
    KeySpec { key: "train.cpd_rescale", kind: Kind::Bool, default: "true", help: "rescale kept components by 1/(1-p)" },
    KeySpec { key: "train.gamma_max", kind: Kind::F64, default: "0.0001", help: "initial/peak learning rate" },
    KeySpec { key: "train.gamma_min", kind: Kind::F64, default: "0", help: "cosine floor learning rate" },
    KeySpec { key: "train.first_phase_len", kind: Kind::U64, default: "500", help: "steps in the first cosine phase; later phases double" },
    KeySpec { key: "train.total_steps", kind: Kind::U64, default: "7500", help: "total optimization steps (7500 = four full phases of 500)" },
    KeySpec { key: "train.batch_size", kind: Kind::Usize, default: "32", help: "items per step" },
    KeySpec { key: "train.checkpoint_interval", kind: Kind::U64, default: "0", help: "also write the checkpoint every N steps (0 = only at the end)" },
    KeySpec { key: "ema.power", kind: Kind::F64, default: "0.75", help: "EMA decay ramp exponent" },
    KeySpec { key: "data.identities", kind: Kind::Usize, default: "50", help: "toy dataset identities K" },
    KeySpec { key: "data.per_identity", kind: Kind::Usize, default: "16", help: "samples per identity m" },
    KeySpec { key: "data.dim", kind: Kind::Usize, default: "16", help: "data dimension n" },
    KeySpec { key: "data.context_dim", kind: Kind::Usize, default: "16", help: "identity embedding dimension d (eval must match the training encoder)" },
    KeySpec { key: "data.intra_std", kind: Kind::F64, default: "0.1", help: "within-identity spread s" },
    KeySpec { key: "data.radius", kind: Kind::F64, default: "1", help: "centroid sphere radius R" },
    KeySpec { key: "seed.dataset", kind: Kind::U64, default: "11", help: "toy dataset generation seed" },
    KeySpec { key: "seed.encoder", kind: Kind::U64, default: "12", help: "frozen encoder projection seed" },
    KeySpec { key: "seed.init", kind: Kind::U64, default: "13", help: "parameter initialization seed" },
    KeySpec { key: "seed.train", kind: Kind::U64, default: "14", help: "training loop seed (batches, noise, dropout)" },
    KeySpec { key: "seed.sample", kind: Kind::U64, default: "15", help: "sampling seed (contexts and reverse chains)" },
    KeySpec { key: "seed.eval", kind: Kind::U64, default: "16", help: "evaluation seed (imposter pair sampling)" },
    KeySpec { key: "sample.mode", kind: Kind::Choice(&["uniform", "authentic", "two-stage"]), default: "uniform", help: "identity context source" },
    KeySpec { key: "sample.ids", kind: Kind::Usize, default: "50", help: "identities to generate" },
    KeySpec { key: "sample.per_id", kind: Kind::Usize, default: "16", help: "samples per identity" },
    KeySpec { key: "sample.use_ema", kind: Kind::Bool, default: "true", help: "sample from the EMA shadow weights" },
    KeySpec { key: "paths.dataset", kind: Kind::Text, default: "dataset.csv", help: "toy dataset CSV (generated here when missing)" },
    KeySpec { key: "paths.checkpoint", kind: Kind::Text, default: "model.idfk", help: "checkpoint file" },
    KeySpec { key: "paths.log", kind: Kind::Text, default: "train_log.csv", help: "training log CSV" },
    KeySpec { key: "paths.samples", kind: Kind::Text, default: "samples.csv", help: "generated samples CSV" },
    KeySpec { key: "paths.contexts", kind: Kind::Text, default: "contexts.csv", help: "generated identity contexts CSV" },
    KeySpec { key: "paths.report", kind: Kind::Text, default: "report.json", help: "evaluation report" },
    KeySpec { key: "paths.histogram", kind: Kind::Text, default: "histogram.csv", help: "genuine/imposter score histogram CSV" },
    KeySpec { key: "paths.scores", kind: Kind::Text, default: "", help: "optional raw score-set CSV (empty = skip)" },
    KeySpec { key: "paths.uncond_checkpoint", kind: Kind::Text, default: "", help: "unconditional companion checkpoint (two-stage mode)" },
];

/// One line per schema key: `key = default  # help`.
pub fn schema_help() -> String {
    let mut out = String::from("Configuration keys (set via config file lines `key = value` or --set key=value):\n");
    for spec in SCHEMA {
        let default = if spec.default.is_empty() { "\"\"" } else { spec.default };
        let _ = writeln!(out, "  {} = {}\n      {}", spec.key, default, spec.help);
    }
    out
}

/// A validated, fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    /// Defaults, then the optional file, then `--set` pairs.
    pub fn resolve(
        file: Option<&Path>,
        sets: &[(String, String)],
    ) -> Result<RunConfig, CliError> {
        let mut values: BTreeMap<&'static str, String> = SCHEMA
            .iter()
            .map(|s| (s.key, s.default.to_string()))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}:{}: expected `key = value`, got {line:?}",
                        path.display(),
                        idx + 1
                    ))
                })?;
                set_checked(&mut values, k.trim(), v.trim())?;
            }
        }
        for (k, v) in sets {
            set_checked(&mut values, k.trim(), v.trim())?;
        }
        let cfg = RunConfig { values };
        cfg.validate_cross_keys()?;
        Ok(cfg)
    }

    fn validate_cross_keys(&self) -> Result<(), CliError> {
        // fail fast on values the typed accessors would reject later
        let _ = self.schedule_config()?;
        let _ = self.denoiser_config()?;
        let _ = self.cpd()?;
        if !(0.0..=1.0).contains(&self.f64("train.cpd_p")?) {
            return Err(CliError::Usage("train.cpd_p must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn spec(key: &str) -> Option<&'static KeySpec> {
        SCHEMA.iter().find(|s| s.key == key)
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        textnum::parse_usize(&self.values[Self::spec(key).unwrap().key])
            .map_err(|e| CliError::Usage(format!("{key}: {e}")))
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        textnum::parse_u64(&self.values[Self::spec(key).unwrap().key])
            .map_err(|e| CliError::Usage(format!("{key}: {e}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        textnum::parse_f64(&self.values[Self::spec(key).unwrap().key])
            .map_err(|e| CliError::Usage(format!("{key}: {e}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.values[Self::spec(key).unwrap().key].as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(CliError::Usage(format!("{key}: expected true/false, got {other:?}"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = &self.values[Self::spec(key).unwrap().key];
        if raw.is_empty() {
            None
        } else {
            Some(PathBuf::from(raw))
        }
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)
            .ok_or_else(|| CliError::Usage(format!("{key} must be set")))
    }

    pub fn schedule_config(&self) -> Result<ScheduleConfig, CliError> {
        Ok(ScheduleConfig {
            t_steps: self.usize("schedule.t")?,
            beta_start: self.f64("schedule.beta_start")?,
            beta_end: self.f64("schedule.beta_end")?,
            sigma: SigmaKind::parse(self.get("schedule.sigma").unwrap())
                .ok_or_else(|| CliError::Usage("bad schedule.sigma".into()))?,
        })
    }

    pub fn denoiser_config(&self) -> Result<DenoiserConfig, CliError> {
        let cfg = DenoiserConfig {
            data_dim: self.usize("data.dim")?,
            hidden_dim: self.usize("model.hidden_dim")?,
            depth: self.usize("model.depth")?,
            time_embed_dim: self.usize("model.time_embed_dim")?,
            context_dim: self.usize("data.context_dim")?,
            conditioning: ConditioningMode::parse(self.get("model.conditioning").unwrap())
                .ok_or_else(|| CliError::Usage("bad model.conditioning".into()))?,
            attention_heads: self.usize("model.heads")?,
        };
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("model config: {e}")))?;
        Ok(cfg)
    }

    pub fn cpd(&self) -> Result<CpdSettings, CliError> {
        let mut cpd = CpdSettings::new(self.f64("train.cpd_p")?)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if !self.bool("train.cpd_rescale")? {
            cpd = cpd.without_rescale();
        }
        Ok(cpd)
    }

    pub fn train_settings(&self) -> Result<TrainSettings, CliError> {
        Ok(TrainSettings {
            schedule: self.schedule_config()?,
            model: self.denoiser_config()?,
            cpd: self.cpd()?,
            gamma_max: self.f64("train.gamma_max")?,
            gamma_min: self.f64("train.gamma_min")?,
            first_phase_len: self.u64("train.first_phase_len")?,
            total_steps: self.u64("train.total_steps")?,
            batch_size: self.usize("train.batch_size")?,
            ema_power: self.f64("ema.power")?,
            init_seed: self.u64("seed.init")?,
            train_seed: self.u64("seed.train")?,
        })
    }

    /// Resolved configuration as a config-file-compatible text block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Write the resolved-config echo next to an output file.
    pub fn write_echo(&self, primary_output: &Path) -> Result<PathBuf, CliError> {
        let mut name = primary_output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".into());
        name.push_str(".cfg");
        let echo = primary_output.with_file_name(name);
        std::fs::write(&echo, self.to_text()).map_err(|e| {
            CliError::Data(format!("cannot write {}: {e}", echo.display()))
        })?;
        Ok(echo)
    }
}

fn set_checked(
    values: &mut BTreeMap<&'static str, String>,
    key: &str,
    value: &str,
) -> Result<(), CliError> {
    let Some(spec) = RunConfig::spec(key) else {
        return Err(CliError::Usage(format!(
            "unknown configuration key {key:?} (see --help for the schema)"
        )));
    };
    match spec.kind {
        Kind::Usize => {
            textnum::parse_usize(value).map_err(|e| CliError::Usage(format!("{key}: {e}")))?;
        }
        Kind::U64 => {
            textnum::parse_u64(value).map_err(|e| CliError::Usage(format!("{key}: {e}")))?;
        }
        Kind::F64 => {
            textnum::parse_f64(value).map_err(|e| CliError::Usage(format!("{key}: {e}")))?;
        }
        Kind::Bool => {
            if value != "true" && value != "false" {
                return Err(CliError::Usage(format!(
                    "{key}: expected true/false, got {value:?}"
                )));
            }
        }
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return Err(CliError::Usage(format!(
                    "{key}: expected one of {options:?}, got {value:?}"
                )));
            }
        }
        Kind::Text => {}
    }
    values.insert(spec.key, value.to_string());
    Ok(())
}

/// Every schema key, for help/round-trip tests.
pub fn schema_keys() -> Vec<&'static str> {
    SCHEMA.iter().map(|s| s.key).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_echo_reparses() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg.usize("schedule.t").unwrap(), 1000);
        assert_eq!(cfg.f64("train.gamma_max").unwrap(), 1e-4);

        // echo text is itself a valid config file
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.cfg");
        std::fs::write(&path, cfg.to_text()).unwrap();
        let again = RunConfig::resolve(Some(&path), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::resolve(None, &[("bogus.key".into(), "1".into())]).unwrap_err();
        assert!(matches!(err, CliError::Usage(ref m) if m.contains("bogus.key")));
    }

    #[test]
    fn file_then_sets_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cfg");
        std::fs::write(&path, "# comment\ntrain.cpd_p = 0.25\nsample.ids = 10\n").unwrap();
        let cfg = RunConfig::resolve(
            Some(&path),
            &[("sample.ids".into(), "20".into())],
        )
        .unwrap();
        assert_eq!(cfg.f64("train.cpd_p").unwrap(), 0.25);
        assert_eq!(cfg.usize("sample.ids").unwrap(), 20);
    }

    #[test]
    fn bad_values_diagnosed() {
        assert!(RunConfig::resolve(None, &[("schedule.t".into(), "abc".into())]).is_err());
        assert!(RunConfig::resolve(None, &[("sample.mode".into(), "weird".into())]).is_err());
        assert!(RunConfig::resolve(None, &[("train.cpd_p".into(), "1.5".into())]).is_err());
        assert!(RunConfig::resolve(None, &[("model.time_embed_dim".into(), "7".into())]).is_err());
    }

    #[test]
    fn schema_help_lists_every_key() {
        let help = schema_help();
        for key in schema_keys() {
            assert!(help.contains(key), "{key} missing from schema help");
        }
    }
}
