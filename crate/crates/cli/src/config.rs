//! Flat `key = value` run configuration with documented defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use s4sense::autodiff::AdamConfig;
use s4sense::gyre::{DatasetSpec, GyreParams, NoiseMode, NoiseSpec};
use s4sense::init::InitKind;
use s4sense::model::ModelConfig;
use s4sense::train::TrainConfig;
use s4sense::{Error, Result};

/// Marks a key whose default comes from the dataset preset.
const PRESET: &str = "<preset>";

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "desk", "dataset preset: desk (51x26 grid, T=2, 256/64/64) or full (201x101, T=4, 2048/512/512)"),
    ("seed", "0", "model initialization, shuffling and evaluation-noise seed"),
    ("data_seed", "0", "dataset generation seed"),
    ("out_dir", "out", "directory for reports, checkpoints and manifests"),
    ("data", "", "dataset file (default <out_dir>/data.s4ds)"),
    ("checkpoint", "", "checkpoint file (default <out_dir>/model.s4ck)"),
    ("grid_nx", PRESET, "vorticity grid points along x"),
    ("grid_ny", PRESET, "vorticity grid points along y"),
    ("horizon", PRESET, "trajectory duration"),
    ("dt_sample", "0.005", "sampling interval of sensor measurements"),
    ("substeps", "4", "RK4 substeps per sample"),
    ("t_eval", PRESET, "evaluated steps at the end of each sequence"),
    ("seq_len", PRESET, "padded power-of-two sequence length"),
    ("train_count", PRESET, "training samples"),
    ("val_count", PRESET, "validation samples"),
    ("test_count", PRESET, "test samples"),
    ("amplitude", "0.5", "gyre amplitude A"),
    ("omega", "6.283185307179586", "gyre angular frequency"),
    ("epsilon", "0.25", "gyre oscillation amplitude"),
    ("flip_vy", "false", "use vy = -dpsi/dx"),
    ("noise_mode", "clean", "corruption baked into generated data: clean, noisy or disturbed"),
    ("noise_sigma", "0.1", "noisy-mode standard deviation (standardized units)"),
    ("disturbance_magnitude", "5.0", "disturbed-mode offset (standardized units)"),
    ("disturbance_step", "last", "disturbed step index, or last"),
    ("model", "rs4d", "rs4d (Butterworth front layer) or s4d"),
    ("layers", "auto", "comma-separated layer inits (lin, inv, legs, bw); auto follows model"),
    ("hidden", "64", "features per recurrent layer"),
    ("state", "64", "state size per SSM"),
    ("channels", "1", "output channels per SSM"),
    ("decoder", "128,128", "decoder hidden widths, comma-separated (may be empty)"),
    ("dt_min", "0.001", "lower bound of the log-uniform step size"),
    ("dt_max", "0.1", "upper bound of the log-uniform step size"),
    ("bw_residual", "false", "residual connection around Butterworth layers"),
    ("bw_residues", "true", "start Butterworth layers from the filter residues"),
    ("s4dc", "false", "minimal-H2 constrained couplings"),
    ("epochs", "20", "training epochs"),
    ("batch_size", "16", "mini-batch size"),
    ("lr_dense", "0.001", "learning rate of dense weights"),
    ("lr_ssm", "0.0001", "learning rate of SSM parameters"),
    ("beta1", "0.9", "first-moment decay"),
    ("beta2", "0.999", "second-moment decay"),
    ("adam_eps", "1e-8", "optimizer epsilon"),
    ("train_noise", "clean", "on-the-fly training corruption: clean, noisy or disturbed"),
    ("eval_split", "test", "split used by eval: train, val or test"),
    ("kc_sizes", "8,32", "kernel-check state sizes for diagonal inits"),
    ("kc_lengths", "64,512", "kernel-check kernel lengths for diagonal inits"),
    ("kc_inits", "lin,inv,legs,bw", "kernel-check diagonal inits"),
    ("kc_dplr_sizes", "4,16", "kernel-check HiPPO state sizes for the generating-function path"),
    ("kc_dplr_lengths", "256", "kernel-check lengths for the generating-function path"),
    ("kc_tol_vandermonde", "1e-10", "tolerance of vandermonde vs naive"),
    ("kc_tol_genfun", "1e-6", "tolerance of genfun vs naive"),
    ("bode_lo", "0.01", "lowest bode frequency"),
    ("bode_hi", "10000", "highest bode frequency"),
    ("bode_per_decade", "20", "bode points per decade"),
];

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (file lines `key = value`, `#` comments; --set key=value overrides):\n");
    for (k, d, h) in KEYS {
        let d = if d.is_empty() { "\"\"" } else { d };
        let _ = writeln!(s, "  {k:<22} {h} [default: {d}]");
    }
    s.push_str("\nEnvironment: S4_THREADS caps the worker count.\n");
    s.push_str("Exit codes: 0 success, 1 tolerance or numerical failure, 2 config error, 3 IO error.");
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key '{key}'")))
    }
}

fn split_pair(line: &str, origin: &str) -> Result<(String, String)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("{origin}: expected key=value, got '{line}'")))?;
    let k = k.trim();
    known(k)?;
    Ok((k.to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Parses file text then applies `overrides` (`key=value`) and resolves
    /// preset-derived defaults.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut set = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line, &format!("line {}", no + 1))?;
            set.insert(k, v);
        }
        for o in overrides {
            let (k, v) = split_pair(o, "--set")?;
            set.insert(k, v);
        }
        Self::resolve(set)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    fn resolve(set: BTreeMap<String, String>) -> Result<Self> {
        let preset = set.get("preset").map(String::as_str).unwrap_or("desk");
        let spec = match preset {
            "desk" => DatasetSpec::desk(0),
            "full" => DatasetSpec::full(0),
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        };
        let preset_value = |key: &str| -> String {
            match key {
                "grid_nx" => spec.gyre.nx.to_string(),
                "grid_ny" => spec.gyre.ny.to_string(),
                "horizon" => spec.horizon.to_string(),
                "t_eval" => spec.t_eval.to_string(),
                "seq_len" => spec.seq_len.to_string(),
                "train_count" => spec.counts[0].to_string(),
                "val_count" => spec.counts[1].to_string(),
                _ => spec.counts[2].to_string(),
            }
        };
        let mut values = BTreeMap::new();
        for (k, d, _) in KEYS {
            let v = match set.get(*k) {
                Some(v) => v.clone(),
                None if *d == PRESET => preset_value(k),
                None => d.to_string(),
            };
            values.insert(k.to_string(), v);
        }
        let out = values["out_dir"].clone();
        for (k, file) in [("data", "data.s4ds"), ("checkpoint", "model.s4ck")] {
            if values[k].is_empty() {
                values.insert(k.to_string(), Path::new(&out).join(file).to_string_lossy().into_owned());
            }
        }
        if values["layers"] == "auto" {
            let l = match values["model"].as_str() {
                "rs4d" => "bw,lin",
                "s4d" => "lin,lin",
                other => return Err(Error::Config(format!("unknown model '{other}' (expected rs4d or s4d)"))),
            };
            values.insert("layers".into(), l.into());
        }
        let cfg = Self { values };
        // surface type errors early, naming the key
        cfg.dataset_spec()?;
        cfg.model_config(1, 1)?;
        cfg.train_config()?;
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::Config(format!("key '{key}': expected true or false, got '{v}'"))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("key '{key}': cannot parse list item '{s}'")))
            })
            .collect()
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out_dir")
    }

    pub fn noise(&self, mode_key: &str) -> Result<NoiseSpec> {
        let mode: NoiseMode = self
            .raw(mode_key)
            .parse()
            .map_err(|e: Error| Error::Config(format!("key '{mode_key}': {e}")))?;
        let step = match self.raw("disturbance_step") {
            "last" => None,
            _ => Some(self.get("disturbance_step")?),
        };
        let spec = NoiseSpec {
            mode,
            sigma: self.get("noise_sigma")?,
            disturbance_magnitude: self.get("disturbance_magnitude")?,
            disturbance_step: step,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let spec = DatasetSpec {
            gyre: GyreParams {
                amplitude: self.get("amplitude")?,
                omega: self.get("omega")?,
                epsilon: self.get("epsilon")?,
                nx: self.get("grid_nx")?,
                ny: self.get("grid_ny")?,
                flip_vy: self.bool("flip_vy")?,
            },
            counts: [self.get("train_count")?, self.get("val_count")?, self.get("test_count")?],
            horizon: self.get("horizon")?,
            dt_sample: self.get("dt_sample")?,
            substeps: self.get("substeps")?,
            t_eval: self.get("t_eval")?,
            seq_len: self.get("seq_len")?,
            seed: self.get("data_seed")?,
        };
        spec.check()?;
        self.noise("noise_mode")?;
        Ok(spec)
    }

    pub fn model_config(&self, input_dim: usize, output_dim: usize) -> Result<ModelConfig> {
        let layers: Vec<InitKind> = self.list("layers")?;
        let config = ModelConfig {
            input_dim,
            output_dim,
            hidden: self.get("hidden")?,
            state: self.get("state")?,
            channels: self.get("channels")?,
            layers,
            bw_residual: self.bool("bw_residual")?,
            bw_residues: self.bool("bw_residues")?,
            decoder_hidden: self.list("decoder")?,
            dt_min: self.get("dt_min")?,
            dt_max: self.get("dt_max")?,
            s4dc: self.bool("s4dc")?,
        };
        config.check()?;
        if self.raw("model") == "rs4d" && !config.is_robust() {
            return Err(Error::Config(
                "key 'layers': rs4d needs exactly one bw layer, first, followed by other layers".into(),
            ));
        }
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            adam: AdamConfig {
                lr_dense: self.get("lr_dense")?,
                lr_ssm: self.get("lr_ssm")?,
                beta1: self.get("beta1")?,
                beta2: self.get("beta2")?,
                eps: self.get("adam_eps")?,
            },
            seed: self.get("seed")?,
            train_noise: self.noise("train_noise")?,
        })
    }

    /// Resolved configuration as `key = value` lines, headed by the command
    /// and crate version.
    pub fn manifest(&self, command: &str) -> String {
        let mut s = format!("# s4sense {}\ncommand = {command}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_desk_preset() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c.raw("grid_nx"), "51");
        assert_eq!(c.raw("train_count"), "256");
        assert_eq!(c.raw("layers"), "bw,lin");
        assert_eq!(c.path("data"), Path::new("out").join("data.s4ds"));
        let spec = c.dataset_spec().unwrap();
        assert_eq!(spec, DatasetSpec::desk(0));
    }

    #[test]
    fn file_comments_and_overrides() {
        let text = "# a comment\nepochs = 3  # trailing\n\nmodel=s4d\n";
        let c = RunConfig::parse(text, &["epochs=5".into(), "preset=full".into()]).unwrap();
        assert_eq!(c.raw("epochs"), "5");
        assert_eq!(c.raw("layers"), "lin,lin");
        assert_eq!(c.raw("grid_nx"), "201");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("bogus_key = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        let err = RunConfig::parse("", &["nope=2".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = RunConfig::parse("hidden = lots\n", &[]).unwrap_err();
        assert!(err.to_string().contains("hidden"));
        assert!(RunConfig::parse("layers = lin,bw\n", &[]).is_err());
        assert!(RunConfig::parse("seq_len = 100\n", &[]).is_err());
    }

    #[test]
    fn manifest_lists_every_key_once() {
        let c = RunConfig::parse("", &[]).unwrap();
        let m = c.manifest("train");
        for (k, _, _) in KEYS {
            assert_eq!(m.lines().filter(|l| l.starts_with(&format!("{k} = "))).count(), 1, "{k}");
        }
        assert!(keys_help().contains("kc_tol_genfun"));
    }
}
