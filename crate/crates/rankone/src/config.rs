//! Run configuration: TOML file sections, inline overrides and the effective dump.

use std::fs;
use std::path::{Path, PathBuf};

use rankone_core::model::{CorrelationMode, PilotKind, SystemConfig};
use rankone_core::{
    EstimatorOptions, EstimatorTag, GainMode, NystromCore, NystromWeight, Refinement,
};
use serde::de::value::{Error as DeError, StrDeserializer};
use serde::de::{DeserializeOwned, IntoDeserializer};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::harness::{Metric, SweepSpec};
use crate::plot::PlotKind;

/// Desk-scale defaults: `M = 128`, `K = 8`, `B = 2K`, `P = 5`, SNR 20 dB.
pub fn default_system() -> SystemConfig {
    SystemConfig::new(128, 8, 5).with_snr_db(20.0)
}

/// Partial `[system]` section. `snr_db` is a shorthand that sets `sigma_n2`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemPatch {
    #[serde(rename = "M")]
    pub antennas: Option<usize>,
    #[serde(rename = "K")]
    pub users: Option<usize>,
    #[serde(rename = "B")]
    pub pilot_len: Option<usize>,
    #[serde(rename = "L")]
    pub stack_len: Option<usize>,
    #[serde(rename = "P")]
    pub paths: Option<usize>,
    #[serde(rename = "N")]
    pub grid_size: Option<usize>,
    pub d_over_lambda: Option<f64>,
    pub sigma_x2: Option<f64>,
    pub sigma_n2: Option<f64>,
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
    pub rho_h2: Option<f64>,
}

impl SystemPatch {
    /// Apply over `base`. `B` and `L` keep their derived defaults (`2K`, `M/2`)
    /// when `K` or `M` change and they are not set explicitly.
    pub fn apply(&self, base: &SystemConfig) -> SystemConfig {
        let mut c = base.clone();
        let derived_b = base.pilot_len == 2 * base.users;
        let derived_l = base.stack_len * 2 == base.antennas;
        if let Some(m) = self.antennas {
            c.antennas = m;
            if derived_l && self.stack_len.is_none() {
                c.stack_len = m / 2;
            }
        }
        if let Some(k) = self.users {
            c.users = k;
            if derived_b && self.pilot_len.is_none() {
                c.pilot_len = 2 * k;
            }
        }
        set(&mut c.pilot_len, self.pilot_len);
        set(&mut c.stack_len, self.stack_len);
        set(&mut c.paths, self.paths);
        set(&mut c.grid_size, self.grid_size);
        set(&mut c.d_over_lambda, self.d_over_lambda);
        set(&mut c.sigma_x2, self.sigma_x2);
        set(&mut c.sigma_n2, self.sigma_n2);
        set(&mut c.seed, self.seed);
        if self.rho_h2.is_some() {
            c.rho_h2 = self.rho_h2;
        }
        if let Some(snr) = self.snr_db {
            c = c.with_snr_db(snr);
        }
        c
    }
}

fn set<T: Copy>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

/// Partial `[sweep]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPatch {
    pub snr_db_list: Option<Vec<f64>>,
    #[serde(rename = "M_list")]
    pub antennas_list: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub estimators: Option<Vec<EstimatorTag>>,
    pub mode: Option<CorrelationMode>,
    pub metrics: Option<Vec<Metric>>,
    pub pilot_kind: Option<PilotKind>,
    pub genie_samples: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub plots: Option<Vec<PlotKind>>,
    pub gamma: Option<f64>,
}

/// Partial `[options]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsPatch {
    pub gain_mode: Option<GainMode>,
    pub refinement: Option<Refinement>,
    pub sampling_len: Option<usize>,
    pub nystrom_weight: Option<NystromWeight>,
    pub nystrom_core: Option<NystromCore>,
    pub pinv_rtol: Option<f64>,
}

impl OptionsPatch {
    pub fn apply(&self, base: &EstimatorOptions) -> EstimatorOptions {
        let mut o = *base;
        set(&mut o.gain_mode, self.gain_mode);
        set(&mut o.refinement, self.refinement);
        if self.sampling_len.is_some() {
            o.sampling_len = self.sampling_len;
        }
        set(&mut o.nystrom_weight, self.nystrom_weight);
        set(&mut o.nystrom_core, self.nystrom_core);
        set(&mut o.pinv_rtol, self.pinv_rtol);
        o
    }
}

/// A configuration file; every section and key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub system: SystemPatch,
    #[serde(default)]
    pub sweep: SweepPatch,
    #[serde(default)]
    pub options: OptionsPatch,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|source| CliError::TomlParse {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Sweep-level settings beyond [`SweepSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db_list: Vec<f64>,
    #[serde(rename = "M_list")]
    pub antennas_list: Vec<usize>,
    pub trials: usize,
    pub estimators: Vec<EstimatorTag>,
    pub mode: CorrelationMode,
    pub metrics: Vec<Metric>,
    pub pilot_kind: PilotKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub genie_samples: Option<usize>,
    pub plots: Vec<PlotKind>,
    pub gamma: f64,
}

/// Fully resolved configuration, dumpable as a config file that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveConfig {
    pub system: SystemConfig,
    pub sweep: SweepSection,
    pub options: EstimatorOptions,
}

impl EffectiveConfig {
    /// Defaults, then file, then inline patches.
    pub fn resolve(layers: &[&ConfigFile]) -> Self {
        let mut system = default_system();
        let mut options = EstimatorOptions::default();
        let mut sweep = SweepSection {
            snr_db_list: vec![0.0, 10.0, 20.0, 30.0],
            antennas_list: Vec::new(),
            trials: 50,
            estimators: EstimatorTag::ALL.to_vec(),
            mode: CorrelationMode::FullRank,
            metrics: vec![Metric::Nmse, Metric::AoaRmse],
            pilot_kind: PilotKind::Orthonormal,
            genie_samples: None,
            plots: vec![PlotKind::NmseVsSnr],
            gamma: 1e-2,
        };
        for layer in layers {
            system = layer.system.apply(&system);
            options = layer.options.apply(&options);
            let p = &layer.sweep;
            if let Some(v) = &p.snr_db_list {
                sweep.snr_db_list = v.clone();
            }
            if let Some(v) = &p.antennas_list {
                sweep.antennas_list = v.clone();
            }
            set(&mut sweep.trials, p.trials);
            if let Some(v) = &p.estimators {
                sweep.estimators = v.clone();
            }
            set(&mut sweep.mode, p.mode);
            if let Some(v) = &p.metrics {
                sweep.metrics = v.clone();
            }
            set(&mut sweep.pilot_kind, p.pilot_kind);
            if p.genie_samples.is_some() {
                sweep.genie_samples = p.genie_samples;
            }
            if let Some(v) = &p.plots {
                sweep.plots = v.clone();
            }
            set(&mut sweep.gamma, p.gamma);
        }
        if sweep.antennas_list.is_empty() {
            sweep.antennas_list = vec![system.antennas];
        }
        EffectiveConfig {
            system,
            sweep,
            options,
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            base: self.system.clone(),
            snr_db_list: self.sweep.snr_db_list.clone(),
            antennas_list: self.sweep.antennas_list.clone(),
            trials: self.sweep.trials,
            estimators: self.sweep.estimators.clone(),
            mode: self.sweep.mode,
            metrics: self.sweep.metrics.clone(),
            pilot_kind: self.sweep.pilot_kind,
            options: self.options,
            genie_samples: self.sweep.genie_samples,
            out_dir: None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// The dump as a [`ConfigFile`] layer.
    pub fn as_file(&self) -> ConfigFile {
        let s = &self.system;
        ConfigFile {
            system: SystemPatch {
                antennas: Some(s.antennas),
                users: Some(s.users),
                pilot_len: Some(s.pilot_len),
                stack_len: Some(s.stack_len),
                paths: Some(s.paths),
                grid_size: Some(s.grid_size),
                d_over_lambda: Some(s.d_over_lambda),
                sigma_x2: Some(s.sigma_x2),
                sigma_n2: Some(s.sigma_n2),
                snr_db: None,
                seed: Some(s.seed),
                rho_h2: s.rho_h2,
            },
            sweep: SweepPatch {
                snr_db_list: Some(self.sweep.snr_db_list.clone()),
                antennas_list: Some(self.sweep.antennas_list.clone()),
                trials: Some(self.sweep.trials),
                estimators: Some(self.sweep.estimators.clone()),
                mode: Some(self.sweep.mode),
                metrics: Some(self.sweep.metrics.clone()),
                pilot_kind: Some(self.sweep.pilot_kind),
                genie_samples: self.sweep.genie_samples,
                out_dir: None,
                plots: Some(self.sweep.plots.clone()),
                gamma: Some(self.sweep.gamma),
            },
            options: OptionsPatch {
                gain_mode: Some(self.options.gain_mode),
                refinement: Some(self.options.refinement),
                sampling_len: self.options.sampling_len,
                nystrom_weight: Some(self.options.nystrom_weight),
                nystrom_core: Some(self.options.nystrom_core),
                pinv_rtol: Some(self.options.pinv_rtol),
            },
        }
    }
}

/// Parse a unit enum variant by its serialized name.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    let de: StrDeserializer<'_, DeError> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}

/// `full_rank` or `low_rank:<r>`.
pub fn parse_mode(s: &str) -> std::result::Result<CorrelationMode, String> {
    match s.split_once(':') {
        None if s == "full_rank" => Ok(CorrelationMode::FullRank),
        Some(("low_rank", r)) => r
            .parse::<usize>()
            .map(CorrelationMode::LowRank)
            .map_err(|e| format!("low_rank: {e}")),
        _ => Err(format!("expected full_rank or low_rank:<r>, got {s:?}")),
    }
}
