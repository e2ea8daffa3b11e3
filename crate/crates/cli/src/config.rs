//! Experiment configuration, read from JSON. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use odcl::data::{GenConfig, TableSchema, TwoClassPool};
use odcl::erm::LossSpec;
use odcl::protocol::{ClusteringAlgo, ErmMode, IfcaConfig, ProtocolConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub loss: LossSpec,
    pub methods: Vec<MethodSpec>,
    /// Samples per user, one experiment cell per value.
    pub sweep: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Record wall-clock time per row. Reports are byte-identical across runs
    /// only with this off.
    #[serde(default = "yes")]
    pub record_wall_time: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Synthetic linear regression. `gen.n` and `gen.seed` are replaced by the
    /// sweep value and the run seed.
    Linear { gen: GenConfig },
    /// The four-cluster two-dimensional logistic design.
    LogisticReference {
        #[serde(default)]
        test_size: Option<usize>,
    },
    /// Two clusters that label the same two-class pool in opposite ways.
    LabelFlip { source: PoolSource, m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSource {
    /// Gaussian pool; its seed is replaced by the run seed.
    Synthetic { pool: TwoClassPool },
    Table {
        path: PathBuf,
        #[serde(default)]
        schema: TableSchema,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IfcaInit {
    /// Each true model displaced by a distance in `[D/5, D/3]`.
    Shell,
    /// Cluster-oracle models plus Gaussian noise.
    OracleNoise { std: f64 },
    /// Gaussian models around the origin.
    Random { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Odcl {
        #[serde(default)]
        label: Option<String>,
        protocol: ProtocolConfig,
    },
    OracleAvg {
        #[serde(default)]
        label: Option<String>,
    },
    ClusterOracle {
        #[serde(default)]
        label: Option<String>,
    },
    LocalErm {
        #[serde(default)]
        label: Option<String>,
    },
    NaiveAvg {
        #[serde(default)]
        label: Option<String>,
    },
    Ifca {
        #[serde(default)]
        label: Option<String>,
        ifca: IfcaConfig,
        init: IfcaInit,
    },
}

impl MethodSpec {
    /// Name used in the report.
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Odcl { label: Some(l), .. }
            | MethodSpec::OracleAvg { label: Some(l) }
            | MethodSpec::ClusterOracle { label: Some(l) }
            | MethodSpec::LocalErm { label: Some(l) }
            | MethodSpec::NaiveAvg { label: Some(l) }
            | MethodSpec::Ifca { label: Some(l), .. } => l.clone(),
            MethodSpec::Odcl { protocol, .. } => default_odcl_label(protocol),
            MethodSpec::OracleAvg { .. } => "oracle_avg".into(),
            MethodSpec::ClusterOracle { .. } => "cluster_oracle".into(),
            MethodSpec::LocalErm { .. } => "local_erm".into(),
            MethodSpec::NaiveAvg { .. } => "naive_avg".into(),
            MethodSpec::Ifca { init, .. } => match init {
                IfcaInit::Shell => "ifca_shell".into(),
                IfcaInit::OracleNoise { .. } => "ifca_oracle_noise".into(),
                IfcaInit::Random { .. } => "ifca_random".into(),
            },
        }
    }
}

fn default_odcl_label(p: &ProtocolConfig) -> String {
    let base = match &p.clustering {
        ClusteringAlgo::ConvexFixed { .. } => "odcl_cc_fixed",
        ClusteringAlgo::ConvexTruthInterval => "odcl_cc",
        ClusteringAlgo::Clusterpath { .. } => "odcl_cc_path",
        ClusteringAlgo::KmeansSpectral { .. } if p.partial_spectral => "odcl_km_part1",
        ClusteringAlgo::KmeansSpectral { .. } => "odcl_km",
        ClusteringAlgo::KmeansPp { .. } => "odcl_kmpp",
        ClusteringAlgo::KmeansEstimated { .. } => "odcl_kmpp_est",
    };
    match p.erm {
        ErmMode::Exact => base.to_string(),
        ErmMode::Sgd { .. } => format!("{base}_sgd"),
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config { field: field.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(invalid("methods", "need at least one method"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        if self.sweep.is_empty() {
            return Err(invalid("sweep", "need at least one sample size"));
        }
        if self.sweep.contains(&0) {
            return Err(invalid("sweep", "sample sizes must be positive"));
        }
        self.loss.validate().map_err(|e| invalid("loss", e.to_string()))?;
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            let label = m.label();
            if !seen.insert(label.clone()) {
                return Err(invalid("methods", format!("duplicate method label {label:?}")));
            }
            match m {
                MethodSpec::Odcl { protocol, .. } => protocol.validate().map_err(|e| invalid("methods", format!("{label}: {e}")))?,
                MethodSpec::Ifca { ifca, init, .. } => {
                    ifca.validate().map_err(|e| invalid("methods", format!("{label}: {e}")))?;
                    match init {
                        IfcaInit::OracleNoise { std } if !(*std >= 0.0) => return Err(invalid("init", "std must be nonnegative")),
                        IfcaInit::Random { scale } if !(*scale >= 0.0) => return Err(invalid("init", "scale must be nonnegative")),
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        match &self.data {
            DataSpec::Linear { gen } => {
                let probe = GenConfig { n: self.sweep[0], ..gen.clone() };
                probe.validate().map_err(|e| invalid("data", e.to_string()))?;
            }
            DataSpec::LabelFlip { m, .. } if *m < 2 || m % 2 != 0 => {
                return Err(invalid("m", "label-flip data needs an even number of users"))
            }
            _ => {}
        }
        Ok(())
    }
}
