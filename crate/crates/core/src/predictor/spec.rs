use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use mmms_nn::{FeatureArchive, MmmsNet, StubBackbone};

use super::{
    ClassicalPredictor, GroundTruthOracle, NeuralPredictor, OracleScript, Predictor, PredictorError, RemoteConfig,
    RemotePredictor, ScriptedOracle, NEURAL_DEFAULT_SEED,
};
use crate::dataset::Manifest;

/// Parsed `--predictor` argument:
/// `oracle:gt`, `oracle:FILE`, `classical`,
/// `neural[:seed=N][,size=S][,features=DIR]`, `remote:CMD`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredictorSpec {
    GroundTruthOracle,
    ScriptedOracle(PathBuf),
    Classical,
    Neural { seed: u64, size: Option<usize>, features: Option<PathBuf> },
    Remote(String),
}

impl FromStr for PredictorSpec {
    type Err = PredictorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("oracle", Some("gt")) => Ok(Self::GroundTruthOracle),
            ("oracle", Some(path)) if !path.is_empty() => Ok(Self::ScriptedOracle(PathBuf::from(path))),
            ("classical", None) => Ok(Self::Classical),
            ("neural", arg) => {
                let (mut seed, mut size, mut features) = (NEURAL_DEFAULT_SEED, None, None);
                for item in arg.unwrap_or("").split(',').filter(|i| !i.is_empty()) {
                    let (key, value) =
                        item.split_once('=').ok_or_else(|| PredictorError::Spec(format!("expected key=value, got '{item}'")))?;
                    let num = |v: &str| v.parse::<u64>().map_err(|e| PredictorError::Spec(format!("{key}: {e}")));
                    match key {
                        "seed" => seed = num(value)?,
                        "size" => size = Some(num(value)? as usize),
                        "features" => features = Some(PathBuf::from(value)),
                        other => return Err(PredictorError::Spec(format!("unknown neural option '{other}'"))),
                    }
                }
                Ok(Self::Neural { seed, size, features })
            }
            ("remote", Some(cmd)) if !cmd.trim().is_empty() => Ok(Self::Remote(cmd.to_string())),
            _ => Err(PredictorError::Spec(format!(
                "'{s}' (expected oracle:gt, oracle:FILE, classical, neural[:opts] or remote:CMD)"
            ))),
        }
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GroundTruthOracle => f.write_str("oracle:gt"),
            Self::ScriptedOracle(p) => write!(f, "oracle:{}", p.display()),
            Self::Classical => f.write_str("classical"),
            Self::Neural { seed, size, features } => {
                write!(f, "neural:seed={seed}")?;
                if let Some(s) = size {
                    write!(f, ",size={s}")?;
                }
                if let Some(d) = features {
                    write!(f, ",features={}", d.display())?;
                }
                Ok(())
            }
            Self::Remote(cmd) => write!(f, "remote:{cmd}"),
        }
    }
}

/// Context needed to instantiate a predictor for a dataset.
#[derive(Clone, Debug)]
pub struct BuildContext<'a> {
    pub manifest: &'a Manifest,
    /// Announced to remote children.
    pub resolution: [usize; 2],
    pub disk_radius: u32,
    pub remote_timeout: Duration,
}

impl PredictorSpec {
    pub fn build(&self, ctx: &BuildContext<'_>) -> Result<Box<dyn Predictor>, PredictorError> {
        Ok(match self {
            Self::GroundTruthOracle => Box::new(GroundTruthOracle::new()),
            Self::ScriptedOracle(path) => {
                Box::new(ScriptedOracle::new(OracleScript::load(path)?).named(format!("oracle:{}", path.display())))
            }
            Self::Classical => Box::new(ClassicalPredictor::default()),
            Self::Neural { seed, size, features } => {
                let mut cfg = NeuralPredictor::default_config(ctx.manifest.modality_channels());
                if let Some(s) = size {
                    cfg.image_size = (*s, *s);
                }
                let net = match features {
                    Some(dir) => MmmsNet::new(cfg, *seed, Box::new(FeatureArchive::new(dir.clone())))?,
                    None => {
                        let backbone = StubBackbone::new(cfg.stub_backbone(), *seed)?;
                        MmmsNet::new(cfg, *seed, Box::new(backbone))?
                    }
                };
                Box::new(NeuralPredictor::new(net, ctx.manifest.modality_names(), ctx.disk_radius)?)
            }
            Self::Remote(cmd) => {
                let mut cfg = RemoteConfig::from_command_line(cmd)?;
                cfg.timeout = ctx.remote_timeout;
                cfg.resolution = ctx.resolution;
                cfg.modalities = ctx.manifest.modality_names();
                Box::new(RemotePredictor::new(cfg)?)
            }
        })
    }
}
