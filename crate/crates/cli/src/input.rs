//! Parsers for the three input formats: sampler JSON, run configuration TOML,
//! and ledger JSON. All of them report failures with a line and column.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use limper::cantor::LevelSampler;
use limper::construction::{
    ConcatenateConfig, ConstructionConfig, ConstructionLedger, EnlargeConfig, GridConfig, ScheduleConfig, WindowPolicy,
};
use limper::periodic::PeriodicSampler;
use limper::Error;

/// A sampler file holds either a bare value list or a level sampler document.
#[derive(Deserialize)]
#[serde(untagged)]
enum SamplerDocument {
    Values(PeriodicSampler),
    Level(LevelSampler),
}

pub fn parse_sampler(text: &str) -> limper::Result<PeriodicSampler> {
    let doc: SamplerDocument = serde_json::from_str(text).map_err(|e| {
        // untagged enums lose the inner position and reason; re-parse as a plain value
        let expected = "expected a list of finite values or {\"schedule\", \"level\", \"values\"}";
        match serde_json::from_str::<serde_json::Value>(text) {
            Err(inner) => Error::Parse {
                line: inner.line(),
                column: inner.column(),
                message: expected.into(),
            },
            Ok(value) => {
                let reason = match &value {
                    serde_json::Value::Object(_) => serde_json::from_value::<LevelSampler>(value).err(),
                    serde_json::Value::Array(_) => serde_json::from_value::<PeriodicSampler>(value).err(),
                    _ => None,
                };
                Error::Parse {
                    line: e.line().max(1),
                    column: e.column().max(1),
                    message: reason.map_or_else(|| expected.into(), |r| r.to_string()),
                }
            }
        }
    })?;
    Ok(match doc {
        SamplerDocument::Values(f) => f,
        SamplerDocument::Level(f) => f.sampler().clone(),
    })
}

pub fn parse_ledger(text: &str) -> limper::Result<ConstructionLedger> {
    ConstructionLedger::from_json(text)
}

/// Everything `limper construct` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stage_count: usize,
    pub epsilon0: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_window")]
    pub window: WindowPolicy,
    /// Candidate evaluations the parameter searches may spend.
    pub budget: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Base sampler values, one period.
    pub base: Vec<f64>,
    pub schedule: ScheduleConfig,
    pub enlarge: EnlargeConfig,
    pub concatenate: ConcatenateConfig,
    pub grid: GridConfig,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_window() -> WindowPolicy {
    WindowPolicy::Inherit
}

impl RunConfig {
    pub fn construction(&self) -> limper::Result<ConstructionConfig> {
        let config = ConstructionConfig {
            base: PeriodicSampler::new(self.base.clone())?,
            epsilon0: self.epsilon0,
            stage_count: self.stage_count,
            seed: self.seed,
            tol: self.tol,
            window: self.window,
            budget: self.budget,
            schedule: self.schedule.clone(),
            enlarge: self.enlarge.clone(),
            concatenate: self.concatenate.clone(),
            grid: self.grid.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_config(text: &str) -> limper::Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |span| line_column(text, span.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    config.construction()?;
    Ok(config)
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let start = before.iter().rposition(|&b| b == b'\n').map_or(0, |k| k + 1);
    let column = String::from_utf8_lossy(&before[start..]).chars().count() + 1;
    (line, column)
}
