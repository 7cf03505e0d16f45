//! Run configuration: a TOML file mirroring the CLI flags, with any flag
//! given on the command line taking precedence over the file value.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::AppError;

/// Optional values loadable from `--config <file.toml>`. Every key mirrors a
/// CLI flag of the same name.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub family: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub k: Option<usize>,
    pub n: Option<String>,
    pub alpha: Option<f64>,
    pub methods: Option<Vec<String>>,
    pub npb_reps: Option<usize>,
    pub reps: Option<usize>,
    pub preset: Option<String>,
    pub conditional: Option<bool>,
    pub schema: Option<SchemaConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub id_col: Option<String>,
    pub exposure_col: Option<String>,
    pub c1_cols: Option<Vec<String>>,
    pub c2_cols: Option<Vec<String>>,
    pub c3_cols: Option<Vec<String>>,
    pub mediator_cols: Option<Vec<String>>,
    pub mediator_prefix: Option<String>,
    pub offset_col: Option<String>,
    pub outcome_col: Option<String>,
    pub unassigned_col: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, AppError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| AppError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Column selection for one mediator set: an explicit list or a name prefix.
#[derive(Debug, Clone)]
pub enum MediatorSel {
    Prefix(String),
    Cols(Vec<String>),
}

/// Fully resolved column-role schema (names into the CSV header).
#[derive(Debug, Clone)]
pub struct SchemaSpec {
    pub id: Option<String>,
    pub exposure: String,
    pub c1: Vec<String>,
    pub c2: Vec<String>,
    pub c3: Vec<String>,
    pub mediators: MediatorSel,
    pub offset: String,
    pub outcome: String,
    pub unassigned: Option<String>,
    /// True when c3 came from the built-in default and may be absent.
    pub c3_optional: bool,
    /// True when id came from the built-in default and may be absent.
    pub id_optional: bool,
}

pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn pick_opt<T: Clone>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}
