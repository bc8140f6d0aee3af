//! Reading the network document and parsing list and grid flags.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use overpoll::model::NetworkSpec;

use crate::CliError;

/// Optional `sim` section of the input document. Command-line flags win
/// over it, and it wins over the built-in defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub seed: Option<u64>,
    pub seeds: Option<u64>,
    pub n: Option<Vec<i32>>,
    pub window: Option<String>,
    pub event_cap: Option<u64>,
}

pub struct Document {
    pub spec: NetworkSpec,
    pub sim: SimSection,
}

fn typed<T: for<'de> Deserialize<'de>>(value: Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let at = match (prefix, path.as_str()) {
            ("", p) => p.to_string(),
            (pre, ".") => pre.to_string(),
            (pre, p) => format!("{pre}.{p}"),
        };
        CliError::Parse(format!("at {at}: {}", e.inner()))
    })
}

/// Parses the document: the network fields at the top level plus an
/// optional `sim` object. Syntax and type errors carry the field path.
pub fn parse_document(text: &str) -> Result<Document, CliError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(format!("malformed JSON: {e}")))?;
    let sim = match value.as_object_mut() {
        Some(obj) => obj.remove("sim"),
        None => return Err(CliError::Parse("top level must be a JSON object".into())),
    };
    let spec: NetworkSpec = typed(value, "")?;
    let sim = match sim {
        Some(v) => typed(v, "sim")?,
        None => SimSection::default(),
    };
    Ok(Document { spec, sim })
}

pub fn read_document(path: &Path) -> Result<Document, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_document(&text)
}

/// `LO:HI:STEP` gives `LO, LO + STEP, ...` up to `HI`; a single number is a
/// one-point grid.
pub fn parse_window(s: &str) -> Result<Vec<f64>, CliError> {
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CliError::Usage(format!("bad number {x:?} in window {s:?}")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [x] => {
            let x = num(x)?;
            if x < 0.0 {
                return Err(CliError::Usage(format!("window time {x} is negative")));
            }
            Ok(vec![x])
        }
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if lo < 0.0 || hi < lo || step <= 0.0 {
                return Err(CliError::Usage(format!(
                    "window {s:?} needs 0 <= LO <= HI and STEP > 0"
                )));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|k| lo + k as f64 * step).collect())
        }
        _ => Err(CliError::Usage(format!("window {s:?} is not LO:HI:STEP or a single time"))),
    }
}

pub fn parse_n_list(s: &str) -> Result<Vec<i32>, CliError> {
    let out: Result<Vec<i32>, _> = s.split(',').map(|x| x.trim().parse::<i32>()).collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!("bad n list {s:?}; expected INT[,INT...]"))),
    }
}
