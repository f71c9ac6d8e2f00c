//! Line-oriented sample format: `label,f1,f2,...,fP`, with an empty label
//! field for samples whose label is hidden.

use std::fmt::Write as _;
use std::path::Path;

use super::Sample;
use crate::error::{Error, Result};

pub fn samples_to_text(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        if let Some(l) = s.label {
            write!(out, "{l}").unwrap();
        }
        for f in &s.features {
            write!(out, ",{f}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_samples(text: &str, source_name: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Format {
            source_name: source_name.to_string(),
            location: format!("line {}", lineno + 1),
            reason,
        };
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or_default().trim();
        let label = if label_field.is_empty() {
            None
        } else {
            Some(
                label_field
                    .parse::<usize>()
                    .map_err(|e| err(format!("bad label `{label_field}`: {e}")))?,
            )
        };
        let features = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("bad feature `{f}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(err(format!("{} features, expected {d}", features.len())))
            }
            _ => {}
        }
        out.push(Sample { features, label });
    }
    Ok(out)
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, samples_to_text(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_samples(&text, &path.display().to_string())
}
