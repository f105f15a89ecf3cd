//! Multimodal sample format, windowing, instance normalization, and
//! JSONL persistence.
//!
//! Every other subsystem reads and writes [`MultimodalWindow`] records.
//! Files are JSON Lines (UTF-8, LF); a sidecar manifest carries the
//! windowing parameters so readers can validate record shapes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor applied to the instance standard deviation; constant windows
/// normalize to zeros instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-5;

/// One training sample: history/future series plus their captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultimodalWindow {
    pub series_id: String,
    pub history: Vec<f64>,
    pub future: Vec<f64>,
    pub history_text: String,
    pub future_text: String,
}

impl MultimodalWindow {
    /// Validate finiteness and, when a spec is given, lengths.
    pub fn validate(&self, spec: Option<&WindowingSpec>) -> Result<()> {
        if let Some(spec) = spec {
            if self.history.len() != spec.lookback {
                return Err(Error::InvalidRecord {
                    series_id: self.series_id.clone(),
                    message: format!(
                        "history length {} does not match lookback {}",
                        self.history.len(),
                        spec.lookback
                    ),
                });
            }
            if self.future.len() != spec.horizon {
                return Err(Error::InvalidRecord {
                    series_id: self.series_id.clone(),
                    message: format!(
                        "future length {} does not match horizon {}",
                        self.future.len(),
                        spec.horizon
                    ),
                });
            }
        }
        if self.history.iter().chain(self.future.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord {
                series_id: self.series_id.clone(),
                message: "non-finite value in series".into(),
            });
        }
        Ok(())
    }
}

/// Mean/std captured during normalization, kept for denormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

/// Sliding-window extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowingSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowingSpec {
    pub fn new(lookback: usize, horizon: usize, stride: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 || stride == 0 {
            return Err(Error::Config("lookback, horizon, and stride must be positive".into()));
        }
        Ok(WindowingSpec { lookback, horizon, stride })
    }

    /// Number of windows a series of `len` points yields.
    pub fn window_count(&self, len: usize) -> usize {
        let need = self.lookback + self.horizon;
        if len < need {
            0
        } else {
            (len - need) / self.stride + 1
        }
    }
}

/// Per-horizon-step Student's-T parameters (location, scale, dof).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
    pub dof: Vec<f64>,
}

impl StudentTParams {
    pub fn horizon(&self) -> usize {
        self.location.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.len() != self.location.len() || self.dof.len() != self.location.len() {
            return Err(Error::Shape("StudentTParams component lengths differ".into()));
        }
        let finite = self
            .location
            .iter()
            .chain(self.scale.iter())
            .chain(self.dof.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Shape("StudentTParams contain non-finite values".into()));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Shape("StudentTParams scale must be positive".into()));
        }
        if self.dof.iter().any(|&v| v <= 2.0) {
            return Err(Error::Shape("StudentTParams dof must exceed 2".into()));
        }
        Ok(())
    }
}

/// Produces caption pairs for extracted windows.
pub trait WindowCaptioner {
    fn caption_window(&self, history: &[f64], future: &[f64]) -> Result<(String, String)>;
}

/// Windows that could not be extracted, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct ExtractWarning {
    pub series_id: String,
    pub message: String,
}

/// Slide a window over `series`, starting at 0, stride, 2·stride, …
///
/// Series shorter than lookback + horizon produce no windows and one
/// warning record rather than an error.
pub fn extract_windows(
    series_id: &str,
    series: &[f64],
    captioner: Option<&dyn WindowCaptioner>,
    spec: &WindowingSpec,
) -> Result<(Vec<MultimodalWindow>, Vec<ExtractWarning>)> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("series {series_id} contains non-finite values")));
    }
    let need = spec.lookback + spec.horizon;
    if series.len() < need {
        return Ok((
            Vec::new(),
            vec![ExtractWarning {
                series_id: series_id.to_string(),
                message: format!(
                    "series length {} is shorter than lookback + horizon = {need}",
                    series.len()
                ),
            }],
        ));
    }
    let mut windows = Vec::with_capacity(spec.window_count(series.len()));
    let mut start = 0;
    while start + need <= series.len() {
        let history = series[start..start + spec.lookback].to_vec();
        let future = series[start + spec.lookback..start + need].to_vec();
        let (history_text, future_text) = match captioner {
            Some(c) => c.caption_window(&history, &future)?,
            None => (String::new(), String::new()),
        };
        windows.push(MultimodalWindow {
            series_id: format!("{series_id}-w{start:06}"),
            history,
            future,
            history_text,
            future_text,
        });
        start += spec.stride;
    }
    Ok((windows, Vec::new()))
}

/// Instance-normalize: subtract mean, divide by (floored) population std.
pub fn normalize_history(history: &[f64]) -> Result<(Vec<f64>, NormalizationStats)> {
    if history.len() < 2 {
        return Err(Error::Input("normalize_history needs at least 2 points".into()));
    }
    if history.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("normalize_history input contains non-finite values".into()));
    }
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    let var = history.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    let normalized = history.iter().map(|v| (v - mean) / std).collect();
    Ok((normalized, NormalizationStats { mean, std }))
}

/// Map normalized-space distribution parameters back to the raw scale.
pub fn denormalize_forecast(params: &StudentTParams, stats: &NormalizationStats) -> StudentTParams {
    StudentTParams {
        location: params.location.iter().map(|v| v * stats.std + stats.mean).collect(),
        scale: params.scale.iter().map(|v| v * stats.std).collect(),
        dof: params.dof.clone(),
    }
}

/// Undo [`normalize_history`] on a plain vector.
pub fn denormalize_values(values: &[f64], stats: &NormalizationStats) -> Vec<f64> {
    values.iter().map(|v| v * stats.std + stats.mean).collect()
}

/// Apply stored stats to new values (e.g. targets) without refitting.
pub fn normalize_with(values: &[f64], stats: &NormalizationStats) -> Vec<f64> {
    values.iter().map(|v| (v - stats.mean) / stats.std).collect()
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

/// Sidecar manifest describing a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub dataset_name: String,
    pub captioned: bool,
    /// Present when a captioning pass produced the file; records the
    /// segmentation threshold and noise cutoffs used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captioner: Option<CaptionerSettings>,
}

impl DatasetManifest {
    pub fn windowing(&self) -> WindowingSpec {
        WindowingSpec { lookback: self.lookback, horizon: self.horizon, stride: self.stride }
    }
}

/// Captioner parameters recorded next to captioned datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionerSettings {
    pub epsilon: f64,
    pub noise_low_threshold: f64,
    pub noise_high_threshold: f64,
}

/// `foo.jsonl` → `foo.manifest.json`.
pub fn manifest_path(dataset_path: &Path) -> PathBuf {
    dataset_path.with_extension("manifest.json")
}

pub fn write_manifest(dataset_path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = manifest_path(dataset_path);
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Input(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dataset_path: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(dataset_path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("{}: malformed manifest: {e}", path.display())))
}

/// Write windows as JSON Lines. Floats use the shortest round-trip
/// decimal representation, so write∘read is value-identical.
pub fn write_jsonl(path: &Path, windows: &[MultimodalWindow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for w in windows {
        w.validate(None)?;
        let line = serde_json::to_string(w)
            .map_err(|e| Error::Input(format!("record {}: {e}", w.series_id)))?;
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read windows from JSON Lines, validating against `spec` when given.
/// Malformed lines fail with their line number.
pub fn read_jsonl(path: &Path, spec: Option<&WindowingSpec>) -> Result<Vec<MultimodalWindow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut windows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let window: MultimodalWindow = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        window.validate(spec).map_err(|e| match e {
            Error::InvalidRecord { series_id, message } => Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("record {series_id}: {message}"),
            },
            other => other,
        })?;
        windows.push(window);
    }
    Ok(windows)
}

/// Read a dataset together with its manifest and validate every record.
pub fn read_dataset(path: &Path) -> Result<(Vec<MultimodalWindow>, DatasetManifest)> {
    let manifest = read_manifest(path)?;
    let windows = read_jsonl(path, Some(&manifest.windowing()))?;
    Ok((windows, manifest))
}
