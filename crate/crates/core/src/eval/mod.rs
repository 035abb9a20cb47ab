//! Evaluation procedures: policy divergence from the guides, reward and
//! action sweeps over the preference, and the ego × social-family matrix.

pub mod cross;
pub mod kl;
pub mod probe;
pub mod sweep;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use cross::{cross_evaluate, CrossReport, EgoEntry, Family, FamilyKind, OutcomeCell};
pub use kl::{estimate_kl, kl_curve, KlPoint, KlReport};
pub use probe::{probe_actions, probe_state, ProbePoint, ProbeReport};
pub use sweep::{sweep_preference_reward, CurvePoint, SweepReport};

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn preference_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(lo <= hi) {
        return Err(Error::InvalidConfig(format!("bad preference grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

/// Mean and batch-means standard error of a sequence split into `batches`
/// contiguous groups.
pub fn batch_mean_stderr(values: &[f64], batches: usize) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let b = batches.clamp(2, n.max(2));
    if n < b {
        return (mean, f64::NAN);
    }
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|k| {
            let chunk = &values[k * size..if k + 1 == b { n } else { (k + 1) * size }];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Writes a report as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes flat CSV rows under a header.
pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}
