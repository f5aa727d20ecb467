//! Distortion metrics and the run-level metrics CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// Mean squared error between two equal-length signals.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10 log10(max^2 / mse)` in dB; infinite for a zero error.
pub fn psnr(mse: f64, max_value: f64) -> f64 {
    assert!(mse >= 0.0);
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (max_value * max_value / mse).log10()
}

/// One rate-distortion point / run summary.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub run_id: String,
    pub beta_total: f64,
    pub l: usize,
    pub dim: usize,
    /// bits per pixel (image runs) or bits per weight (model runs).
    pub bpp_or_bpw: f64,
    pub h_p_bits: f64,
    pub coded_bits: u64,
    pub mse: Option<f64>,
    pub psnr_db: Option<f64>,
    pub accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "run_id,beta_total,L,dim,bpp_or_bpw,H_p_bits,coded_bits,mse,psnr_db,accuracy";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x:.9e}"),
        None => String::new(),
    }
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:.9e},{},{},{:.9e},{:.9e},{},{},{},{}",
            self.run_id,
            self.beta_total,
            self.l,
            self.dim,
            self.bpp_or_bpw,
            self.h_p_bits,
            self.coded_bits,
            fmt_opt(self.mse),
            fmt_opt(self.psnr_db),
            fmt_opt(self.accuracy),
        )
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv_line())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_formula() {
        assert_eq!(psnr(0.0, 1.0), f64::INFINITY);
        assert!((psnr(255.0 * 255.0, 255.0) - 0.0).abs() < 1e-12);
        assert!((psnr(0.001, 1.0) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn mse_basic() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((mse(&[0.0, 0.0], &[1.0, 1.0]) - 1.0).abs() < 1e-12);
    }
}
