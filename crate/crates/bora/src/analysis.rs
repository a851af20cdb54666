//! Spectral reporting over materialized adapter updates: the full singular
//! spectrum, the count of singular values above a threshold, and the sum of
//! squared singular values (which equals the squared Frobenius norm).

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, svd, DenseMatrix};

/// Spectrum statistics for one analyzed matrix.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub label: String,
    pub variant: String,
    pub r: usize,
    pub b: usize,
    pub singular_values: Vec<f64>,
    pub count_above_threshold: usize,
    pub sum_squared: f64,
    pub threshold: f64,
    pub fro_norm: f64,
}

/// Full SVD spectrum of `delta` with threshold statistics. The threshold is
/// applied to the raw singular values; `fro_norm` is reported alongside so
/// callers can rescale.
///
/// The sum of squared singular values always equals the squared Frobenius
/// norm (Parseval), which doubles as a self-check of the SVD:
///
/// ```
/// use bora::adapter::*;
/// use bora::analysis::spectrum;
/// use bora::rng::{kaiming_uniform, Seed};
///
/// let config = AdapterConfig::with_unit_scale(
///     32, 32, 4, 4, Variant::Bora, SigmaTransform::NormExp).unwrap();
/// let mut params = AdapterParams::init(&config, Seed::new(1)).unwrap();
/// params.b = kaiming_uniform(Seed::new(2), 32, 4, 4).unwrap();
/// let delta = materialize(&params, &config).unwrap();
///
/// let report = spectrum(&delta, 0.005, "example").unwrap();
/// assert_eq!(report.singular_values.len(), 32);
/// let fro2 = report.fro_norm * report.fro_norm;
/// assert!((report.sum_squared - fro2).abs() <= 1e-9 * fro2);
/// ```
pub fn spectrum(delta: &DenseMatrix, threshold: f64, label: &str) -> Result<SpectrumReport> {
    if threshold <= 0.0 {
        return Err(Error::Argument(format!(
            "spectrum threshold must be positive, got {threshold}"
        )));
    }
    let s = svd(delta)?;
    let count_above_threshold = s.singular_values.iter().filter(|&&v| v > threshold).count();
    let sum_squared = s.singular_values.iter().map(|v| v * v).sum();
    Ok(SpectrumReport {
        label: label.to_string(),
        variant: String::new(),
        r: 0,
        b: 0,
        singular_values: s.singular_values,
        count_above_threshold,
        sum_squared,
        threshold,
        fro_norm: frobenius_norm(delta),
    })
}

impl SpectrumReport {
    /// Attaches the adapter metadata carried into the comparison CSV.
    pub fn with_config(mut self, variant: &str, r: usize, b: usize) -> Self {
        self.variant = variant.to_string();
        self.r = r;
        self.b = b;
        self
    }
}

/// Header matching [`compare_spectra`] rows.
pub const SPECTRUM_CSV_HEADER: &str =
    "label,variant,r,b,threshold,count_above,sum_squared,fro_norm";

/// Aligned CSV rows for a set of reports, one per report, in input order.
pub fn compare_spectra(reports: &[SpectrumReport]) -> Result<Vec<String>> {
    if reports.is_empty() {
        return Err(Error::Argument("no spectrum reports to compare".into()));
    }
    Ok(reports
        .iter()
        .map(|rep| {
            format!(
                "{},{},{},{},{},{},{},{}",
                rep.label,
                rep.variant,
                rep.r,
                rep.b,
                rep.threshold,
                rep.count_above_threshold,
                rep.sum_squared,
                rep.fro_norm
            )
        })
        .collect())
}
