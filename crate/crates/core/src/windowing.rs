//! Decomposition of a lookback window into overlapping sub-windows and their
//! per-window barcode pairs.

use rayon::prelude::*;
use thiserror::Error;

use crate::persistence::{lower_star_barcode, superlevel_barcode, Barcode, PersistenceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindowError {
    #[error("window length {n} exceeds input length {t}")]
    WindowTooLong { t: usize, n: usize },
    #[error("window length {n} is below the minimum of 2")]
    WindowTooShort { n: usize },
    #[error("input has length {got}, plan expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

/// Sliding-window layout with unit step: `t = windows + n - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct WindowPlan {
    pub t: usize,
    pub n: usize,
    pub windows: usize,
}

impl WindowPlan {
    pub const STEP: usize = 1;

    pub fn new(t: usize, n: usize) -> Result<Self, WindowError> {
        if n < 2 {
            return Err(WindowError::WindowTooShort { n });
        }
        if n > t {
            return Err(WindowError::WindowTooLong { t, n });
        }
        Ok(Self { t, n, windows: t - n + 1 })
    }

    /// Plan from a window count and length.
    pub fn from_windows(windows: usize, n: usize) -> Result<Self, WindowError> {
        Self::new(windows + n - 1, n)
    }

    /// Default window length `floor(0.7 * t)`.
    pub fn default_for(t: usize) -> Result<Self, WindowError> {
        Self::new(t, default_window_len(t))
    }

    /// Slice of `x` covered by window `j` (0-based).
    pub fn window<'a>(&self, x: &'a [f64], j: usize) -> &'a [f64] {
        &x[j..j + self.n]
    }
}

pub fn plan(t: usize, n: usize) -> Result<WindowPlan, WindowError> {
    WindowPlan::new(t, n)
}

pub fn default_window_len(t: usize) -> usize {
    (7 * t) / 10
}

/// Sublevel and superlevel barcodes for each window, ordered by window index.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedBarcodes {
    pub sub: Vec<Barcode>,
    pub sup: Vec<Barcode>,
}

impl WindowedBarcodes {
    pub fn windows(&self) -> usize {
        self.sub.len()
    }

    /// CSV rows `window_index,side,birth,death,essential`.
    pub fn to_csv_rows(&self) -> Vec<(usize, &'static str, f64, f64, bool)> {
        let mut rows = Vec::new();
        for (j, (sub, sup)) in self.sub.iter().zip(&self.sup).enumerate() {
            for (side, code) in [("sub", sub), ("sup", sup)] {
                for bar in code.bars() {
                    rows.push((j, side, bar.birth, bar.death, bar.essential));
                }
            }
        }
        rows
    }
}

pub fn windowed_barcodes(x: &[f64], plan: &WindowPlan) -> Result<WindowedBarcodes, WindowError> {
    if x.len() != plan.t {
        return Err(WindowError::LengthMismatch { expected: plan.t, got: x.len() });
    }
    let pairs: Vec<(Barcode, Barcode)> = (0..plan.windows)
        .map(|j| {
            let w = plan.window(x, j);
            Ok((lower_star_barcode(w)?, superlevel_barcode(w)?))
        })
        .collect::<Result<_, PersistenceError>>()?;
    let (sub, sup) = pairs.into_iter().unzip();
    Ok(WindowedBarcodes { sub, sup })
}

/// Same as [`windowed_barcodes`] with windows processed on the rayon pool.
/// Output order follows window index.
pub fn windowed_barcodes_par(
    x: &[f64],
    plan: &WindowPlan,
) -> Result<WindowedBarcodes, WindowError> {
    if x.len() != plan.t {
        return Err(WindowError::LengthMismatch { expected: plan.t, got: x.len() });
    }
    let pairs: Vec<(Barcode, Barcode)> = (0..plan.windows)
        .into_par_iter()
        .map(|j| {
            let w = plan.window(x, j);
            Ok((lower_star_barcode(w)?, superlevel_barcode(w)?))
        })
        .collect::<Result<_, PersistenceError>>()?;
    let (sub, sup) = pairs.into_iter().unzip();
    Ok(WindowedBarcodes { sub, sup })
}

/// Barcode pairs for every length-`n` window of a long series, indexed by
/// window start. Lookback windows starting at `s` reuse entries
/// `s .. s + windows`.
#[derive(Debug, Clone)]
pub struct BarcodeCache {
    n: usize,
    sub: Vec<Barcode>,
    sup: Vec<Barcode>,
}

impl BarcodeCache {
    pub fn build(series: &[f64], n: usize) -> Result<Self, WindowError> {
        let plan = WindowPlan::new(series.len(), n)?;
        let wb = windowed_barcodes_par(series, &plan)?;
        Ok(Self { n, sub: wb.sub, sup: wb.sup })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Barcodes of the lookback `series[start .. start + plan.t]`.
    pub fn lookback(&self, start: usize, plan: &WindowPlan) -> WindowedBarcodes {
        debug_assert_eq!(plan.n, self.n);
        let range = start..start + plan.windows;
        WindowedBarcodes {
            sub: self.sub[range.clone()].to_vec(),
            sup: self.sup[range].to_vec(),
        }
    }
}
