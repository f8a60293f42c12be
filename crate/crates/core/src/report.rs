use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScanPoint {
    #[serde(rename = "S")]
    pub s: f64,
    pub gap: f64,
}

/// Outcome of one inequality or rate check.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub lhs: Option<f64>,
    pub rhs_bound: Option<f64>,
    pub scan: Vec<ScanPoint>,
    pub slope: Option<f64>,
    pub pass: bool,
}

impl CheckReport {
    pub fn inequality(name: impl Into<String>, lhs: f64, rhs: f64, rel_tol: f64) -> Self {
        Self {
            name: name.into(),
            lhs: Some(lhs),
            rhs_bound: Some(rhs),
            scan: Vec::new(),
            slope: None,
            pass: holds(lhs, rhs, rel_tol),
        }
    }

    pub fn with_scan(mut self, scan: Vec<ScanPoint>, slope: f64, pass: bool) -> Self {
        self.scan = scan;
        self.slope = Some(slope);
        self.pass &= pass;
        self
    }

    pub fn slack(&self) -> Option<f64> {
        Some(self.rhs_bound? - self.lhs?)
    }
}

/// `lhs <= rhs` up to relative roundoff.
pub fn holds(lhs: f64, rhs: f64, rel_tol: f64) -> bool {
    lhs <= rhs + rel_tol * rhs.abs().max(lhs.abs()) + f64::MIN_POSITIVE
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::ScanTooShort {
            needed: 2,
            got: xs.len(),
        });
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.max(f64::MIN_POSITIVE).ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / sxx)
}
