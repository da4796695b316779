use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian kernel density on a fixed hour grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub hours: Vec<f64>,
    pub density: Vec<f64>,
}

pub const KDE_GRID_STEP: f64 = 0.1;
pub const KDE_GRID_POINTS: usize = 241;

/// Density of `samples` on 0–24 h in 0.1 h steps. Without a bandwidth,
/// Silverman's rule `1.06·σ̂·n^(−1/5)` is used; identical samples then have
/// no spread and are rejected.
pub fn kde(samples: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve> {
    if samples.len() < 2 {
        return Err(Error::usage(format!("kde needs at least 2 samples, got {}", samples.len())));
    }
    let n = samples.len() as f64;
    let bw = match bandwidth {
        Some(b) => b,
        None => {
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.06 * var.sqrt() * n.powf(-0.2)
        }
    };
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(Error::usage(format!("kde bandwidth must be positive, got {bw} (identical samples?)")));
    }
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    let hours: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| i as f64 * KDE_GRID_STEP).collect();
    let density = hours
        .iter()
        .map(|&h| {
            norm * samples
                .iter()
                .map(|&x| {
                    let z = (h - x) / bw;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve { bandwidth: bw, hours, density })
}
