use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Two standard errors of the slope.
    pub half_width: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Domain(format!(
            "slope fit needs at least 3 paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("slope fit needs positive finite values, got {v}")));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("slope fit needs at least two distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        half_width: 2.0 * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn exact_power_law() {
        let xs = [250.0, 1000.0, 4000.0, 16000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powf(-0.8)).collect();
        let fit = fit_loglog_slope(&xs, &ys).unwrap();
        assert!((fit.slope + 0.8).abs() < 1e-12);
        assert!(fit.half_width < 1e-10);
    }

    #[test]
    fn constant_has_zero_slope() {
        let fit = fit_loglog_slope(&[1.0, 2.0, 4.0, 8.0], &[3.0; 4]).unwrap();
        assert!(fit.slope.abs() < 1e-14);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn noisy_inverse_law() {
        let mut rng = Streams::new(4).stream(Purpose::Test, 0, 0);
        let xs: Vec<f64> = (0..8).map(|i| 2f64.powi(i + 3)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / x * (1.0 + 0.01 * rng.random_range(-1.0..1.0))).collect();
        let fit = fit_loglog_slope(&xs, &ys).unwrap();
        assert!((-1.05..=-0.95).contains(&fit.slope), "{}", fit.slope);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, -2.0, 3.0], &[1.0, 1.0, 2.0]).is_err());
        assert!(fit_loglog_slope(&[2.0, 2.0, 2.0], &[1.0, 1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn recovers_any_power_law(p in -3.0f64..3.0, c in 0.01f64..100.0) {
            let xs = [1.0, 3.0, 10.0, 30.0, 100.0];
            let ys: Vec<f64> = xs.iter().map(|x: &f64| c * x.powf(p)).collect();
            let fit = fit_loglog_slope(&xs, &ys).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-10);
            prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
        }
    }
}
