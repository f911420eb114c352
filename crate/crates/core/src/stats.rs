//! Small statistics toolkit for the Monte Carlo checks.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{IdlaError, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Linear-interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Two-sided p-value of a standard normal statistic.
pub fn z_p_value(z: f64) -> f64 {
    2.0 * (1.0 - normal_cdf(z.abs()))
}

/// Kolmogorov-Smirnov distance between the sample and `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS distance `dist` at size `n`,
/// with the Stephens small-sample correction.
pub fn ks_p_value(dist: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * dist;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Homogeneity test of two count vectors over the same categories. Sparse
/// categories (expected count below 5 in either arm) are pooled into one.
pub fn chi_squared_two_sample(a: &[u64], b: &[u64]) -> Result<ChiSquaredTest> {
    if a.len() != b.len() {
        return Err(IdlaError::Contract("count vectors differ in length".into()));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(IdlaError::Contract("empty sample".into()));
    }
    let (na, nb) = (na as f64, nb as f64);
    let n = na + nb;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let tot = (x + y) as f64;
        if tot == 0.0 {
            continue;
        }
        if tot * na.min(nb) / n < 5.0 {
            pooled.0 += x as f64;
            pooled.1 += y as f64;
        } else {
            cells.push((x as f64, y as f64));
        }
    }
    if pooled.0 + pooled.1 > 0.0 {
        cells.push(pooled);
    }
    if cells.len() < 2 {
        return Err(IdlaError::Contract("fewer than two usable categories".into()));
    }
    let mut stat = 0.0;
    for &(x, y) in &cells {
        let tot = x + y;
        let ea = tot * na / n;
        let eb = tot * nb / n;
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let dof = cells.len() - 1;
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    Ok(ChiSquaredTest {
        statistic: stat,
        dof,
        p_value,
    })
}

/// Least-squares line `y = intercept + slope x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
    }

    #[test]
    fn ks_reference_values() {
        // Kolmogorov distribution: P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098
        assert!((ks_p_value(1.36 / 1e4, 100_000_000) - 0.0494).abs() < 1e-3);
        assert!((ks_p_value(1.628 / 1e4, 100_000_000) - 0.0100).abs() < 5e-4);
        let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&uniform, |x| x) <= 0.0005 + 1e-12);
    }

    #[test]
    fn chi_squared_identical_and_different() {
        let t = chi_squared_two_sample(&[100, 200, 300], &[100, 200, 300]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.dof, 2);
        let t = chi_squared_two_sample(&[100, 200, 300], &[300, 200, 100]).unwrap();
        assert!(t.p_value < 1e-10);
        assert!(chi_squared_two_sample(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn regression() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [3.0, 5.0, 7.0];
        let (a, b) = linear_fit(&xs, &ys);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
    }
}
