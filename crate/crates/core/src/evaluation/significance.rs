use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Two-sided paired t-test on `a[i] - b[i]`. Identical samples give `p = 1`.
pub fn paired_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "paired_test",
            format!("{} vs {} samples", a.len(), b.len()),
        ));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Config("paired test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(1.0);
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(0.0);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist =
        StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Config(e.to_string()))?;
    Ok((2.0 * dist.cdf(-t.abs())).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [0.1, 0.5, 0.9];
        assert_eq!(paired_test(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn too_few_pairs() {
        assert!(paired_test(&[1.0], &[0.0]).is_err());
        assert!(paired_test(&[1.0, 2.0], &[0.0]).is_err());
    }
}
