use crate::error::{Error, Result};

/// CDF gap between target-class and confusing-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct KsCurve {
    pub thresholds: Vec<f64>,
    pub cdf_target: Vec<f64>,
    pub cdf_confusing: Vec<f64>,
    pub gap: Vec<f64>,
    /// Largest gap on the grid, and the threshold where it occurs (first on ties).
    pub grid_ks: f64,
    pub grid_threshold: f64,
    /// Canonical two-sample statistic over all sample points.
    pub exact_ks: f64,
    pub exact_threshold: f64,
}

fn validate(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Data(format!("{name} probabilities are empty")));
    }
    if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Data(format!("{name} probability {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Fraction of `sorted` that is `<= t`.
fn ecdf(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|&v| v <= t) as f64 / sorted.len() as f64
}

/// `sup_t |F_target(t) - F_confusing(t)|` and its arg-sup, evaluated at every
/// sample point by a merge sweep.
pub fn ks_exact(target: &[f64], confusing: &[f64]) -> Result<(f64, f64)> {
    validate("target", target)?;
    validate("confusing", confusing)?;
    let mut a = target.to_vec();
    let mut b = confusing.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut best, mut at) = (0.0, a[0].min(b[0]));
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        let d = (i as f64 / na - j as f64 / nb).abs();
        if d > best {
            best = d;
            at = t;
        }
    }
    Ok((best, at))
}

/// Empirical CDFs on `grid` evenly spaced thresholds over `[0, 1]`, plus the exact statistic.
pub fn ks_chart(target: &[f64], confusing: &[f64], grid: usize) -> Result<KsCurve> {
    if grid < 2 {
        return Err(Error::Config(format!("grid = {grid}: need at least 2 thresholds")));
    }
    let (exact_ks, exact_threshold) = ks_exact(target, confusing)?;
    let mut a = target.to_vec();
    let mut b = confusing.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let cdf_target: Vec<f64> = thresholds.iter().map(|&t| ecdf(&a, t)).collect();
    let cdf_confusing: Vec<f64> = thresholds.iter().map(|&t| ecdf(&b, t)).collect();
    let gap: Vec<f64> = cdf_target.iter().zip(&cdf_confusing).map(|(x, y)| (x - y).abs()).collect();
    let (mut gi, mut gk) = (0, gap[0]);
    for (i, &g) in gap.iter().enumerate() {
        if g > gk {
            gi = i;
            gk = g;
        }
    }
    Ok(KsCurve {
        grid_threshold: thresholds[gi],
        grid_ks: gk,
        thresholds,
        cdf_target,
        cdf_confusing,
        gap,
        exact_ks,
        exact_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_have_zero_statistic() {
        let v = [0.1, 0.4, 0.4, 0.9];
        let c = ks_chart(&v, &v, 11).unwrap();
        assert_eq!(c.exact_ks, 0.0);
        assert_eq!(c.grid_ks, 0.0);
    }

    #[test]
    fn full_separation_has_unit_statistic() {
        let c = ks_chart(&[1.0; 5], &[0.0; 3], 101).unwrap();
        assert_eq!(c.exact_ks, 1.0);
        assert_eq!(c.exact_threshold, 0.0);
        assert_eq!(c.grid_ks, 1.0);
        // both CDFs reach 1 at t = 1
        assert_eq!(*c.gap.last().unwrap(), 0.0);
    }

    #[test]
    fn hand_example() {
        // F_a jumps at 0.2, 0.6; F_b at 0.4, 0.8 -> max gap 0.5 at t = 0.2
        let (ks, t) = ks_exact(&[0.2, 0.6], &[0.4, 0.8]).unwrap();
        assert_eq!((ks, t), (0.5, 0.2));
    }

    #[test]
    fn invalid_inputs() {
        assert!(ks_chart(&[], &[0.5], 10).is_err());
        assert!(ks_chart(&[1.5], &[0.5], 10).is_err());
        assert!(ks_chart(&[0.5], &[0.5], 1).is_err());
    }
}
