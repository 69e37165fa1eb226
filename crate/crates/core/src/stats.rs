//! Small statistics toolbox: sample summaries, least squares on log-log
//! clouds, and the two-sample Kolmogorov–Smirnov test used by the
//! acceptance harness.

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_stderr(samples: &[f64]) -> MeanStderr {
    let n = samples.len();
    if n == 0 {
        return MeanStderr {
            mean: f64::NAN,
            stderr: f64::NAN,
            n: 0,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanStderr {
            mean,
            stderr: 0.0,
            n,
        };
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    MeanStderr {
        mean,
        stderr: (var / n as f64).sqrt(),
        n,
    }
}

/// Binomial standard error sqrt(p(1-p)/n).
pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Ordinary least squares y = a + b x.
#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
    pub n: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>();
    LineFit {
        slope,
        intercept,
        rms_residual: (ss / n).sqrt(),
        n: xs.len(),
    }
}

/// Two-sample Kolmogorov–Smirnov statistic sup |F_a - F_b|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic KS critical value c(alpha)·sqrt((n+m)/(nm)).
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fit_recovers_line() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys);
        assert_relative_eq!(fit.slope, -0.5, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, 3.0, max_relative = 1e-12);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn ks_identical_samples_zero() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![4.0, 3.0, 2.0, 1.0];
        assert_eq!(ks_two_sample(&a, &b), 0.0);
    }

    #[test]
    fn ks_known_value() {
        let a = vec![1.0, 1.0, 4.0, 4.0];
        let b = vec![1.0, 1.0, 1.0, 4.0];
        assert_relative_eq!(ks_two_sample(&a, &b), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn ks_critical_5_percent() {
        // c(0.05) = 1.3581
        let crit = ks_critical(2000, 2000, 0.05);
        assert_relative_eq!(
            crit,
            1.3581015157406195 * (2.0f64 / 2000.0).sqrt(),
            max_relative = 1e-6
        );
    }

    #[test]
    fn stderr_of_constant_sample_is_zero() {
        let s = mean_stderr(&[2.0, 2.0, 2.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.stderr, 0.0);
    }
}
