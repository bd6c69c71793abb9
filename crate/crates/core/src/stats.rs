//! Order-independent reductions for Monte Carlo output.

/// Pairwise (cascade) summation in index order. The association tree depends
/// only on the slice length, never on how the values were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 16;
    if xs.len() <= BASE {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        assert!(n > 0, "empty sample");
        // Shifting by the first sample keeps constant samples exact.
        let shift = xs[0];
        let shifted: Vec<f64> = xs.iter().map(|x| x - shift).collect();
        let offset = pairwise_sum(&shifted) / n as f64;
        let mean = shift + offset;
        let std_error = if n > 1 {
            let dev: Vec<f64> = shifted.iter().map(|x| (x - offset) * (x - offset)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        MeanEstimate { mean, std_error, count: n }
    }

    /// Half-width of the two-sided 95% normal interval.
    pub fn half_width(&self) -> f64 {
        1.96 * self.std_error
    }
}
