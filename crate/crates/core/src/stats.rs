//! Compensated accumulation and small statistical helpers shared by the
//! Monte Carlo estimators.

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.575_829_303_548_900_4;

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// First and second (cross) moments of a fixed-length vector of per-sample
/// quantities. Mergeable, so block reductions give the same answer as a
/// sequential pass up to compensated-summation round-off.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    k: usize,
    n: u64,
    sums: Vec<CompensatedSum>,
    cross: Vec<CompensatedSum>,
}

impl Moments {
    pub fn new(k: usize) -> Self {
        Moments {
            k,
            n: 0,
            sums: vec![CompensatedSum::default(); k],
            cross: vec![CompensatedSum::default(); k * k],
        }
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, q: &[f64]) {
        debug_assert_eq!(q.len(), self.k);
        self.n += 1;
        for i in 0..self.k {
            self.sums[i].add(q[i]);
            for j in i..self.k {
                self.cross[i * self.k + j].add(q[i] * q[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        assert_eq!(self.k, other.k);
        self.n += other.n;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            a.merge(b);
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sums[i].value() / self.n as f64
    }

    /// Unbiased sample covariance of quantities `i` and `j`.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.n as f64;
        if self.n < 2 {
            return 0.0;
        }
        let raw = self.cross[i * self.k + j].value() - n * self.mean(i) * self.mean(j);
        raw / (n - 1.0)
    }

    /// Standard error of the sample mean of `Σ_i c_i q_i`.
    pub fn stderr_of(&self, coeffs: &[f64]) -> f64 {
        let mut var = 0.0;
        for (i, &ci) in coeffs.iter().enumerate() {
            if ci == 0.0 {
                continue;
            }
            for (j, &cj) in coeffs.iter().enumerate() {
                if cj != 0.0 {
                    var += ci * cj * self.cov(i, j);
                }
            }
        }
        (var.max(0.0) / self.n as f64).sqrt()
    }

    pub fn stderr(&self, i: usize) -> f64 {
        let mut c = vec![0.0; self.k];
        c[i] = 1.0;
        self.stderr_of(&c)
    }
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Ordinary least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
