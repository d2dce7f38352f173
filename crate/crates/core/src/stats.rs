//! Paired t-tests with a hand-rolled Student-t distribution, plus boxplot
//! summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// P(T <= t) for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided tail probability P(|T| >= |t|).
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    incomplete_beta(df / 2.0, 0.5, x).min(1.0)
}

/// Inverse CDF by bracketing and bisection on the CDF.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0, 1)");
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, df);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("a paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub n: usize,
    /// Mean of a - b.
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// Infinite when every difference is the same nonzero value.
    pub t_stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub lcl: f64,
    pub ucl: f64,
    pub alpha: f64,
    /// Zero variance of the differences.
    pub degenerate: bool,
    pub reject: bool,
}

/// Two-sided paired t-test of H0: mean(a - b) = 0.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<PairedTestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let df = n - 1;
    // Variance below rounding noise of the mean counts as zero.
    let noise = 1e-12 * d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sd <= noise {
        let (t_stat, p_value) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(PairedTestResult {
            n,
            mean_diff: mean,
            sd_diff: 0.0,
            t_stat,
            df,
            p_value,
            lcl: mean,
            ucl: mean,
            alpha,
            degenerate: true,
            reject: p_value < alpha,
        });
    }
    let se = sd / nf.sqrt();
    let t_stat = mean / se;
    let p_value = student_t_two_sided(t_stat, df as f64);
    let half = student_t_quantile(1.0 - alpha / 2.0, df as f64) * se;
    Ok(PairedTestResult {
        n,
        mean_diff: mean,
        sd_diff: sd,
        t_stat,
        df,
        p_value,
        lcl: mean - half,
        ucl: mean + half,
        alpha,
        degenerate: false,
        reject: p_value < alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme points within 1.5 IQR of the box.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// None for empty input.
pub fn boxplot_summary(values: &[f64]) -> Option<BoxplotSummary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= fence_lo && *x <= fence_hi).collect();
    Some(BoxplotSummary {
        n: v.len(),
        min: v[0],
        q1,
        median: quantile_sorted(&v, 0.5),
        q3,
        max: v[v.len() - 1],
        // never inside the box itself
        lower_whisker: inside.first().copied().map_or(q1, |w| w.min(q1)),
        upper_whisker: inside.last().copied().map_or(q3, |w| w.max(q3)),
        outliers: v.iter().copied().filter(|x| *x < fence_lo || *x > fence_hi).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn ln_gamma_small_integers() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n = {n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn cdf_closed_forms() {
        // df = 1 is Cauchy; df = 2 has F(t) = 1/2 + t / (2 sqrt(2 + t^2)).
        for &t in &[-30.0, -3.0, -0.7, 0.0, 0.2, 1.0, 4.5, 100.0] {
            let cauchy = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!(rel(student_t_cdf(t, 1.0), cauchy) < 1e-10, "df1 t={t}");
            let two = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!(rel(student_t_cdf(t, 2.0), two) < 1e-10, "df2 t={t}");
        }
    }

    #[test]
    fn quantiles_match_tables() {
        let table = [
            (1.0, [3.077_683_537, 6.313_751_515, 12.706_204_736, 31.820_515_954]),
            (2.0, [1.885_618_083, 2.919_985_580, 4.302_652_730, 6.964_556_734]),
            (10.0, [1.372_183_641, 1.812_461_123, 2.228_138_852, 2.763_769_458]),
            (30.0, [1.310_415_025, 1.697_260_887, 2.042_272_456, 2.457_261_542]),
        ];
        for (df, qs) in table {
            for (level, want) in [0.90, 0.95, 0.975, 0.99].iter().zip(qs) {
                let got = student_t_quantile(*level, df);
                assert!(rel(got, want) < 1e-8, "df={df} level={level}: {got} vs {want}");
                assert!((student_t_cdf(got, df) - level).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn worked_paired_example() {
        let r = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0], 0.05).unwrap();
        assert_eq!(r.mean_diff, 2.0);
        assert!((r.t_stat - 3.464_101_615).abs() < 1e-8);
        assert!((r.p_value - 0.074_179_900).abs() < 1e-7);
        assert!((r.lcl + 0.484_137_712).abs() < 1e-6);
        assert!((r.ucl - 4.484_137_712).abs() < 1e-6);
        assert!(!r.reject && !r.degenerate);
    }

    #[test]
    fn degenerate_cases() {
        let same = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.05).unwrap();
        assert!(same.degenerate && !same.reject);
        assert_eq!((same.p_value, same.lcl, same.ucl), (1.0, 0.0, 0.0));

        let shifted = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0], 0.05).unwrap();
        assert!(shifted.degenerate && shifted.reject);
        assert_eq!((shifted.p_value, shifted.lcl, shifted.ucl), (0.0, 1.0, 1.0));
    }

    #[test]
    fn input_errors() {
        assert_eq!(paired_t_test(&[1.0], &[1.0], 0.05), Err(StatsError::TooFewPairs(1)));
        assert_eq!(paired_t_test(&[1.0, 2.0], &[1.0], 0.05), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(paired_t_test(&[1.0, 2.0], &[1.0, 3.0], 1.5), Err(StatsError::BadAlpha(1.5)));
    }

    #[test]
    fn boxplots() {
        let b = boxplot_summary(&[100.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!((b.lower_whisker, b.upper_whisker), (1.0, 4.0));
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!((b.min, b.max), (1.0, 100.0));

        let one = boxplot_summary(&[7.0]).unwrap();
        assert_eq!((one.q1, one.median, one.q3, one.lower_whisker, one.upper_whisker), (7.0, 7.0, 7.0, 7.0, 7.0));
        assert_eq!(boxplot_summary(&[1.0, 2.0, 3.0, 4.0]).unwrap().median, 2.5);
        assert!(boxplot_summary(&[]).is_none());

        // Only outliers below q1: the whisker stops at the box.
        let b = boxplot_summary(&[0.0, 592.0, 614.0, 846.0]).unwrap();
        assert_eq!(b.lower_whisker, b.q1);
        assert_eq!(b.outliers, vec![0.0]);
    }
}
