//! Welch's unequal-variance t-test and the Student t tail it needs.

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    pub p_two_sided: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample t-test without the equal-variance assumption.
///
/// Both samples constant: equal means give `t = 0, p = 1`; different means
/// are an error since t is unbounded.
pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<WelchResult, MetricsError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(MetricsError::InsufficientSamples { x: x.len(), y: y.len() });
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (m1, v1) = mean_var(x);
    let (m2, v2) = mean_var(y);
    if v1 == 0.0 && v2 == 0.0 {
        if m1 == m2 {
            return Ok(WelchResult {
                t: 0.0,
                dof: n1 + n2 - 2.0,
                p_two_sided: 1.0,
            });
        }
        return Err(MetricsError::ZeroVarianceBoth);
    }
    let (s1, s2) = (v1 / n1, v2 / n2);
    let t = (m1 - m2) / (s1 + s2).sqrt();
    let dof = (s1 + s2).powi(2) / (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0));
    Ok(WelchResult {
        t,
        dof,
        p_two_sided: student_t_two_sided_p(t, dof),
    })
}

/// `P(|T| >= |t|)` for Student's t with `dof` degrees of freedom, via
/// `I_{dof/(dof+t^2)}(dof/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_nan() || dof.is_nan() || dof <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(0.5 * dof, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-15 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)` by Lentz's continued fraction, using the symmetry
/// `I_x(a, b) = 1 - I_{1-x}(b, a)` where it converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

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
    for m in 1..=MAX_ITER {
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn worked_welch_example() {
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.dof - 8.0).abs() < 1e-12);
        assert!((r.p_two_sided - 0.3466).abs() < 1e-3);
    }

    #[test]
    fn identical_samples() {
        let r = welch_t_test(&[1.0, 4.0, 2.0], &[1.0, 4.0, 2.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_two_sided - 1.0).abs() < 1e-12);
        let r = welch_t_test(&[3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p_two_sided), (0.0, 1.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            welch_t_test(&[0.0, 0.0], &[1.0, 1.0]).unwrap_err(),
            MetricsError::ZeroVarianceBoth
        );
        assert_eq!(
            welch_t_test(&[1.0], &[1.0, 2.0]).unwrap_err(),
            MetricsError::InsufficientSamples { x: 1, y: 2 }
        );
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_tail_matches_statrs() {
        for &dof in &[1.0, 2.5, 8.0, 30.0, 143.0, 1000.0] {
            let dist = StudentsT::new(0.0, 1.0, dof).unwrap();
            for &t in &[0.0, 0.1, 0.5, 1.0, 1.96, 3.0, 7.5] {
                let expected = 2.0 * (1.0 - dist.cdf(t));
                let got = student_t_two_sided_p(t, dof);
                assert!((got - expected).abs() < 1e-10, "t={t} dof={dof}: {got} vs {expected}");
                assert!((student_t_two_sided_p(-t, dof) - got).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn t_tail_matches_quadrature() {
        // Simpson's rule on the t density over [0, |t|]
        let density = |x: f64, v: f64| {
            (ln_gamma((v + 1.0) / 2.0)
                - ln_gamma(v / 2.0)
                - 0.5 * (v * std::f64::consts::PI).ln()
                - (v + 1.0) / 2.0 * (1.0 + x * x / v).ln())
            .exp()
        };
        for &(t, v) in &[(1.0, 8.0), (2.2, 3.0), (0.7, 20.0)] {
            let n = 20_000;
            let h = t / n as f64;
            let mut s = density(0.0, v) + density(t, v);
            for i in 1..n {
                s += density(i as f64 * h, v) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let central = s * h / 3.0;
            assert!((student_t_two_sided_p(t, v) - (1.0 - 2.0 * central)).abs() < 1e-9);
        }
    }
}
