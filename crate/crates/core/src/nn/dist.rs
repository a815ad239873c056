//! Action distributions and the divergences used for distillation.

use crate::error::{Error, Result};

/// Tempered softmax `exp((l_i - max)/T) / Σ`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log softmax` at temperature 1, computed stably.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// KL divergence of the tempered teacher distribution from the untempered
/// student distribution: `Σ_k p_k ln(p_k / q_k)` with `p = softmax(t/T)` and
/// `q = softmax(s)`.
pub fn kl_softmax(teacher_logits: &[f64], student_logits: &[f64], temperature: f64) -> Result<f64> {
    Ok(kl_softmax_with_grad(teacher_logits, student_logits, temperature)?.0)
}

/// KL as in [`kl_softmax`] plus its gradient with respect to the student
/// logits, which is `softmax(s) - p`.
pub fn kl_softmax_with_grad(
    teacher_logits: &[f64],
    student_logits: &[f64],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::domain(format!(
            "teacher has {} logits, student has {}",
            teacher_logits.len(),
            student_logits.len()
        )));
    }
    let p = softmax(teacher_logits, temperature)?;
    let log_q = log_softmax(student_logits);
    let scaled: Vec<f64> = teacher_logits.iter().map(|&l| l / temperature).collect();
    let log_p = log_softmax(&scaled);
    let kl = p
        .iter()
        .zip(log_p.iter().zip(&log_q))
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, (&lp, &lq))| pk * (lp - lq))
        .sum::<f64>();
    let grad = log_q
        .iter()
        .zip(&p)
        .map(|(&lq, &pk)| lq.exp() - pk)
        .collect();
    Ok((kl, grad))
}

/// Diagonal Gaussian given by per-dimension mean and log standard deviation.
#[derive(Clone, Copy, Debug)]
pub struct DiagGaussian<'a> {
    pub mean: &'a [f64],
    pub log_std: &'a [f64],
}

/// Closed-form `KL(teacher || student)` summed over dimensions, plus the
/// gradient with respect to the student's mean and log-std.
pub fn kl_gaussian_with_grad(
    teacher: DiagGaussian<'_>,
    student: DiagGaussian<'_>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = teacher.mean.len();
    if teacher.log_std.len() != d || student.mean.len() != d || student.log_std.len() != d {
        return Err(Error::domain("Gaussian parameter dimensions do not match"));
    }
    let mut kl = 0.0;
    let mut d_mean = vec![0.0; d];
    let mut d_log_std = vec![0.0; d];
    for k in 0..d {
        let var_t = (2.0 * teacher.log_std[k]).exp();
        let var_s = (2.0 * student.log_std[k]).exp();
        let diff = student.mean[k] - teacher.mean[k];
        let ratio = (var_t + diff * diff) / var_s;
        kl += student.log_std[k] - teacher.log_std[k] + 0.5 * ratio - 0.5;
        d_mean[k] = diff / var_s;
        d_log_std[k] = 1.0 - ratio;
    }
    Ok((kl, d_mean, d_log_std))
}

pub fn kl_gaussian(teacher: DiagGaussian<'_>, student: DiagGaussian<'_>) -> Result<f64> {
    Ok(kl_gaussian_with_grad(teacher, student)?.0)
}

/// Log density of a diagonal Gaussian and its gradient w.r.t. mean and log-std.
pub fn gaussian_log_prob_with_grad(dist: DiagGaussian<'_>, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut lp = 0.0;
    let mut d_mean = Vec::with_capacity(x.len());
    let mut d_log_std = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let std = dist.log_std[k].exp();
        let z = (x[k] - dist.mean[k]) / std;
        lp += -0.5 * z * z - dist.log_std[k] - 0.5 * ln_2pi;
        d_mean.push(z / std);
        d_log_std.push(z * z - 1.0);
    }
    (lp, d_mean, d_log_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.3, 0.3, 0.3, 0.3], 1.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let p = softmax(&[3f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);

        // exp(0.05) / (1 + exp(0.05)) = 0.512497...
        let p = softmax(&[5.0, 0.0], 100.0).unwrap();
        assert!((p[0] - 0.5).abs() < 0.02);
        assert!((p[0] - 0.512_497_396_484_5).abs() < 1e-12);

        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::Domain(_))));
        assert!(softmax(&[1.0], -1.0).is_err());
    }

    #[test]
    fn kl_softmax_examples() {
        assert_eq!(
            kl_softmax(&[0.2, -1.0, 3.0], &[0.2, -1.0, 3.0], 1.0).unwrap(),
            0.0
        );

        let expected = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        let kl = kl_softmax(&[2f64.ln(), 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((kl - expected).abs() < 1e-15);

        assert!(kl_softmax(&[1.0, 2.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn kl_gaussian_examples() {
        let m = [0.4, -1.0];
        let s = [0.1, -0.3];
        let same = DiagGaussian {
            mean: &m,
            log_std: &s,
        };
        assert_eq!(kl_gaussian(same, same).unwrap(), 0.0);

        let t = DiagGaussian {
            mean: &[1.0],
            log_std: &[0.0],
        };
        let st = DiagGaussian {
            mean: &[0.0],
            log_std: &[0.0],
        };
        assert!((kl_gaussian(t, st).unwrap() - 0.5).abs() < 1e-15);

        assert!(kl_gaussian(t, same).is_err());
    }

    #[test]
    fn kl_gaussian_matches_monte_carlo() {
        let (mt, lt) = (0.3f64, 0.2f64);
        let (ms, ls) = (-0.4f64, -0.1f64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(mt, lt.exp()).unwrap();
        let logp = |x: f64, m: f64, l: f64| {
            let z = (x - m) / l.exp();
            -0.5 * z * z - l
        };
        let n = 1_000_000;
        let est = (0..n)
            .map(|_| {
                let x = normal.sample(&mut rng);
                logp(x, mt, lt) - logp(x, ms, ls)
            })
            .sum::<f64>()
            / n as f64;
        let exact = kl_gaussian(
            DiagGaussian {
                mean: &[mt],
                log_std: &[lt],
            },
            DiagGaussian {
                mean: &[ms],
                log_std: &[ls],
            },
        )
        .unwrap();
        assert!(
            ((est - exact) / exact).abs() < 0.01,
            "mc {est} exact {exact}"
        );
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in prop::collection::vec(-50f64..50.0, 1..8),
            shift in -100f64..100.0,
            t in 0.05f64..10.0,
        ) {
            let p = softmax(&logits, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted, t).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_softmax_is_nonnegative_and_zero_iff_equal(
            t in prop::collection::vec(-10f64..10.0, 2..6),
            shift in -5f64..5.0,
        ) {
            let s: Vec<f64> = t.iter().map(|v| v * 0.5 - 1.0).collect();
            let kl = kl_softmax(&t, &s, 1.0).unwrap();
            prop_assert!(kl >= -1e-12);
            let p = softmax(&t, 1.0).unwrap();
            let q = softmax(&s, 1.0).unwrap();
            let gap = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap > 1e-4 {
                prop_assert!(kl > 1e-12);
            }

            let same: Vec<f64> = t.iter().map(|v| v + shift).collect();
            prop_assert!(kl_softmax(&t, &same, 1.0).unwrap().abs() < 1e-12);
        }
    }
}
