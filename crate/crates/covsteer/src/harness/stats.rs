//! Small statistics helpers for the experiment tables.

/// Mean of a nonempty slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median via the midpoint rule on a sorted copy.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Interquartile range using linear interpolation between order statistics.
pub fn iqr(xs: &[f64]) -> f64 {
    quantile(xs, 0.75) - quantile(xs, 0.25)
}

fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.len() == 1 {
        return v[0];
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// One-sided sign test: probability of at least `wins` successes in `n`
/// fair coin flips. Ties must be excluded by the caller.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0f64;
    for k in wins..=n {
        p += binomial(n, k);
    }
    p / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// First crossing of `goal` on a piecewise-linear coverage curve of
/// (tests, coverage) points, interpolated within the crossing segment.
pub fn tests_to_goal_interpolated(points: &[(u64, f64)], goal: f64) -> Option<f64> {
    let mut prev: Option<(u64, f64)> = None;
    for (tests, cov) in points {
        if *cov >= goal {
            return Some(match prev {
                None => *tests as f64,
                Some((pt, pc)) => {
                    let dc = cov - pc;
                    if dc <= 0.0 {
                        *tests as f64
                    } else {
                        pt as f64 + (goal - pc) / dc * (*tests - pt) as f64
                    }
                }
            });
        }
        prev = Some((*tests, *cov));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_matches_hand_binomials() {
        // 9 of 10 wins: (C(10,9) + C(10,10)) / 2^10 = 11/1024.
        let p = sign_test_p(9, 10);
        assert!((p - 11.0 / 1024.0).abs() < 1e-12);
        // 8 of 10: (45 + 10 + 1)/1024.
        let p = sign_test_p(8, 10);
        assert!((p - 56.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p(0, 10) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_and_iqr_basics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2.0);
    }

    #[test]
    fn interpolation_crosses_within_batch() {
        let points = [(50, 40.0), (150, 80.0), (250, 96.0)];
        // Crossing 90 between 150 and 250: 150 + (10/16)*100 = 212.5.
        let t = tests_to_goal_interpolated(&points, 90.0).unwrap();
        assert!((t - 212.5).abs() < 1e-9);
        // Goal met at the first checkpoint uses its raw count.
        assert_eq!(tests_to_goal_interpolated(&points, 30.0), Some(50.0));
        assert_eq!(tests_to_goal_interpolated(&points, 99.0), None);
    }
}
