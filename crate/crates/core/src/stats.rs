//! Rank correlation, significance tests and multiple-testing correction.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Largest sample for which [`permutation_p_value`] enumerates all orderings.
pub const MAX_EXACT_PERMUTATION_N: usize = 10;

/// 1-based ranks with ties sharing the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1..=j)
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Pearson product-moment correlation. `None` when either side has zero
/// variance or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided p-value of a correlation coefficient using the t statistic
/// `r * sqrt((n-2)/(1-r^2))` with `n-2` degrees of freedom.
pub fn correlation_t_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

/// Exact two-sided permutation p-value for Spearman's rho, enumerating
/// every ordering of `y` against `x`. Intended for fixtures with
/// `n <= MAX_EXACT_PERMUTATION_N`.
pub fn permutation_p_value(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n > MAX_EXACT_PERMUTATION_N || n != y.len() {
        return None;
    }
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let observed = pearson(&rx, &ry)?.abs();
    let tol = 1e-12;
    let mut hits = 0u64;
    let mut total = 0u64;
    // Heap's algorithm over the rank vector of y.
    let mut c = vec![0usize; n];
    let mut visit = |ry: &[f64]| {
        total += 1;
        if pearson(&rx, ry).map_or(0.0, f64::abs) >= observed - tol {
            hits += 1;
        }
    };
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Some(hits as f64 / total as f64)
}

/// Bonferroni adjustment `min(1, m * p)`.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Two-sided p-value of a standard-normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return 0.0;
    }
    (2.0 * standard_normal().sf(z.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut m = Moments::default();
        for v in values {
            m.push(v);
        }
        m
    }

    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    fn centered_ss(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sum_sq - self.sum * self.sum / self.n as f64).max(0.0)
        }
    }
}

/// z test for a difference in means with the pooled variance of both samples.
/// Returns `None` when either sample has fewer than two values.
pub fn pooled_mean_z(sample: &Moments, reference: &Moments) -> Option<TestOutcome> {
    if sample.n < 2 || reference.n < 2 {
        return None;
    }
    let (n1, n2) = (sample.n as f64, reference.n as f64);
    let pooled_var = (sample.centered_ss() + reference.centered_ss()) / (n1 + n2 - 2.0);
    let diff = sample.mean() - reference.mean();
    let se = (pooled_var * (1.0 / n1 + 1.0 / n2)).sqrt();
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Some(TestOutcome {
        statistic: z,
        p_value: normal_two_sided_p(z),
    })
}

/// Two-proportion z test with the pooled proportion.
pub fn two_proportion_z(hits_a: usize, n_a: usize, hits_b: usize, n_b: usize) -> Option<TestOutcome> {
    if n_a == 0 || n_b == 0 {
        return None;
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let pa = hits_a as f64 / na;
    let pb = hits_b as f64 / nb;
    let pooled = (hits_a + hits_b) as f64 / (na + nb);
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    let z = if se > 0.0 { (pa - pb) / se } else { 0.0 };
    Some(TestOutcome {
        statistic: z,
        p_value: normal_two_sided_p(z),
    })
}

/// Kolmogorov distribution survival function `Q(lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Option<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let p = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Some(TestOutcome {
        statistic: d,
        p_value: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_identity_and_inverse() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(spearman(&x, &x), Some(1.0));
        assert_eq!(spearman(&x, &[6.0, 4.0, 2.0]), Some(-1.0));
    }

    #[test]
    fn spearman_zero_variance_is_undefined() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), None);
    }

    #[test]
    fn spearman_with_ties_matches_hand_ranks() {
        // x ranks 1,2.5,2.5,4 ; y ranks 1,2,3,4 ; Pearson of ranks by hand:
        // mean 2.5 both; dx = -1.5,0,0,1.5 ; dy = -1.5,-.5,.5,1.5
        // sxy = 2.25+0+0+2.25 = 4.5 ; sxx = 4.5 ; syy = 5 => 4.5/sqrt(22.5)
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r, 4.5 / 22.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bonferroni_examples() {
        assert_abs_diff_eq!(bonferroni(0.0001, 153), 0.0153, epsilon = 1e-12);
        assert_eq!(bonferroni(0.2, 10), 1.0);
    }

    #[test]
    fn t_p_value_reference_points() {
        // r = 0.5, n = 12: t = 0.5*sqrt(10/0.75) = 1.825742, df 10,
        // two-sided p = 0.097855 (scipy.stats.t.sf).
        assert_abs_diff_eq!(correlation_t_p_value(0.5, 12), 0.097855, epsilon = 1e-5);
        assert_eq!(correlation_t_p_value(1.0, 10), 0.0);
    }

    #[test]
    fn permutation_p_for_perfect_order() {
        // Only the identity and the reversal reach |rho| = 1 among 5! orders.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = permutation_p_value(&x, &x).unwrap();
        assert_abs_diff_eq!(p, 2.0 / 120.0, epsilon = 1e-12);
    }

    #[test]
    fn pooled_z_hand_computed() {
        // a = [1,2,3] mean 2 ss 2 ; b = [3,4,5] mean 4 ss 2
        // pooled var = 4/4 = 1 ; se = sqrt(2/3) ; z = -2/sqrt(2/3)
        let a = Moments::from_values([1.0, 2.0, 3.0]);
        let b = Moments::from_values([3.0, 4.0, 5.0]);
        let out = pooled_mean_z(&a, &b).unwrap();
        assert_abs_diff_eq!(out.statistic, -2.0 / (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(out.p_value, 0.014306, epsilon = 1e-5);
    }

    #[test]
    fn ks_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let out = ks_two_sample(&a, &a).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.p_value, 1.0);
        let far = ks_two_sample(&[1.0; 50], &[5.0; 50]).unwrap();
        assert_eq!(far.statistic, 1.0);
        assert!(far.p_value < 1e-10);
    }

    #[test]
    fn ks_with_ties_uses_step_functions() {
        // a ECDF at 1:0.5, 2:1 ; b ECDF at 1:0, 2:0.5, 3:1 -> D = 0.5
        let out = ks_two_sample(&[1.0, 2.0], &[2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(out.statistic, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn two_proportion_equal_is_null() {
        let out = two_proportion_z(10, 100, 20, 200).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.p_value, 1.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spearman_invariant_under_increasing_map(
                pairs in prop::collection::vec((0u8..20, 0u8..20), 3..40)
            ) {
                let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
                let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
                let y2: Vec<f64> = y.iter().map(|v| (v * 0.3).exp() + 7.0).collect();
                prop_assert_eq!(spearman(&x, &y), spearman(&x, &y2));
            }

            #[test]
            fn bonferroni_monotone(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, m in 1usize..500) {
                let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
                prop_assert!(bonferroni(lo, m) <= bonferroni(hi, m));
                prop_assert!(bonferroni(lo, m) >= lo);
            }
        }
    }
}
