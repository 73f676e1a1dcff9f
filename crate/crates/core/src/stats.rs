//! Shared numeric primitives: compensated summation, log-domain reductions,
//! and the incomplete-beta machinery behind exact binomial intervals.

/// Compensated sum (Neumaier's variant of Kahan summation; also tracks
/// error when the running sum is smaller than the addend).
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean via compensated summation. Returns 0 for an empty slice.
pub fn kahan_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    kahan_sum(values.iter().copied()) / values.len() as f64
}

/// Per-coordinate mean of row-major data, compensated.
pub fn column_means(data: &[f64], dim: usize) -> Vec<f64> {
    assert!(dim > 0 && data.len() % dim == 0);
    let rows = data.len() / dim;
    let mut sums = vec![0.0; dim];
    let mut comps = vec![0.0; dim];
    for r in 0..rows {
        for j in 0..dim {
            let v = data[r * dim + j];
            let t = sums[j] + v;
            if sums[j].abs() >= v.abs() {
                comps[j] += (sums[j] - t) + v;
            } else {
                comps[j] += (v - t) + sums[j];
            }
            sums[j] = t;
        }
    }
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let total = sums[j] + comps[j];
        out.push(if rows > 0 { total / rows as f64 } else { 0.0 });
    }
    out
}

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(sum(exp(xs))) without overflow; NEG_INFINITY for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum = kahan_sum(xs.iter().map(|&x| (x - hi).exp()));
    hi + sum.ln()
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// ln C(n, k) for real n ≥ k ≥ 0.
pub fn ln_binomial(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    kahan_sum(v.iter().map(|x| x * x)).sqrt()
}

/// Log-density of N(mean, sd²) at x.
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
///
/// Accuracy is ~1e-14 over (0,1) for the moderate (a, b) this crate uses.
pub fn incomplete_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cont_frac(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cont_frac(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

// Modified Lentz continued fraction for the incomplete beta.
fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
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
    for m in 1..=300 {
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

/// Quantile of Beta(a, b): smallest x with I_x(a, b) ≥ p.
///
/// a = 1 and b = 1 use closed forms so the k = 0 / k = n binomial bounds are
/// exact to machine precision.
pub fn beta_inv(p: f64, a: f64, b: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "quantile level outside [0,1]");
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    if a == 1.0 {
        // I_x(1, b) = 1 - (1-x)^b
        return -libm::expm1(libm::log1p(-p) / b);
    }
    if b == 1.0 {
        // I_x(a, 1) = x^a
        return (p.ln() / a).exp();
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if incomplete_beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// 16-point Gauss-Legendre rule on [-1, 1] (abscissae, weights).
const GL16_X: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL16_W: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

/// log ∫_a^b exp(f(t)) dt by composite 16-point Gauss-Legendre, evaluated
/// entirely in the log domain. Panel count doubles until successive
/// estimates agree to `tol` (absolute, in log space).
pub fn log_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    assert!(b > a);
    let mut panels = ((b - a).ceil() as usize).clamp(4, 1 << 20);
    let mut prev = f64::NAN;
    for _ in 0..12 {
        let h = (b - a) / panels as f64;
        let ln_half_h = (0.5 * h).ln();
        let mut terms = Vec::with_capacity(panels * 16);
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            for i in 0..8 {
                let dx = 0.5 * h * GL16_X[i];
                let ln_w = GL16_W[i].ln() + ln_half_h;
                terms.push(ln_w + f(mid + dx));
                terms.push(ln_w + f(mid - dx));
            }
        }
        let est = log_sum_exp(&terms);
        if !prev.is_nan() && (est - prev).abs() <= tol {
            return est;
        }
        prev = est;
        panels *= 2;
    }
    prev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_handles_catastrophic_order() {
        let vals = vec![1e16, 1.0, -1e16];
        assert_eq!(kahan_sum(vals), 1.0);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [0.1, -2.0, 3.5];
        let direct = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_large_magnitudes() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn ln_binomial_small_cases() {
        assert!((ln_binomial(5.0, 2.0) - 10.0f64.ln()).abs() < 1e-12);
        assert!((ln_binomial(10.0, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_uniform_is_identity() {
        for &x in &[0.1, 0.25, 0.5, 0.9] {
            assert!((incomplete_beta_reg(1.0, 1.0, x) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn incomplete_beta_symmetry() {
        // I_x(a,b) = 1 - I_{1-x}(b,a)
        for &(a, b, x) in &[(3.0, 7.0, 0.2), (12.0, 4.0, 0.7), (50.0, 51.0, 0.42)] {
            let lhs = incomplete_beta_reg(a, b, x);
            let rhs = 1.0 - incomplete_beta_reg(b, a, 1.0 - x);
            assert!((lhs - rhs).abs() < 1e-13, "a={a} b={b} x={x}");
        }
    }

    #[test]
    fn incomplete_beta_matches_binomial_cdf() {
        // P(Bin(n,p) <= k) = I_{1-p}(n-k, k+1)
        let n = 20u64;
        let p = 0.3f64;
        for k in 0..n {
            let direct: f64 = (0..=k)
                .map(|j| {
                    (ln_binomial(n as f64, j as f64)
                        + j as f64 * p.ln()
                        + (n - j) as f64 * (1.0 - p).ln())
                    .exp()
                })
                .sum();
            let via_beta = incomplete_beta_reg((n - k) as f64, k as f64 + 1.0, 1.0 - p);
            assert!((direct - via_beta).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn beta_inv_round_trips() {
        for &(a, b) in &[(2.5, 7.0), (40.0, 2.0), (13.0, 13.0)] {
            for &p in &[0.01, 0.3, 0.5, 0.77, 0.999] {
                let x = beta_inv(p, a, b);
                assert!((incomplete_beta_reg(a, b, x) - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn beta_inv_closed_forms() {
        let n = 100.0;
        let x = beta_inv(0.95, 1.0, n);
        assert!((x - (1.0 - 0.05f64.powf(1.0 / n))).abs() < 1e-14);
        let y = beta_inv(0.05, n, 1.0);
        assert!((y - 0.05f64.powf(1.0 / n)).abs() < 1e-14);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn beta_quantile_round_trips(
                a in 0.5f64..60.0,
                b in 0.5f64..60.0,
                p in 0.001f64..0.999,
            ) {
                let x = beta_inv(p, a, b);
                prop_assert!((0.0..=1.0).contains(&x));
                prop_assert!((incomplete_beta_reg(a, b, x) - p).abs() < 1e-9);
            }

            #[test]
            fn compensated_sum_matches_exact_integer_sum(
                xs in proptest::collection::vec(-1_000_000i64..1_000_000, 0..200),
            ) {
                let exact: i64 = xs.iter().sum();
                let float = kahan_sum(xs.iter().map(|&v| v as f64));
                prop_assert_eq!(float, exact as f64);
            }
        }
    }

    #[test]
    fn log_integrate_gaussian_mass() {
        // ∫ N(0,1) over [-10,10] = 1
        let est = log_integrate(|t| normal_log_pdf(t, 0.0, 1.0), -10.0, 10.0, 1e-13);
        assert!(est.abs() < 1e-12);
    }

    #[test]
    fn log_integrate_shifted_scale() {
        // ∫ exp(x) over [0, 3] = e^3 - 1
        let est = log_integrate(|t| t, 0.0, 3.0, 1e-13);
        assert!((est - (3.0f64.exp() - 1.0).ln()).abs() < 1e-11);
    }
}
