//! Small statistics helpers: entropy, total variation, chi-square tail.

/// Empirical entropy of a label sequence, in nats.
pub fn label_entropy(labels: &[usize], num_classes: usize) -> f64 {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Total variation distance between two discrete distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Natural log of the gamma function (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    // g = 7, n = 9 coefficients
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x).
fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series expansion
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction (x >= a+1).
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Survival function of the chi-square distribution: P(X > x) with `df` degrees.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    (1.0 - gamma_p(df / 2.0, x / 2.0)).clamp(0.0, 1.0)
}

/// Pearson chi-square independence test on a contingency table (rows x cols).
/// Returns (statistic, p-value). Rows/cols with zero totals are dropped.
pub fn chi2_independence(table: &[Vec<usize>]) -> (f64, f64) {
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let ncols = table.first().map_or(0, |r| r.len());
    let mut col_tot = vec![0.0; ncols];
    for row in table {
        for (j, &v) in row.iter().enumerate() {
            col_tot[j] += v as f64;
        }
    }
    let n: f64 = row_tot.iter().sum();
    let live_rows: Vec<usize> = (0..table.len()).filter(|&i| row_tot[i] > 0.0).collect();
    let live_cols: Vec<usize> = (0..ncols).filter(|&j| col_tot[j] > 0.0).collect();
    if n == 0.0 || live_rows.len() < 2 || live_cols.len() < 2 {
        return (0.0, 1.0);
    }
    let mut stat = 0.0;
    for &i in &live_rows {
        for &j in &live_cols {
            let expected = row_tot[i] * col_tot[j] / n;
            let diff = table[i][j] as f64 - expected;
            stat += diff * diff / expected;
        }
    }
    let df = ((live_rows.len() - 1) * (live_cols.len() - 1)) as f64;
    (stat, chi2_sf(stat, df))
}
