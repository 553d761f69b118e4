use msspeech::features::FeatureSet;
use msspeech::stats::{
    ks_exact_p, ks_two_sample, logistic_glm, pearson_one_sided, validate_features, KsMethod,
};
use msspeech::table::FeatureTable;
use msspeech::testkit::Cohort;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Scaled ECDF gap `max |cx n2 - cy n1|` by evaluating both ECDFs at every
/// pooled value.
fn brute_ks_scaled(x: &[f64], y: &[f64]) -> u64 {
    let (n1, n2) = (x.len() as i64, y.len() as i64);
    x.iter()
        .chain(y)
        .map(|&v| {
            let cx = x.iter().filter(|&&a| a <= v).count() as i64;
            let cy = y.iter().filter(|&&b| b <= v).count() as i64;
            (cx * n2 - cy * n1).unsigned_abs()
        })
        .max()
        .unwrap()
}

/// Counts monotone lattice paths that stay strictly inside the band, in exact
/// integer arithmetic.
fn path_count_p(n1: usize, n2: usize, c: u64) -> f64 {
    if c == 0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| ((i * n2) as i64 - (j * n1) as i64).unsigned_abs() < c;
    let mut paths = vec![vec![0u64; n2 + 1]; n1 + 1];
    for i in 0..=n1 {
        for j in 0..=n2 {
            if !inside(i, j) {
                continue;
            }
            paths[i][j] = if i == 0 && j == 0 {
                1
            } else {
                (if i > 0 { paths[i - 1][j] } else { 0 }) + (if j > 0 { paths[i][j - 1] } else { 0 })
            };
        }
    }
    let mut total = 1u64;
    for k in 0..n1 {
        total = total * (n2 + n1 - k) as u64 / (k + 1) as u64;
    }
    1.0 - paths[n1][n2] as f64 / total as f64
}

/// Enumerates every interleaving of the two samples.
fn enumerate_p(n1: usize, n2: usize, c: u64) -> f64 {
    let n = n1 + n2;
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        total += 1;
        let (mut i, mut j, mut best) = (0i64, 0i64, 0u64);
        for b in 0..n {
            if mask >> b & 1 == 1 {
                i += 1;
            } else {
                j += 1;
            }
            best = best.max((i * n2 as i64 - j * n1 as i64).unsigned_abs());
        }
        if best >= c {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn ks_statistic_matches_brute_force_and_p_matches_path_counts() {
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = rng.random_range(1..=20);
        let n2 = rng.random_range(1..=20);
        let shift = rng.random_range(0.0..1.5);
        let x = normals(&mut rng, n1);
        let y: Vec<f64> = normals(&mut rng, n2).into_iter().map(|v| v + shift).collect();
        let r = ks_two_sample(&x, &y).unwrap();
        let c = brute_ks_scaled(&x, &y);
        assert_eq!(r.d_statistic, c as f64 / (n1 * n2) as f64);
        assert_eq!(r.method, KsMethod::Exact);
        assert!((r.p_value - path_count_p(n1, n2, c)).abs() < 1e-6, "seed {seed}");
    }
}

#[test]
fn ks_twenty_each() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = normals(&mut rng, 20);
    let y: Vec<f64> = normals(&mut rng, 20).into_iter().map(|v| v + 0.8).collect();
    let r = ks_two_sample(&x, &y).unwrap();
    let c = brute_ks_scaled(&x, &y);
    assert_eq!(r.d_statistic, c as f64 / 400.0);
    assert!((r.p_value - path_count_p(20, 20, c)).abs() < 1e-6);
}

#[test]
fn ks_exact_p_matches_enumeration() {
    for (n1, n2) in [(1, 1), (2, 3), (4, 4), (3, 7), (6, 6)] {
        for c in 0..=(n1 * n2) as u64 {
            let want = enumerate_p(n1, n2, c);
            assert!((ks_exact_p(n1, n2, c) - want).abs() < 1e-12, "{n1} {n2} {c}");
        }
    }
}

#[test]
fn ks_ties_fall_back_to_asymptotic() {
    let r = ks_two_sample(&[1.0, 2.0, 2.0, 3.0], &[2.0, 4.0, 5.0]).unwrap();
    assert!(r.ties);
    assert_eq!(r.method, KsMethod::Asymptotic);
    assert_eq!(r.d_statistic, brute_ks_scaled(&[1.0, 2.0, 2.0, 3.0], &[2.0, 4.0, 5.0]) as f64 / 12.0);
}

proptest! {
    #[test]
    fn ks_symmetric_and_rank_invariant(
        x in prop::collection::vec(-100.0f64..100.0, 1..30),
        y in prop::collection::vec(-100.0f64..100.0, 1..30),
    ) {
        let a = ks_two_sample(&x, &y).unwrap();
        let b = ks_two_sample(&y, &x).unwrap();
        prop_assert_eq!(a.d_statistic, b.d_statistic);
        let tx: Vec<f64> = x.iter().map(|v| (v / 40.0).exp() * 3.0 + 1.0).collect();
        let ty: Vec<f64> = y.iter().map(|v| (v / 40.0).exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(ks_two_sample(&tx, &ty).unwrap().d_statistic, a.d_statistic);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }
}

/// Upper tail of Student's t by quadrature on `t = tan θ`, normalized by the
/// same integral over the whole line.
fn t_upper_tail(t: f64, df: f64) -> f64 {
    let f = |theta: f64| {
        let u = theta.tan();
        let c = theta.cos();
        (1.0 + u * u / df).powf(-(df + 1.0) / 2.0) / (c * c)
    };
    let simpson = |a: f64, b: f64| {
        let m = 200_000;
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for k in 1..m {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2 - 1e-9;
    simpson(t.atan(), half) / simpson(-half, half)
}

#[test]
fn pearson_matches_definitional_oracle() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let x = normals(&mut rng, n);
        let rho = 0.1 + 0.2 * seed as f64;
        let y: Vec<f64> = x
            .iter()
            .map(|&a| rho * a + (1.0 - rho * rho).sqrt() * normal(&mut rng))
            .collect();
        let nf = n as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let r_want = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx) * (nf * syy - sy * sy)).sqrt();
        let t = r_want * ((nf - 2.0) / (1.0 - r_want * r_want)).sqrt();
        let p_want = t_upper_tail(t, nf - 2.0);
        let got = pearson_one_sided(&x, &y).unwrap();
        assert!((got.r - r_want).abs() < 1e-8);
        assert!((got.p_one_sided - p_want).abs() < 1e-8, "{} vs {p_want}", got.p_one_sided);
        assert_eq!(got.n, n);
    }
}

#[test]
fn pearson_affine_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = normals(&mut rng, 30);
    let y: Vec<f64> = x.iter().map(|a| a + rng.random_range(-1.0..1.0)).collect();
    let base = pearson_one_sided(&x, &y).unwrap();
    let xa: Vec<f64> = x.iter().map(|a| 3.5 * a - 20.0).collect();
    assert!((pearson_one_sided(&xa, &y).unwrap().r - base.r).abs() < 1e-12);
    let neg: Vec<f64> = y.iter().map(|b| -b).collect();
    assert!((pearson_one_sided(&x, &neg).unwrap().r + base.r).abs() < 1e-12);
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Textbook IRLS: regress the working response on the design with weights
/// `mu (1 - mu)`.
fn oracle_irls(x: &[Vec<f64>], y: &[bool]) -> Vec<f64> {
    let n = x.len();
    let p = x[0].len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for j in 0..p {
        let c: Vec<f64> = x.iter().map(|r| r[j]).collect();
        let m = c.iter().sum::<f64>() / n as f64;
        let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        cols.push(c.iter().map(|v| (v - m) / sd).collect());
    }
    let k = p + 1;
    let mut beta = vec![0.0; k];
    for _ in 0..100 {
        let eta: Vec<f64> = (0..n).map(|i| (0..k).map(|j| cols[j][i] * beta[j]).sum()).collect();
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let z: Vec<f64> = (0..n)
            .map(|i| eta[i] + ((y[i] as u8 as f64) - mu[i]) / w[i])
            .collect();
        let a: Vec<Vec<f64>> = (0..k)
            .map(|r| (0..k).map(|c| (0..n).map(|i| w[i] * cols[r][i] * cols[c][i]).sum()).collect())
            .collect();
        let b: Vec<f64> = (0..k).map(|r| (0..n).map(|i| w[i] * cols[r][i] * z[i]).sum()).collect();
        let next = solve(a, b);
        let delta = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        if delta < 1e-13 {
            break;
        }
    }
    beta
}

#[test]
fn glm_matches_hand_rolled_irls() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 80;
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(-5.0..5.0), 100.0 + 20.0 * rng.random::<f64>()])
        .collect();
    let y: Vec<bool> = x
        .iter()
        .map(|r| rng.random::<f64>() < sigmoid(0.4 * (r[0] - 5.0) - 0.3 * r[1] + 0.02 * (r[2] - 110.0)))
        .collect();
    let got = logistic_glm(&x, &y, &["a", "b", "c"]).unwrap();
    assert!(got.converged);
    let want = oracle_irls(&x, &y);
    for (c, w) in got.coefficients.iter().zip(&want) {
        assert!((c.coefficient - w).abs() < 1e-6, "{} {} vs {w}", c.name, c.coefficient);
        assert!(c.std_error > 0.0);
    }
    assert_eq!(got.coefficients[0].name, "(intercept)");
}

#[test]
fn glm_mirrored_predictor_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..60 {
        let a = normal(&mut rng);
        let b: f64 = rng.random_range(0.5..3.0);
        let lab = rng.random::<f64>() < sigmoid(1.5 * a);
        for s in [1.0, -1.0] {
            x.push(vec![a, s * b]);
            y.push(lab);
        }
    }
    let got = logistic_glm(&x, &y, &["a", "mirrored"]).unwrap();
    assert!(got.converged);
    assert!(got.get("mirrored").unwrap().coefficient.abs() < 1e-6);
}

#[test]
fn glm_strong_predictor_is_significant_and_scale_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| vec![normal(&mut rng), normal(&mut rng)])
        .collect();
    let y: Vec<bool> = x.iter().map(|r| rng.random::<f64>() < sigmoid(1.5 * r[0])).collect();
    let a = logistic_glm(&x, &y, &["strong", "noise"]).unwrap();
    assert!(a.get("strong").unwrap().p_two_sided < 0.001);
    let scaled: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * 1000.0, r[1] * 0.01 + 5.0]).collect();
    let b = logistic_glm(&scaled, &y, &["strong", "noise"]).unwrap();
    for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((u.p_two_sided - v.p_two_sided).abs() < 1e-6);
    }
}

fn table(values: &[[f64; 12]]) -> FeatureTable {
    let mut t = FeatureTable::with_all_features();
    for (i, v) in values.iter().enumerate() {
        t.push_features(&format!("s{i:02}"), Cohort::Control, 40.0, 0, &FeatureSet::from_array(*v));
    }
    t
}

#[test]
fn validation_identity_and_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vals: Vec<[f64; 12]> = (0..25)
        .map(|_| std::array::from_fn(|k| 10.0 * (k + 1) as f64 * (1.0 + rng.random::<f64>())))
        .collect();
    let auto = table(&vals);
    let same = validate_features(&auto, &auto).unwrap();
    assert_eq!(same.len(), 12);
    assert!(same.iter().all(|(_, r)| r.r == 1.0 && r.p_one_sided == 0.0));
    let names: Vec<&str> = same.iter().map(|(n, _)| n.as_str()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);

    let noisy: Vec<[f64; 12]> = vals
        .iter()
        .map(|v| std::array::from_fn(|k| v[k] * (1.0 + 0.02 * normal(&mut rng))))
        .collect();
    let res = validate_features(&auto, &table(&noisy)).unwrap();
    assert!(res.iter().all(|(_, r)| r.r > 0.9));

    let few = table(&vals[..2]);
    assert!(validate_features(&auto, &few).is_err());
    let other = FeatureTable::new(vec!["unrelated".into()]);
    assert!(validate_features(&auto, &other).is_err());
}
