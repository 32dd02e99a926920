//! Slow, obviously-correct reference implementations for tests. Nothing
//! here shares code with the library under test.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Expected retained-quality means when rejecting `j = 0..=n` items highest
/// uncertainty first, averaging uniformly over every way to break ties by
/// enumerating the subsets of the boundary tie block.
pub fn brute_force_pr_curve(quality: &[f64], uncertainty: &[f64]) -> Vec<f64> {
    let n = quality.len();
    let mut levels: Vec<f64> = uncertainty.to_vec();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();
    let mut curve = Vec::with_capacity(n + 1);
    for j in 0..n {
        // walk tie blocks from highest uncertainty down
        let mut rejected_full: Vec<usize> = Vec::new();
        let mut boundary: Vec<usize> = Vec::new();
        let mut need = j;
        for &lvl in &levels {
            let block: Vec<usize> = (0..n).filter(|&i| uncertainty[i] == lvl).collect();
            if need >= block.len() {
                need -= block.len();
                rejected_full.extend(block);
            } else {
                boundary = block;
                break;
            }
        }
        let base_kept: Vec<usize> = (0..n)
            .filter(|i| !rejected_full.contains(i) && !boundary.contains(i))
            .collect();
        let mut total = 0.0;
        let mut ways = 0usize;
        for mask in 0u32..(1u32 << boundary.len()) {
            if mask.count_ones() as usize != need {
                continue;
            }
            let mut sum: f64 = base_kept.iter().map(|&i| quality[i]).sum();
            let mut count = base_kept.len();
            for (b, &i) in boundary.iter().enumerate() {
                if mask & (1 << b) == 0 {
                    sum += quality[i];
                    count += 1;
                }
            }
            total += sum / count as f64;
            ways += 1;
        }
        curve.push(total / ways as f64);
    }
    curve.push(curve[n - 1]);
    curve
}

/// Trapezoid area of `curve[0..n]` above the mean quality, spacing `1/n`.
pub fn brute_force_area(quality: &[f64], curve: &[f64]) -> f64 {
    let n = quality.len();
    let base = quality.iter().sum::<f64>() / n as f64;
    let mut area = 0.0;
    for j in 0..n - 1 {
        area += ((curve[j] + curve[j + 1]) / 2.0 - base) / n as f64;
    }
    area
}

pub fn brute_force_prr(quality: &[f64], uncertainty: &[f64]) -> f64 {
    let neg: Vec<f64> = quality.iter().map(|q| -q).collect();
    brute_force_area(quality, &brute_force_pr_curve(quality, uncertainty))
        / brute_force_area(quality, &brute_force_pr_curve(quality, &neg))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn brute_force_lcs<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    assert!(a.len() <= 20, "enumeration is exponential");
    let is_subseq = |sub: &[&S]| {
        let mut it = b.iter();
        sub.iter().all(|s| it.any(|x| x == *s))
    };
    let mut best = 0;
    for mask in 0u32..(1u32 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<&S> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if is_subseq(&sub) {
            best = len;
        }
    }
    best
}

/// ROUGE-L F1 from the brute-force LCS.
pub fn brute_force_rouge_l<S: PartialEq>(a: &[S], b: &[S]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let l = brute_force_lcs(a, b) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / a.len() as f64;
    let r = l / b.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean over ordered member pairs of `KL(P_i || P_j)`, straight double loop.
pub fn epkl_double_loop(members: &[Vec<f64>]) -> f64 {
    let m = members.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut kl = 0.0;
            for s in 0..members[i].len() {
                let p = members[i][s];
                let q = members[j][s];
                if p > 0.0 {
                    kl += p * (p / q).ln();
                }
            }
            acc += kl;
        }
    }
    acc / (m * (m - 1)) as f64
}

pub fn random_distribution<R: Rng>(rng: &mut R, support: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..support).map(|_| rng.random_range(0.01..1.0)).collect();
    let t: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / t).collect()
}

pub fn gaussian_points<R: Rng>(rng: &mut R, n: usize, center: &[f64], scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(rng);
                    c + scale * z
                })
                .collect()
        })
        .collect()
}

/// Random symmetric similarity matrix with entries in [0, 1] and unit diagonal.
pub fn random_similarity<R: Rng>(rng: &mut R, k: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; k]; k];
    for i in 0..k {
        s[i][i] = 1.0;
        for j in (i + 1)..k {
            let v = rng.random_range(0.0..=1.0);
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

/// Quality/uncertainty pairs with deliberate ties in both lists.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
    let q_levels = rng.random_range(2..=n.max(2));
    let u_levels = rng.random_range(1..=n.max(1));
    let quality = (0..n).map(|_| rng.random_range(0..q_levels) as f64 / (q_levels - 1) as f64).collect();
    let uncertainty = (0..n).map(|_| rng.random_range(0..u_levels) as f64 * 0.37 - 1.0).collect();
    (quality, uncertainty)
}
