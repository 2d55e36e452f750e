//! Small statistics helpers shared by reports and the acceptance suite.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Average ranks (1-based), ties share the mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut r = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Tie-corrected Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return 0.0;
    }
    pearson(&ranks(a), &ranks(b))
}

/// AUC for separating `pos` from `neg` by value (probability that a random
/// `pos` is smaller than a random `neg`; ties count half).
pub fn auc_smaller(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut wins = 0.0f64;
    for p in pos {
        for n in neg {
            if p < n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Fixed-width histogram over [lo, hi]; values outside clamp to edge bins.
pub fn histogram(xs: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<u64>) {
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &x in xs {
        let b = (((x - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    (edges, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn spearman_monotone() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let dec = [10.0, 8.0, 5.0, 2.0, 1.0];
        assert!((spearman(&a, &dec) + 1.0).abs() < 1e-12);
        let inc = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!((spearman(&a, &inc) - 1.0).abs() < 1e-12);
        // one adjacent swap in 5 points -> ±0.9
        let swapped = [8.0, 10.0, 5.0, 2.0, 1.0];
        assert!((spearman(&a, &swapped) + 0.9).abs() < 1e-12);
    }

    #[test]
    fn auc_separation() {
        let pos = [0.1, 0.2];
        let neg = [0.5, 0.9];
        assert_eq!(auc_smaller(&pos, &neg), 1.0);
        assert_eq!(auc_smaller(&neg, &pos), 0.0);
        assert_eq!(auc_smaller(&pos, &pos), 0.5);
    }

    #[test]
    fn histogram_bins() {
        let (edges, counts) = histogram(&[0.05, 0.15, 0.95, 1.5], 0.0, 1.0, 10);
        assert_eq!(edges.len(), 11);
        assert_eq!(counts[0], 1);
        assert_eq!(counts[1], 1);
        assert_eq!(counts[9], 2); // 0.95 and clamped 1.5
    }
}
