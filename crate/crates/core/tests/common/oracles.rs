//! Brute-force reference implementations, deliberately structured differently
//! from the library's rolling-row dynamic programs.

use std::collections::HashMap;

/// Top-down memoized recursion over (i, j) suffix pairs.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Enumerates every subsequence of the shorter string (2^n subsets) and keeps
/// the longest one that is also a subsequence of the longer string.
pub fn lcs_len(a: &[char], b: &[char]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 20, "enumeration oracle is exponential");
    let is_subseq = |mask: u32| {
        let mut k = 0;
        for (i, c) in short.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            while k < long.len() && long[k] != *c {
                k += 1;
            }
            if k == long.len() {
                return false;
            }
            k += 1;
        }
        true
    };
    (0u32..(1 << short.len()))
        .filter(|&m| is_subseq(m))
        .map(|m| m.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

/// Enumerates every pair of start positions and, from each, runs an
/// unclamped prefix alignment; the best prefix score over all starts is the
/// best local alignment score (or 0 when nothing scores positively).
pub fn smith_waterman(a: &[char], b: &[char], matched: i64, mismatch: i64, gap: i64) -> i64 {
    let mut best = 0i64;
    for i0 in 0..a.len() {
        for j0 in 0..b.len() {
            let (sa, sb) = (&a[i0..], &b[j0..]);
            // table[i][j] = best global score aligning sa[..i] with sb[..j]
            let mut table = vec![vec![0i64; sb.len() + 1]; sa.len() + 1];
            for i in 0..=sa.len() {
                for j in 0..=sb.len() {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    let mut v = i64::MIN;
                    if i > 0 && j > 0 {
                        let s = if sa[i - 1] == sb[j - 1] { matched } else { mismatch };
                        v = v.max(table[i - 1][j - 1] + s);
                    }
                    if i > 0 {
                        v = v.max(table[i - 1][j] + gap);
                    }
                    if j > 0 {
                        v = v.max(table[i][j - 1] + gap);
                    }
                    table[i][j] = v;
                    best = best.max(v);
                }
            }
        }
    }
    best
}

/// Average ranks (1-based, ties share the mean rank) then Pearson on ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = r;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
