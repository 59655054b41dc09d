//! Brute-force reference implementations, independent of the library's code paths.

use std::collections::HashMap;

/// Edit distance by memoized recursion over suffixes.
pub fn levenshtein(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let d = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], b, memo)
                .min(go(a, &b[1..], memo))
                .min(go(&a[1..], &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), d);
        d
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, &mut HashMap::new())
}

fn is_subsequence(sub: &[&str], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == s))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<&str> = (0..a.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| a[i].as_str())
                .collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

/// Multiset intersection size of the n-grams, by removing matches one at a time.
pub fn ngram_overlap(a: &[String], b: &[String], n: usize) -> usize {
    let grams = |t: &[String]| -> Vec<Vec<String>> {
        if t.len() < n {
            vec![]
        } else {
            (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
        }
    };
    let mut pool = grams(b);
    let mut hits = 0;
    for g in grams(a) {
        if let Some(pos) = pool.iter().position(|p| *p == g) {
            pool.swap_remove(pos);
            hits += 1;
        }
    }
    hits
}

/// All strings over `alphabet` with length 0..=max_len.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s| alphabet.iter().map(move |c| format!("{s}{c}")))
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

/// Dense W + U·Vᵀ with explicit index loops.
pub fn dense_low_rank(w: &[Vec<f64>], u: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, n, r) = (w.len(), w[0].len(), u[0].len());
    let mut out = w.to_vec();
    for i in 0..m {
        for j in 0..n {
            for k in 0..r {
                out[i][j] += u[i][k] * v[j][k];
            }
        }
    }
    out
}
