//! Reference implementations kept deliberately naive and separate from the
//! library code they check.

use std::collections::HashMap;

/// Exact rational parsed from "p/q" or an integer literal.
pub fn fraction(s: &str) -> f64 {
    match s.split_once('/') {
        Some((p, q)) => p.trim().parse::<f64>().unwrap() / q.trim().parse::<f64>().unwrap(),
        None => s.trim().parse().unwrap(),
    }
}

/// Full-matrix edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        m[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = m[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = sub.min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
        }
    }
    m[a.len()][b.len()]
}

/// Full-matrix longest common subsequence length.
pub fn lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            m[i][j] = if a[i - 1] == b[j - 1] {
                m[i - 1][j - 1] + 1
            } else {
                m[i - 1][j].max(m[i][j - 1])
            };
        }
    }
    m[a.len()][b.len()]
}

pub fn norm(s: &str) -> String {
    let mut out = s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    while out.chars().last().is_some_and(|c| !c.is_alphanumeric() && !c.is_whitespace()) {
        out.pop();
    }
    out.trim().to_string()
}

pub fn tokens(s: &str) -> Vec<String> {
    norm(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn f_measure(hits: usize, np: usize, ng: usize) -> f64 {
    if hits == 0 {
        return 0.0;
    }
    let p = hits as f64 / np as f64;
    let r = hits as f64 / ng as f64;
    2.0 * p * r / (p + r)
}

fn max_over(gts: &[String], f: impl Fn(&str) -> f64) -> f64 {
    gts.iter().map(|g| f(g)).fold(0.0, f64::max)
}

pub fn anls(pred: &str, gts: &[String]) -> f64 {
    max_over(gts, |g| {
        let (a, b) = (norm(pred), norm(g));
        let (la, lb) = (a.chars().count(), b.chars().count());
        if la == 0 && lb == 0 {
            return 1.0;
        }
        if la == 0 || lb == 0 {
            return 0.0;
        }
        let s = 1.0 - levenshtein(&a, &b) as f64 / la.max(lb) as f64;
        if s >= 0.5 { s } else { 0.0 }
    })
}

pub fn token_f1(pred: &str, gts: &[String]) -> f64 {
    max_over(gts, |g| {
        let (a, b) = (tokens(pred), tokens(g));
        if a.is_empty() && b.is_empty() {
            return 1.0;
        }
        let mut counts: HashMap<&str, isize> = HashMap::new();
        for t in &b {
            *counts.entry(t).or_default() += 1;
        }
        let mut hits = 0;
        for t in &a {
            let c = counts.entry(t).or_default();
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
        f_measure(hits, a.len(), b.len())
    })
}

pub fn rouge_l(pred: &str, gts: &[String]) -> f64 {
    max_over(gts, |g| {
        let (a, b) = (tokens(pred), tokens(g));
        if a.is_empty() && b.is_empty() {
            return 1.0;
        }
        f_measure(lcs(&a, &b), a.len(), b.len())
    })
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Contrastive loss written term by term: for each positive, minus the log
/// of its softmax share against itself plus all negatives, averaged.
pub fn contrastive(query: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for p in positives {
        let top = (cos(query, p) / tau).exp();
        let mut bottom = top;
        for n in negatives {
            bottom += (cos(query, n) / tau).exp();
        }
        total += -(top / bottom).ln();
    }
    total / positives.len() as f64
}

/// `W x` for a row-major `rows x x.len()` matrix.
pub fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..x.len()).map(|c| w[r * x.len() + c] * x[c]).sum())
        .collect()
}

/// Central finite-difference gradient of the oracle loss with respect to `W`.
pub fn contrastive_fd_grad(
    w: &[f64],
    rows: usize,
    query: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    eps: f64,
) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            probe[i] = w[i] + eps;
            let up = contrastive(&matvec(&probe, rows, query), positives, negatives, tau);
            probe[i] = w[i] - eps;
            let down = contrastive(&matvec(&probe, rows, query), positives, negatives, tau);
            probe[i] = w[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}
