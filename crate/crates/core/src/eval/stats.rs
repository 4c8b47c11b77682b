//! Fisher's exact test, exact McNemar and nominal Krippendorff's alpha.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("the test is undefined for an all-zero table")]
    EmptyTable,
    #[error("agreement needs at least two annotators")]
    TooFewAnnotators,
    #[error("no item carries two or more labels")]
    NoPairableItems,
    #[error("annotator rows have different lengths")]
    RaggedMatrix,
}

/// Paired correctness counts of two systems over one instance grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub both_true: u64,
    pub only_a_true: u64,
    pub only_b_true: u64,
    pub both_false: u64,
}

impl ContingencyTable2x2 {
    pub fn new(both_true: u64, only_a_true: u64, only_b_true: u64, both_false: u64) -> Self {
        ContingencyTable2x2 { both_true, only_a_true, only_b_true, both_false }
    }

    pub fn total(&self) -> u64 {
        self.both_true + self.only_a_true + self.only_b_true + self.both_false
    }

    /// [[both_true, only_a_true], [only_b_true, both_false]]
    pub fn cells(&self) -> [[u64; 2]; 2] {
        [[self.both_true, self.only_a_true], [self.only_b_true, self.both_false]]
    }

    pub fn transposed(&self) -> Self {
        ContingencyTable2x2 { only_a_true: self.only_b_true, only_b_true: self.only_a_true, ..*self }
    }
}

/// ln(k!) for k in 0..=n by running sums.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

fn ln_choose(lf: &[f64], n: u64, k: u64) -> f64 {
    lf[n as usize] - lf[k as usize] - lf[(n - k) as usize]
}

/// Relative slack when comparing table probabilities, as in common implementations.
const FISHER_REL_TOL: f64 = 1e-7;

/// Two-sided Fisher's exact p: total probability of the fixed-margin tables no
/// more probable than the observed one. Works in log space.
pub fn fisher_exact(table: &ContingencyTable2x2) -> Result<f64, StatsError> {
    let [[a, b], [c, d]] = table.cells();
    let n = a + b + c + d;
    if n == 0 {
        return Err(StatsError::EmptyTable);
    }
    let (r1, c1) = (a + b, a + c);
    let lf = ln_factorials(n);
    let logp = |x: u64| ln_choose(&lf, c1, x) + ln_choose(&lf, n - c1, r1 - x) - ln_choose(&lf, n, r1);
    let lo = (r1 + c1).saturating_sub(n);
    let hi = r1.min(c1);
    let observed = logp(a);
    let cutoff = observed + FISHER_REL_TOL.ln_1p();
    let mut terms: Vec<f64> = (lo..=hi).map(logp).filter(|lp| *lp <= cutoff).collect();
    if terms.is_empty() {
        return Ok(0.0);
    }
    terms.sort_by(f64::total_cmp);
    let max = *terms.last().unwrap();
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().clamp(0.0, 1.0))
}

/// Exact McNemar test on the discordant cells. Optional; it suits matched
/// pairs where Fisher's test treats the margins as independent.
pub fn mcnemar_exact(table: &ContingencyTable2x2) -> f64 {
    let (b, c) = (table.only_a_true, table.only_b_true);
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let lf = ln_factorials(n);
    let k = b.min(c);
    let ln_half = -(n as f64) * std::f64::consts::LN_2;
    let terms: Vec<f64> = (0..=k).map(|i| ln_choose(&lf, n, i) + ln_half).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail = (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()).exp();
    (2.0 * tail).min(1.0)
}

/// Nominal Krippendorff's alpha from an annotator x item matrix; `None` is a missing label.
///
/// Items with fewer than two labels are skipped. Unanimous labeling gives exactly 1.
pub fn krippendorff_alpha<L: Ord>(labels: &[Vec<Option<L>>]) -> Result<f64, StatsError> {
    if labels.len() < 2 {
        return Err(StatsError::TooFewAnnotators);
    }
    let items = labels[0].len();
    if labels.iter().any(|row| row.len() != items) {
        return Err(StatsError::RaggedMatrix);
    }
    let mut cats: BTreeMap<&L, usize> = BTreeMap::new();
    for v in labels.iter().flatten().flatten() {
        let next = cats.len();
        cats.entry(v).or_insert(next);
    }
    let k = cats.len();
    let mut o = vec![vec![0.0f64; k]; k];
    let mut pairable = false;
    for i in 0..items {
        let vals: Vec<usize> = labels.iter().filter_map(|row| row[i].as_ref()).map(|v| cats[v]).collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        pairable = true;
        let w = 1.0 / (m - 1) as f64;
        for (x, &p) in vals.iter().enumerate() {
            for (y, &q) in vals.iter().enumerate() {
                if x != y {
                    o[p][q] += w;
                }
            }
        }
    }
    if !pairable {
        return Err(StatsError::NoPairableItems);
    }
    let nc: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = nc.iter().sum();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for p in 0..k {
        for q in 0..k {
            if p != q {
                observed += o[p][q];
                expected += nc[p] * nc[q];
            }
        }
    }
    if observed == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_small_cases() {
        assert!((fisher_exact(&ContingencyTable2x2::new(5, 5, 5, 5)).unwrap() - 1.0).abs() < 1e-12);
        assert!((fisher_exact(&ContingencyTable2x2::new(1, 0, 0, 1)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fisher_exact(&ContingencyTable2x2::default()), Err(StatsError::EmptyTable));
        // Tea tasting: [[3,1],[1,3]] two-sided p = 34/70.
        assert!((fisher_exact(&ContingencyTable2x2::new(3, 1, 1, 3)).unwrap() - 34.0 / 70.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_large_table() {
        let t = ContingencyTable2x2::new(19051, 48, 2867, 390);
        let p = fisher_exact(&t).unwrap();
        assert!(p < 1e-3);
        // Reference value from an independent implementation.
        assert!((p / 1.9880379231146002e-274 - 1.0).abs() < 1e-6, "{p:e}");
        let q = fisher_exact(&t.transposed()).unwrap();
        assert!((p / q - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mcnemar_cases() {
        assert_eq!(mcnemar_exact(&ContingencyTable2x2::new(10, 0, 0, 3)), 1.0);
        // b=1, c=5: 2 * (1 + 6) / 64
        assert!((mcnemar_exact(&ContingencyTable2x2::new(0, 1, 5, 0)) - 14.0 / 64.0).abs() < 1e-12);
        assert!(mcnemar_exact(&ContingencyTable2x2::new(19051, 48, 2867, 390)) < 1e-3);
    }

    #[test]
    fn alpha_extremes() {
        let same = vec![vec![Some("a"), Some("b"), Some("a"), Some("b")]; 2];
        assert_eq!(krippendorff_alpha(&same).unwrap(), 1.0);
        let opposed = vec![
            vec![Some("a"), Some("b"), Some("a"), Some("b")],
            vec![Some("b"), Some("a"), Some("b"), Some("a")],
        ];
        assert!(krippendorff_alpha(&opposed).unwrap() < 0.0);
        let lonely = vec![vec![Some("a"), None], vec![None, Some("b")]];
        assert_eq!(krippendorff_alpha(&lonely), Err(StatsError::NoPairableItems));
        let one: Vec<Vec<Option<&str>>> = vec![vec![Some("a")]];
        assert_eq!(krippendorff_alpha(&one), Err(StatsError::TooFewAnnotators));
    }
}
