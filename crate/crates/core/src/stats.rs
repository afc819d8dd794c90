//! Contingency counts and empirical mutual information over binary features.
//!
//! All information quantities are in nats. The logarithm base only rescales
//! mutual information, so spanning-tree selection does not depend on it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::BinaryDataset;
use crate::{Error, Result};

/// Joint 2×2 counts of two binary features: `n[j][k]` is the number of
/// samples with `x_s = j` and `x_t = k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyCounts {
    pub n: [[u64; 2]; 2],
    pub total: u64,
}

impl ContingencyCounts {
    pub fn new(n: [[u64; 2]; 2]) -> Result<Self> {
        let total = n.iter().flatten().sum();
        if total < 1 {
            return Err(Error::Argument("contingency table is empty".into()));
        }
        Ok(ContingencyCounts { n, total })
    }

    pub fn row_sums(&self) -> [u64; 2] {
        [self.n[0][0] + self.n[0][1], self.n[1][0] + self.n[1][1]]
    }

    pub fn col_sums(&self) -> [u64; 2] {
        [self.n[0][0] + self.n[1][0], self.n[0][1] + self.n[1][1]]
    }

    pub fn transposed(&self) -> Self {
        ContingencyCounts {
            n: [[self.n[0][0], self.n[1][0]], [self.n[0][1], self.n[1][1]]],
            total: self.total,
        }
    }
}

fn and_popcount(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| u64::from((x & y).count_ones())).sum()
}

/// Exact joint counts of features `s` and `t` over all samples.
pub fn pair_counts(d: &BinaryDataset, s: usize, t: usize) -> Result<ContingencyCounts> {
    let v = d.n_features();
    if s == t {
        return Err(Error::Argument(format!("pair_counts needs two distinct features, got {s} twice")));
    }
    if s >= v || t >= v {
        return Err(Error::Argument(format!("feature index out of range: ({s}, {t}) with V = {v}")));
    }
    Ok(counts_unchecked(d, s, t))
}

fn counts_unchecked(d: &BinaryDataset, s: usize, t: usize) -> ContingencyCounts {
    let total = d.n_samples() as u64;
    let n11 = and_popcount(d.column(s), d.column(t));
    let n1s = d.ones(s) as u64;
    let n1t = d.ones(t) as u64;
    let n10 = n1s - n11;
    let n01 = n1t - n11;
    let n00 = total + n11 - n1s - n1t;
    ContingencyCounts {
        n: [[n00, n01], [n10, n11]],
        total,
    }
}

/// Empirical mutual information (nats) of a 2×2 table; empty cells contribute 0.
pub fn empirical_mi(c: &ContingencyCounts) -> f64 {
    let total = c.total as f64;
    let rows = c.row_sums();
    let cols = c.col_sums();
    let mut terms = [[0.0; 2]; 2];
    for j in 0..2 {
        for k in 0..2 {
            let njk = c.n[j][k];
            if njk == 0 {
                continue;
            }
            // p(j,k) / (p(j) p(k)) = n_jk * N / (n_j * n_k), formed from exact counts.
            let ratio = (njk as f64 * total) / (rows[j] as f64 * cols[k] as f64);
            terms[j][k] = (njk as f64 / total) * ratio.ln();
        }
    }
    // Diagonal and off-diagonal pairs are summed separately so that
    // transposing the table yields the same bits.
    (terms[0][0] + terms[1][1]) + (terms[0][1] + terms[1][0])
}

/// Empirical entropy (nats) of one binary feature.
pub fn entropy(d: &BinaryDataset, col: usize) -> f64 {
    let n = d.n_samples() as f64;
    let ones = d.ones(col) as f64;
    [ones, n - ones]
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).ln())
        .sum()
}

/// Symmetric V×V matrix of pairwise mutual information, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MiMatrix {
    v: usize,
    m: Vec<f64>,
}

impl MiMatrix {
    /// From a full row-major V×V matrix. The input must be symmetric with
    /// finite nonnegative entries; the diagonal is forced to 0.
    pub fn from_full(v: usize, m: Vec<f64>) -> Result<Self> {
        if v < 2 || m.len() != v * v {
            return Err(Error::Shape(format!("{} entries for a {v}x{v} MI matrix", m.len())));
        }
        let mut out = MiMatrix { v, m };
        for s in 0..v {
            out.m[s * v + s] = 0.0;
            for t in 0..s {
                let (a, b) = (out.m[s * v + t], out.m[t * v + s]);
                if a != b {
                    return Err(Error::Argument(format!("MI matrix not symmetric at ({s}, {t})")));
                }
                if !a.is_finite() || a < -1e-12 {
                    return Err(Error::Argument(format!("invalid MI value {a} at ({s}, {t})")));
                }
            }
        }
        Ok(out)
    }

    pub fn size(&self) -> usize {
        self.v
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.m[s * self.v + t]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in 0..self.v {
            let row: Vec<String> = (0..self.v).map(|t| self.get(s, t).to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    fn from_upper(v: usize, upper: Vec<Vec<f64>>) -> Self {
        let mut m = vec![0.0; v * v];
        for (s, row) in upper.into_iter().enumerate() {
            for (off, mi) in row.into_iter().enumerate() {
                let t = s + 1 + off;
                m[s * v + t] = mi;
                m[t * v + s] = mi;
            }
        }
        MiMatrix { v, m }
    }
}

fn mi_row(d: &BinaryDataset, s: usize) -> Vec<f64> {
    (s + 1..d.n_features())
        .map(|t| empirical_mi(&counts_unchecked(d, s, t)))
        .collect()
}

/// Pairwise mutual information of all features, computed in parallel over rows.
pub fn mi_matrix(d: &BinaryDataset) -> MiMatrix {
    let v = d.n_features();
    let upper: Vec<Vec<f64>> = (0..v).into_par_iter().map(|s| mi_row(d, s)).collect();
    MiMatrix::from_upper(v, upper)
}

/// Single-threaded [`mi_matrix`]; the result is identical bit for bit.
pub fn mi_matrix_sequential(d: &BinaryDataset) -> MiMatrix {
    let v = d.n_features();
    let upper: Vec<Vec<f64>> = (0..v).map(|s| mi_row(d, s)).collect();
    MiMatrix::from_upper(v, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn table(n: [[u64; 2]; 2]) -> ContingencyCounts {
        ContingencyCounts::new(n).unwrap()
    }

    #[test]
    fn counts_match_rows() {
        let d = BinaryDataset::from_rows(&[[0u8, 0], [0, 1], [1, 0], [1, 1]]).unwrap();
        let c = pair_counts(&d, 0, 1).unwrap();
        assert_eq!(c.n, [[1, 1], [1, 1]]);
        assert_eq!(c.total, 4);

        let d = BinaryDataset::from_rows(&[[1u8, 1]; 5]).unwrap();
        assert_eq!(pair_counts(&d, 0, 1).unwrap().n, [[0, 0], [0, 5]]);
        assert!(pair_counts(&d, 1, 1).is_err());
        assert!(pair_counts(&d, 0, 2).is_err());
    }

    #[test]
    fn mi_reference_values() {
        assert_eq!(empirical_mi(&table([[1, 1], [1, 1]])), 0.0);
        assert!((empirical_mi(&table([[2, 0], [0, 2]])) - std::f64::consts::LN_2).abs() < 1e-15);
        // mpmath evaluation of the four-term sum at 40 digits.
        let frozen = 0.19274475702175742;
        assert!((empirical_mi(&table([[40, 10], [10, 40]])) - frozen).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_has_zero_mi() {
        assert_eq!(empirical_mi(&table([[0, 0], [3, 7]])), 0.0);
        assert!(ContingencyCounts::new([[0, 0], [0, 0]]).is_err());
    }

    #[test]
    fn matrix_duplicate_vs_independent() {
        let rows: Vec<[u8; 3]> = (0..8u8).map(|i| [i & 1, i & 1, (i >> 1) & 1]).collect();
        let d = BinaryDataset::from_rows(&rows).unwrap();
        let m = mi_matrix(&d);
        assert!((m.get(0, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(m.get(0, 1) > m.get(0, 2));
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert_eq!(m.get(2, 2), 0.0);
    }

    #[test]
    fn two_feature_matrix() {
        let d = BinaryDataset::from_rows(&[[0u8, 0], [1, 1], [1, 0]]).unwrap();
        let m = mi_matrix(&d);
        assert_eq!(m.size(), 2);
        assert!(m.get(0, 1) > 0.0);
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn matrix_entries_match_single_pair() {
        let mut rng = crate::rng::stream(11, crate::rng::Stream::Synth);
        let rows: Vec<Vec<u8>> = (0..200)
            .map(|_| (0..6).map(|_| u8::from(rng.random_bool(0.4))).collect())
            .collect();
        let d = BinaryDataset::from_rows(&rows).unwrap();
        let m = mi_matrix(&d);
        for s in 0..6 {
            for t in 0..6 {
                if s != t {
                    assert_eq!(m.get(s, t), empirical_mi(&pair_counts(&d, s, t).unwrap()));
                }
            }
        }
        assert_eq!(m, mi_matrix_sequential(&d));
    }

    #[test]
    fn from_full_checks_symmetry() {
        assert!(MiMatrix::from_full(2, vec![0.0, 1.0, 0.5, 0.0]).is_err());
        assert!(MiMatrix::from_full(2, vec![9.0, 1.0, 1.0, 0.0]).unwrap().get(0, 0) == 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symmetric_and_nonnegative(a in 0u64..60, b in 0u64..60, c in 0u64..60, e in 1u64..60) {
                let t = table([[a, b], [c, e]]);
                let mi = empirical_mi(&t);
                prop_assert!(mi >= -1e-12);
                prop_assert_eq!(mi, empirical_mi(&t.transposed()));
            }

            #[test]
            fn copy_mi_equals_entropy(bits in prop::collection::vec(any::<bool>(), 1..300)) {
                let rows: Vec<[u8; 2]> = bits.iter().map(|&b| [u8::from(b), u8::from(b)]).collect();
                let d = BinaryDataset::from_rows(&rows).unwrap();
                let mi = empirical_mi(&pair_counts(&d, 0, 1).unwrap());
                prop_assert!((mi - entropy(&d, 0)).abs() < 1e-12);
            }
        }
    }
}
