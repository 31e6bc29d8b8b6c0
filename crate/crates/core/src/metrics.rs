//! Partition agreement and recovery statistics.
//!
//! Adjusted mutual information uses the `max(H(a), H(b))` normalizer. Other
//! normalizers (arithmetic or geometric mean) give slightly higher values on
//! the same inputs, so compare AMI figures only when they use the same
//! variant. The expected mutual information is computed exactly from the
//! hypergeometric model.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relabels arbitrary block labels to `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn same_up_to_relabeling(a: &[usize], b: &[usize]) -> bool {
    let (ca, _) = compact(a);
    let (cb, _) = compact(b);
    ca == cb
}

fn entropy(margins: &[usize], n: f64) -> f64 {
    margins
        .iter()
        .filter(|&&m| m > 0)
        .map(|&m| {
            let p = m as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Contingency table of two labelings over the same units.
pub fn contingency(a: &[usize], b: &[usize]) -> Result<Vec<Vec<usize>>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let (ca, ka) = compact(a);
    let (cb, kb) = compact(b);
    let mut table = vec![vec![0; kb]; ka];
    for (&i, &j) in ca.iter().zip(&cb) {
        table[i][j] += 1;
    }
    Ok(table)
}

/// Expected mutual information of two random labelings with the given block
/// sizes, each over `n` units.
pub fn expected_mutual_information(rows: &[usize], cols: &[usize], n: usize) -> f64 {
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &ai in rows {
        for &bj in cols {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let term = nij as f64 / nf * (nf * nij as f64 / (ai as f64 * bj as f64)).ln();
                let ln_p = ln_fact[ai] + ln_fact[bj] + ln_fact[n - ai] + ln_fact[n - bj]
                    - ln_fact[n]
                    - ln_fact[nij]
                    - ln_fact[ai - nij]
                    - ln_fact[bj - nij]
                    - ln_fact[n + nij - ai - bj];
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information between two labelings of the same units.
///
/// Returns exactly 1.0 when the labelings are equal up to renaming blocks,
/// and 0.0 when the normalizer vanishes otherwise.
pub fn ami(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("AMI needs at least one unit".into()));
    }
    if same_up_to_relabeling(a, b) {
        return Ok(1.0);
    }
    let n = a.len();
    let nf = n as f64;
    let table = contingency(a, b)?;
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                mi += nij as f64 / nf * (nf * nij as f64 / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    let emi = expected_mutual_information(&rows, &cols, n);
    let denom = entropy(&rows, nf).max(entropy(&cols, nf)) - emi;
    if denom.abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok(((mi - emi) / denom).clamp(-1.0, 1.0))
}

/// Per-block recovery rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    /// One rate per block, in partition order.
    pub rates: Vec<f64>,
    /// Majority true cluster of each block.
    pub assigned: Vec<usize>,
    pub perfect_fraction: f64,
    /// Ten bins; bin `i` counts rates in `(i/10, (i+1)/10]`.
    pub histogram: [usize; 10],
}

/// For each block, the sessions covered by its members from the block's
/// majority true cluster, divided by the sessions in which that cluster
/// appears at all. Members of other clusters do not add coverage.
pub fn recovery_rates(partition: &[Vec<usize>], truth: &[usize], sessions: &[usize]) -> Result<Recovery> {
    if truth.len() != sessions.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: sessions.len() });
    }
    let mut cluster_sessions: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    for (&k, &s) in truth.iter().zip(sessions) {
        cluster_sessions.entry(k).or_default().insert(s);
    }
    let mut rates = Vec::with_capacity(partition.len());
    let mut assigned = Vec::with_capacity(partition.len());
    let mut histogram = [0usize; 10];
    for block in partition {
        if let Some(&u) = block.iter().find(|&&u| u >= truth.len()) {
            return Err(Error::DeadUnit(u));
        }
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &u in block {
            *votes.entry(truth[u]).or_default() += 1;
        }
        // BTreeMap iterates ascending, so max_by_key keeping the first max
        // resolves ties to the smaller cluster id
        let Some(k) = votes.iter().rev().max_by_key(|(_, &c)| c).map(|(&k, _)| k) else {
            return Err(Error::InvalidInput("empty block".into()));
        };
        let covered: BTreeSet<usize> = block.iter().filter(|&&u| truth[u] == k).map(|&u| sessions[u]).collect();
        let rate = covered.len() as f64 / cluster_sessions[&k].len() as f64;
        let bin = ((rate * 10.0).ceil() as usize).clamp(1, 10) - 1;
        histogram[bin] += 1;
        rates.push(rate);
        assigned.push(k);
    }
    let perfect = rates.iter().filter(|&&r| r >= 1.0).count();
    let perfect_fraction = if rates.is_empty() { 0.0 } else { perfect as f64 / rates.len() as f64 };
    Ok(Recovery { rates, assigned, perfect_fraction, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_relabeled() {
        let a = [0, 0, 1, 1, 2];
        assert_eq!(ami(&a, &a).unwrap(), 1.0);
        assert_eq!(ami(&a, &[7, 7, 3, 3, 9]).unwrap(), 1.0);
        assert_eq!(ami(&[0; 4], &[5; 4]).unwrap(), 1.0);
        assert_eq!(ami(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn one_block_against_structure_is_zero() {
        assert_eq!(ami(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn crossed_two_by_two() {
        // [[2,0],[0,2]] against [[1,1],[1,1]] shares no information
        let v = ami(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        // MI = 0; EMI over 2x2 margins of 2 on 4 units is ln(2)/3
        let emi = 2f64.ln() / 3.0;
        let expect = (0.0 - emi) / (2f64.ln() - emi);
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }

    #[test]
    fn universe_mismatch() {
        assert!(ami(&[0, 1], &[0]).is_err());
        assert!(ami(&[], &[]).is_err());
    }

    #[test]
    fn perfect_recovery() {
        let truth = [0, 0, 1, 1];
        let sessions = [0, 1, 0, 1];
        let r = recovery_rates(&[vec![0, 1], vec![2, 3]], &truth, &sessions).unwrap();
        assert_eq!(r.rates, vec![1.0, 1.0]);
        assert_eq!(r.perfect_fraction, 1.0);
        assert_eq!(r.histogram[9], 2);
    }

    #[test]
    fn split_cluster_halves() {
        let truth = [0; 4];
        let sessions = [0, 1, 2, 3];
        let r = recovery_rates(&[vec![0, 1], vec![2, 3]], &truth, &sessions).unwrap();
        assert_eq!(r.rates, vec![0.5, 0.5]);
        assert_eq!(r.perfect_fraction, 0.0);
        assert_eq!(r.histogram[4], 2);
    }

    #[test]
    fn majority_ties_go_to_smaller_cluster() {
        let truth = [3, 1, 1];
        let sessions = [0, 0, 1];
        let r = recovery_rates(&[vec![0, 1]], &truth, &sessions).unwrap();
        assert_eq!(r.assigned, vec![1]);
        assert_eq!(r.rates, vec![0.5]);
    }
}
