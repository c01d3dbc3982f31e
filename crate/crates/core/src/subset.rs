//! Best N-average and best ≤N-average: exhaustive search over equally
//! weighted subsets of forecasters, scored by in-sample log score.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forecast::{CombinationMethod, MixtureWeights};
use crate::optimizer::DensityMatrix;
use crate::penalty::PenaltySpec;

/// Lexicographic iterator over the `size`-element subsets of `0..n`.
#[derive(Clone, Debug)]
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, size: usize) -> Self {
        let current = (size <= n).then(|| (0..size).collect());
        Self { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().unwrap();
        let size = cur.len();
        let mut i = size;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if cur[i] < self.n - size + i {
                cur[i] += 1;
                for j in i + 1..size {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Binomial coefficient `C(n, r)`.
pub fn binomial(n: usize, r: usize) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Number of subsets a best ≤`nmax` search evaluates: `sum_{n=1..nmax} C(k, n)`.
pub fn candidate_count(k: usize, nmax: usize) -> u64 {
    (1..=nmax.min(k)).map(|n| binomial(k, n)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetResult {
    /// Sorted forecaster indices.
    pub members: Vec<usize>,
    pub size: usize,
    /// `-(1/T) sum_t log` of the equal-weight subset mixture density.
    pub in_sample_objective: f64,
    pub weights: MixtureWeights,
}

/// `-(1/T) sum_t log((1/n) sum_{k in members} f_{k,t})`.
pub fn equal_weight_objective(densities: &DensityMatrix, members: &[usize]) -> f64 {
    let sums: Vec<f64> = (0..densities.num_rows())
        .map(|t| {
            let row = densities.row(t);
            members.iter().map(|&k| row[k]).sum()
        })
        .collect();
    mean_neg_log_average(&sums, members.len())
}

/// `-(1/T) sum_t log(sums[t] / n)`, taking one log per block of products
/// instead of one per round.
fn mean_neg_log_average(sums: &[f64], n: usize) -> f64 {
    let n = n as f64;
    let mut logs = 0.0;
    let mut prod = 1.0;
    for &s in sums {
        let avg = s / n;
        if avg < 1e-100 {
            logs += avg.ln();
            continue;
        }
        prod *= avg;
        if prod < 1e-200 {
            logs += prod.ln();
            prod = 1.0;
        }
    }
    logs += prod.ln();
    -logs / sums.len() as f64
}

#[derive(Clone, Debug)]
struct Candidate {
    objective: f64,
    members: Vec<usize>,
}

/// Lower objective first, then the lexicographically smaller index set.
fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.objective.total_cmp(&b.objective).then_with(|| a.members.cmp(&b.members))
}

fn keep_better(slot: &mut Option<Candidate>, cand: Candidate) {
    match slot {
        Some(cur) if candidate_order(cur, &cand) != Ordering::Greater => {}
        _ => *slot = Some(cand),
    }
}

fn merge(mut a: Vec<Option<Candidate>>, b: Vec<Option<Candidate>>) -> Vec<Option<Candidate>> {
    for (slot, c) in a.iter_mut().zip(b) {
        if let Some(c) = c {
            keep_better(slot, c);
        }
    }
    a
}

struct Search<'a> {
    /// Densities transposed so each forecaster's column is contiguous.
    columns: Vec<Vec<f64>>,
    /// `wanted[n]` is true when subsets of size n should be scored.
    wanted: &'a [bool],
    max_size: usize,
}

impl Search<'_> {
    /// Depth-first extension of `members` using indices after the last member.
    /// `levels[0]` holds the per-round density sums of the current members;
    /// the remaining levels are scratch space for deeper calls.
    fn descend(&self, members: &mut Vec<usize>, levels: &mut [Vec<f64>], best: &mut [Option<Candidate>]) {
        let n = members.len();
        let (current, deeper) = levels.split_first_mut().expect("one level per member");
        if self.wanted[n] {
            let objective = mean_neg_log_average(current, n);
            // subsets of one size arrive in lexicographic order, so a tie keeps the earlier one
            if best[n].as_ref().is_none_or(|b| objective < b.objective) {
                best[n] = Some(Candidate {
                    objective,
                    members: members.clone(),
                });
            }
        }
        if n == self.max_size {
            return;
        }
        let k = self.columns.len();
        let start = members.last().map_or(0, |m| m + 1);
        for j in start..k {
            // stop once no wanted size is reachable from here
            if !self.wanted[n + 1..].iter().take(k - j).any(|w| *w) {
                break;
            }
            for ((dst, s), f) in deeper[0].iter_mut().zip(current.iter()).zip(&self.columns[j]) {
                *dst = s + f;
            }
            members.push(j);
            self.descend(members, deeper, best);
            members.pop();
        }
    }
}

/// Best equal-weight subset of every requested size, in the order requested.
///
/// Enumeration is split by smallest member index and run on the rayon pool.
/// The reduction keeps a total order over (objective, index set), so the
/// result does not depend on the number of workers.
pub fn best_by_size(densities: &DensityMatrix, sizes: &[usize]) -> Result<Vec<SubsetResult>> {
    let k = densities.num_cols();
    if densities.num_rows() == 0 {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < 1 || n > k) {
        return Err(Error::Dimension { expected: k, got: n });
    }
    let Some(&max_size) = sizes.iter().max() else {
        return Ok(Vec::new());
    };
    let mut wanted = vec![false; k + 1];
    for &n in sizes {
        wanted[n] = true;
    }
    let t = densities.num_rows();
    let search = Search {
        columns: (0..k).map(|j| (0..t).map(|s| densities.get(s, j)).collect()).collect(),
        wanted: &wanted,
        max_size,
    };
    let best = (0..k)
        .into_par_iter()
        .map(|first| {
            let mut best = vec![None; k + 1];
            let mut levels = vec![vec![0.0; t]; max_size];
            levels[0].copy_from_slice(&search.columns[first]);
            search.descend(&mut vec![first], &mut levels, &mut best);
            best
        })
        .reduce(|| vec![None; k + 1], merge);

    sizes
        .iter()
        .map(|&n| {
            let cand = best[n].clone().expect("every size in 1..=K has at least one subset");
            to_result(cand, k, CombinationMethod::BestN(n))
        })
        .collect()
}

fn to_result(cand: Candidate, k: usize, method: CombinationMethod) -> Result<SubsetResult> {
    let size = cand.members.len();
    let mut w = vec![0.0; k];
    for &m in &cand.members {
        w[m] = 1.0 / size as f64;
    }
    Ok(SubsetResult {
        size,
        in_sample_objective: cand.objective,
        weights: MixtureWeights::new(w, method, PenaltySpec::none())?,
        members: cand.members,
    })
}

/// Historically best equally weighted average of exactly `n` forecasters.
pub fn best_n_average(densities: &DensityMatrix, n: usize) -> Result<SubsetResult> {
    Ok(best_by_size(densities, &[n])?.remove(0))
}

/// Historically best equally weighted average of at most `nmax` forecasters.
pub fn best_le_n_average(densities: &DensityMatrix, nmax: usize) -> Result<SubsetResult> {
    let sizes: Vec<usize> = (1..=nmax).collect();
    if nmax < 1 {
        return Err(Error::Dimension {
            expected: densities.num_cols(),
            got: nmax,
        });
    }
    let per_size = best_by_size(densities, &sizes)?;
    let best = per_size
        .into_iter()
        .map(|r| Candidate {
            objective: r.in_sample_objective,
            members: r.members,
        })
        .min_by(candidate_order)
        .expect("nmax >= 1");
    to_result(best, densities.num_cols(), CombinationMethod::BestLeN(nmax))
}
