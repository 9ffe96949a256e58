//! One-sided Wilcoxon rank-sum significance testing and the report/curve
//! generation that turns per-seed run records into ranked accuracy tables.
//!
//! The alternative hypothesis throughout is "sample `a` is stochastically
//! greater than sample `b`"; the p-value is P(rank sum of `a` >= observed)
//! under the null. Small pooled samples are enumerated exactly; larger ones
//! use the normal approximation with midranks, tie-corrected variance and a
//! continuity correction.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::runner::RunRecord;

/// Pooled sizes up to this use exact enumeration; C(16, 8) = 12870 subsets
/// keeps the oracle well under a second.
pub const EXACT_ENUMERATION_LIMIT: usize = 16;

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least 2 observations per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample("non-finite observation".into()));
    }
    let first = a[0];
    if a.iter().chain(b).all(|&v| v == first) {
        return Err(Error::DegenerateSample(
            "all pooled observations identical; rank-sum variance is zero".into(),
        ));
    }
    Ok(())
}

/// Midranks (1-based, ties averaged) of the pooled sample, doubled so they
/// stay integers: a tie-averaged rank k + 1/2 becomes 2k + 1.
fn pooled_ranks_doubled(a: &[f64], b: &[f64]) -> (Vec<i64>, i64) {
    let n = a.len();
    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .chain(b)
        .copied()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite values"));
    let total = pooled.len();
    let mut doubled = vec![0i64; total];
    let mut i = 0;
    while i < total {
        let mut j = i + 1;
        while j < total && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // average of ranks i+1 ..= j, doubled: (i + 1 + j)
        let rank2 = (i + 1 + j) as i64;
        for item in &pooled[i..j] {
            doubled[item.1] = rank2;
        }
        i = j;
    }
    let w_obs: i64 = doubled[..n].iter().sum();
    (doubled, w_obs)
}

/// Exact one-sided p-value by enumerating every assignment of pooled ranks
/// to sample `a`. Usable when `a.len() + b.len()` is small.
pub fn rank_sum_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let (ranks2, w_obs) = pooled_ranks_doubled(a, b);
    let total = ranks2.len();
    let n = a.len();

    // count size-n subsets of ranks2 with sum >= w_obs
    fn count(ranks: &[i64], start: usize, remaining: usize, sum: i64, target: i64, hits: &mut u64, all: &mut u64) {
        if remaining == 0 {
            *all += 1;
            if sum >= target {
                *hits += 1;
            }
            return;
        }
        if ranks.len() - start < remaining {
            return;
        }
        count(ranks, start + 1, remaining - 1, sum + ranks[start], target, hits, all);
        count(ranks, start + 1, remaining, sum, target, hits, all);
    }

    let mut hits = 0u64;
    let mut all = 0u64;
    count(&ranks2, 0, n, 0, w_obs, &mut hits, &mut all);
    debug_assert_eq!(all, binomial(total, n));
    Ok(hits as f64 / all as f64)
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// Normal-approximation one-sided p-value with midranks, tie-corrected
/// variance and continuity correction. Standard for samples of 30 per side.
pub fn rank_sum_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let (ranks2, w_obs2) = pooled_ranks_doubled(a, b);
    let n = a.len() as f64;
    let m = b.len() as f64;
    let total = n + m;
    let w = w_obs2 as f64 / 2.0;

    let mut tie_term = 0.0;
    let mut groups: BTreeMap<i64, f64> = BTreeMap::new();
    for &r in &ranks2 {
        *groups.entry(r).or_default() += 1.0;
    }
    for t in groups.values() {
        tie_term += t * t * t - t;
    }

    let mean = n * (total + 1.0) / 2.0;
    let variance = n * m / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if variance <= 0.0 {
        return Err(Error::DegenerateSample(
            "tie-corrected rank-sum variance is zero".into(),
        ));
    }
    let z = (w - mean - 0.5) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(1.0 - normal.cdf(z))
}

/// One-sided rank-sum p-value; exact enumeration for small pooled samples,
/// normal approximation beyond [`EXACT_ENUMERATION_LIMIT`].
pub fn rank_sum_one_sided(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() + b.len() <= EXACT_ENUMERATION_LIMIT {
        rank_sum_exact(a, b)
    } else {
        rank_sum_normal(a, b)
    }
}

// ---------------------------------------------------------------------------
// Report generation

pub const ALPHA: f64 = 0.05;

/// Per-activation summary inside one (dataset, model) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRow {
    pub activation: String,
    pub accs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub n: usize,
    /// 1-based position among the cell's means; only the top four are kept.
    pub rank: Option<usize>,
    /// One-sided p-value of this proposed activation against the best
    /// benchmark activation of the cell.
    pub p_vs_best_benchmark: Option<f64>,
    pub beats_best_benchmark: bool,
    /// One-sided p-value of this smooth approximation against the modulus.
    pub p_vs_modulus: Option<f64>,
    pub beats_modulus: bool,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub dataset: String,
    pub model: String,
    pub seeds_per_cell: usize,
    pub best_benchmark: Option<String>,
    pub rows: Vec<ActivationRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub cells: Vec<CellReport>,
}

const PROPOSED: [&str; 3] = ["modulus", "softmodulusq", "softmodulust"];

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Build the ranked significance report. Every (dataset, model, activation)
/// cell must hold the same number of seeds; ragged input is an error that
/// lists the missing tuples.
pub fn build_report(records: &[RunRecord]) -> Result<SignificanceReport> {
    if records.is_empty() {
        return Err(Error::Report("no run records".into()));
    }
    let mut cells: BTreeMap<(String, String), BTreeMap<String, Vec<&RunRecord>>> = BTreeMap::new();
    let mut all_seeds: std::collections::BTreeSet<u64> = Default::default();
    for r in records {
        cells
            .entry((r.dataset.clone(), r.model.clone()))
            .or_default()
            .entry(r.activation.clone())
            .or_default()
            .push(r);
        all_seeds.insert(r.seed);
    }

    // ragged-cell check against the union of observed seeds
    let mut missing: Vec<String> = Vec::new();
    for ((ds, model), acts) in &cells {
        for (act, runs) in acts {
            let seeds: std::collections::BTreeSet<u64> = runs.iter().map(|r| r.seed).collect();
            if seeds.len() != runs.len() {
                return Err(Error::Report(format!(
                    "duplicate seeds in cell ({ds}, {model}, {act})"
                )));
            }
            for s in &all_seeds {
                if !seeds.contains(s) {
                    missing.push(format!("({ds}, {model}, {act}, seed {s})"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Report(format!(
            "ragged cells; missing runs: {}",
            missing.join(", ")
        )));
    }

    let mut out = Vec::new();
    for ((dataset, model), acts) in cells {
        let mut rows: Vec<ActivationRow> = Vec::new();
        let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (act, runs) in &acts {
            let mut sorted = runs.clone();
            sorted.sort_by_key(|r| r.seed);
            let accs: Vec<f64> = sorted.iter().map(|r| r.best_acc).collect();
            let (mean, std) = mean_std(&accs);
            samples.insert(act.clone(), accs.clone());
            rows.push(ActivationRow {
                activation: act.clone(),
                accs,
                mean,
                std,
                n: sorted.len(),
                rank: None,
                p_vs_best_benchmark: None,
                beats_best_benchmark: false,
                p_vs_modulus: None,
                beats_modulus: false,
                diverged_runs: sorted.iter().filter(|r| r.is_failed()).count(),
            });
        }

        // highest-mean benchmark activation is the comparison baseline
        let best_benchmark = rows
            .iter()
            .filter(|r| !PROPOSED.contains(&r.activation.as_str()))
            .max_by(|x, y| x.mean.partial_cmp(&y.mean).expect("finite means"))
            .map(|r| r.activation.clone());

        // top-4 ranks by mean
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&i, &j| rows[j].mean.partial_cmp(&rows[i].mean).expect("finite means"));
        for (pos, &idx) in order.iter().take(4).enumerate() {
            rows[idx].rank = Some(pos + 1);
        }

        let baseline = best_benchmark
            .as_ref()
            .and_then(|name| samples.get(name).cloned());
        let modulus_sample = samples.get("modulus").cloned();
        for row in &mut rows {
            if PROPOSED.contains(&row.activation.as_str()) {
                if let Some(base) = &baseline {
                    let p = rank_sum_one_sided(&row.accs, base)?;
                    row.beats_best_benchmark = p < ALPHA;
                    row.p_vs_best_benchmark = Some(p);
                }
            }
            if matches!(row.activation.as_str(), "softmodulusq" | "softmodulust") {
                if let Some(modulus) = &modulus_sample {
                    let p = rank_sum_one_sided(&row.accs, modulus)?;
                    row.beats_modulus = p < ALPHA;
                    row.p_vs_modulus = Some(p);
                }
            }
        }

        let seeds_per_cell = rows.first().map_or(0, |r| r.n);
        out.push(CellReport {
            dataset,
            model,
            seeds_per_cell,
            best_benchmark,
            rows,
        });
    }
    Ok(SignificanceReport {
        alpha: ALPHA,
        cells: out,
    })
}

/// Markdown rendering of a report. Bold marks a proposed activation that
/// significantly beats the best benchmark; a trailing `*` marks a smooth
/// approximation that significantly beats the modulus.
pub fn render_markdown(report: &SignificanceReport) -> String {
    let mut out = String::new();
    out.push_str("# Benchmark report\n");
    for cell in &report.cells {
        out.push_str(&format!(
            "\n## {} / {} ({} seeds, alpha = {})\n\n",
            cell.dataset, cell.model, cell.seeds_per_cell, report.alpha
        ));
        if let Some(best) = &cell.best_benchmark {
            out.push_str(&format!("Best benchmark activation: {best}\n\n"));
        }
        out.push_str("| activation | best accuracy (% mean ± std) | rank | p vs benchmark | p vs modulus | diverged |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for row in &cell.rows {
            let mut acc = format!("{:.2} ± {:.2}", row.mean * 100.0, row.std * 100.0);
            if row.beats_best_benchmark {
                acc = format!("**{acc}**");
            }
            if row.beats_modulus {
                acc.push('*');
            }
            let rank = row
                .rank
                .map(|r| ["1st", "2nd", "3rd", "4th"][r - 1].to_string())
                .unwrap_or_default();
            let p_bench = row
                .p_vs_best_benchmark
                .map(|p| format!("{p:.4}"))
                .unwrap_or_default();
            let p_mod = row
                .p_vs_modulus
                .map(|p| format!("{p:.4}"))
                .unwrap_or_default();
            let diverged = if row.diverged_runs > 0 {
                format!("{}", row.diverged_runs)
            } else {
                String::new()
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                row.activation, acc, rank, p_bench, p_mod, diverged
            ));
        }
    }
    out
}

/// Learning-curve CSV: per (dataset, model, activation, epoch) the mean test
/// accuracy over seeds and the 95% confidence half-width `1.96 * std / sqrt(n)`.
/// A single-seed curve is flagged degenerate and gets half-width 0.
pub fn export_curves(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Report("no run records".into()));
    }
    let epochs = records[0].test_acc.len();
    if records.iter().any(|r| r.test_acc.len() != epochs) {
        return Err(Error::Report("records disagree on epoch count".into()));
    }
    let mut groups: BTreeMap<(String, String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset.clone(), r.model.clone(), r.activation.clone()))
            .or_default()
            .push(r);
    }
    let mut out = String::from("dataset,model,activation,epoch,n_runs,mean_acc,ci95_half_width,degenerate\n");
    for ((ds, model, act), runs) in groups {
        let n = runs.len();
        for e in 0..epochs {
            let vals: Vec<f64> = runs.iter().map(|r| r.test_acc[e]).collect();
            let (mean, std) = mean_std(&vals);
            let half = if n > 1 {
                1.96 * std / (n as f64).sqrt()
            } else {
                0.0
            };
            out.push_str(&format!(
                "{ds},{model},{act},{e},{n},{mean},{half},{}\n",
                if n == 1 { "true" } else { "false" }
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_dominant_sample() {
        // a holds the top three ranks: only 1 of C(6,3) = 20 assignments
        // reaches the observed sum
        let p = rank_sum_exact(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p, 0.05);
    }

    #[test]
    fn exact_dominated_sample() {
        let p = rank_sum_exact(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn exact_enumeration_identity() {
        // P(W >= w) + P(W <= w) = 1 + P(W = w); swapping the roles of equal
        // samples realizes the <= side
        let a = [1.0, 3.0, 5.0, 7.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        let p_ge = rank_sum_exact(&a, &b).unwrap();
        let p_ge_swapped = rank_sum_exact(&b, &a).unwrap();
        let (ranks2, w_obs) = pooled_ranks_doubled(&a, &b);
        // count assignments equal to observed sum
        let n = a.len();
        let mut eq = 0u64;
        let mut all = 0u64;
        fn walk(r: &[i64], start: usize, rem: usize, sum: i64, target: i64, eq: &mut u64, all: &mut u64) {
            if rem == 0 {
                *all += 1;
                if sum == target {
                    *eq += 1;
                }
                return;
            }
            if r.len() - start < rem {
                return;
            }
            walk(r, start + 1, rem - 1, sum + r[start], target, eq, all);
            walk(r, start + 1, rem, sum, target, eq, all);
        }
        walk(&ranks2, 0, n, 0, w_obs, &mut eq, &mut all);
        let p_eq = eq as f64 / all as f64;
        assert!((p_ge + p_ge_swapped - (1.0 + p_eq)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_samples_rejected() {
        assert!(rank_sum_one_sided(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rank_sum_one_sided(&[3.0, 3.0, 3.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn normal_close_to_exact_on_random_pairs() {
        // |a| = |b| = 8 stays within the exact enumerator's range, so the
        // approximation can be validated directly: |delta p| <= 0.01
        let mut state = 42u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..100 {
            let a: Vec<f64> = (0..8).map(|_| next()).collect();
            let b: Vec<f64> = (0..8).map(|_| next() + 0.1).collect();
            let exact = rank_sum_exact(&a, &b).unwrap();
            let normal = rank_sum_normal(&a, &b).unwrap();
            assert!(
                (exact - normal).abs() <= 0.01,
                "trial {trial}: exact {exact} vs normal {normal}"
            );
        }
    }

    #[test]
    fn ties_use_midranks() {
        // heavily tied data still produces a valid p-value
        let a = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 5.0, 6.0];
        let b = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0];
        let p = rank_sum_normal(&a, &b).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    proptest! {
        #[test]
        fn rank_based_transform_invariance(
            mut a in proptest::collection::vec(0.0_f64..1.0, 5..10),
            mut b in proptest::collection::vec(0.0_f64..1.0, 5..10),
        ) {
            a[0] += 1.5; // guarantee non-degenerate pooled sample
            let p1 = rank_sum_one_sided(&a, &b).unwrap();
            // strictly increasing transform; scaling by a power of two is
            // exact in binary floating point, so no ties appear or vanish
            let ta: Vec<f64> = a.iter().map(|&x| 4.0 * x).collect();
            let tb: Vec<f64> = b.iter().map(|&x| 4.0 * x).collect();
            let p2 = rank_sum_one_sided(&ta, &tb).unwrap();
            prop_assert_eq!(p1, p2);
        }
    }
}
