//! Group statistics per (band, window, component): Wilcoxon rank-sum tests,
//! Benjamini–Hochberg adjustment and Cohen's d.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::hodge::ComponentKind;
use crate::signal::Group;

/// Total sample size at or below which `Auto` uses the exact distribution.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSumTest {
    /// Sum of the (mid)ranks of the first sample in the pooled ranking.
    pub statistic: f64,
    /// Two-sided p-value in `(0, 1]`.
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks of `values` (ties share the mean of their positions), 1-based.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share rank (i + 1 + j) / 2
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Two-sided Wilcoxon rank-sum (Mann–Whitney) test of `a` against `b`.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64], method: WilcoxonMethod) -> Result<RankSumTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("rank-sum test needs non-empty groups".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Validation("rank-sum test values must be finite".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let statistic: f64 = ranks[..a.len()].iter().sum();
    let n = pooled.len();
    let exact = match method {
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::NormalApprox => false,
        WilcoxonMethod::Auto => n <= EXACT_MAX_TOTAL,
    };
    let p_value = if exact {
        exact_p(&ranks, a.len())
    } else {
        normal_p(&ranks, a.len(), statistic)
    };
    Ok(RankSumTest {
        statistic,
        p_value: p_value.clamp(f64::MIN_POSITIVE, 1.0),
        exact,
    })
}

/// Exact permutation p-value, `P(|W − E W| ≥ |w − E W|)`, by dynamic
/// programming over doubled (integer) midranks.
fn exact_p(ranks: &[f64], n1: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0.0f64; total + 1]; n1 + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            let (lo, hi) = counts.split_at_mut(k);
            let (prev, cur) = (&lo[k - 1], &mut hi[0]);
            for s in (r..=total).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let n = ranks.len();
    let mean2 = (n1 * (n + 1)) as i64;
    let observed: i64 = doubled[..n1].iter().sum::<usize>() as i64;
    let dev = (observed - mean2).abs();
    let dist = &counts[n1];
    let all: f64 = dist.iter().sum();
    let extreme: f64 = dist
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - mean2).abs() >= dev)
        .map(|(_, c)| c)
        .sum();
    extreme / all
}

/// Normal approximation with tie-corrected variance and continuity correction.
fn normal_p(ranks: &[f64], n1: usize, statistic: f64) -> f64 {
    let n = ranks.len() as f64;
    let (n1f, n2f) = (n1 as f64, n - n1 as f64);
    let mean = n1f * (n + 1.0) / 2.0;

    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n1f * n2f / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &idx) in order.iter().enumerate().rev() {
        let rank = (pos + 1) as f64;
        // m / rank ≥ 1 first, so rounding can never push the product below p
        running = running.min(p_values[idx] * (m as f64 / rank));
        adjusted[idx] = running.min(1.0);
    }
    Ok(adjusted)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, ss)
}

/// Standardised mean difference `(mean(control) − mean(patient)) / pooled_sd`.
///
/// Negative when the patient group is larger.
pub fn cohens_d(control: &[f64], patient: &[f64]) -> Result<f64> {
    if control.len() < 2 || patient.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "Cohen's d needs at least 2 values per group, got {} and {}",
            control.len(),
            patient.len()
        )));
    }
    let (m1, ss1) = mean_var(control);
    let (m2, ss2) = mean_var(patient);
    let pooled = (ss1 + ss2) / (control.len() + patient.len() - 2) as f64;
    if pooled.is_nan() || pooled <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((m1 - m2) / pooled.sqrt())
}

/// One scalar per participant for every (band, window, component) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    bands: Vec<String>,
    /// Window start/end in seconds.
    windows: Vec<(f64, f64)>,
    participants: Vec<(String, Group)>,
    values: Vec<f64>,
}

impl FeatureTable {
    /// An empty grid; every cell must be filled before use.
    pub fn new(bands: Vec<String>, windows: Vec<(f64, f64)>, participants: Vec<(String, Group)>) -> Self {
        let len = bands.len() * windows.len() * ComponentKind::ALL.len() * participants.len();
        FeatureTable {
            bands,
            windows,
            participants,
            values: vec![f64::NAN; len],
        }
    }

    fn index(&self, band: usize, window: usize, component: ComponentKind, participant: usize) -> usize {
        let c = component as usize;
        ((band * self.windows.len() + window) * ComponentKind::ALL.len() + c) * self.participants.len() + participant
    }

    pub fn set(&mut self, band: usize, window: usize, component: ComponentKind, participant: usize, value: f64) {
        let i = self.index(band, window, component, participant);
        self.values[i] = value;
    }

    pub fn get(&self, band: usize, window: usize, component: ComponentKind, participant: usize) -> f64 {
        self.values[self.index(band, window, component, participant)]
    }

    pub fn bands(&self) -> &[String] {
        &self.bands
    }

    pub fn windows(&self) -> &[(f64, f64)] {
        &self.windows
    }

    pub fn participants(&self) -> &[(String, Group)] {
        &self.participants
    }

    /// Errors on any unfilled or non-finite cell.
    pub fn validate(&self) -> Result<()> {
        for b in 0..self.bands.len() {
            for w in 0..self.windows.len() {
                for c in ComponentKind::ALL {
                    for (p, (id, _)) in self.participants.iter().enumerate() {
                        let v = self.get(b, w, c, p);
                        if !v.is_finite() {
                            return Err(Error::Validation(format!(
                                "feature for band {}, window {w}, {c}, participant {id} is {v}",
                                self.bands[b]
                            )));
                        }
                    }
                }
            }
        }
        for g in [Group::Control, Group::Patient] {
            if !self.participants.iter().any(|p| p.1 == g) {
                return Err(Error::Validation(format!("feature table has no {g} participants")));
            }
        }
        Ok(())
    }

    fn group_values(&self, band: usize, window: usize, component: ComponentKind, group: Group) -> Vec<f64> {
        self.participants
            .iter()
            .enumerate()
            .filter(|(_, p)| p.1 == group)
            .map(|(i, _)| self.get(band, window, component, i))
            .collect()
    }
}

/// Which cells share one Benjamini–Hochberg family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrFamily {
    /// All windows of one (band, component) pair.
    #[default]
    BandComponent,
    /// All (window, component) cells of one band.
    Band,
    /// Every cell.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub band: String,
    pub window_index: usize,
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub component: ComponentKind,
    pub p_value: f64,
    pub fdr_p_value: f64,
    pub effect_size: f64,
    /// Rank sum of the control group.
    pub rank_sum_statistic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsOptions {
    pub method: WilcoxonMethod,
    pub fdr_family: FdrFamily,
}

/// Control-vs-patient comparison for every cell, sorted by (band, window, component).
pub fn group_compare(features: &FeatureTable, options: StatsOptions) -> Result<Vec<StatResult>> {
    features.validate()?;
    let cells: Vec<(usize, usize, ComponentKind)> = (0..features.bands.len())
        .flat_map(|b| {
            (0..features.windows.len()).flat_map(move |w| ComponentKind::ALL.into_iter().map(move |c| (b, w, c)))
        })
        .collect();

    let mut results: Vec<StatResult> = cells
        .par_iter()
        .map(|&(b, w, c)| {
            let control = features.group_values(b, w, c, Group::Control);
            let patient = features.group_values(b, w, c, Group::Patient);
            let test = wilcoxon_rank_sum(&control, &patient, options.method)?;
            let effect_size = match cohens_d(&control, &patient) {
                Ok(d) => d,
                Err(Error::DegenerateVariance) if mean_var(&control).0 == mean_var(&patient).0 => 0.0,
                Err(e) => {
                    return Err(Error::Validation(format!(
                        "band {}, window {w}, {c}: {e}",
                        features.bands[b]
                    )))
                }
            };
            Ok(StatResult {
                band: features.bands[b].clone(),
                window_index: w,
                window_start_s: features.windows[w].0,
                window_end_s: features.windows[w].1,
                component: c,
                p_value: test.p_value,
                fdr_p_value: f64::NAN,
                effect_size,
                rank_sum_statistic: test.statistic,
            })
        })
        .collect::<Result<_>>()?;

    let family_of = |i: usize| {
        let (b, _, c) = cells[i];
        match options.fdr_family {
            FdrFamily::BandComponent => (b, c as usize),
            FdrFamily::Band => (b, 0),
            FdrFamily::All => (0, 0),
        }
    };
    let mut families: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for i in 0..results.len() {
        families.entry(family_of(i)).or_default().push(i);
    }
    for members in families.values() {
        let raw: Vec<f64> = members.iter().map(|&i| results[i].p_value).collect();
        for (&i, adj) in members.iter().zip(benjamini_hochberg(&raw)?) {
            results[i].fdr_p_value = adj;
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_with_ties() {
        assert_eq!(midranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(midranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn exact_separated_groups() {
        let t = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], WilcoxonMethod::Exact).unwrap();
        assert_eq!(t.statistic, 6.0);
        assert!((t.p_value - 0.1).abs() < 1e-15);
        let swapped = wilcoxon_rank_sum(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0], WilcoxonMethod::Exact).unwrap();
        assert_eq!(swapped.p_value, t.p_value);
    }

    #[test]
    fn same_multiset_gives_one() {
        let a = [0.3, 1.2, 5.0];
        let t = wilcoxon_rank_sum(&a, &a, WilcoxonMethod::Exact).unwrap();
        assert_eq!(t.p_value, 1.0);
        let c = [2.0; 4];
        for m in [WilcoxonMethod::Exact, WilcoxonMethod::NormalApprox] {
            assert_eq!(wilcoxon_rank_sum(&c, &c, m).unwrap().p_value, 1.0);
        }
    }

    #[test]
    fn auto_switches_on_size() {
        let a: Vec<f64> = (0..6).map(f64::from).collect();
        let b: Vec<f64> = (6..12).map(f64::from).collect();
        assert!(wilcoxon_rank_sum(&a, &b, WilcoxonMethod::Auto).unwrap().exact);
        let b: Vec<f64> = (6..13).map(f64::from).collect();
        assert!(!wilcoxon_rank_sum(&a, &b, WilcoxonMethod::Auto).unwrap().exact);
    }

    #[test]
    fn normal_approx_reference() {
        // 10 vs 10 fully separated: W = 55, mean 105, var 175;
        // z = (50 - 0.5)/sqrt(175), p = erfc(z / sqrt 2)
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b: Vec<f64> = (10..20).map(f64::from).collect();
        let t = wilcoxon_rank_sum(&a, &b, WilcoxonMethod::NormalApprox).unwrap();
        let z: f64 = 49.5 / 175f64.sqrt();
        assert_eq!(t.statistic, 55.0);
        assert!((t.p_value - erfc(z / 2f64.sqrt())).abs() < 1e-15);
        assert!((t.p_value - 1.8267e-4).abs() < 1e-7, "{}", t.p_value);
    }

    #[test]
    fn rank_sum_errors() {
        assert!(wilcoxon_rank_sum(&[], &[1.0], WilcoxonMethod::Auto).is_err());
        assert!(wilcoxon_rank_sum(&[f64::NAN], &[1.0], WilcoxonMethod::Auto).is_err());
    }

    #[test]
    fn bh_examples() {
        assert_eq!(benjamini_hochberg(&[0.03]).unwrap(), vec![0.03]);
        let adj = benjamini_hochberg(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        for a in adj {
            assert!((a - 0.04).abs() < 1e-15);
        }
        assert_eq!(benjamini_hochberg(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
        assert!(benjamini_hochberg(&[0.5, 1.2]).is_err());
        assert!(benjamini_hochberg(&[]).unwrap().is_empty());
    }

    #[test]
    fn cohens_d_examples() {
        let d = cohens_d(&[0.0, 2.0], &[3.0, 5.0]).unwrap();
        assert!((d - (-3.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((d + 2.1213).abs() < 1e-4);
        assert_eq!(cohens_d(&[1.0, 3.0], &[0.0, 4.0]).unwrap(), 0.0);
        let neg = cohens_d(&[0.0, -2.0], &[-3.0, -5.0]).unwrap();
        assert!((neg + d).abs() < 1e-12);
        assert!(matches!(cohens_d(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::DegenerateVariance)));
        assert!(cohens_d(&[1.0], &[2.0, 3.0]).is_err());
    }

    fn table(values: impl Fn(usize, usize, ComponentKind, usize) -> f64) -> FeatureTable {
        let participants: Vec<(String, Group)> = (0..8)
            .map(|i| (format!("p{i}"), if i < 4 { Group::Control } else { Group::Patient }))
            .collect();
        let windows: Vec<(f64, f64)> = (0..5).map(|w| (w as f64 * 0.2, (w + 1) as f64 * 0.2)).collect();
        let mut t = FeatureTable::new(vec!["Theta".into(), "Alpha".into()], windows, participants);
        for b in 0..2 {
            for w in 0..5 {
                for c in ComponentKind::ALL {
                    for p in 0..8 {
                        t.set(b, w, c, p, values(b, w, c, p));
                    }
                }
            }
        }
        t
    }

    #[test]
    fn identical_groups_give_null_results() {
        let t = table(|_, _, _, _| 1.5);
        let res = group_compare(&t, StatsOptions::default()).unwrap();
        assert_eq!(res.len(), 2 * 5 * 3);
        for r in &res {
            assert_eq!(r.p_value, 1.0);
            assert_eq!(r.fdr_p_value, 1.0);
            assert_eq!(r.effect_size, 0.0);
        }
    }

    #[test]
    fn separated_window_has_smallest_p() {
        let t = table(|_, w, _, p| {
            let base = (p % 4) as f64;
            if w == 3 && p >= 4 {
                base + 10.0
            } else {
                base
            }
        });
        let res = group_compare(&t, StatsOptions::default()).unwrap();
        let best = res.iter().min_by(|a, b| a.p_value.total_cmp(&b.p_value)).unwrap();
        assert_eq!(best.window_index, 3);
        assert!(best.effect_size < 0.0);
        for r in &res {
            assert!(r.fdr_p_value >= r.p_value);
        }
        // sorted by band, window, component
        assert_eq!(res[0].band, "Theta");
        assert_eq!((res[4].window_index, res[4].component), (1, ComponentKind::Curl));
    }

    #[test]
    fn incomplete_table_is_rejected() {
        let mut t = table(|_, _, _, p| p as f64);
        t.set(1, 2, ComponentKind::Harmonic, 3, f64::NAN);
        assert!(matches!(group_compare(&t, StatsOptions::default()), Err(Error::Validation(_))));
    }
}
