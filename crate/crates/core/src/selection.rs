//! Objective-driven horizon selection.
//!
//! A profile measures `cos(theta_h)` and memory on a subset of horizons, fits a
//! cubic and a line through them, estimates the loss rate as the clamped fitted
//! cosine squared, and scans every `h` in `1..=T` for the best objective value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{fmt_f64, Csv};
use crate::gradients::{gradient_angle, horizon_gradient_from, memory_estimate, MemoryModel};
use crate::network::{forward, Batch, Network};
use crate::numerics::{polyfit, PolyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonProfile {
    pub depth: usize,
    pub horizons: Vec<usize>,
    pub measured_cos: BTreeMap<usize, f64>,
    pub measured_mem: BTreeMap<usize, f64>,
    pub cos_fit: PolyModel,
    pub mem_fit: PolyModel,
    /// Batches dropped because a gradient was zero.
    pub skipped_batches: usize,
}

/// `{1, ceil(T/4), ceil(T/2), ceil(3T/4), T}` without duplicates.
pub fn default_horizons(depth: usize) -> Vec<usize> {
    let mut hs: Vec<usize> = [1, depth.div_ceil(4), depth.div_ceil(2), (3 * depth).div_ceil(4), depth]
        .into_iter()
        .filter(|h| *h >= 1)
        .collect();
    hs.sort_unstable();
    hs.dedup();
    hs
}

fn check_horizons(depth: usize, horizons: &[usize]) -> Result<()> {
    if depth == 0 {
        return Err(Error::invalid("depth must be positive"));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("horizon subset must be strictly increasing"));
    }
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > depth) {
        return Err(Error::OutOfRange {
            index: h,
            lo: 1,
            hi: depth,
            context: "profile horizon",
        });
    }
    if horizons.len() < 2 {
        return Err(Error::invalid("profile needs at least two horizons"));
    }
    Ok(())
}

impl HorizonProfile {
    /// Fits a profile to given measurements. The cosine fit is cubic when four or
    /// more horizons are measured and drops to degree `|H| - 1` otherwise.
    pub fn from_measurements(
        depth: usize,
        measured_cos: BTreeMap<usize, f64>,
        measured_mem: BTreeMap<usize, f64>,
    ) -> Result<Self> {
        let horizons: Vec<usize> = measured_cos.keys().copied().collect();
        check_horizons(depth, &horizons)?;
        if measured_mem.keys().ne(measured_cos.keys()) {
            return Err(Error::invalid("cosine and memory measurements cover different horizons"));
        }
        if measured_cos.values().any(|c| !(-1.0..=1.0).contains(c)) {
            return Err(Error::invalid("measured cosine outside [-1, 1]"));
        }
        let xs: Vec<f64> = horizons.iter().map(|&h| h as f64).collect();
        let cs: Vec<f64> = measured_cos.values().copied().collect();
        let ms: Vec<f64> = measured_mem.values().copied().collect();
        let cos_fit = polyfit(&xs, &cs, 3.min(xs.len() - 1))?;
        let mem_fit = polyfit(&xs, &ms, 1)?;
        Ok(Self {
            depth,
            horizons,
            measured_cos,
            measured_mem,
            cos_fit,
            mem_fit,
            skipped_batches: 0,
        })
    }

    pub fn fitted_cos(&self, h: usize) -> f64 {
        self.cos_fit.eval(h as f64)
    }

    pub fn fitted_mem(&self, h: usize) -> f64 {
        self.mem_fit.eval(h as f64)
    }

    pub fn to_csv(&self, objective: &Objective, cost: &CostFn) -> Result<String> {
        let selection = select_horizon(self, objective, cost)?;
        let mut csv = Csv::new(&[
            "h",
            "measured_cos",
            "fitted_cos",
            "measured_mem",
            "fitted_mem",
            "r_hat",
            "cost",
            "objective_value",
            "feasible",
        ]);
        let opt = |m: Option<&f64>| m.map(|v| fmt_f64(*v)).unwrap_or_default();
        for row in &selection.table {
            csv.row(&[
                row.h.to_string(),
                opt(self.measured_cos.get(&row.h)),
                fmt_f64(row.fitted_cos),
                opt(self.measured_mem.get(&row.h)),
                fmt_f64(row.fitted_mem),
                fmt_f64(row.r_hat),
                fmt_f64(row.cost),
                fmt_f64(row.objective_value),
                row.feasible.to_string(),
            ]);
        }
        Ok(csv.finish())
    }
}

/// Measures `cos(theta_h)` per batch against `h = T` and averages in batch order.
pub fn build_profile(
    net: &Network,
    batches: &[(Batch, Batch)],
    horizons: &[usize],
    mem_model: &MemoryModel,
) -> Result<HorizonProfile> {
    let depth = net.depth();
    check_horizons(depth, horizons)?;
    if batches.is_empty() {
        return Err(Error::invalid("profile needs at least one batch"));
    }

    let per_batch: Vec<Result<Option<Vec<f64>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batches
            .iter()
            .map(|(x, y)| {
                scope.spawn(move || -> Result<Option<Vec<f64>>> {
                    let acts = forward(net, x)?;
                    let gt = horizon_gradient_from(net, &acts, y, depth)?;
                    let mut cos = Vec::with_capacity(horizons.len());
                    for &h in horizons {
                        let gh = horizon_gradient_from(net, &acts, y, h)?;
                        match gradient_angle(&gh, &gt) {
                            Ok(c) => cos.push(c),
                            Err(Error::Degenerate(_)) => return Ok(None),
                            Err(e) => return Err(e),
                        }
                    }
                    Ok(Some(cos))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("profile worker panicked"))
            .collect()
    });

    let mut sums = vec![0.0; horizons.len()];
    let mut used = 0usize;
    let mut skipped = 0usize;
    for r in per_batch {
        match r? {
            Some(cos) => {
                used += 1;
                for (s, c) in sums.iter_mut().zip(cos) {
                    *s += c;
                }
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every profile batch has a zero gradient".into()));
    }

    let measured_cos = horizons
        .iter()
        .zip(&sums)
        .map(|(&h, s)| (h, (s / used as f64).clamp(-1.0, 1.0)))
        .collect();
    let measured_mem = horizons
        .iter()
        .map(|&h| memory_estimate(mem_model, h, depth).map(|m| (h, m.units)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut profile = HorizonProfile::from_measurements(depth, measured_cos, measured_mem)?;
    profile.skipped_batches = skipped;
    Ok(profile)
}

/// `clamp(cos_fit(h), -1, 1)^2`.
pub fn estimate_rate(profile: &HorizonProfile, h: usize) -> f64 {
    let c = profile.fitted_cos(h).clamp(-1.0, 1.0);
    c * c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Linear,
    Ladder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFn {
    pub kind: CostKind,
    pub unit_cost: f64,
    pub node_memory: f64,
}

impl CostFn {
    pub fn new(kind: CostKind, unit_cost: f64, node_memory: f64) -> Result<Self> {
        if !(unit_cost > 0.0 && unit_cost.is_finite()) {
            return Err(Error::invalid("unit cost must be positive"));
        }
        if !(node_memory > 0.0 && node_memory.is_finite()) {
            return Err(Error::invalid("node memory must be positive"));
        }
        Ok(Self {
            kind,
            unit_cost,
            node_memory,
        })
    }
}

/// `c M / M0` (linear) or `c ceil(M / M0)` (ladder).
pub fn cost_value(cost: &CostFn, memory: f64) -> f64 {
    let ratio = memory / cost.node_memory;
    match cost.kind {
        CostKind::Linear => cost.unit_cost * ratio,
        CostKind::Ladder => cost.unit_cost * ratio.ceil(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// Cheapest `h` with `r_hat(h) >= 1 - epsilon`.
    AccuracyConstraint { epsilon: f64 },
    /// Minimize `-r_hat(h) + lambda C(h)`.
    Weighted { lambda: f64 },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::AccuracyConstraint { epsilon } if !(epsilon > 0.0 && epsilon < 1.0) => {
                Err(Error::invalid("epsilon must lie in (0, 1)"))
            }
            Objective::Weighted { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::invalid("lambda must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::AccuracyConstraint { .. } => "accuracy_constraint",
            Objective::Weighted { .. } => "weighted",
        }
    }

    /// Objective value and feasibility for a given rate and cost.
    pub fn evaluate(&self, r_hat: f64, cost: f64) -> (f64, bool) {
        match *self {
            Objective::AccuracyConstraint { epsilon } => (cost, r_hat >= 1.0 - epsilon),
            Objective::Weighted { lambda } => (-r_hat + lambda * cost, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub h: usize,
    pub fitted_cos: f64,
    pub fitted_mem: f64,
    pub r_hat: f64,
    pub cost: f64,
    pub objective_value: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// `None` when no horizon satisfies the constraint.
    pub horizon: Option<usize>,
    pub feasible: bool,
    pub objective_value: Option<f64>,
    pub table: Vec<HorizonRow>,
}

fn horizon_table(profile: &HorizonProfile, objective: &Objective, cost: &CostFn) -> Vec<HorizonRow> {
    (1..=profile.depth)
        .map(|h| {
            let fitted_mem = profile.fitted_mem(h);
            let r_hat = estimate_rate(profile, h);
            let c = cost_value(cost, fitted_mem.max(0.0));
            let (objective_value, feasible) = objective.evaluate(r_hat, c);
            HorizonRow {
                h,
                fitted_cos: profile.fitted_cos(h),
                fitted_mem,
                r_hat,
                cost: c,
                objective_value,
                feasible,
            }
        })
        .collect()
}

/// Single pass over `h = 1..=T`; a later `h` replaces the incumbent only on a strictly smaller value.
pub fn select_horizon(profile: &HorizonProfile, objective: &Objective, cost: &CostFn) -> Result<Selection> {
    objective.validate()?;
    let table = horizon_table(profile, objective, cost);
    let mut best: Option<&HorizonRow> = None;
    for row in table.iter().filter(|r| r.feasible) {
        if best.is_none_or(|b| row.objective_value < b.objective_value) {
            best = Some(row);
        }
    }
    Ok(Selection {
        horizon: best.map(|b| b.h),
        feasible: best.is_some(),
        objective_value: best.map(|b| b.objective_value),
        table: table.clone(),
    })
}

/// Reference enumeration: collects every feasible `(value, h)` and takes the lexicographic minimum.
pub fn brute_force_select(profile: &HorizonProfile, objective: &Objective, cost: &CostFn) -> Result<Selection> {
    objective.validate()?;
    let table = horizon_table(profile, objective, cost);
    let mut candidates: Vec<(f64, usize)> = table
        .iter()
        .filter(|r| r.feasible)
        .map(|r| (r.objective_value, r.h))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let pick = candidates.first().copied();
    Ok(Selection {
        horizon: pick.map(|p| p.1),
        feasible: pick.is_some(),
        objective_value: pick.map(|p| p.0),
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub objective: Objective,
    pub cost: CostFn,
    pub depth: usize,
    pub horizons: Vec<usize>,
    pub selected_horizon: Option<usize>,
    pub feasible: bool,
    pub objective_value: Option<f64>,
    pub cos_fit_coefficients: Vec<f64>,
    pub mem_fit_coefficients: Vec<f64>,
    pub brute_force: bool,
}

impl SelectionReport {
    pub fn new(profile: &HorizonProfile, objective: Objective, cost: CostFn, sel: &Selection, brute_force: bool) -> Self {
        Self {
            objective,
            cost,
            depth: profile.depth,
            horizons: profile.horizons.clone(),
            selected_horizon: sel.horizon,
            feasible: sel.feasible,
            objective_value: sel.objective_value,
            cos_fit_coefficients: profile.cos_fit.coefficients().to_vec(),
            mem_fit_coefficients: profile.mem_fit.coefficients().to_vec(),
            brute_force,
        }
    }
}

/// Value `O(a)` per algorithm, `None` for an infeasible run.
pub fn relative_performance(values: &BTreeMap<String, Option<f64>>) -> Result<BTreeMap<String, f64>> {
    if values.values().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("objective values must be finite"));
    }
    let finite = values.values().flatten();
    let lo = finite.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(values
        .iter()
        .map(|(k, v)| {
            let rel = match v {
                None => 1.5,
                Some(_) if hi <= lo => 0.0,
                Some(x) => (x - lo) / (hi - lo),
            };
            (k.clone(), rel)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::MemoryMode;
    use crate::numerics::{Matrix, SeededRng};
    use proptest::prelude::*;

    fn planted(depth: usize, k: f64, a: f64, b: f64, hs: &[usize]) -> HorizonProfile {
        let cos = hs
            .iter()
            .map(|&h| (h, 1.0 - k * (1.0 - h as f64 / depth as f64).powi(3)))
            .collect();
        let mem = hs.iter().map(|&h| (h, a * h as f64 + b)).collect();
        HorizonProfile::from_measurements(depth, cos, mem).unwrap()
    }

    #[test]
    fn default_subset() {
        assert_eq!(default_horizons(16), vec![1, 4, 8, 12, 16]);
        assert_eq!(default_horizons(2), vec![1, 2]);
        assert_eq!(default_horizons(1), vec![1]);
    }

    #[test]
    fn cost_examples() {
        let lin = CostFn::new(CostKind::Linear, 1.0, 4.0).unwrap();
        let lad = CostFn::new(CostKind::Ladder, 1.0, 4.0).unwrap();
        assert_eq!(cost_value(&lin, 2.0), 0.5);
        assert_eq!(cost_value(&lad, 6.0), 2.0);
        assert_eq!(cost_value(&lad, 4.0), 1.0);
        assert!(CostFn::new(CostKind::Linear, 0.0, 1.0).is_err());
    }

    #[test]
    fn cubic_rate_is_exact() {
        let p = planted(12, 0.8, 1.0, 2.0, &[1, 4, 8, 12]);
        for h in 1..=12 {
            let c = 1.0 - 0.8 * (1.0 - h as f64 / 12.0).powi(3);
            assert!((estimate_rate(&p, h) - c * c).abs() < 1e-9);
        }
        assert!((estimate_rate(&p, 12) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_clamps_before_squaring() {
        let cos = [(1, 1.0), (2, 1.0)].into_iter().collect();
        let mem = [(1, 1.0), (2, 2.0)].into_iter().collect();
        let mut p = HorizonProfile::from_measurements(2, cos, mem).unwrap();
        p.cos_fit = PolyModel::new(vec![1.02]).unwrap();
        assert_eq!(estimate_rate(&p, 1), 1.0);
    }

    #[test]
    fn loose_constraint_picks_cheapest() {
        let p = planted(10, 0.5, 1.0, 1.0, &[1, 4, 7, 10]);
        let cost = CostFn::new(CostKind::Linear, 1.0, 1.0).unwrap();
        let s = select_horizon(&p, &Objective::AccuracyConstraint { epsilon: 0.999 }, &cost).unwrap();
        assert_eq!(s.horizon, Some(1));
    }

    #[test]
    fn constraint_gives_smallest_feasible() {
        let p = planted(10, 0.9, 2.0, 1.0, &[1, 4, 7, 10]);
        let cost = CostFn::new(CostKind::Linear, 1.0, 1.0).unwrap();
        let eps = 0.1;
        let s = select_horizon(&p, &Objective::AccuracyConstraint { epsilon: eps }, &cost).unwrap();
        let first = (1..=10).find(|&h| estimate_rate(&p, h) >= 1.0 - eps);
        assert_eq!(s.horizon, first);
    }

    #[test]
    fn impossible_constraint_is_flagged() {
        let cos = [(1, 0.1), (2, 0.2), (3, 0.3)].into_iter().collect();
        let mem = [(1, 1.0), (2, 2.0), (3, 3.0)].into_iter().collect();
        let p = HorizonProfile::from_measurements(3, cos, mem).unwrap();
        let cost = CostFn::new(CostKind::Ladder, 1.0, 1.0).unwrap();
        let s = select_horizon(&p, &Objective::AccuracyConstraint { epsilon: 0.01 }, &cost).unwrap();
        assert!(!s.feasible);
        assert_eq!(s.horizon, None);
    }

    #[test]
    fn ladder_ties_prefer_small_h() {
        let p = planted(8, 0.0, 1.0, 0.0, &[1, 3, 5, 8]);
        let cost = CostFn::new(CostKind::Ladder, 1.0, 100.0).unwrap();
        let s = select_horizon(&p, &Objective::AccuracyConstraint { epsilon: 0.5 }, &cost).unwrap();
        assert_eq!(s.horizon, Some(1));
    }

    #[test]
    fn relative_examples() {
        let m = |v: &[(&str, Option<f64>)]| v.iter().map(|(k, x)| (k.to_string(), *x)).collect::<BTreeMap<_, _>>();
        let r = relative_performance(&m(&[("A", Some(2.0)), ("B", Some(4.0))])).unwrap();
        assert_eq!((r["A"], r["B"]), (0.0, 1.0));
        let r = relative_performance(&m(&[("A", Some(2.0)), ("B", Some(3.0)), ("C", Some(4.0))])).unwrap();
        assert_eq!(r["B"], 0.5);
        let r = relative_performance(&m(&[("A", Some(2.0)), ("B", Some(4.0)), ("C", None)])).unwrap();
        assert_eq!(r["C"], 1.5);
        let r = relative_performance(&m(&[("A", Some(3.0)), ("B", Some(3.0))])).unwrap();
        assert_eq!((r["A"], r["B"]), (0.0, 0.0));
    }

    #[test]
    fn identity_linear_net_profile() {
        let net = Network::linear_chain(&vec![Matrix::identity(3); 6]).unwrap();
        let mut rng = SeededRng::new(3);
        let batches: Vec<_> = (0..2)
            .map(|_| {
                (
                    crate::numerics::gaussian_matrix(4, 3, 1.0, &mut rng).unwrap(),
                    crate::numerics::gaussian_matrix(4, 3, 1.0, &mut rng).unwrap(),
                )
            })
            .collect();
        let mem = MemoryModel::uniform(MemoryMode::Eager, 6, 3.0, 1.0).unwrap();
        let p = build_profile(&net, &batches, &default_horizons(6), &mem).unwrap();
        for c in p.measured_cos.values() {
            assert!((c - 1.0).abs() < 1e-12);
        }
        for (&h, m) in &p.measured_mem {
            assert!((p.fitted_mem(h) - m).abs() < 1e-9);
        }
        assert_eq!(p.measured_cos[&6], 1.0);
    }

    #[test]
    fn all_degenerate_batches_error() {
        let net = Network::linear_chain(&vec![Matrix::identity(2); 3]).unwrap();
        let x = Matrix::identity(2);
        let mem = MemoryModel::uniform(MemoryMode::Eager, 3, 2.0, 0.0).unwrap();
        let r = build_profile(&net, &[(x.clone(), x)], &[1, 2, 3], &mem);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn csv_has_every_horizon() {
        let p = planted(6, 0.5, 1.0, 1.0, &[1, 3, 6]);
        let cost = CostFn::new(CostKind::Linear, 1.0, 2.0).unwrap();
        let csv = p.to_csv(&Objective::Weighted { lambda: 0.1 }, &cost).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[2].starts_with("2,,"));
    }

    proptest! {
        #[test]
        fn scan_matches_enumeration(
            k in 0.01f64..1.0, a in 0.1f64..5.0, b in 0.0f64..10.0,
            lambda in 0.001f64..2.0, eps in 0.01f64..0.99,
            m0 in 0.5f64..20.0, depth in 4usize..30, ladder in any::<bool>(),
        ) {
            let p = planted(depth, k, a, b, &default_horizons(depth));
            let cost = CostFn::new(if ladder { CostKind::Ladder } else { CostKind::Linear }, 1.0, m0).unwrap();
            for obj in [Objective::Weighted { lambda }, Objective::AccuracyConstraint { epsilon: eps }] {
                let s = select_horizon(&p, &obj, &cost).unwrap();
                let o = brute_force_select(&p, &obj, &cost).unwrap();
                prop_assert_eq!(s.horizon, o.horizon);
            }
        }
    }
}
