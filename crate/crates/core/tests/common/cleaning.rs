use std::collections::BTreeMap;

use ghg_core::cleaning::CleaningConfig;
use ghg_core::dataset::CorporateAction;
use rand::Rng;

use super::rng;

/// Independent statement of the cleaning rule: a point survives unless some
/// later-or-equal adjacent pair is an unexplained jump starting at or after it.
pub fn oracle(
    points: &[(i32, f64)],
    actions: &[CorporateAction],
    revenues: &BTreeMap<i32, f64>,
    cfg: &CleaningConfig,
) -> Vec<(i32, f64)> {
    let unexplained_jump_at = |i: usize| -> bool {
        let (ya, va) = points[i];
        let (yb, vb) = points[i + 1];
        if ((vb - va) / va).abs() <= cfg.jump_threshold {
            return false;
        }
        let mut explained = false;
        for a in actions {
            let in_window = a.year >= ya - cfg.action_window_years && a.year <= yb + cfg.action_window_years;
            let large = match revenues.get(&a.year) {
                Some(rev) => a.amount >= cfg.action_revenue_fraction * rev,
                None => false,
            };
            if in_window && large {
                explained = true;
            }
        }
        !explained
    };
    let mut out = Vec::new();
    for i in 0..points.len() {
        let dropped = (i..points.len().saturating_sub(1)).any(unexplained_jump_at);
        if !dropped {
            out.push(points[i]);
        }
    }
    out
}

/// Years with gaps, values drifting with occasional jumps, actions and
/// revenues over the same span.
pub fn random_case(seed: u64) -> (Vec<(i32, f64)>, Vec<CorporateAction>, BTreeMap<i32, f64>) {
    let mut r = rng(seed);
    let n = r.random_range(0..10);
    let mut year = r.random_range(2005..2012);
    let mut value: f64 = 10f64.powf(r.random_range(2.0..6.0));
    let mut points = Vec::new();
    for _ in 0..n {
        points.push((year, value));
        year += if r.random_bool(0.2) { 2 } else { 1 };
        let factor = if r.random_bool(0.3) {
            [0.2, 0.4, 1.6, 3.0][r.random_range(0..4)]
        } else {
            r.random_range(0.7..1.3)
        };
        value *= factor;
    }
    let actions = (0..r.random_range(0..3))
        .map(|_| CorporateAction {
            company_id: "C".into(),
            year: r.random_range(2004..2024),
            amount: r.random_range(0.0..80.0),
        })
        .collect();
    let revenues = (2004..2024).filter(|_| r.random_bool(0.85)).map(|y| (y, 100.0)).collect();
    (points, actions, revenues)
}
