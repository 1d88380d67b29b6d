//! Drop-and-grow state machine: cubic sparsity schedule, cosine-annealed
//! death rate, per-layer drop/grow counts, and the mask mutations themselves.
//!
//! Three policies share this machinery:
//!   - decreasing density + gradient-top-k growth (the default),
//!   - constant density + gradient-top-k growth (RigL-style),
//!   - constant density + uniform random growth (SET-style).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{round_half_up, MaskedLayer};
use crate::tensor::{bottom_k_abs, top_k_abs, IndexSet, Tensor};

/// Cubic per-layer sparsity schedule over the update grid
/// {t0, t0+dt, ..., t0+n*dt}.
#[derive(Debug, Clone)]
pub struct SparsitySchedule {
    pub theta_i: f64,
    pub theta_f: f64,
    pub t0: usize,
    pub delta_t: usize,
    pub n: usize,
    pub per_layer_i: Vec<f64>,
    pub per_layer_f: Vec<f64>,
}

impl SparsitySchedule {
    pub fn new(
        theta_i: f64,
        theta_f: f64,
        t0: usize,
        delta_t: usize,
        n: usize,
        per_layer_i: Vec<f64>,
        per_layer_f: Vec<f64>,
    ) -> Result<Self> {
        if theta_i > theta_f {
            return Err(Error::Config(format!(
                "theta_i ({theta_i}) must not exceed theta_f ({theta_f})"
            )));
        }
        if delta_t == 0 {
            return Err(Error::Config("delta_t must be at least 1".into()));
        }
        if per_layer_i.len() != per_layer_f.len() {
            return Err(Error::Config("per-layer distributions differ in length".into()));
        }
        for (l, (i, f)) in per_layer_i.iter().zip(&per_layer_f).enumerate() {
            if i > f {
                return Err(Error::Config(format!(
                    "layer {l}: initial sparsity {i} exceeds final sparsity {f}"
                )));
            }
        }
        Ok(SparsitySchedule {
            theta_i,
            theta_f,
            t0,
            delta_t,
            n,
            per_layer_i,
            per_layer_f,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.per_layer_i.len()
    }

    /// Round index of an on-grid iteration, or an error off the grid.
    pub fn round_of(&self, t: usize) -> Result<usize> {
        if t < self.t0
            || (t - self.t0) % self.delta_t != 0
            || (t - self.t0) / self.delta_t > self.n
        {
            return Err(Error::Schedule(format!(
                "iteration {t} is not on the grid t0={} + q*{} for q in 0..={}",
                self.t0, self.delta_t, self.n
            )));
        }
        Ok((t - self.t0) / self.delta_t)
    }
}

/// theta_t^l = theta_f^l + (theta_i^l - theta_f^l)(1 - (t-t0)/(n*dt))^3.
pub fn sparsity_at(sched: &SparsitySchedule, layer: usize, t: usize) -> Result<f64> {
    let q = sched.round_of(t)?;
    let (ti, tf) = (sched.per_layer_i[layer], sched.per_layer_f[layer]);
    if q == 0 || sched.n == 0 {
        // Endpoint returned exactly rather than through the cubic.
        return Ok(if sched.n == 0 { tf } else { ti });
    }
    let frac = q as f64 / sched.n as f64;
    Ok(tf + (ti - tf) * (1.0 - frac).powi(3))
}

/// Cosine-annealed death ratio over the same update grid.
#[derive(Debug, Clone)]
pub struct DeathRateSchedule {
    pub d0: f64,
    pub d_min: f64,
    pub t0: usize,
    pub delta_t: usize,
    pub n: usize,
}

impl DeathRateSchedule {
    pub fn new(d0: f64, d_min: f64, t0: usize, delta_t: usize, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&d0) || !(0.0..=1.0).contains(&d_min) || d_min > d0 {
            return Err(Error::Config(format!(
                "need 0 <= d_min <= d0 <= 1, got d0={d0}, d_min={d_min}"
            )));
        }
        if delta_t == 0 {
            return Err(Error::Config("delta_t must be at least 1".into()));
        }
        Ok(DeathRateSchedule {
            d0,
            d_min,
            t0,
            delta_t,
            n,
        })
    }
}

/// d_t = d_min + 0.5 (d0 - d_min)(1 + cos(pi (t-t0)/(n*dt))).
pub fn death_rate_at(sched: &DeathRateSchedule, t: usize) -> Result<f64> {
    if t < sched.t0
        || (t - sched.t0) % sched.delta_t != 0
        || (t - sched.t0) / sched.delta_t > sched.n
    {
        return Err(Error::Schedule(format!(
            "iteration {t} is not on the death-rate grid t0={} + q*{} for q in 0..={}",
            sched.t0, sched.delta_t, sched.n
        )));
    }
    let q = (t - sched.t0) / sched.delta_t;
    if sched.n == 0 || q == 0 {
        return Ok(if sched.n == 0 { sched.d_min } else { sched.d0 });
    }
    if q == sched.n {
        return Ok(sched.d_min);
    }
    let frac = q as f64 / sched.n as f64;
    Ok(sched.d_min + 0.5 * (sched.d0 - sched.d_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// How grown positions are chosen and whether density decays over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthSelection {
    GradientTopK,
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMode {
    Decaying,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowthPolicy {
    pub selection: GrowthSelection,
    pub density: DensityMode,
}

impl GrowthPolicy {
    /// Gradient-top-k growth with decaying density.
    pub fn ndsnn() -> Self {
        GrowthPolicy {
            selection: GrowthSelection::GradientTopK,
            density: DensityMode::Decaying,
        }
    }

    /// Gradient-top-k growth at constant density (RigL-style).
    pub fn rigl() -> Self {
        GrowthPolicy {
            selection: GrowthSelection::GradientTopK,
            density: DensityMode::Constant,
        }
    }

    /// Uniform random growth at constant density (SET-style).
    pub fn set() -> Self {
        GrowthPolicy {
            selection: GrowthSelection::UniformRandom,
            density: DensityMode::Constant,
        }
    }
}

/// Drop/grow counts for one layer at one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPlan {
    pub round: usize,
    pub layer: usize,
    pub n_pre: usize,
    pub d_count: usize,
    pub n_post: usize,
    pub g_count: usize,
}

#[derive(Debug, Clone)]
pub struct UpdatePlan {
    pub round: usize,
    pub iteration: usize,
    pub death_rate: f64,
    pub layers: Vec<LayerPlan>,
}

/// Computes per-layer drop and grow counts for the update at iteration `t`:
/// drop round(d_t * n_pre) of the active weights, then grow back up to the
/// scheduled density target round((1-theta_t) * N), clamped at zero growth
/// if the drop quota undershoots the density decrease.
pub fn plan_update(
    layers: &[MaskedLayer],
    sched: &SparsitySchedule,
    death_sched: &DeathRateSchedule,
    policy: &GrowthPolicy,
    t: usize,
) -> Result<UpdatePlan> {
    if layers.len() != sched.layer_count() {
        return Err(Error::Config(format!(
            "{} layers but schedule covers {}",
            layers.len(),
            sched.layer_count()
        )));
    }
    let round = sched.round_of(t)?;
    if round == 0 {
        return Err(Error::Schedule(format!(
            "first update fires at t0+delta_t (t0={}, delta_t={}); got t={t}",
            sched.t0, sched.delta_t
        )));
    }
    let d_t = death_rate_at(death_sched, t)?;
    let mut rows = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let n_total = layer.weight_count();
        let n_pre = layer.active_count();
        let d_count = round_half_up(d_t * n_pre as f64).min(n_pre);
        let n_post = n_pre - d_count;
        let theta_t = match policy.density {
            DensityMode::Decaying => sparsity_at(sched, l, t)?,
            DensityMode::Constant => sched.per_layer_i[l],
        };
        let target_active = round_half_up((1.0 - theta_t) * n_total as f64).min(n_total);
        let g_count = target_active.saturating_sub(n_post);
        rows.push(LayerPlan {
            round,
            layer: l,
            n_pre,
            d_count,
            n_post,
            g_count,
        });
    }
    Ok(UpdatePlan {
        round,
        iteration: t,
        death_rate: d_t,
        layers: rows,
    })
}

/// Which positions died and which were born in one layer's update.
#[derive(Debug, Clone)]
pub struct ChangeReport {
    pub round: usize,
    pub layer: usize,
    pub dropped: IndexSet,
    pub grown: IndexSet,
    pub resulting_density: f64,
}

impl ChangeReport {
    /// One audit-log line: round, layer, dropped count, grown count, density.
    pub fn log_line(&self) -> String {
        format!(
            "round={} layer={} dropped={} grown={} density={:.6}",
            self.round,
            self.layer,
            self.dropped.len(),
            self.grown.len(),
            self.resulting_density
        )
    }
}

/// Applies one layer's plan: drops the smallest-magnitude active weights,
/// then grows new connections at zero initial value. Positions dropped in
/// this round are not eligible to regrow in the same round.
pub fn apply_update(
    layer: &mut MaskedLayer,
    plan: &LayerPlan,
    dense_grad: &Tensor,
    policy: &GrowthPolicy,
    rng: &mut impl Rng,
) -> Result<ChangeReport> {
    if dense_grad.shape() != layer.weights().shape() {
        return Err(Error::Dimension(format!(
            "gradient shape {:?} does not match layer {:?}",
            dense_grad.shape(),
            layer.weights().shape()
        )));
    }
    let n = layer.weight_count();
    let active: Vec<usize> = (0..n)
        .filter(|&i| layer.mask().data()[i] == 1.0)
        .collect();
    let inactive_before: Vec<usize> = (0..n)
        .filter(|&i| layer.mask().data()[i] == 0.0)
        .collect();
    if active.len() != plan.n_pre {
        return Err(Error::State(format!(
            "plan expects {} active weights, layer has {}",
            plan.n_pre,
            active.len()
        )));
    }
    assert!(
        plan.g_count <= inactive_before.len(),
        "grow count {} exceeds {} inactive positions",
        plan.g_count,
        inactive_before.len()
    );

    let active_set = IndexSet::new(active)?;
    let dropped = bottom_k_abs(layer.weights(), plan.d_count, Some(&active_set))?;
    for &i in dropped.indices() {
        layer.deactivate(i);
    }

    let grown = match policy.selection {
        GrowthSelection::GradientTopK => {
            let candidates = IndexSet::new(inactive_before.clone())?;
            top_k_abs(dense_grad, plan.g_count, Some(&candidates))?
        }
        GrowthSelection::UniformRandom => {
            let picks =
                rand::seq::index::sample(rng, inactive_before.len(), plan.g_count);
            IndexSet::new(picks.iter().map(|i| inactive_before[i]).collect())?
        }
    };
    for &i in grown.indices() {
        layer.activate(i, 0.0);
    }

    Ok(ChangeReport {
        round: plan.round,
        layer: plan.layer,
        dropped,
        grown,
        resulting_density: layer.density(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::LayerKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched(theta_i: f64, theta_f: f64, n: usize) -> SparsitySchedule {
        SparsitySchedule::new(theta_i, theta_f, 0, 10, n, vec![theta_i], vec![theta_f]).unwrap()
    }

    #[test]
    fn sparsity_endpoints_exact() {
        let s = sched(0.8, 0.95, 4);
        assert_eq!(sparsity_at(&s, 0, 0).unwrap(), 0.8);
        assert_eq!(sparsity_at(&s, 0, 40).unwrap(), 0.95);
    }

    #[test]
    fn sparsity_midpoint_matches_cubic() {
        let s = sched(0.8, 0.95, 4);
        let v = sparsity_at(&s, 0, 20).unwrap();
        assert!((v - 0.93125).abs() < 1e-12, "{v}");
    }

    #[test]
    fn sparsity_off_grid_is_schedule_error() {
        let s = sched(0.8, 0.95, 4);
        assert!(matches!(sparsity_at(&s, 0, 7), Err(Error::Schedule(_))));
        assert!(matches!(sparsity_at(&s, 0, 50), Err(Error::Schedule(_))));
    }

    #[test]
    fn sparsity_nondecreasing_over_grid() {
        let s = sched(0.5, 0.99, 10);
        let mut prev = 0.0;
        for q in 0..=10 {
            let v = sparsity_at(&s, 0, q * 10).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn death_rate_endpoints_and_midpoint() {
        let d = DeathRateSchedule::new(0.5, 0.05, 0, 10, 4).unwrap();
        assert_eq!(death_rate_at(&d, 0).unwrap(), 0.5);
        assert_eq!(death_rate_at(&d, 40).unwrap(), 0.05);
        let mid = death_rate_at(&d, 20).unwrap();
        assert!((mid - 0.275).abs() < 1e-12, "{mid}");
    }

    #[test]
    fn death_rate_nonincreasing() {
        let d = DeathRateSchedule::new(0.7, 0.1, 5, 3, 8).unwrap();
        let mut prev = 1.0;
        for q in 0..=8 {
            let v = death_rate_at(&d, 5 + q * 3).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    fn layer_with_active(n_in: usize, n_out: usize, active: usize) -> MaskedLayer {
        let kind = LayerKind::Linear { n_in, n_out };
        let n = kind.weight_count();
        let weights: Vec<f32> = (0..n).map(|i| (i + 1) as f32 * 0.01).collect();
        let mask: Vec<f32> = (0..n).map(|i| if i < active { 1.0 } else { 0.0 }).collect();
        MaskedLayer::new(
            kind,
            Tensor::new(kind.tensor_shape(), weights).unwrap(),
            Tensor::new(kind.tensor_shape(), mask).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn plan_update_worked_example() {
        // N=1000, theta_prev=0.80, d_t=0.1, theta_t=0.81
        // -> n_pre=200, drop=20, post=180, grow=10.
        let layer = layer_with_active(40, 25, 200);
        // Single-round schedule landing exactly on theta_t = 0.81 with d_t = 0.1.
        let sched = SparsitySchedule::new(0.80, 0.81, 0, 10, 1, vec![0.80], vec![0.81]).unwrap();
        let death = DeathRateSchedule::new(0.1, 0.1, 0, 10, 1).unwrap();
        let plan = plan_update(
            std::slice::from_ref(&layer),
            &sched,
            &death,
            &GrowthPolicy::ndsnn(),
            10,
        )
        .unwrap();
        let row = plan.layers[0];
        assert_eq!(
            (row.n_pre, row.d_count, row.n_post, row.g_count),
            (200, 20, 180, 10)
        );
    }

    #[test]
    fn plan_noop_round() {
        let layer = layer_with_active(10, 10, 50);
        let sched = SparsitySchedule::new(0.5, 0.5, 0, 10, 2, vec![0.5], vec![0.5]).unwrap();
        let death = DeathRateSchedule::new(0.0, 0.0, 0, 10, 2).unwrap();
        let plan = plan_update(
            std::slice::from_ref(&layer),
            &sched,
            &death,
            &GrowthPolicy::ndsnn(),
            10,
        )
        .unwrap();
        assert_eq!(plan.layers[0].d_count, 0);
        assert_eq!(plan.layers[0].g_count, 0);
    }

    #[test]
    fn plan_constant_density_grows_what_it_drops() {
        let layer = layer_with_active(10, 10, 50);
        let sched = SparsitySchedule::new(0.5, 0.9, 0, 10, 4, vec![0.5], vec![0.9]).unwrap();
        let death = DeathRateSchedule::new(0.3, 0.1, 0, 10, 4).unwrap();
        for q in 1..=4 {
            let plan = plan_update(
                std::slice::from_ref(&layer),
                &sched,
                &death,
                &GrowthPolicy::rigl(),
                q * 10,
            )
            .unwrap();
            assert_eq!(plan.layers[0].g_count, plan.layers[0].d_count);
        }
    }

    #[test]
    fn plan_rejects_round_zero() {
        let layer = layer_with_active(10, 10, 50);
        let sched = SparsitySchedule::new(0.5, 0.9, 0, 10, 4, vec![0.5], vec![0.9]).unwrap();
        let death = DeathRateSchedule::new(0.3, 0.1, 0, 10, 4).unwrap();
        assert!(matches!(
            plan_update(
                std::slice::from_ref(&layer),
                &sched,
                &death,
                &GrowthPolicy::ndsnn(),
                0
            ),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn apply_update_drop_magnitude_grow_gradient() {
        // weights [0.9, -0.05, inactive, 0.4]; drop 1 -> index 1;
        // grow 1 by gradient -> index 2, born at zero.
        let kind = LayerKind::Linear { n_in: 4, n_out: 1 };
        let mut layer = MaskedLayer::new(
            kind,
            Tensor::new(vec![1, 4], vec![0.9, -0.05, 0.0, 0.4]).unwrap(),
            Tensor::new(vec![1, 4], vec![1.0, 1.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let plan = LayerPlan {
            round: 1,
            layer: 0,
            n_pre: 3,
            d_count: 1,
            n_post: 2,
            g_count: 1,
        };
        let grad = Tensor::new(vec![1, 4], vec![0.1, 0.1, 0.7, 0.1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = apply_update(
            &mut layer,
            &plan,
            &grad,
            &GrowthPolicy::ndsnn(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.dropped.indices(), &[1]);
        assert_eq!(report.grown.indices(), &[2]);
        assert_eq!(layer.mask().data(), &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(layer.weights().data(), &[0.9, 0.0, 0.0, 0.4]);
        assert_eq!(layer.active_count(), plan.n_post + plan.g_count);
    }

    #[test]
    fn apply_update_full_drop_annihilates() {
        let mut layer = layer_with_active(2, 2, 4);
        let plan = LayerPlan {
            round: 1,
            layer: 0,
            n_pre: 4,
            d_count: 4,
            n_post: 0,
            g_count: 0,
        };
        let grad = Tensor::zeros(vec![2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        apply_update(&mut layer, &plan, &grad, &GrowthPolicy::ndsnn(), &mut rng).unwrap();
        assert_eq!(layer.active_count(), 0);
        assert!(layer.weights().data().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn apply_update_random_policy_is_seeded() {
        let grad = Tensor::zeros(vec![4, 5]);
        let plan = LayerPlan {
            round: 1,
            layer: 0,
            n_pre: 10,
            d_count: 3,
            n_post: 7,
            g_count: 3,
        };
        let run = |seed: u64| {
            let mut layer = layer_with_active(5, 4, 10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            apply_update(&mut layer, &plan, &grad, &GrowthPolicy::set(), &mut rng).unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a.grown, b.grown);
    }

    #[test]
    fn dropped_and_grown_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20u64 {
            let mut layer = layer_with_active(6, 6, 20);
            let plan = LayerPlan {
                round: 1,
                layer: 0,
                n_pre: 20,
                d_count: 5,
                n_post: 15,
                g_count: 4,
            };
            let grad_vals: Vec<f32> = (0..36).map(|i| ((i * 7 + seed as usize) % 13) as f32).collect();
            let grad = Tensor::new(vec![6, 6], grad_vals).unwrap();
            let report =
                apply_update(&mut layer, &plan, &grad, &GrowthPolicy::ndsnn(), &mut rng).unwrap();
            for i in report.dropped.indices() {
                assert!(!report.grown.contains(*i));
            }
            assert_eq!(layer.active_count(), 19);
        }
    }
}
