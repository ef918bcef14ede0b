//! Resource-ratio derivation and amount sizing.
//!
//! The ratio balances CPU and device processing times (minimal absolute log
//! of the scaled-time ratio over the integer unit grid); the amount scales
//! that ratio up by an integer multiplier until the latency target holds,
//! within the cost budget.

use crate::perfsim::scaled_time;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleReason {
    LatencyUnreachable,
    BudgetExceeded,
}

#[derive(Debug, Error, PartialEq)]
pub enum ResourceError {
    #[error("cpu and device times must both be positive")]
    NonPositiveTime,
    #[error("no feasible resource amount: {reason:?}")]
    Infeasible { reason: InfeasibleReason },
}

fn default_units() -> u32 {
    64
}

/// How measured times respond to added units, plus unit limits and prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingModel {
    #[serde(default)]
    pub cpu_serial_frac: f64,
    #[serde(default)]
    pub device_serial_frac: f64,
    #[serde(default = "default_units")]
    pub max_cpu_units: u32,
    #[serde(default = "default_units")]
    pub max_device_units: u32,
    #[serde(default)]
    pub price_cpu: f64,
    #[serde(default)]
    pub price_device: f64,
}

impl Default for ScalingModel {
    fn default() -> Self {
        ScalingModel {
            cpu_serial_frac: 0.0,
            device_serial_frac: 0.0,
            max_cpu_units: default_units(),
            max_device_units: default_units(),
            price_cpu: 0.0,
            price_device: 0.0,
        }
    }
}

impl ScalingModel {
    pub fn from_json(text: &str) -> Result<ScalingModel, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Chosen CPU:device unit ratio in lowest terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPair {
    pub cpu_units: u32,
    pub device_units: u32,
    /// Set when even the best grid point leaves more than a 10x imbalance.
    pub warning: Option<String>,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Pick the coprime unit pair that best equalizes per-unit CPU and device
/// times: minimize `|ln((cpu_time/c) / (device_time/g))|` over the grid,
/// ties to the smallest `c + g`, then smallest `c`.
pub fn compute_ratio(
    cpu_time: f64,
    device_time: f64,
    model: &ScalingModel,
) -> Result<RatioPair, ResourceError> {
    if !(cpu_time > 0.0) || !(device_time > 0.0) {
        return Err(ResourceError::NonPositiveTime);
    }
    let mut best: Option<(f64, u32, u32)> = None;
    for c in 1..=model.max_cpu_units.max(1) {
        for g in 1..=model.max_device_units.max(1) {
            if gcd(c, g) != 1 {
                continue;
            }
            let imbalance = ((cpu_time / c as f64) / (device_time / g as f64)).ln().abs();
            let better = match best {
                None => true,
                Some((bi, bc, bg)) => {
                    imbalance < bi - 1e-12
                        || ((imbalance - bi).abs() <= 1e-12
                            && (c + g < bc + bg || (c + g == bc + bg && c < bc)))
                }
            };
            if better {
                best = Some((imbalance, c, g));
            }
        }
    }
    let (_, c, g) = best.expect("grid is non-empty");
    let hi = (cpu_time / c as f64).max(device_time / g as f64);
    let lo = (cpu_time / c as f64).min(device_time / g as f64);
    let warning = (hi / lo > 10.0).then(|| {
        format!(
            "bottleneck: scaled time imbalance {:.1}x at units {c}:{g}",
            hi / lo
        )
    });
    Ok(RatioPair {
        cpu_units: c,
        device_units: g,
        warning,
    })
}

/// Measured single-unit time split the sizing works from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseTimes {
    pub cpu_time: f64,
    pub device_time: f64,
    pub transfer_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourcePlan {
    pub cpu_units: u32,
    pub device_units: u32,
    /// cpu_units / device_units.
    pub ratio: f64,
    pub est_cpu_time: f64,
    pub est_device_time: f64,
    /// max(scaled cpu, scaled device) + transfer time; transfers do not
    /// scale with units.
    pub est_latency: f64,
    pub cost: f64,
    /// Ratio multiplier: units are (k * c, k * g).
    pub k: u32,
}

pub fn plan_at_k(ratio: &RatioPair, k: u32, model: &ScalingModel, base: &BaseTimes) -> ResourcePlan {
    let c = ratio.cpu_units * k;
    let g = ratio.device_units * k;
    let est_cpu_time = scaled_time(base.cpu_time, c, model.cpu_serial_frac);
    let est_device_time = scaled_time(base.device_time, g, model.device_serial_frac);
    ResourcePlan {
        cpu_units: c,
        device_units: g,
        ratio: c as f64 / g as f64,
        est_cpu_time,
        est_device_time,
        est_latency: est_cpu_time.max(est_device_time) + base.transfer_time,
        cost: c as f64 * model.price_cpu + g as f64 * model.price_device,
        k,
    }
}

/// Smallest multiplier k >= min_k whose estimated latency meets the target,
/// keeping the ratio exactly. Fails when no multiplier fits within unit
/// caps, or when the first satisfying plan busts the budget.
pub fn size_resources_from(
    ratio: &RatioPair,
    perf_target: f64,
    budget: f64,
    model: &ScalingModel,
    base: &BaseTimes,
    min_k: u32,
) -> Result<ResourcePlan, ResourceError> {
    let mut k = min_k.max(1);
    while ratio.cpu_units * k <= model.max_cpu_units
        && ratio.device_units * k <= model.max_device_units
    {
        let plan = plan_at_k(ratio, k, model, base);
        if plan.est_latency <= perf_target {
            if plan.cost > budget {
                return Err(ResourceError::Infeasible {
                    reason: InfeasibleReason::BudgetExceeded,
                });
            }
            return Ok(plan);
        }
        k += 1;
    }
    Err(ResourceError::Infeasible {
        reason: InfeasibleReason::LatencyUnreachable,
    })
}

/// Sizing from scratch: smallest k that meets the latency target.
pub fn size_resources(
    ratio: &RatioPair,
    perf_target: f64,
    budget: f64,
    model: &ScalingModel,
    base: &BaseTimes,
) -> Result<ResourcePlan, ResourceError> {
    size_resources_from(ratio, perf_target, budget, model, base, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(max_c: u32, max_g: u32) -> ScalingModel {
        ScalingModel {
            max_cpu_units: max_c,
            max_device_units: max_g,
            price_cpu: 1.0,
            price_device: 4.0,
            ..Default::default()
        }
    }

    #[test]
    fn four_to_one() {
        let r = compute_ratio(400.0, 100.0, &model(64, 16)).unwrap();
        assert_eq!((r.cpu_units, r.device_units), (4, 1));
        assert!(r.warning.is_none());
    }

    #[test]
    fn symmetric_times() {
        let r = compute_ratio(100.0, 100.0, &model(64, 16)).unwrap();
        assert_eq!((r.cpu_units, r.device_units), (1, 1));
    }

    #[test]
    fn clamped_with_bottleneck_warning() {
        let r = compute_ratio(1000.0, 1.0, &model(64, 16)).unwrap();
        assert_eq!((r.cpu_units, r.device_units), (64, 1));
        assert!(r.warning.is_some(), "expected a bottleneck warning");
    }

    #[test]
    fn non_positive_times_rejected() {
        assert_eq!(
            compute_ratio(0.0, 5.0, &model(4, 4)),
            Err(ResourceError::NonPositiveTime)
        );
        assert_eq!(
            compute_ratio(5.0, -1.0, &model(4, 4)),
            Err(ResourceError::NonPositiveTime)
        );
    }

    #[test]
    fn doubling_reaches_target() {
        // Base latency 200 at (4,1); target 110 forces k=2 -> (8,2).
        let m = model(64, 16);
        let ratio = compute_ratio(800.0, 200.0, &m).unwrap();
        assert_eq!((ratio.cpu_units, ratio.device_units), (4, 1));
        let base = BaseTimes {
            cpu_time: 800.0,
            device_time: 200.0,
            transfer_time: 0.0,
        };
        let k1 = plan_at_k(&ratio, 1, &m, &base);
        assert_eq!(k1.est_latency, 200.0);
        let plan = size_resources(&ratio, 110.0, 1e9, &m, &base).unwrap();
        assert_eq!((plan.cpu_units, plan.device_units), (8, 2));
        assert_eq!(plan.est_latency, 100.0);
        assert_eq!(plan.k, 2);
    }

    #[test]
    fn minimal_k_when_target_already_met() {
        let m = model(64, 16);
        let ratio = compute_ratio(400.0, 100.0, &m).unwrap();
        let base = BaseTimes {
            cpu_time: 400.0,
            device_time: 100.0,
            transfer_time: 0.0,
        };
        let plan = size_resources(&ratio, 150.0, 1e9, &m, &base).unwrap();
        assert_eq!(plan.k, 1);
    }

    #[test]
    fn zero_budget_infeasible() {
        let m = model(64, 16);
        let ratio = compute_ratio(400.0, 100.0, &m).unwrap();
        let base = BaseTimes {
            cpu_time: 400.0,
            device_time: 100.0,
            transfer_time: 0.0,
        };
        assert_eq!(
            size_resources(&ratio, 150.0, 0.0, &m, &base),
            Err(ResourceError::Infeasible {
                reason: InfeasibleReason::BudgetExceeded
            })
        );
    }

    #[test]
    fn unreachable_latency_infeasible() {
        let m = model(4, 4);
        let ratio = compute_ratio(400.0, 100.0, &m).unwrap();
        let base = BaseTimes {
            cpu_time: 400.0,
            device_time: 100.0,
            transfer_time: 50.0,
        };
        // Transfers never scale, so a target below them is unreachable.
        assert_eq!(
            size_resources(&ratio, 10.0, 1e9, &m, &base),
            Err(ResourceError::Infeasible {
                reason: InfeasibleReason::LatencyUnreachable
            })
        );
    }

    #[test]
    fn ratio_preserved_across_k() {
        let m = model(64, 64);
        let ratio = compute_ratio(300.0, 200.0, &m).unwrap();
        assert_eq!((ratio.cpu_units, ratio.device_units), (3, 2));
        let base = BaseTimes {
            cpu_time: 300.0,
            device_time: 200.0,
            transfer_time: 0.0,
        };
        for k in 1..=10 {
            let p = plan_at_k(&ratio, k, &m, &base);
            assert_eq!(p.cpu_units * ratio.device_units, p.device_units * ratio.cpu_units);
        }
    }
}
