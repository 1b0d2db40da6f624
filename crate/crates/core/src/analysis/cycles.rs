use serde::{Deserialize, Serialize};

use crate::builders::{Component, ComponentTags};
use crate::error::{Error, Result};
use crate::network::SCHEMA_VERSION;
use crate::sim::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleParams {
    pub nu: f64,
    /// Arrival rate per component.
    pub a: f64,
    /// LQFS variant: the hub loses priority once it is no longer longer than
    /// every spread queue (threshold multiplier 1 instead of `nu`).
    pub primed: bool,
}

impl CycleParams {
    pub fn threshold_multiplier(&self) -> f64 {
        if self.primed {
            1.0
        } else {
            self.nu
        }
    }

    /// Predicted `(V - start) / M`.
    pub fn duration_coefficient(&self, j: usize) -> f64 {
        let j = j as f64;
        if self.primed {
            (j / (j + 1.0)) / (1.0 - self.a + self.a / j)
        } else {
            (j / (j + self.nu)) / (1.0 - self.a + self.a * self.nu / j)
        }
    }

    /// Predicted mass ratio at `V` relative to `M`.
    pub fn growth_prediction(&self, j: usize) -> f64 {
        let j = j as f64;
        if self.primed {
            self.a / (1.0 - self.a + self.a / j)
        } else {
            self.a / (1.0 - self.a + self.a * self.nu / j)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub start: u64,
    pub u: u64,
    pub v: u64,
    /// Component holding the mass at `start`.
    pub component: Component,
    pub m: u64,
    /// Mass of the other component at `v`.
    pub m_next: u64,
    pub growth_factor: f64,
    pub predicted_v: f64,
    pub measured_duration: u64,
    pub predicted_duration: f64,
    /// `max_j |Q_hub - mult * Q_j|` over the other component at `v`.
    pub balance_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleAnalysis {
    pub schema_version: u32,
    pub params: CycleParams,
    pub duration_coefficient: f64,
    pub growth_prediction: f64,
    pub cycles: Vec<CycleReport>,
    /// Why scanning stopped early (or why nothing was found).
    pub diagnostic: Option<String>,
}

impl CycleAnalysis {
    /// Geometric mean of the growth factors, skipping the first `skip` cycles.
    pub fn geometric_mean_growth(&self, skip: usize) -> Option<f64> {
        let g: Vec<f64> = self
            .cycles
            .iter()
            .skip(skip)
            .map(|c| c.growth_factor)
            .collect();
        (!g.is_empty()).then(|| (g.iter().map(|x| x.ln()).sum::<f64>() / g.len() as f64).exp())
    }
}

struct ComponentSeries {
    sum: Vec<u64>,
    hub: Vec<u32>,
    spread_max: Vec<u32>,
}

/// Scans a two-component trajectory for alternating cycles.
///
/// Starting from the component with more jobs, `U` is the first sample with
/// that component's total at most `nu^2`, and `V` the first sample from `U` on
/// where the other hub is at most `mult` times its longest spread queue. The
/// next cycle starts at `V` with the roles swapped.
pub fn detect_cycles(
    traj: &Trajectory,
    tags: &ComponentTags,
    params: &CycleParams,
) -> Result<CycleAnalysis> {
    if !(params.nu >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "nu must be >= 1 (got {})",
            params.nu
        )));
    }
    let r = tags.resolve(&traj.queue_ids)?;
    let j = r.spread[0].len();
    let n = traj.len();
    let series: Vec<ComponentSeries> = (0..2)
        .map(|c| {
            let mut s = ComponentSeries {
                sum: Vec::with_capacity(n),
                hub: Vec::with_capacity(n),
                spread_max: Vec::with_capacity(n),
            };
            for i in 0..n {
                let row = traj.row(i);
                let hub = row[r.hub[c]];
                let spread = r.spread[c].iter().map(|&q| row[q]);
                s.hub.push(hub);
                s.spread_max.push(spread.clone().max().unwrap_or(0));
                s.sum
                    .push(u64::from(hub) + spread.map(u64::from).sum::<u64>());
            }
            s
        })
        .collect();

    let mult = params.threshold_multiplier();
    let empty_level = params.nu * params.nu;
    let coeff = params.duration_coefficient(j);
    let mut out = CycleAnalysis {
        schema_version: SCHEMA_VERSION,
        params: *params,
        duration_coefficient: coeff,
        growth_prediction: params.growth_prediction(j),
        cycles: Vec::new(),
        diagnostic: None,
    };
    if n == 0 {
        out.diagnostic = Some("empty trajectory".into());
        return Ok(out);
    }

    let mut loaded = if series[1].sum[0] > series[0].sum[0] {
        Component::B
    } else {
        Component::A
    };
    let mut start = 0usize;
    loop {
        let (l, o) = (&series[loaded.index()], &series[loaded.other().index()]);
        let m = l.sum[start];
        if m == 0 {
            out.diagnostic = Some(format!(
                "loaded component {loaded:?} is empty at t={}",
                traj.times[start]
            ));
            break;
        }
        let Some(u) = (start..n).find(|&i| l.sum[i] as f64 <= empty_level) else {
            out.diagnostic = Some(format!(
                "component {loaded:?} never drained to nu^2 after t={}",
                traj.times[start]
            ));
            break;
        };
        let Some(v) = (u..n).find(|&i| f64::from(o.hub[i]) <= mult * f64::from(o.spread_max[i]))
        else {
            out.diagnostic = Some(format!(
                "hub of component {:?} kept priority until the end after U={}",
                loaded.other(),
                traj.times[u]
            ));
            break;
        };
        let row = traj.row(v);
        let hub = f64::from(row[r.hub[loaded.other().index()]]);
        let balance_gap = r.spread[loaded.other().index()]
            .iter()
            .map(|&q| (hub - mult * f64::from(row[q])).abs())
            .fold(0.0, f64::max);
        let m_next = o.sum[v];
        let t0 = traj.times[start];
        out.cycles.push(CycleReport {
            start: t0,
            u: traj.times[u],
            v: traj.times[v],
            component: loaded,
            m,
            m_next,
            growth_factor: m_next as f64 / m as f64,
            predicted_v: t0 as f64 + coeff * m as f64,
            measured_duration: traj.times[v] - t0,
            predicted_duration: coeff * m as f64,
            balance_gap,
        });
        if v == start {
            out.diagnostic = Some("degenerate cycle of zero length".into());
            break;
        }
        start = v;
        loaded = loaded.other();
    }
    if out.cycles.is_empty() && out.diagnostic.is_none() {
        out.diagnostic = Some("no complete cycle".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::build_instability_network;

    fn synthetic() -> (Trajectory, ComponentTags) {
        // J = 2, nu = 2: queues A0 A1 A2 B0 B1 B2
        let (spec, tags) = build_instability_network(0.5, 2.0, 2).unwrap();
        let mut traj = Trajectory::new(spec.queues.clone());
        let rows: [(u64, [u64; 6]); 5] = [
            (0, [0, 0, 0, 20, 10, 10]),
            (10, [5, 1, 1, 10, 0, 0]),
            (20, [8, 2, 2, 4, 0, 0]), // B total 4 <= nu^2: U
            (30, [8, 4, 3, 0, 0, 0]), // A0 = 8 <= 2 * 4: V
            (40, [8, 4, 3, 0, 0, 0]),
        ];
        for (t, q) in rows {
            traj.push(t, &q, None);
        }
        (traj, tags)
    }

    #[test]
    fn synthetic_single_cycle() {
        let (traj, tags) = synthetic();
        let params = CycleParams {
            nu: 2.0,
            a: 0.5,
            primed: false,
        };
        let rep = detect_cycles(&traj, &tags, &params).unwrap();
        assert_eq!(rep.cycles.len(), 1, "{rep:?}");
        let c = &rep.cycles[0];
        assert_eq!((c.start, c.u, c.v), (0, 20, 30));
        assert_eq!(c.component, Component::B);
        assert_eq!((c.m, c.m_next), (40, 15));
        assert_eq!(c.balance_gap, 2.0);
        assert!(rep.diagnostic.is_some());
        // idempotent
        assert_eq!(detect_cycles(&traj, &tags, &params).unwrap(), rep);
    }

    #[test]
    fn primed_threshold_waits_longer() {
        let (traj, tags) = synthetic();
        let params = CycleParams {
            nu: 2.0,
            a: 0.5,
            primed: true,
        };
        let rep = detect_cycles(&traj, &tags, &params).unwrap();
        assert!(rep.cycles.is_empty());
        assert!(rep.diagnostic.unwrap().contains("kept priority"));
    }

    #[test]
    fn paper_duration_coefficient() {
        let p = CycleParams {
            nu: 6.0,
            a: 7.0 / 12.0,
            primed: false,
        };
        assert!((p.duration_coefficient(30) - 1.5625).abs() < 1e-12);
        assert!((p.growth_prediction(30) - 35.0 / 32.0).abs() < 1e-12);
    }
}
