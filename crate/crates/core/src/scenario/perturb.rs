use serde::{Deserialize, Serialize};

use crate::grid::{BusType, Grid};
use crate::rng::SplitMix64;

use super::{ElementKind, ElementRef, ScenarioError, STREAM_LOAD};

/// Distribution of the multiplicative load factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadScale {
    Uniform { lo: f64, hi: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

impl LoadScale {
    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            LoadScale::Uniform { lo, hi } => rng.uniform(lo, hi),
            LoadScale::Lognormal { mu, sigma } => (mu + sigma * rng.normal()).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyDrop {
    #[default]
    None,
    NMinusK {
        k: usize,
        element_kinds: Vec<ElementKind>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub load_scale: LoadScale,
    #[serde(default = "yes")]
    pub q_tracks_p: bool,
    /// One factor per scenario shared by every load instead of one per load.
    #[serde(default)]
    pub global_factor: bool,
    #[serde(default)]
    pub topology_drop: TopologyDrop,
    pub seed: u64,
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        match self.load_scale {
            LoadScale::Uniform { lo, hi } if !(lo > 0.0 && hi >= lo && hi.is_finite()) => {
                return Err(ScenarioError::InvalidConfig(format!(
                    "uniform load scale needs 0 < lo <= hi, got ({lo}, {hi})"
                )))
            }
            LoadScale::Lognormal { mu, sigma } if !(mu.is_finite() && sigma >= 0.0 && sigma.is_finite()) => {
                return Err(ScenarioError::InvalidConfig(format!(
                    "lognormal load scale needs finite mu and sigma >= 0, got ({mu}, {sigma})"
                )))
            }
            _ => {}
        }
        if let TopologyDrop::NMinusK { k, element_kinds } = &self.topology_drop {
            if *k == 0 {
                return Err(ScenarioError::InvalidConfig("n_minus_k requires k >= 1".into()));
            }
            if element_kinds.is_empty() {
                return Err(ScenarioError::InvalidConfig("n_minus_k requires element kinds".into()));
            }
        }
        Ok(())
    }
}

/// Scale every bus demand by an independent draw (or one shared draw when
/// `global_factor` is set). The result depends only on `(seed, draw, bus)`.
pub fn perturb_load(grid: &Grid, cfg: &PerturbConfig, draw: u64) -> Grid {
    let mut out = grid.clone();
    let shared = cfg
        .global_factor
        .then(|| cfg.load_scale.sample(&mut SplitMix64::from_stream(cfg.seed, &[STREAM_LOAD, draw, u64::MAX])));
    for (i, bus) in out.buses.iter_mut().enumerate() {
        if bus.p_load == 0.0 && bus.q_load == 0.0 {
            continue;
        }
        let factor = shared.unwrap_or_else(|| {
            cfg.load_scale
                .sample(&mut SplitMix64::from_stream(cfg.seed, &[STREAM_LOAD, draw, i as u64]))
        });
        bus.p_load *= factor;
        if cfg.q_tracks_p {
            bus.q_load *= factor;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Disconnected,
    NoSlack,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    Valid(Grid),
    Rejected(RejectReason),
}

impl Topology {
    pub fn grid(self) -> Option<Grid> {
        match self {
            Topology::Valid(g) => Some(g),
            Topology::Rejected(_) => None,
        }
    }
}

/// Droppable elements of the requested kinds: every branch, and every
/// generator bus other than the slack.
pub fn candidates(grid: &Grid, kinds: &[ElementKind]) -> Vec<ElementRef> {
    let mut out = Vec::new();
    if kinds.contains(&ElementKind::Branch) {
        out.extend((0..grid.n_branches()).map(ElementRef::branch));
    }
    if kinds.contains(&ElementKind::Generator) {
        out.extend(
            grid.buses
                .iter()
                .enumerate()
                .filter(|(_, b)| b.kind == BusType::Generator)
                .map(|(i, _)| ElementRef::generator(i)),
        );
    }
    out
}

/// Remove branches and demote generator buses to loads with no generation.
/// Demand at a demoted bus is kept. Disconnected or slackless results are
/// rejected rather than repaired.
pub fn perturb_topology(grid: &Grid, drop: &[ElementRef]) -> Result<Topology, ScenarioError> {
    let mut out = grid.clone();
    let mut dropped_branches = vec![false; grid.n_branches()];
    for &e in drop {
        match e.kind {
            ElementKind::Branch => {
                *dropped_branches
                    .get_mut(e.index)
                    .ok_or(ScenarioError::InvalidRef(e))? = true;
            }
            ElementKind::Generator => {
                let bus = out.buses.get_mut(e.index).ok_or(ScenarioError::InvalidRef(e))?;
                match bus.kind {
                    BusType::Generator | BusType::Slack => {
                        bus.kind = BusType::Load;
                        bus.p_gen = 0.0;
                        bus.q_gen = 0.0;
                        bus.v_set = 1.0;
                        bus.angle_set = 0.0;
                    }
                    // Already demoted by a duplicate reference.
                    BusType::Load if grid.buses[e.index].kind != BusType::Load => {}
                    BusType::Load => return Err(ScenarioError::InvalidRef(e)),
                }
            }
        }
    }
    let mut keep = dropped_branches.iter().map(|d| !d);
    out.branches.retain(|_| keep.next().unwrap_or(true));
    if out.slack().is_none() {
        return Ok(Topology::Rejected(RejectReason::NoSlack));
    }
    if !out.is_connected() {
        return Ok(Topology::Rejected(RejectReason::Disconnected));
    }
    Ok(Topology::Valid(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, Complex};

    fn bus(kind: BusType, load: f64) -> Bus {
        Bus {
            kind,
            p_gen: if kind == BusType::Load { 0.0 } else { 0.3 },
            q_gen: 0.0,
            p_load: load,
            q_load: load / 2.0,
            v_set: 1.0,
            angle_set: 0.0,
        }
    }

    /// Triangle 0-1-2 with a spur 2-3.
    fn ring_plus_spur() -> Grid {
        let br = |from, to| Branch { from, to, z: Complex::new(0.01, 0.1) };
        Grid {
            name: "ring".into(),
            base_mva: 100.0,
            bus_ids: vec![1, 2, 3, 4],
            buses: vec![
                bus(BusType::Slack, 0.0),
                bus(BusType::Generator, 0.1),
                bus(BusType::Load, 0.2),
                bus(BusType::Load, 0.1),
            ],
            branches: vec![br(0, 1), br(1, 2), br(2, 0), br(2, 3)],
        }
    }

    fn cfg(lo: f64, hi: f64) -> PerturbConfig {
        PerturbConfig {
            load_scale: LoadScale::Uniform { lo, hi },
            q_tracks_p: true,
            global_factor: false,
            topology_drop: TopologyDrop::None,
            seed: 5,
        }
    }

    #[test]
    fn degenerate_scale_is_identity() {
        let g = ring_plus_spur();
        assert_eq!(perturb_load(&g, &cfg(1.0, 1.0), 17), g);
    }

    #[test]
    fn same_draw_same_grid() {
        let g = ring_plus_spur();
        let c = cfg(0.8, 1.2);
        assert_eq!(perturb_load(&g, &c, 3), perturb_load(&g, &c, 3));
        assert_ne!(perturb_load(&g, &c, 3), perturb_load(&g, &c, 4));
    }

    #[test]
    fn load_factor_mean() {
        let g = ring_plus_spur();
        let c = cfg(0.8, 1.2);
        let n = 10_000;
        let mean = (0..n)
            .map(|d| perturb_load(&g, &c, d).buses[2].p_load / g.buses[2].p_load)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn global_factor_is_shared() {
        let g = ring_plus_spur();
        let mut c = cfg(0.5, 1.5);
        c.global_factor = true;
        let p = perturb_load(&g, &c, 9);
        let f2 = p.buses[2].p_load / g.buses[2].p_load;
        let f3 = p.buses[3].p_load / g.buses[3].p_load;
        assert!((f2 - f3).abs() < 1e-15);
    }

    #[test]
    fn q_does_not_track_when_disabled() {
        let g = ring_plus_spur();
        let mut c = cfg(0.5, 1.5);
        c.q_tracks_p = false;
        let p = perturb_load(&g, &c, 2);
        assert_eq!(p.buses[2].q_load, g.buses[2].q_load);
        assert_ne!(p.buses[2].p_load, g.buses[2].p_load);
    }

    #[test]
    fn spur_drop_is_rejected() {
        let g = ring_plus_spur();
        assert_eq!(
            perturb_topology(&g, &[ElementRef::branch(3)]).unwrap(),
            Topology::Rejected(RejectReason::Disconnected)
        );
    }

    #[test]
    fn ring_drop_stays_connected() {
        let mut g = ring_plus_spur();
        g.buses.pop();
        g.bus_ids.pop();
        g.branches.pop();
        let t = perturb_topology(&g, &[ElementRef::branch(0)]).unwrap().grid().unwrap();
        assert_eq!(t.n_buses(), 3);
        assert_eq!(t.n_branches(), 2);
        assert_eq!(t.island_count(), 1);
    }

    #[test]
    fn generator_drop_retypes() {
        let g = ring_plus_spur();
        let t = perturb_topology(&g, &[ElementRef::generator(1)]).unwrap().grid().unwrap();
        assert_eq!(t.buses[1].kind, BusType::Load);
        assert_eq!(t.buses[1].p_gen, 0.0);
        assert_eq!(t.buses[1].p_load, g.buses[1].p_load);
    }

    #[test]
    fn slack_drop_is_rejected() {
        let g = ring_plus_spur();
        assert_eq!(
            perturb_topology(&g, &[ElementRef::generator(0)]).unwrap(),
            Topology::Rejected(RejectReason::NoSlack)
        );
    }

    #[test]
    fn invalid_refs() {
        let g = ring_plus_spur();
        assert!(matches!(
            perturb_topology(&g, &[ElementRef::branch(4)]),
            Err(ScenarioError::InvalidRef(_))
        ));
        assert!(matches!(
            perturb_topology(&g, &[ElementRef::generator(2)]),
            Err(ScenarioError::InvalidRef(_))
        ));
    }

    #[test]
    fn candidate_lists() {
        let g = ring_plus_spur();
        assert_eq!(candidates(&g, &[ElementKind::Branch]).len(), 4);
        assert_eq!(candidates(&g, &[ElementKind::Generator]), vec![ElementRef::generator(1)]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 1.0).validate().is_err());
        assert!(cfg(1.2, 1.0).validate().is_err());
        let mut c = cfg(1.0, 1.0);
        c.topology_drop = TopologyDrop::NMinusK { k: 0, element_kinds: vec![ElementKind::Branch] };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_shape() {
        let c: PerturbConfig = serde_json::from_str(
            r#"{"load_scale": {"uniform": {"lo": 0.8, "hi": 1.2}},
                "topology_drop": {"n_minus_k": {"k": 1, "element_kinds": ["branch"]}},
                "seed": 7}"#,
        )
        .unwrap();
        assert!(c.q_tracks_p);
        assert_eq!(
            c.topology_drop,
            TopologyDrop::NMinusK { k: 1, element_kinds: vec![ElementKind::Branch] }
        );
        let none: TopologyDrop = serde_json::from_str(r#""none""#).unwrap();
        assert_eq!(none, TopologyDrop::None);
    }
}
