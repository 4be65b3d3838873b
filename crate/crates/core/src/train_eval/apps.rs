use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::grid::{branch_quantities, mismatch_inf_norm, Grid, NodeState};
use crate::masker::{mask_pf, merge};
use crate::nn::Model;
use crate::pf::{solve_ac, PfOptions};
use crate::scenario::{
    enumerate_contingencies, perturb_topology, ContingencySpec, ElementKind, ElementRef, RejectReason,
    Sample, Topology,
};

use super::{Reconstructor, TrainError};

/// Fill in the power-flow unknowns of `knowns` with `model` and report the
/// mismatch of the merged state on `grid`. Known entries are copied through
/// unchanged.
pub fn neural_pf<R: Reconstructor + ?Sized>(
    model: &R,
    grid: &Grid,
    knowns: &Sample,
) -> Result<(Vec<NodeState>, f64), TrainError> {
    if knowns.n_buses() != grid.n_buses() {
        return Err(crate::grid::GridError::DimensionMismatch {
            expected: grid.n_buses(),
            got: knowns.n_buses(),
        }
        .into());
    }
    let input = mask_pf(knowns)?;
    let pred = model.reconstruct(&input)?;
    let state = merge(&input, &pred)?;
    let residual = mismatch_inf_norm(grid, &state)?;
    Ok((state, residual))
}

/// Power-flow knowns of a grid: specified injections, voltage setpoints and
/// the slack angle.
pub fn knowns_from_grid(grid: &Grid, dropped: Vec<ElementRef>) -> Sample {
    Sample::from_solution(&grid.name, grid, dropped, grid.setpoint_state(), false, 0)
}

fn default_v_min() -> f64 {
    0.9
}
fn default_v_max() -> f64 {
    1.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingLimits {
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    /// Apparent-power limit per branch of the intact grid, p.u.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_flow_max: Option<Vec<f64>>,
}

impl Default for OperatingLimits {
    fn default() -> Self {
        Self {
            v_min: default_v_min(),
            v_max: default_v_max(),
            branch_flow_max: None,
        }
    }
}

impl OperatingLimits {
    pub fn validate(&self, n_branches: usize) -> Result<(), TrainError> {
        if !(self.v_min < self.v_max) {
            return Err(TrainError::InvalidConfig(format!(
                "v_min {} must be below v_max {}",
                self.v_min, self.v_max
            )));
        }
        if let Some(f) = &self.branch_flow_max {
            if f.len() != n_branches {
                return Err(TrainError::InvalidConfig(format!(
                    "{} branch limits for {n_branches} branches",
                    f.len()
                )));
            }
            if f.iter().any(|v| !(*v >= 0.0)) {
                return Err(TrainError::InvalidConfig("branch limits must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Engine<'a> {
    Numeric,
    Neural(&'a Model),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Secure,
    Violation,
    Infeasible,
    NonConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageViolation {
    pub bus: usize,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowViolation {
    /// Index in the intact grid.
    pub branch: usize,
    pub flow: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyRow {
    pub dropped: Vec<ElementRef>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<RejectReason>,
    pub voltage_violations: Vec<VoltageViolation>,
    pub flow_violations: Vec<FlowViolation>,
    /// Mismatch of the solved or reconstructed state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub engine: String,
    pub k: usize,
    pub n_candidates: usize,
    pub secure: usize,
    pub violating: usize,
    pub infeasible: usize,
    pub non_converged: usize,
    pub rows: Vec<ContingencyRow>,
}

fn check_limits(
    grid: &Grid,
    kept: &[usize],
    state: &[NodeState],
    limits: &OperatingLimits,
) -> Result<(Vec<VoltageViolation>, Vec<FlowViolation>), TrainError> {
    let volts = state
        .iter()
        .enumerate()
        .filter(|(_, s)| s.v < limits.v_min || s.v > limits.v_max)
        .map(|(bus, s)| VoltageViolation { bus, v: s.v })
        .collect();
    let mut flows = Vec::new();
    if let Some(max) = &limits.branch_flow_max {
        for ((q, br), &orig) in branch_quantities(grid, state)?.iter().zip(&grid.branches).zip(kept) {
            let receiving = q.flow - br.z * q.current.norm_sqr();
            let flow = q.flow.norm().max(receiving.norm());
            if flow > max[orig] {
                flows.push(FlowViolation {
                    branch: orig,
                    flow,
                    limit: max[orig],
                });
            }
        }
    }
    Ok((volts, flows))
}

fn screen_one(
    engine: Engine<'_>,
    grid: &Grid,
    dropped: Vec<ElementRef>,
    limits: &OperatingLimits,
) -> Result<ContingencyRow, TrainError> {
    let mut row = ContingencyRow {
        dropped,
        status: Status::Infeasible,
        rejected: None,
        voltage_violations: vec![],
        flow_violations: vec![],
        residual: None,
    };
    let g = match perturb_topology(grid, &row.dropped)? {
        Topology::Valid(g) => g,
        Topology::Rejected(r) => {
            row.rejected = Some(r);
            return Ok(row);
        }
    };
    let kept: Vec<usize> = (0..grid.n_branches())
        .filter(|&b| !row.dropped.contains(&ElementRef::branch(b)))
        .collect();
    let state = match engine {
        Engine::Numeric => match solve_ac(&g, &PfOptions::default()) {
            Ok(sol) if sol.converged => {
                row.residual = Some(sol.residual_inf_norm);
                sol.state
            }
            Ok(sol) => {
                row.residual = Some(sol.residual_inf_norm);
                row.status = Status::NonConverged;
                return Ok(row);
            }
            Err(_) => {
                row.status = Status::NonConverged;
                return Ok(row);
            }
        },
        Engine::Neural(model) => {
            let (state, residual) = neural_pf(model, &g, &knowns_from_grid(&g, row.dropped.clone()))?;
            row.residual = Some(residual);
            state
        }
    };
    let (v, f) = check_limits(&g, &kept, &state, limits)?;
    row.status = if v.is_empty() && f.is_empty() {
        Status::Secure
    } else {
        Status::Violation
    };
    row.voltage_violations = v;
    row.flow_violations = f;
    Ok(row)
}

/// Screen every `k`-subset of `spec.candidates`, in enumeration order.
pub fn screen_contingencies(
    engine: Engine<'_>,
    grid: &Grid,
    spec: &ContingencySpec,
    limits: &OperatingLimits,
) -> Result<ViolationReport, TrainError> {
    spec.validate()?;
    limits.validate(grid.n_branches())?;
    let mut report = ViolationReport {
        engine: match engine {
            Engine::Numeric => "numeric".into(),
            Engine::Neural(_) => "neural".into(),
        },
        k: spec.k,
        n_candidates: spec.candidates.len(),
        secure: 0,
        violating: 0,
        infeasible: 0,
        non_converged: 0,
        rows: Vec::new(),
    };
    for dropped in enumerate_contingencies(spec) {
        let row = screen_one(engine, grid, dropped, limits)?;
        match row.status {
            Status::Secure => report.secure += 1,
            Status::Violation => report.violating += 1,
            Status::Infeasible => report.infeasible += 1,
            Status::NonConverged => report.non_converged += 1,
        }
        report.rows.push(row);
    }
    Ok(report)
}

/// Candidate list for screening: all branches, plus generators if asked.
pub fn screening_candidates(grid: &Grid, kinds: &[ElementKind]) -> Vec<ElementRef> {
    crate::scenario::candidates(grid, kinds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub case: String,
    pub n_buses: usize,
    pub numeric_median_s: f64,
    pub neural_median_s: f64,
    /// `numeric_median_s / neural_median_s`.
    pub speedup: f64,
    pub numeric_residual: f64,
    pub neural_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub repeats: usize,
    pub rows: Vec<BenchmarkRow>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64().max(1e-9)
}

/// Median wall-clock of a Newton solve and of neural power flow on each grid.
pub fn benchmark(model: &Model, grids: &[Grid], repeats: usize) -> Result<BenchmarkReport, TrainError> {
    if repeats == 0 {
        return Err(TrainError::InvalidConfig("repeats must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(grids.len());
    for g in grids {
        let knowns = knowns_from_grid(g, vec![]);
        let (mut t_num, mut t_nn) = (Vec::new(), Vec::new());
        let (mut r_num, mut r_nn) = (f64::NAN, f64::NAN);
        for _ in 0..repeats {
            let start = Instant::now();
            let sol = solve_ac(g, &PfOptions::default())?;
            t_num.push(seconds(start));
            r_num = sol.residual_inf_norm;

            let start = Instant::now();
            let input = mask_pf(&knowns)?;
            let pred = model.forward(&input)?;
            let state = merge(&input, &pred)?;
            t_nn.push(seconds(start));
            r_nn = mismatch_inf_norm(g, &state)?;
        }
        let numeric_median_s = median(t_num);
        let neural_median_s = median(t_nn);
        rows.push(BenchmarkRow {
            case: g.name.clone(),
            n_buses: g.n_buses(),
            numeric_median_s,
            neural_median_s,
            speedup: numeric_median_s / neural_median_s,
            numeric_residual: r_num,
            neural_residual: r_nn,
        });
    }
    Ok(BenchmarkReport { repeats, rows })
}
