//! Bus/branch graph and the nodal power-flow kernels.
//!
//! A branch `(i, j)` with series impedance `z` carries current
//! `I = (V_i - V_j) / z` and delivers `S_ij = V_i * conj(I)` into the line at
//! its sending end. The receiving end sees `S_ij - z|I|^2 = V_j * conj(I)`.
//! Nodal balance at bus `i` is
//!
//! ```text
//! S_i = sum_{(i,j) out of i} S_ij  -  sum_{(k,i) into i} (S_ki - z_ki |I_ki|^2)
//! ```
//!
//! and [`injection_mismatch`] returns right side minus left side.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Complex = Complex64;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("branch has zero impedance")]
    ZeroImpedance,
    #[error("state has {got} buses, grid has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusType {
    Slack,
    Generator,
    Load,
}

impl BusType {
    /// MATPOWER type code (1 = PQ, 2 = PV, 3 = slack).
    pub fn code(self) -> u8 {
        match self {
            BusType::Load => 1,
            BusType::Generator => 2,
            BusType::Slack => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BusType::Load),
            2 => Some(BusType::Generator),
            3 => Some(BusType::Slack),
            _ => None,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        match self {
            BusType::Slack => [1.0, 0.0, 0.0],
            BusType::Generator => [0.0, 1.0, 0.0],
            BusType::Load => [0.0, 0.0, 1.0],
        }
    }
}

/// Per-bus setpoints in per-unit. Angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub kind: BusType,
    pub p_gen: f64,
    pub q_gen: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub v_set: f64,
    pub angle_set: f64,
}

impl Bus {
    /// Net active injection (generation minus demand).
    pub fn p_injection(&self) -> f64 {
        self.p_gen - self.p_load
    }

    pub fn q_injection(&self) -> f64 {
        self.q_gen - self.q_load
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub z: Complex,
}

/// The four node variables `(p, q, v, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeState {
    pub p: f64,
    pub q: f64,
    pub v: f64,
    pub delta: f64,
}

impl NodeState {
    pub const FEATURES: usize = 4;

    pub fn new(p: f64, q: f64, v: f64, delta: f64) -> Self {
        Self { p, q, v, delta }
    }

    pub fn injection(&self) -> Complex {
        Complex::new(self.p, self.q)
    }

    pub fn voltage(&self) -> Complex {
        Complex::from_polar(self.v, self.delta)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p, self.q, self.v, self.delta]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(TAU);
    if t > PI {
        t -= TAU;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchQuantities {
    pub current: Complex,
    pub flow: Complex,
}

/// Directed bus/branch graph with series impedances.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub name: String,
    pub base_mva: f64,
    /// External bus numbers, aligned with `buses`.
    pub bus_ids: Vec<i64>,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl Grid {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn bus_types(&self) -> Vec<BusType> {
        self.buses.iter().map(|b| b.kind).collect()
    }

    pub fn slack_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusType::Slack)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the single slack bus, if exactly one exists.
    pub fn slack(&self) -> Option<usize> {
        match self.slack_buses().as_slice() {
            [s] => Some(*s),
            _ => None,
        }
    }

    /// Weakly connected components over the branch set.
    pub fn island_count(&self) -> usize {
        let n = self.n_buses();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut count = n;
        for br in &self.branches {
            let (a, b) = (find(&mut parent, br.from), find(&mut parent, br.to));
            if a != b {
                parent[a] = b;
                count -= 1;
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.n_buses() > 0 && self.island_count() == 1
    }

    /// Setpoint state: injections from the bus records, `v_set` magnitudes,
    /// slack angle for the slack bus and zero elsewhere.
    pub fn setpoint_state(&self) -> Vec<NodeState> {
        self.buses
            .iter()
            .map(|b| NodeState {
                p: b.p_injection(),
                q: b.q_injection(),
                v: b.v_set,
                delta: if b.kind == BusType::Slack {
                    b.angle_set
                } else {
                    0.0
                },
            })
            .collect()
    }
}

/// `I_ij = (V_i - V_j) / z`.
pub fn branch_current(vi: Complex, vj: Complex, z: Complex) -> Result<Complex, GridError> {
    if z.norm_sqr() == 0.0 {
        return Err(GridError::ZeroImpedance);
    }
    Ok((vi - vj) / z)
}

/// `S_ij = V_i * conj(I_ij)`.
pub fn branch_flow(vi: Complex, current: Complex) -> Complex {
    vi * current.conj()
}

fn check_len(grid: &Grid, state: &[NodeState]) -> Result<(), GridError> {
    if state.len() != grid.n_buses() {
        return Err(GridError::DimensionMismatch {
            expected: grid.n_buses(),
            got: state.len(),
        });
    }
    Ok(())
}

/// Current and sending-end flow of every branch.
pub fn branch_quantities(
    grid: &Grid,
    state: &[NodeState],
) -> Result<Vec<BranchQuantities>, GridError> {
    check_len(grid, state)?;
    grid.branches
        .iter()
        .map(|br| {
            let vi = state[br.from].voltage();
            let vj = state[br.to].voltage();
            let current = branch_current(vi, vj, br.z)?;
            Ok(BranchQuantities {
                current,
                flow: branch_flow(vi, current),
            })
        })
        .collect()
}

/// Per-bus nodal balance residual: flows out minus received flows minus `S_i`.
pub fn injection_mismatch(grid: &Grid, state: &[NodeState]) -> Result<Vec<Complex>, GridError> {
    check_len(grid, state)?;
    let mut rhs = vec![Complex::new(0.0, 0.0); grid.n_buses()];
    for br in &grid.branches {
        let vi = state[br.from].voltage();
        let vj = state[br.to].voltage();
        let current = branch_current(vi, vj, br.z)?;
        let flow = branch_flow(vi, current);
        let loss = br.z * current.norm_sqr();
        rhs[br.from] += flow;
        rhs[br.to] -= flow - loss;
    }
    Ok(rhs
        .into_iter()
        .zip(state)
        .map(|(r, s)| r - s.injection())
        .collect())
}

/// Infinity norm over the real and imaginary parts of the mismatch.
pub fn mismatch_inf_norm(grid: &Grid, state: &[NodeState]) -> Result<f64, GridError> {
    Ok(injection_mismatch(grid, state)?
        .iter()
        .fold(0.0_f64, |m, c| m.max(c.re.abs()).max(c.im.abs())))
}

/// `(2|N| + 4|E|, 4|N| + 4|E|)`: real equations and real variables of the
/// complex power-flow system.
pub fn equation_counts(grid: &Grid) -> (usize, usize) {
    let n = grid.n_buses();
    let e = grid.n_branches();
    (2 * n + 4 * e, 4 * n + 4 * e)
}

/// Sum of `z |I|^2` over all branches.
pub fn total_losses(grid: &Grid, state: &[NodeState]) -> Result<Complex, GridError> {
    Ok(branch_quantities(grid, state)?
        .iter()
        .zip(&grid.branches)
        .map(|(q, br)| br.z * q.current.norm_sqr())
        .sum())
}
