//! Reference solvers built without the crate's Newton code.
#![allow(dead_code)]

use gridfm_core::case_io::load_grid;
use gridfm_core::grid::{BusType, Complex, Grid, NodeState};

pub fn case_text(name: &str) -> String {
    std::fs::read_to_string(format!("{}/data/{name}.m", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn case(name: &str) -> Grid {
    load_grid(&case_text(name)).unwrap().1
}

pub fn two_bus_text(p_load_mw: f64, q_load_mvar: f64, r: f64, x: f64) -> String {
    format!(
        "function mpc = two_bus
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	{p_load_mw}	{q_load_mvar}	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10;
];
mpc.branch = [
	1	2	{r}	{x}	0	250	250	250	0	0	1	-360	360;
];
"
    )
}

/// Receiving-end voltage of a lossless line feeding load `p + jq` (p.u.)
/// from a 1∠0 source. With `u = V^2`: `u^2 - (1 - 2 q x) u + (p^2 + q^2) x^2 = 0`
/// on the high-voltage root; the angle follows from `P = V sin(-delta) / x`.
pub fn two_bus_closed_form(p: f64, q: f64, x: f64) -> (f64, f64) {
    let b = 1.0 - 2.0 * q * x;
    let c = (p * p + q * q) * x * x;
    let u = 0.5 * (b + (b * b - 4.0 * c).sqrt());
    let v = u.sqrt();
    let delta = -(p * x).atan2(u + q * x);
    (v, delta)
}

/// Dense bus admittance matrix of the series-impedance model.
pub fn ybus(grid: &Grid) -> Vec<Vec<Complex>> {
    let n = grid.n_buses();
    let mut y = vec![vec![Complex::new(0.0, 0.0); n]; n];
    for br in &grid.branches {
        let g = Complex::new(1.0, 0.0) / br.z;
        y[br.from][br.from] += g;
        y[br.to][br.to] += g;
        y[br.from][br.to] -= g;
        y[br.to][br.from] -= g;
    }
    y
}

/// `S_i - V_i conj((Y V)_i)` from the admittance matrix, as an independent
/// check on the branch-based residual.
pub fn ybus_mismatch(y: &[Vec<Complex>], state: &[NodeState]) -> f64 {
    let v: Vec<Complex> = state.iter().map(|s| Complex::from_polar(s.v, s.delta)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let iv: Complex = (0..v.len()).map(|j| y[i][j] * v[j]).sum();
        let s = v[i] * iv.conj();
        let m = Complex::new(state[i].p, state[i].q) - s;
        worst = worst.max(m.re.abs()).max(m.im.abs());
    }
    worst
}

/// Gauss-Seidel power flow run until the admittance mismatch is below `tol`.
/// Returns the state and the number of sweeps.
pub fn gauss_seidel(grid: &Grid, tol: f64, max_sweeps: usize) -> (Vec<NodeState>, usize) {
    let n = grid.n_buses();
    let y = ybus(grid);
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && y[i][j].norm() > 0.0).collect())
        .collect();
    let mut v: Vec<Complex> = grid
        .buses
        .iter()
        .map(|b| match b.kind {
            BusType::Slack => Complex::from_polar(b.v_set, b.angle_set),
            BusType::Generator => Complex::new(b.v_set, 0.0) * Complex::from_polar(1.0, grid.buses[grid.slack().unwrap()].angle_set),
            BusType::Load => Complex::from_polar(1.0, grid.buses[grid.slack().unwrap()].angle_set),
        })
        .collect();
    let p: Vec<f64> = grid.buses.iter().map(|b| b.p_injection()).collect();
    let mut q: Vec<f64> = grid.buses.iter().map(|b| b.q_injection()).collect();
    let state_of = |v: &[Complex], q: &[f64]| -> Vec<NodeState> {
        let mut st: Vec<NodeState> = (0..n)
            .map(|i| NodeState::new(p[i], q[i], v[i].norm(), v[i].arg()))
            .collect();
        for i in 0..n {
            let iv: Complex = (0..n).map(|j| y[i][j] * v[j]).sum();
            let s = v[i] * iv.conj();
            match grid.buses[i].kind {
                BusType::Slack => {
                    st[i].p = s.re;
                    st[i].q = s.im;
                }
                BusType::Generator => st[i].q = s.im,
                BusType::Load => {}
            }
        }
        st
    };
    for sweep in 1..=max_sweeps {
        for i in 0..n {
            let kind = grid.buses[i].kind;
            if kind == BusType::Slack {
                continue;
            }
            let others: Complex = nbrs[i].iter().map(|&j| y[i][j] * v[j]).sum();
            if kind == BusType::Generator {
                q[i] = (v[i] * (others + y[i][i] * v[i]).conj()).im;
            }
            let s = Complex::new(p[i], q[i]);
            let mut vi = (s.conj() / v[i].conj() - others) / y[i][i];
            if kind == BusType::Generator {
                vi = vi / vi.norm() * grid.buses[i].v_set;
            }
            v[i] = vi;
        }
        if sweep % 10 == 0 {
            let st = state_of(&v, &q);
            if ybus_mismatch(&y, &st) < tol {
                return (st, sweep);
            }
        }
    }
    panic!("Gauss-Seidel did not reach {tol} in {max_sweeps} sweeps");
}
