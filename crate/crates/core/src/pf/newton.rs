use crate::grid::{injection_mismatch, wrap_angle, BusType, Complex, Grid, NodeState};

use super::linalg::{dense_solve, sparse_solve, Triplets};
use super::{PfError, PfOptions, PfSolution, Start, DAMPING, SPARSE_THRESHOLD};

const DIVERGED: f64 = 1e10;

/// Bus admittance matrix stored by rows: `(diagonal, [(col, Y_ij)])`.
/// Parallel branches are merged.
#[derive(Debug, Clone)]
pub struct AdmittanceRows {
    pub diag: Vec<Complex>,
    pub off: Vec<Vec<(usize, Complex)>>,
}

impl AdmittanceRows {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.n_buses();
        let mut diag = vec![Complex::new(0.0, 0.0); n];
        let mut off: Vec<Vec<(usize, Complex)>> = vec![Vec::new(); n];
        let add = |row: &mut Vec<(usize, Complex)>, col: usize, y: Complex| {
            match row.iter_mut().find(|(c, _)| *c == col) {
                Some((_, v)) => *v += y,
                None => row.push((col, y)),
            }
        };
        for br in &grid.branches {
            let y = br.z.inv();
            diag[br.from] += y;
            diag[br.to] += y;
            add(&mut off[br.from], br.to, -y);
            add(&mut off[br.to], br.from, -y);
        }
        for row in &mut off {
            row.sort_by_key(|(c, _)| *c);
        }
        Self { diag, off }
    }
}

/// Unknown layout: angles of every non-slack bus, then magnitudes of PQ buses.
struct Layout {
    angle_idx: Vec<Option<usize>>,
    mag_idx: Vec<Option<usize>>,
    n_unknowns: usize,
}

impl Layout {
    fn new(grid: &Grid) -> Self {
        let mut next = 0;
        let angle_idx = grid
            .buses
            .iter()
            .map(|b| {
                (b.kind != BusType::Slack).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        let mag_idx = grid
            .buses
            .iter()
            .map(|b| {
                (b.kind == BusType::Load).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self {
            angle_idx,
            mag_idx,
            n_unknowns: next,
        }
    }
}

/// Jacobian of the specified-equation mismatch (P at non-slack buses, Q at PQ
/// buses) with respect to (angles of non-slack buses, magnitudes of PQ buses),
/// laid out as in [`solve_ac`].
pub fn jacobian(grid: &Grid, y: &AdmittanceRows, vm: &[f64], va: &[f64]) -> Triplets {
    let layout = Layout::new(grid);
    jacobian_with(&layout, y, vm, va)
}

fn jacobian_with(layout: &Layout, y: &AdmittanceRows, vm: &[f64], va: &[f64]) -> Triplets {
    let n = vm.len();
    let v: Vec<Complex> = (0..n).map(|i| Complex::from_polar(vm[i], va[i])).collect();
    let mut t = Triplets::new(layout.n_unknowns);
    for i in 0..n {
        let (rp, rq) = (layout.angle_idx[i], layout.mag_idx[i]);
        if rp.is_none() && rq.is_none() {
            continue;
        }
        let mut current = y.diag[i] * v[i];
        for &(j, yij) in &y.off[i] {
            current += yij * v[j];
        }
        let s = v[i] * current.conj();
        let unit_i = Complex::from_polar(1.0, va[i]);
        // dS_i / d(theta_i), dS_i / d(|V_i|)
        let ds_dth = Complex::i() * s - Complex::i() * vm[i] * vm[i] * y.diag[i].conj();
        let ds_dvm = s / vm[i] + vm[i] * (y.diag[i] * unit_i).conj() * unit_i;
        let mut emit = |col_th: Option<usize>, col_vm: Option<usize>, dth: Complex, dvm: Complex| {
            for (row, part) in [(rp, 0), (rq, 1)] {
                let Some(row) = row else { continue };
                let pick = |c: Complex| if part == 0 { c.re } else { c.im };
                if let Some(c) = col_th {
                    t.push(row, c, pick(dth));
                }
                if let Some(c) = col_vm {
                    t.push(row, c, pick(dvm));
                }
            }
        };
        emit(layout.angle_idx[i], layout.mag_idx[i], ds_dth, ds_dvm);
        for &(j, yij) in &y.off[i] {
            let yv = yij * v[j];
            let dth = -Complex::i() * v[i] * yv.conj();
            let unit_j = Complex::from_polar(1.0, va[j]);
            let dvm = v[i] * (yij * unit_j).conj();
            emit(layout.angle_idx[j], layout.mag_idx[j], dth, dvm);
        }
    }
    t
}

/// Expand magnitudes/angles into the full node state. Specified quantities are
/// copied from the setpoints. The rest come from the branch kernels.
fn expand(grid: &Grid, setpoints: &[NodeState], vm: &[f64], va: &[f64]) -> Vec<NodeState> {
    let mut state: Vec<NodeState> = grid
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| match b.kind {
            BusType::Slack => NodeState::new(0.0, 0.0, setpoints[i].v, setpoints[i].delta),
            BusType::Generator => NodeState::new(setpoints[i].p, 0.0, setpoints[i].v, wrap_angle(va[i])),
            BusType::Load => NodeState::new(setpoints[i].p, setpoints[i].q, vm[i], wrap_angle(va[i])),
        })
        .collect();
    let mut probe = state.clone();
    for s in &mut probe {
        s.p = 0.0;
        s.q = 0.0;
    }
    let rhs = injection_mismatch(grid, &probe).expect("state sized from grid");
    for ((s, b), r) in state.iter_mut().zip(&grid.buses).zip(rhs) {
        match b.kind {
            BusType::Slack => {
                s.p = r.re;
                s.q = r.im;
            }
            BusType::Generator => s.q = r.im,
            BusType::Load => {}
        }
    }
    state
}

/// Mismatch on the specified equations plus its infinity norm. Entries for
/// slack P/Q and PV Q are zero by construction of [`expand`].
fn specified_mismatch(grid: &Grid, layout: &Layout, state: &[NodeState]) -> (Vec<f64>, f64) {
    let m = injection_mismatch(grid, state).expect("state sized from grid");
    let mut f = vec![0.0; layout.n_unknowns];
    let mut norm = 0.0_f64;
    for (i, mi) in m.iter().enumerate() {
        if let Some(r) = layout.angle_idx[i] {
            f[r] = mi.re;
        }
        if let Some(r) = layout.mag_idx[i] {
            f[r] = mi.im;
        }
        norm = norm.max(mi.re.abs()).max(mi.im.abs());
    }
    (f, norm)
}

struct Attempt {
    solution: PfSolution,
}

fn run_newton(
    grid: &Grid,
    y: &AdmittanceRows,
    layout: &Layout,
    setpoints: &[NodeState],
    init: &[NodeState],
    opts: &PfOptions,
    step: f64,
) -> Result<Attempt, PfError> {
    let n = grid.n_buses();
    let mut vm: Vec<f64> = (0..n)
        .map(|i| if layout.mag_idx[i].is_some() { init[i].v } else { setpoints[i].v })
        .collect();
    let mut va: Vec<f64> = (0..n)
        .map(|i| if layout.angle_idx[i].is_some() { init[i].delta } else { setpoints[i].delta })
        .collect();

    let mut state = expand(grid, setpoints, &vm, &va);
    let (mut f, mut norm) = specified_mismatch(grid, layout, &state);
    let mut history = vec![norm];
    let mut iterations = 0;
    let sparse = n > SPARSE_THRESHOLD;
    while !(norm < opts.tol) && iterations < opts.max_iter && norm.is_finite() && norm < DIVERGED {
        let jac = jacobian_with(layout, y, &vm, &va);
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let dx = if sparse {
            sparse_solve(&jac, &rhs)
        } else {
            dense_solve(jac.n, jac.to_dense(), rhs)
        }
        .map_err(|_| PfError::SingularJacobian { iteration: iterations })?;
        for i in 0..n {
            if let Some(k) = layout.angle_idx[i] {
                va[i] += step * dx[k];
            }
            if let Some(k) = layout.mag_idx[i] {
                vm[i] += step * dx[k];
            }
        }
        iterations += 1;
        state = expand(grid, setpoints, &vm, &va);
        (f, norm) = specified_mismatch(grid, layout, &state);
        history.push(norm);
    }
    let converged = norm < opts.tol;
    Ok(Attempt {
        solution: PfSolution {
            state,
            converged,
            iterations,
            residual_inf_norm: norm,
            damped: step != 1.0,
            residual_history: history,
        },
    })
}

/// Newton-Raphson AC power flow on the polar bus-injection form.
///
/// Known quantities (p, v at generator buses; p, q at load buses; v, delta at
/// the slack) are copied bit-for-bit from the grid setpoints into the result.
/// A failed full-step solve is retried once with steps scaled by
/// [`DAMPING`]; if that also fails the best state is returned with
/// `converged = false`.
pub fn solve_ac(grid: &Grid, opts: &PfOptions) -> Result<PfSolution, PfError> {
    opts.validate()?;
    let slacks = grid.slack_buses();
    if slacks.len() != 1 {
        return Err(PfError::SlackCount(slacks.len()));
    }
    let setpoints = grid.setpoint_state();
    let init: Vec<NodeState> = match &opts.start {
        Start::Flat => setpoints.clone(),
        Start::Warm(s) => {
            if s.len() != grid.n_buses() {
                return Err(crate::grid::GridError::DimensionMismatch {
                    expected: grid.n_buses(),
                    got: s.len(),
                }
                .into());
            }
            s.clone()
        }
    };
    let y = AdmittanceRows::new(grid);
    let layout = Layout::new(grid);
    let first = run_newton(grid, &y, &layout, &setpoints, &init, opts, 1.0)?;
    if first.solution.converged || !opts.damped_retry {
        return Ok(first.solution);
    }
    let second = run_newton(grid, &y, &layout, &setpoints, &init, opts, DAMPING)?;
    let best = if second.solution.converged
        || second.solution.residual_inf_norm < first.solution.residual_inf_norm
    {
        second.solution
    } else {
        first.solution
    };
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{mismatch_inf_norm, Branch, Bus};
    use crate::rng::SplitMix64;

    fn bus(kind: BusType, p: f64, q: f64, v: f64) -> Bus {
        Bus {
            kind,
            p_gen: p.max(0.0),
            q_gen: q.max(0.0),
            p_load: (-p).max(0.0),
            q_load: (-q).max(0.0),
            v_set: v,
            angle_set: 0.0,
        }
    }

    fn three_bus() -> Grid {
        Grid {
            name: "three".into(),
            base_mva: 100.0,
            bus_ids: vec![1, 2, 3],
            buses: vec![
                bus(BusType::Slack, 0.0, 0.0, 1.02),
                bus(BusType::Generator, 0.4, 0.0, 1.01),
                bus(BusType::Load, -0.9, -0.3, 1.0),
            ],
            branches: vec![
                Branch { from: 0, to: 1, z: Complex::new(0.02, 0.08) },
                Branch { from: 1, to: 2, z: Complex::new(0.03, 0.1) },
                Branch { from: 0, to: 2, z: Complex::new(0.01, 0.06) },
            ],
        }
    }

    fn mismatch_fn(grid: &Grid, layout: &Layout, vm: &[f64], va: &[f64]) -> Vec<f64> {
        let sp = grid.setpoint_state();
        let state = expand(grid, &sp, vm, va);
        specified_mismatch(grid, layout, &state).0
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let grid = three_bus();
        let y = AdmittanceRows::new(&grid);
        let layout = Layout::new(&grid);
        let mut g = SplitMix64::new(3);
        for _ in 0..10 {
            let vm: Vec<f64> = (0..3).map(|i| if i == 2 { g.uniform(0.9, 1.1) } else { grid.buses[i].v_set }).collect();
            let va: Vec<f64> = (0..3).map(|i| if i == 0 { 0.0 } else { g.uniform(-0.3, 0.3) }).collect();
            let jac = jacobian_with(&layout, &y, &vm, &va).to_dense();
            let m = layout.n_unknowns;
            let h = 1e-6;
            for col in 0..m {
                let shift = |sign: f64| {
                    let (mut vm2, mut va2) = (vm.clone(), va.clone());
                    for i in 0..3 {
                        if layout.angle_idx[i] == Some(col) {
                            va2[i] += sign * h;
                        }
                        if layout.mag_idx[i] == Some(col) {
                            vm2[i] += sign * h;
                        }
                    }
                    mismatch_fn(&grid, &layout, &vm2, &va2)
                };
                let (fp, fm) = (shift(1.0), shift(-1.0));
                for row in 0..m {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    let an = jac[row * m + col];
                    let rel = (fd - an).abs() / an.abs().max(1.0);
                    assert!(rel < 1e-5, "J[{row},{col}] analytic {an} fd {fd}");
                }
            }
        }
    }

    #[test]
    fn three_bus_converges_and_keeps_knowns() {
        let grid = three_bus();
        let sol = solve_ac(&grid, &PfOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(!sol.damped);
        assert!(mismatch_inf_norm(&grid, &sol.state).unwrap() < 1e-8);
        let sp = grid.setpoint_state();
        assert_eq!(sol.state[0].v.to_bits(), sp[0].v.to_bits());
        assert_eq!(sol.state[0].delta.to_bits(), sp[0].delta.to_bits());
        assert_eq!(sol.state[1].p.to_bits(), sp[1].p.to_bits());
        assert_eq!(sol.state[1].v.to_bits(), sp[1].v.to_bits());
        assert_eq!(sol.state[2].p.to_bits(), sp[2].p.to_bits());
        assert_eq!(sol.state[2].q.to_bits(), sp[2].q.to_bits());
    }

    #[test]
    fn singular_jacobian_reports_iteration() {
        // A PQ bus hanging off nothing but a branch to itself has no coupling.
        let mut grid = three_bus();
        grid.branches.retain(|b| b.to != 2);
        grid.buses[2] = bus(BusType::Load, 0.0, 0.0, 1.0);
        assert!(matches!(
            solve_ac(&grid, &PfOptions { tol: 1e-30, ..Default::default() }),
            Err(PfError::SingularJacobian { iteration: 0 })
        ));
    }

    #[test]
    fn rejects_bad_options() {
        let grid = three_bus();
        assert!(solve_ac(&grid, &PfOptions { tol: 0.0, ..Default::default() }).is_err());
        assert!(solve_ac(&grid, &PfOptions { max_iter: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn slack_count_is_checked() {
        let mut grid = three_bus();
        grid.buses[1].kind = BusType::Slack;
        assert_eq!(solve_ac(&grid, &PfOptions::default()), Err(PfError::SlackCount(2)));
    }
}
