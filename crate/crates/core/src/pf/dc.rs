use crate::grid::{BusType, Grid, NodeState};

use super::linalg::{dense_solve, sparse_solve, Triplets};
use super::{PfError, SPARSE_THRESHOLD};

/// DC power flow: solve `B theta = p` with the slack angle fixed, unit
/// magnitudes and zero reactive power. Resistances are ignored.
///
/// The slack's active power is set to balance the (lossless) system.
pub fn solve_dc(grid: &Grid) -> Result<Vec<NodeState>, PfError> {
    let slacks = grid.slack_buses();
    let [slack] = slacks[..] else {
        return Err(PfError::SlackCount(slacks.len()));
    };
    let n = grid.n_buses();
    let index: Vec<Option<usize>> = {
        let mut next = 0;
        (0..n)
            .map(|i| {
                (i != slack).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let theta_slack = grid.buses[slack].angle_set;
    let mut t = Triplets::new(n - 1);
    let mut rhs: Vec<f64> = grid
        .buses
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != slack)
        .map(|(_, b)| b.p_injection())
        .collect();
    for (k, br) in grid.branches.iter().enumerate() {
        if br.z.im == 0.0 {
            return Err(PfError::ZeroReactance(k));
        }
        let b = 1.0 / br.z.im;
        let (fi, ti) = (index[br.from], index[br.to]);
        if let Some(a) = fi {
            t.push(a, a, b);
        }
        if let Some(a) = ti {
            t.push(a, a, b);
        }
        match (fi, ti) {
            (Some(a), Some(c)) => {
                t.push(a, c, -b);
                t.push(c, a, -b);
            }
            (Some(a), None) => rhs[a] += b * theta_slack,
            (None, Some(c)) => rhs[c] += b * theta_slack,
            (None, None) => {}
        }
    }
    let theta = if n == 1 {
        Ok(Vec::new())
    } else if n > SPARSE_THRESHOLD {
        sparse_solve(&t, &rhs)
    } else {
        dense_solve(t.n, t.to_dense(), rhs)
    }
    .map_err(|_| PfError::SingularSystem)?;

    let mut balance = 0.0;
    let mut state: Vec<NodeState> = grid
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| match index[i] {
            Some(k) => {
                balance += b.p_injection();
                NodeState::new(b.p_injection(), 0.0, 1.0, theta[k])
            }
            None => NodeState::new(0.0, 0.0, 1.0, theta_slack),
        })
        .collect();
    state[slack].p = -balance;
    debug_assert_eq!(grid.buses[slack].kind, BusType::Slack);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, Complex};

    fn two_bus(p2: f64) -> Grid {
        let bus = |kind, load: f64| Bus {
            kind,
            p_gen: 0.0,
            q_gen: 0.0,
            p_load: load,
            q_load: 0.0,
            v_set: 1.0,
            angle_set: 0.0,
        };
        Grid {
            name: "two".into(),
            base_mva: 100.0,
            bus_ids: vec![1, 2],
            buses: vec![bus(BusType::Slack, 0.0), bus(BusType::Load, -p2)],
            branches: vec![Branch { from: 0, to: 1, z: Complex::new(0.0, 0.1) }],
        }
    }

    #[test]
    fn zero_injection_gives_zero_angles() {
        let s = solve_dc(&two_bus(0.0)).unwrap();
        assert!(s.iter().all(|n| n.delta == 0.0 && n.v == 1.0 && n.q == 0.0));
    }

    #[test]
    fn two_bus_angle() {
        let s = solve_dc(&two_bus(-0.5)).unwrap();
        assert!((s[1].delta + 0.05).abs() < 1e-15);
        assert_eq!(s[0].p, 0.5);
    }

    #[test]
    fn islanded_is_singular() {
        let mut g = two_bus(-0.5);
        g.buses.push(g.buses[1].clone());
        g.bus_ids.push(3);
        assert_eq!(solve_dc(&g), Err(PfError::SingularSystem));
    }

    #[test]
    fn zero_reactance() {
        let mut g = two_bus(-0.5);
        g.branches[0].z = Complex::new(0.1, 0.0);
        assert_eq!(solve_dc(&g), Err(PfError::ZeroReactance(0)));
    }
}
