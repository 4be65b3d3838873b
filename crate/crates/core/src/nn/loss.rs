//! Scaled cosine error and the nodal-balance physics penalty, each with its
//! gradient.

use serde::{Deserialize, Serialize};

use crate::grid::{Complex, Grid, NodeState};
use crate::masker::Mask;

use super::tensor::order_free_sum;
use super::NnError;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sce: f64,
    pub pf: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceOutput {
    pub loss: f64,
    /// Rows with a masked entry whose target has zero norm; left out of the mean.
    pub degenerate_rows: Vec<usize>,
    /// Rows that contributed to the mean.
    pub counted: usize,
}

/// Per-row term `(1 - cos)^gamma` and its gradient w.r.t. the prediction row.
fn sce_row(pred: &[f64; 4], target: &[f64; 4], gamma: f64) -> (f64, [f64; 4]) {
    let dot: f64 = pred.iter().zip(target).map(|(a, b)| a * b).sum();
    let pn = pred.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_FLOOR);
    let tn = target.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = (dot / (pn * tn)).clamp(-1.0, 1.0);
    let base = 1.0 - cos;
    let term = base.powf(gamma);
    let dterm_dcos = if base == 0.0 && gamma > 1.0 {
        0.0
    } else {
        -gamma * base.powf(gamma - 1.0)
    };
    let grad = std::array::from_fn(|f| dterm_dcos * (target[f] / (pn * tn) - cos * pred[f] / (pn * pn)));
    (term, grad)
}

/// Mean over rows with at least one masked entry of `(1 - cos(pred_i, target_i))^gamma`.
/// Zero when nothing is masked.
pub fn sce_loss(prediction: &[[f64; 4]], target: &[[f64; 4]], mask: &Mask, gamma: f64) -> Result<SceOutput, NnError> {
    sce_loss_grad(prediction, target, mask, gamma).map(|(o, _)| o)
}

pub fn sce_loss_grad(
    prediction: &[[f64; 4]],
    target: &[[f64; 4]],
    mask: &Mask,
    gamma: f64,
) -> Result<(SceOutput, Vec<[f64; 4]>), NnError> {
    let n = target.len();
    if prediction.len() != n || mask.n_buses() != n {
        return Err(NnError::ShapeMismatch(format!(
            "prediction {} rows, target {n}, mask {}",
            prediction.len(),
            mask.n_buses()
        )));
    }
    if !(gamma >= 1.0) {
        return Err(NnError::InvalidConfig(format!("gamma must be >= 1, got {gamma}")));
    }
    let mut terms = Vec::new();
    let mut degenerate = Vec::new();
    let mut grads = vec![[0.0; 4]; n];
    let mut rows = Vec::new();
    for i in 0..n {
        if !mask.node_has_masked(i) {
            continue;
        }
        if target[i].iter().all(|&v| v == 0.0) {
            degenerate.push(i);
            continue;
        }
        let (t, g) = sce_row(&prediction[i], &target[i], gamma);
        terms.push(t);
        grads[i] = g;
        rows.push(i);
    }
    let counted = terms.len();
    if counted == 0 {
        return Ok((
            SceOutput {
                loss: 0.0,
                degenerate_rows: degenerate,
                counted,
            },
            grads,
        ));
    }
    let scale = 1.0 / counted as f64;
    for &i in &rows {
        for g in &mut grads[i] {
            *g *= scale;
        }
    }
    Ok((
        SceOutput {
            loss: order_free_sum(&mut terms) * scale,
            degenerate_rows: degenerate,
            counted,
        },
        grads,
    ))
}

/// Mean over buses of `|mismatch_i|^2` for the given state.
pub fn pf_loss(state: &[NodeState], grid: &Grid) -> Result<f64, NnError> {
    pf_loss_grad(state, grid).map(|(l, _)| l)
}

/// Physics penalty and its gradient w.r.t. `(p, q, v, delta)` of every bus.
pub fn pf_loss_grad(state: &[NodeState], grid: &Grid) -> Result<(f64, Vec<[f64; 4]>), NnError> {
    let n = grid.n_buses();
    if state.len() != n {
        return Err(NnError::ShapeMismatch(format!("state {} rows, grid {n} buses", state.len())));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let volts: Vec<Complex> = state.iter().map(NodeState::voltage).collect();
    let mut admittance = Vec::with_capacity(grid.n_branches());
    // Net current leaving each bus into its branches.
    let mut net = vec![Complex::new(0.0, 0.0); n];
    for br in &grid.branches {
        if br.z.norm_sqr() == 0.0 {
            return Err(NnError::Grid(crate::grid::GridError::ZeroImpedance));
        }
        let y = br.z.inv();
        let i = y * (volts[br.from] - volts[br.to]);
        net[br.from] += i;
        net[br.to] -= i;
        admittance.push(y);
    }
    let mismatch: Vec<Complex> = (0..n)
        .map(|i| volts[i] * net[i].conj() - state[i].injection())
        .collect();
    let mut terms: Vec<f64> = mismatch.iter().map(|m| m.norm_sqr()).collect();
    let loss = order_free_sum(&mut terms) / n as f64;

    let g_m: Vec<Complex> = mismatch.iter().map(|m| *m * (2.0 / n as f64)).collect();
    let mut v_bar: Vec<Complex> = (0..n).map(|i| g_m[i] * net[i]).collect();
    let j_bar: Vec<Complex> = (0..n).map(|i| g_m[i].conj() * volts[i]).collect();
    for (br, y) in grid.branches.iter().zip(&admittance) {
        let i_bar = j_bar[br.from] - j_bar[br.to];
        let push = y.conj() * i_bar;
        v_bar[br.from] += push;
        v_bar[br.to] -= push;
    }
    let grads = (0..n)
        .map(|i| {
            let unit = Complex::from_polar(1.0, state[i].delta);
            let dv = (v_bar[i].conj() * unit).re;
            let ddelta = (v_bar[i].conj() * Complex::i() * volts[i]).re;
            [-g_m[i].re, -g_m[i].im, dv, ddelta]
        })
        .collect();
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, BusType};
    use crate::rng::SplitMix64;

    fn mask_rows(n: usize, masked: &[usize]) -> Mask {
        let mut m = Mask::empty(n);
        for &i in masked {
            m.bits[i] = [true; 4];
        }
        m
    }

    #[test]
    fn sce_examples() {
        let y = [[0.3, -0.1, 1.0, 0.2]];
        let m = mask_rows(1, &[0]);
        assert_eq!(sce_loss(&y, &y, &m, 2.0).unwrap().loss, 0.0);
        let orth = sce_loss(&[[1.0, 0.0, 0.0, 0.0]], &[[0.0, 1.0, 0.0, 0.0]], &m, 1.0).unwrap();
        assert!((orth.loss - 1.0).abs() < 1e-15);
        let neg = [[-0.3, 0.1, -1.0, -0.2]];
        assert!((sce_loss(&neg, &y, &m, 2.0).unwrap().loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sce_ignores_unmasked_rows_and_reports_degenerate() {
        let pred = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
        let target = [[0.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0; 4]];
        let out = sce_loss(&pred, &target, &mask_rows(3, &[1, 2]), 2.0).unwrap();
        assert!(out.loss < 1e-30);
        assert_eq!(out.degenerate_rows, vec![2]);
        assert_eq!(out.counted, 1);
        assert_eq!(sce_loss(&pred, &target, &Mask::empty(3), 2.0).unwrap().loss, 0.0);
    }

    #[test]
    fn sce_gradient_matches_finite_difference() {
        let mut g = SplitMix64::new(1);
        let target: Vec<[f64; 4]> = (0..3).map(|_| std::array::from_fn(|_| g.uniform(-1.0, 1.0))).collect();
        let pred: Vec<[f64; 4]> = (0..3).map(|_| std::array::from_fn(|_| g.uniform(-1.0, 1.0))).collect();
        let m = mask_rows(3, &[0, 2]);
        for gamma in [1.0, 2.0, 3.0] {
            let (_, grad) = sce_loss_grad(&pred, &target, &m, gamma).unwrap();
            for i in 0..3 {
                for f in 0..4 {
                    let h = 1e-6;
                    let mut a = pred.clone();
                    a[i][f] += h;
                    let mut b = pred.clone();
                    b[i][f] -= h;
                    let fd = (sce_loss(&a, &target, &m, gamma).unwrap().loss
                        - sce_loss(&b, &target, &m, gamma).unwrap().loss)
                        / (2.0 * h);
                    assert!((fd - grad[i][f]).abs() < 1e-7, "{fd} vs {}", grad[i][f]);
                }
            }
        }
    }

    fn two_bus(p2: f64) -> Grid {
        let bus = |kind, p| Bus {
            kind,
            p_gen: p,
            q_gen: 0.0,
            p_load: 0.0,
            q_load: 0.0,
            v_set: 1.0,
            angle_set: 0.0,
        };
        Grid {
            name: "two".into(),
            base_mva: 100.0,
            bus_ids: vec![1, 2],
            buses: vec![bus(BusType::Slack, 0.0), bus(BusType::Load, p2)],
            branches: vec![Branch { from: 0, to: 1, z: Complex::new(0.0, 0.1) }],
        }
    }

    #[test]
    fn pf_examples() {
        let loaded = two_bus(-0.5);
        assert!((pf_loss(&loaded.setpoint_state(), &loaded).unwrap() - 0.125).abs() < 1e-15);
        let empty = two_bus(0.0);
        assert_eq!(pf_loss(&empty.setpoint_state(), &empty).unwrap(), 0.0);
    }

    #[test]
    fn pf_loss_agrees_with_nodal_mismatch() {
        let grid = two_bus(-0.5);
        let state = vec![NodeState::new(0.3, 0.1, 1.02, 0.0), NodeState::new(-0.5, 0.2, 0.97, -0.07)];
        let direct: f64 = crate::grid::injection_mismatch(&grid, &state)
            .unwrap()
            .iter()
            .map(|m| m.norm_sqr())
            .sum::<f64>()
            / 2.0;
        assert!((pf_loss(&state, &grid).unwrap() - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn pf_gradient_matches_finite_difference() {
        let mut grid = two_bus(-0.5);
        grid.branches.push(Branch { from: 1, to: 0, z: Complex::new(0.05, 0.2) });
        grid.buses.push(grid.buses[1].clone());
        grid.bus_ids.push(3);
        grid.branches.push(Branch { from: 2, to: 1, z: Complex::new(0.02, 0.15) });
        let mut g = SplitMix64::new(4);
        let state: Vec<NodeState> = (0..3)
            .map(|_| NodeState::new(g.uniform(-1.0, 1.0), g.uniform(-1.0, 1.0), g.uniform(0.9, 1.1), g.uniform(-0.3, 0.3)))
            .collect();
        let (_, grad) = pf_loss_grad(&state, &grid).unwrap();
        for i in 0..3 {
            for f in 0..4 {
                let h = 1e-6;
                let shift = |s: f64| {
                    let mut st = state.clone();
                    let mut a = st[i].to_array();
                    a[f] += s;
                    st[i] = NodeState::from_array(a);
                    pf_loss(&st, &grid).unwrap()
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                let an = grad[i][f];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "bus {i} feature {f}: {fd} vs {an}");
            }
        }
    }
}
