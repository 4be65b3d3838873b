mod common;

use proptest::prelude::*;

use gridfm_core::case_io::{parse_case, serialize_case};
use gridfm_core::grid::{
    branch_current, branch_flow, equation_counts, injection_mismatch, Branch, Bus, BusType, Complex, Grid, NodeState,
};
use gridfm_core::masker::{mask_random, merge, pf_mask};
use gridfm_core::nn::{sce_loss, Model, ModelConfig, NormStats};
use gridfm_core::scenario::{binomial, Combinations, Sample};

fn complex() -> impl Strategy<Value = Complex> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| Complex::new(a, b))
}

fn impedance() -> impl Strategy<Value = Complex> {
    (0.0..0.1f64, 0.01..0.5f64).prop_map(|(r, x)| Complex::new(r, x))
}

/// A connected random grid: a random spanning tree plus extra branches.
fn grid_and_state() -> impl Strategy<Value = (Grid, Vec<NodeState>)> {
    (2usize..9).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        (
            parents,
            prop::collection::vec((0..n, 0..n, impedance()), 0..6),
            prop::collection::vec(impedance(), n - 1),
            prop::collection::vec((0.9..1.1f64, -0.5..0.5f64, -1.0..1.0f64, -1.0..1.0f64), n),
        )
            .prop_map(move |(parents, extra, tree_z, st)| {
                let mut branches: Vec<Branch> = parents
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| Branch {
                        from: p,
                        to: i + 1,
                        z: tree_z[i],
                    })
                    .collect();
                branches.extend(extra.into_iter().filter(|(a, b, _)| a != b).map(|(a, b, z)| Branch { from: a, to: b, z }));
                let buses = (0..n)
                    .map(|i| Bus {
                        kind: if i == 0 { BusType::Slack } else { BusType::Load },
                        p_gen: 0.0,
                        q_gen: 0.0,
                        p_load: 0.0,
                        q_load: 0.0,
                        v_set: 1.0,
                        angle_set: 0.0,
                    })
                    .collect();
                let state = st.into_iter().map(|(v, d, p, q)| NodeState::new(p, q, v, d)).collect();
                (
                    Grid {
                        name: "rand".into(),
                        base_mva: 100.0,
                        bus_ids: (1..=n as i64).collect(),
                        buses,
                        branches,
                    },
                    state,
                )
            })
    })
}

fn sample_of(grid: &Grid, state: &[NodeState]) -> Sample {
    Sample::from_solution("rand", grid, vec![], state.to_vec(), true, 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branch_flows_balance_to_losses(vi in complex(), vj in complex(), z in impedance()) {
        let i = branch_current(vi, vj, z).unwrap();
        let back = branch_current(vj, vi, z).unwrap();
        prop_assert!((i + back).norm() < 1e-12);
        let s_ij = branch_flow(vi, i);
        let s_ji = branch_flow(vj, back);
        let loss = z * i.norm_sqr();
        prop_assert!((s_ij + s_ji - loss).norm() < 1e-9 * (1.0 + loss.norm()));
    }

    #[test]
    fn mismatch_is_permutation_equivariant((grid, state) in grid_and_state(), seed in any::<u64>()) {
        let n = grid.n_buses();
        let mut perm: Vec<usize> = (0..n).collect();
        gridfm_core::rng::SplitMix64::new(seed).shuffle(&mut perm);
        let mut pg = grid.clone();
        let mut ps = state.clone();
        for (old, &new) in perm.iter().enumerate() {
            pg.buses[new] = grid.buses[old].clone();
            ps[new] = state[old];
        }
        for br in &mut pg.branches {
            br.from = perm[br.from];
            br.to = perm[br.to];
        }
        let m = injection_mismatch(&grid, &state).unwrap();
        let pm = injection_mismatch(&pg, &ps).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            prop_assert!((m[old] - pm[new]).norm() < 1e-12);
        }
    }

    #[test]
    fn reversing_a_branch_changes_nothing((grid, state) in grid_and_state(), k in any::<prop::sample::Index>()) {
        let mut flipped = grid.clone();
        let b = k.index(grid.n_branches());
        let br = &mut flipped.branches[b];
        std::mem::swap(&mut br.from, &mut br.to);
        let a = injection_mismatch(&grid, &state).unwrap();
        let c = injection_mismatch(&flipped, &state).unwrap();
        for (x, y) in a.iter().zip(&c) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn counts_follow_graph_size((grid, _) in grid_and_state()) {
        let (eqs, vars) = equation_counts(&grid);
        prop_assert_eq!(vars - eqs, 2 * grid.n_buses());
    }

    #[test]
    fn combinations_match_binomial(n in 0usize..12, k in 0usize..5) {
        let all: Vec<Vec<usize>> = Combinations::new(n, k).collect();
        prop_assert_eq!(all.len() as u128, binomial(n as u64, k as u64));
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(all.iter().all(|c| c.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn mask_merge_keeps_visible_entries((grid, state) in grid_and_state(), alpha in 0.0..=1.0f64, seed in any::<u64>()) {
        let s = sample_of(&grid, &state);
        let m = mask_random(&s, alpha, seed).unwrap();
        prop_assert_eq!(&m.mask, &mask_random(&s, alpha, seed).unwrap().mask);
        let pred = vec![[f64::NAN; 4]; s.n_buses()];
        let merged = merge(&m, &pred).unwrap();
        for ((a, b), bits) in merged.iter().zip(&state).zip(&m.mask.bits) {
            let (a, b) = (a.to_array(), b.to_array());
            for f in 0..4 {
                prop_assert_eq!(bits[f], a[f].is_nan());
                if !bits[f] {
                    prop_assert_eq!(a[f].to_bits(), b[f].to_bits());
                }
            }
        }
    }

    #[test]
    fn pf_pattern_hides_half((grid, _) in grid_and_state()) {
        let m = pf_mask(&grid.bus_types()).unwrap();
        prop_assert_eq!(m.count_masked(), 2 * grid.n_buses());
    }

    #[test]
    fn sce_is_bounded(pred in prop::collection::vec(prop::array::uniform4(-3.0..3.0f64), 1..6),
                      gamma in 1.0..4.0f64, seed in any::<u64>()) {
        let target: Vec<[f64; 4]> = pred.iter().map(|r| [r[1] + 0.5, r[0], -r[3], r[2] + 1.0]).collect();
        let mask = gridfm_core::masker::Mask { bits: pred.iter().enumerate().map(|(i, _)| [i as u64 % 2 == seed % 2, true, false, false]).collect() };
        let l = sce_loss(&pred, &target, &mask, gamma).unwrap().loss;
        prop_assert!((0.0..=2f64.powf(gamma) + 1e-12).contains(&l));
    }

    #[test]
    fn model_forward_is_deterministic((grid, state) in grid_and_state(), seed in any::<u64>()) {
        let s = sample_of(&grid, &state);
        let cfg = ModelConfig { hidden_dim: 6, n_encoder_layers: 2, init_seed: seed, ..ModelConfig::default() };
        let model = Model::new(cfg, NormStats::from_samples(std::slice::from_ref(&s))).unwrap();
        let m = mask_random(&s, 0.5, seed).unwrap();
        let a = model.forward(&m).unwrap();
        let b = model.forward(&m).unwrap();
        prop_assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.iter().flatten().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn case_text_round_trips(loads in prop::collection::vec((0.0..200.0f64, -50.0..50.0f64), 14)) {
        let mut raw = parse_case(&common::case_text("case14")).unwrap();
        for (b, (p, q)) in raw.buses.iter_mut().zip(loads) {
            b.p_demand = p;
            b.q_demand = q;
        }
        let text = serialize_case(&raw).unwrap();
        let back = parse_case(&text).unwrap();
        prop_assert_eq!(&back, &raw);
        prop_assert_eq!(serialize_case(&back).unwrap(), text);
    }
}
