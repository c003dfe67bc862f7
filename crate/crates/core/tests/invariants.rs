use std::collections::HashMap;

use proptest::prelude::*;

use treepgm::datagen::{Dataset, Row};
use treepgm::dnn::{Mlp, OutputKind};
use treepgm::metrics::{ece, mae};
use treepgm::pgm::{bn_to_mn, mlp_to_bn, pairwise_mn, Assignment, Evidence, Factor, FactorNet, NetKind, VarId};
use treepgm::unroll::{unroll_step1, unroll_step2, Copies, FiniteLModel, DEFAULT_VERTEX_CAP};

fn net_from(dims: &[usize], params: &[f64]) -> Mlp {
    let mut mlp = Mlp::zeros(dims, OutputKind::Bernoulli).unwrap();
    let n = mlp.num_params();
    mlp.set_params(&params[..n]);
    mlp
}

/// Layer widths with at most `max_nodes` units, plus enough parameters for
/// any of them.
fn small_net(max_layers: usize, max_width: usize, max_nodes: usize) -> impl Strategy<Value = Mlp> {
    (prop::collection::vec(1..=max_width, 2..=max_layers), prop::collection::vec(-3.0f64..3.0, 64))
        .prop_filter("node budget", move |(d, _)| d.iter().sum::<usize>() <= max_nodes)
        .prop_map(|(d, p)| net_from(&d, &p))
}

fn tree_shapes(max_nodes: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, left: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() >= 2 {
            let edges: usize = prefix.windows(2).map(|w| w[0] * w[1]).sum();
            if edges + 1 == prefix.iter().sum::<usize>() {
                out.push(prefix.clone());
            }
        }
        for n in 1..=left {
            prefix.push(n);
            go(prefix, left - n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), max_nodes, &mut out);
    out
}

/// Random forest of unary and pairwise positive factors over `n` variables.
fn forest() -> impl Strategy<Value = FactorNet> {
    (1usize..=12)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(prop::option::weighted(0.8, any::<prop::sample::Index>()), n),
                prop::collection::vec(0.05f64..5.0, 6 * n),
            )
        })
        .prop_map(|(n, parent, vals)| {
            let mut factors = Vec::new();
            for v in 0..n {
                factors.push(Factor::new(vec![VarId(v)], vals[6 * v..6 * v + 2].to_vec()).unwrap());
                if v > 0 {
                    if let Some(ix) = parent[v] {
                        let p = ix.index(v);
                        factors.push(Factor::new(vec![VarId(p), VarId(v)], vals[6 * v + 2..6 * v + 6].to_vec()).unwrap());
                    }
                }
            }
            FactorNet::new(NetKind::Markov, n, factors).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variable_elimination_matches_enumeration(
        mlp in small_net(4, 3, 14),
        which in 0usize..3,
        mask in any::<u64>(),
        q in any::<prop::sample::Index>(),
    ) {
        let net = match which {
            0 => mlp_to_bn(&mlp).unwrap(),
            1 => bn_to_mn(&mlp).unwrap(),
            _ => pairwise_mn(&mlp).unwrap(),
        };
        let n = net.num_vars();
        let query = q.index(n);
        let mut ev = Evidence::new();
        for v in (0..n).filter(|&v| v != query && (mask >> v) & 3 == 0) {
            ev.set(VarId(v), (mask >> (v + 32)) & 1 == 1);
        }
        let (a0, a1) = net.ve_marginal(VarId(query), &ev).unwrap();
        let (b0, b1) = net.enumerate_marginal(VarId(query), &ev, 20).unwrap();
        prop_assert!((a0 - b0).abs() <= 1e-10 && (a1 - b1).abs() <= 1e-10, "{a0} {a1} vs {b0} {b1}");
    }

    #[test]
    fn tree_recursion_matches_enumeration(net in forest()) {
        prop_assert!(net.is_treewidth_one());
        let rec = net.tree_partition_function().unwrap();
        let en = net.enumerate_partition_function(20).unwrap().ln();
        prop_assert!((rec - en).abs() <= 1e-10 * en.abs().max(1.0), "{rec} vs {en}");
    }

    #[test]
    fn bn_to_mn_reproduces_the_bn_joint(
        shape in prop::sample::select(tree_shapes(10)),
        params in prop::collection::vec(-5.0f64..5.0, 64),
    ) {
        let mlp = net_from(&shape, &params);
        let bn = mlp_to_bn(&mlp).unwrap();
        let mn = bn_to_mn(&mlp).unwrap();
        let n = mlp.num_nodes();
        let zb = bn.enumerate_partition_function(20).unwrap();
        let zm = mn.enumerate_partition_function(20).unwrap();
        for m in 0..1u64 << n {
            let a = Assignment::from_mask(m, n);
            let p = bn.joint_unnormalized(&a).unwrap() / zb;
            let q = mn.joint_unnormalized(&a).unwrap() / zm;
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn unrolled_graph_is_a_forest_with_preserved_weights(
        mlp in small_net(3, 2, 6),
        l in 1usize..=3,
    ) {
        let t1 = unroll_step1(&mlp);
        let t = unroll_step2(&t1, l, DEFAULT_VERTEX_CAP).unwrap();
        prop_assert!(t1.is_forest() && t.is_forest());
        prop_assert_eq!(t.outputs().len(), mlp.output_dim());
        // per child copy and parent origin, the copies' weights add up to the source weight
        let mut sums: HashMap<(usize, usize), f64> = HashMap::new();
        for e in t.edges() {
            *sums.entry((e.child, t.vertices()[e.parent].origin)).or_default() += e.weight;
        }
        for ((child, parent), s) in sums {
            let (lc, jc) = mlp.node_position(t.vertices()[child].origin).unwrap();
            let (_, jp) = mlp.node_position(parent).unwrap();
            let w = mlp.weight(lc - 1, jc, jp);
            prop_assert!((s - w).abs() <= 1e-12 * w.abs().max(1.0), "{s} vs {w}");
        }
    }

    #[test]
    fn finite_l_probabilities_are_valid_and_infinite_l_is_forward(
        mlp in small_net(4, 4, 13),
        l in 1u64..100_000,
        bits in any::<u16>(),
    ) {
        let x: Vec<f64> = (0..mlp.input_dim()).map(|i| ((bits >> i) & 1) as f64).collect();
        let finite = FiniteLModel::new(&mlp, Copies::Finite(l)).unwrap().forward(&x).unwrap();
        prop_assert!(finite.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
        let inf = FiniteLModel::new(&mlp, Copies::Infinite).unwrap().forward(&x).unwrap();
        let fwd = mlp.forward(&x).unwrap();
        for (a, b) in inf.iter().flatten().zip(fwd.activations[1..].iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn calibration_error_is_bounded(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        bins in 1usize..30,
    ) {
        let (p, y): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let e = ece(&p, &y, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let t: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
        // one bin reduces ECE to |mean(p) - mean(y)|, never above MAE
        prop_assert!(ece(&p, &y, 1).unwrap() <= mae(&p, &t).unwrap() + 1e-12);
    }

    #[test]
    fn dataset_csv_round_trips(
        rows in prop::collection::vec((prop::collection::vec(-1e3f64..1e3, 3), any::<bool>(), 0.0f64..=1.0), 1..50),
    ) {
        let rows: Vec<Row> = rows.into_iter().map(|(x, y, p)| Row { x, y, p_true: Some(p) }).collect();
        let d = Dataset::new(3, rows).unwrap();
        let back = Dataset::from_csv(&d.to_csv()).unwrap();
        prop_assert_eq!(back.rows(), d.rows());
    }
}
