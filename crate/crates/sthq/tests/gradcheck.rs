//! Per-op and composite gradient checks against central finite differences.

mod common;

use common::{gradcheck, random_tensor};
use sthq::graph::{Graph, NodeId};
use sthq::entropy::HistogramPMF;
use sthq::quantizer::{soft_assign_graph, soft_quantize_graph};
use sthq::rng::SeedTree;
use sthq::tensor::Tensor;

const TOL: f64 = 1e-5;
const INSTANCES: usize = 100;

/// Reduce any node to a scalar through a fixed random linear functional so
/// non-scalar ops can be checked.
fn project(g: &mut Graph, node: NodeId, weights: &Tensor) -> NodeId {
    let w = g.constant(weights.clone()).unwrap();
    let prod = g.mul(node, w).unwrap();
    g.sum(prod).unwrap()
}

fn run_instances(name: &str, mut one: impl FnMut(&mut rand_chacha::ChaCha12Rng) -> f64) {
    let tree = SeedTree::new(0x9d5c);
    let mut rng = tree.stream(name);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        worst = worst.max(one(&mut rng));
    }
    assert!(worst < TOL, "{name}: worst relative error {worst:.3e} >= {TOL:e}");
}

#[test]
fn matmul_gradients() {
    run_instances("matmul", |rng| {
        let a = random_tensor(&[3, 4], -1.0, 1.0, false, rng);
        let b = random_tensor(&[4, 2], -1.0, 1.0, false, rng);
        let proj = random_tensor(&[3, 2], -1.0, 1.0, false, rng);
        gradcheck(
            &|g, leaves| {
                let m = g.matmul(leaves[0], leaves[1]).unwrap();
                project(g, m, &proj)
            },
            &[a, b],
        )
    });
}

#[test]
fn broadcast_elementwise_gradients() {
    run_instances("addsubmul", |rng| {
        let a = random_tensor(&[3, 4], -1.0, 1.0, false, rng);
        let b = random_tensor(&[4], -1.0, 1.0, false, rng); // broadcast over the leading axis
        let c = random_tensor(&[3, 1], -1.0, 1.0, false, rng);
        let proj = random_tensor(&[3, 4], -1.0, 1.0, false, rng);
        gradcheck(
            &|g, leaves| {
                let s = g.add(leaves[0], leaves[1]).unwrap();
                let d = g.sub(s, leaves[2]).unwrap();
                let m = g.mul(d, leaves[0]).unwrap();
                project(g, m, &proj)
            },
            &[a, b, c],
        )
    });
}

#[test]
fn relu_gradients_away_from_kinks() {
    run_instances("relu", |rng| {
        let x = random_tensor(&[4, 3], -1.0, 1.0, true, rng);
        let proj = random_tensor(&[4, 3], -1.0, 1.0, false, rng);
        gradcheck(
            &|g, leaves| {
                let r = g.relu(leaves[0]).unwrap();
                project(g, r, &proj)
            },
            &[x],
        )
    });
}

#[test]
fn softmax_and_log_gradients() {
    run_instances("softmax-log", |rng| {
        let x = random_tensor(&[2, 5], -2.0, 2.0, false, rng);
        let proj = random_tensor(&[2, 5], -1.0, 1.0, false, rng);
        gradcheck(
            &|g, leaves| {
                let s = g.softmax(leaves[0]).unwrap();
                let l = g.log(s).unwrap();
                project(g, l, &proj)
            },
            &[x],
        )
    });
}

#[test]
fn log_softmax_gradients() {
    run_instances("log-softmax", |rng| {
        let x = random_tensor(&[3, 4], -2.0, 2.0, false, rng);
        let proj = random_tensor(&[3, 4], -1.0, 1.0, false, rng);
        gradcheck(
            &|g, leaves| {
                let l = g.log_softmax(leaves[0]).unwrap();
                project(g, l, &proj)
            },
            &[x],
        )
    });
}

#[test]
fn sq_err_sum_gradients() {
    run_instances("sq-err", |rng| {
        let a = random_tensor(&[2, 3], -1.0, 1.0, false, rng);
        let b = random_tensor(&[2, 3], -1.0, 1.0, false, rng);
        gradcheck(&|g, leaves| g.sq_err_sum(leaves[0], leaves[1]).unwrap(), &[a, b])
    });
}

#[test]
fn reshape_transpose_slice_concat_gradients() {
    run_instances("shape-ops", |rng| {
        let a = random_tensor(&[2, 6], -1.0, 1.0, false, rng);
        let b = random_tensor(&[3, 4], -1.0, 1.0, false, rng);
        let proj = random_tensor(&[7, 4], -1.0, 1.0, false, rng);
        gradcheck(
            &|g, leaves| {
                let r = g.reshape(leaves[0], vec![4, 3]).unwrap();
                let t = g.transpose(r).unwrap(); // [3, 4]
                let cat = g.concat(&[t, leaves[1]], 0).unwrap(); // [6, 4]
                let sl = g.slice(cat, 0, 1, 4).unwrap(); // [4, 4]
                let cat2 = g.concat(&[sl, leaves[1]], 0).unwrap(); // [7, 4]
                project(g, cat2, &proj)
            },
            &[a, b],
        )
    });
}

#[test]
fn conv2d_gradients() {
    run_instances("conv2d", |rng| {
        let x = random_tensor(&[1, 2, 4, 4], -1.0, 1.0, false, rng);
        let k = random_tensor(&[2, 2, 3, 3], -1.0, 1.0, false, rng);
        let proj_s1 = random_tensor(&[1, 2, 4, 4], -1.0, 1.0, false, rng);
        let e1 = gradcheck(
            &|g, leaves| {
                let y = g.conv2d(leaves[0], leaves[1], 1, 1).unwrap();
                project(g, y, &proj_s1)
            },
            &[x.clone(), k.clone()],
        );
        let proj_s2 = random_tensor(&[1, 2, 2, 2], -1.0, 1.0, false, rng);
        let e2 = gradcheck(
            &|g, leaves| {
                let y = g.conv2d(leaves[0], leaves[1], 2, 1).unwrap();
                project(g, y, &proj_s2)
            },
            &[x, k],
        );
        e1.max(e2)
    });
}

#[test]
fn upsample_gradients() {
    run_instances("upsample", |rng| {
        let x = random_tensor(&[1, 2, 3, 3], -1.0, 1.0, false, rng);
        let proj = random_tensor(&[1, 2, 6, 6], -1.0, 1.0, false, rng);
        gradcheck(
            &|g, leaves| {
                let y = g.upsample2x(leaves[0]).unwrap();
                project(g, y, &proj)
            },
            &[x],
        )
    });
}

#[test]
fn random_five_op_graph_tight_tolerance() {
    // smooth ops only; the spec's composite check is tighter than per-op
    let tree = SeedTree::new(0xabc1);
    let mut rng = tree.stream("five-op");
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let a = random_tensor(&[3, 3], -1.0, 1.0, false, &mut rng);
        let b = random_tensor(&[3, 3], -1.0, 1.0, false, &mut rng);
        let proj = random_tensor(&[3, 3], -1.0, 1.0, false, &mut rng);
        let err = gradcheck(
            &|g, leaves| {
                let m = g.matmul(leaves[0], leaves[1]).unwrap(); // 1
                let s = g.softmax(m).unwrap(); // 2
                let p = g.mul(s, leaves[1]).unwrap(); // 3
                let q = g.add(p, leaves[0]).unwrap(); // 4
                let r = project(g, q, &proj); // 5 (mul+sum)
                r
            },
            &[a, b],
        );
        worst = worst.max(err);
    }
    assert!(worst < 1e-6, "five-op graph worst relative error {worst:.3e}");
}

#[test]
fn soft_assign_and_quantize_gradients() {
    run_instances("quantizer", |rng| {
        let cols = random_tensor(&[4, 2], -1.0, 1.0, false, rng);
        let centers = random_tensor(&[5, 2], -1.0, 1.0, false, rng);
        let sigma = random_tensor(&[1], 0.5, 4.0, false, rng);
        let proj_phi = random_tensor(&[4, 5], -1.0, 1.0, false, rng);
        let e_phi = gradcheck(
            &|g, leaves| {
                let phi = soft_assign_graph(g, leaves[0], leaves[1], leaves[2]).unwrap();
                project(g, phi, &proj_phi)
            },
            &[cols.clone(), centers.clone(), sigma.clone()],
        );
        let proj_q = random_tensor(&[4, 2], -1.0, 1.0, false, rng);
        let e_q = gradcheck(
            &|g, leaves| {
                let phi = soft_assign_graph(g, leaves[0], leaves[1], leaves[2]).unwrap();
                let zq = soft_quantize_graph(g, phi, leaves[1]).unwrap();
                project(g, zq, &proj_q)
            },
            &[cols, centers, sigma],
        );
        e_phi.max(e_q)
    });
}

#[test]
fn soft_entropy_qp_gradients() {
    run_instances("entropy-qp", |rng| {
        let cols = random_tensor(&[6, 2], -1.0, 1.0, false, rng);
        let centers = random_tensor(&[4, 2], -1.0, 1.0, false, rng);
        let sigma = random_tensor(&[1], 0.5, 4.0, false, rng);
        let p = HistogramPMF::from_counts(vec![5.0, 1.0, 3.0, 2.0]).unwrap();
        gradcheck(
            &|g, leaves| {
                let phi = soft_assign_graph(g, leaves[0], leaves[1], leaves[2]).unwrap();
                sthq::entropy::soft_cross_entropy_qp_graph(g, phi, &p).unwrap()
            },
            &[cols, centers, sigma],
        )
    });
}

#[test]
fn gradient_accumulation_is_replayable() {
    // fan-out plus reuse across ops: same graph built twice gives
    // bit-identical gradients
    let tree = SeedTree::new(0xfeed);
    let mut rng = tree.stream("replay");
    let x = random_tensor(&[4, 4], -1.0, 1.0, false, &mut rng);
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let leaf = g.leaf(x.clone()).unwrap();
        let a = g.mul(leaf, leaf).unwrap();
        let b = g.add(a, leaf).unwrap();
        let c = g.matmul(b, leaf).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        g.grad(leaf).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(&x), run(&x));
}
