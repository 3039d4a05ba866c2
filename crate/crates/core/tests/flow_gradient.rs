use gdaflow::cnf::{flow_loss_and_grad, FlowModel, FlowShape, LossBatch};
use gdaflow::diffmath::{finite_diff_check, Activation, Mat};
use gdaflow::rng::SeedTree;
use rand::Rng;

fn tiny_flow(block_count: usize, seed: u64) -> FlowModel<f64> {
    let shape = FlowShape {
        dim: 2,
        horizon: 2.0,
        steps_per_unit_time: 4,
        block_count,
        hidden: vec![(5, Activation::Tanh), (4, Activation::Softplus)],
    };
    let mut rng = SeedTree::new(seed).rng();
    let mut flow = FlowModel::init(&shape, 1.0, &mut rng).unwrap();
    // move the normalization away from identity so every parameter matters
    for v in flow.params_mut().values_mut() {
        if *v == 0.0 {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    for n in flow.norms_mut() {
        n.mean = vec![0.2, -0.1];
        n.std = vec![1.3, 0.7];
    }
    flow
}

fn batch(seed: u64, n: usize) -> Mat<f64> {
    let mut rng = SeedTree::new(seed).rng();
    Mat::from_vec(n, 2, (0..2 * n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn check(block_count: usize) {
    let flow = tiny_flow(block_count, 3);
    let batches = vec![
        LossBatch {
            time_index: 1.0,
            features: batch(10, 8),
            taus: vec![0.0, 0.3, 0.55, 1.0],
        },
        LossBatch {
            time_index: 2.0,
            features: batch(11, 8),
            taus: vec![0.0, 0.9, 1.4, 2.0],
        },
    ];
    let report = finite_diff_check(
        |p| {
            let mut f = flow.clone();
            f.set_params(p.clone())?;
            flow_loss_and_grad(&f, &batches, 5.0)
        },
        flow.params(),
        1e-6,
    )
    .unwrap();
    assert!(report.non_finite.is_empty());
    assert!(report.kinks.is_empty(), "kinks at {:?}", report.kinks);
    assert_eq!(report.checked, flow.params().len());
    assert!(report.max_rel_error <= 1e-4, "max rel error {:e}", report.max_rel_error);
}

#[test]
fn flow_loss_gradient_matches_central_differences() {
    check(1);
}

#[test]
fn flow_loss_gradient_with_block_normalization() {
    check(2);
}
