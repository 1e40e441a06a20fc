//! Whole-network gradient checks and shape contracts at 64-bit.

mod common;

use common::*;
use flowsur::aggregator::Aggregator;
use flowsur::caer::{shape_schedule, Caer, LATENT_CHANNELS};
use flowsur::mlp::{InletDescriptor, Mlp};
use flowsur::Tensor;
use rand::Rng;

fn field_input(ny: usize, nx: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(&[2, ny, nx], |_| r.random_range(0.05..0.95))
}

#[test]
fn caer_summed_loss_gradient() {
    let (ny, nx) = (12, 18);
    let mut net: Caer<f64> = Caer::new(ny, nx, 4).unwrap();
    let x = field_input(ny, nx, 5);
    let err = network_gradient_check(
        &mut net,
        |n| n.params_mut(),
        |n| n.accumulate_sample(&x).unwrap(),
        |n| n.loss(&x).unwrap(),
        3,
        6,
    );
    assert!(
        err.worst < GRAD_TOL && err.skipped * 10 <= err.checked,
        "caer: {err:?}"
    );
}

#[test]
fn mlp_batch_loss_gradient() {
    let shape = [LATENT_CHANNELS, 1, 2];
    let mut net: Mlp<f64> = Mlp::new(shape, 9);
    let descs = [
        InletDescriptor::left(0.25).unwrap(),
        InletDescriptor::right(0.7).unwrap(),
    ];
    let mut r = rng(10);
    let targets = Tensor::from_fn(&[2, shape.iter().product()], |_| r.random_range(-1.0..1.0));
    let loss = |n: &Mlp<f64>| {
        let y = n.forward_batch(&descs).unwrap();
        flowsur::ops::mse(&y, &targets).unwrap()
    };
    let err = network_gradient_check(
        &mut net,
        |n| n.params_mut(),
        |n| n.accumulate_batch(&descs, &targets).unwrap(),
        loss,
        4,
        11,
    );
    assert!(
        err.worst < GRAD_TOL && err.skipped * 10 <= err.checked,
        "mlp: {err:?}"
    );
}

#[test]
fn aggregator_loss_gradient() {
    let mut net: Aggregator<f64> = Aggregator::new(12);
    let mut r = rng(13);
    let l = random_tensor(&mut r, &[LATENT_CHANNELS, 2, 3]);
    let rt = random_tensor(&mut r, &[LATENT_CHANNELS, 2, 3]);
    let target = random_tensor(&mut r, &[LATENT_CHANNELS, 2, 3]);
    let err = network_gradient_check(
        &mut net,
        |n| n.params_mut(),
        |n| n.accumulate_sample(&l, &rt, &target).unwrap(),
        |n| flowsur::ops::mse(&n.forward_raw(&l, &rt).unwrap(), &target).unwrap(),
        4,
        14,
    );
    assert!(
        err.worst < GRAD_TOL && err.skipped * 10 <= err.checked,
        "aggregator: {err:?}"
    );
}

#[test]
fn benchmark_shape_contracts_stage_by_stage() {
    let net: Caer<f32> = Caer::new(100, 150, 0).unwrap();
    assert_eq!(
        shape_schedule(100, 150),
        [(100, 150), (50, 75), (25, 38), (13, 19), (7, 10), (4, 5)]
    );
    let x = Tensor::<f32>::from_fn(&[2, 100, 150], |i| ((i % 97) as f32) / 97.0);
    let trace = net.encoder_trace(&x).unwrap();
    let shapes: Vec<Vec<usize>> = trace.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(
        shapes,
        vec![
            vec![16, 50, 75],
            vec![32, 25, 38],
            vec![64, 13, 19],
            vec![64, 7, 10],
            vec![64, 4, 5],
        ]
    );
    let z = trace.last().unwrap();
    let dec: Vec<Vec<usize>> = net
        .decoder_trace(z)
        .unwrap()
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    assert_eq!(
        dec,
        vec![
            vec![64, 7, 10],
            vec![64, 13, 19],
            vec![32, 25, 38],
            vec![16, 50, 75],
            vec![8, 100, 150],
            vec![1, 100, 150],
            vec![1, 100, 150],
        ]
    );
    assert_eq!(net.compression_ratio(), 23.4375);
    assert_eq!(
        30000.0 / net.latent_shape().iter().product::<usize>() as f64,
        23.4375
    );
}
