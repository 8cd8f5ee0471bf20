//! Verify backpropagation against central finite differences on three
//! network sizes, including the full Q-network topology, plus a fault
//! injection that proves the check can fail.
//!
//!     cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lanesim::nn::{DenseNet, OptimizerConfig, TrainSample};

fn main() {
    let architectures: [Vec<usize>; 3] = [
        vec![4, 3, 5],
        vec![10, 8, 8, 5],
        vec![40, 32, 64, 64, 512, 5],
    ];

    for sizes in &architectures {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let net = DenseNet::init(sizes, OptimizerConfig::default(), &mut rng).unwrap();
        let inputs: Vec<Vec<f32>> = (0..3)
            .map(|_| {
                (0..sizes[0])
                    .map(|_| rng.random::<f32>() * 2.0 - 1.0)
                    .collect()
            })
            .collect();
        let batch: Vec<TrainSample> = inputs
            .iter()
            .enumerate()
            .map(|(i, input)| TrainSample {
                input,
                action: i % 5,
                target: 1.0 - i as f64 * 0.6,
            })
            .collect();

        let started = std::time::Instant::now();
        let err = net.finite_diff_check(&batch, 1e-5).unwrap();
        let corrupted = net.finite_diff_check_corrupted(&batch, 1e-5).unwrap();
        println!(
            "{sizes:?}: max relative error {err:.3e} (threshold 1e-4), \
fault injection reports {corrupted:.3e} (must exceed 5e-2), {:?}",
            started.elapsed()
        );
        assert!(err < 1e-4, "gradient mismatch");
        assert!(corrupted > 5e-2, "fault injection undetected");
    }
    println!("all gradient checks passed");
}
