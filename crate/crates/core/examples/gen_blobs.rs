//! Regenerates `data/blobs.csv`, the bundled tiny-net dataset:
//! four Gaussian clusters in 4-D, 750 points each, fixed seed.
//!
//!     cargo run -p effmeter-core --example gen_blobs > crates/core/data/blobs.csv

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const CENTERS: [[f64; 4]; 4] = [
    [-1.5, -1.5, 0.0, 0.0],
    [1.5, 1.5, 0.0, 0.0],
    [-1.5, 1.5, 0.5, 0.0],
    [1.5, -1.5, -0.5, 0.0],
];
const PER_CLASS: usize = 750;
const SIGMA: f64 = 0.8;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);
    let noise = Normal::new(0.0, SIGMA).unwrap();
    println!("x0,x1,x2,x3,label");
    // interleave classes so any prefix stays roughly balanced
    for _ in 0..PER_CLASS {
        for (label, center) in CENTERS.iter().enumerate() {
            let x: Vec<String> = center
                .iter()
                .map(|c| format!("{:.4}", c + noise.sample(&mut rng)))
                .collect();
            println!("{},{}", x.join(","), label);
        }
    }
}
