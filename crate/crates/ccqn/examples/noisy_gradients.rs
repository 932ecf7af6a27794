//! Sampling noisy gradient batches and the descent-margin bound: as long as
//! the noise norm stays strictly under (gᵀB⁻¹g)/‖B⁻¹g‖, the quasi-Newton
//! direction computed from the noisy gradient is still a descent direction
//! for the true one.
//!
//! ```text
//! cargo run --release --example noisy_gradients
//! ```

use ccqn::linalg::{axpy, dot, norm, scaled};
use ccqn::noise::{descent_margin, sample_batch, NoiseSpec, NoiseStream};
use ccqn::problem::{gen_random, GenSpec};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 20;
    let problem = gen_random(&GenSpec { n, a: -1.0, b: 1.0, eps: 0.3, seed: 11 }).unwrap();
    let x = vec![0.1; n];

    // batch statistics at two noise levels
    for sigma2 in [1e-6, 1e-2] {
        let mut spec = NoiseSpec::new(sigma2, 20, NoiseStream::derive(1, problem.label(), "demo"));
        let batch = sample_batch(&problem, &x, &mut spec).unwrap();
        let noise: Vec<f64> = batch
            .mean
            .iter()
            .zip(&batch.true_grad)
            .map(|(m, t)| m - t)
            .collect();
        println!(
            "sigma2 = {sigma2:.0e}: |true g| = {:.4}, |mean noise| = {:.2e} over {} samples",
            norm(&batch.true_grad),
            norm(&noise),
            batch.samples.len()
        );
    }

    // Monte Carlo check of the margin bound with B = H
    let factor = problem.hessian().cholesky().unwrap();
    let g = problem.true_gradient(&x).unwrap();
    let margin = descent_margin(|v| factor.solve(v).unwrap(), &g).unwrap();
    println!("\ndescent margin for B = H at this iterate: {margin:.4}");

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut below_total, mut below_ok) = (0usize, 0usize);
    let (mut above_total, mut above_ascent) = (0usize, 0usize);
    for _ in 0..20_000 {
        let raw: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        // half the draws strictly below the margin, half well above
        let below = rng.random::<bool>();
        let scale = if below { rng.random::<f64>() * 0.999 } else { 2.0 + 8.0 * rng.random::<f64>() };
        let eps = scaled(&raw, scale * margin / norm(&raw));
        let mut noisy = g.clone();
        axpy(&mut noisy, 1.0, &eps);
        let dir = scaled(&factor.solve(&noisy).unwrap(), -1.0);
        let descent = dot(&g, &dir) < 0.0;
        if below {
            below_total += 1;
            below_ok += descent as usize;
        } else {
            above_total += 1;
            above_ascent += !descent as usize;
        }
    }
    println!("draws below the margin: {below_ok}/{below_total} descent (guaranteed)");
    println!("draws above the margin: {above_ascent}/{above_total} ascent observed (the bound is one-sided)");
}
