use gradnorm::linalg::{matmul, Matrix};
use gradnorm::network::{squared_loss, squared_loss_residual, MlpModel};
use gradnorm::rng::Rng;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    // raw matmul throughput
    let a = Matrix::<f64>::gaussian(&mut rng, 100, 250, 0.0, 1.0).unwrap();
    let b = Matrix::<f64>::gaussian(&mut rng, 250, 100, 0.0, 1.0).unwrap();
    let t0 = Instant::now();
    let reps = 2000;
    let mut acc = 0.0;
    for _ in 0..reps {
        let c = matmul(&a, &b).unwrap();
        acc += c.get(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * 100.0 * 250.0 * 100.0 * reps as f64;
    println!("matmul 100x250x100: {:.2} GFLOP/s (acc {acc:.3})", flops / dt / 1e9);

    // full training-ish step cost: forward + backward, T=2, batch 100
    let model = MlpModel::<f64>::init(&mut rng, 250, 100, 4, 100, 2);
    let x = Matrix::<f64>::gaussian(&mut rng, 100, 250, 0.0, 1.0).unwrap();
    let targets: Vec<_> = (0..2)
        .map(|_| Matrix::<f64>::gaussian(&mut rng, 100, 100, 0.0, 1.0).unwrap())
        .collect();
    let steps = 300;
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..steps {
        let (preds, cache) = model.forward(&x).unwrap();
        let residuals: Vec<_> = preds
            .iter()
            .zip(&targets)
            .map(|(p, t)| squared_loss_residual(p, t).unwrap())
            .collect();
        let losses: f64 = preds
            .iter()
            .zip(&targets)
            .map(|(p, t)| squared_loss(p, t).unwrap())
            .sum();
        let (total, tg) = model.backward(&cache, &residuals, &[1.0, 1.0]).unwrap();
        sink += losses + total.trunk[0].bias[0] + tg.unweighted_norms()[0];
    }
    let per_step = t0.elapsed().as_secs_f64() / steps as f64;
    println!("T=2 fwd+bwd step: {:.2} ms  (20k steps = {:.0} s)  sink {sink:.3}", per_step * 1e3, per_step * 20000.0);

    // T=10
    let model = MlpModel::<f64>::init(&mut rng, 250, 100, 4, 100, 10);
    let targets: Vec<_> = (0..10)
        .map(|_| Matrix::<f64>::gaussian(&mut rng, 100, 100, 0.0, 1.0).unwrap())
        .collect();
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..steps {
        let (preds, cache) = model.forward(&x).unwrap();
        let residuals: Vec<_> = preds
            .iter()
            .zip(&targets)
            .map(|(p, t)| squared_loss_residual(p, t).unwrap())
            .collect();
        let w = [1.0; 10];
        let (total, tg) = model.backward(&cache, &residuals, &w).unwrap();
        sink += total.trunk[0].bias[0] + tg.unweighted_norms()[0];
    }
    let per_step = t0.elapsed().as_secs_f64() / steps as f64;
    println!("T=10 fwd+bwd step: {:.2} ms  (20k steps = {:.0} s)  sink {sink:.3}", per_step * 1e3, per_step * 20000.0);
}
