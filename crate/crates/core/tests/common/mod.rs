#![allow(dead_code)]

use minn::data::Bag;
use minn::network::{init_params, loss_and_gradient, ModelParams, NetworkConfig};
use minn::pooling::PoolingKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

pub fn config(kind: PoolingKind) -> NetworkConfig {
    NetworkConfig {
        input_dim: 4,
        hidden_widths: vec![5, 4, 3],
        embedding_dim: 3,
        attention_dim: 3,
        pooling: kind,
        seed: 7,
    }
}

pub fn random_bags(seed: u64) -> Vec<Bag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [1usize, 2, 5]
        .iter()
        .enumerate()
        .map(|(b, &n)| {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            Bag::from_rows(format!("p{b}"), &rows, Some((b % 2) as u8)).unwrap()
        })
        .collect()
}

/// Random biases too, so no ReLU sits exactly at its kink.
pub fn random_params(cfg: &NetworkConfig, seed: u64) -> ModelParams {
    let mut params = init_params(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = params.to_flat();
    for v in &mut flat {
        if *v == 0.0 {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    params.set_flat(&flat).unwrap();
    params
}

fn loss_at(params: &ModelParams, flat: &[f64], bags: &[Bag], cfg: &NetworkConfig) -> f64 {
    let mut p = params.clone();
    p.set_flat(flat).unwrap();
    loss_and_gradient(&p, bags, cfg).unwrap().0
}

/// Largest relative error between analytic and central-difference gradients.
/// Denominator is `max(|analytic|, |numeric|, 1e-6)` so that entries whose
/// true gradient is zero are judged on absolute error.
pub fn max_relative_error(kind: PoolingKind, seed: u64) -> (f64, String) {
    let cfg = config(kind);
    let params = random_params(&cfg, seed);
    let bags = random_bags(seed + 100);
    let (_, grad) = loss_and_gradient(&params, &bags, &cfg).unwrap();
    let analytic = grad.to_flat();
    let names: Vec<String> = grad
        .blocks()
        .iter()
        .flat_map(|b| (0..b.values.len()).map(move |i| format!("{}[{i}]", b.name)))
        .collect();
    let base = params.to_flat();
    let mut worst = (0.0, String::new());
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += STEP;
        minus[i] -= STEP;
        let numeric = (loss_at(&params, &plus, &bags, &cfg) - loss_at(&params, &minus, &bags, &cfg)) / (2.0 * STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > worst.0 {
            worst = (rel, format!("{} analytic {a:e} numeric {numeric:e}", names[i]));
        }
    }
    worst
}
