use grec_core::lossmetrics::WeightVector;
use grec_core::toynet::{gradients, loss, Dataset, ToyModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
// Denominator floor for the relative error; gradients smaller than this are
// compared absolutely.
const FLOOR: f64 = 1e-6;

fn draw(rng: &mut ChaCha8Rng) -> (ToyModel, Dataset, WeightVector) {
    let model = ToyModel::random(4, 3, 5, rng);
    let n = rng.gen_range(3..9);
    let inputs = (0..n).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let targets = (0..n).map(|_| (0..5).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()).collect();
    let w = WeightVector::new((0..5).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
    (model, Dataset::new(inputs, targets).unwrap(), w)
}

fn objective(m: &ToyModel, d: &Dataset, w: &WeightVector, scaled: bool) -> f64 {
    let l = loss(m, d, w).unwrap();
    if scaled { l.scaled } else { l.bce }
}

fn max_relative_error(scaled: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (model, data, w) = draw(&mut rng);
        let (_, g) = gradients(&model, &data, &w, scaled).unwrap();
        let analytic: Vec<Vec<f64>> = g.tensors().iter().map(|(_, t)| t.to_vec()).collect();
        for (ti, grads) in analytic.iter().enumerate() {
            for (pi, &a) in grads.iter().enumerate() {
                let mut plus = model.clone();
                plus.tensors_mut()[ti].1[pi] += H;
                let mut minus = model.clone();
                minus.tensors_mut()[ti].1[pi] -= H;
                let n = (objective(&plus, &data, &w, scaled) - objective(&minus, &data, &w, scaled)) / (2.0 * H);
                let err = (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[test]
fn scaled_loss_gradients_match_finite_differences() {
    let err = max_relative_error(true, 20);
    assert!(err <= 1e-5, "max relative error {err:e}");
}

#[test]
fn plain_bce_gradients_match_finite_differences() {
    let err = max_relative_error(false, 21);
    assert!(err <= 1e-5, "max relative error {err:e}");
}
