use mixrain::moe::{ModelConfig, Tensor, ToyModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true gradient is
/// essentially zero are compared absolutely.
const FLOOR: f64 = 1e-6;

fn tiny() -> (ToyModel, Tensor, Tensor) {
    let config = ModelConfig {
        channels: 2,
        encoder_stages: 1,
        decoder_stages: 1,
        expert_widths: vec![2, 3, 4],
        top_k: 2,
        noise_std: 0.1,
        router_init_std: 2.0,
        output_init_scale: 1.0,
    };
    let model = ToyModel::new(config, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let input: Vec<f64> = (0..2 * 4 * 4).map(|_| rng.random::<f64>()).collect();
    // targets far from any output keep the L1 loss away from its kinks
    let target: Vec<f64> = (0..2 * 4 * 4)
        .map(|i| if i % 3 == 0 { 10.0 } else { -10.0 })
        .collect();
    (
        model,
        Tensor::new(vec![2, 4, 4], input).unwrap(),
        Tensor::new(vec![2, 4, 4], target).unwrap(),
    )
}

#[test]
fn every_parameter_gradient_matches_central_differences() {
    let (model, input, target) = tiny();
    let (_, grads) = model.loss_and_gradients(&input, &target, true, 5).unwrap();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for id in 0..model.params().len() {
        // experts outside the top-k receive no gradient entry at all
        let zeros = Tensor::zeros(model.params().get(id).shape());
        let analytic = grads.get(id).unwrap_or(&zeros);
        for j in 0..model.params().get(id).len() {
            let mut plus = model.clone();
            plus.params_mut().get_mut(id).data_mut()[j] += H;
            let mut minus = model.clone();
            minus.params_mut().get_mut(id).data_mut()[j] -= H;
            let lp = plus.loss_and_gradients(&input, &target, true, 5).unwrap().0;
            let lm = minus
                .loss_and_gradients(&input, &target, true, 5)
                .unwrap()
                .0;
            let fd = (lp - lm) / (2.0 * H);
            let a = analytic.data()[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(FLOOR);
            worst = worst.max(rel);
            assert!(
                rel <= REL_TOL,
                "{}[{j}]: analytic {a:e}, finite difference {fd:e}, rel {rel:e}",
                model.params().name(id)
            );
            checked += 1;
        }
    }
    assert_eq!(checked, model.params().total_values());
    eprintln!("checked {checked} entries, worst relative error {worst:e}");
}
