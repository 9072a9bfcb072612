use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rotreg_core::experiments::hemisphere::*;
use rotreg_core::hydranet::*;
use rotreg_core::nnet::{HeadReduction, LossKind, Mode, OptimizerKind, TrainConfig};
use rotreg_core::uncertainty::SIGMA_MIN;

fn main() {
    let config = HemisphereConfig { seed: 1, ..HemisphereConfig::default() };
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let train = gen_hemisphere(&config, 100, 60.0, &mut rng).unwrap();
    let arch = So3Arch { body_width: 64, residual_blocks: 5, head_hidden: 64, quat_heads: 25, head_dropout_p: 0.0, sigma_floor: SIGMA_MIN };
    for (epochs, lr) in [(400usize, 1e-3f64), (800, 1e-3), (1600, 1e-3), (800, 2e-3)] {
        let cfg = TrainConfig {
            learning_rate: lr, momentum: 0.0, optimizer: OptimizerKind::Adam,
            epochs, minibatch_size: 50, dropout_p: 0.0,
            loss: LossKind::So3Nll, seed: 2, target_noise: 0.0,
            head_reduction: HeadReduction::MeanBody,
        };
        let mut t = ChaCha12Rng::seed_from_u64(2);
        let net = train_so3(&train.inputs, &train.targets, &cfg, &arch, &mut t).unwrap();
        let mut f = ChaCha12Rng::seed_from_u64(0);
        let (outputs, _) = net.model.forward(&train.inputs, Mode::Eval, &mut f).unwrap();
        let mut norms: Vec<f64> = Vec::new();
        for o in &outputs[1..] {
            for i in 0..o.nrows() {
                norms.push(Vector4::new(o[(i,0)], o[(i,1)], o[(i,2)], o[(i,3)]).norm());
            }
        }
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let err = predict_so3_batch(&net, &train.inputs).unwrap().iter().zip(&train.targets)
            .map(|(b, t)| b.mean.angular_distance(t).to_degrees()).sum::<f64>() / 100.0;
        println!("e{epochs} lr{lr}: norm median {:.2}, err {:.2} deg", norms[norms.len()/2], err);
    }
}
