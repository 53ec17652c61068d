//! Analytic gradients of every parameter tensor against central differences.

use cloudlstm::convlstm::CellConfig;
use cloudlstm::synthdata::{ImageSequence, LabelMap};
use cloudlstm::train::{backward, init_params, loss};
use cloudlstm::{EncoderParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Denominator floor for entries whose true gradient is numerically zero.
const FLOOR: f64 = 1e-6;

fn instance(standard: bool, seed: u64) -> (ImageSequence, LabelMap, EncoderParams) {
    let (t, h, w, d, r, c) = (3, 6, 6, 2, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = Tensor::from_fn(&[t, h, w, d], |_| rng.random_range(0.0..1.2));
    let seq = ImageSequence::new(frames, ImageSequence::even_timestamps(t)).unwrap();
    let idx: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..c)).collect();
    let labels = LabelMap::from_indices(h, w, c, &idx).unwrap();
    let cfg = CellConfig::new(3, d, r, h, w).with_standard_variant(standard);
    let mut params = init_params(cfg, 3, c, seed + 100).unwrap();
    // Stretch the weights so gates leave their linear regime.
    for tensor in params.tensors_mut() {
        for v in tensor.data_mut() {
            *v *= 3.0;
        }
    }
    (seq, labels, params)
}

fn check(standard: bool) {
    let (seq, labels, params) = instance(standard, if standard { 5 } else { 4 });
    let (_, grads) = backward(&seq, &labels, &params).unwrap();
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic = grads.tensors();
    assert_eq!(analytic.len(), 17);
    let mut probe = params.clone();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (ti, name) in names.iter().enumerate() {
        let n = analytic[ti].len();
        for e in 0..n {
            let orig = probe.tensors_mut()[ti].data()[e];
            probe.tensors_mut()[ti].data_mut()[e] = orig + EPS;
            let up = loss(&seq, &labels, &probe).unwrap();
            probe.tensors_mut()[ti].data_mut()[e] = orig - EPS;
            let down = loss(&seq, &labels, &probe).unwrap();
            probe.tensors_mut()[ti].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let a = analytic[ti].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{e}] analytic {a:e} numeric {numeric:e}"));
            }
            checked += 1;
        }
    }
    assert!(checked > 1500, "{checked}");
    assert!(worst.0 < TOL, "worst relative error {:e} at {}", worst.0, worst.1);
}

#[test]
fn gradients_match_finite_differences() {
    check(false);
}

#[test]
fn gradients_match_finite_differences_standard_variant() {
    check(true);
}
