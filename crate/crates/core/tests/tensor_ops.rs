use gmn::tensor::{adam_step, sample_normal, AdamConfig, AdamState, SeededRng, Tape, Tensor, Var};
use proptest::prelude::*;

type Build = fn(&mut Tape<'static, f64>, &[Var]) -> gmn::Result<Var>;

const STEP: f64 = 1e-4;

fn eval(build: Build, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error between tape gradients and central differences.
fn gradient_error(build: Build, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let shape = tape.shape(out).to_vec();
    let weights: Tensor<f64> = sample_normal(&mut SeededRng::new(seed), &shape);
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap().to_vec();
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(build, &plus, &weights) - eval(build, &minus, &weights)) / (2.0 * STEP);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

fn random(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_in(lo, hi)).collect()).unwrap()
}

fn ops() -> Vec<(&'static str, Build, Vec<(Vec<usize>, f64, f64)>)> {
    let m = |r: usize, c: usize| (vec![r, c], -1.5, 1.5);
    vec![
        ("matmul", |t, v| t.matmul(v[0], v[1]), vec![m(3, 4), m(4, 2)]),
        ("add", |t, v| t.add(v[0], v[1]), vec![m(3, 4), m(3, 4)]),
        ("sub", |t, v| t.sub(v[0], v[1]), vec![m(3, 4), m(3, 4)]),
        ("mul", |t, v| t.mul(v[0], v[1]), vec![m(3, 4), m(3, 4)]),
        ("scale", |t, v| t.scale(v[0], -2.5), vec![m(2, 5)]),
        ("neg", |t, v| t.neg(v[0]), vec![m(2, 5)]),
        ("add_scalar", |t, v| t.add_scalar(v[0], 0.7), vec![m(2, 5)]),
        ("tanh", |t, v| t.tanh(v[0]), vec![m(3, 3)]),
        ("sigmoid", |t, v| t.sigmoid(v[0]), vec![m(3, 3)]),
        ("softplus", |t, v| t.softplus(v[0]), vec![m(3, 3)]),
        ("exp", |t, v| t.exp(v[0]), vec![m(3, 3)]),
        ("log", |t, v| t.log(v[0]), vec![(vec![3, 3], 0.2, 3.0)]),
        ("square", |t, v| t.square(v[0]), vec![m(3, 3)]),
        ("concat0", |t, v| t.concat(&[v[0], v[1]], 0), vec![m(2, 3), m(4, 3)]),
        ("concat1", |t, v| t.concat(&[v[0], v[1]], 1), vec![m(2, 3), m(2, 5)]),
        ("slice0", |t, v| t.slice(v[0], 0, 1, 3), vec![m(4, 3)]),
        ("slice1", |t, v| t.slice(v[0], 1, 2, 5), vec![m(2, 6)]),
        ("reshape", |t, v| t.reshape(v[0], &[3, 4]), vec![m(2, 6)]),
        ("sum", |t, v| t.sum(v[0]), vec![m(3, 4)]),
        ("mean", |t, v| t.mean(v[0]), vec![m(3, 4)]),
        ("sum_rows", |t, v| t.sum_rows(v[0]), vec![m(5, 3)]),
        ("broadcast_rows", |t, v| t.broadcast_rows(v[0], 4), vec![(vec![1, 3], -1.5, 1.5)]),
        ("logsumexp_rows", |t, v| t.logsumexp_rows(v[0]), vec![m(4, 3)]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_op_matches_central_differences(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        for (name, build, shapes) in ops() {
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|(s, lo, hi)| random(&mut rng, s, *lo, *hi)).collect();
            let err = gradient_error(build, &inputs, seed ^ 0x5eed);
            prop_assert!(err < 1e-5, "{name}: relative error {err:e}");
        }
    }

    #[test]
    fn evaluation_is_deterministic(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = random(&mut rng, &[3, 4], -1.0, 1.0);
        let b = random(&mut rng, &[4, 2], -1.0, 1.0);
        let run = || {
            let mut t = Tape::new();
            let (x, y) = (t.leaf(a.clone(), true), t.leaf(b.clone(), true));
            let p = t.matmul(x, y).unwrap();
            let s = t.tanh(p).unwrap();
            let l = t.sum(s).unwrap();
            t.backward(l).unwrap();
            (t.scalar(l).to_bits(), t.grad(x).unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn backward_twice_doubles_gradients(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = random(&mut rng, &[2, 3], -1.0, 1.0);
        let mut t = Tape::new();
        let x = t.leaf(a, true);
        let s = t.sigmoid(x).unwrap();
        let l = t.sum(s).unwrap();
        t.backward(l).unwrap();
        let once = t.grad(x).unwrap().to_vec();
        t.backward(l).unwrap();
        for (g2, g1) in t.grad(x).unwrap().iter().zip(&once) {
            prop_assert_eq!(*g2, 2.0 * g1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_fixed(seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let mut params = vec![random(&mut rng, &[3, 2], -1.0, 1.0), random(&mut rng, &[4, 1], -1.0, 1.0)];
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        for k in 1..=steps {
            adam_step(&mut params, &zeros, &mut state, &AdamConfig::default()).unwrap();
            prop_assert_eq!(state.step, k as u64);
        }
        prop_assert_eq!(params, before);
    }
}

#[test]
fn normal_draws_have_unit_moments() {
    let t: Tensor<f64> = sample_normal(&mut SeededRng::new(11), &[1_000_000]);
    let n = t.len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.01, "variance {var}");
}
