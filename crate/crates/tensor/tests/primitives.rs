use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempseg_tensor::{fault, gradcheck, Graph, Result, Tensor, Var, DEFAULT_EPS};

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Weighted sum with fixed pseudo-random weights so every output element
/// carries a distinct upstream gradient.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let w = Tensor::from_fn(g.shape(y), |_| rng.random_range(-1.0..1.0))?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check_seeds(
    name: &str,
    shapes: impl Fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    f: impl Fn(&mut Graph<f64>, &[Var], &mut ChaCha8Rng) -> Result<Var>,
) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = shapes(&mut rng);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let op_seed: u64 = rng.random();
        let report = gradcheck(&inputs, DEFAULT_EPS, |g, v| {
            let mut r = ChaCha8Rng::seed_from_u64(op_seed);
            let y = f(g, v, &mut r)?;
            probe(g, y, seed)
        })
        .unwrap();
        assert!(
            report.passes(TOL),
            "{name} seed {seed}: rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
        assert!(report.checked > 0, "{name} seed {seed}: nothing checked");
    }
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

#[test]
fn conv1d_hand_example() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
    let w = g.constant(t(&[3, 1, 1], &[1.0, 0.0, -1.0]));
    let y = g.conv1d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[-2.0]);
}

#[test]
fn softmax_with_all_but_one_masked_is_one_hot() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 4], &[3.0, -1.0, 7.0, 0.5]));
    let ninf = f64::NEG_INFINITY;
    let y = g.softmax(x, Some(&[ninf, 0.0, ninf, ninf])).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 1.0, 0.0, 0.0]);
    let y = g.softmax(x, Some(&[ninf; 4])).unwrap();
    assert_eq!(g.value(y).data(), &[0.0; 4]);
}

#[test]
fn lstm_cell_with_zero_weights_outputs_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 3], &[0.3, -1.0, 2.0]));
    let h = g.constant(Tensor::zeros([1, 2]).unwrap());
    let c = g.constant(Tensor::zeros([1, 2]).unwrap());
    let w_ih = g.constant(Tensor::zeros([3, 8]).unwrap());
    let w_hh = g.constant(Tensor::zeros([2, 8]).unwrap());
    let b = g.constant(Tensor::zeros([8]).unwrap());
    let out = g.lstm_cell(x, h, c, w_ih, w_hh, b).unwrap();
    assert_eq!(g.value(out).data(), &[0.0; 4]);
}

#[test]
fn backward_of_sum_of_squares() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_of_sigmoid_at_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1], &[0.0]), true);
    let y = g.sigmoid(x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.25]);
}

#[test]
fn backward_twice_accumulates_until_zero_grad() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
    g.zero_grad();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_and_empty() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
    assert!(g.backward(x).is_err());
    let mut empty = Graph::<f64>::new();
    assert!(empty.backward(Var::clone(&x)).is_err());
}

#[test]
fn fan_out_gradient_is_sum_of_paths() {
    // y = sigmoid(x)·x + tanh(x): x feeds three consumers.
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[5]);
        let report = gradcheck(&[x.clone()], DEFAULT_EPS, |g, v| {
            let s = g.sigmoid(v[0])?;
            let p = g.mul(s, v[0])?;
            let th = g.tanh(v[0])?;
            let y = g.add(p, th)?;
            g.sum(y)
        })
        .unwrap();
        assert!(report.passes(TOL));

        // Closed form: d/dx [σ(x)x + tanh x] = σ(x)(1−σ(x))x + σ(x) + 1 − tanh²x
        let mut g = Graph::<f64>::new();
        let xv = g.leaf(x.clone(), true);
        let s = g.sigmoid(xv).unwrap();
        let p = g.mul(s, xv).unwrap();
        let th = g.tanh(xv).unwrap();
        let y = g.add(p, th).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        for (&xi, &gi) in x.data().iter().zip(g.grad(xv).unwrap()) {
            let sg = 1.0 / (1.0 + (-xi).exp());
            let expect = sg * (1.0 - sg) * xi + sg + 1.0 - xi.tanh().powi(2);
            assert!((gi - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn gradcheck_elementwise_and_reductions() {
    check_seeds(
        "add/sub/mul/scale",
        |r| {
            let s = vec![dim(r, 1, 4), dim(r, 1, 5)];
            vec![s.clone(), s]
        },
        |g, v, _| {
            let a = g.add(v[0], v[1])?;
            let b = g.sub(a, v[1])?;
            let c = g.mul(b, v[1])?;
            g.scale(c, -1.7)
        },
    );
    check_seeds(
        "add_row",
        |r| {
            let n = dim(r, 1, 5);
            vec![vec![dim(r, 1, 4), n], vec![n]]
        },
        |g, v, _| g.add_row(v[0], v[1]),
    );
    check_seeds("sigmoid", |r| vec![vec![dim(r, 1, 6)]], |g, v, _| g.sigmoid(v[0]));
    check_seeds("tanh", |r| vec![vec![dim(r, 1, 6)]], |g, v, _| g.tanh(v[0]));
    check_seeds("relu", |r| vec![vec![dim(r, 1, 6)]], |g, v, _| g.relu(v[0]));
    check_seeds("sum", |r| vec![vec![dim(r, 1, 3), dim(r, 1, 3)]], |g, v, _| g.sum(v[0]));
    check_seeds("mean", |r| vec![vec![dim(r, 1, 3), dim(r, 1, 3)]], |g, v, _| g.mean(v[0]));
    check_seeds("max", |r| vec![vec![dim(r, 1, 3), dim(r, 1, 3)]], |g, v, _| g.max(v[0]));
    check_seeds(
        "sum_rows",
        |r| vec![vec![dim(r, 1, 4), dim(r, 1, 4)]],
        |g, v, _| g.sum_rows(v[0]),
    );
}

#[test]
fn gradcheck_linear_algebra_and_shape_ops() {
    check_seeds(
        "matmul",
        |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            vec![vec![m, k], vec![k, n]]
        },
        |g, v, _| g.matmul(v[0], v[1]),
    );
    check_seeds(
        "transpose",
        |r| vec![vec![dim(r, 1, 4), dim(r, 1, 4)]],
        |g, v, _| g.transpose(v[0]),
    );
    check_seeds(
        "reshape",
        |r| vec![vec![dim(r, 1, 4), 6]],
        |g, v, _| {
            let rows = g.shape(v[0])[0];
            g.reshape(v[0], [rows * 2, 3])
        },
    );
    check_seeds(
        "slice_cols/concat_cols",
        |r| {
            let m = dim(r, 1, 4);
            vec![vec![m, dim(r, 2, 5)], vec![m, dim(r, 1, 3)]]
        },
        |g, v, r| {
            let n = g.shape(v[0])[1];
            let start = r.random_range(0..n - 1);
            let s = g.slice_cols(v[0], start, n)?;
            g.concat_cols(&[v[1], s, v[1]])
        },
    );
    check_seeds(
        "gather_rows",
        |r| vec![vec![dim(r, 1, 5), dim(r, 1, 3)]],
        |g, v, r| {
            let m = g.shape(v[0])[0];
            let idx: Vec<usize> = (0..dim(r, 1, 6)).map(|_| r.random_range(0..m)).collect();
            g.gather_rows(v[0], &idx)
        },
    );
    check_seeds(
        "masked_fill",
        |r| vec![vec![dim(r, 1, 5), dim(r, 1, 3)]],
        |g, v, r| {
            let m = g.shape(v[0])[0];
            let keep: Vec<bool> = (0..m).map(|_| r.random_bool(0.6)).collect();
            g.masked_fill(v[0], &keep, 0.0)
        },
    );
}

#[test]
fn gradcheck_convolutions() {
    check_seeds(
        "conv1d",
        |r| {
            let (len, cin, cout, k) = (dim(r, 3, 9), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            vec![vec![len, cin], vec![k, cin, cout], vec![cout]]
        },
        |g, v, r| {
            let stride = r.random_range(1..=3);
            let pad = r.random_range(0..=1);
            g.conv1d(v[0], v[1], Some(v[2]), stride, pad)
        },
    );
    check_seeds(
        "depthwise_conv1d",
        |r| {
            let (len, c, k) = (dim(r, 3, 9), dim(r, 1, 4), dim(r, 1, 3));
            vec![vec![len, c], vec![k, c], vec![c]]
        },
        |g, v, r| {
            let stride = r.random_range(1..=3);
            let pad = r.random_range(0..=1);
            g.depthwise_conv1d(v[0], v[1], Some(v[2]), stride, pad)
        },
    );
}

#[test]
fn gradcheck_normalisation_and_softmax() {
    check_seeds(
        "layer_norm",
        |r| {
            let n = dim(r, 2, 6);
            vec![vec![dim(r, 1, 4), n], vec![n], vec![n]]
        },
        |g, v, _| g.layer_norm(v[0], v[1], v[2], 1e-5),
    );
    check_seeds(
        "softmax",
        |r| vec![vec![dim(r, 1, 4), dim(r, 2, 6)]],
        |g, v, r| {
            let n = g.value(v[0]).numel();
            let mask: Vec<f64> = (0..n)
                .map(|_| if r.random_bool(0.3) { f64::NEG_INFINITY } else { 0.0 })
                .collect();
            g.softmax(v[0], Some(&mask))
        },
    );
}

#[test]
fn gradcheck_recurrent() {
    check_seeds(
        "lstm_cell",
        |r| {
            let (din, h) = (dim(r, 1, 4), dim(r, 1, 3));
            vec![
                vec![1, din],
                vec![1, h],
                vec![1, h],
                vec![din, 4 * h],
                vec![h, 4 * h],
                vec![4 * h],
            ]
        },
        |g, v, _| g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5]),
    );
    check_seeds(
        "lstm",
        |r| {
            let (len, din, h) = (dim(r, 1, 6), dim(r, 1, 4), dim(r, 1, 3));
            vec![vec![len, din], vec![din, 4 * h], vec![h, 4 * h], vec![4 * h]]
        },
        |g, v, _| g.lstm(v[0], v[1], v[2], v[3]),
    );
}

#[test]
fn lstm_sequence_equals_repeated_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (len, din, h) = (5, 3, 2);
    let x = rand_tensor(&mut rng, &[len, din]);
    let w_ih = rand_tensor(&mut rng, &[din, 4 * h]);
    let w_hh = rand_tensor(&mut rng, &[h, 4 * h]);
    let b = rand_tensor(&mut rng, &[4 * h]);
    let mut g = Graph::<f64>::new();
    let (xv, wi, wh, bv) = (
        g.constant(x.clone()),
        g.constant(w_ih),
        g.constant(w_hh),
        g.constant(b),
    );
    let seq = g.lstm(xv, wi, wh, bv).unwrap();
    let mut hv = g.constant(Tensor::zeros([1, h]).unwrap());
    let mut cv = g.constant(Tensor::zeros([1, h]).unwrap());
    for t in 0..len {
        let xt = g.constant(Tensor::new([1, din], x.row(t).to_vec()).unwrap());
        let out = g.lstm_cell(xt, hv, cv, wi, wh, bv).unwrap();
        let hn = g.value(out).data()[..h].to_vec();
        let expect = g.value(seq).row(t).to_vec();
        for (a, b) in hn.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        hv = g.slice_cols(out, 0, h).unwrap();
        cv = g.slice_cols(out, h, 2 * h).unwrap();
    }
}

#[test]
fn gradcheck_windowed_attention() {
    check_seeds(
        "windowed_attention",
        |r| {
            let heads = dim(r, 1, 2);
            let d = heads * dim(r, 1, 3);
            let len = dim(r, 1, 7);
            vec![vec![len, d], vec![len, d], vec![len, d], vec![heads]]
        },
        |g, v, r| {
            let heads = g.value(v[3]).numel();
            let len = g.shape(v[0])[0];
            let valid: Vec<bool> = (0..len).map(|_| r.random_bool(0.8)).collect();
            let window = 2 * r.random_range(0..=2) + 1;
            g.windowed_attention(v[0], v[1], v[2], &valid, window, heads)
        },
    );
}

#[test]
fn relu_at_zero_is_reported_not_failed() {
    let x = t(&[3], &[0.0, 0.5, -0.5]);
    let report = gradcheck(&[x], DEFAULT_EPS, |g, v| {
        let y = g.relu(v[0])?;
        g.sum(y)
    })
    .unwrap();
    assert_eq!(report.skipped, vec![(0, 0)]);
    assert_eq!(report.checked, 2);
    assert!(report.passes(TOL));
}

#[test]
fn gradcheck_names_the_primitive_that_went_non_finite() {
    let x = t(&[2], &[1.0, 2.0]);
    let err = gradcheck(&[x], DEFAULT_EPS, |g, v| {
        let z = g.constant(t(&[2], &[f64::INFINITY, 0.0]));
        let y = g.mul(v[0], z)?;
        g.sum(y)
    })
    .unwrap_err();
    assert!(err.to_string().contains("mul"), "{err}");
}

#[test]
fn sign_flip_fault_is_detected() {
    let x = t(&[3], &[0.1, -0.4, 0.9]);
    fault::inject_sign_flip("tanh");
    let report = gradcheck(&[x], DEFAULT_EPS, |g, v| {
        let y = g.tanh(v[0])?;
        g.sum(y)
    })
    .unwrap();
    fault::clear();
    assert!(!report.passes(TOL));
}

#[test]
fn shape_and_argument_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros([2, 3]).unwrap());
    let b = g.constant(Tensor::zeros([2, 3]).unwrap());
    let w = g.constant(Tensor::zeros([3, 3, 1]).unwrap());
    assert!(g.matmul(a, b).is_err());
    assert!(g.conv1d(a, w, None, 0, 1).is_err());
    let c = g.constant(Tensor::zeros([3, 2]).unwrap());
    assert!(g.add(a, c).is_err());
    assert!(g.windowed_attention(a, a, a, &[true, true], 2, 1).is_err());
    assert!(g.windowed_attention(a, a, a, &[true, true], 3, 2).is_err());
}
