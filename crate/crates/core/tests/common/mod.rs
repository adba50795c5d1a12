//! Independent oracles shared by the oracle suite and the acceptance suite.
#![allow(dead_code)]

use plab::collapse::{self, ClassificationData};
use plab::compression::{self, CompletionProblem, CompressedNetwork};
use plab::network::{self, Activation, Network, Objective, TrainConfig};
use plab::parsimony::{self, Case};
use plab::tensor::{self, Matrix, Seed};
use rand::Rng;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    tensor::gaussian(rows, cols, &mut Seed(seed).rng())
}

/// Scalar triple loop, kept free of library code.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.ncols(), b.nrows());
    let mut c = Matrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[(i, k)] * b[(k, j)];
            }
            c[(i, j)] = s;
        }
    }
    c
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Forward pass written out by hand: `W_L σ(⋯ σ(W_1 X))`.
pub fn forward_oracle(layers: &[Matrix], act: Activation, x: &Matrix) -> Matrix {
    let mut z = x.clone();
    for (l, w) in layers.iter().enumerate() {
        z = matmul(w, &z);
        if act == Activation::Relu && l + 1 < layers.len() {
            z.apply(|v| *v = v.max(0.0));
        }
    }
    z
}

pub fn loss_oracle(layers: &[Matrix], act: Activation, x: &Matrix, y: &Matrix) -> f64 {
    let out = forward_oracle(layers, act, x);
    let mut s = 0.0;
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            s += (out[(i, j)] - y[(i, j)]).powi(2);
        }
    }
    0.5 * s
}

/// One random instance for the finite-difference check.
pub fn random_instance(index: u64, act: Activation) -> (Network, Matrix, Matrix) {
    let mut rng = Seed(1000 + index).rng();
    let depth = rng.random_range(2..=4);
    let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(2..=6)).collect();
    let n = rng.random_range(3..=7);
    let layers: Vec<Matrix> = dims
        .windows(2)
        .map(|w| tensor::gaussian(w[1], w[0], &mut rng) / (w[0] as f64).sqrt())
        .collect();
    let x = tensor::gaussian(dims[0], n, &mut rng);
    let y = tensor::gaussian(dims[depth], n, &mut rng);
    (Network::new(layers, act).unwrap(), x, y)
}

/// Largest per-entry error of the analytic gradient against central
/// differences with step `1e-6`, relative to `max(|fd|, 1)`.
pub fn fd_gradient_error(net: &Network, x: &Matrix, y: &Matrix) -> f64 {
    let h = 1e-6;
    let grads = network::gradient(net, x, y).unwrap();
    let act = net.activation();
    let base: Vec<Matrix> = net.layers().to_vec();
    let mut worst = 0.0f64;
    for (l, g) in grads.iter().enumerate() {
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let mut plus = base.clone();
                plus[l][(i, j)] += h;
                let mut minus = base.clone();
                minus[l][(i, j)] -= h;
                let fd = (loss_oracle(&plus, act, x, y) - loss_oracle(&minus, act, x, y)) / (2.0 * h);
                worst = worst.max((g[(i, j)] - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    worst
}

/// Runs the finite-difference check on `count` instances, alternating linear
/// and relu networks, and returns the worst error.
pub fn fd_suite(count: u64) -> f64 {
    (0..count)
        .map(|k| {
            let act = if k % 2 == 0 { Activation::Linear } else { Activation::Relu };
            let (net, x, y) = random_instance(k, act);
            fd_gradient_error(&net, &x, &y)
        })
        .fold(0.0, f64::max)
}

pub struct Derived {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn derived(name: &'static str, passed: bool, detail: impl Into<String>) -> Derived {
    Derived {
        name,
        passed,
        detail: detail.into(),
    }
}

fn lowrank_target(d: usize, r: usize, seed: u64) -> Matrix {
    let a = gaussian(d, r, seed);
    let b = gaussian(r, d, seed + 1);
    matmul(&a, &b)
}

/// Every example value tagged as derived in the specification, recomputed
/// through an oracle independent of the code under test.
pub fn derived_examples() -> Vec<Derived> {
    let mut out = Vec::new();

    let m = gaussian(4, 3, 1);
    let t = tensor::svd(&m).unwrap();
    let rebuilt = matmul(&matmul(&t.u, &Matrix::from_diagonal(&nalgebra::DVector::from_vec(t.s.clone()))), &t.v.transpose());
    let e = max_abs_diff(&rebuilt, &m);
    out.push(derived("svd_reconstruction", e <= 1e-10, format!("{e:e}")));

    let x = gaussian(5, 20, 2);
    let xw = tensor::whiten(&x).unwrap();
    let e = max_abs_diff(&matmul(&xw, &xw.transpose()), &Matrix::identity(5, 5));
    out.push(derived("whitened_gram", e <= 1e-10, format!("{e:e}")));

    let net = Network::new(vec![gaussian(4, 3, 3), gaussian(5, 4, 4), gaussian(2, 5, 5)], Activation::Linear).unwrap();
    let x = gaussian(3, 6, 6);
    let direct = matmul(net.layer(3), &matmul(net.layer(2), &matmul(net.layer(1), &x)));
    let e = max_abs_diff(&network::forward(&net, &x).unwrap(), &direct);
    out.push(derived("forward_triple_product", e <= 1e-12, format!("{e:e}")));

    let layers: Vec<Matrix> = (0..4).map(|k| gaussian(3, 3, 10 + k)).collect();
    let fold = layers[1..].iter().fold(layers[0].clone(), |acc, w| matmul(w, &acc));
    let net4 = Network::new(layers, Activation::Linear).unwrap();
    let e = max_abs_diff(&network::end_to_end(&net4).unwrap(), &fold);
    out.push(derived("end_to_end_fold", e <= 1e-12, format!("{e:e}")));

    let y = gaussian(2, 6, 7);
    let (got, want) = (network::loss(&net, &x, &y).unwrap(), loss_oracle(net.layers(), Activation::Linear, &x, &y));
    out.push(derived("loss_elementwise_sum", (got - want).abs() <= 1e-12 * want.max(1.0), format!("{got} vs {want}")));

    let fd_net = Network::new((0..3).map(|k| gaussian(5, 5, 20 + k) / 5f64.sqrt()).collect(), Activation::Linear).unwrap();
    let (fx, fy) = (gaussian(5, 5, 23), gaussian(5, 5, 24));
    let e = fd_gradient_error(&fd_net, &fx, &fy);
    out.push(derived("gradient_finite_differences", e <= 1e-6, format!("{e:e}")));

    // 1×1 net, two momentum steps unrolled by hand.
    let (w1, w2, target, eta, mu) = (0.5f64, 0.8f64, 1.0f64, 0.1f64, 0.9f64);
    let grad = |a: f64, b: f64| ((a * b - target) * b, (a * b - target) * a);
    let (g1, g2) = grad(w1, w2);
    let (a1, b1) = (w1 - eta * g1, w2 - eta * g2);
    let (h1, h2) = grad(a1, b1);
    let (a2, b2) = (a1 - eta * h1 + mu * (a1 - w1), b1 - eta * h2 + mu * (b1 - w2));
    let net0 = Network::new(vec![Matrix::from_element(1, 1, w1), Matrix::from_element(1, 1, w2)], Activation::Linear).unwrap();
    let obj = Objective::regression(Matrix::identity(1, 1), Matrix::from_element(1, 1, target));
    let cfg = TrainConfig { eta, mu, ..TrainConfig::default() };
    let (_, g) = obj.loss_and_gradient(&net0).unwrap();
    let (n1, v1) = network::gd_step(&net0, &g, &cfg, None).unwrap();
    let (_, g) = obj.loss_and_gradient(&n1).unwrap();
    let (n2, _) = network::gd_step(&n1, &g, &cfg, v1.as_deref()).unwrap();
    let e = (n2.layer(1)[(0, 0)] - a2).abs().max((n2.layer(2)[(0, 0)] - b2).abs());
    out.push(derived("momentum_unrolled", e <= 1e-15, format!("{e:e}")));

    let net = Network::orthogonal(&[2, 2, 2], 0.1, Activation::Linear, Seed(8)).unwrap();
    let obj = Objective::regression(Matrix::identity(2, 2), Matrix::identity(2, 2));
    let tr = network::train(&net, &obj, &TrainConfig { eta: 0.1, max_iters: 20000, loss_tol: 1e-10, ..TrainConfig::default() }).unwrap();
    let monotone = tr.iterates.windows(2).all(|w| w[1].loss < w[0].loss);
    out.push(derived(
        "small_step_descent",
        monotone && tr.final_loss() < 1e-10,
        format!("monotone = {monotone}, final {:e}", tr.final_loss()),
    ));

    let net = Network::orthogonal(&[5, 5, 5, 5], 1.0, Activation::Linear, Seed(9)).unwrap();
    let obj = Objective::regression(gaussian(5, 50, 10) * 10.0, gaussian(5, 50, 11) * 10.0);
    let res = network::train(&net, &obj, &TrainConfig { eta: 10.0, max_iters: 1000, ..TrainConfig::default() });
    out.push(derived(
        "large_step_diverges",
        matches!(res, Err(plab::Error::Divergence { .. })),
        format!("{:?}", res.err()),
    ));

    let r = parsimony::rho_sequence(Case::LowRank, 0.5, 0.1, 0.0, 2, 1).unwrap();
    out.push(derived("rho_one_step", r.values[1] == 0.5 * (1.0 - 0.1 * 0.25), format!("{}", r.values[1])));

    let phi = lowrank_target(6, 1, 30);
    let net = Network::orthogonal(&[6, 6, 6], 0.3, Activation::Linear, Seed(31)).unwrap();
    let basis = parsimony::invariant_subspace(&net, &phi, 1).unwrap();
    let worst = lemma_oracle(&net, &basis, &phi, 0.3, Case::LowRank);
    out.push(derived("lemma_identities_low_rank", worst <= 1e-10, format!("{worst:e}")));

    let phi = gaussian(2, 8, 32);
    let net = Network::orthogonal(&[8, 8, 8, 2], 0.3, Activation::Linear, Seed(33)).unwrap();
    let basis = parsimony::invariant_subspace(&net, &phi, 2).unwrap();
    let worst = lemma_oracle(&net, &basis, &phi, 0.3, Case::Wide);
    out.push(derived("lemma_identities_wide", worst <= 1e-10, format!("{worst:e}")));

    let (d, steps) = (10, 20);
    let phi = lowrank_target(d, 2, 34) * 0.1;
    let net = Network::orthogonal(&[d; 4], 0.1, Activation::Linear, Seed(35)).unwrap();
    let basis = parsimony::invariant_subspace(&net, &phi, 2).unwrap();
    let obj = Objective::regression(Matrix::identity(d, d), phi.clone());
    let tr = network::train(&net, &obj, &TrainConfig { eta: 0.1, max_iters: steps, loss_tol: 1e-300, ..TrainConfig::default() }).unwrap();
    let rho = parsimony::rho_sequence(Case::LowRank, 0.1, 0.1, 0.0, 3, steps).unwrap().values[steps];
    let last = tr.final_network();
    let worst = (1..=3)
        .map(|l| {
            let b = parsimony::decompose_weight(last.layer(l), &basis.u[l - 1], &basis.v[l - 1], 2).unwrap();
            max_abs_diff(&b.tail, &(Matrix::identity(b.tail.nrows(), b.tail.ncols()) * rho))
        })
        .fold(0.0, f64::max);
    out.push(derived("tail_block_tracks_rho", worst <= 1e-8, format!("{worst:e}")));

    let phi = compression::generate_lowrank(20, 3, Seed(36), 1.0).unwrap();
    let big = tensor::svd(&phi).unwrap().s.iter().filter(|&&s| s > 1e-10 * 20.0).count();
    out.push(derived("lowrank_rank", big == 3, format!("{big} singular values above tolerance")));

    let phi = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let mut omega = Matrix::zeros(2, 2);
    omega[(1, 0)] = 1.0;
    let prob = CompletionProblem::new(phi.clone(), omega).unwrap();
    let mut w = phi.clone();
    w[(1, 0)] += 3.0;
    let l = compression::mc_loss(&w, &prob).unwrap();
    out.push(derived("masked_loss_hand", l == 4.5, format!("{l}")));

    let prob = CompletionProblem::generate(12, 2, 0.4, 1.0, Seed(37)).unwrap();
    let hidden = prob.omega().map(|o| 1.0 - o);
    let pert = gaussian(12, 12, 38).component_mul(&hidden);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..12 {
        for j in 0..12 {
            num += pert[(i, j)].powi(2);
            den += (hidden[(i, j)] * prob.phi()[(i, j)]).powi(2);
        }
    }
    let got = compression::recovery_error(&(prob.phi() + &pert), &prob).unwrap();
    let want = (num / den).sqrt();
    out.push(derived("recovery_relative_norm", (got - want).abs() <= 1e-12 * want, format!("{got} vs {want}")));

    let (d, r_hat, eps) = (20, 3, 1e-2);
    let prob = CompletionProblem::generate(d, r_hat, 1.0, 1.0, Seed(39)).unwrap();
    let net = Network::orthogonal(&[d; 4], eps, Activation::Linear, Seed(40)).unwrap();
    let cn = compression::build_compressed(&net, &prob.observed(), r_hat, 0.01).unwrap();
    let dist = (network::end_to_end(&net).unwrap() - compression::compressed_end_to_end(&cn)).norm();
    let want = eps.powi(3) * ((d - 2 * r_hat) as f64).sqrt();
    out.push(derived("compressed_residual_at_init", (dist - want).abs() <= 1e-12, format!("{dist:e} vs {want:e}")));

    let inner_ref = matmul(&matmul(&cn.u_out, &matmul(cn.inner.layer(3), &matmul(cn.inner.layer(2), cn.inner.layer(1)))), &cn.v_in.transpose());
    let e = max_abs_diff(&compression::compressed_end_to_end(&cn), &inner_ref);
    out.push(derived("compressed_product_chain", e <= 1e-15, format!("{e:e}")));

    let phi = gaussian(4, 4, 41);
    let prob = CompletionProblem::new(phi.clone(), Matrix::from_element(4, 4, 1.0)).unwrap();
    let inner = Network::orthogonal(&[4, 4, 4], 0.5, Activation::Linear, Seed(42)).unwrap();
    let cn = CompressedNetwork {
        u_out: Matrix::identity(4, 4),
        v_in: Matrix::identity(4, 4),
        inner: inner.clone(),
        gamma: 0.0,
        r_hat: 2,
    };
    let stepped = compression::compressed_gd_step(&cn, &prob, 0.1).unwrap();
    let g = network::gradient(&inner, &Matrix::identity(4, 4), &phi).unwrap();
    let (plain, _) = network::gd_step(&inner, &g, &TrainConfig { eta: 0.1, ..TrainConfig::default() }, None).unwrap();
    let e = (1..=2).map(|l| max_abs_diff(stepped.inner.layer(l), plain.layer(l))).fold(0.0, f64::max);
    out.push(derived("compressed_step_full_width", e <= 1e-14, format!("{e:e}")));

    let z = Matrix::from_row_slice(1, 4, &[1.0, 3.0, -1.0, -3.0]);
    let labels = [0, 0, 1, 1];
    let (sw, sb) = collapse::class_scatter(&z, &labels).unwrap();
    out.push(derived("scatter_hand", sw[(0, 0)] == 1.0 && sb[(0, 0)] == 4.0, format!("{} / {}", sw[(0, 0)], sb[(0, 0)])));
    let dm = collapse::separation_measure(&sw, &sb).unwrap();
    out.push(derived("separation_hand", dm == 0.25, format!("{dm}")));

    let data = collapse::make_classification_data(5, 10, 50, Seed(43)).unwrap();
    let net = Network::orthogonal(&[50, 50, 50, 50, 50, 50, 5], 0.5, Activation::Linear, Seed(44)).unwrap();
    let tr = network::train(
        &net,
        &Objective::regression(data.x.clone(), data.y.clone()),
        &TrainConfig { eta: 0.01, max_iters: 20000, loss_tol: 1e-8, snapshot_every: 20000, ..TrainConfig::default() },
    )
    .unwrap();
    let d = collapse::layerwise_separation(tr.final_network(), &data).unwrap();
    let vals: Vec<f64> = d.iter().map(|v| v.unwrap()).collect();
    let decreasing = vals.windows(2).all(|w| w[1] < w[0]);
    let r2 = r_squared_oracle(&vals);
    out.push(derived("trained_collapse_l6", decreasing && r2 >= 0.9, format!("decreasing = {decreasing}, R^2 = {r2:.4}")));

    let b = collapse::ratio_bound(5, 0.25);
    let want = 2.0 * (5f64.sqrt() + 1.0) * 0.0625;
    out.push(derived("ratio_bound_value", (b - want).abs() < 1e-15 && (b - 0.4045).abs() < 1e-4, format!("{b}")));

    let ceiling = collapse::epsilon_ceiling(10, 50, 5, 4);
    let third = 1.0 / (2.0 * (5f64.sqrt() + 1.0)).sqrt();
    out.push(derived("ceiling_rejects_half", ceiling <= third && 0.5 > ceiling, format!("ceiling {ceiling}, third term {third}")));

    let net = collapse::corollary_init(&[50, 50, 50, 50, 5], 5, 0.25, Seed(45)).unwrap();
    let (wl, wp) = (net.layer(4), net.layer(3));
    let res = (matmul(&wl.transpose(), wl) - matmul(wp, &wp.transpose())).norm();
    let tol = 0.0625 * 45f64.sqrt() * (1.0 + 1e-9);
    out.push(derived("corollary_balance_at_init", res <= tol, format!("{res} vs {tol}")));

    out.push(geometric_fit_check(&data));
    out
}

fn geometric_fit_check(_data: &ClassificationData) -> Derived {
    let q: f64 = 0.5;
    let mut rng = Seed(46).rng();
    let seq: Vec<f64> = (0..10)
        .map(|l| q.powi(l) * (0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp())
        .collect();
    let (slope, _) = collapse::loglinear_fit(&seq).unwrap();
    let rel = (slope - q.ln()).abs() / q.ln().abs();
    derived("noisy_geometric_slope", rel <= 0.1, format!("slope {slope}, relative error {rel:e}"))
}

/// Coefficient of determination of `ln v` against index, from the normal
/// equations.
pub fn r_squared_oracle(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let xs: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let icpt = (sy - slope * sx) / n;
    let mean = sy / n;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// The block identities at initialization, evaluated directly from the
/// basis columns with explicit products.
fn lemma_oracle(net: &Network, basis: &parsimony::ParsimonyBasis, phi: &Matrix, eps: f64, case: Case) -> f64 {
    let depth = net.depth();
    let layers = net.layers();
    let chain = |hi: usize, lo: usize| -> Option<Matrix> {
        (lo <= hi).then(|| layers[lo - 1..hi].iter().skip(1).fold(layers[lo - 1].clone(), |acc, w| matmul(w, &acc)))
    };
    let residual = match case {
        Case::LowRank => phi.clone(),
        Case::Wide => chain(depth, 1).unwrap() - phi,
    };
    let mut worst = 0.0f64;
    for l in basis.audited_layers() {
        let (u2, v2) = (basis.u2(l), basis.v2(l));
        let w = &layers[l - 1];
        worst = worst.max((matmul(w, &v2) - &u2 * eps).amax());
        worst = worst.max((matmul(&w.transpose(), &u2) - &v2 * eps).amax());
        let above = chain(depth, l + 1).map(|s| matmul(&s, &u2)).unwrap_or_else(|| u2.clone());
        worst = worst.max(match case {
            Case::LowRank => matmul(&phi.transpose(), &above).amax(),
            Case::Wide => above.amax(),
        });
        let below = chain(l - 1, 1).map(|p| matmul(&p.transpose(), &v2)).unwrap_or_else(|| v2.clone());
        worst = worst.max(matmul(&residual, &below).amax());
    }
    worst
}
