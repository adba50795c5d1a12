//! Deep feedforward networks, the squared loss, exact gradients and the GD family.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix, Seed, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::arg(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layers `W_1, …, W_L` with `W_l` of shape `d_l × d_{l−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Matrix>,
    activation: Activation,
}

impl Network {
    pub fn new(layers: Vec<Matrix>, activation: Activation) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::arg(format!(
                "a network needs at least 2 layers, got {}",
                layers.len()
            )));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(Error::arg(format!(
                    "layer {} is {}x{} but layer {} outputs {}",
                    l + 2,
                    pair[1].nrows(),
                    pair[1].ncols(),
                    l + 1,
                    pair[0].nrows()
                )));
            }
        }
        for (l, w) in layers.iter().enumerate() {
            tensor::ensure_finite(w, &format!("layer {}", l + 1))?;
        }
        Ok(Network { layers, activation })
    }

    /// ε-scaled orthogonal initialization for widths `dims = (d_x, d_1, …, d_y)`.
    pub fn orthogonal(dims: &[usize], eps: f64, activation: Activation, seed: Seed) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::arg("dims must describe at least 2 layers"));
        }
        let mut rng = seed.rng();
        let layers = dims
            .windows(2)
            .map(|w| tensor::random_orthogonal_with(w[1], w[0], eps, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers, activation)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    /// 1-indexed layer access matching the `W_l` convention.
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l - 1]
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].ncols()];
        d.extend(self.layers.iter().map(|w| w.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum()
    }

    /// `W_{hi:lo} = W_hi ⋯ W_lo` (1-indexed, inclusive); `None` when `hi < lo`,
    /// standing for the identity.
    pub fn product(&self, hi: usize, lo: usize) -> Option<Matrix> {
        if hi < lo {
            return None;
        }
        tensor::chain_product(&self.layers[lo - 1..hi])
    }
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|x| x.max(0.0))
}

fn check_rows(x: &Matrix, want: usize, what: &str) -> Result<()> {
    if x.nrows() != want {
        return Err(Error::arg(format!(
            "{what} has {} rows, network expects {want}",
            x.nrows()
        )));
    }
    Ok(())
}

/// Hidden representations `z⁰ = x, z¹, …, z^{L−1}`, with the activation applied
/// after every layer except the last.
pub fn features(net: &Network, x: &Matrix) -> Result<Vec<Matrix>> {
    check_rows(x, net.input_dim(), "input")?;
    let mut out = Vec::with_capacity(net.depth());
    out.push(x.clone());
    for w in &net.layers[..net.depth() - 1] {
        let a = w * out.last().unwrap();
        out.push(match net.activation {
            Activation::Linear => a,
            Activation::Relu => relu(&a),
        });
    }
    Ok(out)
}

pub fn forward(net: &Network, x: &Matrix) -> Result<Matrix> {
    let feats = features(net, x)?;
    Ok(net.layers.last().unwrap() * feats.last().unwrap())
}

/// `W_L ⋯ W_1` for linear networks.
pub fn end_to_end(net: &Network) -> Result<Matrix> {
    if net.activation != Activation::Linear {
        return Err(Error::Unsupported(
            "end-to-end matrix is only defined for linear networks".into(),
        ));
    }
    Ok(net.product(net.depth(), 1).unwrap())
}

fn check_targets(net: &Network, x: &Matrix, y: &Matrix) -> Result<()> {
    check_rows(x, net.input_dim(), "input")?;
    check_rows(y, net.output_dim(), "target")?;
    if x.ncols() != y.ncols() {
        return Err(Error::arg(format!(
            "input has {} samples but target has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `½‖f(X) − Y‖_F²`.
pub fn loss(net: &Network, x: &Matrix, y: &Matrix) -> Result<f64> {
    check_targets(net, x, y)?;
    Ok(0.5 * (forward(net, x)? - y).norm_squared())
}

pub fn gradient(net: &Network, x: &Matrix, y: &Matrix) -> Result<Vec<Matrix>> {
    check_targets(net, x, y)?;
    Ok(Objective::regression(x.clone(), y.clone())
        .loss_and_gradient(net)?
        .1)
}

/// Residual correlation `Γ`, dense or supported on an observation mask.
pub(crate) enum Correlation<'a> {
    Dense(&'a Matrix),
    Sparse(&'a SparseMatrix),
}

impl Correlation<'_> {
    /// `Γ · pᵀ`, or `Γ` itself when `p` is the identity.
    fn times_t(&self, p: Option<&Matrix>) -> Matrix {
        match (self, p) {
            (Correlation::Dense(g), None) => (*g).clone(),
            (Correlation::Dense(g), Some(p)) => *g * p.transpose(),
            (Correlation::Sparse(g), None) => g.to_dense(),
            (Correlation::Sparse(g), Some(p)) => g.mul_dense_t(p),
        }
    }
}

/// `∇_{W_l} = W_{L:l+1}ᵀ Γ W_{l−1:1}ᵀ` for every layer of a linear network.
pub(crate) fn chain_gradients(layers: &[Matrix], gamma: Correlation<'_>) -> Vec<Matrix> {
    let l_total = layers.len();
    // prefixes[k] = W_{k+1:1}
    let mut prefixes: Vec<Matrix> = Vec::with_capacity(l_total);
    for (k, w) in layers[..l_total - 1].iter().enumerate() {
        let p = if k == 0 { w.clone() } else { w * &prefixes[k - 1] };
        prefixes.push(p);
    }
    let mut grads = vec![Matrix::zeros(0, 0); l_total];
    let mut suffix: Option<Matrix> = None;
    for l in (1..=l_total).rev() {
        let right = gamma.times_t(if l == 1 { None } else { Some(&prefixes[l - 2]) });
        grads[l - 1] = match &suffix {
            Some(s) => s.tr_mul(&right),
            None => right,
        };
        if l > 1 {
            suffix = Some(match suffix {
                Some(s) => s * &layers[l - 1],
                None => layers[l - 1].clone(),
            });
        }
    }
    grads
}

/// Training objective: plain regression `½‖f(X) − Y‖²`, or the masked
/// completion loss `½‖Ω ⊙ (f(I) − Φ)‖²`.
#[derive(Debug, Clone)]
pub enum Objective {
    Regression { x: Matrix, y: Matrix },
    Masked {
        omega: Matrix,
        phi: Matrix,
        support: Vec<(usize, usize)>,
    },
}

impl Objective {
    pub fn regression(x: Matrix, y: Matrix) -> Self {
        Objective::Regression { x, y }
    }

    pub fn masked(omega: Matrix, phi: Matrix) -> Self {
        let support = SparseMatrix::support(&omega);
        Objective::Masked { omega, phi, support }
    }

    fn check(&self, net: &Network) -> Result<()> {
        match self {
            Objective::Regression { x, y } => check_targets(net, x, y),
            Objective::Masked { omega, phi, .. } => {
                if omega.shape() != phi.shape() {
                    return Err(Error::arg("mask and target shapes differ"));
                }
                if phi.shape() != (net.output_dim(), net.input_dim()) {
                    return Err(Error::arg(format!(
                        "target is {}x{} but network maps {} -> {}",
                        phi.nrows(),
                        phi.ncols(),
                        net.input_dim(),
                        net.output_dim()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn loss(&self, net: &Network) -> Result<f64> {
        self.check(net)?;
        Ok(match (self, net.activation) {
            (Objective::Regression { x, y }, _) => 0.5 * (forward(net, x)? - y).norm_squared(),
            (Objective::Masked { omega, phi, .. }, Activation::Linear) => {
                0.5 * omega.component_mul(&(end_to_end(net)? - phi)).norm_squared()
            }
            (Objective::Masked { omega, phi, .. }, Activation::Relu) => {
                let eye = Matrix::identity(net.input_dim(), net.input_dim());
                0.5 * omega.component_mul(&(forward(net, &eye)? - phi)).norm_squared()
            }
        })
    }

    pub fn loss_and_gradient(&self, net: &Network) -> Result<(f64, Vec<Matrix>)> {
        self.check(net)?;
        match net.activation {
            Activation::Linear => {
                let e = end_to_end(net)?;
                match self {
                    Objective::Regression { x, y } => {
                        let r = &e * x - y;
                        let gamma = &r * x.transpose();
                        let grads = chain_gradients(&net.layers, Correlation::Dense(&gamma));
                        Ok((0.5 * r.norm_squared(), grads))
                    }
                    Objective::Masked { phi, support, .. } => {
                        let r = SparseMatrix {
                            nrows: phi.nrows(),
                            ncols: phi.ncols(),
                            entries: support
                                .iter()
                                .map(|&(i, j)| (i, j, e[(i, j)] - phi[(i, j)]))
                                .collect(),
                        };
                        let grads = chain_gradients(&net.layers, Correlation::Sparse(&r));
                        Ok((0.5 * r.norm_squared(), grads))
                    }
                }
            }
            Activation::Relu => {
                let (x, residual_of): (Matrix, Box<dyn Fn(Matrix) -> Matrix + '_>) = match self {
                    Objective::Regression { x, y } => (x.clone(), Box::new(move |out| out - y)),
                    Objective::Masked { omega, phi, .. } => (
                        Matrix::identity(net.input_dim(), net.input_dim()),
                        Box::new(move |out| omega.component_mul(&(out - phi))),
                    ),
                };
                Ok(backprop(net, &x, residual_of))
            }
        }
    }
}

fn backprop(net: &Network, x: &Matrix, residual_of: impl Fn(Matrix) -> Matrix) -> (f64, Vec<Matrix>) {
    let depth = net.depth();
    let mut pre = Vec::with_capacity(depth);
    let mut post = vec![x.clone()];
    for (l, w) in net.layers.iter().enumerate() {
        let a = w * post.last().unwrap();
        if l + 1 < depth {
            post.push(relu(&a));
        }
        pre.push(a);
    }
    let mut delta = residual_of(pre.pop().unwrap());
    let loss = 0.5 * delta.norm_squared();
    let mut grads = vec![Matrix::zeros(0, 0); depth];
    for l in (0..depth).rev() {
        grads[l] = &delta * post[l].transpose();
        if l > 0 {
            let back = net.layers[l].tr_mul(&delta);
            // derivative of max(0, ·) at exactly 0 taken as 0
            delta = back.zip_map(&pre[l - 1], |g, a| if a > 0.0 { g } else { 0.0 });
        }
    }
    (loss, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub max_iters: usize,
    pub loss_tol: f64,
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.1,
            lambda: 0.0,
            mu: 0.0,
            max_iters: 10_000,
            loss_tol: 1e-10,
            snapshot_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::arg(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 1), got {}", self.mu));
        }
        if self.eta * self.lambda >= 1.0 {
            return bad("eta * lambda must be below 1".into());
        }
        if self.max_iters == 0 || self.snapshot_every == 0 {
            return bad("max_iters and snapshot_every must be positive".into());
        }
        if !(self.loss_tol > 0.0) {
            return bad(format!("loss_tol must be positive, got {}", self.loss_tol));
        }
        Ok(())
    }
}

/// One GD step `W ← (1 − ηλ)W − η∇ + μ·v`, where `v` is the previous
/// displacement. Returns the new network and its displacement when `μ > 0`.
pub fn gd_step(
    net: &Network,
    grads: &[Matrix],
    cfg: &TrainConfig,
    velocity: Option<&[Matrix]>,
) -> Result<(Network, Option<Vec<Matrix>>)> {
    if grads.len() != net.depth() {
        return Err(Error::arg(format!(
            "{} gradients for {} layers",
            grads.len(),
            net.depth()
        )));
    }
    if let Some(v) = velocity {
        if v.len() != net.depth() {
            return Err(Error::arg("velocity does not match layer count"));
        }
    }
    let decay = 1.0 - cfg.eta * cfg.lambda;
    let mut layers = Vec::with_capacity(net.depth());
    let mut moves = Vec::new();
    for (l, (w, g)) in net.layers.iter().zip(grads).enumerate() {
        if w.shape() != g.shape() {
            return Err(Error::arg(format!(
                "gradient {} is {:?}, layer is {:?}",
                l + 1,
                g.shape(),
                w.shape()
            )));
        }
        let mut next = w * decay - g * cfg.eta;
        if let Some(v) = velocity {
            if v[l].shape() != w.shape() {
                return Err(Error::arg(format!("velocity {} has wrong shape", l + 1)));
            }
            next += &v[l] * cfg.mu;
        }
        if cfg.mu > 0.0 {
            moves.push(&next - w);
        }
        layers.push(next);
    }
    let out = Network {
        layers,
        activation: net.activation,
    };
    Ok((out, (cfg.mu > 0.0).then_some(moves)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub iterates: Vec<TracePoint>,
    pub snapshots: Vec<(usize, Network)>,
    pub wall_time_seconds: f64,
    /// Iteration at which the loss first dropped to `loss_tol`, if it did.
    pub converged_at: Option<usize>,
}

impl TrainTrace {
    pub fn final_network(&self) -> &Network {
        &self.snapshots.last().expect("trace always holds t = 0").1
    }

    pub fn final_loss(&self) -> f64 {
        self.iterates.last().map(|p| p.loss).unwrap_or(f64::NAN)
    }

    /// CSV with columns `iter,loss,wall_time`, keeping every `stride`-th row
    /// plus the last one.
    pub fn to_csv(&self, stride: usize) -> String {
        use crate::tensor::io::fmt_f64;
        let mut out = String::from("iter,loss,wall_time\n");
        let n = self.iterates.len();
        for (k, p) in self.iterates.iter().enumerate() {
            if k % stride.max(1) == 0 || k + 1 == n {
                out.push_str(&format!(
                    "{},{},{}\n",
                    p.iter,
                    fmt_f64(p.loss),
                    fmt_f64(p.wall_time)
                ));
            }
        }
        out
    }
}

pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Full-batch GD until the loss reaches `loss_tol` or `max_iters` steps ran.
pub fn train(net: &Network, objective: &Objective, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let start = Instant::now();
    let mut current = net.clone();
    let mut velocity: Option<Vec<Matrix>> = None;
    let mut trace = TrainTrace {
        iterates: Vec::new(),
        snapshots: Vec::new(),
        wall_time_seconds: 0.0,
        converged_at: None,
    };
    for t in 0..=cfg.max_iters {
        let (loss, grads) = objective.loss_and_gradient(&current)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { iteration: t, loss });
        }
        trace.iterates.push(TracePoint {
            iter: t,
            loss,
            wall_time: start.elapsed().as_secs_f64(),
        });
        let done = loss <= cfg.loss_tol || t == cfg.max_iters;
        if done || t % cfg.snapshot_every == 0 {
            trace.snapshots.push((t, current.clone()));
        }
        if done {
            if loss <= cfg.loss_tol {
                trace.converged_at = Some(t);
            }
            break;
        }
        let (next, v) = gd_step(&current, &grads, cfg, velocity.as_deref())?;
        current = next;
        velocity = v;
    }
    trace.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PLABN";

/// Checkpoint layout: `PLABN`, then little-endian u64 `L`, the `L + 1` widths,
/// one activation byte (0 linear, 1 relu), the u64 iteration index, and the
/// `L` layers in the binary matrix format.
pub fn write_checkpoint<W: std::io::Write>(w: &mut W, net: &Network, iteration: u64) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(net.depth() as u64).to_le_bytes())?;
    for d in net.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&[match net.activation {
        Activation::Linear => 0u8,
        Activation::Relu => 1u8,
    }])?;
    w.write_all(&iteration.to_le_bytes())?;
    for layer in &net.layers {
        tensor::io::write_binary(w, layer)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: std::io::Read>(r: &mut R) -> Result<(Network, u64)> {
    let bad = |msg: String| Error::Format {
        what: "network checkpoint",
        msg,
    };
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    let depth = tensor::io::read_u64(r)? as usize;
    if !(2..=10_000).contains(&depth) {
        return Err(bad(format!("implausible depth {depth}")));
    }
    let dims = (0..=depth)
        .map(|_| tensor::io::read_u64(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(|e| bad(e.to_string()))?;
    let activation = match tag[0] {
        0 => Activation::Linear,
        1 => Activation::Relu,
        t => return Err(bad(format!("unknown activation tag {t}"))),
    };
    let iteration = tensor::io::read_u64(r)?;
    let layers = (0..depth)
        .map(|_| tensor::io::read_binary(r))
        .collect::<Result<Vec<_>>>()?;
    let net = Network::new(layers, activation)?;
    if net.dims() != dims {
        return Err(bad(format!("header dims {dims:?} disagree with layers {:?}", net.dims())));
    }
    Ok((net, iteration))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_vec(v.to_vec()))
    }

    #[test]
    fn identity_network_is_identity_map() {
        let net = Network::new(vec![Matrix::identity(3, 3); 3], Activation::Linear).unwrap();
        let x = gaussian(3, 4, &mut Seed(1).rng());
        assert_eq!(forward(&net, &x).unwrap(), x);
    }

    #[test]
    fn relu_kills_negated_positives() {
        let net = Network::new(
            vec![-Matrix::identity(2, 2), Matrix::identity(2, 2)],
            Activation::Relu,
        )
        .unwrap();
        let x = Matrix::from_element(2, 3, 1.5);
        assert_eq!(forward(&net, &x).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn end_to_end_examples() {
        let net = Network::new(vec![diag(&[2.0]), diag(&[3.0])], Activation::Linear).unwrap();
        assert_eq!(end_to_end(&net).unwrap(), diag(&[6.0]));
        let mut rng = Seed(2).rng();
        let net = Network::new(
            vec![gaussian(3, 3, &mut rng), Matrix::zeros(3, 3), gaussian(3, 3, &mut rng)],
            Activation::Linear,
        )
        .unwrap();
        assert_eq!(end_to_end(&net).unwrap(), Matrix::zeros(3, 3));
        let relu = Network::new(net.into_layers(), Activation::Relu).unwrap();
        assert!(matches!(end_to_end(&relu), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rejects_single_layer_and_mismatched_dims() {
        assert!(Network::new(vec![Matrix::identity(2, 2)], Activation::Linear).is_err());
        assert!(Network::new(vec![Matrix::zeros(3, 2), Matrix::zeros(2, 2)], Activation::Linear).is_err());
    }

    #[test]
    fn scalar_loss() {
        let net = Network::new(vec![diag(&[1.0]), diag(&[1.0])], Activation::Linear).unwrap();
        let x = diag(&[1.0]);
        let y = diag(&[-1.0]);
        assert_eq!(loss(&net, &x, &y).unwrap(), 2.0);
        assert_eq!(loss(&net, &x, &x).unwrap(), 0.0);
        assert!(loss(&net, &Matrix::zeros(2, 1), &y).is_err());
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let net = Network::orthogonal(&[4, 4, 4], 1.0, Activation::Linear, Seed(3)).unwrap();
        let x = gaussian(4, 6, &mut Seed(4).rng());
        let y = forward(&net, &x).unwrap();
        for g in gradient(&net, &x, &y).unwrap() {
            assert!(g.norm() < 1e-12);
        }
    }

    #[test]
    fn decay_only_step_scales_weights() {
        let net = Network::orthogonal(&[3, 3, 3], 0.5, Activation::Linear, Seed(5)).unwrap();
        let zeros = vec![Matrix::zeros(3, 3); 2];
        let cfg = TrainConfig {
            eta: 0.1,
            lambda: 0.5,
            ..TrainConfig::default()
        };
        let (next, v) = gd_step(&net, &zeros, &cfg, None).unwrap();
        assert!(v.is_none());
        for (a, b) in next.layers().iter().zip(net.layers()) {
            assert_eq!(*a, b * 0.95);
        }
        let still = TrainConfig {
            eta: 1e-300,
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let g = vec![Matrix::zeros(3, 3); 2];
        assert_eq!(gd_step(&net, &g, &still, None).unwrap().0, net);
    }

    #[test]
    fn gd_step_rejects_shape_mismatch() {
        let net = Network::orthogonal(&[3, 3, 3], 0.5, Activation::Linear, Seed(5)).unwrap();
        let g = vec![Matrix::zeros(3, 3), Matrix::zeros(2, 3)];
        assert!(gd_step(&net, &g, &TrainConfig::default(), None).is_err());
        assert!(gd_step(&net, &g[..1], &TrainConfig::default(), None).is_err());
    }

    #[test]
    fn train_returns_immediately_when_already_below_tolerance() {
        let net = Network::orthogonal(&[2, 2, 2], 0.1, Activation::Linear, Seed(6)).unwrap();
        let cfg = TrainConfig {
            loss_tol: 1e6,
            ..TrainConfig::default()
        };
        let obj = Objective::regression(Matrix::identity(2, 2), Matrix::identity(2, 2));
        let trace = train(&net, &obj, &cfg).unwrap();
        assert_eq!(trace.snapshots.len(), 1);
        assert_eq!(trace.snapshots[0].0, 0);
        assert_eq!(trace.converged_at, Some(0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { eta: 0.0, ..Default::default() },
            TrainConfig { lambda: -1.0, ..Default::default() },
            TrainConfig { mu: 1.0, ..Default::default() },
            TrainConfig { eta: 1.0, lambda: 1.0, ..Default::default() },
            TrainConfig { max_iters: 0, ..Default::default() },
            TrainConfig { loss_tol: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::orthogonal(&[4, 3, 3, 2], 0.7, Activation::Relu, Seed(8)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, 42).unwrap();
        let (back, it) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(it, 42);
        buf[0] = b'Q';
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
