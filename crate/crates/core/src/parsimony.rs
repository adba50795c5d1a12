//! Invariant singular subspaces of GD iterates from orthogonal initialization:
//! the trailing-singular-value recursions, the constructive basis, block
//! decomposition and trajectory audits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{end_to_end, Activation, Network};
use crate::tensor::{self, Matrix};

/// Largest `‖WᵀW/ε² − I‖_F` accepted as an orthogonal initialization.
pub const INIT_TOL: f64 = 1e-8;

/// Relative width (w.r.t. the largest singular value) of the band around the
/// predicted trailing value used to collect its singular subspace.
pub const CLUSTER_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Square network with a low-rank target cross-correlation.
    LowRank,
    /// Output dimension much smaller than the input dimension.
    Wide,
}

/// Common trailing singular value of every in-scope layer at each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSequence {
    pub case: Case,
    pub values: Vec<f64>,
    pub eps: f64,
    pub eta: f64,
    pub lambda: f64,
    pub depth: usize,
    pub mu: f64,
}

impl RhoSequence {
    pub fn at(&self, t: usize) -> Option<f64> {
        self.values.get(t).copied()
    }
}

pub fn rho_sequence(case: Case, eps: f64, eta: f64, lambda: f64, depth: usize, steps: usize) -> Result<RhoSequence> {
    rho_sequence_momentum(case, eps, eta, lambda, depth, 0.0, steps)
}

/// Trailing-value recursion under GD with momentum `mu`:
/// `ρ(t) = ρ(t−1)(1 − ηλ − η·g(ρ(t−1))) + μ(ρ(t−1) − ρ(t−2))`, with
/// `g(ρ) = ρ^{2(L−1)}` in the low-rank case and `g = 0` in the wide case. The
/// first step carries no momentum. With `mu = 0` the wide case is evaluated in
/// closed form `ε(1 − ηλ)^t`.
pub fn rho_sequence_momentum(
    case: Case,
    eps: f64,
    eta: f64,
    lambda: f64,
    depth: usize,
    mu: f64,
    steps: usize,
) -> Result<RhoSequence> {
    if !(eps > 0.0 && eps.is_finite()) || !(eta >= 0.0) || !(lambda >= 0.0) || depth < 2 {
        return Err(Error::arg(format!(
            "need eps > 0, eta >= 0, lambda >= 0, depth >= 2 (got {eps}, {eta}, {lambda}, {depth})"
        )));
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::arg(format!("momentum must lie in [0, 1), got {mu}")));
    }
    let decay = 1.0 - eta * lambda;
    let power = 2 * (depth as i32 - 1);
    let mut values = Vec::with_capacity(steps + 1);
    values.push(eps);
    for t in 1..=steps {
        let prev = values[t - 1];
        let next = match case {
            Case::Wide if mu == 0.0 => eps * decay.powi(t as i32),
            Case::Wide => prev * decay,
            Case::LowRank => prev * (decay - eta * prev.powi(power)),
        } + if t >= 2 { mu * (prev - values[t - 2]) } else { 0.0 };
        if !next.is_finite() || next < 0.0 {
            return Err(Error::DegenerateRecursion { step: t, value: next });
        }
        values.push(next);
    }
    Ok(RhoSequence {
        case,
        values,
        eps,
        eta,
        lambda,
        depth,
        mu,
    })
}

/// Orthogonal bases `U_l = [U_{l,1} U_{l,2}]`, `V_l = [V_{l,1} V_{l,2}]` whose
/// trailing `m` columns span subspaces left untouched by GD.
#[derive(Debug, Clone)]
pub struct ParsimonyBasis {
    pub case: Case,
    pub r_hat: usize,
    pub m: usize,
    pub eps: f64,
    /// `U_1..U_L` (low-rank case) or `U_1..U_{L−1}` (wide case).
    pub u: Vec<Matrix>,
    /// `V_1..V_L`.
    pub v: Vec<Matrix>,
}

impl ParsimonyBasis {
    pub fn inner_dim(&self) -> usize {
        2 * self.r_hat
    }

    /// Layers whose trailing singular values follow the recursion.
    pub fn audited_layers(&self) -> std::ops::RangeInclusive<usize> {
        match self.case {
            Case::LowRank => 1..=self.v.len(),
            Case::Wide => 1..=self.v.len() - 1,
        }
    }

    pub fn u1(&self, l: usize) -> Matrix {
        self.u[l - 1].columns(0, self.inner_dim()).into_owned()
    }

    pub fn u2(&self, l: usize) -> Matrix {
        let u = &self.u[l - 1];
        u.columns(self.inner_dim(), u.ncols() - self.inner_dim()).into_owned()
    }

    pub fn v1(&self, l: usize) -> Matrix {
        self.v[l - 1].columns(0, self.inner_dim()).into_owned()
    }

    pub fn v2(&self, l: usize) -> Matrix {
        let v = &self.v[l - 1];
        v.columns(self.inner_dim(), v.ncols() - self.inner_dim()).into_owned()
    }
}

fn detect_case(net: &Network) -> Result<Case> {
    let dims = net.dims();
    let d = dims[0];
    let l = dims.len() - 1;
    if dims.iter().all(|&k| k == d) {
        Ok(Case::LowRank)
    } else if dims[..l].iter().all(|&k| k == d) && dims[l] < d {
        Ok(Case::Wide)
    } else {
        Err(Error::arg(format!(
            "widths {dims:?} are neither all equal nor equal-with-narrower-output"
        )))
    }
}

/// Infers `ε` from the first layer and checks every layer is ε-orthogonal.
pub fn init_scale(net: &Network) -> Result<f64> {
    let w1 = net.layer(1);
    let k = w1.nrows().min(w1.ncols()) as f64;
    let eps = (w1.norm_squared() / k).sqrt();
    if !(eps > 0.0) {
        return Err(Error::InvalidInitialization {
            layer: 1,
            residual: f64::INFINITY,
        });
    }
    for (l, w) in net.layers().iter().enumerate() {
        let residual = tensor::orthogonality_residual(w, eps);
        if residual > INIT_TOL {
            return Err(Error::InvalidInitialization { layer: l + 1, residual });
        }
    }
    Ok(eps)
}

fn top_directions(m: &Matrix, k: usize) -> Result<(Matrix, Matrix)> {
    let t = tensor::svd(m)?;
    let k = t.rank().min(k);
    Ok((t.u.columns(0, k).into_owned(), t.v.columns(0, k).into_owned()))
}

/// Orthonormalizes `candidates`, pads with complement directions up to `k`
/// columns and returns `[V_{1,1} V_{1,2}]`.
fn split_input_space(candidates: &Matrix, k: usize) -> Result<Matrix> {
    // candidates mix unit vectors with ε^L-scaled ones; equalize before the SVD
    let mut cand = candidates.clone();
    for mut c in cand.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    let mut head = tensor::orthonormal_span(&cand)?;
    if head.ncols() > k {
        head = head.columns(0, k).into_owned();
    }
    if head.ncols() < k {
        let extra = tensor::orthogonal_complement(&head)?;
        head = tensor::hcat(&head, &extra.columns(0, k - head.ncols()).into_owned());
    }
    let tail = tensor::orthogonal_complement(&head)?;
    Ok(tensor::hcat(&head, &tail))
}

fn propagate(net: &Network, v1: Matrix, eps: f64, count: usize) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut us = Vec::with_capacity(count);
    let mut vs = vec![v1];
    for l in 1..=count {
        let u = net.layer(l) * vs.last().unwrap() / eps;
        if l < net.depth() {
            vs.push(u.clone());
        }
        us.push(u);
    }
    (us, vs)
}

fn check_linear(net: &Network) -> Result<()> {
    if net.activation() != Activation::Linear {
        return Err(Error::Unsupported(
            "invariant subspaces are defined for linear networks".into(),
        ));
    }
    Ok(())
}

/// Constructive invariant basis for an ε-orthogonally initialized linear
/// network trained on whitened data whose cross-correlation is `phi`
/// (`d_y × d_x`).
///
/// The leading input block spans `row(Φ) + W_{L:1}(0)ᵀ col(Φ)` (top `r_hat`
/// directions of each when `Φ` has higher rank); the rest of the basis follows
/// from `U_l = W_l(0) V_l / ε` and `V_{l+1} = U_l`. For wide networks the
/// leading block is `row(Γ(0)) + row(W_{L:1}(0))` with `Γ(0) = W_{L:1}(0) − Φ`
/// and `r_hat` must equal the output dimension.
pub fn invariant_subspace(net0: &Network, phi: &Matrix, r_hat: usize) -> Result<ParsimonyBasis> {
    check_linear(net0)?;
    if r_hat == 0 {
        return Err(Error::arg("rank estimate must be positive"));
    }
    if phi.shape() != (net0.output_dim(), net0.input_dim()) {
        return Err(Error::arg(format!(
            "target is {:?}, network maps {} -> {}",
            phi.shape(),
            net0.input_dim(),
            net0.output_dim()
        )));
    }
    match detect_case(net0)? {
        Case::LowRank => {
            let d = net0.input_dim();
            let m = d as i64 - 2 * r_hat as i64;
            if m <= 0 {
                return Err(Error::InsufficientMargin { m });
            }
            let eps = init_scale(net0)?;
            let e2e = end_to_end(net0)?;
            let (left, right) = top_directions(phi, r_hat)?;
            let cand = tensor::hcat(&right, &e2e.tr_mul(&left));
            let v1 = split_input_space(&cand, 2 * r_hat)?;
            let (u, v) = propagate(net0, v1, eps, net0.depth());
            Ok(ParsimonyBasis {
                case: Case::LowRank,
                r_hat,
                m: m as usize,
                eps,
                u,
                v,
            })
        }
        Case::Wide => {
            if r_hat != net0.output_dim() {
                return Err(Error::arg(format!(
                    "wide networks need r_hat = output dimension {}, got {r_hat}",
                    net0.output_dim()
                )));
            }
            let gamma0 = end_to_end(net0)? - phi;
            invariant_subspace_from_residual(net0, &gamma0)
        }
    }
}

/// Wide-case basis from an explicit initial residual correlation
/// `Γ(0) = (W_{L:1}(0)X − Y)Xᵀ`, which also covers non-whitened inputs.
pub fn invariant_subspace_from_residual(net0: &Network, gamma0: &Matrix) -> Result<ParsimonyBasis> {
    check_linear(net0)?;
    if detect_case(net0)? != Case::Wide {
        return Err(Error::arg("residual-based construction needs a wide network"));
    }
    let (d_x, d_y) = (net0.input_dim(), net0.output_dim());
    if gamma0.shape() != (d_y, d_x) {
        return Err(Error::arg("residual correlation has the wrong shape"));
    }
    let m = d_x as i64 - 2 * d_y as i64;
    if m <= 0 {
        return Err(Error::InsufficientMargin { m });
    }
    let eps = init_scale(net0)?;
    let e2e = end_to_end(net0)?;
    let (_, right) = top_directions(gamma0, d_y)?;
    let cand = tensor::hcat(&right, &e2e.transpose());
    let v1 = split_input_space(&cand, 2 * d_y)?;
    let (u, v) = propagate(net0, v1, eps, net0.depth() - 1);
    Ok(ParsimonyBasis {
        case: Case::Wide,
        r_hat: d_y,
        m: m as usize,
        eps,
        u,
        v,
    })
}

#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub inner: Matrix,
    pub off_diag_norm: f64,
    pub tail: Matrix,
}

/// Splits `UᵀWV` into its leading `2r̂ × 2r̂` block, the Frobenius norm of the
/// two off-diagonal blocks, and the trailing block.
pub fn decompose_weight(w: &Matrix, u: &Matrix, v: &Matrix, r_hat: usize) -> Result<BlockDecomposition> {
    let k = 2 * r_hat;
    if u.nrows() != w.nrows() || v.nrows() != w.ncols() {
        return Err(Error::arg(format!(
            "bases {:?}/{:?} do not fit a {:?} weight",
            u.shape(),
            v.shape(),
            w.shape()
        )));
    }
    if k > u.ncols() || k > v.ncols() {
        return Err(Error::arg(format!("inner block {k} exceeds basis size")));
    }
    let c = u.tr_mul(&(w * v));
    let (p, q) = c.shape();
    let off = c.view((0, k), (k, q - k)).norm_squared() + c.view((k, 0), (p - k, k)).norm_squared();
    Ok(BlockDecomposition {
        inner: c.view((0, 0), (k, k)).into_owned(),
        off_diag_norm: off.sqrt(),
        tail: c.view((k, k), (p - k, q - k)).into_owned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAudit {
    pub layer: usize,
    /// The `m` singular values closest to the prediction, ascending.
    pub trailing: Vec<f64>,
    pub rho_predicted: f64,
    pub rho_residual: f64,
    pub drift_left: f64,
    pub drift_right: f64,
    pub off_diag_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsimonyFrame {
    pub iteration: usize,
    pub layers: Vec<LayerAudit>,
}

/// Audits one layer: matches the `m` singular values nearest to `rho` and
/// measures how far the reference trailing subspaces sit from the singular
/// subspace belonging to the band around `rho`.
pub fn audit_layer(
    w: &Matrix,
    u_ref: &Matrix,
    v_ref: &Matrix,
    rho: f64,
    r_hat: usize,
) -> Result<LayerAudit> {
    let m = v_ref.ncols() - 2 * r_hat;
    let t = tensor::svd(w)?;
    let mut order: Vec<usize> = (0..t.s.len()).collect();
    order.sort_by(|&a, &b| (t.s[a] - rho).abs().total_cmp(&(t.s[b] - rho).abs()));
    let mut trailing: Vec<f64> = order.iter().take(m).map(|&i| t.s[i]).collect();
    trailing.sort_by(f64::total_cmp);
    let rho_residual = trailing.iter().map(|s| (s - rho).abs()).fold(0.0, f64::max);

    let band = CLUSTER_TOL * t.s[0].max(rho);
    let cluster: Vec<usize> = (0..t.s.len()).filter(|&i| (t.s[i] - rho).abs() <= band).collect();
    let pick = |basis: &Matrix| Matrix::from_fn(basis.nrows(), cluster.len(), |i, j| basis[(i, cluster[j])]);
    let (uc, vc) = (pick(&t.u), pick(&t.v));
    let u2 = u_ref.columns(2 * r_hat, m).into_owned();
    let v2 = v_ref.columns(2 * r_hat, m).into_owned();
    let blocks = decompose_weight(w, u_ref, v_ref, r_hat)?;
    Ok(LayerAudit {
        layer: 0,
        trailing,
        rho_predicted: rho,
        rho_residual,
        drift_left: tensor::containment_distance(&u2, &uc),
        drift_right: tensor::containment_distance(&v2, &vc),
        off_diag_norm: blocks.off_diag_norm,
    })
}

pub fn audit_trajectory(
    snapshots: &[(usize, Network)],
    basis: &ParsimonyBasis,
    rho: &RhoSequence,
) -> Result<Vec<ParsimonyFrame>> {
    let mut frames = Vec::with_capacity(snapshots.len());
    for (t, net) in snapshots {
        if net.depth() != basis.v.len() {
            return Err(Error::arg(format!(
                "snapshot at {t} has {} layers, basis has {}",
                net.depth(),
                basis.v.len()
            )));
        }
        let r = rho
            .at(*t)
            .ok_or_else(|| Error::arg(format!("no predicted value for iteration {t}")))?;
        let mut layers = Vec::new();
        for l in basis.audited_layers() {
            let w = net.layer(l);
            if w.shape() != (basis.u[l - 1].nrows(), basis.v[l - 1].nrows()) {
                return Err(Error::arg(format!("layer {l} at {t} does not match the basis")));
            }
            let mut audit = audit_layer(w, &basis.u[l - 1], &basis.v[l - 1], r, basis.r_hat)?;
            audit.layer = l;
            layers.push(audit);
        }
        frames.push(ParsimonyFrame { iteration: *t, layers });
    }
    Ok(frames)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub frames: usize,
    pub max_rho_residual: f64,
    pub max_drift_left: f64,
    pub max_drift_right: f64,
    pub max_off_diag_norm: f64,
}

impl AuditSummary {
    pub fn max_drift(&self) -> f64 {
        self.max_drift_left.max(self.max_drift_right)
    }
}

pub fn summarize(frames: &[ParsimonyFrame]) -> AuditSummary {
    let mut s = AuditSummary {
        frames: frames.len(),
        ..Default::default()
    };
    for a in frames.iter().flat_map(|f| &f.layers) {
        s.max_rho_residual = s.max_rho_residual.max(a.rho_residual);
        s.max_drift_left = s.max_drift_left.max(a.drift_left);
        s.max_drift_right = s.max_drift_right.max(a.drift_right);
        s.max_off_diag_norm = s.max_off_diag_norm.max(a.off_diag_norm);
    }
    s
}

pub fn frames_to_csv(frames: &[ParsimonyFrame]) -> String {
    use crate::tensor::io::fmt_f64;
    let mut out = String::from("t,layer,rho_predicted,rho_residual,drift_left,drift_right\n");
    for f in frames {
        for a in &f.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.iteration,
                a.layer,
                fmt_f64(a.rho_predicted),
                fmt_f64(a.rho_residual),
                fmt_f64(a.drift_left),
                fmt_f64(a.drift_right)
            ));
        }
    }
    out
}

/// Worst residuals of the four block identities, each maximized over layers:
/// `a = ‖W_l V_{l,2} − ρU_{l,2}‖`, `b = ‖W_lᵀU_{l,2} − ρV_{l,2}‖`, and the
/// annihilation conditions `c`, `d` (through `Φ` in the low-rank case, through
/// `W_{L:l+1}` and `Γ(t) = W_{L:1}(t) − Φ` in the wide case).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaResiduals {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl LemmaResiduals {
    pub fn max(&self) -> f64 {
        self.a.max(self.b).max(self.c).max(self.d)
    }
}

pub fn lemma_residuals(net: &Network, basis: &ParsimonyBasis, phi: &Matrix, rho: f64) -> Result<LemmaResiduals> {
    check_linear(net)?;
    let depth = net.depth();
    if depth != basis.v.len() {
        return Err(Error::arg("network depth does not match basis"));
    }
    let mut r = LemmaResiduals::default();
    for l in basis.audited_layers() {
        let (u2, v2) = (basis.u2(l), basis.v2(l));
        let w = net.layer(l);
        r.a = r.a.max((w * &v2 - &u2 * rho).norm());
        r.b = r.b.max((w.tr_mul(&u2) - &v2 * rho).norm());
        let above = match net.product(depth, l + 1) {
            Some(s) => s * &u2,
            None => u2.clone(),
        };
        r.c = r.c.max(match basis.case {
            Case::LowRank => phi.tr_mul(&above).norm(),
            Case::Wide => above.norm(),
        });
    }
    let gamma = match basis.case {
        Case::LowRank => phi.clone(),
        Case::Wide => end_to_end(net)? - phi,
    };
    for l in 1..=depth {
        let v2 = basis.v2(l);
        let below = match net.product(l - 1, 1) {
            Some(p) => p.tr_mul(&v2),
            None => v2,
        };
        r.d = r.d.max((&gamma * below).norm());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian, Seed};

    #[test]
    fn rho_constant_without_updates() {
        let s = rho_sequence(Case::LowRank, 0.1, 0.0, 0.0, 3, 100).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.1));
        assert_eq!(s.values.len(), 101);
    }

    #[test]
    fn rho_wide_closed_form() {
        let s = rho_sequence(Case::Wide, 1e-3, 1.0, 0.1, 3, 3).unwrap();
        let want = [1e-3, 9e-4, 8.1e-4, 7.29e-4];
        for (a, b) in s.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-18, "{a} vs {b}");
        }
    }

    #[test]
    fn rho_low_rank_single_step() {
        let s = rho_sequence(Case::LowRank, 0.5, 0.1, 0.0, 2, 1).unwrap();
        assert!((s.values[1] - 0.5 * (1.0 - 0.1 * 0.25)).abs() < 1e-16);
        assert!((s.values[1] - 0.4875).abs() < 1e-15);
    }

    #[test]
    fn rho_degenerate_parameters() {
        assert!(matches!(
            rho_sequence(Case::LowRank, 2.0, 1.0, 0.0, 2, 5),
            Err(Error::DegenerateRecursion { .. })
        ));
        assert!(rho_sequence(Case::LowRank, 0.0, 0.1, 0.0, 2, 5).is_err());
        assert!(rho_sequence(Case::LowRank, 0.1, 0.1, 0.0, 1, 5).is_err());
    }

    #[test]
    fn rho_momentum_first_step_is_plain() {
        let plain = rho_sequence(Case::LowRank, 0.3, 0.1, 0.2, 3, 1).unwrap();
        let heavy = rho_sequence_momentum(Case::LowRank, 0.3, 0.1, 0.2, 3, 0.9, 2).unwrap();
        assert_eq!(plain.values[1], heavy.values[1]);
        let r1 = heavy.values[1];
        let want = r1 * (1.0 - 0.02 - 0.1 * r1.powi(4)) + 0.9 * (r1 - 0.3);
        assert!((heavy.values[2] - want).abs() < 1e-16);
    }

    #[test]
    fn zero_target_still_gives_consistent_blocks() {
        let net = Network::orthogonal(&[6, 6, 6], 0.1, Activation::Linear, Seed(1)).unwrap();
        let basis = invariant_subspace(&net, &Matrix::zeros(6, 6), 1).unwrap();
        for l in 1..=2 {
            assert!((net.layer(l) * basis.v2(l) - basis.u2(l) * 0.1).norm() < 1e-12);
        }
    }

    #[test]
    fn margin_and_initialization_errors() {
        let net = Network::orthogonal(&[4, 4, 4], 0.1, Activation::Linear, Seed(2)).unwrap();
        assert!(matches!(
            invariant_subspace(&net, &Matrix::zeros(4, 4), 2),
            Err(Error::InsufficientMargin { m: 0 })
        ));
        let mut layers = net.clone().into_layers();
        layers[1][(0, 0)] += 0.05;
        let bent = Network::new(layers, Activation::Linear).unwrap();
        assert!(matches!(
            invariant_subspace(&bent, &Matrix::zeros(4, 4), 1),
            Err(Error::InvalidInitialization { layer: 2, .. })
        ));
        assert!(invariant_subspace(&net, &Matrix::zeros(4, 4), 0).is_err());
    }

    #[test]
    fn decomposition_is_lossless_change_of_basis() {
        let mut rng = Seed(3).rng();
        let w = gaussian(5, 5, &mut rng);
        let u = tensor::random_orthogonal_with(5, 5, 1.0, &mut rng).unwrap();
        let v = tensor::random_orthogonal_with(5, 5, 1.0, &mut rng).unwrap();
        let b = decompose_weight(&w, &u, &v, 1).unwrap();
        let mut c = Matrix::zeros(5, 5);
        c.view_mut((0, 0), (2, 2)).copy_from(&b.inner);
        c.view_mut((2, 2), (3, 3)).copy_from(&b.tail);
        let full = u.tr_mul(&(&w * &v));
        let off = (&full - &c).norm();
        assert!((off - b.off_diag_norm).abs() < 1e-12);
        assert!((&u * full * v.transpose() - &w).norm() < 1e-12);
        assert!(decompose_weight(&w, &Matrix::identity(4, 4), &v, 1).is_err());
    }
}
