//! Layerwise feature separation of classification networks and the
//! geometric-decay bound for balanced, spectrally-pinned linear networks.

use rand::Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{end_to_end, features, Activation, Network};
use crate::tensor::{self, Matrix, Seed};

/// Between-class traces below this are treated as degenerate.
pub const DEGENERATE_TRACE: f64 = 1e-14;

pub const OPTIMALITY_TOL: f64 = 1e-6;
pub const SPECTRUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ClassificationData {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub y: Matrix,
    pub k: usize,
    pub n: usize,
}

impl ClassificationData {
    pub fn samples(&self) -> usize {
        self.labels.len()
    }
}

/// `K` balanced classes of `n` samples each with orthonormal inputs (a random
/// orthogonal `d × N` matrix) and one-hot targets laid out in class blocks.
pub fn make_classification_data(k: usize, n: usize, d: usize, seed: Seed) -> Result<ClassificationData> {
    if k == 0 || n == 0 {
        return Err(Error::arg("need at least one class and one sample per class"));
    }
    let total = n * k;
    if d < total {
        return Err(Error::arg(format!("input dimension {d} is below the sample count {total}")));
    }
    let x = tensor::random_orthogonal(d, total, 1.0, seed)?;
    let labels: Vec<usize> = (0..total).map(|i| i / n).collect();
    let mut y = Matrix::zeros(k, total);
    for (i, &c) in labels.iter().enumerate() {
        y[(c, i)] = 1.0;
    }
    Ok(ClassificationData { x, labels, y, k, n })
}

fn class_counts(labels: &[usize]) -> Result<(usize, usize)> {
    let k = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    if k < 2 {
        return Err(Error::arg("need at least two classes"));
    }
    let mut counts = vec![0usize; k];
    for &c in labels {
        counts[c] += 1;
    }
    if counts.iter().any(|&c| c != counts[0]) || counts[0] == 0 {
        return Err(Error::arg(format!("classes are unbalanced: {counts:?}")));
    }
    Ok((k, counts[0]))
}

fn class_means(z: &Matrix, labels: &[usize], k: usize, n: usize) -> Matrix {
    let mut means = Matrix::zeros(z.nrows(), k);
    for (i, &c) in labels.iter().enumerate() {
        means.column_mut(c).axpy(1.0 / n as f64, &z.column(i), 1.0);
    }
    means
}

/// Within-class `Σ_W = (1/N)Σ(z − z̄_k)(z − z̄_k)ᵀ` and between-class
/// `Σ_B = (1/K)Σ(z̄_k − z̄)(z̄_k − z̄)ᵀ` scatter of the columns of `z`.
pub fn class_scatter(z: &Matrix, labels: &[usize]) -> Result<(Matrix, Matrix)> {
    if z.ncols() != labels.len() {
        return Err(Error::arg("one label per feature column required"));
    }
    let (k, n) = class_counts(labels)?;
    let means = class_means(z, labels, k, n);
    let global = means.column_mean();
    let mut within = z.clone();
    for (i, &c) in labels.iter().enumerate() {
        within.column_mut(i).axpy(-1.0, &means.column(c), 1.0);
    }
    let mut between = means;
    for mut col in between.column_iter_mut() {
        col -= &global;
    }
    let sw = &within * within.transpose() / labels.len() as f64;
    let sb = &between * between.transpose() / k as f64;
    Ok((sw, sb))
}

/// `Tr(Σ_W) / Tr(Σ_B)`.
pub fn separation_measure(sw: &Matrix, sb: &Matrix) -> Result<f64> {
    let tb = sb.trace();
    if !(tb > DEGENERATE_TRACE) {
        return Err(Error::DegenerateBetweenClass { trace: tb });
    }
    Ok(sw.trace() / tb)
}

/// Separation of arbitrary features; `None` when the between-class scatter
/// vanishes.
pub fn feature_separation(z: &Matrix, labels: &[usize]) -> Result<Option<f64>> {
    let (sw, sb) = class_scatter(z, labels)?;
    match separation_measure(&sw, &sb) {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateBetweenClass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `D_0, …, D_{L−1}` over the network's hidden representations.
pub fn layerwise_separation(net: &Network, data: &ClassificationData) -> Result<Vec<Option<f64>>> {
    features(net, &data.x)?
        .iter()
        .map(|z| feature_separation(z, &data.labels))
        .collect()
}

/// The same sequence for linear networks via the centered form
/// `(K/N)·‖W_{l:1}Δ_W‖² / ‖W_{l:1}Δ_B‖²`.
pub fn centered_separation(net: &Network, data: &ClassificationData) -> Result<Vec<Option<f64>>> {
    if net.activation() != Activation::Linear {
        return Err(Error::Unsupported("centered form needs a linear network".into()));
    }
    let (k, n) = class_counts(&data.labels)?;
    let means = class_means(&data.x, &data.labels, k, n);
    let global = means.column_mean();
    let mut dw = data.x.clone();
    for (i, &c) in data.labels.iter().enumerate() {
        dw.column_mut(i).axpy(-1.0, &means.column(c), 1.0);
    }
    let mut db = means;
    for mut col in db.column_iter_mut() {
        col -= &global;
    }
    let ratio = k as f64 / data.samples() as f64;
    (0..net.depth())
        .map(|l| {
            let (w, b) = match net.product(l, 1) {
                Some(p) => (&p * &dw, &p * &db),
                None => (dw.clone(), db.clone()),
            };
            let denom = b.norm_squared();
            Ok((denom > DEGENERATE_TRACE).then(|| ratio * w.norm_squared() / denom))
        })
        .collect()
}

/// Least-squares fit of `ln D_l` against `l`; returns `(slope, R²)`.
pub fn loglinear_fit(d: &[f64]) -> Result<(f64, f64)> {
    if d.len() < 2 {
        return Err(Error::arg("need at least two values to fit"));
    }
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::arg("log-linear fit needs positive finite values"));
    }
    let ys: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let n = ys.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let ss_tot: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let ss_res: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - ym - slope * (i as f64 - xm)).powi(2))
        .sum();
    let r2 = if ss_tot <= f64::EPSILON * n * ym.abs().max(1.0) { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((slope, r2))
}

/// `2(√K + 1)ε²`.
pub fn ratio_bound(k: usize, eps: f64) -> f64 {
    2.0 * ((k as f64).sqrt() + 1.0) * eps * eps
}

/// Largest admissible scale: the minimum of the three ceilings.
pub fn epsilon_ceiling(n: usize, d: usize, k: usize, depth: usize) -> f64 {
    let (n, l) = (n as f64, depth as f64);
    let gap = ((d - k) as f64).powf(0.25);
    let a = n.powf(1.0 / (2.0 * l)) / (30f64.sqrt() * l * gap);
    let b = (n / 2.0).powf(1.0 / (4.0 * l)) / gap;
    let c = 1.0 / (2.0 * ((k as f64).sqrt() + 1.0)).sqrt();
    a.min(b).min(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConditions {
    /// `‖W_{L:1}X − Y‖_F`.
    pub optimality_residual: f64,
    /// Worst `‖W_{l+1}ᵀW_{l+1} − W_lW_lᵀ‖_F` over hidden pairs.
    pub hidden_balance_residual: f64,
    /// `‖W_LᵀW_L − W_{L−1}W_{L−1}ᵀ‖_F`.
    pub last_balance_residual: f64,
    /// `ε²√(d − K)`.
    pub balance_tolerance: f64,
    /// Fewest singular values within `SPECTRUM_TOL` of `ε` over hidden layers.
    pub min_pinned_values: usize,
    /// `d − 2K`.
    pub required_pinned_values: usize,
}

impl BoundConditions {
    pub fn optimal(&self) -> bool {
        self.optimality_residual <= OPTIMALITY_TOL
    }

    pub fn balanced(&self) -> bool {
        self.hidden_balance_residual <= self.balance_tolerance
            && self.last_balance_residual <= self.balance_tolerance
    }

    pub fn spectrum_pinned(&self) -> bool {
        self.min_pinned_values >= self.required_pinned_values
    }

    pub fn all_hold(&self) -> bool {
        self.optimal() && self.balanced() && self.spectrum_pinned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub d: Vec<Option<f64>>,
    pub ratios: Vec<Option<f64>>,
    pub bound: Option<f64>,
    pub fit_slope: Option<f64>,
    pub fit_r2: Option<f64>,
    pub epsilon_admissible: Option<bool>,
    pub epsilon_ceiling: Option<f64>,
    pub conditions: Option<BoundConditions>,
}

impl CollapseReport {
    pub fn from_values(d: Vec<Option<f64>>) -> Self {
        let ratios = d
            .windows(2)
            .map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) if a > 0.0 => Some(b / a),
                _ => None,
            })
            .collect();
        let defined: Option<Vec<f64>> = d.iter().copied().collect();
        let fit = defined.and_then(|v| loglinear_fit(&v).ok());
        CollapseReport {
            d,
            ratios,
            bound: None,
            fit_slope: fit.map(|f| f.0),
            fit_r2: fit.map(|f| f.1),
            epsilon_admissible: None,
            epsilon_ceiling: None,
            conditions: None,
        }
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.d.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a))
    }

    /// Whether every defined ratio respects the bound.
    pub fn ratios_within_bound(&self) -> Option<bool> {
        let b = self.bound?;
        Some(self.ratios.iter().all(|r| r.is_none_or(|r| r <= b)))
    }

    pub fn to_csv(&self) -> String {
        use crate::tensor::io::fmt_f64;
        let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut out = String::from("layer,D,ratio\n");
        for (l, d) in self.d.iter().enumerate() {
            let ratio = if l == 0 { None } else { self.ratios[l - 1] };
            out.push_str(&format!("{l},{},{}\n", cell(*d), cell(ratio)));
        }
        out
    }
}

/// Evaluates the bound's hypotheses on a trained linear network and reports
/// the separation sequence against `2(√K + 1)ε²`. Violations are reported, not
/// raised.
pub fn check_collapse_bound(net: &Network, data: &ClassificationData, eps: f64) -> Result<CollapseReport> {
    if net.activation() != Activation::Linear {
        return Err(Error::Unsupported("the bound covers linear networks only".into()));
    }
    let depth = net.depth();
    let k = data.k;
    let d = net.layer(1).nrows();
    if d <= 2 * k {
        return Err(Error::arg(format!("hidden width {d} must exceed 2K = {}", 2 * k)));
    }
    let optimality_residual = (end_to_end(net)? * &data.x - &data.y).norm();
    let gram = |w: &Matrix| w.tr_mul(w);
    let cogram = |w: &Matrix| w * w.transpose();
    let hidden_balance_residual = (1..depth.saturating_sub(1))
        .map(|l| (gram(net.layer(l + 1)) - cogram(net.layer(l))).norm())
        .fold(0.0, f64::max);
    let last_balance_residual = (gram(net.layer(depth)) - cogram(net.layer(depth - 1))).norm();
    let min_pinned_values = (1..depth)
        .map(|l| {
            tensor::svd(net.layer(l)).map(|t| t.s.iter().filter(|s| (*s - eps).abs() <= SPECTRUM_TOL).count())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min()
        .unwrap_or(0);
    let ceiling = epsilon_ceiling(data.n, d, k, depth);
    let mut report = CollapseReport::from_values(layerwise_separation(net, data)?);
    report.bound = Some(ratio_bound(k, eps));
    report.epsilon_ceiling = Some(ceiling);
    report.epsilon_admissible = Some(eps <= ceiling);
    report.conditions = Some(BoundConditions {
        optimality_residual,
        hidden_balance_residual,
        last_balance_residual,
        balance_tolerance: eps * eps * ((d - k) as f64).sqrt(),
        min_pinned_values,
        required_pinned_values: d - 2 * k,
    });
    Ok(report)
}

/// Hidden layers ε-orthogonal, last layer `ε[U_L | 0]` with `U_L` a random
/// `K × K` orthogonal matrix.
pub fn corollary_init(dims: &[usize], k: usize, eps: f64, seed: Seed) -> Result<Network> {
    if dims.len() < 3 || *dims.last().unwrap() != k {
        return Err(Error::arg(format!("dims {dims:?} must end in the class count {k}")));
    }
    if let Some(&w) = dims[1..dims.len() - 1].iter().find(|&&w| w <= 2 * k) {
        return Err(Error::arg(format!("hidden width {w} must exceed 2K = {}", 2 * k)));
    }
    let mut rng = seed.rng();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims[..dims.len() - 1].windows(2) {
        layers.push(tensor::random_orthogonal_with(w[1], w[0], eps, &mut rng)?);
    }
    let u = tensor::random_orthogonal_with(k, k, eps, &mut rng)?;
    let mut last = Matrix::zeros(k, dims[dims.len() - 2]);
    last.columns_mut(0, k).copy_from(&u);
    layers.push(last);
    Network::new(layers, Activation::Linear)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// ε-scaled orthogonal.
    Orthogonal,
    /// i.i.d. `N(0, ε²/d_in)`.
    Normal,
    /// i.i.d. `U(−a, a)` with `a = ε√(3/d_in)`, matching the normal variance.
    Uniform,
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(InitKind::Orthogonal),
            "normal" => Ok(InitKind::Normal),
            "uniform" => Ok(InitKind::Uniform),
            other => Err(Error::arg(format!("unknown init kind `{other}`"))),
        }
    }
}

pub fn init_network(dims: &[usize], kind: InitKind, eps: f64, activation: Activation, seed: Seed) -> Result<Network> {
    if kind == InitKind::Orthogonal {
        return Network::orthogonal(dims, eps, activation, seed);
    }
    if !(eps > 0.0) {
        return Err(Error::arg(format!("scale must be positive, got {eps}")));
    }
    let mut rng = seed.rng();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let std = eps / (w[0] as f64).sqrt();
        let m = match kind {
            InitKind::Normal => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::arg(e.to_string()))?;
                Matrix::from_fn(w[1], w[0], |_, _| rng.sample(dist))
            }
            _ => {
                let a = std * 3f64.sqrt();
                let dist = Uniform::new(-a, a).map_err(|e| Error::arg(e.to_string()))?;
                Matrix::from_fn(w[1], w[0], |_, _| rng.sample(dist))
            }
        };
        layers.push(m);
    }
    Network::new(layers, activation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_instance() -> (Matrix, Vec<usize>) {
        (Matrix::from_row_slice(1, 4, &[1.0, 3.0, -1.0, -3.0]), vec![0, 0, 1, 1])
    }

    #[test]
    fn hand_scatter() {
        let (z, labels) = hand_instance();
        let (sw, sb) = class_scatter(&z, &labels).unwrap();
        assert!((sw[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((sb[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((separation_measure(&sw, &sb).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn collapsed_and_merged_classes() {
        let z = Matrix::from_row_slice(1, 4, &[2.0, 2.0, -2.0, -2.0]);
        let (sw, sb) = class_scatter(&z, &[0, 0, 1, 1]).unwrap();
        assert_eq!(sw.trace(), 0.0);
        assert_eq!(separation_measure(&sw, &sb).unwrap(), 0.0);
        let z = Matrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let (_, sb) = class_scatter(&z, &[0, 0, 1, 1]).unwrap();
        assert_eq!(sb.trace(), 0.0);
        assert!(matches!(
            separation_measure(&Matrix::identity(1, 1), &sb),
            Err(Error::DegenerateBetweenClass { .. })
        ));
    }

    #[test]
    fn unbalanced_labels_rejected() {
        let z = Matrix::zeros(1, 3);
        assert!(class_scatter(&z, &[0, 0, 1]).is_err());
    }

    #[test]
    fn data_layout() {
        let data = make_classification_data(2, 1, 2, Seed(1)).unwrap();
        assert_eq!(data.y, Matrix::identity(2, 2));
        let data = make_classification_data(5, 10, 50, Seed(2)).unwrap();
        assert!((&data.x * data.x.transpose() - Matrix::identity(50, 50)).norm() < 1e-10);
        assert!(make_classification_data(5, 10, 40, Seed(2)).is_err());
    }

    #[test]
    fn bound_and_ceiling_values() {
        assert!((ratio_bound(5, 0.25) - 0.404508).abs() < 1e-6);
        let c = 1.0 / (2.0 * (5f64.sqrt() + 1.0)).sqrt();
        assert!((c - 0.393).abs() < 1e-3);
        assert!(epsilon_ceiling(10, 50, 5, 4) < 0.5);
    }

    #[test]
    fn fit_examples() {
        let geo: Vec<f64> = (0..6).map(|l| 3.0 * 0.2f64.powi(l)).collect();
        let (slope, r2) = loglinear_fit(&geo).unwrap();
        assert!((slope - 0.2f64.ln()).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        let (slope, r2) = loglinear_fit(&[0.7; 5]).unwrap();
        assert_eq!(slope, 0.0);
        assert_eq!(r2, 1.0);
        assert!(loglinear_fit(&[1.0, 0.0]).is_err());
        assert!(loglinear_fit(&[1.0]).is_err());
    }

    #[test]
    fn corollary_init_structure() {
        let net = corollary_init(&[50, 50, 50, 50, 5], 5, 0.25, Seed(3)).unwrap();
        let last = net.layer(4);
        assert!((last * last.transpose() - Matrix::identity(5, 5) * 0.0625).norm() < 1e-12);
        assert!(last.columns(5, 45).iter().all(|&v| v == 0.0));
        assert!(corollary_init(&[10, 10, 5], 5, 0.25, Seed(3)).is_err());
    }

    #[test]
    fn report_csv_marks_undefined_entries() {
        let r = CollapseReport::from_values(vec![Some(1.0), Some(0.5), None]);
        assert_eq!(r.to_csv(), "layer,D,ratio\n0,1,\n1,0.5,0.5\n2,,\n");
        assert!(r.fit_slope.is_none());
        assert!(!r.strictly_decreasing());
    }
}
