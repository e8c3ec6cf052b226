//! Dense layers with hand-written backward passes over `f64` matrices.
//!
//! Activations are row-major `(tokens, features)` matrices. Every layer's
//! `forward` takes `&self` and returns whatever its `backward` needs, so a
//! frozen model can be shared across threads; `backward` accumulates into
//! the parameter gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

/// A trainable matrix and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Array2::zeros((rows, cols)))
    }

    /// Uniform Glorot initialisation.
    pub fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Param::uniform(rng, rows, cols, a)
    }

    pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, a: f64) -> Self {
        Param::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..=a)))
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Param::new(Array2::from_elem((rows, cols), v))
    }
}

/// Named traversal of every parameter, in a fixed order.
pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.grad.fill(0.0));
    }

    /// Parameter count.
    fn size(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{}.{}", prefix, name)
    }
}

impl Params for Param {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(prefix.to_owned(), self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(prefix.to_owned(), self);
    }
}

impl<T: Params> Params for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        for (i, x) in self.iter().enumerate() {
            x.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, x) in self.iter_mut().enumerate() {
            x.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Implements [`Params`] by visiting the listed fields in order.
macro_rules! impl_params {
    ($t:ty { $($field:ident),* $(,)? }) => {
        impl $crate::nn::Params for $t {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                f: &mut dyn FnMut(String, &'a $crate::nn::Param),
            ) {
                $( self.$field.visit(&$crate::nn::join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(String, &mut $crate::nn::Param),
            ) {
                $( self.$field.visit_mut(&$crate::nn::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_params;

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl_params!(Linear { w, b });

impl Linear {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        Linear {
            w: Param::glorot(rng, input, output),
            b: Param::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.value) + &self.b.value
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        self.w.grad += &x.t().dot(&dy);
        self.b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.value.t())
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Backward of a row-wise softmax given its output `p`.
pub fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let dot = (p * dp).sum_axis(Axis(1)).insert_axis(Axis(1));
    p * &(dp - &dot)
}

/// `log Σ exp(x)` of a slice, stable.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))`, stable.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Layer normalisation over the feature axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

impl_params!(LayerNorm { gamma, beta });

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f64) -> Self {
        LayerNorm {
            gamma: Param::filled(1, dim, 1.0),
            beta: Param::zeros(1, dim),
            eps,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let d = dy.ncols() as f64;
        self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma.value;
        let mean_d = (dxhat.sum_axis(Axis(1)) / d).insert_axis(Axis(1));
        let mean_dx = ((&dxhat * &cache.xhat).sum_axis(Axis(1)) / d).insert_axis(Axis(1));
        (dxhat - &mean_d - &(&cache.xhat * &mean_dx)) * &cache.inv_std.view().insert_axis(Axis(1))
    }
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - p)`. `None` when off.
pub fn dropout_mask(rng: Option<&mut rand_chacha::ChaCha8Rng>, rows: usize, cols: usize, p: f64) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random_bool(p) {
            0.0
        } else {
            keep
        }
    }))
}

pub fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` at every entry of `x`.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-5;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = x.clone();
            plus[(r, c)] += h;
            let mut minus = x.clone();
            minus[(r, c)] -= h;
            g[(r, c)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn linear_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::new(&mut rng, 4, 3);
        let x = Array2::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0));
        let wts = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
        let loss = |l: &Linear, x: &Array2<f64>| (l.forward(x.view()) * &wts).sum();
        let dx = lin.backward(x.view(), wts.view());
        let num = numeric_grad(&x, |x| loss(&lin, x));
        assert_abs_diff_eq!(dx, num, epsilon = 1e-8);
        let frozen = lin.clone();
        let num_w = numeric_grad(&lin.w.value, |w| {
            let mut l = frozen.clone();
            l.w.value = w.clone();
            loss(&l, &x)
        });
        assert_abs_diff_eq!(lin.w.grad, num_w, epsilon = 1e-8);
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ln = LayerNorm::new(5, 1e-5);
        ln.gamma = Param::uniform(&mut rng, 1, 5, 1.0);
        let x = Array2::from_shape_simple_fn((3, 5), || rng.random_range(-2.0..2.0));
        let wts = Array2::from_shape_simple_fn((3, 5), || rng.random_range(-1.0..1.0));
        let (y, cache) = ln.forward(&x);
        assert_eq!(y.dim(), (3, 5));
        let dx = ln.backward(&cache, &wts);
        let num = numeric_grad(&x, |x| (ln.forward(x).0 * &wts).sum());
        assert_abs_diff_eq!(dx, num, epsilon = 1e-7);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let p = softmax_rows(&x);
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(p[(1, 0)], 0.5, epsilon = 1e-12);
        let wts = array![[0.3, -1.0, 2.0], [1.0, 0.5, 0.0]];
        let dx = softmax_rows_backward(&p, &wts);
        let x2 = array![[0.1, -0.4, 0.7], [0.0, 0.2, 0.3]];
        let p2 = softmax_rows(&x2);
        let dx2 = softmax_rows_backward(&p2, &wts);
        let num = numeric_grad(&x2, |x| (softmax_rows(x) * &wts).sum());
        assert_abs_diff_eq!(dx2, num, epsilon = 1e-8);
        assert!(dx.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stable_scalar_functions() {
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(sigmoid(-800.0), 0.0, epsilon = 1e-300);
        assert_abs_diff_eq!(softplus(800.0), 800.0, epsilon = 1e-9);
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn params_are_visited_by_name() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layers = vec![Linear::new(&mut rng, 2, 3), Linear::new(&mut rng, 3, 1)];
        let mut names = Vec::new();
        layers.visit("mlp", &mut |n, _| names.push(n));
        assert_eq!(names, ["mlp.0.w", "mlp.0.b", "mlp.1.w", "mlp.1.b"]);
        assert_eq!(layers.size(), 2 * 3 + 3 + 3 + 1);
    }
}
