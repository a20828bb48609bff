use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};
use crate::scalar::Scalar;

/// Initial forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Weights of one LSTM cell. Gate rows are stacked in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub w_x: Matrix<T>,
    pub w_h: Matrix<T>,
    pub b: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

/// Activations of one forward step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    pub i: Vec<T>,
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub o: Vec<T>,
    pub tanh_c: Vec<T>,
}

/// Gradients with respect to a cell's output state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrad<T> {
    pub dh: Vec<T>,
    pub dc: Vec<T>,
}

impl<T: Scalar> StateGrad<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            dh: vec![T::zero(); hidden],
            dc: vec![T::zero(); hidden],
        }
    }
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * hidden, input_dim),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(4 * hidden, 1),
        }
    }

    /// Glorot-uniform weights, forget bias [`FORGET_BIAS_INIT`], other biases zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Matrix::zeros(4 * hidden, 1);
        for r in hidden..2 * hidden {
            b.set(r, 0, T::of(FORGET_BIAS_INIT));
        }
        Self {
            w_x: Matrix::glorot(4 * hidden, input_dim, rng),
            w_h: Matrix::glorot(4 * hidden, hidden, rng),
            b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn tensors(&self) -> [&Matrix<T>; 3] {
        [&self.w_x, &self.w_h, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.b]
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.w_x.rows() != 4 * h || self.w_h.rows() != 4 * h || self.b.shape() != (4 * h, 1) {
            return Err(Error::dim(format!(
                "inconsistent LSTM parameters: w_x {:?}, w_h {:?}, b {:?}",
                self.w_x.shape(),
                self.w_h.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// One LSTM step: `z = W_x·x + W_h·h + b`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_forward<T: Scalar>(
    x: &[T],
    s: &LstmState<T>,
    p: &LstmParams<T>,
) -> Result<(LstmState<T>, StepCache<T>)> {
    p.check()?;
    let h = p.hidden_dim();
    if x.len() != p.input_dim() || s.h.len() != h || s.c.len() != h {
        return Err(Error::dim(format!(
            "cell expects input {} and state {h}, got input {} and state ({}, {})",
            p.input_dim(),
            x.len(),
            s.h.len(),
            s.c.len()
        )));
    }
    let mut z = p.b.as_slice().to_vec();
    p.w_x.matvec_acc(x, &mut z)?;
    p.w_h.matvec_acc(&s.h, &mut z)?;

    let i: Vec<T> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<T> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<T> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
    let o: Vec<T> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c_new: Vec<T> = (0..h).map(|k| f[k] * s.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<T> = c_new.iter().map(|&v| v.tanh()).collect();
    let h_new: Vec<T> = (0..h).map(|k| o[k] * tanh_c[k]).collect();

    let cache = StepCache {
        x: x.to_vec(),
        h_prev: s.h.clone(),
        c_prev: s.c.clone(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    Ok((LstmState { h: h_new, c: c_new }, cache))
}

/// Reverse-mode step through [`lstm_cell_forward`].
///
/// `grad_out` holds the upstream gradients on `h'` and `c'`. Parameter
/// gradients are accumulated into `grads`; returns the gradient on `x` and on
/// the previous state.
pub fn lstm_cell_backward<T: Scalar>(
    grad_out: &StateGrad<T>,
    cache: &StepCache<T>,
    p: &LstmParams<T>,
    grads: &mut LstmParams<T>,
) -> Result<(Vec<T>, StateGrad<T>)> {
    let h = p.hidden_dim();
    if cache.i.len() != h
        || cache.x.len() != p.input_dim()
        || grad_out.dh.len() != h
        || grad_out.dc.len() != h
        || grads.w_x.shape() != p.w_x.shape()
        || grads.w_h.shape() != p.w_h.shape()
    {
        return Err(Error::Consistency(
            "step cache, upstream gradient and parameters disagree in shape".into(),
        ));
    }
    let one = T::one();
    let mut dz = vec![T::zero(); 4 * h];
    let mut dc_prev = vec![T::zero(); h];
    for k in 0..h {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let d_o = grad_out.dh[k] * tc;
        let dc = grad_out.dc[k] + grad_out.dh[k] * o * (one - tc * tc);
        let d_i = dc * g;
        let d_g = dc * i;
        let d_f = dc * cache.c_prev[k];
        dc_prev[k] = dc * f;
        dz[k] = d_i * i * (one - i);
        dz[h + k] = d_f * f * (one - f);
        dz[2 * h + k] = d_g * (one - g * g);
        dz[3 * h + k] = d_o * o * (one - o);
    }
    grads.w_x.add_outer(&dz, &cache.x)?;
    grads.w_h.add_outer(&dz, &cache.h_prev)?;
    for (b, &d) in grads.b.as_mut_slice().iter_mut().zip(&dz) {
        *b += d;
    }
    let mut dx = vec![T::zero(); p.input_dim()];
    p.w_x.matvec_t_acc(&dz, &mut dx)?;
    let mut dh_prev = vec![T::zero(); h];
    p.w_h.matvec_t_acc(&dz, &mut dh_prev)?;
    Ok((
        dx,
        StateGrad {
            dh: dh_prev,
            dc: dc_prev,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_cell_stays_at_zero() {
        let p = LstmParams::<f64>::zeros(3, 2);
        let (s, _) = lstm_cell_forward(&[0.4, -1.0, 2.0], &LstmState::zeros(2), &p).unwrap();
        assert_eq!(s.h, vec![0.0, 0.0]);
        assert_eq!(s.c, vec![0.0, 0.0]);
    }

    #[test]
    fn forget_gate_carries_the_cell() {
        let mut p = LstmParams::<f64>::zeros(2, 3);
        for r in 3..6 {
            p.b.set(r, 0, 10.0);
        }
        let s = LstmState {
            h: vec![0.0; 3],
            c: vec![1.0; 3],
        };
        let (out, _) = lstm_cell_forward(&[0.0, 0.0], &s, &p).unwrap();
        for k in 0..3 {
            assert!((out.c[k] - 0.9999546).abs() < 1e-7);
            assert!((out.h[k] - 0.5 * 0.9999546f64.tanh()).abs() < 1e-7);
            assert!((out.h[k] - 0.380791).abs() < 1e-5);
        }
    }

    #[test]
    fn saturated_cells_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LstmParams::<f64>::init(2, 4, &mut rng);
        let s = LstmState {
            h: vec![1.0, -1.0, 1.0, -1.0],
            c: vec![50.0, -50.0, 50.0, -50.0],
        };
        let (out, _) = lstm_cell_forward(&[30.0, -30.0], &s, &p).unwrap();
        assert!(out.h.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = LstmParams::<f64>::zeros(3, 2);
        assert!(matches!(
            lstm_cell_forward(&[0.0], &LstmState::zeros(2), &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::<f64>::init(3, 2, &mut rng);
        let (_, cache) = lstm_cell_forward(&[0.1, 0.2, 0.3], &LstmState::zeros(2), &p).unwrap();
        let mut g = p.zeros_like();
        let (dx, dprev) = lstm_cell_backward(&StateGrad::zeros(2), &cache, &p, &mut g).unwrap();
        assert!(dx.iter().chain(&dprev.dh).chain(&dprev.dc).all(|&v| v == 0.0));
        assert!(g.tensors().iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
    }

    /// Single-unit cell: every derivative written out symbolically.
    #[test]
    fn scalar_cell_matches_symbolic_derivatives() {
        let (wxi, wxf, wxg, wxo) = (0.3, -0.2, 0.5, 0.1);
        let (whi, whf, whg, who) = (0.4, 0.25, -0.3, 0.2);
        let (bi, bf, bg, bo) = (0.05, 1.0, -0.1, 0.0);
        let p = LstmParams {
            w_x: Matrix::column(vec![wxi, wxf, wxg, wxo]),
            w_h: Matrix::column(vec![whi, whf, whg, who]),
            b: Matrix::column(vec![bi, bf, bg, bo]),
        };
        let (x, h0, c0) = (0.7f64, -0.4f64, 0.6f64);
        let s = LstmState { h: vec![h0], c: vec![c0] };
        let (out, cache) = lstm_cell_forward(&[x], &s, &p).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(wxi * x + whi * h0 + bi);
        let f = sig(wxf * x + whf * h0 + bf);
        let g = (wxg * x + whg * h0 + bg).tanh();
        let o = sig(wxo * x + who * h0 + bo);
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        assert!((out.h[0] - h1).abs() < 1e-15);

        // d h1 / d x with dL/dh1 = 1, dL/dc1 = 0
        let dtanh = 1.0 - c1.tanh().powi(2);
        let dc1 = o * dtanh;
        let dh1_dx = c1.tanh() * o * (1.0 - o) * wxo
            + dc1
                * (c0 * f * (1.0 - f) * wxf + g * i * (1.0 - i) * wxi + i * (1.0 - g * g) * wxg);
        let dh1_dc0 = dc1 * f;
        let dh1_dbf = dc1 * c0 * f * (1.0 - f);

        let mut grads = p.zeros_like();
        let (dx, dprev) = lstm_cell_backward(
            &StateGrad { dh: vec![1.0], dc: vec![0.0] },
            &cache,
            &p,
            &mut grads,
        )
        .unwrap();
        assert!((dx[0] - dh1_dx).abs() < 1e-14);
        assert!((dprev.dc[0] - dh1_dc0).abs() < 1e-14);
        assert!((grads.b.get(1, 0) - dh1_dbf).abs() < 1e-14);
    }

    #[test]
    fn random_cell_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (d_in, hid) = (rng.random_range(1..6), rng.random_range(1..6));
            let p = LstmParams::<f64>::init(d_in, hid, &mut rng);
            let x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = LstmState {
                h: (0..hid).map(|_| rng.random_range(-0.9..0.9)).collect(),
                c: (0..hid).map(|_| rng.random_range(-2.0..2.0)).collect(),
            };
            let wh: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wc: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();
            let objective = |x: &[f64], s: &LstmState<f64>, p: &LstmParams<f64>| {
                let (o, _) = lstm_cell_forward(x, s, p)?;
                Ok(o.h.iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>()
                    + o.c.iter().zip(&wc).map(|(a, b)| a * b).sum::<f64>())
            };
            let (_, cache) = lstm_cell_forward(&x, &s, &p).unwrap();
            let mut grads = p.zeros_like();
            let (dx, _) = lstm_cell_backward(
                &StateGrad { dh: wh.clone(), dc: wc.clone() },
                &cache,
                &p,
                &mut grads,
            )
            .unwrap();
            let ndx = finite_diff_gradient(|v| objective(v, &s, &p), &x, 1e-5).unwrap();
            for (a, n) in dx.iter().zip(&ndx) {
                assert!(relative_error(*a, *n, 1e-6) < 1e-4);
            }
            let flat = p.w_h.as_slice().to_vec();
            let nwh = finite_diff_gradient(
                |v| {
                    let mut q = p.clone();
                    q.w_h.as_mut_slice().copy_from_slice(v);
                    objective(&x, &s, &q)
                },
                &flat,
                1e-5,
            )
            .unwrap();
            for (a, n) in grads.w_h.as_slice().iter().zip(&nwh) {
                assert!(relative_error(*a, *n, 1e-6) < 1e-4);
            }
        }
    }
}
