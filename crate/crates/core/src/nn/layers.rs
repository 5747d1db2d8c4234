//! Embedding, dense and GRU layers with hand-written backward passes.
//!
//! Sequences are time-major: a `Vec` of length `L` holding `B × D` matrices.
//! The padding mask is a `B × L` matrix of ones (token) and zeros (PAD).

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::param::Parameters;
use super::real::Real;

fn uniform<T: Real, R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::of(rng.gen_range(-bound..bound)))
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Column `t` of the padding mask as a `B × 1` matrix.
pub(crate) fn column<T: Real>(pad: ArrayView2<'_, T>, t: usize) -> Array2<T> {
    pad.slice(s![.., t..t + 1]).to_owned()
}

/// Token-embedding table; row 0 is the PAD embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub table: Array2<T>,
}

impl<T: Real> Embedding<T> {
    pub fn new<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        let mut table = uniform(vocab, dim, 0.5, rng);
        table.row_mut(0).fill(T::zero());
        Self { table }
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn lookup(&self, ids: ArrayView2<'_, usize>) -> Vec<Array2<T>> {
        let (b, l) = ids.dim();
        let e = self.dim();
        (0..l)
            .map(|t| {
                let mut out = Array2::zeros((b, e));
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    row.assign(&self.table.row(ids[[i, t]]));
                }
                out
            })
            .collect()
    }

    /// Scatter-adds per-position gradients into `grad`.
    pub fn backward(&self, ids: ArrayView2<'_, usize>, d: &[Array2<T>], grad: &mut Self) {
        for (t, dt) in d.iter().enumerate() {
            for (i, row) in dt.rows().into_iter().enumerate() {
                let mut target = grad.table.row_mut(ids[[i, t]]);
                target += &row;
            }
        }
    }
}

impl<T: Real> Parameters<T> for Embedding<T> {
    fn tensors(&self) -> Vec<&Array2<T>> {
        vec![&self.table]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        vec![&mut self.table]
    }
}

/// Dense layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array2<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform(input, output, bound, rng),
            bias: uniform(1, output, bound, rng),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients (when `grad` is given) and returns `dx`.
    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>, grad: Option<&mut Self>) -> Array2<T> {
        if let Some(g) = grad {
            g.weight += &x.t().dot(dy);
            g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.weight.t())
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn tensors(&self) -> Vec<&Array2<T>> {
        vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Single-direction GRU with gate order (reset, update, candidate).
///
/// At PAD positions the hidden state is carried through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru<T> {
    pub w_ih: Array2<T>,
    pub w_hh: Array2<T>,
    pub b_ih: Array2<T>,
    pub b_hh: Array2<T>,
}

struct GruStep<T> {
    h_prev: Array2<T>,
    r: Array2<T>,
    z: Array2<T>,
    n: Array2<T>,
    gh_n: Array2<T>,
    keep: Array2<T>,
}

/// Activations saved by [`Gru::forward`] for the backward pass.
pub struct GruCache<T> {
    steps: Vec<GruStep<T>>,
    reverse: bool,
}

impl<T: Real> Gru<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: uniform(input, 3 * hidden, bound, rng),
            w_hh: uniform(hidden, 3 * hidden, bound, rng),
            b_ih: uniform(1, 3 * hidden, bound, rng),
            b_hh: uniform(1, 3 * hidden, bound, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.nrows()
    }

    /// Runs over `xs` (reversed when `reverse`); outputs are indexed by
    /// original position either way.
    pub fn forward(&self, xs: &[Array2<T>], pad: ArrayView2<'_, T>, reverse: bool) -> (Vec<Array2<T>>, GruCache<T>) {
        let l = xs.len();
        let b = pad.nrows();
        let hsz = self.hidden();
        let mut h = Array2::<T>::zeros((b, hsz));
        let mut outputs = vec![Array2::<T>::zeros((0, 0)); l];
        let mut steps = Vec::with_capacity(l);
        let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
        for &t in &order {
            let gi = xs[t].dot(&self.w_ih) + &self.b_ih;
            let gh = h.dot(&self.w_hh) + &self.b_hh;
            let mut r = Array2::<T>::zeros((b, hsz));
            let mut z = Array2::<T>::zeros((b, hsz));
            let mut n = Array2::<T>::zeros((b, hsz));
            Zip::from(&mut r)
                .and(gi.slice(s![.., 0..hsz]))
                .and(gh.slice(s![.., 0..hsz]))
                .for_each(|r, &a, &c| *r = sigmoid(a + c));
            Zip::from(&mut z)
                .and(gi.slice(s![.., hsz..2 * hsz]))
                .and(gh.slice(s![.., hsz..2 * hsz]))
                .for_each(|z, &a, &c| *z = sigmoid(a + c));
            let gh_n = gh.slice(s![.., 2 * hsz..]).to_owned();
            Zip::from(&mut n)
                .and(gi.slice(s![.., 2 * hsz..]))
                .and(&gh_n)
                .and(&r)
                .for_each(|n, &a, &c, &r| *n = (a + r * c).tanh());
            let keep = column(pad, t);
            let mut h_new = Array2::<T>::zeros((b, hsz));
            Zip::from(h_new.rows_mut())
                .and(z.rows())
                .and(n.rows())
                .and(h.rows())
                .and(keep.rows())
                .for_each(|mut out, z, n, h, k| {
                    let k = k[0];
                    Zip::from(&mut out).and(&z).and(&n).and(&h).for_each(|o, &z, &n, &h| {
                        let cand = (T::one() - z) * n + z * h;
                        *o = k * cand + (T::one() - k) * h;
                    });
                });
            let h_prev = std::mem::replace(&mut h, h_new);
            outputs[t] = h.clone();
            steps.push(GruStep {
                h_prev,
                r,
                z,
                n,
                gh_n,
                keep,
            });
        }
        (outputs, GruCache { steps, reverse })
    }

    /// Backpropagates output gradients `dhs` (indexed by position). Returns
    /// input gradients indexed by position.
    pub fn backward(
        &self,
        xs: &[Array2<T>],
        cache: &GruCache<T>,
        dhs: &[Array2<T>],
        mut grad: Option<&mut Self>,
        want_inputs: bool,
    ) -> Vec<Array2<T>> {
        let l = xs.len();
        let hsz = self.hidden();
        let b = dhs[0].nrows();
        let mut dxs = vec![Array2::<T>::zeros((0, 0)); l];
        let order: Vec<usize> = if cache.reverse { (0..l).rev().collect() } else { (0..l).collect() };
        let mut dh_next = Array2::<T>::zeros((b, hsz));
        for (k, &t) in order.iter().enumerate().rev() {
            let st = &cache.steps[k];
            let dh = &dhs[t] + &dh_next;
            let mut dgi = Array2::<T>::zeros((b, 3 * hsz));
            let mut dgh = Array2::<T>::zeros((b, 3 * hsz));
            let mut dh_prev = Array2::<T>::zeros((b, hsz));
            for i in 0..b {
                let keep = st.keep[[i, 0]];
                for j in 0..hsz {
                    let g = dh[[i, j]];
                    let dcand = keep * g;
                    let z = st.z[[i, j]];
                    let n = st.n[[i, j]];
                    let r = st.r[[i, j]];
                    let hp = st.h_prev[[i, j]];
                    let dn = dcand * (T::one() - z);
                    let dz = dcand * (hp - n);
                    let dn_pre = dn * (T::one() - n * n);
                    let dr = dn_pre * st.gh_n[[i, j]];
                    let dr_pre = dr * r * (T::one() - r);
                    let dz_pre = dz * z * (T::one() - z);
                    dgi[[i, j]] = dr_pre;
                    dgi[[i, hsz + j]] = dz_pre;
                    dgi[[i, 2 * hsz + j]] = dn_pre;
                    dgh[[i, j]] = dr_pre;
                    dgh[[i, hsz + j]] = dz_pre;
                    dgh[[i, 2 * hsz + j]] = dn_pre * r;
                    dh_prev[[i, j]] = (T::one() - keep) * g + dcand * z;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                g.w_ih += &xs[t].t().dot(&dgi);
                g.b_ih += &dgi.sum_axis(Axis(0)).insert_axis(Axis(0));
                g.w_hh += &st.h_prev.t().dot(&dgh);
                g.b_hh += &dgh.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            if want_inputs {
                dxs[t] = dgi.dot(&self.w_ih.t());
            }
            dh_prev += &dgh.dot(&self.w_hh.t());
            dh_next = dh_prev;
        }
        dxs
    }
}

impl<T: Real> Parameters<T> for Gru<T> {
    fn tensors(&self) -> Vec<&Array2<T>> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}

/// Bidirectional GRU whose per-position output is `[forward, backward]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru<T> {
    pub forward: Gru<T>,
    pub backward: Gru<T>,
}

pub struct BiGruCache<T> {
    fwd: GruCache<T>,
    bwd: GruCache<T>,
}

impl<T: Real> BiGru<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward: Gru::new(input, hidden, rng),
            backward: Gru::new(input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden()
    }

    pub fn run(&self, xs: &[Array2<T>], pad: ArrayView2<'_, T>) -> (Vec<Array2<T>>, BiGruCache<T>) {
        let (hf, fwd) = self.forward.forward(xs, pad, false);
        let (hb, bwd) = self.backward.forward(xs, pad, true);
        let outs = hf
            .into_iter()
            .zip(hb)
            .map(|(f, b)| ndarray::concatenate(Axis(1), &[f.view(), b.view()]).expect("same batch"))
            .collect();
        (outs, BiGruCache { fwd, bwd })
    }

    pub fn backprop(
        &self,
        xs: &[Array2<T>],
        cache: &BiGruCache<T>,
        douts: &[Array2<T>],
        grad: Option<&mut Self>,
        want_inputs: bool,
    ) -> Vec<Array2<T>> {
        let h = self.forward.hidden();
        let df: Vec<Array2<T>> = douts.iter().map(|d| d.slice(s![.., ..h]).to_owned()).collect();
        let db: Vec<Array2<T>> = douts.iter().map(|d| d.slice(s![.., h..]).to_owned()).collect();
        let (gf, gb) = match grad {
            Some(g) => (Some(&mut g.forward), Some(&mut g.backward)),
            None => (None, None),
        };
        let dx_f = self.forward.backward(xs, &cache.fwd, &df, gf, want_inputs);
        let dx_b = self.backward.backward(xs, &cache.bwd, &db, gb, want_inputs);
        if !want_inputs {
            return Vec::new();
        }
        dx_f.into_iter().zip(dx_b).map(|(a, b)| a + b).collect()
    }
}

impl<T: Real> Parameters<T> for BiGru<T> {
    fn tensors(&self) -> Vec<&Array2<T>> {
        let mut v = self.forward.tensors();
        v.extend(self.backward.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.forward.tensors_mut();
        v.extend(self.backward.tensors_mut());
        v
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}
