//! Gated recurrent unit.
//!
//! ```text
//! z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
//! r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
//! n_t = tanh(Wn x_t + Un (r_t * h_{t-1}) + bn)
//! h_t = (1 - z_t) * h_{t-1} + z_t * n_t
//! ```
//!
//! with `h_0 = 0`. Parameter tensor order: `Wz Uz bz Wr Ur br Wn Un bn`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fresh_instance_id, GradientSet, Parameterized, TextReader, TextWriter};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Gate {
    w: Vec<f64>, // hidden x input
    u: Vec<f64>, // hidden x hidden
    b: Vec<f64>,
}

impl Gate {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: vec![0.0; hidden * input],
            u: vec![0.0; hidden * hidden],
            b: vec![0.0; hidden],
        }
    }
}

#[derive(Debug)]
pub struct GruCell {
    input: usize,
    hidden: usize,
    update: Gate,
    reset: Gate,
    candidate: Gate,
    instance: u64,
}

impl Clone for GruCell {
    fn clone(&self) -> Self {
        Self {
            input: self.input,
            hidden: self.hidden,
            update: self.update.clone(),
            reset: self.reset.clone(),
            candidate: self.candidate.clone(),
            instance: fresh_instance_id(),
        }
    }
}

impl PartialEq for GruCell {
    fn eq(&self, other: &Self) -> bool {
        self.input == other.input
            && self.hidden == other.hidden
            && self.update == other.update
            && self.reset == other.reset
            && self.candidate == other.candidate
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

/// Per-step intermediates from [`GruCell::forward`].
#[derive(Debug, Clone)]
pub struct GruCache {
    owner: u64,
    steps: Vec<StepCache>,
}

impl GruCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[o] = sum_i m[o, i] * v[i]` accumulated into `out`.
fn matvec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, acc) in out.iter_mut().enumerate() {
        let row = &m[o * cols..(o + 1) * cols];
        *acc += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[i] += sum_o m[o, i] * d[o]`.
fn matvec_t_add(m: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (o, &dv) in d.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        let row = &m[o * cols..(o + 1) * cols];
        for (acc, w) in out.iter_mut().zip(row) {
            *acc += dv * w;
        }
    }
}

/// `g[o, i] += d[o] * v[i]`.
fn outer_add(g: &mut [f64], d: &[f64], v: &[f64]) {
    let cols = v.len();
    for (o, &dv) in d.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        let row = &mut g[o * cols..(o + 1) * cols];
        for (acc, x) in row.iter_mut().zip(v) {
            *acc += dv * x;
        }
    }
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            update: Gate::zeros(input, hidden),
            reset: Gate::zeros(input, hidden),
            candidate: Gate::zeros(input, hidden),
            instance: fresh_instance_id(),
        }
    }

    /// Uniform `[-1/sqrt(hidden), 1/sqrt(hidden)]` initialization.
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in cell.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        cell
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    fn step(&self, x: &[f64], h_prev: &[f64]) -> StepCache {
        let h = self.hidden;
        let mut z = self.update.b.clone();
        matvec_add(&self.update.w, x, &mut z);
        matvec_add(&self.update.u, h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.reset.b.clone();
        matvec_add(&self.reset.w, x, &mut r);
        matvec_add(&self.reset.u, h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut n = self.candidate.b.clone();
        matvec_add(&self.candidate.w, x, &mut n);
        matvec_add(&self.candidate.u, &rh, &mut n);
        n.iter_mut().for_each(|v| *v = v.tanh());

        debug_assert_eq!(n.len(), h);
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            rh,
        }
    }

    fn next_hidden(step: &StepCache) -> Vec<f64> {
        (0..step.z.len())
            .map(|j| (1.0 - step.z[j]) * step.h_prev[j] + step.z[j] * step.n[j])
            .collect()
    }

    /// Runs the sequence from a zero hidden state; returns the final hidden
    /// state and the cache for [`backward`](Self::backward).
    pub fn forward<S: AsRef<[f64]>>(&self, sequence: &[S]) -> Result<(Vec<f64>, GruCache)> {
        if sequence.is_empty() {
            return Err(Error::EmptyInput("GRU forward needs a non-empty sequence"));
        }
        let mut h = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(sequence.len());
        for x in sequence {
            let x = x.as_ref();
            if x.len() != self.input {
                return Err(Error::dim("GRU input", self.input, x.len()));
            }
            let s = self.step(x, &h);
            h = Self::next_hidden(&s);
            steps.push(s);
        }
        Ok((
            h,
            GruCache {
                owner: self.instance,
                steps,
            },
        ))
    }

    /// Final hidden state only.
    pub fn run<S: AsRef<[f64]>>(&self, sequence: &[S]) -> Result<Vec<f64>> {
        if sequence.is_empty() {
            return Err(Error::EmptyInput("GRU forward needs a non-empty sequence"));
        }
        let mut h = vec![0.0; self.hidden];
        for x in sequence {
            let x = x.as_ref();
            if x.len() != self.input {
                return Err(Error::dim("GRU input", self.input, x.len()));
            }
            h = Self::next_hidden(&self.step(x, &h));
        }
        Ok(h)
    }

    /// Backpropagation through time from a gradient on the final hidden state.
    /// Returns parameter gradients and per-step input gradients.
    pub fn backward(&self, cache: &GruCache, grad_h: &[f64]) -> Result<(GradientSet, Vec<Vec<f64>>)> {
        let mut grads = self.zero_grads();
        let dx = self.backward_accumulate(cache, grad_h, &mut grads)?;
        Ok((grads, dx))
    }

    pub fn backward_accumulate(
        &self,
        cache: &GruCache,
        grad_h: &[f64],
        grads: &mut GradientSet,
    ) -> Result<Vec<Vec<f64>>> {
        if cache.owner != self.instance {
            return Err(Error::StaleCache);
        }
        if grad_h.len() != self.hidden {
            return Err(Error::dim("GRU grad_h", self.hidden, grad_h.len()));
        }
        if grads.tensors.len() != 9 {
            return Err(Error::dim("GRU gradient tensors", 9, grads.tensors.len()));
        }
        let hdim = self.hidden;
        let mut dh = grad_h.to_vec();
        let mut dxs = vec![Vec::new(); cache.steps.len()];
        let [gwz, guz, gbz, gwr, gur, gbr, gwn, gun, gbn] = &mut grads.tensors[..] else {
            unreachable!("length checked above");
        };

        for (t, s) in cache.steps.iter().enumerate().rev() {
            let mut dh_prev = vec![0.0; hdim];
            let mut da_z = vec![0.0; hdim];
            let mut da_n = vec![0.0; hdim];
            for j in 0..hdim {
                let dz = dh[j] * (s.n[j] - s.h_prev[j]);
                let dn = dh[j] * s.z[j];
                dh_prev[j] = dh[j] * (1.0 - s.z[j]);
                da_z[j] = dz * s.z[j] * (1.0 - s.z[j]);
                da_n[j] = dn * (1.0 - s.n[j] * s.n[j]);
            }

            outer_add(gwn, &da_n, &s.x);
            outer_add(gun, &da_n, &s.rh);
            for (g, d) in gbn.iter_mut().zip(&da_n) {
                *g += d;
            }
            let mut d_rh = vec![0.0; hdim];
            matvec_t_add(&self.candidate.u, &da_n, &mut d_rh);
            let mut da_r = vec![0.0; hdim];
            for j in 0..hdim {
                dh_prev[j] += d_rh[j] * s.r[j];
                let dr = d_rh[j] * s.h_prev[j];
                da_r[j] = dr * s.r[j] * (1.0 - s.r[j]);
            }

            outer_add(gwz, &da_z, &s.x);
            outer_add(guz, &da_z, &s.h_prev);
            for (g, d) in gbz.iter_mut().zip(&da_z) {
                *g += d;
            }
            outer_add(gwr, &da_r, &s.x);
            outer_add(gur, &da_r, &s.h_prev);
            for (g, d) in gbr.iter_mut().zip(&da_r) {
                *g += d;
            }
            matvec_t_add(&self.update.u, &da_z, &mut dh_prev);
            matvec_t_add(&self.reset.u, &da_r, &mut dh_prev);

            let mut dx = vec![0.0; self.input];
            matvec_t_add(&self.update.w, &da_z, &mut dx);
            matvec_t_add(&self.reset.w, &da_r, &mut dx);
            matvec_t_add(&self.candidate.w, &da_n, &mut dx);
            dxs[t] = dx;
            dh = dh_prev;
        }
        Ok(dxs)
    }

    pub fn write_text(&self, w: &mut TextWriter) {
        w.line_usize(&[self.input, self.hidden]);
        for gate in [&self.update, &self.reset, &self.candidate] {
            for row in gate.w.chunks(self.input) {
                w.line_f64(row);
            }
            for row in gate.u.chunks(self.hidden) {
                w.line_f64(row);
            }
            w.line_f64(&gate.b);
        }
    }

    pub fn read_text(r: &mut TextReader<'_>) -> Result<Self> {
        let dims = r.line_usize()?;
        let [input, hidden] = dims[..] else {
            return Err(r.error("GRU header must be `input hidden`"));
        };
        if input == 0 || hidden == 0 {
            return Err(r.error("GRU dimensions must be positive"));
        }
        let mut cell = Self::zeros(input, hidden);
        for gate in [&mut cell.update, &mut cell.reset, &mut cell.candidate] {
            gate.w.clear();
            for _ in 0..hidden {
                gate.w.extend(r.line_f64_exact(input)?);
            }
            gate.u.clear();
            for _ in 0..hidden {
                gate.u.extend(r.line_f64_exact(hidden)?);
            }
            gate.b = r.line_f64_exact(hidden)?;
        }
        Ok(cell)
    }
}

impl Parameterized for GruCell {
    fn tensors(&self) -> Vec<&[f64]> {
        [&self.update, &self.reset, &self.candidate]
            .into_iter()
            .flat_map(|g| [g.w.as_slice(), g.u.as_slice(), g.b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.instance = fresh_instance_id();
        [&mut self.update, &mut self.reset, &mut self.candidate]
            .into_iter()
            .flat_map(|g| [g.w.as_mut_slice(), g.u.as_mut_slice(), g.b.as_mut_slice()])
            .collect()
    }
}
