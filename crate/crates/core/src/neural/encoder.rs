use ndarray::Array2;
use rand::Rng;

use super::tape::{Graph, Group, ParamId, ParamStore, Var};
use super::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};

/// Uniform `±1/sqrt(fan_in)` matrix.
pub(crate) fn init_matrix(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let r = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-r..=r))
}

#[derive(Debug, Clone, PartialEq)]
struct Lstm {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Dense { w: ParamId, b: ParamId },
    Conv { window: usize, w: ParamId, b: ParamId },
    Recurrent { fwd: Lstm, bwd: Option<Lstm> },
}

/// One of the two encoders: `φa` over the query or `φb` over candidate
/// terms in their context windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    layers: Vec<Layer>,
    out_dim: usize,
}

fn add_lstm(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Lstm {
    Lstm {
        wx: store.add(&format!("{name}.wx"), Group::Policy, init_matrix(rng, input, 4 * hidden, input)),
        wh: store.add(&format!("{name}.wh"), Group::Policy, init_matrix(rng, hidden, 4 * hidden, hidden)),
        b: store.add(&format!("{name}.b"), Group::Policy, Array2::zeros((1, 4 * hidden))),
        hidden,
    }
}

/// Graph handles for one LSTM direction.
struct LstmVars {
    wx: Var,
    wh: Var,
    b: Var,
    hidden: usize,
}

impl LstmVars {
    fn bind(g: &mut Graph, store: &ParamStore, p: &Lstm) -> Self {
        LstmVars { wx: g.param(store, p.wx), wh: g.param(store, p.wh), b: g.param(store, p.b), hidden: p.hidden }
    }

    fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let zx = g.matmul(x, self.wx);
        let zh = g.matmul(h, self.wh);
        let z = g.add(zx, zh);
        let z = g.add(z, self.b);
        let i = g.slice_cols(z, 0, n);
        let f = g.slice_cols(z, n, 2 * n);
        let u = g.slice_cols(z, 2 * n, 3 * n);
        let o = g.slice_cols(z, 3 * n, 4 * n);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let u = g.tanh(u);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, u);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        (h, c)
    }

    /// Hidden states over `xs`, in input order.
    fn run(&self, g: &mut Graph, xs: &[Var], reverse: bool) -> Vec<Var> {
        let rows = g.shape(xs[0]).0;
        let mut h = g.constant(Array2::zeros((rows, self.hidden)));
        let mut c = g.constant(Array2::zeros((rows, self.hidden)));
        let mut out = vec![h; xs.len()];
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            (h, c) = self.step(g, xs[t], h, c);
            out[t] = h;
        }
        out
    }
}

impl Encoder {
    /// Registers parameters under `prefix`. `span` is the number of input
    /// rows a feed-forward encoder sees at once (1 for the query, the
    /// context length for terms).
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: &EncoderConfig,
        in_dim: usize,
        d: usize,
        span: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate(d)?;
        let mut layers = Vec::new();
        match config.kind {
            EncoderKind::FeedForward => {
                let fan = span * in_dim;
                let w = store.add(&format!("{prefix}.ff.w"), Group::Policy, init_matrix(rng, fan, d, fan));
                let b = store.add(&format!("{prefix}.ff.b"), Group::Policy, Array2::zeros((1, d)));
                layers.push(Layer::Dense { w, b });
            }
            EncoderKind::Convolutional => {
                let mut input = in_dim;
                for (l, &window) in config.windows.iter().enumerate() {
                    let out = if l + 1 == config.windows.len() { d } else { config.filters };
                    let fan = window * input;
                    let w = store.add(&format!("{prefix}.conv{l}.w"), Group::Policy, init_matrix(rng, fan, out, fan));
                    let b = store.add(&format!("{prefix}.conv{l}.b"), Group::Policy, Array2::zeros((1, out)));
                    layers.push(Layer::Conv { window, w, b });
                    input = out;
                }
            }
            EncoderKind::Recurrent => {
                let mut input = in_dim;
                for l in 0..config.layers {
                    let fwd = add_lstm(store, &format!("{prefix}.rnn{l}.fwd"), input, config.hidden, rng);
                    let bwd = config
                        .bidirectional
                        .then(|| add_lstm(store, &format!("{prefix}.rnn{l}.bwd"), input, config.hidden, rng));
                    layers.push(Layer::Recurrent { fwd, bwd });
                    input = config.output_dim(d);
                }
            }
        }
        Ok(Encoder { config: config.clone(), layers, out_dim: d })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Encodes one sequence `x` (one row per token) into a `1 × d` vector.
    pub fn encode_sequence(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let len = g.shape(x).0;
        if len == 0 {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        match self.config.kind {
            EncoderKind::FeedForward => {
                let Layer::Dense { w, b } = &self.layers[0] else { unreachable!() };
                let (w, b) = (g.param(store, *w), g.param(store, *b));
                let h = g.matmul(x, w);
                let h = g.add(h, b);
                let h = g.tanh(h);
                Ok(g.mean_rows(h))
            }
            EncoderKind::Convolutional => {
                let mut h = x;
                for layer in &self.layers {
                    h = self.conv(g, store, layer, h, 1, len, (0, len), (0, len));
                }
                Ok(g.max_rows(h))
            }
            EncoderKind::Recurrent => {
                let xs: Vec<Var> = (0..len).map(|t| g.gather(x, vec![vec![Some(t)]])).collect();
                let (fwd, bwd) = self.recurrent(g, store, xs);
                match bwd {
                    Some(bwd) => Ok(g.concat_cols(&[fwd[len - 1], bwd[0]])),
                    None => Ok(fwd[len - 1]),
                }
            }
        }
    }

    /// Encodes `n` windows of `len` rows each (window-major in `x`) into an
    /// `n × d` matrix, one row per window centre.
    pub fn encode_centres(&self, g: &mut Graph, store: &ParamStore, x: Var, n: usize, len: usize) -> Result<Var> {
        if g.shape(x).0 != n * len || len == 0 {
            return Err(Error::Dimension(format!("expected {} context rows, got {}", n * len, g.shape(x).0)));
        }
        let centre = len / 2;
        match self.config.kind {
            EncoderKind::FeedForward => {
                let Layer::Dense { w, b } = &self.layers[0] else { unreachable!() };
                let (w, b) = (g.param(store, *w), g.param(store, *b));
                if g.shape(w).0 != len * g.shape(x).1 {
                    return Err(Error::Dimension(format!("feed-forward encoder expects windows of {}", g.shape(w).0)));
                }
                let idx = (0..n).map(|i| (0..len).map(|j| Some(i * len + j)).collect()).collect();
                let flat = g.gather(x, idx);
                let h = g.matmul(flat, w);
                let h = g.add(h, b);
                Ok(g.tanh(h))
            }
            EncoderKind::Convolutional => {
                // Positions each layer must produce so the last one can emit the centre.
                let mut ranges = vec![(centre, centre + 1)];
                for layer in self.layers.iter().skip(1).rev() {
                    let Layer::Conv { window, .. } = layer else { unreachable!() };
                    let (lo, hi) = *ranges.last().unwrap();
                    let half = window / 2;
                    ranges.push((lo.saturating_sub(half), (hi + half).min(len)));
                }
                ranges.reverse();
                let mut h = x;
                let mut input = (0, len);
                for (layer, &out) in self.layers.iter().zip(&ranges) {
                    h = self.conv(g, store, layer, h, n, len, input, out);
                    input = out;
                }
                Ok(h)
            }
            EncoderKind::Recurrent => {
                let xs: Vec<Var> =
                    (0..len).map(|t| g.gather(x, (0..n).map(|i| vec![Some(i * len + t)]).collect())).collect();
                let (fwd, bwd) = self.recurrent(g, store, xs);
                match bwd {
                    Some(bwd) => Ok(g.concat_cols(&[fwd[centre], bwd[centre]])),
                    None => Ok(fwd[centre]),
                }
            }
        }
    }

    /// Same-padded convolution over `n` sequences of length `len`. The input
    /// holds positions `inp.0..inp.1` of each sequence; the output holds
    /// `out.0..out.1`.
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer: &Layer,
        x: Var,
        n: usize,
        len: usize,
        inp: (usize, usize),
        out: (usize, usize),
    ) -> Var {
        let Layer::Conv { window, w, b } = layer else { unreachable!() };
        let half = (*window / 2) as isize;
        let in_w = inp.1 - inp.0;
        let mut idx = Vec::with_capacity(n * (out.1 - out.0));
        for i in 0..n {
            for p in out.0..out.1 {
                idx.push(
                    (-half..=half)
                        .map(|o| {
                            let q = p as isize + o;
                            (q >= inp.0 as isize && q < inp.1.min(len) as isize)
                                .then(|| i * in_w + (q as usize - inp.0))
                        })
                        .collect(),
                );
            }
        }
        let (w, b) = (g.param(store, *w), g.param(store, *b));
        let cols = g.gather(x, idx);
        let h = g.matmul(cols, w);
        let h = g.add(h, b);
        g.tanh(h)
    }

    fn recurrent(&self, g: &mut Graph, store: &ParamStore, mut xs: Vec<Var>) -> (Vec<Var>, Option<Vec<Var>>) {
        let mut last = (Vec::new(), None);
        for layer in &self.layers {
            let Layer::Recurrent { fwd, bwd } = layer else { unreachable!() };
            let f = LstmVars::bind(g, store, fwd).run(g, &xs, false);
            let b = bwd.as_ref().map(|p| LstmVars::bind(g, store, p).run(g, &xs, true));
            xs = match &b {
                Some(b) => f.iter().zip(b).map(|(&hf, &hb)| g.concat_cols(&[hf, hb])).collect(),
                None => f.clone(),
            };
            last = (f, b);
        }
        last
    }
}
