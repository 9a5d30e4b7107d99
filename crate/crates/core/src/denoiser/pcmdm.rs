//! Past-conditioned transformer denoiser.
//!
//! Token stream: `[condition token] ++ [past token]? ++ [frame tokens]`.
//! The condition token is the label embedding plus a learned projection of a
//! sinusoidal timestep embedding; the optional past token is one affine map
//! of the flattened `h × d` history. Blocks are pre-norm self-attention and
//! feed-forward with residuals; the clean frames are read off the last `L`
//! positions.

use serde::{Deserialize, Serialize};

use super::{Condition, Denoiser, PastContext};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, SeedStream, Tape, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub frame_dim: usize,
    pub token_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// History length `h` fed to the past encoder; 0 builds a model without one.
    pub past_frames: usize,
    pub num_labels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_dim: 4,
            token_dim: 64,
            blocks: 2,
            heads: 4,
            ff_dim: 128,
            past_frames: 2,
            num_labels: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.frame_dim", self.frame_dim),
            ("model.token_dim", self.token_dim),
            ("model.heads", self.heads),
            ("model.ff_dim", self.ff_dim),
            ("model.num_labels", self.num_labels),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.token_dim % self.heads != 0 {
            return Err(Error::config("model.heads", "must divide model.token_dim"));
        }
        if self.token_dim % 2 != 0 {
            return Err(Error::config("model.token_dim", "must be even"));
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_layout(&self) -> Vec<(String, (usize, usize))> {
        let (d, k, f) = (self.frame_dim, self.token_dim, self.ff_dim);
        let mut out = vec![
            ("label_embedding".to_string(), (self.num_labels + 1, k)),
            ("time.w1".into(), (k, k)),
            ("time.b1".into(), (1, k)),
            ("time.w2".into(), (k, k)),
            ("time.b2".into(), (1, k)),
        ];
        if self.past_frames > 0 {
            out.push(("past.w".into(), (self.past_frames * d, k)));
            out.push(("past.b".into(), (1, k)));
        }
        out.push(("input.w".into(), (d, k)));
        out.push(("input.b".into(), (1, k)));
        for b in 0..self.blocks {
            let p = |n: &str| format!("blocks.{b}.{n}");
            out.extend([
                (p("ln1.gamma"), (1, k)),
                (p("ln1.beta"), (1, k)),
                (p("attn.wq"), (k, k)),
                (p("attn.bq"), (1, k)),
                // No key bias: it shifts every score in a row equally and softmax drops it.
                (p("attn.wk"), (k, k)),
                (p("attn.wv"), (k, k)),
                (p("attn.bv"), (1, k)),
                (p("attn.wo"), (k, k)),
                (p("attn.bo"), (1, k)),
                (p("ln2.gamma"), (1, k)),
                (p("ln2.beta"), (1, k)),
                (p("ff.w1"), (k, f)),
                (p("ff.b1"), (1, f)),
                (p("ff.w2"), (f, k)),
                (p("ff.b2"), (1, k)),
            ]);
        }
        out.push(("final_ln.gamma".into(), (1, k)));
        out.push(("final_ln.beta".into(), (1, k)));
        out.push(("output.w".into(), (k, d)));
        out.push(("output.b".into(), (1, d)));
        out
    }
}

/// Sinusoidal embedding of a scalar position, `dim` wide (sin half, cos half).
fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

fn positional_table(n: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(n, dim);
    for r in 0..n {
        m.row_mut(r).copy_from_slice(&sinusoid(r as f64, dim));
    }
    m
}

/// The network: configuration plus named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Pcmdm {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Matrix>,
    normalizer: Option<Normalizer>,
}

/// Parameter handles on a tape, consumed in layout order.
struct Handles {
    vars: Vec<Var>,
    next: usize,
}

impl Handles {
    fn take(&mut self) -> Var {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }
}

impl Pcmdm {
    /// Fresh parameters: weights ~ N(0, 1/fan_in), biases zero, norm scales one.
    pub fn init(config: ModelConfig, rng: &mut SeedStream) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, (r, c)) in layout {
            let m = if name.ends_with("gamma") {
                Matrix::filled(r, c, 1.0)
            } else if name.ends_with(".beta") || r == 1 {
                Matrix::zeros(r, c)
            } else if name == "label_embedding" {
                rng.gaussian(r, c).scale(0.5)
            } else {
                rng.gaussian(r, c).scale(1.0 / (r as f64).sqrt())
            };
            names.push(name);
            params.push(m);
        }
        Ok(Self {
            config,
            names,
            params,
            normalizer: None,
        })
    }

    /// Rebuilds a model from named tensors; names and shapes must match the layout.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Matrix)>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != named.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((want, shape), (name, m)) in layout.into_iter().zip(named) {
            if want != name || m.shape() != shape {
                return Err(Error::Shape(format!(
                    "parameter `{name}` {:?} does not match layout `{want}` {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::Numeric(format!("parameter `{name}` is not finite")));
            }
            names.push(name);
            params.push(m);
        }
        Ok(Self {
            config,
            names,
            params,
            normalizer: None,
        })
    }

    /// Attaches the data normalization the model was trained under.
    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Result<Self> {
        normalizer.validate()?;
        if normalizer.dim() != self.config.frame_dim {
            return Err(Error::Shape(format!(
                "normalizer is {} wide, frames are {}",
                normalizer.dim(),
                self.config.frame_dim
            )));
        }
        self.normalizer = Some(normalizer);
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    fn check_inputs(&self, x_t: &Matrix, cond: Condition, past: &PastContext) -> Result<()> {
        if x_t.rows() == 0 {
            return Err(Error::Invalid("cannot denoise an empty block".into()));
        }
        if x_t.cols() != self.config.frame_dim {
            return Err(Error::Shape(format!(
                "frames are {} wide, model expects {}",
                x_t.cols(),
                self.config.frame_dim
            )));
        }
        self.check_condition(cond)?;
        if let Some(p) = past.frames() {
            if self.config.past_frames == 0 {
                return Err(Error::Shape("model has no past encoder".into()));
            }
            if p.shape() != (self.config.past_frames, self.config.frame_dim) {
                return Err(Error::Shape(format!(
                    "past context is {}x{}, model expects {}x{}",
                    p.rows(),
                    p.cols(),
                    self.config.past_frames,
                    self.config.frame_dim
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns the `L × d` output node.
    /// Parameter `i` of [`Pcmdm::params`] is tape slot `i`.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x_t: &Matrix,
        t: usize,
        cond: Condition,
        past: &PastContext,
    ) -> Result<Var> {
        self.check_inputs(x_t, cond, past)?;
        let cfg = &self.config;
        let k = cfg.token_dim;
        let vars: Vec<Var> = self.params.iter().enumerate().map(|(i, p)| tape.param(p, i)).collect();
        let mut h = Handles { vars, next: 0 };

        let label_table = h.take();
        let (tw1, tb1, tw2, tb2) = (h.take(), h.take(), h.take(), h.take());
        let time_in = tape.constant(Matrix::row_vector(&sinusoid(t as f64, k)));
        let time_hidden = tape.affine(time_in, tw1, tb1);
        let time_act = tape.gelu(time_hidden);
        let time_emb = tape.affine(time_act, tw2, tb2);
        let label_row = match cond {
            Condition::Label(l) => l,
            Condition::Unconditional => cfg.num_labels,
        };
        let label_emb = tape.select_row(label_table, label_row);
        let cond_token = tape.add(label_emb, time_emb);

        let mut tokens = vec![cond_token];
        if cfg.past_frames > 0 {
            let (pw, pb) = (h.take(), h.take());
            if let Some(p) = past.frames() {
                let flat = tape.constant(p.reshape(1, p.len())?);
                tokens.push(tape.affine(flat, pw, pb));
            }
        }
        let (iw, ib) = (h.take(), h.take());
        let frames = tape.constant(x_t.clone());
        tokens.push(tape.affine(frames, iw, ib));
        let stacked = tape.concat_rows(&tokens);
        let n = tape.value(stacked).rows();
        let pos = tape.constant(positional_table(n, k));
        let mut x = tape.add(stacked, pos);

        let dh = k / cfg.heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for _ in 0..cfg.blocks {
            let (g1, b1) = (h.take(), h.take());
            let (wq, bq, wk, wv, bv, wo, bo) =
                (h.take(), h.take(), h.take(), h.take(), h.take(), h.take(), h.take());
            let (g2, b2) = (h.take(), h.take());
            let (fw1, fb1, fw2, fb2) = (h.take(), h.take(), h.take(), h.take());

            let a = tape.layer_norm(x, g1, b1, LN_EPS);
            let q = tape.affine(a, wq, bq);
            let kk = tape.matmul(a, wk);
            let v = tape.affine(a, wv, bv);
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = tape.slice_cols(q, hd * dh, dh);
                let kh = tape.slice_cols(kk, hd * dh, dh);
                let vh = tape.slice_cols(v, hd * dh, dh);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, inv_sqrt);
                let attn = tape.softmax(scores);
                heads.push(tape.matmul(attn, vh));
            }
            let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
            let attn_out = tape.affine(merged, wo, bo);
            x = tape.add(x, attn_out);

            let m = tape.layer_norm(x, g2, b2, LN_EPS);
            let f1 = tape.affine(m, fw1, fb1);
            let f1 = tape.gelu(f1);
            let f2 = tape.affine(f1, fw2, fb2);
            x = tape.add(x, f2);
        }
        let (fg, fbeta) = (h.take(), h.take());
        let (ow, ob) = (h.take(), h.take());
        debug_assert_eq!(h.next, h.vars.len());
        let normed = tape.layer_norm(x, fg, fbeta, LN_EPS);
        let frame_rows = tape.slice_rows(normed, n - x_t.rows(), x_t.rows());
        Ok(tape.affine(frame_rows, ow, ob))
    }
}

impl Denoiser for Pcmdm {
    fn kind(&self) -> &'static str {
        "pcmdm"
    }

    fn frame_dim(&self) -> usize {
        self.config.frame_dim
    }

    fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    fn past_frames(&self) -> usize {
        self.config.past_frames
    }

    fn predict_x0(&self, x_t: &Matrix, t: usize, cond: Condition, past: &PastContext) -> Result<Matrix> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x_t, t, cond, past)?;
        let value = tape.value(out).clone();
        if !value.is_finite() {
            return Err(Error::Numeric("denoiser produced non-finite output".into()));
        }
        Ok(value)
    }

    fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }
}
