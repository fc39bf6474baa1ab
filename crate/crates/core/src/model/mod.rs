//! Projection heads and transition networks with analytic gradients.
//!
//! Parameters are stored as `f32` in one flat [`ParamVector`]; every
//! computation runs on an `f64` copy ([`Weights`]).

mod checkpoint;
pub mod mat;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CheckpointHeader};
use mat::*;
pub use mat::Mat;

pub const HIDDEN: usize = 128;
pub const PROJ_LAYERS: usize = 4;
pub const FILM_LAYERS: usize = 2;
pub const PARAM_BUDGET: usize = 500_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("transition network has {count} parameters, budget is {PARAM_BUDGET}")]
    BudgetExceeded { count: usize },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Hyper,
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "hyper" => Ok(Arch::Hyper),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter storage with named segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub data: Vec<f32>,
    pub segments: Vec<Segment>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.segment(name).map(|s| &self.data[s.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let r = self.segment(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| f64::from(x)).collect()
    }

    /// Overwrites storage from an `f64` view, rounding to `f32`.
    pub fn assign_f64(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.data.len());
        for (d, s) in self.data.iter_mut().zip(v) {
            *d = *s as f32;
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIx {
    pub w: usize,
    pub b: Option<usize>,
    pub inp: usize,
    pub out: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LnIx {
    pub g: usize,
    pub b: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct HeadIx {
    pub lin: Vec<LinearIx>,
    pub ln: Vec<LnIx>,
}

#[derive(Debug, Clone)]
pub enum TransIx {
    Mlp {
        l1: LinearIx,
        l2: LinearIx,
        l3: LinearIx,
        res: LinearIx,
        ln: LnIx,
    },
    Hyper {
        g1: LinearIx,
        g2: LinearIx,
        trunk: Vec<LinearIx>,
        ln: LnIx,
    },
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub arch: Arch,
    pub d_state: usize,
    pub d_action: usize,
    pub state_head: HeadIx,
    pub action_head: HeadIx,
    pub trans: TransIx,
    pub segments: Vec<Segment>,
    pub state_head_range: Range<usize>,
    pub action_head_range: Range<usize>,
    pub trans_range: Range<usize>,
    pub total: usize,
}

struct Builder {
    segments: Vec<Segment>,
    total: usize,
}

impl Builder {
    fn alloc(&mut self, name: String, len: usize) -> usize {
        let offset = self.total;
        self.segments.push(Segment { name, offset, len });
        self.total += len;
        offset
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize, bias: bool) -> LinearIx {
        let w = self.alloc(format!("{name}.w"), inp * out);
        let b = bias.then(|| self.alloc(format!("{name}.b"), out));
        LinearIx { w, b, inp, out }
    }

    fn ln(&mut self, name: &str, dim: usize) -> LnIx {
        let g = self.alloc(format!("{name}.g"), dim);
        let b = self.alloc(format!("{name}.b"), dim);
        LnIx { g, b, dim }
    }

    fn head(&mut self, name: &str, d_in: usize) -> HeadIx {
        let mut lin = Vec::new();
        let mut ln = Vec::new();
        for i in 0..PROJ_LAYERS {
            let inp = if i == 0 { d_in } else { HIDDEN };
            lin.push(self.linear(&format!("{name}.{i}"), inp, HIDDEN, true));
            if i + 1 < PROJ_LAYERS {
                ln.push(self.ln(&format!("{name}.{i}.ln"), HIDDEN));
            }
        }
        HeadIx { lin, ln }
    }
}

impl Layout {
    pub fn new(arch: Arch, d_state: usize, d_action: usize) -> Self {
        let mut b = Builder {
            segments: Vec::new(),
            total: 0,
        };
        let state_head = b.head("state_head", d_state);
        let s_end = b.total;
        let action_head = b.head("action_head", d_action);
        let a_end = b.total;
        let trans = match arch {
            Arch::Mlp => TransIx::Mlp {
                l1: b.linear("mlp.1", 2 * HIDDEN, HIDDEN, true),
                l2: b.linear("mlp.2", HIDDEN, HIDDEN, true),
                l3: b.linear("mlp.3", HIDDEN, HIDDEN, true),
                res: b.linear("mlp.res", HIDDEN, HIDDEN, false),
                ln: b.ln("mlp.ln", HIDDEN),
            },
            Arch::Hyper => TransIx::Hyper {
                g1: b.linear("hyper.gen.1", HIDDEN, HIDDEN, true),
                g2: b.linear("hyper.gen.2", HIDDEN, 2 * FILM_LAYERS * HIDDEN, true),
                trunk: (0..FILM_LAYERS)
                    .map(|i| b.linear(&format!("hyper.trunk.{i}"), HIDDEN, HIDDEN, true))
                    .collect(),
                ln: b.ln("hyper.ln", HIDDEN),
            },
        };
        Layout {
            arch,
            d_state,
            d_action,
            state_head,
            action_head,
            trans,
            segments: b.segments,
            state_head_range: 0..s_end,
            action_head_range: s_end..a_end,
            trans_range: a_end..b.total,
            total: b.total,
        }
    }

    pub fn transition_param_count(&self) -> usize {
        self.trans_range.len()
    }

    /// Segments whose names mark them as weight matrices, with fan-in.
    fn weight_fan_in(&self) -> Vec<(Range<usize>, usize)> {
        let mut out = Vec::new();
        let mut push = |l: &LinearIx| out.push((l.w..l.w + l.inp * l.out, l.inp));
        for h in [&self.state_head, &self.action_head] {
            h.lin.iter().for_each(&mut push);
        }
        match &self.trans {
            TransIx::Mlp { l1, l2, l3, res, .. } => [l1, l2, l3, res].into_iter().for_each(push),
            TransIx::Hyper { g1, g2, trunk, .. } => {
                push(g1);
                push(g2);
                trunk.iter().for_each(push);
            }
        }
        out
    }

    fn ln_gains(&self) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = self
            .state_head
            .ln
            .iter()
            .chain(&self.action_head.ln)
            .map(|l| l.g..l.g + l.dim)
            .collect();
        let ln = match &self.trans {
            TransIx::Mlp { ln, .. } | TransIx::Hyper { ln, .. } => ln,
        };
        out.push(ln.g..ln.g + ln.dim);
        out
    }
}

#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub layout: Layout,
    pub params: ParamVector,
    pub seed: u64,
}

impl TransitionModel {
    /// Kaiming-uniform weights (bound √(6/fan_in)), zero biases, LayerNorm
    /// gain 1 and bias 0.
    pub fn init(arch: Arch, d_state: usize, d_action: usize, seed: u64) -> Result<Self, ModelError> {
        if d_state == 0 || d_action == 0 {
            return Err(ModelError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let layout = Layout::new(arch, d_state, d_action);
        let count = layout.transition_param_count();
        if count >= PARAM_BUDGET {
            return Err(ModelError::BudgetExceeded { count });
        }
        let mut data = vec![0.0f32; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (range, fan_in) in layout.weight_fan_in() {
            let bound = (6.0 / fan_in as f64).sqrt();
            for x in &mut data[range] {
                *x = rng.random_range(-bound..bound) as f32;
            }
        }
        for range in layout.ln_gains() {
            data[range].fill(1.0);
        }
        let params = ParamVector {
            data,
            segments: layout.segments.clone(),
        };
        Ok(TransitionModel {
            layout,
            params,
            seed,
        })
    }

    pub fn arch(&self) -> Arch {
        self.layout.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn transition_param_count(&self) -> usize {
        self.layout.transition_param_count()
    }

    pub fn weights(&self) -> Weights<'_> {
        Weights {
            layout: &self.layout,
            p: self.params.to_f64(),
        }
    }

    /// Single-example forward: `(h_s, h_a, ĥ)`.
    pub fn forward(&self, z_s: &[f32], z_a: &[f32]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), ModelError> {
        let w = self.weights();
        let zs = Mat::from_rows(&[z_s.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()], z_s.len());
        let za = Mat::from_rows(&[z_a.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()], z_a.len());
        let hs = w.project_state(&zs)?;
        let ha = w.project_action(&za)?;
        let hh = w.transition(&hs, &ha)?;
        Ok((hs.data, ha.data, hh.data))
    }
}

/// `f64` view of a model's parameters.
#[derive(Debug, Clone)]
pub struct Weights<'a> {
    pub layout: &'a Layout,
    pub p: Vec<f64>,
}

pub struct HeadCache {
    inputs: Vec<Mat>,
    ln: Vec<LnCache>,
    ln_out: Vec<Mat>,
}

pub enum TransCache {
    Mlp {
        x: Mat,
        a1: Mat,
        u1: Mat,
        a2: Mat,
        u2: Mat,
        hs: Mat,
        ln: LnCache,
    },
    Hyper {
        ha: Mat,
        c1: Mat,
        a1: Mat,
        film: Mat,
        inputs: Vec<Mat>,
        z: Vec<Mat>,
        m: Vec<Mat>,
        ln: LnCache,
    },
}

fn check(m: Mat, what: &'static str) -> Result<Mat, ModelError> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(ModelError::NonFiniteActivation(what))
    }
}

impl<'a> Weights<'a> {
    pub fn new(layout: &'a Layout, p: Vec<f64>) -> Self {
        assert_eq!(p.len(), layout.total);
        Weights { layout, p }
    }

    fn lin(&self, ix: &LinearIx, x: &Mat) -> Mat {
        let w = &self.p[ix.w..ix.w + ix.inp * ix.out];
        let b = ix.b.map(|b| &self.p[b..b + ix.out]);
        linear_forward(x, w, b, ix.out)
    }

    fn lin_bwd(&self, ix: &LinearIx, x: &Mat, dy: &Mat, g: &mut [f64]) -> Mat {
        if let Some(b) = ix.b {
            let db = &mut g[b..b + ix.out];
            for r in 0..dy.rows {
                for (acc, d) in db.iter_mut().zip(dy.row(r)) {
                    *acc += d;
                }
            }
        }
        let w = &self.p[ix.w..ix.w + ix.inp * ix.out];
        linear_backward(x, w, dy, &mut g[ix.w..ix.w + ix.inp * ix.out], None)
    }

    fn ln_fwd(&self, ix: &LnIx, x: &Mat) -> (Mat, LnCache) {
        layernorm_forward(x, &self.p[ix.g..ix.g + ix.dim], &self.p[ix.b..ix.b + ix.dim])
    }

    fn ln_bwd(&self, ix: &LnIx, cache: &LnCache, dy: &Mat, g: &mut [f64]) -> Mat {
        debug_assert_eq!(ix.b, ix.g + ix.dim);
        let (dg, db) = g[ix.g..ix.b + ix.dim].split_at_mut(ix.dim);
        layernorm_backward(cache, &self.p[ix.g..ix.g + ix.dim], dy, dg, db)
    }

    fn head_forward(&self, head: &HeadIx, z: &Mat) -> (Mat, HeadCache) {
        let mut cache = HeadCache {
            inputs: Vec::with_capacity(PROJ_LAYERS),
            ln: Vec::with_capacity(PROJ_LAYERS - 1),
            ln_out: Vec::with_capacity(PROJ_LAYERS - 1),
        };
        let mut h = z.clone();
        for (i, lin) in head.lin.iter().enumerate() {
            let a = self.lin(lin, &h);
            cache.inputs.push(h);
            if i < head.ln.len() {
                let (l, c) = self.ln_fwd(&head.ln[i], &a);
                h = gelu_forward(&l);
                cache.ln.push(c);
                cache.ln_out.push(l);
            } else {
                h = a;
            }
        }
        (h, cache)
    }

    fn head_backward(&self, head: &HeadIx, cache: &HeadCache, dout: &Mat, g: &mut [f64]) -> Mat {
        let mut d = dout.clone();
        for i in (0..head.lin.len()).rev() {
            if i < head.ln.len() {
                let dl = gelu_backward(&cache.ln_out[i], &d);
                d = self.ln_bwd(&head.ln[i], &cache.ln[i], &dl, g);
            }
            d = self.lin_bwd(&head.lin[i], &cache.inputs[i], &d, g);
        }
        d
    }

    fn check_dim(z: &Mat, expected: usize) -> Result<(), ModelError> {
        if z.cols != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                found: z.cols,
            });
        }
        Ok(())
    }

    pub fn project_state_cached(&self, z: &Mat) -> Result<(Mat, HeadCache), ModelError> {
        Self::check_dim(z, self.layout.d_state)?;
        let (h, c) = self.head_forward(&self.layout.state_head, z);
        Ok((check(h, "state head")?, c))
    }

    pub fn project_action_cached(&self, z: &Mat) -> Result<(Mat, HeadCache), ModelError> {
        Self::check_dim(z, self.layout.d_action)?;
        let (h, c) = self.head_forward(&self.layout.action_head, z);
        Ok((check(h, "action head")?, c))
    }

    pub fn project_state(&self, z: &Mat) -> Result<Mat, ModelError> {
        self.project_state_cached(z).map(|(h, _)| h)
    }

    pub fn project_action(&self, z: &Mat) -> Result<Mat, ModelError> {
        self.project_action_cached(z).map(|(h, _)| h)
    }

    pub fn state_head_backward(&self, cache: &HeadCache, dh: &Mat, g: &mut [f64]) -> Mat {
        self.head_backward(&self.layout.state_head, cache, dh, g)
    }

    pub fn action_head_backward(&self, cache: &HeadCache, dh: &Mat, g: &mut [f64]) -> Mat {
        self.head_backward(&self.layout.action_head, cache, dh, g)
    }

    pub fn transition_cached(&self, hs: &Mat, ha: &Mat) -> Result<(Mat, TransCache), ModelError> {
        assert_eq!(hs.rows, ha.rows);
        let (out, cache) = match &self.layout.trans {
            TransIx::Mlp { l1, l2, l3, res, ln } => {
                let x = hs.hcat(ha);
                let a1 = self.lin(l1, &x);
                let u1 = gelu_forward(&a1);
                let a2 = self.lin(l2, &u1);
                let u2 = gelu_forward(&a2);
                let mut s = self.lin(l3, &u2);
                s.add_assign(&self.lin(res, hs));
                let (out, lnc) = self.ln_fwd(ln, &s);
                (
                    out,
                    TransCache::Mlp {
                        x,
                        a1,
                        u1,
                        a2,
                        u2,
                        hs: hs.clone(),
                        ln: lnc,
                    },
                )
            }
            TransIx::Hyper { g1, g2, trunk, ln } => {
                let c1 = self.lin(g1, ha);
                let a1 = gelu_forward(&c1);
                let film = self.lin(g2, &a1);
                let mut u = hs.clone();
                let (mut inputs, mut zs, mut ms) = (Vec::new(), Vec::new(), Vec::new());
                for (i, t) in trunk.iter().enumerate() {
                    let z = self.lin(t, &u);
                    let mut m = z.clone();
                    for r in 0..m.rows {
                        let f = &film.row(r)[i * 2 * HIDDEN..(i + 1) * 2 * HIDDEN];
                        for (j, v) in m.row_mut(r).iter_mut().enumerate() {
                            *v = (1.0 + f[j]) * *v + f[HIDDEN + j];
                        }
                    }
                    inputs.push(u);
                    u = gelu_forward(&m);
                    zs.push(z);
                    ms.push(m);
                }
                let (out, lnc) = self.ln_fwd(ln, &u);
                (
                    out,
                    TransCache::Hyper {
                        ha: ha.clone(),
                        c1,
                        a1,
                        film,
                        inputs,
                        z: zs,
                        m: ms,
                        ln: lnc,
                    },
                )
            }
        };
        Ok((check(out, "transition")?, cache))
    }

    pub fn transition(&self, hs: &Mat, ha: &Mat) -> Result<Mat, ModelError> {
        self.transition_cached(hs, ha).map(|(h, _)| h)
    }

    /// Returns `(dh_s, dh_a)`.
    pub fn transition_backward(&self, cache: &TransCache, dout: &Mat, g: &mut [f64]) -> (Mat, Mat) {
        match (&self.layout.trans, cache) {
            (
                TransIx::Mlp { l1, l2, l3, res, ln },
                TransCache::Mlp {
                    x,
                    a1,
                    u1,
                    a2,
                    u2,
                    hs,
                    ln: lnc,
                },
            ) => {
                let ds = self.ln_bwd(ln, lnc, dout, g);
                let dhs_res = self.lin_bwd(res, hs, &ds, g);
                let du2 = self.lin_bwd(l3, u2, &ds, g);
                let da2 = gelu_backward(a2, &du2);
                let du1 = self.lin_bwd(l2, u1, &da2, g);
                let da1 = gelu_backward(a1, &du1);
                let dx = self.lin_bwd(l1, x, &da1, g);
                let (mut dhs, dha) = dx.hsplit(HIDDEN);
                dhs.add_assign(&dhs_res);
                (dhs, dha)
            }
            (
                TransIx::Hyper { g1, g2, trunk, ln },
                TransCache::Hyper {
                    ha,
                    c1,
                    a1,
                    film,
                    inputs,
                    z,
                    m,
                    ln: lnc,
                },
            ) => {
                let mut du = self.ln_bwd(ln, lnc, dout, g);
                let mut dfilm = Mat::zeros(film.rows, film.cols);
                for i in (0..trunk.len()).rev() {
                    let dm = gelu_backward(&m[i], &du);
                    let mut dz = dm.clone();
                    for r in 0..dm.rows {
                        let f = &film.row(r)[i * 2 * HIDDEN..(i + 1) * 2 * HIDDEN];
                        let zr = z[i].row(r);
                        let dmr = dm.row(r);
                        let df = &mut dfilm.row_mut(r)[i * 2 * HIDDEN..(i + 1) * 2 * HIDDEN];
                        for j in 0..HIDDEN {
                            df[j] = dmr[j] * zr[j];
                            df[HIDDEN + j] = dmr[j];
                        }
                        for (j, v) in dz.row_mut(r).iter_mut().enumerate() {
                            *v *= 1.0 + f[j];
                        }
                    }
                    du = self.lin_bwd(&trunk[i], &inputs[i], &dz, g);
                }
                let da1 = self.lin_bwd(g2, a1, &dfilm, g);
                let dc1 = gelu_backward(c1, &da1);
                let dha = self.lin_bwd(g1, ha, &dc1, g);
                (du, dha)
            }
            _ => unreachable!("cache built by a different architecture"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_transition_count_is_82560() {
        let m = TransitionModel::init(Arch::Mlp, 256, 256, 1).unwrap();
        assert_eq!(m.transition_param_count(), 82_560);
        // Transition count does not depend on encoder width.
        let m = TransitionModel::init(Arch::Mlp, 768, 32, 1).unwrap();
        assert_eq!(m.transition_param_count(), 82_560);
    }

    #[test]
    fn hyper_transition_count_under_budget() {
        let m = TransitionModel::init(Arch::Hyper, 256, 256, 1).unwrap();
        // gen: 128·128+128 + 128·512+512; trunk: 2·(128·128+128); LN: 256.
        assert_eq!(m.transition_param_count(), 16_512 + 66_048 + 33_024 + 256);
        assert!(m.transition_param_count() < PARAM_BUDGET);
    }

    #[test]
    fn init_is_seeded() {
        let a = TransitionModel::init(Arch::Mlp, 16, 16, 9).unwrap();
        let b = TransitionModel::init(Arch::Mlp, 16, 16, 9).unwrap();
        let c = TransitionModel::init(Arch::Mlp, 16, 16, 10).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        assert!(a.params.get("mlp.1.b").unwrap().iter().all(|&x| x == 0.0));
        assert!(a.params.get("mlp.ln.g").unwrap().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn zero_transition_weights_give_ln_bias() {
        let mut m = TransitionModel::init(Arch::Mlp, 8, 8, 3).unwrap();
        let r = m.layout.trans_range.clone();
        m.params.data[r].fill(0.0);
        let bias: Vec<f32> = (0..HIDDEN).map(|i| i as f32 * 0.01).collect();
        m.params.get_mut("mlp.ln.b").unwrap().copy_from_slice(&bias);
        let (_, _, hh) = m.forward(&[0.3; 8], &[-0.1; 8]).unwrap();
        for (a, b) in hh.iter().zip(&bias) {
            assert!((a - f64::from(*b)).abs() < 1e-12);
        }
    }

    #[test]
    fn outputs_have_hidden_width_and_are_repeatable() {
        for arch in [Arch::Mlp, Arch::Hyper] {
            let m = TransitionModel::init(arch, 256, 256, 5).unwrap();
            let z: Vec<f32> = (0..256).map(|i| ((i as f32) * 0.37).sin() / 8.0).collect();
            let a = m.forward(&z, &z).unwrap();
            assert_eq!(a.0.len(), HIDDEN);
            assert_eq!(a.2.len(), HIDDEN);
            assert_eq!(a, m.forward(&z, &z).unwrap());
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let m = TransitionModel::init(Arch::Mlp, 8, 8, 3).unwrap();
        assert!(matches!(
            m.forward(&[0.0; 7], &[0.0; 8]),
            Err(ModelError::DimensionMismatch { expected: 8, found: 7 })
        ));
    }
}
