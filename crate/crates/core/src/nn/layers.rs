use rand::Rng;

use super::graph::{Graph, Mask, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        Self::with_std(store, name, d_in, d_out, 1.0 / (d_in as f64).sqrt(), rng)
    }

    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let w = store.add(&format!("{name}.w"), Tensor::randn(d_in, d_out, std, rng))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(1, d_out))?;
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    pub fn apply_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        super::kernels::linear_row(x, &store.get(self.w).data, &store.get(self.b).data)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self, NnError> {
        let g = store.add(&format!("{name}.g"), Tensor::full(1, d, 1.0))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(1, d))?;
        Ok(Self { g, b })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let (gv, bv) = (g.param(self.g), g.param(self.b));
        g.layer_norm(x, gv, bv)
    }

    pub fn apply_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        super::kernels::layer_norm_row(x, &store.get(self.g).data, &store.get(self.b).data)
    }
}

/// Two-layer GELU perceptron.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            l1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, rng)?,
            l2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let h = self.l1.forward(g, x)?;
        let h = g.gelu(h);
        self.l2.forward(g, h)
    }

    pub fn apply_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.l1.apply_row(store, x).into_iter().map(super::kernels::gelu).collect();
        self.l2.apply_row(store, &h)
    }
}

/// `x + mlp(ln(x))`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualMlp {
    pub ln: LayerNorm,
    pub mlp: Mlp,
}

impl ResidualMlp {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        Ok(Self {
            ln: LayerNorm::new(store, &format!("{name}.ln"), d)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, 2 * d, d, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let h = self.ln.forward(g, x)?;
        let h = self.mlp.forward(g, h)?;
        g.add(x, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(NnError::Shape(format!("{name}: width {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d, d, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d, d, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d, d, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, xq: Var, xkv: Var, mask: &Mask) -> Result<Var, NnError> {
        let q = self.q.forward(g, xq)?;
        let k = self.k.forward(g, xkv)?;
        let v = self.v.forward(g, xkv)?;
        let a = g.attention(q, k, v, self.heads, mask)?;
        self.o.forward(g, a)
    }
}

/// Pre-norm transformer block with causal self-attention.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, 4 * d, d, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: &Mask) -> Result<Var, NnError> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, h, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.add(x, m)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub n: usize,
    pub d: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, n: usize, d: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        let table = store.add(name, Tensor::randn(n, d, 0.5, rng))?;
        Ok(Self { table, n, d })
    }

    pub fn forward(&self, g: &mut Graph, ids: &[Option<usize>]) -> Result<Var, NnError> {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }

    pub fn row<'a>(&self, store: &'a ParamStore, id: usize) -> &'a [f64] {
        store.get(self.table).row_slice(id)
    }
}
