use super::model::Policy;
use crate::nn::kernels::{attend_one, logsumexp};
use crate::nn::ParamStore;

/// Incremental decoder with a per-layer key/value cache. Numerically mirrors `Policy::forward`.
pub struct KvDecoder<'a> {
    policy: &'a Policy,
    store: &'a ParamStore,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
    hidden: Vec<f64>,
}

impl<'a> KvDecoder<'a> {
    pub fn new(policy: &'a Policy, store: &'a ParamStore) -> Self {
        let n = policy.blocks.len();
        Self { policy, store, keys: vec![Vec::new(); n], values: vec![Vec::new(); n], len: 0, hidden: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends one input embedding; returns the final-norm hidden state at that position.
    pub fn push(&mut self, mut x: Vec<f64>) -> &[f64] {
        let s = self.store;
        for (l, blk) in self.policy.blocks.iter().enumerate() {
            let h = blk.ln1.apply_row(s, &x);
            let q = blk.attn.q.apply_row(s, &h);
            self.keys[l].extend(blk.attn.k.apply_row(s, &h));
            self.values[l].extend(blk.attn.v.apply_row(s, &h));
            let a = attend_one(&q, &self.keys[l], &self.values[l], self.len + 1, blk.attn.heads);
            let o = blk.attn.o.apply_row(s, &a);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let h = blk.ln2.apply_row(s, &x);
            let m = blk.mlp.apply_row(s, &h);
            x.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
        }
        self.len += 1;
        self.hidden = self.policy.ln_f.apply_row(s, &x);
        &self.hidden
    }

    /// Hidden state of the most recent position.
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    /// Full logits (V + S) at the most recent position.
    pub fn logits(&self) -> Vec<f64> {
        self.policy.head.apply_row(self.store, &self.hidden)
    }
}

/// log p(token) at temperature 1 over the action columns only.
pub fn action_logprob(logits: &[f64], vocab: usize, token: usize) -> f64 {
    logits[token] - logsumexp(&logits[..vocab])
}
