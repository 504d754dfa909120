//! Linguistic encoder: learned embedding table plus one self-attention
//! block. All three expression components (global, class, descriptive)
//! share this encoder; the component tag travels with the output so
//! downstream modules can assert which component they were handed.

use super::tokenizer::{Tokenizer, PAD_ID};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Init, Linear, ParamStore};
use ndarray::Array2;

/// Which decomposed component an embedding carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinguisticComponent {
    Global,
    Class,
    Descriptive,
}

/// Graph-bound encoded text: token features `(B, N, D)`, a masked mean
/// pool `(B, D)`, and the validity mask. Padded positions receive exactly
/// zero attention weight in every consumer.
pub struct EncodedText {
    pub tokens: NodeId,
    pub pooled: NodeId,
    /// `(B, N)` with 1.0 at valid positions.
    pub mask: Array2<f64>,
    pub component: LinguisticComponent,
    /// Pre-attention embeddings, exposed for inspection.
    pub embedded: NodeId,
}

/// Parameter names for the text encoder.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub d_model: usize,
    pub max_tokens: usize,
    embed: String,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl TextEncoder {
    pub fn register(
        store: &mut ParamStore,
        vocab_size: usize,
        d_model: usize,
        max_tokens: usize,
    ) -> Self {
        store.register("text.embed", &[vocab_size, d_model], Init::Uniform(0.1));
        let mk = |store: &mut ParamStore, n: &str| {
            Linear::register(store, &format!("text.attn.{n}"), d_model, d_model, true, Init::UniformFanIn)
        };
        Self {
            d_model,
            max_tokens,
            embed: "text.embed".into(),
            q: mk(store, "q"),
            k: mk(store, "k"),
            v: mk(store, "v"),
            o: mk(store, "o"),
        }
    }

    /// Tokenizes and pads a batch to the longest sequence (capped at
    /// `max_tokens`), producing ids plus the validity mask.
    pub fn prepare_batch(
        &self,
        tokenizer: &Tokenizer,
        texts: &[&str],
    ) -> Result<(Array2<usize>, Array2<f64>)> {
        if texts.is_empty() {
            return Err(Error::InvalidInput("empty text batch".into()));
        }
        let mut token_rows: Vec<Vec<usize>> = Vec::with_capacity(texts.len());
        for text in texts {
            let mut ids = tokenizer.tokenize(text);
            ids.truncate(self.max_tokens);
            if ids.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "expression {text:?} produced no tokens"
                )));
            }
            token_rows.push(ids);
        }
        let n = token_rows.iter().map(|r| r.len()).max().unwrap();
        let b = token_rows.len();
        let mut ids = Array2::<usize>::from_elem((b, n), PAD_ID);
        let mut mask = Array2::<f64>::zeros((b, n));
        for (bi, row) in token_rows.iter().enumerate() {
            for (ni, &id) in row.iter().enumerate() {
                ids[[bi, ni]] = id;
                mask[[bi, ni]] = 1.0;
            }
        }
        Ok((ids, mask))
    }

    /// Embeds prepared ids: lookup, one residual self-attention block
    /// (padded keys excluded), then a masked mean pool.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        ids: &Array2<usize>,
        mask: &Array2<f64>,
        component: LinguisticComponent,
    ) -> EncodedText {
        let table = store.bind(graph, &self.embed);
        let embedded = graph.gather_rows(table, ids.clone());
        let q = self.q.bind(graph, store).apply(graph, embedded);
        let k = self.k.bind(graph, store).apply(graph, embedded);
        let v = self.v.bind(graph, store).apply(graph, embedded);
        let kt = graph.transpose_last2(k);
        let scores = graph.bmm(q, kt);
        let scaled = graph.scale(scores, 1.0 / (self.d_model as f64).sqrt());
        let weights = graph.softmax_masked_last(scaled, mask.clone());
        let ctx = graph.bmm(weights, v);
        let proj = self.o.bind(graph, store).apply(graph, ctx);
        let tokens = graph.add(embedded, proj);
        let pooled = graph.masked_mean_tokens(tokens, mask.clone());
        EncodedText {
            tokens,
            pooled,
            mask: mask.clone(),
            component,
            embedded,
        }
    }

    /// One-text convenience wrapper (`B = 1`).
    pub fn encode_text(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        tokenizer: &Tokenizer,
        text: &str,
        component: LinguisticComponent,
    ) -> Result<EncodedText> {
        let (ids, mask) = self.prepare_batch(tokenizer, &[text])?;
        Ok(self.forward(graph, store, &ids, &mask, component))
    }
}
