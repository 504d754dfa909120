//! Visual and linguistic encoders.
//!
//! Both are deliberately small trainable stand-ins behind stable
//! contracts: the visual side produces a four-stage feature pyramid with
//! halving spatial size and a declared channel schedule; the text side
//! produces token embeddings plus a masked mean pool. Any implementation
//! honoring those contracts (for instance, pretrained hierarchical
//! backbones) can be slotted in behind the same interfaces.

mod text;
mod tokenizer;
mod visual;

pub use text::{EncodedText, LinguisticComponent, TextEncoder};
pub use tokenizer::Tokenizer;
pub use visual::VisualEncoder;
