//! Vocabulary, word-vector tables in frozen or trainable mode, cosine
//! nearest-neighbour decoding and a skip-gram trainer.

pub mod sgns;
pub mod table;
pub mod vocab;

pub use sgns::{sgns_initial, train_sgns, SgnsConfig};
pub use table::{
    is_generation_excluded, load_embeddings, nearest_word, similarities, EmbeddingMatrix,
    EmbeddingMode, LoadedEmbeddings,
};
pub use vocab::{Vocabulary, BOS, EOS, NUMBER, NUM_SPECIAL, PAD, SPECIAL_TOKENS, UNK};
