//! Tokenizers: byte-level and byte-pair-encoding for model input, plus the
//! regex word tokenizer used by the text metrics and BPE pre-tokenization.
//!
//! Both model tokenizers share the special ids BOS=256, EOS=257, PAD=258 and
//! report a padded vocabulary size so head shapes depend only on config, not
//! on how many merges a particular training corpus produced.

mod bpe;
mod byte;
mod words;

pub use bpe::{BpeTokenizer, FIRST_MERGE_ID};
pub use byte::{ByteTokenizer, BYTE_VOCAB_SIZE};
pub use words::{word_spans, word_tokenize};

use crate::error::{Error, Result};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;

/// Common interface for the byte and BPE tokenizers.
pub trait Tokenizer: Send + Sync {
    /// Total id-table size, including specials and reserved padding ids.
    fn vocab_size(&self) -> usize;

    /// Content ids only; callers frame with BOS/EOS as needed.
    fn encode(&self, text: &str) -> Result<Vec<u32>>;

    /// Raw bytes for one id. `Ok(None)` marks a special id (skipped when
    /// decoding); reserved or out-of-range ids are an error.
    fn id_bytes(&self, id: u32) -> Result<Option<Vec<u8>>>;

    fn bos_id(&self) -> u32 {
        BOS
    }

    fn eos_id(&self) -> u32 {
        EOS
    }

    fn pad_id(&self) -> u32 {
        PAD
    }

    /// Strict inverse of `encode`: specials are stripped, reserved ids and
    /// invalid UTF-8 are errors.
    fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(b) = self.id_bytes(id)? {
                bytes.extend_from_slice(&b);
            }
        }
        String::from_utf8(bytes)
            .map_err(|e| Error::Tokenize(format!("decoded bytes are not valid UTF-8: {e}")))
    }

    /// Forgiving decoder for model samples: reserved ids and broken UTF-8
    /// become U+FFFD instead of failing the whole sequence.
    fn decode_lossy(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.id_bytes(id) {
                Ok(Some(b)) => bytes.extend_from_slice(&b),
                Ok(None) => {}
                Err(_) => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}
