//! Byte-level tokenizer: ids 0–255 are raw UTF-8 bytes, followed by the
//! specials and a reserved tail that pads the table to 320 ids.

use crate::error::{Error, Result};

use super::{Tokenizer, BOS, EOS, PAD};

/// Padded table size; ids 259..320 are reserved and never emitted.
pub const BYTE_VOCAB_SIZE: usize = 320;

#[derive(Clone, Copy, Debug, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn new() -> Self {
        ByteTokenizer
    }

    /// Encoding with optional BOS/EOS framing. (Input being `&str` already
    /// guarantees valid UTF-8.)
    pub fn encode_with(&self, text: &str, add_bos: bool, add_eos: bool) -> Vec<u32> {
        let mut ids = Vec::with_capacity(text.len() + 2);
        if add_bos {
            ids.push(BOS);
        }
        ids.extend(text.bytes().map(u32::from));
        if add_eos {
            ids.push(EOS);
        }
        ids
    }
}

impl Tokenizer for ByteTokenizer {
    fn vocab_size(&self) -> usize {
        BYTE_VOCAB_SIZE
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        Ok(self.encode_with(text, false, false))
    }

    fn id_bytes(&self, id: u32) -> Result<Option<Vec<u8>>> {
        match id {
            0..=255 => Ok(Some(vec![id as u8])),
            BOS | EOS | PAD => Ok(None),
            _ if (id as usize) < BYTE_VOCAB_SIZE => {
                Err(Error::Tokenize(format!("reserved id {id} has no byte value")))
            }
            _ => Err(Error::Tokenize(format!("id {id} out of range for byte vocab"))),
        }
    }
}
