use crate::error::{Error, Result};
use crate::linalg::{argmax, Real};

use super::Model;

impl<T: Real> Model<T> {
    /// Greedy decoding: appends the arg-max token until `eos` is produced
    /// or `max_new` tokens have been generated. Returns the new tokens only.
    pub fn generate(&self, prompt: &[u32], max_new: usize, eos: Option<u32>) -> Result<Vec<u32>> {
        self.generate_guided(prompt, &[], max_new, eos)
    }

    /// Greedy decoding that checks a guessed continuation in a single
    /// forward pass. The result is identical to [`generate`](Self::generate)
    /// for any `draft`; a good draft only makes it faster, since every
    /// correctly guessed token is confirmed without another pass.
    pub fn generate_guided(&self, prompt: &[u32], draft: &[u32], max_new: usize, eos: Option<u32>) -> Result<Vec<u32>> {
        if prompt.is_empty() {
            return Err(Error::Empty("prompt"));
        }
        let v = self.config.vocab_size;
        let max_len = self.config.max_seq_len;
        let mut out: Vec<u32> = Vec::with_capacity(max_new);
        while out.len() < max_new {
            let base = prompt.len() + out.len();
            if base > max_len {
                break;
            }
            let room = (max_new - out.len() - 1).min(max_len - base);
            let mut seq = Vec::with_capacity(base + room);
            seq.extend_from_slice(prompt);
            seq.extend_from_slice(&out);
            seq.extend(draft.iter().skip(out.len()).take(room));
            let logits = self.forward(&seq)?;
            for i in base - 1..seq.len() {
                let tok = argmax(&logits[i * v..(i + 1) * v]) as u32;
                out.push(tok);
                if Some(tok) == eos || out.len() >= max_new {
                    return Ok(out);
                }
                if i + 1 < seq.len() && seq[i + 1] != tok {
                    break;
                }
            }
        }
        Ok(out)
    }
}
