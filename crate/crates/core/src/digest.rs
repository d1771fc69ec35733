//! Content digests.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a value's canonical JSON form (struct field order, no whitespace).
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("value serializes to JSON"))
}

/// Incremental digest over a sequence of labelled parts.
#[derive(Default)]
pub struct DigestBuilder(Sha256);

impl DigestBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn part(mut self, label: &str, bytes: &[u8]) -> Self {
        self.0.update((label.len() as u64).to_le_bytes());
        self.0.update(label.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn json<T: Serialize + ?Sized>(self, label: &str, value: &T) -> Self {
        let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
        self.part(label, &bytes)
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}
