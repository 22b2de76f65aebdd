//! Content hashes that tie outputs to the configuration that produced them.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// First 12 hex digits of the SHA-256 of `value`'s JSON encoding.
///
/// Struct fields serialize in declaration order and maps used in configs
/// are `BTreeMap`s, so equal configs always hash equally.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(hex::encode(digest)[..12].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"x": 1, "y": [1.5, 2.0]})).unwrap();
        assert_eq!(a, config_hash(&serde_json::json!({"x": 1, "y": [1.5, 2.0]})).unwrap());
        assert_ne!(a, config_hash(&serde_json::json!({"x": 2, "y": [1.5, 2.0]})).unwrap());
        assert_eq!(a.len(), 12);
    }
}
