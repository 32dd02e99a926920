use sha2::{Digest, Sha256};

/// Stable token id for APIs that only return token strings: the first four
/// bytes (big-endian) of the SHA-256 of the token text.
pub fn token_id(text: &str) -> u32 {
    let d = Sha256::digest(text.as_bytes());
    u32::from_be_bytes([d[0], d[1], d[2], d[3]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_distinct() {
        assert_eq!(token_id(" True"), token_id(" True"));
        assert_ne!(token_id("True"), token_id(" True"));
    }
}
