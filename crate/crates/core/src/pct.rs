//! Percent-encoding used for values and free-text header fields.
//!
//! Everything outside `[A-Za-z0-9-._~:/+,]` is written as `%XX` (upper-case hex),
//! which keeps encoded text free of spaces and line breaks.

use alloc::string::String;
use alloc::vec::Vec;

use percent_encoding::{percent_decode, percent_encode, AsciiSet, NON_ALPHANUMERIC};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad percent-encoding at byte {position}")]
pub struct PctError {
    pub position: usize,
}

const ESCAPED: &AsciiSet =
    &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~').remove(b':').remove(b'/').remove(b'+').remove(b',');

fn is_plain(byte: u8) -> bool {
    byte.is_ascii_alphanumeric() || matches!(byte, b'-' | b'.' | b'_' | b'~' | b':' | b'/' | b'+' | b',')
}

pub fn encode(bytes: &[u8]) -> String {
    percent_encode(bytes, ESCAPED).collect()
}

pub fn encode_str(text: &str) -> String {
    encode(text.as_bytes())
}

/// Rejects anything the encoder would not have produced before decoding.
fn check(bytes: &[u8]) -> Result<(), PctError> {
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' if bytes.get(i + 1).is_some_and(u8::is_ascii_hexdigit) && bytes.get(i + 2).is_some_and(u8::is_ascii_hexdigit) => i += 3,
            b if b != b'%' && is_plain(b) => i += 1,
            _ => return Err(PctError { position: i }),
        }
    }
    Ok(())
}

pub fn decode(text: &str) -> Result<Vec<u8>, PctError> {
    check(text.as_bytes())?;
    Ok(percent_decode(text.as_bytes()).collect())
}

pub fn decode_str(text: &str) -> Result<String, PctError> {
    let bytes = decode(text)?;
    String::from_utf8(bytes).map_err(|e| PctError { position: e.utf8_error().valid_up_to() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn escapes_whitespace_and_percent() {
        assert_eq!(encode(b"a b%\r\n"), "a%20b%25%0D%0A");
        assert_eq!(decode("a%20b%25%0d%0A").unwrap(), b"a b%\r\n");
    }

    #[test]
    fn rejects_bad_escapes() {
        assert_eq!(decode("ab%2"), Err(PctError { position: 2 }));
        assert_eq!(decode("%zz"), Err(PctError { position: 0 }));
        assert_eq!(decode("a b"), Err(PctError { position: 1 }));
    }

    proptest! {
        #[test]
        fn roundtrip(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let text = encode(&bytes);
            prop_assert!(!text.contains(' ') && !text.contains('\n'));
            prop_assert_eq!(decode(&text).unwrap(), bytes);
        }
    }
}
