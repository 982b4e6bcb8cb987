//! Text form of token bytes: printable characters pass through; whitespace,
//! control characters, backslash and invalid UTF-8 become `\xNN`.

use std::fmt::Write;

pub fn escape_token(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for chunk in bytes.utf8_chunks() {
        for c in chunk.valid().chars() {
            let plain = if c.is_ascii() {
                c.is_ascii_graphic() && c != '\\'
            } else {
                !c.is_control() && !c.is_whitespace()
            };
            if plain {
                out.push(c);
            } else {
                let mut buf = [0u8; 4];
                for b in c.encode_utf8(&mut buf).bytes() {
                    let _ = write!(out, "\\x{b:02X}");
                }
            }
        }
        for b in chunk.invalid() {
            let _ = write!(out, "\\x{b:02X}");
        }
    }
    out
}

pub fn unescape_token(text: &str) -> Result<Vec<u8>, String> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            if i + 4 > bytes.len() || bytes[i + 1] != b'x' {
                return Err(format!("bad escape at byte {i} in {text:?}"));
            }
            let hex = std::str::from_utf8(&bytes[i + 2..i + 4]).map_err(|e| e.to_string())?;
            let b = u8::from_str_radix(hex, 16).map_err(|_| format!("bad hex {hex:?} in {text:?}"))?;
            out.push(b);
            i += 4;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn escapes_whitespace_and_backslash() {
        assert_eq!(escape_token(b" a\tb\\"), "\\x20a\\x09b\\x5C");
        assert_eq!(escape_token("é".as_bytes()), "é");
        assert_eq!(escape_token(&[0xC3]), "\\xC3");
    }

    #[test]
    fn rejects_malformed_escape() {
        assert!(unescape_token("\\q").is_err());
        assert!(unescape_token("\\x4").is_err());
        assert!(unescape_token("\\xZZ").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            let esc = escape_token(&bytes);
            prop_assert!(!esc.contains(' ') && !esc.contains('\t') && !esc.contains('\n'));
            prop_assert_eq!(unescape_token(&esc).unwrap(), bytes);
        }
    }
}
