//! Flat `key=value` text used for distortion/denoiser specs and config files.
//!
//! Pairs are separated by whitespace, commas or newlines; `#` starts a comment
//! that runs to the end of the line.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("expected key=value, found {0:?}")]
    Syntax(String),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("invalid value {value:?} for key {key:?}")]
    InvalidValue { key: String, value: String },
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
}

/// Splits `text` into ordered `(key, value)` pairs. Duplicate keys are errors.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',') {
            if tok.is_empty() {
                continue;
            }
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| KvError::Syntax(tok.to_string()))?;
            if k.is_empty() {
                return Err(KvError::Syntax(tok.to_string()));
            }
            if out.iter().any(|(existing, _)| existing == k) {
                return Err(KvError::DuplicateKey(k.to_string()));
            }
            out.push((k.to_string(), v.to_string()));
        }
    }
    Ok(out)
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, KvError> {
    value.parse().map_err(|_| KvError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_with_comments_and_separators() {
        let text = "# header\nkind=gaussian intensity=2\nseed=7, sigma=0.1 # trailing\n";
        let pairs = parse_pairs(text).unwrap();
        let keys: Vec<_> = pairs.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["kind", "intensity", "seed", "sigma"]);
        assert_eq!(pairs[3].1, "0.1");
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        assert_eq!(parse_pairs("kind"), Err(KvError::Syntax("kind".into())));
        assert_eq!(parse_pairs("=3"), Err(KvError::Syntax("=3".into())));
        assert_eq!(
            parse_pairs("a=1 a=2"),
            Err(KvError::DuplicateKey("a".into()))
        );
    }
}
