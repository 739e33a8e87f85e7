use thiserror::Error;

use crate::types::{MAX_RATING, MIN_RATING};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no rating between 1 and 5 found in reply")]
pub struct UnparsableReply;

/// Rough token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// Extracts the first number in `[1, 5]` from an LLM reply.
///
/// Numeric tokens are scanned left to right as `-?digits(.digits)?`;
/// out-of-range or negative tokens are skipped. In `"3/5"` or `"3 out of 5"`
/// the numerator comes first and wins.
pub fn parse_rating_reply(text: &str) -> Result<f64, UnparsableReply> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let negative = bytes[i] == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        let start = if negative { i + 1 } else { i };
        if !bytes[start].is_ascii_digit() {
            i += 1;
            continue;
        }
        let mut end = start;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
            end += 1;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
        }
        if !negative {
            if let Ok(v) = text[start..end].parse::<f64>() {
                if (MIN_RATING..=MAX_RATING).contains(&v) {
                    return Ok(v);
                }
            }
        }
        i = end;
    }
    Err(UnparsableReply)
}
