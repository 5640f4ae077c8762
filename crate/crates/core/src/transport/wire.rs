//! Helpers for the `HEAD key=value ...` line framing shared by the TCP
//! services.

use std::io::{BufRead, Write};

use super::TransportError;

/// Splits `line` into its head word and the values of `keys`, which must
/// appear exactly in the given order.
pub(crate) fn fields<'a>(line: &'a str, keys: &[&str]) -> Result<Vec<&'a str>, TransportError> {
    let mut tokens = line.split(' ').skip(1);
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let token = tokens
            .next()
            .ok_or_else(|| TransportError::Frame(format!("missing `{key}` in `{line}`")))?;
        match token.split_once('=') {
            Some((k, v)) if k == *key => out.push(v),
            _ => {
                return Err(TransportError::Frame(format!(
                    "expected `{key}=`, found `{token}`"
                )))
            }
        }
    }
    if let Some(extra) = tokens.next() {
        return Err(TransportError::Frame(format!("unexpected `{extra}`")));
    }
    Ok(out)
}

pub(crate) fn parse_f64(v: &str) -> Result<f64, TransportError> {
    v.parse()
        .map_err(|_| TransportError::Frame(format!("not a number: `{v}`")))
}

/// Reads one `\n`-terminated line without the terminator. `None` on EOF.
pub(crate) fn read_line<R: BufRead>(reader: &mut R) -> std::io::Result<Option<String>> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    if line.ends_with('\n') {
        line.pop();
    }
    Ok(Some(line))
}

pub(crate) fn write_line<W: Write>(writer: &mut W, line: &str) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    writer.write_all(&buf)?;
    writer.flush()
}
