//! Parsing of quantities written with engineering suffixes.
//!
//! Configuration files may write `2.2m`, `1.8 µH` or `0.05` for SI values.
//! A trailing unit symbol is ignored; the prefix before it scales the number.

use crate::error::{Error, Result};

/// Parses a quantity such as `"2.2m"`, `"1.8uH"`, `"1.8 µH"` or `"48"` into SI units.
pub fn parse_quantity(text: &str) -> Result<f64> {
    let s = text.trim();
    let split = s
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit()
                || c == '.'
                || c == '+'
                || c == '-'
                || ((c == 'e' || c == 'E') && is_exponent(s, i)))
        })
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, rest) = s.split_at(split);
    let value: f64 = num
        .parse()
        .map_err(|_| Error::Parse(format!("not a quantity: {text:?}")))?;
    let rest = rest.trim_start();
    let mut chars = rest.chars();
    let scale = match chars.next() {
        None => 1.0,
        Some(c) => match prefix_scale(c) {
            Some(k) if !is_bare_unit(rest) => k,
            _ if is_bare_unit(rest) => 1.0,
            _ => return Err(Error::Parse(format!("unknown suffix in {text:?}"))),
        },
    };
    if !value.is_finite() {
        return Err(Error::Parse(format!("non-finite quantity: {text:?}")));
    }
    Ok(value * scale)
}

fn is_exponent(s: &str, i: usize) -> bool {
    s[i + 1..]
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+')
}

fn prefix_scale(c: char) -> Option<f64> {
    match c {
        'p' => Some(1e-12),
        'n' => Some(1e-9),
        'u' | 'µ' | 'μ' => Some(1e-6),
        'm' => Some(1e-3),
        'k' => Some(1e3),
        'M' => Some(1e6),
        _ => None,
    }
}

/// A suffix made only of a unit symbol, with no prefix.
fn is_bare_unit(rest: &str) -> bool {
    matches!(
        rest,
        "V" | "A" | "H" | "F" | "s" | "Ω" | "ohm" | "Ohm" | "Hz"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15 * b.abs().max(1.0)
    }

    #[test]
    fn plain_numbers() {
        assert_eq!(parse_quantity("48").unwrap(), 48.0);
        assert_eq!(parse_quantity("0.05").unwrap(), 0.05);
        assert_eq!(parse_quantity("1e-3").unwrap(), 1e-3);
        assert_eq!(parse_quantity("2.5E+2").unwrap(), 250.0);
    }

    #[test]
    fn prefixes_scale() {
        assert!(close(parse_quantity("2.2m").unwrap(), 2.2e-3));
        assert!(close(parse_quantity("1.8u").unwrap(), 1.8e-6));
        assert!(close(parse_quantity("1.8 µH").unwrap(), 1.8e-6));
        assert!(close(parse_quantity("3k").unwrap(), 3e3));
        assert!(close(parse_quantity("2.2mF").unwrap(), 2.2e-3));
    }

    #[test]
    fn bare_units_are_ignored() {
        assert_eq!(parse_quantity("48V").unwrap(), 48.0);
        assert_eq!(parse_quantity("10 Ω").unwrap(), 10.0);
        assert_eq!(parse_quantity("100Hz").unwrap(), 100.0);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(parse_quantity("abc").is_err());
        assert!(parse_quantity("1.0q").is_err());
        assert!(parse_quantity("").is_err());
    }
}
