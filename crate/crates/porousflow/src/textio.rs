//! Text conventions shared by every on-disk format: floats carry 17
//! significant digits so values round-trip exactly, and TOML strings are
//! escaped by hand because manifests are written without a serializer.

/// Formats a float with 17 significant digits, enough for an exact
/// round trip through text.
pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Escapes backslashes and quotes for a double-quoted TOML string.
pub(crate) fn toml_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatted_floats_round_trip_exactly() {
        for &x in &[
            0.0,
            -0.0,
            1.0,
            std::f64::consts::PI,
            1e-300,
            -3.4e300,
            f64::MIN_POSITIVE,
            0.1 + 0.2,
        ] {
            let text = fmt_float(x);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} reread as {back} via {text}");
        }
    }

    #[test]
    fn toml_escaping_covers_quotes_and_backslashes() {
        assert_eq!(toml_escape(r#"a"b\c"#), r#"a\"b\\c"#);
    }
}
