use super::{AffineTransform, RasterError, Result};

/// Parses an ESRI world file: six decimal lines in the order A, D, B, E, C, F.
/// Surrounding whitespace and trailing blank lines are ignored.
pub fn parse_world_file(text: &str) -> Result<AffineTransform> {
    let mut lines: Vec<&str> = text.lines().collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.len() != 6 {
        return Err(RasterError::WorldFile {
            line: lines.len().min(6) + 1,
            msg: format!("expected 6 lines, found {}", lines.len()),
        });
    }
    let mut v = [0.0f64; 6];
    for (i, raw) in lines.iter().enumerate() {
        let tok = raw.trim();
        let parsed: f64 = tok.parse().map_err(|_| RasterError::WorldFile {
            line: i + 1,
            msg: format!("not a number: '{tok}'"),
        })?;
        if !parsed.is_finite() {
            return Err(RasterError::WorldFile {
                line: i + 1,
                msg: format!("non-finite value '{tok}'"),
            });
        }
        v[i] = parsed;
    }
    AffineTransform::new(v[0], v[1], v[2], v[3], v[4], v[5])
}

pub fn format_world_file(t: &AffineTransform) -> String {
    format!("{}\n{}\n{}\n{}\n{}\n{}\n", t.a, t.d, t.b, t.e, t.c, t.f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_read() {
        let t = parse_world_file("5\n0\n0\n-5\n100\n900").unwrap();
        assert_eq!((t.a, t.d, t.b, t.e, t.c, t.f), (5.0, 0.0, 0.0, -5.0, 100.0, 900.0));
    }

    #[test]
    fn whitespace_tolerant() {
        let t = parse_world_file("  5.0 \r\n0\n0\n\t-5\n100\n900\n\n").unwrap();
        assert_eq!(t.e, -5.0);
    }

    #[test]
    fn singular() {
        assert!(matches!(
            parse_world_file("1\n0\n0\n0\n0\n0"),
            Err(RasterError::Singular(_))
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_world_file("5\n0\nzero\n-5\n100\n900") {
            Err(RasterError::WorldFile { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_world_file("5\n0\n0\n-5\n100"),
            Err(RasterError::WorldFile { .. })
        ));
        assert!(matches!(
            parse_world_file("5\n0\n0\n-5\n100\n900\n1"),
            Err(RasterError::WorldFile { .. })
        ));
        assert!(matches!(
            parse_world_file("5\n0\n0\n-5\ninf\n900"),
            Err(RasterError::WorldFile { line: 5, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn format_parse_round_trip(
            a in 0.01f64..1e3, d in -1e2f64..1e2, b in -1e2f64..1e2,
            e in -1e3f64..-0.01, c in -1e7f64..1e7, f in -1e7f64..1e7,
        ) {
            prop_assume!(a * e - b * d != 0.0);
            let t = AffineTransform::new(a, d, b, e, c, f).unwrap();
            prop_assert_eq!(parse_world_file(&format_world_file(&t)).unwrap(), t);
        }
    }
}
