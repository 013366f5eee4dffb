//! SNR list syntax: a single value or `lo:hi:step`, inclusive of `hi`.

pub fn parse(spec: &str) -> Result<Vec<f64>, String> {
    let bad = || format!("bad SNR spec '{spec}', expected a number or lo:hi:step");
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    match parts[..] {
        [v] => Ok(vec![v]),
        [lo, hi, step] => {
            if lo > hi {
                return Err(format!("SNR spec '{spec}': lo must not exceed hi"));
            }
            if step <= 0.0 {
                return Err(format!("SNR spec '{spec}': step must be positive"));
            }
            // Tolerance so that e.g. 0:1:0.1 still ends on 1.
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| lo + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::parse;

    #[test]
    fn ranges_include_the_upper_end() {
        assert_eq!(parse("-20:60:10").unwrap().len(), 9);
        assert_eq!(parse("10:10:1").unwrap(), vec![10.0]);
        assert_eq!(parse("0:5:2").unwrap(), vec![0.0, 2.0, 4.0]);
        assert_eq!(parse("7.5").unwrap(), vec![7.5]);
        assert_eq!(parse("0:1:0.1").unwrap().len(), 11);
    }

    #[test]
    fn malformed_specs_are_rejected() {
        for s in ["", "a", "1:2", "5:1:1", "0:10:0", "0:10:-1", "1:2:3:4", "nan"] {
            assert!(parse(s).is_err(), "{s}");
        }
    }
}
