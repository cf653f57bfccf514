//! The loop-directive iterable grammar.
//!
//! Deliberately narrow: `range(a)`, `range(a,b)`, `range(a,b,s)` with the
//! half-open semantics of the originating language, or a literal comma
//! list of integers. General expression evaluation is rejected — splicing
//! host-language code into build files is an injection hazard.

use super::PmakeError;

/// Expand an iterable spec into its integer sequence.
pub fn expand_iterable(spec: &str) -> Result<Vec<i64>, PmakeError> {
    let s = spec.trim();
    if let Some(inner) = s.strip_prefix("range(").and_then(|r| r.strip_suffix(')')) {
        let args: Vec<i64> = inner
            .split(',')
            .map(|a| a.trim().parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|_| PmakeError::UnsupportedIterable(spec.to_string()))?;
        let (start, stop, step) = match args.as_slice() {
            [stop] => (0, *stop, 1),
            [start, stop] => (*start, *stop, 1),
            [start, stop, step] => (*start, *stop, *step),
            _ => return Err(PmakeError::UnsupportedIterable(spec.to_string())),
        };
        if step == 0 {
            return Err(PmakeError::UnsupportedIterable(spec.to_string()));
        }
        let mut vals = Vec::new();
        let mut v = start;
        while (step > 0 && v < stop) || (step < 0 && v > stop) {
            vals.push(v);
            v += step;
        }
        return Ok(vals);
    }
    // Literal comma list of integers (a single integer is a 1-list).
    let vals: Result<Vec<i64>, _> = s.split(',').map(|a| a.trim().parse::<i64>()).collect();
    vals.map_err(|_| PmakeError::UnsupportedIterable(spec.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_forms_match_the_source_semantics() {
        assert_eq!(expand_iterable("range(1,11)").unwrap(), (1..11).collect::<Vec<_>>());
        assert_eq!(expand_iterable("range(3)").unwrap(), vec![0, 1, 2]);
        assert_eq!(expand_iterable("range(2,10,3)").unwrap(), vec![2, 5, 8]);
        assert_eq!(expand_iterable("range(5,5)").unwrap(), Vec::<i64>::new());
        assert_eq!(expand_iterable("range(3,0,-1)").unwrap(), vec![3, 2, 1]);
    }

    #[test]
    fn comma_lists_and_single_values() {
        assert_eq!(expand_iterable("1, 2, 5").unwrap(), vec![1, 2, 5]);
        assert_eq!(expand_iterable("7").unwrap(), vec![7]);
        assert_eq!(expand_iterable(" -3,4 ").unwrap(), vec![-3, 4]);
    }

    #[test]
    fn junk_is_rejected() {
        for bad in ["range(a)", "range(1,2,0)", "os.system('rm')", "1..5", "", "range()"] {
            assert!(
                matches!(expand_iterable(bad), Err(PmakeError::UnsupportedIterable(_))),
                "{bad:?} should be unsupported"
            );
        }
    }
}
