use crate::datasets::records::PoseRecord;
use crate::error::{Error, Result};

/// Record-set partition scheme. Records are sorted by id first.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitScheme {
    /// First `k` records train, the rest test.
    FirstK(usize),
    /// First `round(f·n)` records train.
    Fraction(f64),
    /// Records whose sequence tag (id prefix before the first `/`) is listed
    /// go to train, the rest to test.
    ByTag(Vec<String>),
}

pub fn sequence_tag(id: &str) -> &str {
    id.split('/').next().unwrap_or(id)
}

pub fn split(records: &[PoseRecord], scheme: &SplitScheme) -> Result<(Vec<PoseRecord>, Vec<PoseRecord>)> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let n = sorted.len();
    match scheme {
        SplitScheme::FirstK(k) => {
            if *k > n {
                return Err(Error::InvalidArgument(format!("cannot take {k} of {n} records")));
            }
            let test = sorted.split_off(*k);
            Ok((sorted, test))
        }
        SplitScheme::Fraction(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::InvalidArgument(format!("fraction {f} outside [0, 1]")));
            }
            let test = sorted.split_off((f * n as f64).round() as usize);
            Ok((sorted, test))
        }
        SplitScheme::ByTag(tags) => {
            Ok(sorted.into_iter().partition(|r| tags.iter().any(|t| t == sequence_tag(&r.id))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, SynthConfig};
    use std::collections::HashSet;

    fn recs(n: usize) -> Vec<PoseRecord> {
        let mut r = synth_generate(&SynthConfig { n, ..SynthConfig::default() }).unwrap();
        r.reverse();
        r
    }

    #[test]
    fn first_k_regimes() {
        let r = recs(700);
        let (tr, te) = split(&r, &SplitScheme::FirstK(20)).unwrap();
        assert_eq!((tr.len(), te.len()), (20, 680));
        assert_eq!(tr[0].id, "synth-000000");
        assert_eq!(split(&r, &SplitScheme::FirstK(100)).unwrap().0.len(), 100);
        assert!(split(&r, &SplitScheme::FirstK(701)).is_err());
    }

    #[test]
    fn fraction_boundaries() {
        let r = recs(10);
        assert!(split(&r, &SplitScheme::Fraction(1.0)).unwrap().1.is_empty());
        assert!(split(&r, &SplitScheme::Fraction(0.0)).unwrap().0.is_empty());
        assert_eq!(split(&r, &SplitScheme::Fraction(0.7)).unwrap().0.len(), 7);
        assert!(split(&r, &SplitScheme::Fraction(1.5)).is_err());
    }

    #[test]
    fn by_tag_and_partition_property() {
        let mut r = recs(12);
        for (i, x) in r.iter_mut().enumerate() {
            x.id = format!("seq{:02}/f{i:03}", i % 4);
        }
        let (tr, te) = split(&r, &SplitScheme::ByTag(vec!["seq00".into(), "seq01".into()])).unwrap();
        assert_eq!(tr.len(), 6);
        for scheme in [SplitScheme::FirstK(5), SplitScheme::Fraction(0.3), SplitScheme::ByTag(vec!["seq03".into()])] {
            let (a, b) = split(&r, &scheme).unwrap();
            let ia: HashSet<_> = a.iter().map(|x| x.id.clone()).collect();
            let ib: HashSet<_> = b.iter().map(|x| x.id.clone()).collect();
            assert!(ia.is_disjoint(&ib));
            assert_eq!(ia.len() + ib.len(), r.len());
        }
        assert_eq!(te.len(), 6);
    }
}
