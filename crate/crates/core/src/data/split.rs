use std::ops::Range;

use super::generate::Corpus;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Chronological split of one platform, as index ranges into
/// `Corpus::instances`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformSplit {
    pub platform: usize,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl PlatformSplit {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Earliest 70% of each platform's runs train, the next 15% validate and the
/// remainder tests. Boundaries sit at `floor(0.70 n)` and `floor(0.85 n)`.
pub fn time_split(corpus: &Corpus) -> Result<Vec<PlatformSplit>> {
    corpus
        .platform_ranges()
        .into_iter()
        .enumerate()
        .map(|(platform, r)| {
            let n = r.len();
            if n < 10 {
                return Err(Error::InvalidArgument(format!(
                    "platform {platform} has {n} instances; time_split needs at least 10"
                )));
            }
            let a = r.start + n * 70 / 100;
            let b = r.start + n * 85 / 100;
            Ok(PlatformSplit {
                platform,
                train: r.start..a,
                val: a..b,
                test: b..r.end,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, PlatformSpec};

    fn sizes(n: usize) -> (usize, usize, usize) {
        let spec = PlatformSpec::benchmark().remove(0);
        let corpus = generate_corpus(&[spec], n, 0).unwrap();
        let s = &time_split(&corpus).unwrap()[0];
        (s.train.len(), s.val.len(), s.test.len())
    }

    #[test]
    fn proportions() {
        assert_eq!(sizes(100), (70, 15, 15));
        assert_eq!(sizes(20), (14, 3, 3));
        assert_eq!(sizes(10), (7, 1, 2));
        assert_eq!(sizes(333), (233, 50, 50));
    }

    #[test]
    fn chronological_and_disjoint() {
        let corpus = generate_corpus(&PlatformSpec::benchmark(), 57, 2).unwrap();
        for s in time_split(&corpus).unwrap() {
            let t = |i: usize| corpus.instances[i].time_index;
            assert!(t(s.train.end - 1) < t(s.val.start));
            assert!(t(s.val.end - 1) < t(s.test.start));
            assert_eq!(s.train.len() + s.val.len() + s.test.len(), 57);
            assert!(s.train.end == s.val.start && s.val.end == s.test.start);
            assert!(corpus.instances[s.train.start..s.test.end].iter().all(|i| i.platform == s.platform));
        }
    }

    #[test]
    fn too_few_instances() {
        let mut corpus = generate_corpus(&PlatformSpec::benchmark(), 10, 2).unwrap();
        corpus.instances.remove(0);
        assert!(time_split(&corpus).is_err());
    }
}
