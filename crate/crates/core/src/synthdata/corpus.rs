//! Corpus generation and train/test manifests.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{generate, write_sequence, GenConfig, Scenario};
use crate::error::{Error, Result};

/// Per-scenario sequence counts plus the held-out fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub counts: Vec<(Scenario, usize)>,
    pub test_fraction: f64,
    pub gen: GenConfig,
}

impl CorpusSpec {
    /// Named presets or an inline list `plain=4,low-light=2,...[,test=0.2]`.
    ///
    /// * `default`: 120 sequences, half held out; the test split has 15
    ///   overexposed, 15 low-light and 10 of each other scenario.
    /// * `small`: 2 of each scenario, half held out.
    pub fn parse(s: &str) -> Result<Self> {
        let preset = |counts: [usize; 5]| CorpusSpec {
            counts: Scenario::ALL.into_iter().zip(counts).collect(),
            test_fraction: 0.5,
            gen: GenConfig::default(),
        };
        match s.trim() {
            "default" => return Ok(preset([20, 30, 30, 20, 20])),
            "small" => return Ok(preset([2, 2, 2, 2, 2])),
            _ => {}
        }
        let mut spec = CorpusSpec {
            counts: Vec::new(),
            test_fraction: 0.5,
            gen: GenConfig::default(),
        };
        for item in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("corpus spec item {item:?} is not key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "test" {
                spec.test_fraction = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad test fraction {v:?}")))?;
                continue;
            }
            let scenario: Scenario = k.parse()?;
            let n: usize = v
                .parse()
                .map_err(|_| Error::Config(format!("bad count {v:?} for {k}")))?;
            if spec.counts.iter().any(|(s, _)| *s == scenario) {
                return Err(Error::Config(format!("scenario {k} listed twice")));
            }
            spec.counts.push((scenario, n));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c.1).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Config("corpus spec has no sequences".into()));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test fraction {} outside [0, 1]",
                self.test_fraction
            )));
        }
        Ok(())
    }

    /// Held-out count per scenario: the overall test size is
    /// `round(total · fraction)`, shared out by largest remainder so every
    /// scenario's split matches the overall proportion within one sequence.
    pub fn test_counts(&self) -> Vec<usize> {
        let total_test = (self.total() as f64 * self.test_fraction).round() as usize;
        let exact: Vec<f64> = self
            .counts
            .iter()
            .map(|&(_, n)| n as f64 * self.test_fraction)
            .collect();
        let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..out.len()).collect();
        // Stable: ties go to the scenario listed first.
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut missing = total_test.saturating_sub(out.iter().sum());
        for &i in order.iter().cycle().take(order.len() * 2) {
            if missing == 0 {
                break;
            }
            if out[i] < self.counts[i].1 {
                out[i] += 1;
                missing -= 1;
            }
        }
        out
    }
}

/// Sorted relative sequence paths of each split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Sequence `i` (global index) gets stream `i` of the seeded generator.
fn sequence_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rand::Rng::random(&mut rng)
}

/// Generates every sequence under `out` and writes `train.txt` / `test.txt`.
pub fn make_corpus(out: &Path, spec: &CorpusSpec, seed: u64) -> Result<Manifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((scenario, n), n_test) in spec.counts.iter().zip(spec.test_counts()) {
        let mut held: Vec<bool> = (0..*n).map(|i| i < n_test).collect();
        held.shuffle(&mut rng);
        for is_test in held {
            let name = format!("{:04}-{}", jobs.len(), scenario.name());
            if is_test {
                test.push(name.clone());
            } else {
                train.push(name.clone());
            }
            jobs.push((*scenario, name, sequence_seed(seed, jobs.len())));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    jobs.par_iter()
        .map(|(scenario, name, s)| {
            let seq = generate(*scenario, &spec.gen, *s, name)?;
            write_sequence(&out.join(name), &seq)
        })
        .collect::<Result<Vec<()>>>()?;
    train.sort();
    test.sort();
    for (file, list) in [("train.txt", &train), ("test.txt", &test)] {
        let path = out.join(file);
        let text: String = list.iter().map(|l| format!("{l}\n")).collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(Manifest { train, test })
}

/// Reads a manifest file: one relative path per line, blank lines ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        let spec =
            CorpusSpec::parse("plain=4,overexposed-rgb=4,low-light=4,similar-distractors=4,static-target=4,test=0.2")
                .unwrap();
        let t = spec.test_counts();
        assert_eq!(t.iter().sum::<usize>(), 4);
        assert!(t.iter().all(|&k| k <= 1));
        let spec =
            CorpusSpec::parse("plain=5,overexposed-rgb=5,low-light=5,similar-distractors=5,static-target=5,test=0.2")
                .unwrap();
        assert_eq!(spec.test_counts(), vec![1; 5]);
        let d = CorpusSpec::parse("default").unwrap();
        assert_eq!(d.test_counts(), vec![10, 15, 15, 10, 10]);
    }

    #[test]
    fn spec_errors() {
        assert!(matches!(CorpusSpec::parse("plain=0"), Err(Error::Config(_))));
        let e = CorpusSpec::parse("plain=1,foggy=2").unwrap_err();
        assert!(e.to_string().contains("foggy"));
        assert!(CorpusSpec::parse("plain").is_err());
    }

    #[test]
    fn corpus_is_deterministic_and_disjoint() {
        let mut spec = CorpusSpec::parse("plain=2,static-target=2,low-light=1").unwrap();
        spec.gen = GenConfig {
            width: 48,
            height: 48,
            frames: 3,
            event_threshold: 12,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = make_corpus(a.path(), &spec, 7).unwrap();
        let mb = make_corpus(b.path(), &spec, 7).unwrap();
        assert_eq!(ma, mb);
        assert!(ma.train.iter().all(|t| !ma.test.contains(t)));
        assert_eq!(ma.train.len() + ma.test.len(), 5);
        let text = fs::read_to_string(a.path().join("test.txt")).unwrap();
        assert!(text.ends_with('\n'));
        assert_eq!(read_manifest(&a.path().join("test.txt")).unwrap(), ma.test);
        for name in ma.train.iter().chain(&ma.test) {
            for f in ["groundtruth.txt", "rgb/000002.ppm", "event/000000.pgm"] {
                assert_eq!(
                    fs::read(a.path().join(name).join(f)).unwrap(),
                    fs::read(b.path().join(name).join(f)).unwrap()
                );
            }
        }
    }
}
