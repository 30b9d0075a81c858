//! Perplexity probe: score student texts under each candidate teacher's
//! endpoint and check whether the true teacher finds them least surprising.

mod client;
pub mod mock;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

pub use client::{fetch_logprobs, EndpointConfig, LogprobResponse};

use crate::corpus::{subsample, Corpus};
use crate::error::{Error, Result};
use crate::hashing;

/// `exp(-mean)` over the scored tokens.
pub fn perplexity(response: &LogprobResponse) -> Result<f64> {
    let scored: Vec<f64> = response.token_logprobs.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::invalid("no scored tokens to compute perplexity from"));
    }
    let mean = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok((-mean).exp())
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("summary of no values"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Summary {
            n: v.len(),
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPerplexity {
    pub doc_id: String,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityCell {
    pub student: String,
    pub teacher: String,
    pub summary: Summary,
    /// Per-document values in corpus order.
    pub values: Vec<DocPerplexity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedDocument {
    pub student: String,
    pub teacher: String,
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityTable {
    pub students: Vec<String>,
    pub teachers: Vec<String>,
    /// Student-major, teachers in name order.
    pub cells: Vec<PerplexityCell>,
    /// Teacher with the lowest median perplexity per student corpus; ties go
    /// to the teacher whose name sorts first.
    pub argmin_teacher: BTreeMap<String, String>,
    pub failures: Vec<FailedDocument>,
    pub sample_n: usize,
    pub seed: u64,
}

impl PerplexityTable {
    pub fn cell(&self, student: &str, teacher: &str) -> Option<&PerplexityCell> {
        self.cells.iter().find(|c| c.student == student && c.teacher == teacher)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("student,teacher,n,median,q1,q3,mean,min,max,argmin\n");
        for c in &self.cells {
            let s = &c.summary;
            let is_min = self.argmin_teacher.get(&c.student) == Some(&c.teacher);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.student, c.teacher, s.n, s.median, s.q1, s.q3, s.mean, s.min, s.max, is_min
            ));
        }
        out
    }
}

struct Job<'a> {
    student: &'a str,
    doc_id: &'a str,
    text: &'a str,
}

/// Scores jobs against one endpoint with at most `max_concurrent_requests`
/// requests in flight. Results come back in job order.
fn score_all(endpoint: &EndpointConfig, jobs: &[Job<'_>]) -> Vec<Result<f64>> {
    let agent = endpoint.agent();
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = endpoint.max_concurrent_requests.min(jobs.len()).max(1);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= jobs.len() {
                    break;
                }
                let r = client::fetch_with(&agent, endpoint, jobs[i].text).and_then(|resp| perplexity(&resp));
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job scored"))
        .collect()
}

/// Runs the probe over `sample_n` documents per student corpus (all of a
/// smaller corpus). Documents that fail are recorded and left out.
/// Authentication failures abort the probe.
pub fn perplexity_probe(
    students: &BTreeMap<String, Corpus>,
    endpoints: &BTreeMap<String, EndpointConfig>,
    sample_n: usize,
    seed: u64,
) -> Result<PerplexityTable> {
    if students.is_empty() {
        return Err(Error::invalid("perplexity probe needs at least one student corpus"));
    }
    if endpoints.len() < 2 {
        return Err(Error::invalid("perplexity probe needs at least two teacher endpoints"));
    }
    for e in endpoints.values() {
        e.validate()?;
    }
    let mut samples = BTreeMap::new();
    for (label, corpus) in students {
        let n = sample_n.min(corpus.len());
        if n < sample_n {
            log::warn!("corpus {label} has {} documents; scoring all of them", corpus.len());
        }
        samples.insert(label.as_str(), subsample(corpus, n, hashing::substream(seed, &format!("ppl/{label}")))?);
    }
    let jobs: Vec<Job<'_>> = samples
        .iter()
        .flat_map(|(label, c)| {
            c.iter().map(move |d| Job {
                student: label,
                doc_id: &d.id,
                text: &d.text,
            })
        })
        .collect();

    let scored: Vec<(&str, Vec<Result<f64>>)> = thread::scope(|s| {
        let handles: Vec<_> = endpoints
            .iter()
            .map(|(name, ep)| {
                let jobs = &jobs;
                (name.as_str(), s.spawn(move || score_all(ep, jobs)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(n, h)| (n, h.join().expect("scoring thread panicked")))
            .collect()
    });

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut by_teacher: BTreeMap<&str, &Vec<Result<f64>>> = BTreeMap::new();
    for (teacher, results) in &scored {
        for r in results {
            if let Err(Error::Auth { url, env_var }) = r {
                return Err(Error::Auth {
                    url: url.clone(),
                    env_var: env_var.clone(),
                });
            }
        }
        by_teacher.insert(teacher, results);
    }
    let mut argmin = BTreeMap::new();
    for student in samples.keys() {
        let mut best: Option<(&str, f64)> = None;
        for (teacher, results) in &by_teacher {
            let mut values = Vec::new();
            for (job, r) in jobs.iter().zip(results.iter()) {
                if job.student != *student {
                    continue;
                }
                match r {
                    Ok(p) => values.push(DocPerplexity {
                        doc_id: job.doc_id.to_string(),
                        perplexity: *p,
                    }),
                    Err(e) => failures.push(FailedDocument {
                        student: student.to_string(),
                        teacher: teacher.to_string(),
                        doc_id: job.doc_id.to_string(),
                        error: e.to_string(),
                    }),
                }
            }
            if values.is_empty() {
                let why = failures
                    .iter()
                    .rev()
                    .find(|f| f.student == *student && f.teacher == *teacher)
                    .map_or_else(|| "no documents".to_string(), |f| f.error.clone());
                return Err(Error::Transport(format!(
                    "no perplexities for student {student} under teacher {teacher}: {why}"
                )));
            }
            let ppl: Vec<f64> = values.iter().map(|v| v.perplexity).collect();
            let summary = Summary::of(&ppl)?;
            if best.is_none_or(|(_, m)| summary.median < m) {
                best = Some((teacher, summary.median));
            }
            cells.push(PerplexityCell {
                student: student.to_string(),
                teacher: teacher.to_string(),
                summary,
                values,
            });
        }
        if let Some((t, _)) = best {
            argmin.insert(student.to_string(), t.to_string());
        }
    }
    if !failures.is_empty() {
        log::warn!("{} document scorings failed and were excluded", failures.len());
    }
    Ok(PerplexityTable {
        students: samples.keys().map(|s| s.to_string()).collect(),
        teachers: endpoints.keys().cloned().collect(),
        cells,
        argmin_teacher: argmin,
        failures,
        sample_n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn resp(lp: &[Option<f64>]) -> LogprobResponse {
        LogprobResponse {
            tokens: lp.iter().map(|_| "t".to_string()).collect(),
            token_logprobs: lp.to_vec(),
        }
    }

    #[test]
    fn perplexity_cases() {
        assert_eq!(perplexity(&resp(&[Some(0.0); 3])).unwrap(), 1.0);
        let ln2 = 2f64.ln();
        assert_relative_eq!(perplexity(&resp(&[None, Some(-ln2), Some(-ln2)])).unwrap(), 2.0, epsilon = 1e-12);
        assert!(perplexity(&resp(&[None])).is_err());
    }

    proptest! {
        #[test]
        fn constant_logprobs(x in -20.0f64..0.0, k in 1usize..50) {
            let p = perplexity(&resp(&vec![Some(x); k])).unwrap();
            prop_assert!((p - (-x).exp()).abs() <= 1e-9 * p);
            prop_assert!(p >= 1.0);
        }

        #[test]
        fn decreasing_in_each_logprob(v in prop::collection::vec(-10.0f64..0.0, 1..20), i in 0usize..20, d in 0.01f64..1.0) {
            let i = i % v.len();
            let lo: Vec<Option<f64>> = v.iter().map(|x| Some(*x)).collect();
            let mut hi = lo.clone();
            hi[i] = Some(v[i] + d);
            prop_assert!(perplexity(&resp(&hi)).unwrap() < perplexity(&resp(&lo)).unwrap());
        }
    }

    #[test]
    fn summary_quartiles() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.mean, s.n), (2.0, 3.0, 4.0, 3.0, 5));
        let s = Summary::of(&[1.0, 2.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.25, 1.5, 1.75));
        assert!(Summary::of(&[]).is_err());
    }
}
