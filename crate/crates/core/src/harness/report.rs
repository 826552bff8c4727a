use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::pipeline::{Method, Tuning};
use super::sweep::CsvRow;

/// Seed-averaged metrics for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub buffer_size: usize,
    pub sigma: f64,
    pub method: Method,
    pub tuning: Tuning,
    pub write_verify: bool,
    pub seeds: usize,
    pub retrieval_accuracy: f64,
    pub surrogate_accuracy: f64,
    pub surrogate_drop: f64,
    pub mean_margin: f64,
    pub deviation_rms: f64,
}

type Key = (usize, u64, Method, Tuning, bool);

fn key(r: &CsvRow) -> Key {
    (r.buffer_size, r.sigma.to_bits(), r.method, r.tuning, r.write_verify)
}

/// Groups rows by everything except the seed and averages.
pub fn summarize(rows: &[CsvRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<Key, Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_values()
        .map(|g| {
            let mean = |f: fn(&CsvRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
            let first = g[0];
            SummaryRow {
                buffer_size: first.buffer_size,
                sigma: first.sigma,
                method: first.method,
                tuning: first.tuning,
                write_verify: first.write_verify,
                seeds: g.len(),
                retrieval_accuracy: mean(|r| r.retrieval_accuracy),
                surrogate_accuracy: mean(|r| r.surrogate_accuracy),
                surrogate_drop: mean(|r| r.surrogate_drop),
                mean_margin: mean(|r| r.mean_margin),
                deviation_rms: mean(|r| r.deviation_rms),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.buffer_size
            .cmp(&b.buffer_size)
            .then(a.sigma.total_cmp(&b.sigma))
            .then(a.method.cmp(&b.method))
            .then(a.tuning.cmp(&b.tuning))
            .then(a.write_verify.cmp(&b.write_verify))
    });
    out
}

pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>7} {:>6} {:>12} {:>3} {:>5} {:>9} {:>9} {:>9} {:>10}",
        "buffer", "sigma", "method", "tuning", "wv", "seeds", "retr_acc", "surr_acc", "surr_drop", "dev_rms"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:>7.3} {:>6} {:>12} {:>3} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>10.6}",
            r.buffer_size,
            r.sigma,
            r.method.as_str(),
            r.tuning.as_str(),
            if r.write_verify { "on" } else { "off" },
            r.seeds,
            r.retrieval_accuracy,
            r.surrogate_accuracy,
            r.surrogate_drop,
            r.deviation_rms
        );
    }
    s
}

/// Ranks with ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. Returns 0 when either side has no spread.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]) - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // Ties get average ranks: y ranks [1.5, 1.5, 3].
        let r = spearman(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]);
        assert!((r - 0.8660254037844386).abs() < 1e-12);
    }

    #[test]
    fn summary_averages_over_seeds() {
        let row = |seed, acc| CsvRow {
            buffer_size: 20,
            sigma: 0.1,
            method: Method::Ssa,
            tuning: Tuning::Plain,
            write_verify: false,
            seed,
            profile: "NVM-3".into(),
            num_entries: 4,
            num_queries: 10,
            retrieval_accuracy: acc,
            surrogate_accuracy: 0.5,
            surrogate_accuracy_clean: 0.5,
            surrogate_drop: 0.0,
            mean_margin: 1.0,
            deviation_rms: 0.01,
            write_pulses: 1,
            macs: 1,
            cell_reads: 1,
            adc_conversions: 1,
        };
        let s = summarize(&[row(0, 1.0), row(1, 0.5)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].seeds, 2);
        assert_eq!(s[0].retrieval_accuracy, 0.75);
        assert!(format_table(&s).contains("0.7500"));
    }
}
