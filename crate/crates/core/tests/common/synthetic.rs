//! Deterministic synthetic survey in the raw input format: 26 forecasters
//! over 83 quarterly rounds from 1999-Q1, three bin layouts that all nest
//! in the 11-bin inflation grid, probabilities rounded to whole percent,
//! scattered holes, and eight forecasters whose absences are too long to
//! keep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

pub const SEED: u64 = 20_190_930;
pub const ROUNDS: usize = 83;
pub const FORECASTERS: usize = 26;
/// Forecasters that pass the entry/exit rule.
pub const KEPT: usize = 18;

const MEAN: f64 = 1.8;

fn era_edges(t: usize) -> Vec<f64> {
    let mut core: Vec<f64> = (0..=9).map(|i| -0.5 + 0.5 * i as f64).collect();
    let mut edges = vec![f64::NEG_INFINITY];
    if (24..60).contains(&t) {
        edges.extend([-1.5, -1.0]);
    }
    edges.append(&mut core);
    if t < 60 {
        edges.push(4.5);
    }
    edges.push(f64::INFINITY);
    edges
}

fn date(t: usize) -> String {
    format!("{}-Q{}", 1999 + t / 4, t % 4 + 1)
}

fn edge(e: f64) -> String {
    if e.is_infinite() {
        if e > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        e.to_string()
    }
}

struct Profile {
    bias: f64,
    foresight: f64,
    noise: f64,
    spread: f64,
}

/// Presence pattern for forecaster `k`; the last eight never satisfy the
/// four-round rule.
fn presence(k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut present = vec![true; ROUNDS];
    if k < KEPT {
        let mut t = rng.random_range(0..10);
        while t < ROUNDS {
            let run = rng.random_range(1..=4);
            for p in present.iter_mut().skip(t).take(run) {
                *p = false;
            }
            t += run + rng.random_range(6..30);
        }
        return present;
    }
    let (start, len) = match k - KEPT {
        0 => (0, 12),
        1 => (0, 30),
        2 => (70, 13),
        3 => (58, 25),
        4 => (20, 5),
        5 => (44, 7),
        6 => (5, 9),
        _ => (66, 6),
    };
    for p in present.iter_mut().skip(start).take(len) {
        *p = false;
    }
    present
}

/// Returns `(survey.csv, realizations.csv)`.
pub fn generate() -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let shock = [(40, -1.3), (41, -1.7), (42, -1.2), (43, -0.6), (49, 0.9), (50, 0.7)];
    let mut y = Vec::with_capacity(ROUNDS);
    let mut level: f64 = MEAN;
    for t in 0..ROUNDS {
        let e: f64 = StandardNormal.sample(&mut rng);
        level = MEAN + 0.8 * (level - MEAN) + 0.45 * e;
        let extra = shock.iter().find(|(s, _)| *s == t).map_or(0.0, |(_, v)| *v);
        y.push(((level + extra) * 100.0).round() / 100.0);
    }
    let profiles: Vec<Profile> = (0..FORECASTERS)
        .map(|k| match k % 4 {
            0 => Profile {
                bias: rng.random_range(-0.1..0.1),
                foresight: rng.random_range(0.6..0.8),
                noise: 0.15,
                spread: rng.random_range(0.55..0.75),
            },
            1 => Profile {
                bias: rng.random_range(-0.2..0.2),
                foresight: rng.random_range(0.3..0.6),
                noise: 0.3,
                spread: rng.random_range(0.25..0.35),
            },
            2 => Profile {
                bias: if rng.random::<bool>() { 0.5 } else { -0.4 },
                foresight: rng.random_range(0.4..0.7),
                noise: 0.2,
                spread: rng.random_range(0.4..0.6),
            },
            _ => Profile {
                bias: rng.random_range(-0.1..0.1),
                foresight: rng.random_range(0.1..0.4),
                noise: 0.1,
                spread: rng.random_range(0.9..1.2),
            },
        })
        .collect();
    let patterns: Vec<Vec<bool>> = (0..FORECASTERS).map(|k| presence(k, &mut rng)).collect();

    let mut survey = String::from("survey_date,forecaster_id,bin_lower,bin_upper,probability\n");
    for t in 0..ROUNDS {
        let news: f64 = StandardNormal.sample(&mut rng);
        let signal = y[t] + 0.35 * news;
        let edges = era_edges(t);
        for (k, p) in profiles.iter().enumerate() {
            let own: f64 = StandardNormal.sample(&mut rng);
            if !patterns[k][t] {
                continue;
            }
            let mean = MEAN + p.bias + p.foresight * (signal - MEAN) + p.noise * own;
            let normal = Normal::new(mean, p.spread).expect("positive spread");
            let mut probs: Vec<f64> = edges
                .windows(2)
                .map(|w| ((normal.cdf(w[1]) - normal.cdf(w[0])) * 100.0).round())
                .collect();
            // whole percents summing to 100, slack taken by the modal bin
            let total: f64 = probs.iter().sum();
            let modal = (0..probs.len()).max_by(|a, b| probs[*a].total_cmp(&probs[*b])).unwrap_or(0);
            probs[modal] += 100.0 - total;
            if k == 3 && t % 5 == 0 {
                // a careless respondent whose answers add up to 100.5%
                probs[modal] += 0.5;
            }
            for (m, w) in edges.windows(2).enumerate() {
                survey.push_str(&format!(
                    "{},fc{:02},{},{},{}\n",
                    date(t),
                    k + 1,
                    edge(w[0]),
                    edge(w[1]),
                    probs[m] / 100.0
                ));
            }
        }
    }

    let mut realizations = String::from("survey_date,realized_value\n");
    for (t, v) in y.iter().enumerate() {
        realizations.push_str(&format!("{},{v}\n", date(t)));
    }
    (survey, realizations)
}
