//! Deterministic synthetic data in NSL-KDD record format (41 feature fields,
//! attack name, difficulty). Categories are separable enough that the fast
//! pipeline can learn them, without resembling the real distributions.

use std::fmt::Write as _;

use nids::dataset::AttackCategory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const PROTOCOLS: [&str; 3] = ["tcp", "udp", "icmp"];
const SERVICES: [&str; 4] = ["http", "smtp", "ftp", "private"];
const FLAGS: [&str; 3] = ["SF", "S0", "REJ"];

fn attack_name(category: AttackCategory, pick: usize) -> &'static str {
    match category {
        AttackCategory::Normal => "normal",
        AttackCategory::DoS => ["neptune", "smurf"][pick % 2],
        AttackCategory::Probe => ["satan", "ipsweep"][pick % 2],
        AttackCategory::R2L => ["guess_passwd", "warezclient"][pick % 2],
        AttackCategory::U2R => ["rootkit", "buffer_overflow"][pick % 2],
    }
}

/// Numeric centers for a handful of informative columns; the rest stay near
/// zero. Indexed by category.
fn centers(category: AttackCategory) -> [f64; 5] {
    match category {
        AttackCategory::Normal => [1.0, 200.0, 300.0, 0.1, 0.9],
        AttackCategory::DoS => [0.0, 1000.0, 0.0, 0.9, 0.1],
        AttackCategory::Probe => [0.0, 10.0, 10.0, 0.5, 0.3],
        AttackCategory::R2L => [5.0, 150.0, 900.0, 0.2, 0.6],
        AttackCategory::U2R => [30.0, 400.0, 60.0, 0.05, 0.4],
    }
}

/// Column indices (within the 41 features) that carry the category signal.
/// None are categorical indices (1, 2, 3).
const SIGNAL_COLUMNS: [usize; 5] = [0, 4, 5, 24, 31];

fn one_row(category: AttackCategory, rng: &mut ChaCha20Rng) -> String {
    let mut fields: Vec<String> = Vec::with_capacity(43);
    let c = centers(category);
    for i in 0..41 {
        match i {
            1 => fields.push(PROTOCOLS[rng.gen_range(0..PROTOCOLS.len())].to_string()),
            2 => fields.push(SERVICES[rng.gen_range(0..SERVICES.len())].to_string()),
            3 => fields.push(FLAGS[rng.gen_range(0..FLAGS.len())].to_string()),
            _ => {
                let value = match SIGNAL_COLUMNS.iter().position(|&s| s == i) {
                    Some(slot) => c[slot] * rng.gen_range(0.8..1.2),
                    None => rng.gen_range(0.0..0.05),
                };
                fields.push(format!("{value:.3}"));
            }
        }
    }
    fields.push(attack_name(category, rng.gen_range(0..2)).to_string());
    fields.push("15".to_string());
    fields.join(",")
}

/// A synthetic split as NSL-KDD CSV text, `counts` rows per category in the
/// given order, rows interleaved deterministically.
pub fn synthetic_nslkdd(counts: &[(AttackCategory, usize)], seed: u64) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &(category, n) in counts {
        for _ in 0..n {
            rows.push(one_row(category, &mut rng));
        }
    }
    // deterministic interleave so no split is sorted by class
    let mut out = String::new();
    let stride = 7;
    for offset in 0..stride {
        for (i, row) in rows.iter().enumerate() {
            if i % stride == offset {
                let _ = writeln!(out, "{row}");
            }
        }
    }
    out
}
