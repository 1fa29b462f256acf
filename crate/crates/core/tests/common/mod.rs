#![allow(dead_code)]

use gatedtab::data::{CategoricalColumn, ContinuousColumn, RawTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rows labelled by `effect0[c0] + effect1[c1] > 0`; every sum is at least
/// 0.25 away from zero. `x` is noise.
pub fn separable_table(rows: usize, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let effect0 = [-1.0, -0.5, 0.5, 1.0];
    let effect1 = [-0.75, 0.25, 0.75];
    let (mut c0, mut c1, mut x, mut labels) = (vec![], vec![], vec![], vec![]);
    for _ in 0..rows {
        let (k0, k1) = (rng.gen_range(0..4), rng.gen_range(0..3));
        c0.push(format!("v{k0}"));
        c1.push(format!("u{k1}"));
        x.push(Some(rng.gen_range(-1.0..1.0)));
        labels.push(u8::from(effect0[k0] + effect1[k1] > 0.0));
    }
    RawTable {
        name: "separable".into(),
        categorical: vec![
            CategoricalColumn { name: "c0".into(), values: c0 },
            CategoricalColumn { name: "c1".into(), values: c1 },
        ],
        continuous: vec![ContinuousColumn { name: "x".into(), values: x }],
        label_name: "y".into(),
        positive: "1".into(),
        labels,
    }
}

/// Pair-counting AUROC: wins plus half the ties over all positive/negative
/// pairs.
pub fn mann_whitney(scores: &[f64], labels: &[f64]) -> f64 {
    let mut half_wins = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi == 1.0 {
            pos += 1;
        } else {
            neg += 1;
        }
        if yi != 1.0 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 0.0 {
                half_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    half_wins as f64 / (2.0 * pos as f64 * neg as f64)
}

/// Workspace `data/` directory.
pub fn workspace_data() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Directory holding the dataset CSVs: `$GATEDTAB_DATA_DIR` or `data/raw`.
pub fn raw_dir() -> std::path::PathBuf {
    std::env::var_os("GATEDTAB_DATA_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| workspace_data().join("raw"))
}

pub fn schema_path(name: &str) -> std::path::PathBuf {
    workspace_data().join("schemas").join(format!("{name}.schema"))
}
