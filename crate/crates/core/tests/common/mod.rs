#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random drug-like SMILES built from chain and ring fragments.
pub fn random_smiles(rng: &mut ChaCha8Rng, target_atoms: usize) -> String {
    const FRAGMENTS: [&str; 10] = [
        "C", "CC", "N", "O", "C(=O)", "c1ccccc1", "C1CCNCC1", "Cl", "C(F)(F)F", "S",
    ];
    let mut s = String::from("C");
    let mut atoms = 1;
    while atoms < target_atoms {
        let f = FRAGMENTS[rng.random_range(0..FRAGMENTS.len())];
        if f == "Cl" && atoms + 1 < target_atoms {
            continue;
        }
        s.push_str(f);
        atoms += f.chars().filter(|c| c.is_ascii_alphabetic() && *c != 'l').count();
        if f == "Cl" {
            break;
        }
    }
    s
}

/// Label: more heteroatoms than a third of the carbons. Learnable from features.
pub fn synthetic_label(smiles: &str) -> bool {
    let hetero = smiles.chars().filter(|c| matches!(c, 'N' | 'O' | 'S' | 'F')).count();
    let carbon = smiles.chars().filter(|c| matches!(c, 'C' | 'c')).count();
    3 * hetero > carbon
}

/// Writes `smiles,label` rows to `dir/name`.
pub fn write_dataset(dir: &Path, name: &str, n: usize, atoms: (usize, usize), seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = String::from("smiles,label\n");
    for _ in 0..n {
        let target = rng.random_range(atoms.0..=atoms.1);
        let s = random_smiles(&mut rng, target);
        writeln!(body, "{s},{}", u8::from(synthetic_label(&s))).unwrap();
    }
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

pub fn config_toml(data: &Path, extra: &str) -> String {
    format!(
        r#"
[dataset]
name = "synthetic"
path = "{}"
smiles_column = "smiles"
label_column = "label"

[model]
node_embedding = "gcn"
readout = "attn"
num_layers = 2
hidden_dim = 16
graph_dim = 16

[training]
epochs = 3
batch_size = 16
seeds = [0, 1]
{extra}
"#,
        data.display()
    )
}
