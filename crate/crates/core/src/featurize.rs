//! Molecule to graph conversion: node feature matrix X and adjacency A.
//!
//! Feature layout per node (58 columns with the default schema):
//!
//! | columns | group                                    |
//! |---------|------------------------------------------|
//! | 0..24   | element one-hot (23 symbols + other)     |
//! | 24..31  | degree 0..=6                             |
//! | 31..36  | implicit + explicit H count 0..=4        |
//! | 36..41  | formal charge -2..=+2, clipped           |
//! | 41      | aromatic flag                            |
//! | 42      | ring membership flag                     |
//! | 43..49  | bond-order sum incl. H, bucket 1..=6     |
//! | 49..58  | zero padding                             |

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::EdgeList;
use crate::scalar::Scalar;
use crate::smiles::{parse_smiles, Molecule, SmilesError, ELEMENT_VOCABULARY};

pub const MAX_DEGREE: usize = 6;
pub const MAX_HYDROGENS: usize = 4;
pub const CHARGE_RANGE: i8 = 2;
pub const VALENCE_BUCKETS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("atom {atom}: degree {degree} exceeds {MAX_DEGREE}")]
    Degree { atom: usize, degree: usize },
    #[error("atom {atom}: hydrogen count {count} exceeds {MAX_HYDROGENS}")]
    Hydrogens { atom: usize, count: usize },
    #[error("molecule has no atoms")]
    Empty,
}

/// Either stage of turning a SMILES string into a graph can fail.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphBuildError {
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Column layout of the node feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSchema {
    padding: usize,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self { padding: 9 }
    }
}

impl FeatureSchema {
    pub fn with_padding(padding: usize) -> Self {
        Self { padding }
    }

    pub const fn element_offset(&self) -> usize {
        0
    }

    /// Element slots, including the trailing "other" guard.
    pub const fn element_width(&self) -> usize {
        ELEMENT_VOCABULARY.len() + 1
    }

    pub const fn degree_offset(&self) -> usize {
        self.element_offset() + self.element_width()
    }

    pub const fn hydrogen_offset(&self) -> usize {
        self.degree_offset() + MAX_DEGREE + 1
    }

    pub const fn charge_offset(&self) -> usize {
        self.hydrogen_offset() + MAX_HYDROGENS + 1
    }

    pub const fn aromatic_column(&self) -> usize {
        self.charge_offset() + 2 * CHARGE_RANGE as usize + 1
    }

    pub const fn ring_column(&self) -> usize {
        self.aromatic_column() + 1
    }

    pub const fn valence_offset(&self) -> usize {
        self.ring_column() + 1
    }

    pub const fn padding_offset(&self) -> usize {
        self.valence_offset() + VALENCE_BUCKETS
    }

    /// Total feature width d0.
    pub const fn width(&self) -> usize {
        self.padding_offset() + self.padding
    }

    /// Column ranges of the one-hot groups; each sums to one per node.
    pub fn one_hot_groups(&self) -> [std::ops::Range<usize>; 5] {
        [
            self.element_offset()..self.degree_offset(),
            self.degree_offset()..self.hydrogen_offset(),
            self.hydrogen_offset()..self.charge_offset(),
            self.charge_offset()..self.aromatic_column(),
            self.valence_offset()..self.padding_offset(),
        ]
    }
}

/// One molecule as `G(X, A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph<T: Scalar> {
    pub node_features: Array2<T>,
    /// Symmetric 0/1 matrix with ones on the diagonal.
    pub adjacency: Array2<T>,
    pub num_nodes: usize,
    pub label: Option<bool>,
    pub source_id: Option<String>,
}

impl<T: Scalar> MolecularGraph<T> {
    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn edges(&self) -> EdgeList {
        EdgeList::from_dense(&self.adjacency)
    }

    /// Relabels nodes so that new node `k` is old node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.num_nodes, "permutation length");
        let x = Array2::from_shape_fn(self.node_features.raw_dim(), |(i, j)| self.node_features[[order[i], j]]);
        let a = Array2::from_shape_fn(self.adjacency.raw_dim(), |(i, j)| self.adjacency[[order[i], order[j]]]);
        Self {
            node_features: x,
            adjacency: a,
            num_nodes: self.num_nodes,
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }
}

pub fn featurize<T: Scalar>(mol: &Molecule, schema: &FeatureSchema) -> Result<MolecularGraph<T>, FeatureError> {
    let n = mol.atoms.len();
    if n == 0 {
        return Err(FeatureError::Empty);
    }
    let ring = mol.ring_membership();
    let mut x = Array2::zeros((n, schema.width()));
    let one = T::one();
    for (i, atom) in mol.atoms.iter().enumerate() {
        let element_slot = atom.element.index().min(ELEMENT_VOCABULARY.len());
        x[[i, schema.element_offset() + element_slot]] = one;

        let degree = usize::from(atom.degree);
        if degree > MAX_DEGREE {
            return Err(FeatureError::Degree { atom: i, degree });
        }
        x[[i, schema.degree_offset() + degree]] = one;

        let h = usize::from(mol.hydrogen_count(i));
        if h > MAX_HYDROGENS {
            return Err(FeatureError::Hydrogens { atom: i, count: h });
        }
        x[[i, schema.hydrogen_offset() + h]] = one;

        let charge = atom.formal_charge.clamp(-CHARGE_RANGE, CHARGE_RANGE);
        x[[i, schema.charge_offset() + (charge + CHARGE_RANGE) as usize]] = one;

        if atom.aromatic {
            x[[i, schema.aromatic_column()]] = one;
        }
        if ring[i] {
            x[[i, schema.ring_column()]] = one;
        }

        let valence = (mol.bond_order_half_units(i) / 2) as usize + h;
        let bucket = valence.clamp(1, VALENCE_BUCKETS);
        x[[i, schema.valence_offset() + bucket - 1]] = one;
    }

    let mut a = Array2::eye(n);
    for bond in &mol.bonds {
        let (u, v) = bond.endpoints;
        a[[u, v]] = one;
        a[[v, u]] = one;
    }

    Ok(MolecularGraph {
        node_features: x,
        adjacency: a,
        num_nodes: n,
        label: None,
        source_id: None,
    })
}

/// Keeps only the component with the most atoms; ties go to the component
/// containing the lowest atom index.
pub fn strip_to_largest_component(mol: &Molecule) -> Molecule {
    let components = mol.components();
    if components.len() <= 1 {
        return mol.clone();
    }
    // components are ordered by first atom, so max_by_key with a reversed
    // index picks the earliest among equally large ones
    let keep = components
        .iter()
        .enumerate()
        .max_by_key(|(k, c)| (c.len(), std::cmp::Reverse(*k)))
        .map(|(_, c)| c)
        .expect("non-empty molecule");

    let mut remap = vec![usize::MAX; mol.atoms.len()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let atoms = keep.iter().map(|&i| mol.atoms[i].clone()).collect();
    let bonds = mol
        .bonds
        .iter()
        .filter(|b| remap[b.endpoints.0] != usize::MAX)
        .map(|b| {
            let mut b = b.clone();
            b.endpoints = (remap[b.endpoints.0], remap[b.endpoints.1]);
            b
        })
        .collect();
    Molecule { atoms, bonds }
}

/// Parses, optionally strips salts, and featurizes with the default schema.
pub fn graph_from_smiles<T: Scalar>(smiles: &str, strip_salts: bool) -> Result<MolecularGraph<T>, GraphBuildError> {
    let mut mol = parse_smiles(smiles)?;
    if strip_salts {
        mol = strip_to_largest_component(&mol);
    }
    let mut graph = featurize(&mol, &FeatureSchema::default())?;
    graph.source_id = Some(smiles.to_string());
    Ok(graph)
}
