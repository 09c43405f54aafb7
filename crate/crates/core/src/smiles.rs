//! Parser for a documented subset of SMILES.
//!
//! Supported:
//! - organic-subset atoms `B C N O P S F Cl Br I` and aromatic `b c n o p s`
//! - bracket atoms `[isotope? symbol chirality? hcount? charge? class?]` for the
//!   organic elements plus `Si Se As H Na K Li Ca Zn Fe Mg Al Sn`
//!   (aromatic `se` and `as` are accepted inside brackets)
//! - branches, ring closures (`1`-`9` and `%nn`), dot-disconnected fragments
//! - bond symbols `- = # :`; `/` and `\` are read as single bonds
//!
//! Stereo markers and isotopes are kept on the atom as annotations and are
//! never used for featurization. Implicit hydrogens are counted, not added
//! as atoms.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Element symbols accepted by the parser. Order defines the featurizer's
/// one-hot layout.
pub const ELEMENT_VOCABULARY: [&str; 23] = [
    "B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "Si", "Se", "As", "H", "Na", "K", "Li", "Ca", "Zn", "Fe", "Mg",
    "Al", "Sn",
];

const ORGANIC_SUBSET: [&str; 10] = ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];

/// An element from [`ELEMENT_VOCABULARY`], stored as its vocabulary index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub fn from_symbol(symbol: &str) -> Option<Self> {
        ELEMENT_VOCABULARY
            .iter()
            .position(|s| *s == symbol)
            .map(|i| Element(i as u8))
    }

    pub fn symbol(self) -> &'static str {
        ELEMENT_VOCABULARY[self.0 as usize]
    }

    /// Position in [`ELEMENT_VOCABULARY`].
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Standard valences used for implicit-hydrogen counting. Only defined
    /// for the organic subset.
    pub fn standard_valences(self) -> &'static [u8] {
        match self.symbol() {
            "B" => &[3],
            "C" => &[4],
            "N" => &[3],
            "O" => &[2],
            "P" => &[3, 5],
            "S" => &[2, 4, 6],
            "F" | "Cl" | "Br" | "I" => &[1],
            _ => &[],
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Tetrahedral or extended chirality marker, retained but unused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chirality {
    CounterClockwise,
    Clockwise,
    /// `@TH1`, `@SP2`, `@OH15`, ... kept verbatim.
    Extended(String),
}

/// Directional single-bond marker (`/` or `\`), retained but unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondStereo {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    /// Hydrogen count written inside a bracket atom; `None` for organic-subset atoms.
    pub explicit_hydrogens: Option<u8>,
    /// Number of incident bonds, filled once the whole string is parsed.
    pub degree: u8,
    pub isotope: Option<u16>,
    pub chirality: Option<Chirality>,
    /// Whether the atom was written in brackets.
    pub bracket: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Bond order in units of half bonds (aromatic = 3, i.e. 1.5).
    pub fn half_units(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bond {
    pub endpoints: (usize, usize),
    pub order: BondOrder,
    pub stereo: Option<BondStereo>,
}

impl Bond {
    /// The neighbor of `atom` across this bond, if `atom` is an endpoint.
    pub fn other(&self, atom: usize) -> Option<usize> {
        match self.endpoints {
            (a, b) if a == atom => Some(b),
            (a, b) if b == atom => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl Molecule {
    /// Adjacency lists (neighbor atom, bond index) per atom.
    pub fn neighbors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.atoms.len()];
        for (bi, bond) in self.bonds.iter().enumerate() {
            let (a, b) = bond.endpoints;
            out[a].push((b, bi));
            out[b].push((a, bi));
        }
        out
    }

    /// Sum of incident bond orders in half-bond units.
    pub fn bond_order_half_units(&self, atom: usize) -> u32 {
        self.bonds
            .iter()
            .filter(|b| b.endpoints.0 == atom || b.endpoints.1 == atom)
            .map(|b| b.order.half_units())
            .sum()
    }

    /// Hydrogens attached to `atom`: the bracket count when written, otherwise
    /// derived from the lowest standard valence that accommodates the bonds.
    ///
    /// Aromatic bonds count 1.5 and the sum is rounded down. Aromatic atoms
    /// only use their lowest standard valence (thiophene `s` gets no H).
    pub fn hydrogen_count(&self, atom: usize) -> u8 {
        let a = &self.atoms[atom];
        if let Some(h) = a.explicit_hydrogens {
            return h;
        }
        let used = self.bond_order_half_units(atom) / 2;
        let valences = a.element.standard_valences();
        let candidates: &[u8] = if a.aromatic {
            &valences[..valences.len().min(1)]
        } else {
            valences
        };
        candidates
            .iter()
            .map(|&v| u32::from(v))
            .find(|&v| v >= used)
            .map(|v| (v - used) as u8)
            .unwrap_or(0)
    }

    /// Connected components as sorted atom-index lists, ordered by first atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adjacency = self.neighbors();
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut members = Vec::new();
            while let Some(v) = stack.pop() {
                members.push(v);
                for &(w, _) in &adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Flags atoms that lie on at least one cycle (incident to a non-bridge bond).
    pub fn ring_membership(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let adjacency = self.neighbors();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0usize;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // iterative DFS: (vertex, bond used to enter, next neighbor cursor)
            let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (v, parent_bond, ref mut cursor)) = stack.last_mut() {
                if *cursor < adjacency[v].len() {
                    let (w, bi) = adjacency[v][*cursor];
                    *cursor += 1;
                    if Some(bi) == parent_bond {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, Some(bi), 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let (Some(bi), Some(&(p, _, _))) = (parent_bond, stack.last()) {
                        low[p] = low[p].min(low[v]);
                        if low[v] > disc[p] {
                            is_bridge[bi] = true;
                        }
                    }
                }
            }
        }
        let mut in_ring = vec![false; n];
        for (bi, bond) in self.bonds.iter().enumerate() {
            if !is_bridge[bi] {
                in_ring[bond.endpoints.0] = true;
                in_ring[bond.endpoints.1] = true;
            }
        }
        in_ring
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmilesErrorKind {
    Syntax,
    UnsupportedFeature,
}

/// A parse failure with the byte offset and offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} at position {position} (token {token:?}): {message}")]
pub struct SmilesError {
    pub kind: SmilesErrorKind,
    pub position: usize,
    pub token: String,
    pub message: String,
}

impl SmilesError {
    fn syntax(position: usize, token: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: SmilesErrorKind::Syntax,
            position,
            token: token.into(),
            message: message.into(),
        }
    }

    fn unsupported(position: usize, token: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: SmilesErrorKind::UnsupportedFeature,
            position,
            token: token.into(),
            message: message.into(),
        }
    }
}

/// Parses a SMILES string into a [`Molecule`].
pub fn parse_smiles(input: &str) -> Result<Molecule, SmilesError> {
    if input.is_empty() {
        return Err(SmilesError::syntax(0, "", "empty SMILES string"));
    }
    if let Some(pos) = input.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::syntax(pos, "", "non-ASCII input"));
    }
    Parser::new(input).run()
}

struct PendingBond {
    order: Option<BondOrder>,
    stereo: Option<BondStereo>,
    position: usize,
}

struct RingOpening {
    atom: usize,
    bond: Option<PendingBond>,
    position: usize,
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    mol: Molecule,
    rings: BTreeMap<u32, RingOpening>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            bytes: text.as_bytes(),
            pos: 0,
            mol: Molecule::default(),
            rings: BTreeMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn token_at(&self, pos: usize) -> String {
        self.text.get(pos..pos + 1).unwrap_or("").to_string()
    }

    fn run(mut self) -> Result<Molecule, SmilesError> {
        // previous atom on the current chain; None right after '.' or at start
        let mut prev: Option<usize> = None;
        let mut branch_stack: Vec<(usize, usize)> = Vec::new();
        let mut pending: Option<PendingBond> = None;
        let mut after_dot = false;

        while let Some(c) = self.peek() {
            let here = self.pos;
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return Err(SmilesError::syntax(here, "(", "branch without a preceding atom"));
                    };
                    if pending.is_some() {
                        return Err(SmilesError::syntax(here, "(", "bond symbol before branch"));
                    }
                    branch_stack.push((p, here));
                    self.pos += 1;
                    if self.peek() == Some(b')') {
                        return Err(SmilesError::syntax(self.pos, ")", "empty branch"));
                    }
                }
                b')' => {
                    let Some((p, _)) = branch_stack.pop() else {
                        return Err(SmilesError::syntax(here, ")", "unbalanced closing parenthesis"));
                    };
                    if let Some(b) = &pending {
                        return Err(SmilesError::syntax(
                            b.position,
                            self.token_at(b.position),
                            "dangling bond symbol",
                        ));
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'.' => {
                    if prev.is_none() || pending.is_some() {
                        return Err(SmilesError::syntax(here, ".", "misplaced dot"));
                    }
                    prev = None;
                    after_dot = true;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if prev.is_none() {
                        return Err(SmilesError::syntax(
                            here,
                            self.token_at(here),
                            "bond symbol without a preceding atom",
                        ));
                    }
                    if pending.is_some() {
                        return Err(SmilesError::syntax(
                            here,
                            self.token_at(here),
                            "consecutive bond symbols",
                        ));
                    }
                    let (order, stereo) = match c {
                        b'-' => (BondOrder::Single, None),
                        b'=' => (BondOrder::Double, None),
                        b'#' => (BondOrder::Triple, None),
                        b':' => (BondOrder::Aromatic, None),
                        b'/' => (BondOrder::Single, Some(BondStereo::Up)),
                        b'\\' => (BondOrder::Single, Some(BondStereo::Down)),
                        _ => return Err(SmilesError::unsupported(here, "$", "quadruple bonds are not supported")),
                    };
                    pending = Some(PendingBond {
                        order: Some(order),
                        stereo,
                        position: here,
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return Err(SmilesError::syntax(
                            here,
                            self.token_at(here),
                            "ring closure without a preceding atom",
                        ));
                    };
                    let label = self.ring_label()?;
                    self.ring_closure(p, label, pending.take(), here)?;
                }
                b'*' => {
                    return Err(SmilesError::unsupported(here, "*", "wildcard atoms are not supported"));
                }
                b'>' => {
                    return Err(SmilesError::unsupported(here, ">", "reaction SMILES are not supported"));
                }
                _ => {
                    let atom = self.atom()?;
                    let idx = self.mol.atoms.len();
                    self.mol.atoms.push(atom);
                    if let Some(p) = prev {
                        self.add_bond(p, idx, pending.take(), here)?;
                    } else if let Some(b) = pending.take() {
                        return Err(SmilesError::syntax(
                            b.position,
                            self.token_at(b.position),
                            "bond symbol without a preceding atom",
                        ));
                    }
                    prev = Some(idx);
                    after_dot = false;
                }
            }
        }

        if let Some(b) = pending {
            return Err(SmilesError::syntax(
                b.position,
                self.token_at(b.position),
                "dangling bond symbol",
            ));
        }
        if !branch_stack.is_empty() {
            return Err(SmilesError::syntax(
                self.pos,
                "(",
                "unbalanced parenthesis: branch not closed",
            ));
        }
        if after_dot {
            return Err(SmilesError::syntax(self.pos, ".", "dot at end of input"));
        }
        if let Some((label, open)) = self.rings.iter().next() {
            return Err(SmilesError::syntax(
                open.position,
                self.token_at(open.position),
                format!("ring closure {label} never closed"),
            ));
        }

        let n = self.mol.atoms.len();
        let mut degree = vec![0u32; n];
        for b in &self.mol.bonds {
            degree[b.endpoints.0] += 1;
            degree[b.endpoints.1] += 1;
        }
        for (atom, d) in self.mol.atoms.iter_mut().zip(degree) {
            atom.degree = u8::try_from(d).unwrap_or(u8::MAX);
        }
        Ok(self.mol)
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let here = self.pos;
        if self.peek() == Some(b'%') {
            let digits = self.bytes.get(here + 1..here + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0'))
                }
                _ => Err(SmilesError::syntax(here, "%", "expected two digits after %")),
            }
        } else {
            let d = self.bytes[here];
            self.pos += 1;
            Ok(u32::from(d - b'0'))
        }
    }

    fn ring_closure(
        &mut self,
        atom: usize,
        label: u32,
        bond: Option<PendingBond>,
        position: usize,
    ) -> Result<(), SmilesError> {
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, RingOpening { atom, bond, position });
                Ok(())
            }
            Some(open) => {
                if open.atom == atom {
                    return Err(SmilesError::syntax(
                        position,
                        self.token_at(position),
                        "ring closure onto the same atom",
                    ));
                }
                let merged = match (open.bond, bond) {
                    (Some(a), Some(b)) => {
                        if a.order != b.order {
                            return Err(SmilesError::syntax(
                                position,
                                self.token_at(position),
                                "conflicting ring-closure bond orders",
                            ));
                        }
                        Some(b)
                    }
                    (a, b) => a.or(b),
                };
                self.add_bond(open.atom, atom, merged, position)
            }
        }
    }

    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        pending: Option<PendingBond>,
        position: usize,
    ) -> Result<(), SmilesError> {
        let exists = self.mol.bonds.iter().any(|bond| {
            let (x, y) = bond.endpoints;
            (x == a && y == b) || (x == b && y == a)
        });
        if exists {
            return Err(SmilesError::syntax(
                position,
                self.token_at(position),
                "duplicate bond between the same atoms",
            ));
        }
        let (order, stereo) = match pending {
            Some(PendingBond {
                order: Some(o), stereo, ..
            }) => (o, stereo),
            Some(PendingBond {
                order: None, stereo, ..
            }) => (self.default_order(a, b), stereo),
            None => (self.default_order(a, b), None),
        };
        self.mol.bonds.push(Bond {
            endpoints: (a, b),
            order,
            stereo,
        });
        Ok(())
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.mol.atoms[a].aromatic && self.mol.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn atom(&mut self) -> Result<Atom, SmilesError> {
        let here = self.pos;
        let c = self.bytes[here];
        if c == b'[' {
            return self.bracket_atom();
        }
        // two-letter organic symbols first
        if let Some(two) = self.text.get(here..here + 2) {
            if two == "Cl" || two == "Br" {
                self.pos += 2;
                return Ok(plain_atom(Element::from_symbol(two).unwrap(), false));
            }
        }
        let sym = (c as char).to_string();
        if c.is_ascii_uppercase() {
            if ORGANIC_SUBSET.contains(&sym.as_str()) {
                self.pos += 1;
                return Ok(plain_atom(Element::from_symbol(&sym).unwrap(), false));
            }
            return Err(SmilesError::syntax(here, sym, "element must be written in brackets"));
        }
        if matches!(c, b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
            self.pos += 1;
            let upper = sym.to_ascii_uppercase();
            return Ok(plain_atom(Element::from_symbol(&upper).unwrap(), true));
        }
        Err(SmilesError::syntax(here, sym, "unexpected character"))
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let Some(rel_close) = self.bytes[open..].iter().position(|&b| b == b']') else {
            return Err(SmilesError::syntax(open, "[", "unterminated bracket atom"));
        };
        let close = open + rel_close;
        let body = &self.text[open + 1..close];
        let token = &self.text[open..=close];
        let at = |offset: usize| open + 1 + offset;
        let b = body.as_bytes();
        let mut i = 0usize;

        let mut isotope = None;
        let iso_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i > iso_start {
            isotope = Some(
                body[iso_start..i]
                    .parse::<u16>()
                    .map_err(|_| SmilesError::syntax(at(iso_start), token, "isotope out of range"))?,
            );
        }

        // element symbol
        if i >= b.len() {
            return Err(SmilesError::syntax(at(i), token, "bracket atom without element"));
        }
        let (element, aromatic) = if b[i] == b'*' {
            return Err(SmilesError::unsupported(
                at(i),
                token,
                "wildcard atoms are not supported",
            ));
        } else if b[i].is_ascii_uppercase() {
            let two = body.get(i..i + 2).filter(|s| s.as_bytes()[1].is_ascii_lowercase());
            if let Some(t) = two {
                if let Some(e) = Element::from_symbol(t) {
                    i += 2;
                    (e, false)
                } else if PERIODIC_TWO_LETTER.contains(&t) {
                    return Err(SmilesError::unsupported(
                        at(i),
                        token,
                        format!("element {t} is not supported"),
                    ));
                } else {
                    let one = &body[i..i + 1];
                    let e = Element::from_symbol(one).ok_or_else(|| {
                        SmilesError::unsupported(at(i), token, format!("element {one} is not supported"))
                    })?;
                    i += 1;
                    (e, false)
                }
            } else {
                let one = &body[i..i + 1];
                let e = Element::from_symbol(one)
                    .ok_or_else(|| SmilesError::unsupported(at(i), token, format!("element {one} is not supported")))?;
                i += 1;
                (e, false)
            }
        } else if b[i].is_ascii_lowercase() {
            let two = body.get(i..i + 2);
            if matches!(two, Some("se") | Some("as")) {
                let sym = two.unwrap();
                i += 2;
                let e = Element::from_symbol(&capitalize(sym)).unwrap();
                (e, true)
            } else if matches!(b[i], b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
                let e = Element::from_symbol(&body[i..i + 1].to_ascii_uppercase()).unwrap();
                i += 1;
                (e, true)
            } else {
                return Err(SmilesError::unsupported(at(i), token, "unsupported aromatic element"));
            }
        } else {
            return Err(SmilesError::syntax(at(i), token, "expected element symbol"));
        };

        // chirality
        let mut chirality = None;
        if i < b.len() && b[i] == b'@' {
            if b.get(i + 1) == Some(&b'@') {
                chirality = Some(Chirality::Clockwise);
                i += 2;
            } else {
                let start = i;
                i += 1;
                let class = body.get(i..i + 2);
                if matches!(class, Some("TH" | "AL" | "SP" | "TB" | "OH")) {
                    i += 2;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                    chirality = Some(Chirality::Extended(body[start..i].to_string()));
                } else {
                    chirality = Some(Chirality::CounterClockwise);
                }
            }
        }

        // hydrogen count
        let mut hydrogens = 0u8;
        if i < b.len() && b[i] == b'H' {
            i += 1;
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            hydrogens = if i > start {
                body[start..i]
                    .parse::<u8>()
                    .map_err(|_| SmilesError::syntax(at(start), token, "hydrogen count out of range"))?
            } else {
                1
            };
        }

        // charge
        let mut charge: i32 = 0;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            let sign_char = b[i];
            let sign = if sign_char == b'+' { 1 } else { -1 };
            let start = i;
            i += 1;
            let digits = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i > digits {
                let mag: i32 = body[digits..i]
                    .parse()
                    .map_err(|_| SmilesError::syntax(at(start), token, "charge out of range"))?;
                charge = sign * mag;
            } else {
                let mut count = 1;
                while i < b.len() && b[i] == sign_char {
                    count += 1;
                    i += 1;
                }
                charge = sign * count;
            }
            if !(-4..=4).contains(&charge) {
                return Err(SmilesError::unsupported(
                    at(start),
                    token,
                    "formal charge outside [-4, +4]",
                ));
            }
        }

        // atom class
        if i < b.len() && b[i] == b':' {
            i += 1;
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i == start {
                return Err(SmilesError::syntax(at(start), token, "atom class requires digits"));
            }
        }

        if i != b.len() {
            return Err(SmilesError::syntax(
                at(i),
                token,
                "unexpected characters in bracket atom",
            ));
        }

        self.pos = close + 1;
        Ok(Atom {
            element,
            aromatic,
            formal_charge: charge as i8,
            explicit_hydrogens: Some(hydrogens),
            degree: 0,
            isotope,
            chirality,
            bracket: true,
        })
    }
}

fn plain_atom(element: Element, aromatic: bool) -> Atom {
    Atom {
        element,
        aromatic,
        formal_charge: 0,
        explicit_hydrogens: None,
        degree: 0,
        isotope: None,
        chirality: None,
        bracket: false,
    }
}

fn capitalize(sym: &str) -> String {
    let mut cs = sym.chars();
    match cs.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + cs.as_str(),
        None => String::new(),
    }
}

// Every two-letter symbol in the periodic table, so that `[Cu]` reports an
// unsupported element rather than being read as `C` followed by junk.
const PERIODIC_TWO_LETTER: [&str; 104] = [
    "He", "Li", "Be", "Ne", "Na", "Mg", "Al", "Si", "Cl", "Ar", "Ca", "Sc", "Ti", "Cr", "Mn", "Fe", "Co", "Ni", "Cu",
    "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm",
    "Yb", "Lu", "Hf", "Ta", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac",
    "Th", "Pa", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt",
    "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn bond_set(m: &Molecule) -> Vec<(usize, usize, BondOrder)> {
        let mut v: Vec<_> = m
            .bonds
            .iter()
            .map(|b| {
                let (x, y) = b.endpoints;
                (x.min(y), x.max(y), b.order)
            })
            .collect();
        v.sort_by_key(|t| (t.0, t.1));
        v
    }

    #[test]
    fn methane() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.atoms.len(), 1);
        assert!(m.bonds.is_empty());
        assert_eq!(m.atoms[0].element.symbol(), "C");
        assert_eq!(m.hydrogen_count(0), 4);
    }

    #[test]
    fn benzene_ring_trace() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.atoms.len(), 6);
        assert!(m.atoms.iter().all(|a| a.aromatic && a.element.symbol() == "C"));
        assert_eq!(m.bonds.len(), 6);
        assert!(m.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
        // manual trace: 0-1, 1-2, 2-3, 3-4, 4-5, and closure 0-5
        let expected: Vec<(usize, usize)> = vec![(0, 1), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5)];
        let got: Vec<(usize, usize)> = bond_set(&m).iter().map(|t| (t.0, t.1)).collect();
        assert_eq!(got, expected);
        assert!(m.atoms.iter().all(|a| a.degree == 2));
        assert!((0..6).all(|i| m.hydrogen_count(i) == 1));
        assert!(m.ring_membership().iter().all(|&r| r));
    }

    #[test]
    fn unbalanced_branch_position() {
        let e = parse_smiles("C(").unwrap_err();
        assert_eq!(e.kind, SmilesErrorKind::Syntax);
        assert_eq!(e.position, 2);
    }

    #[test]
    fn acetic_acid() {
        let m = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(m.atoms.len(), 4);
        assert_eq!(
            bond_set(&m),
            vec![
                (0, 1, BondOrder::Single),
                (1, 2, BondOrder::Double),
                (1, 3, BondOrder::Single)
            ]
        );
        assert_eq!(m.hydrogen_count(0), 3);
        assert_eq!(m.hydrogen_count(1), 0);
        assert_eq!(m.hydrogen_count(2), 0);
        assert_eq!(m.hydrogen_count(3), 1);
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[13CH3][N+](=O)[O-]").unwrap();
        assert_eq!(m.atoms[0].isotope, Some(13));
        assert_eq!(m.atoms[0].explicit_hydrogens, Some(3));
        assert_eq!(m.atoms[1].formal_charge, 1);
        assert_eq!(m.atoms[3].formal_charge, -1);
        let m = parse_smiles("[Na+].[Cl-]").unwrap();
        assert_eq!(m.atoms.len(), 2);
        assert!(m.bonds.is_empty());
        assert_eq!(m.components().len(), 2);
        let m = parse_smiles("[Fe+++]").unwrap();
        assert_eq!(m.atoms[0].formal_charge, 3);
        let m = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(m.atoms[3].explicit_hydrogens, Some(1));
        assert!(m.atoms[3].aromatic);
        let m = parse_smiles("[se]1cccc1").unwrap();
        assert_eq!(m.atoms[0].element.symbol(), "Se");
    }

    #[test]
    fn stereo_is_accepted_and_kept_as_annotation() {
        let m = parse_smiles("F/C=C\\F").unwrap();
        assert_eq!(m.bonds.len(), 3);
        assert_eq!(m.bonds[0].stereo, Some(BondStereo::Up));
        let m = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        assert_eq!(m.atoms[1].chirality, Some(Chirality::Clockwise));
        let m = parse_smiles("N[C@H](C)C(=O)O").unwrap();
        assert_eq!(m.atoms[1].chirality, Some(Chirality::CounterClockwise));
        let m = parse_smiles("F[C@TH2](Cl)(Br)I").unwrap();
        assert!(matches!(m.atoms[1].chirality, Some(Chirality::Extended(_))));
    }

    #[test]
    fn percent_ring_closures() {
        let a = parse_smiles("C%10CC%10").unwrap();
        let b = parse_smiles("C1CC1").unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_smiles("C2CC2").unwrap(), b);
    }

    #[test]
    fn ring_bond_order_from_either_side() {
        let m = parse_smiles("C=1CCC1").unwrap();
        assert!(m.bonds.iter().any(|b| b.order == BondOrder::Double));
        let m = parse_smiles("C1CCC=1").unwrap();
        assert!(m.bonds.iter().any(|b| b.order == BondOrder::Double));
        assert!(parse_smiles("C=1CCC#1").is_err());
    }

    #[test]
    fn errors_carry_kind_and_position() {
        let e = parse_smiles("C1CC").unwrap_err();
        assert_eq!(e.kind, SmilesErrorKind::Syntax);
        assert_eq!(e.position, 1);
        let e = parse_smiles("CC*").unwrap_err();
        assert_eq!(e.kind, SmilesErrorKind::UnsupportedFeature);
        assert_eq!(e.position, 2);
        let e = parse_smiles("CC>CC").unwrap_err();
        assert_eq!(e.kind, SmilesErrorKind::UnsupportedFeature);
        let e = parse_smiles("C[Pt]C").unwrap_err();
        assert_eq!(e.kind, SmilesErrorKind::UnsupportedFeature);
        assert_eq!(e.token, "[Pt]");
        let e = parse_smiles("C[Cu]").unwrap_err();
        assert_eq!(e.kind, SmilesErrorKind::UnsupportedFeature);
        let e = parse_smiles("CC)").unwrap_err();
        assert_eq!(e.position, 2);
        assert!(parse_smiles("").is_err());
        assert!(parse_smiles("C==C").is_err());
        assert!(parse_smiles("Xe").is_err());
        assert!(parse_smiles("C.").is_err());
        assert!(parse_smiles("[C").is_err());
        assert!(parse_smiles("C11").is_err());
        assert!(parse_smiles("C12CC12").is_err());
        assert_eq!(
            parse_smiles("[C+5]").unwrap_err().kind,
            SmilesErrorKind::UnsupportedFeature
        );
    }

    #[test]
    fn halogens_and_branches() {
        let m = parse_smiles("ClC(Br)(F)I").unwrap();
        assert_eq!(m.atoms.len(), 5);
        assert_eq!(m.atoms[1].degree, 4);
        assert_eq!(m.hydrogen_count(1), 0);
        assert_eq!(m.atoms[0].element.symbol(), "Cl");
    }

    #[test]
    fn implicit_hydrogens_follow_valence_rules() {
        let m = parse_smiles("CS(=O)(=O)C").unwrap();
        assert_eq!(m.hydrogen_count(1), 0);
        let m = parse_smiles("c1ccsc1").unwrap();
        assert_eq!(m.hydrogen_count(3), 0);
        let m = parse_smiles("c1ccc2ccccc2c1").unwrap();
        assert_eq!(m.hydrogen_count(3), 0);
        assert_eq!(m.hydrogen_count(8), 0);
        assert_eq!(m.hydrogen_count(4), 1);
        assert_eq!(m.hydrogen_count(0), 1);
        let m = parse_smiles("OP(=O)(O)O").unwrap();
        assert_eq!(m.hydrogen_count(1), 0);
        let m = parse_smiles("C#N").unwrap();
        assert_eq!(m.hydrogen_count(0), 1);
        assert_eq!(m.hydrogen_count(1), 0);
    }

    #[test]
    fn ring_membership_excludes_substituents() {
        let m = parse_smiles("Cc1ccccc1").unwrap();
        let ring = m.ring_membership();
        assert!(!ring[0]);
        assert!(ring[1..].iter().all(|&r| r));
        let m = parse_smiles("C1CC1C1CC1").unwrap();
        assert_eq!(m.ring_membership(), vec![true; 6]);
        let m = parse_smiles("C1CC1CC1CC1").unwrap();
        assert_eq!(m.ring_membership(), vec![true, true, true, false, true, true, true]);
        let m = parse_smiles("C1CC1CCC1CC1").unwrap();
        assert!(!m.ring_membership()[3]);
    }
}
