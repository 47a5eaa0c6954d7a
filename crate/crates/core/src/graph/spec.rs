use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Label = u32;

/// Operand label lists, output label list and the extent of every label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EinsumSpec {
    pub operands: Vec<Vec<Label>>,
    pub output: Vec<Label>,
    /// Serialized as `[label, extent]` pairs: integer map keys do not survive
    /// JSON inside tagged enums.
    #[serde(with = "extent_pairs")]
    pub extents: BTreeMap<Label, usize>,
}

mod extent_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Label;

    pub fn serialize<S: Serializer>(m: &BTreeMap<Label, usize>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(Label, usize)> = m.iter().map(|(&l, &e)| (l, e)).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<Label, usize>, D::Error> {
        Ok(Vec::<(Label, usize)>::deserialize(d)?.into_iter().collect())
    }
}

impl EinsumSpec {
    pub fn new(
        operands: Vec<Vec<Label>>,
        output: Vec<Label>,
        extents: BTreeMap<Label, usize>,
    ) -> Result<Self> {
        let spec = Self {
            operands,
            output,
            extents,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec by reading extents off the operand shapes.
    pub fn from_shapes(
        operands: Vec<Vec<Label>>,
        output: Vec<Label>,
        shapes: &[&[usize]],
    ) -> Result<Self> {
        if operands.len() != shapes.len() {
            return Err(Error::einsum(format!(
                "{} operand label lists for {} inputs",
                operands.len(),
                shapes.len()
            )));
        }
        let mut extents = BTreeMap::new();
        for (k, (labels, shape)) in operands.iter().zip(shapes).enumerate() {
            if labels.len() != shape.len() {
                return Err(Error::shape(format!(
                    "operand {k} has {} labels but order {}",
                    labels.len(),
                    shape.len()
                )));
            }
            for (&l, &e) in labels.iter().zip(shape.iter()) {
                if let Some(&prev) = extents.get(&l) {
                    if prev != e {
                        return Err(Error::Inconsistent(format!(
                            "axis {} has extents {prev} and {e}",
                            letter(l)
                        )));
                    }
                } else {
                    extents.insert(l, e);
                }
            }
        }
        Self::new(operands, output, extents)
    }

    /// Parses `"ij,jk->ik"` (letters only; `→` also accepted).
    pub fn parse(text: &str, shapes: &[&[usize]]) -> Result<Self> {
        let text = text.replace('→', "->");
        let (lhs, rhs) = text
            .split_once("->")
            .ok_or_else(|| Error::einsum(format!("`{text}` has no `->`")))?;
        let mut ids: HashMap<char, Label> = HashMap::new();
        let mut id_of = |c: char| -> Result<Label> {
            if !c.is_ascii_alphabetic() {
                return Err(Error::einsum(format!("bad subscript character `{c}`")));
            }
            let n = ids.len() as Label;
            Ok(*ids.entry(c).or_insert(n))
        };
        let mut operands = Vec::new();
        if !lhs.trim().is_empty() || !shapes.is_empty() {
            for part in lhs.split(',') {
                operands.push(
                    part.trim()
                        .chars()
                        .map(&mut id_of)
                        .collect::<Result<Vec<_>>>()?,
                );
            }
        }
        let output = rhs
            .trim()
            .chars()
            .map(&mut id_of)
            .collect::<Result<Vec<_>>>()?;
        Self::from_shapes(operands, output, shapes)
    }

    fn validate(&self) -> Result<()> {
        let mut used = BTreeSet::new();
        for labels in &self.operands {
            used.extend(labels.iter().copied());
        }
        for l in &used {
            match self.extents.get(l) {
                None => return Err(Error::einsum(format!("axis {} has no extent", letter(*l)))),
                Some(0) => return Err(Error::shape(format!("axis {} has extent 0", letter(*l)))),
                Some(_) => {}
            }
        }
        let mut seen = BTreeSet::new();
        for l in &self.output {
            if !used.contains(l) {
                return Err(Error::einsum(format!(
                    "output axis {} appears in no operand",
                    letter(*l)
                )));
            }
            if !seen.insert(*l) {
                return Err(Error::einsum(format!(
                    "output axis {} repeated",
                    letter(*l)
                )));
            }
        }
        if self.extents.len() != used.len() {
            return Err(Error::einsum("extent map lists unused axes"));
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.operands.len()
    }

    pub fn extent(&self, l: Label) -> usize {
        self.extents[&l]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.output.iter().map(|l| self.extents[l]).collect()
    }

    pub fn operand_shape(&self, k: usize) -> Vec<usize> {
        self.operands[k].iter().map(|l| self.extents[l]).collect()
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.extents.keys().copied().collect()
    }

    pub fn fresh_label(&self) -> Label {
        self.extents.keys().next_back().map_or(0, |l| l + 1)
    }

    /// Number of occurrences of `l` among operands.
    pub fn count(&self, l: Label) -> usize {
        self.operands.iter().flatten().filter(|&&x| x == l).count()
    }

    /// Relabels every axis through `f`. The caller guarantees that `f` is
    /// injective on the labels in use.
    pub fn relabel(&self, f: impl Fn(Label) -> Label) -> Self {
        Self {
            operands: self
                .operands
                .iter()
                .map(|ops| ops.iter().map(|&l| f(l)).collect())
                .collect(),
            output: self.output.iter().map(|&l| f(l)).collect(),
            extents: self.extents.iter().map(|(&l, &e)| (f(l), e)).collect(),
        }
    }

    /// True for a one-operand spec that returns its operand unchanged.
    pub fn is_identity(&self) -> bool {
        self.operands.len() == 1 && self.operands[0] == self.output
    }
}

/// Display name of an axis id: `a`..`z`, `A`..`Z`, then `x52`, `x53`, ...
pub fn letter(l: Label) -> String {
    match l {
        0..=25 => ((b'a' + l as u8) as char).to_string(),
        26..=51 => ((b'A' + (l - 26) as u8) as char).to_string(),
        _ => format!("x{l}"),
    }
}

impl fmt::Display for EinsumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let many = self.extents.keys().any(|&l| l > 51);
        let sep = if many { " " } else { "" };
        let join = |ls: &[Label]| ls.iter().map(|&l| letter(l)).collect::<Vec<_>>().join(sep);
        let ops: Vec<String> = self.operands.iter().map(|o| join(o)).collect();
        write!(f, "{}->{}", ops.join(","), join(&self.output))
    }
}

/// How output axis order participates in the canonical form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputOrder {
    Exact,
    /// Output treated as a set; used to detect einsums that differ only by
    /// an output permutation.
    AsSet,
}

/// Result of canonicalizing a spec against per-operand keys.
#[derive(Clone, Debug)]
pub struct Canonical {
    /// Relabeled spec with operands in canonical order.
    pub spec: EinsumSpec,
    /// `order[k]` is the original position of canonical operand `k`.
    pub order: Vec<usize>,
    /// Comparison key: operands and (possibly sorted) output.
    pub key: (Vec<Vec<Label>>, Vec<Label>),
}

const MAX_TIE_PERMUTATIONS: usize = 720;

/// Sorts operands by `keys` (stable), tries every reordering within groups of
/// equal keys (up to a cap) and keeps the lexicographically smallest form
/// after renumbering labels by first appearance.
pub fn canonicalize(spec: &EinsumSpec, keys: &[u64], mode: OutputOrder) -> Canonical {
    debug_assert_eq!(keys.len(), spec.operands.len());
    let mut base: Vec<usize> = (0..keys.len()).collect();
    base.sort_by_key(|&k| keys[k]);

    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=base.len() {
        if i == base.len() || keys[base[i]] != keys[base[start]] {
            if i - start > 1 {
                groups.push((start, i));
            }
            start = i;
        }
    }
    let total: usize = groups
        .iter()
        .map(|&(a, b)| (1..=b - a).product::<usize>())
        .fold(1usize, |acc, x| acc.saturating_mul(x));

    let mut best: Option<Canonical> = None;
    let mut consider = |order: &[usize]| {
        let cand = relabel_in_order(spec, order, mode);
        let better = match &best {
            None => true,
            Some(b) => (&cand.key, &cand.spec.output) < (&b.key, &b.spec.output),
        };
        if better {
            best = Some(cand);
        }
    };

    if groups.is_empty() || total > MAX_TIE_PERMUTATIONS {
        consider(&base);
    } else {
        let mut order = base.clone();
        loop {
            consider(&order);
            // odometer over per-group permutations
            let mut advanced = false;
            for &(a, b) in groups.iter().rev() {
                if next_permutation(&mut order[a..b]) {
                    advanced = true;
                    break;
                }
                // next_permutation wrapped this group back to sorted order
            }
            if !advanced {
                break;
            }
        }
    }
    best.expect("at least one candidate")
}

fn relabel_in_order(spec: &EinsumSpec, order: &[usize], mode: OutputOrder) -> Canonical {
    let mut map: HashMap<Label, Label> = HashMap::new();
    let mut operands = Vec::with_capacity(order.len());
    for &k in order {
        let ops: Vec<Label> = spec.operands[k]
            .iter()
            .map(|l| {
                let n = map.len() as Label;
                *map.entry(*l).or_insert(n)
            })
            .collect();
        operands.push(ops);
    }
    let output: Vec<Label> = spec.output.iter().map(|l| map[l]).collect();
    let extents = spec.extents.iter().map(|(l, &e)| (map[l], e)).collect();
    let key_out = match mode {
        OutputOrder::Exact => output.clone(),
        OutputOrder::AsSet => {
            let mut o = output.clone();
            o.sort_unstable();
            o
        }
    };
    Canonical {
        key: (operands.clone(), key_out),
        spec: EinsumSpec {
            operands,
            output,
            extents,
        },
        order: order.to_vec(),
    }
}

/// Lexicographic next permutation; on the last permutation, resets the slice
/// to ascending order and returns false.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        v.reverse();
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
