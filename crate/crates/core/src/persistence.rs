//! Degree-0 persistent homology of a sequence under the lower-star filtration
//! of the path complex.
//!
//! The path complex on `T` vertices has an edge between every pair of
//! consecutive indices. Sweeping vertices in increasing order of value (ties
//! broken by index) and merging with already active neighbours yields the
//! connected-component barcode. The component that is never merged is the
//! essential bar; it is finitized as `(global min, global max)`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

/// Largest input accepted by [`bruteforce_barcode`].
pub const ORACLE_MAX_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersistenceError {
    #[error("cannot compute persistence of an empty sequence")]
    EmptyInput,
    #[error("non-finite value {value} at index {index}")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("brute-force oracle accepts at most {max} values, got {len}")]
    OracleTooLarge { len: usize, max: usize },
}

/// One (birth, death) interval.
///
/// `birth_index` and `death_index` record which vertices created and killed
/// the component. For the essential bar they point at the global minimum and
/// global maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub birth: f64,
    pub death: f64,
    pub essential: bool,
    pub birth_index: usize,
    pub death_index: usize,
}

impl Bar {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn point(&self) -> (f64, f64) {
        (self.birth, self.death)
    }
}

/// Multiset of bars of a single sequence. Exactly one bar is essential.
#[derive(Debug, Clone, PartialEq)]
pub struct Barcode {
    bars: Vec<Bar>,
}

impl Barcode {
    /// Builds a barcode from raw bars without checking invariants.
    /// Used by tests and by vectorization code that constructs synthetic
    /// barcodes.
    pub fn from_bars(bars: Vec<Bar>) -> Self {
        Self { bars }
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn essential(&self) -> Option<&Bar> {
        self.bars.iter().find(|b| b.essential)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bars.iter().map(Bar::point)
    }

    /// `(birth, death, essential)` triples in a canonical order so that two
    /// barcodes describing the same multiset compare equal.
    pub fn canonical(&self) -> Vec<(f64, f64, bool)> {
        let mut out: Vec<_> = self
            .bars
            .iter()
            .map(|b| (b.birth, b.death, b.essential))
            .collect();
        out.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        out
    }

    /// Debug dump: one `birth,death,essential` line per bar, LF terminated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for bar in &self.bars {
            let _ = writeln!(out, "{},{},{}", bar.birth, bar.death, bar.essential);
        }
        out
    }
}

fn validate(values: &[f64]) -> Result<(), PersistenceError> {
    if values.is_empty() {
        return Err(PersistenceError::EmptyInput);
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PersistenceError::NonFiniteValue { index, value });
    }
    Ok(())
}

/// Vertex order of the filtration: by value, ties by index.
fn filtration_order(values: &[f64]) -> Vec<usize> {
    // sorting the keys themselves keeps comparisons out of random memory
    let mut keys: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    keys.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.into_iter().map(|(_, i)| i).collect()
}

/// Elder-rule comparison: the smaller `(value, index)` key is older.
fn older(values: &[f64], a: usize, b: usize) -> bool {
    match values[a].total_cmp(&values[b]) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a < b,
    }
}

fn essential_bar(values: &[f64], order: &[usize]) -> Bar {
    let lo = order[0];
    let hi = *order.last().expect("non-empty");
    Bar {
        birth: values[lo],
        death: values[hi],
        essential: true,
        birth_index: lo,
        death_index: hi,
    }
}

/// Union-find over vertex indices; each root remembers the oldest vertex of
/// its component.
struct ComponentForest {
    parent: Vec<usize>,
    rank: Vec<u8>,
    oldest: Vec<usize>,
}

impl ComponentForest {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            oldest: (0..n).collect(),
        }
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != node {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Joins two roots, returns the new root. `oldest` is the surviving
    /// birth vertex.
    fn link(&mut self, a: usize, b: usize, oldest: usize) -> usize {
        let (root, child) = match self.rank[a].cmp(&self.rank[b]) {
            Ordering::Less => (b, a),
            Ordering::Greater => (a, b),
            Ordering::Equal => {
                self.rank[a] = self.rank[a].saturating_add(1);
                (a, b)
            }
        };
        self.parent[child] = root;
        self.oldest[root] = oldest;
        root
    }
}

/// Degree-0 barcode of the sublevel-set filtration of `values` on the path
/// complex.
pub fn lower_star_barcode(values: &[f64]) -> Result<Barcode, PersistenceError> {
    validate(values)?;
    let n = values.len();
    let order = filtration_order(values);
    let mut forest = ComponentForest::new(n);
    let mut active = vec![false; n];
    let mut bars = Vec::new();

    for &v in &order {
        active[v] = true;
        let neighbours = [v.checked_sub(1), (v + 1 < n).then_some(v + 1)];
        for u in neighbours.into_iter().flatten() {
            if !active[u] {
                continue;
            }
            let ru = forest.find(u);
            let rv = forest.find(v);
            if ru == rv {
                continue;
            }
            let (ou, ov) = (forest.oldest[ru], forest.oldest[rv]);
            let (survivor, victim) = if older(values, ou, ov) { (ou, ov) } else { (ov, ou) };
            let birth = values[victim];
            let death = values[v];
            if death > birth {
                bars.push(Bar {
                    birth,
                    death,
                    essential: false,
                    birth_index: victim,
                    death_index: v,
                });
            }
            forest.link(ru, rv, survivor);
        }
    }

    bars.push(essential_bar(values, &order));
    Ok(Barcode { bars })
}

/// Barcode of `-values`, i.e. the superlevel-set view of the sequence.
pub fn superlevel_barcode(values: &[f64]) -> Result<Barcode, PersistenceError> {
    validate(values)?;
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    lower_star_barcode(&negated)
}

/// Reference implementation: for every distinct threshold, recompute the
/// connected components of the sublevel complex from scratch and diff them
/// against the components of the previous threshold.
pub fn bruteforce_barcode(values: &[f64]) -> Result<Barcode, PersistenceError> {
    validate(values)?;
    let n = values.len();
    if n > ORACLE_MAX_LEN {
        return Err(PersistenceError::OracleTooLarge { len: n, max: ORACLE_MAX_LEN });
    }
    let order = filtration_order(values);
    let mut thresholds: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    thresholds.dedup();

    // Components as sorted lists of vertex indices.
    let components_at = |t: f64| -> Vec<Vec<usize>> {
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for (i, &x) in values.iter().enumerate() {
            if x <= t {
                current.push(i);
            } else if !current.is_empty() {
                comps.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            comps.push(current);
        }
        comps
    };
    let birth_vertex = |comp: &[usize]| -> usize {
        comp.iter()
            .copied()
            .reduce(|a, b| if older(values, a, b) { a } else { b })
            .expect("component is non-empty")
    };

    let mut bars = Vec::new();
    let mut previous: Vec<Vec<usize>> = Vec::new();
    for &t in &thresholds {
        let current = components_at(t);
        for comp in &current {
            let mut merged: Vec<usize> = previous
                .iter()
                .filter(|p| comp.contains(&p[0]))
                .map(|p| birth_vertex(p))
                .collect();
            if merged.len() < 2 {
                continue;
            }
            merged.sort_by(|&a, &b| {
                if older(values, a, b) {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            });
            let death_index = comp
                .iter()
                .copied()
                .filter(|&i| values[i] == t)
                .min()
                .expect("a merge happens at a vertex of this threshold");
            for &victim in &merged[1..] {
                bars.push(Bar {
                    birth: values[victim],
                    death: t,
                    essential: false,
                    birth_index: victim,
                    death_index,
                });
            }
        }
        previous = current;
    }

    bars.push(essential_bar(values, &order));
    Ok(Barcode { bars })
}
