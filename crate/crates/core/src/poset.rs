//! Finite posets of security labels and their Hasse diagrams.
//!
//! A [`Poset`] stores its cover relation (parent covers child) together with
//! the reflexive-transitive closure, so order queries are constant time.
//! Labels are addressed by [`LabelId`], an index that is only meaningful for
//! the poset that produced it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest poset any builder or parser will construct.
pub const MAX_NODES: usize = 8192;
/// Largest `n` accepted by [`Poset::powerset`].
pub const MAX_POWERSET: u32 = 12;
/// Largest `n` accepted by [`Poset::intervals`].
pub const MAX_INTERVALS: u32 = 64;

/// A security label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Point(i64),
    Interval(i64, i64),
    Set(BTreeSet<u32>),
    Pair(Box<Label>, Box<Label>),
    Mirrored(Box<Label>),
    /// Free-form name, used by explicitly listed posets.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("empty label")]
    Empty,
    #[error("interval [{0},{1}] has lo > hi")]
    InvertedInterval(i64, i64),
    #[error("set label lists {0} twice")]
    DuplicateMember(u32),
    #[error("label {0} is already mirrored")]
    DoubleMirror(String),
    #[error("malformed label `{0}`")]
    Malformed(String),
}

impl Label {
    pub fn interval(lo: i64, hi: i64) -> Result<Self, LabelError> {
        if lo > hi {
            return Err(LabelError::InvertedInterval(lo, hi));
        }
        Ok(Label::Interval(lo, hi))
    }

    pub fn pair(a: Label, b: Label) -> Self {
        Label::Pair(Box::new(a), Box::new(b))
    }

    pub fn mirrored(inner: Label) -> Result<Self, LabelError> {
        if let Label::Mirrored(_) = inner {
            return Err(LabelError::DoubleMirror(inner.to_string()));
        }
        Ok(Label::Mirrored(Box::new(inner)))
    }

    /// Parses a rendered label. Accepts incidental whitespace, so
    /// `"[1, 4]"` and `"[1,4]"` name the same label.
    pub fn parse(text: &str) -> Result<Self, LabelError> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        parse_compact(&compact)
    }

    /// The canonical identifier: the rendered text form.
    pub fn id(&self) -> String {
        self.to_string()
    }
}

fn parse_compact(s: &str) -> Result<Label, LabelError> {
    if s.is_empty() {
        return Err(LabelError::Empty);
    }
    let malformed = || LabelError::Malformed(s.to_string());
    if let Some(inner) = s.strip_suffix('\'') {
        return Label::mirrored(parse_compact(inner)?);
    }
    if let Some(body) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let (lo, hi) = body.split_once(',').ok_or_else(malformed)?;
        let lo = lo.parse().map_err(|_| malformed())?;
        let hi = hi.parse().map_err(|_| malformed())?;
        return Label::interval(lo, hi);
    }
    if let Some(body) = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
        let mut set = BTreeSet::new();
        if !body.is_empty() {
            for part in body.split(',') {
                let v: u32 = part.parse().map_err(|_| malformed())?;
                if !set.insert(v) {
                    return Err(LabelError::DuplicateMember(v));
                }
            }
        }
        return Ok(Label::Set(set));
    }
    if let Some(body) = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
        let split = top_level_comma(body).ok_or_else(malformed)?;
        let a = parse_compact(&body[..split])?;
        let b = parse_compact(&body[split + 1..])?;
        return Ok(Label::pair(a, b));
    }
    if let Ok(v) = s.parse::<i64>() {
        return Ok(Label::Point(v));
    }
    if s.chars().any(|c| "[]{}(),'".contains(c)) {
        return Err(malformed());
    }
    Ok(Label::Named(s.to_string()))
}

fn top_level_comma(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '[' | '{' | '(' => depth += 1,
            ']' | '}' | ')' => depth -= 1,
            ',' if depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Point(v) => write!(f, "{v}"),
            Label::Interval(lo, hi) => write!(f, "[{lo},{hi}]"),
            Label::Set(set) => {
                f.write_str("{")?;
                for (i, v) in set.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("}")
            }
            Label::Pair(a, b) => write!(f, "({a},{b})"),
            Label::Mirrored(inner) => write!(f, "{inner}'"),
            Label::Named(name) => f.write_str(name),
        }
    }
}

impl FromStr for Label {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::parse(s)
    }
}

/// Index of a label inside one particular [`Poset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelId(u32);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(i: usize) -> Self {
        LabelId(i as u32)
    }
}

/// First structural problem found in a candidate Hasse diagram.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("label {0} appears more than once")]
    DuplicateLabel(String),
    #[error("edge endpoint #{0} is out of range")]
    UnknownEndpoint(usize),
    #[error("self loop on {0}")]
    SelfLoop(String),
    #[error("edge ({0}, {1}) listed twice")]
    DuplicateEdge(String, String),
    #[error("cover graph has a cycle through {0}")]
    Cycle(String),
    #[error("edge ({0}, {1}) is implied by a longer path")]
    RedundantEdge(String, String),
    #[error("poset has {0} nodes, more than the supported {MAX_NODES}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PosetError {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Invalid(#[from] Violation),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn union_with(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= *b;
        }
    }

    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            (0..64).filter(move |b| word >> b & 1 == 1).map(move |b| w * 64 + b)
        })
    }
}

/// A finite poset given by its Hasse diagram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poset {
    labels: Vec<Label>,
    ids: Vec<String>,
    index: BTreeMap<String, LabelId>,
    edges: Vec<(LabelId, LabelId)>,
    // Both adjacency lists are sorted by canonical id.
    children: Vec<Vec<LabelId>>,
    parents: Vec<Vec<LabelId>>,
    // down[x] = { y : y <= x }
    down: Vec<Bits>,
}

/// Checks that `edges` (parent, child) over `labels` form a Hasse diagram:
/// unique labels, in-range endpoints, acyclic, transitively reduced.
pub fn validate(labels: &[Label], edges: &[(usize, usize)]) -> Result<(), Violation> {
    let n = labels.len();
    if n > MAX_NODES {
        return Err(Violation::TooLarge(n));
    }
    let ids: Vec<String> = labels.iter().map(Label::id).collect();
    let mut seen = BTreeSet::new();
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(Violation::DuplicateLabel(id.clone()));
        }
    }
    let mut edge_set = BTreeSet::new();
    for &(p, c) in edges {
        for end in [p, c] {
            if end >= n {
                return Err(Violation::UnknownEndpoint(end));
            }
        }
        if p == c {
            return Err(Violation::SelfLoop(ids[p].clone()));
        }
        if !edge_set.insert((p, c)) {
            return Err(Violation::DuplicateEdge(ids[p].clone(), ids[c].clone()));
        }
    }
    let children = adjacency(n, edges);
    let order = topological_order(n, &children).map_err(|v| Violation::Cycle(ids[v].clone()))?;
    let down = closure(n, &children, &order);
    for &(p, c) in edges {
        if children[p].iter().any(|&z| z != c && down[z].get(c)) {
            return Err(Violation::RedundantEdge(ids[p].clone(), ids[c].clone()));
        }
    }
    Ok(())
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); n];
    for &(p, c) in edges {
        children[p].push(c);
    }
    children
}

/// Parents before children. On a cycle, returns some node on it.
fn topological_order(n: usize, children: &[Vec<usize>]) -> Result<Vec<usize>, usize> {
    let mut indegree = vec![0usize; n];
    for cs in children {
        for &c in cs {
            indegree[c] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).find(|&v| indegree[v] > 0).unwrap_or(0))
    }
}

fn closure(n: usize, children: &[Vec<usize>], order: &[usize]) -> Vec<Bits> {
    let mut down: Vec<Bits> = (0..n).map(|_| Bits::new(n)).collect();
    for &v in order.iter().rev() {
        let mut acc = Bits::new(n);
        acc.set(v);
        for &c in &children[v] {
            acc.union_with(&down[c]);
        }
        down[v] = acc;
    }
    down
}

impl Poset {
    /// Builds a poset from an explicit Hasse diagram, rejecting anything
    /// that is not one.
    pub fn new(labels: Vec<Label>, edges: Vec<(usize, usize)>) -> Result<Self, PosetError> {
        validate(&labels, &edges)?;
        Ok(Self::assemble(labels, edges))
    }

    /// Builds a poset from any acyclic relation, keeping only its
    /// transitive reduction as the cover relation.
    pub fn from_relation(labels: Vec<Label>, edges: Vec<(usize, usize)>) -> Result<Self, PosetError> {
        let n = labels.len();
        let edges: Vec<(usize, usize)> = edges.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(Violation::UnknownEndpoint(p.max(c)).into());
            }
        }
        let children = adjacency(n, &edges);
        let ids: Vec<String> = labels.iter().map(Label::id).collect();
        let order = topological_order(n, &children).map_err(|v| Violation::Cycle(ids[v].clone()))?;
        let down = closure(n, &children, &order);
        let reduced = edges
            .iter()
            .copied()
            .filter(|&(p, c)| !children[p].iter().any(|&z| z != c && down[z].get(c)))
            .collect();
        Self::new(labels, reduced)
    }

    fn assemble(labels: Vec<Label>, edges: Vec<(usize, usize)>) -> Self {
        let n = labels.len();
        let ids: Vec<String> = labels.iter().map(Label::id).collect();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), LabelId::from_index(i)))
            .collect();
        let raw_children = adjacency(n, &edges);
        let order = topological_order(n, &raw_children).expect("validated acyclic");
        let down = closure(n, &raw_children, &order);

        let by_id = |list: &mut Vec<LabelId>| list.sort_by(|a, b| ids[a.index()].cmp(&ids[b.index()]));
        let mut children: Vec<Vec<LabelId>> = raw_children
            .iter()
            .map(|cs| cs.iter().map(|&c| LabelId::from_index(c)).collect())
            .collect();
        let mut parents = vec![Vec::new(); n];
        for &(p, c) in &edges {
            parents[c].push(LabelId::from_index(p));
        }
        children.iter_mut().for_each(by_id);
        parents.iter_mut().for_each(by_id);
        let mut edges: Vec<(LabelId, LabelId)> = edges
            .into_iter()
            .map(|(p, c)| (LabelId::from_index(p), LabelId::from_index(c)))
            .collect();
        edges.sort();

        Poset { labels, ids, index, edges, children, parents, down }
    }

    /// The chain `1 < 2 < ... < n`.
    pub fn chain(n: u32) -> Result<Self, PosetError> {
        if n == 0 || n as usize > MAX_NODES {
            return Err(PosetError::InvalidSize(format!("chain of {n} elements")));
        }
        let labels = (1..=n as i64).map(Label::Point).collect();
        let edges = (1..n as usize).map(|k| (k, k - 1)).collect();
        Ok(Self::assemble(labels, edges))
    }

    /// All subsets of `{1..n}` ordered by inclusion.
    pub fn powerset(n: u32) -> Result<Self, PosetError> {
        if n > MAX_POWERSET {
            return Err(PosetError::InvalidSize(format!("powerset of {n} elements (cap {MAX_POWERSET})")));
        }
        let size = 1usize << n;
        let labels = (0..size)
            .map(|mask| Label::Set((0..n).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect()))
            .collect();
        let mut edges = Vec::new();
        for mask in 0..size {
            for b in 0..n {
                if mask >> b & 1 == 1 {
                    edges.push((mask, mask & !(1 << b)));
                }
            }
        }
        Ok(Self::assemble(labels, edges))
    }

    /// All intervals `[i,j]` with `1 <= i <= j <= n`, ordered by containment.
    pub fn intervals(n: u32) -> Result<Self, PosetError> {
        if n == 0 || n > MAX_INTERVALS {
            return Err(PosetError::InvalidSize(format!("interval poset T_{n} (cap {MAX_INTERVALS})")));
        }
        let n = n as i64;
        let mut labels = Vec::new();
        let mut at = BTreeMap::new();
        for i in 1..=n {
            for j in i..=n {
                at.insert((i, j), labels.len());
                labels.push(Label::Interval(i, j));
            }
        }
        let mut edges = Vec::new();
        for (&(i, j), &p) in &at {
            if i < j {
                edges.push((p, at[&(i + 1, j)]));
                edges.push((p, at[&(i, j - 1)]));
            }
        }
        Ok(Self::assemble(labels, edges))
    }

    /// Componentwise product. Label `(a, b)` sits at index `a * |q| + b`.
    pub fn product(p: &Poset, q: &Poset) -> Result<Self, PosetError> {
        let (np, nq) = (p.len(), q.len());
        if np * nq > MAX_NODES {
            return Err(PosetError::InvalidSize(format!("product of {np} x {nq} nodes")));
        }
        let mut labels = Vec::with_capacity(np * nq);
        for a in &p.labels {
            for b in &q.labels {
                labels.push(Label::pair(a.clone(), b.clone()));
            }
        }
        let mut edges = Vec::new();
        for &(pa, ca) in &p.edges {
            for b in 0..nq {
                edges.push((pa.index() * nq + b, ca.index() * nq + b));
            }
        }
        for &(pb, cb) in &q.edges {
            for a in 0..np {
                edges.push((a * nq + pb.index(), a * nq + cb.index()));
            }
        }
        Ok(Self::assemble(labels, edges))
    }

    /// The order dual with every label wrapped as [`Label::Mirrored`].
    pub fn mirror(p: &Poset) -> Result<Self, PosetError> {
        let labels = p
            .labels
            .iter()
            .cloned()
            .map(Label::mirrored)
            .collect::<Result<Vec<_>, _>>()?;
        let edges = p.edges.iter().map(|&(a, b)| (b.index(), a.index())).collect();
        Ok(Self::assemble(labels, edges))
    }

    /// Re-checks the structural invariants.
    pub fn validate(&self) -> Result<(), Violation> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(p, c)| (p.index(), c.index())).collect();
        validate(&self.labels, &edges)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> + '_ {
        (0..self.len()).map(LabelId::from_index)
    }

    pub fn label(&self, id: LabelId) -> &Label {
        &self.labels[id.index()]
    }

    pub fn id_str(&self, id: LabelId) -> &str {
        &self.ids[id.index()]
    }

    pub fn find(&self, canonical: &str) -> Option<LabelId> {
        self.index.get(canonical).copied()
    }

    pub fn find_label(&self, label: &Label) -> Option<LabelId> {
        self.find(&label.id())
    }

    /// Parses `text` as a label and looks it up.
    pub fn resolve(&self, text: &str) -> Result<LabelId, PosetError> {
        let label = Label::parse(text)?;
        self.find_label(&label)
            .ok_or_else(|| PosetError::UnknownLabel(label.id()))
    }

    pub fn cover_edges(&self) -> &[(LabelId, LabelId)] {
        &self.edges
    }

    pub fn children(&self, id: LabelId) -> &[LabelId] {
        &self.children[id.index()]
    }

    pub fn parents(&self, id: LabelId) -> &[LabelId] {
        &self.parents[id.index()]
    }

    /// True iff `parent` covers `child`.
    pub fn covers(&self, parent: LabelId, child: LabelId) -> bool {
        self.edges.binary_search(&(parent, child)).is_ok()
    }

    /// `x <= y`. Both ids must belong to this poset.
    pub fn leq(&self, x: LabelId, y: LabelId) -> bool {
        self.down[y.index()].get(x.index())
    }

    pub fn lt(&self, x: LabelId, y: LabelId) -> bool {
        x != y && self.leq(x, y)
    }

    /// Everything below or equal to `x`, in index order.
    pub fn down_set(&self, x: LabelId) -> Vec<LabelId> {
        self.down[x.index()].ones().map(LabelId::from_index).collect()
    }

    pub fn maximal(&self) -> Vec<LabelId> {
        self.ids().filter(|&x| self.parents(x).is_empty()).collect()
    }

    pub fn minimal(&self) -> Vec<LabelId> {
        self.ids().filter(|&x| self.children(x).is_empty()).collect()
    }

    fn id_order(&self, a: LabelId, b: LabelId) -> std::cmp::Ordering {
        self.id_str(a).cmp(self.id_str(b))
    }

    /// Shortest cover path from `from` down to `to`, choosing the
    /// lexicographically least successor at every step. `None` unless
    /// `to <= from`.
    pub fn derivation_path(&self, from: LabelId, to: LabelId) -> Option<Vec<LabelId>> {
        self.derivation_path_over(from, to, |_, _| true)
    }

    /// As [`Poset::derivation_path`], restricted to the cover edges for which
    /// `usable(parent, child)` holds.
    pub fn derivation_path_over(
        &self,
        from: LabelId,
        to: LabelId,
        usable: impl Fn(LabelId, LabelId) -> bool,
    ) -> Option<Vec<LabelId>> {
        if !self.leq(to, from) {
            return None;
        }
        // Distance to `to`, found by walking upward from it.
        let mut dist: BTreeMap<LabelId, usize> = BTreeMap::new();
        dist.insert(to, 0);
        let mut queue = VecDeque::from([to]);
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            for &p in self.parents(v) {
                if !dist.contains_key(&p) && self.leq(p, from) && usable(p, v) {
                    dist.insert(p, d + 1);
                    queue.push_back(p);
                }
            }
        }
        let mut remaining = *dist.get(&from)?;
        let mut path = vec![from];
        let mut at = from;
        while remaining > 0 {
            // children are sorted by id, so the first match is the least
            at = *self
                .children(at)
                .iter()
                .find(|&&c| dist.get(&c) == Some(&(remaining - 1)) && usable(at, c))
                .expect("distance labels are consistent");
            path.push(at);
            remaining -= 1;
        }
        Some(path)
    }

    /// Maximal elements of `{z : z <= x and z <= y}`, sorted by canonical id.
    pub fn maximal_common_lower_bounds(&self, x: LabelId, y: LabelId) -> Vec<LabelId> {
        let common: Vec<LabelId> = self.ids().filter(|&z| self.leq(z, x) && self.leq(z, y)).collect();
        let mut maximal: Vec<LabelId> = common
            .iter()
            .copied()
            .filter(|&z| !common.iter().any(|&u| self.lt(z, u)))
            .collect();
        maximal.sort_by(|&a, &b| self.id_order(a, b));
        maximal
    }

    /// The greatest common descendant of `x` and `y`. When the common lower
    /// bounds have several maximal elements, the one with the least canonical
    /// id is returned and the ambiguity is logged.
    pub fn greatest_common_descendant(&self, x: LabelId, y: LabelId) -> Option<LabelId> {
        let maximal = self.maximal_common_lower_bounds(x, y);
        if maximal.len() > 1 {
            log::warn!(
                "{} and {} have {} maximal common descendants; choosing {}",
                self.id_str(x),
                self.id_str(y),
                maximal.len(),
                self.id_str(maximal[0])
            );
        }
        maximal.first().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(p: &Poset, s: &str) -> LabelId {
        p.resolve(s).unwrap()
    }

    #[test]
    fn label_rendering_round_trips() {
        for text in ["3", "{1,2}", "{}", "[2,4]", "([1,3],2)", "[2,4]'", "alpha", "(({1},[1,1]),-2)"] {
            let label = Label::parse(text).unwrap();
            assert_eq!(label.id(), text);
        }
        assert_eq!(Label::parse("[1, 4]").unwrap().id(), "[1,4]");
    }

    #[test]
    fn label_invariants_are_enforced() {
        assert_eq!(Label::parse("[3,1]"), Err(LabelError::InvertedInterval(3, 1)));
        assert_eq!(Label::parse("{1,1}"), Err(LabelError::DuplicateMember(1)));
        assert!(matches!(Label::parse("[1,2]''"), Err(LabelError::DoubleMirror(_))));
        assert!(Label::parse("a,b").is_err());
        assert!(Label::parse("").is_err());
    }

    #[test]
    fn chain_shape() {
        let c4 = Poset::chain(4).unwrap();
        assert_eq!(c4.len(), 4);
        let edges: Vec<(&str, &str)> =
            c4.cover_edges().iter().map(|&(p, c)| (c4.id_str(p), c4.id_str(c))).collect();
        assert_eq!(edges.len(), 3);
        for e in [("4", "3"), ("3", "2"), ("2", "1")] {
            assert!(edges.contains(&e));
        }
        let c1 = Poset::chain(1).unwrap();
        assert_eq!((c1.len(), c1.cover_edges().len()), (1, 0));
        let c3 = Poset::chain(3).unwrap();
        assert!(c3.leq(id(&c3, "1"), id(&c3, "3")));
        assert!(!c3.leq(id(&c3, "3"), id(&c3, "1")));
        assert!(matches!(Poset::chain(0), Err(PosetError::InvalidSize(_))));
    }

    #[test]
    fn powerset_shape() {
        let p2 = Poset::powerset(2).unwrap();
        assert_eq!(p2.len(), 4);
        let top = id(&p2, "{1,2}");
        assert!(p2.covers(top, id(&p2, "{1}")));
        assert!(p2.covers(top, id(&p2, "{2}")));
        assert!(p2.covers(id(&p2, "{1}"), id(&p2, "{}")));
        assert!(p2.covers(id(&p2, "{2}"), id(&p2, "{}")));
        let p0 = Poset::powerset(0).unwrap();
        assert_eq!(p0.len(), 1);
        assert_eq!(p0.id_str(LabelId::from_index(0)), "{}");
        let p3 = Poset::powerset(3).unwrap();
        assert_eq!((p3.len(), p3.cover_edges().len()), (8, 12));
        assert!(Poset::powerset(13).is_err());
    }

    #[test]
    fn interval_shape() {
        let t4 = Poset::intervals(4).unwrap();
        assert_eq!((t4.len(), t4.cover_edges().len()), (10, 12));
        assert!(t4.covers(id(&t4, "[1,4]"), id(&t4, "[1,3]")));
        assert!(t4.covers(id(&t4, "[1,4]"), id(&t4, "[2,4]")));
        assert!(t4.covers(id(&t4, "[2,3]"), id(&t4, "[2,2]")));
        assert!(t4.covers(id(&t4, "[2,3]"), id(&t4, "[3,3]")));
        let t1 = Poset::intervals(1).unwrap();
        assert_eq!(t1.id_str(LabelId::from_index(0)), "[1,1]");
        let t2 = Poset::intervals(2).unwrap();
        assert_eq!((t2.len(), t2.cover_edges().len()), (3, 2));
        assert!(Poset::intervals(0).is_err());
        assert!(Poset::intervals(65).is_err());
    }

    #[test]
    fn leq_examples() {
        let t4 = Poset::intervals(4).unwrap();
        assert!(t4.leq(id(&t4, "[2,3]"), id(&t4, "[1,4]")));
        assert!(!t4.leq(id(&t4, "[1,2]"), id(&t4, "[2,4]")));
        for x in t4.ids() {
            assert!(t4.leq(x, x));
        }
    }

    #[test]
    fn derivation_paths() {
        let c4 = Poset::chain(4).unwrap();
        let path: Vec<&str> = c4
            .derivation_path(id(&c4, "4"), id(&c4, "1"))
            .unwrap()
            .into_iter()
            .map(|x| c4.id_str(x))
            .collect();
        assert_eq!(path, ["4", "3", "2", "1"]);
        let x = id(&c4, "2");
        assert_eq!(c4.derivation_path(x, x), Some(vec![x]));
        assert_eq!(c4.derivation_path(id(&c4, "1"), id(&c4, "2")), None);

        let t4 = Poset::intervals(4).unwrap();
        let path: Vec<&str> = t4
            .derivation_path(id(&t4, "[1,4]"), id(&t4, "[2,2]"))
            .unwrap()
            .into_iter()
            .map(|x| t4.id_str(x))
            .collect();
        assert_eq!(path, ["[1,4]", "[1,3]", "[1,2]", "[2,2]"]);
    }

    #[test]
    fn restricted_paths_avoid_unusable_edges() {
        let t4 = Poset::intervals(4).unwrap();
        let blocked = (id(&t4, "[1,4]"), id(&t4, "[1,3]"));
        let path: Vec<&str> = t4
            .derivation_path_over(id(&t4, "[1,4]"), id(&t4, "[2,2]"), |p, c| (p, c) != blocked)
            .unwrap()
            .into_iter()
            .map(|x| t4.id_str(x))
            .collect();
        assert_eq!(path, ["[1,4]", "[2,4]", "[2,3]", "[2,2]"]);
        let c2 = Poset::chain(2).unwrap();
        assert_eq!(c2.derivation_path_over(id(&c2, "2"), id(&c2, "1"), |_, _| false), None);
    }

    #[test]
    fn greatest_common_descendant_examples() {
        let p2 = Poset::powerset(2).unwrap();
        assert_eq!(p2.greatest_common_descendant(id(&p2, "{1}"), id(&p2, "{2}")), Some(id(&p2, "{}")));
        let c3 = Poset::chain(3).unwrap();
        assert_eq!(c3.greatest_common_descendant(id(&c3, "3"), id(&c3, "1")), Some(id(&c3, "1")));
        for x in c3.ids() {
            assert_eq!(c3.greatest_common_descendant(x, x), Some(x));
        }
        // an antichain has no common descendant
        let anti = Poset::new(vec![Label::Named("a".into()), Label::Named("b".into())], vec![]).unwrap();
        assert_eq!(anti.greatest_common_descendant(id(&anti, "a"), id(&anti, "b")), None);
    }

    #[test]
    fn gcd_tie_break_in_non_lattice() {
        // a, b both cover c and d: two maximal common lower bounds
        let labels = ["a", "b", "c", "d"].map(|s| Label::Named(s.into())).to_vec();
        let p = Poset::new(labels, vec![(0, 2), (0, 3), (1, 2), (1, 3)]).unwrap();
        assert_eq!(p.maximal_common_lower_bounds(id(&p, "a"), id(&p, "b")), vec![id(&p, "c"), id(&p, "d")]);
        assert_eq!(p.greatest_common_descendant(id(&p, "a"), id(&p, "b")), Some(id(&p, "c")));
    }

    #[test]
    fn validate_reports_violations() {
        let abc = ["a", "b", "c"].map(|s| Label::Named(s.into())).to_vec();
        assert_eq!(validate(&abc[..2], &[(0, 1), (1, 0)]), Err(Violation::Cycle("a".into())));
        assert_eq!(
            validate(&abc, &[(0, 1), (1, 2), (0, 2)]),
            Err(Violation::RedundantEdge("a".into(), "c".into()))
        );
        assert_eq!(validate(&abc, &[(0, 0)]), Err(Violation::SelfLoop("a".into())));
        assert_eq!(validate(&abc, &[(0, 7)]), Err(Violation::UnknownEndpoint(7)));
        assert_eq!(
            validate(&[abc[0].clone(), abc[0].clone()], &[]),
            Err(Violation::DuplicateLabel("a".into()))
        );
        assert!(validate(&abc, &[(0, 1), (1, 2)]).is_ok());
        for p in [Poset::chain(5), Poset::powerset(3), Poset::intervals(4)] {
            assert_eq!(p.unwrap().validate(), Ok(()));
        }
    }

    #[test]
    fn from_relation_reduces() {
        let abc = ["a", "b", "c"].map(|s| Label::Named(s.into())).to_vec();
        let p = Poset::from_relation(abc, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(p.cover_edges().len(), 2);
        assert!(p.leq(id(&p, "c"), id(&p, "a")));
    }

    #[test]
    fn mirror_reverses_order() {
        let t3 = Poset::intervals(3).unwrap();
        let m = Poset::mirror(&t3).unwrap();
        assert!(m.leq(id(&m, "[1,3]'"), id(&m, "[2,2]'")));
        assert!(!m.leq(id(&m, "[2,2]'"), id(&m, "[1,3]'")));
        assert_eq!(m.maximal().len(), 3);
    }

    #[test]
    fn product_basics() {
        let t4 = Poset::intervals(4).unwrap();
        let c3 = Poset::chain(3).unwrap();
        let prod = Poset::product(&t4, &c3).unwrap();
        assert_eq!(prod.len(), 30);
        assert_eq!(prod.validate(), Ok(()));
        assert!(prod.leq(id(&prod, "([2,3],1)"), id(&prod, "([1,4],2)")));
        assert!(!prod.leq(id(&prod, "([2,3],3)"), id(&prod, "([1,4],2)")));
    }
}
