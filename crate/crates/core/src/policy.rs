//! Graph-based authentication policies and their text format.
//!
//! ```text
//! # comments run to end of line
//! poset intervals 4                  # or: chain N | powerset N | product <spec> <spec>
//! node a                             # explicit posets instead of `poset`
//! edge a b                           #   parent covers child
//! user alice [1,4]
//! service printer [2,3]
//! option root_reserved               # no credentials at maximal labels
//! option derived_only                # challenge labels never equal an issued label
//! option window 2                    # timestamp acceptance window in ticks
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::poset::{Label, LabelId, Poset, PosetError};

pub const DEFAULT_WINDOW: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyOptions {
    pub root_reserved: bool,
    pub derived_only: bool,
    pub window: u64,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        PolicyOptions { root_reserved: false, derived_only: false, window: DEFAULT_WINDOW }
    }
}

/// `(L, <=, U, S, lambda)` with per-deployment options.
#[derive(Clone, Debug)]
pub struct AuthenticationPolicy {
    pub poset: Arc<Poset>,
    pub users: BTreeMap<String, LabelId>,
    pub services: BTreeMap<String, LabelId>,
    pub options: PolicyOptions,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: {source}")]
    Poset { line: usize, source: PosetError },
    #[error("policy declares no poset")]
    NoPoset,
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl AuthenticationPolicy {
    pub fn new(poset: Arc<Poset>) -> Self {
        AuthenticationPolicy {
            poset,
            users: BTreeMap::new(),
            services: BTreeMap::new(),
            options: PolicyOptions::default(),
        }
    }

    pub fn user_label(&self, user: &str) -> Result<LabelId, PolicyError> {
        self.users.get(user).copied().ok_or_else(|| PolicyError::UnknownUser(user.to_string()))
    }

    pub fn service_label(&self, service: &str) -> Result<LabelId, PolicyError> {
        self.services
            .get(service)
            .copied()
            .ok_or_else(|| PolicyError::UnknownService(service.to_string()))
    }

    /// Users in the equivalence class of `label`.
    pub fn class_of(&self, label: LabelId) -> Vec<&str> {
        self.users.iter().filter(|(_, &l)| l == label).map(|(u, _)| u.as_str()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| PolicyError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        let mut parser = PolicyParser::default();
        for (i, raw) in text.lines().enumerate() {
            parser.line(i + 1, raw)?;
        }
        parser.finish()
    }
}

/// Incremental policy parser, so scenario files can interleave policy lines
/// with their own directives.
#[derive(Default)]
pub struct PolicyParser {
    poset: Option<(usize, Poset)>,
    nodes: Vec<(usize, Label)>,
    edges: Vec<(usize, String, String)>,
    users: Vec<(usize, String, String)>,
    services: Vec<(usize, String, String)>,
    options: PolicyOptions,
}

fn parse_err(line: usize, message: impl Into<String>) -> PolicyError {
    PolicyError::Parse { line, message: message.into() }
}

/// Strips a trailing comment and splits on whitespace outside brackets, so
/// `[2, 3]` and `({1}, [1,2])` stay single tokens.
pub fn tokenize(raw: &str) -> Vec<&str> {
    let text = raw.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut depth = 0i32;
    let mut start = None;
    for (i, c) in text.char_indices() {
        match c {
            '[' | '{' | '(' => depth += 1,
            ']' | '}' | ')' => depth -= 1,
            _ => {}
        }
        if c.is_whitespace() && depth <= 0 {
            if let Some(s) = start.take() {
                tokens.push(&text[s..i]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

fn parse_spec<'a>(line: usize, tokens: &mut impl Iterator<Item = &'a str>) -> Result<Poset, PolicyError> {
    let kind = tokens.next().ok_or_else(|| parse_err(line, "missing poset kind"))?;
    let mut size = || -> Result<u32, PolicyError> {
        let t = tokens.next().ok_or_else(|| parse_err(line, format!("`{kind}` needs a size")))?;
        t.parse().map_err(|_| parse_err(line, format!("bad size `{t}`")))
    };
    let built = match kind {
        "chain" => Poset::chain(size()?),
        "powerset" => Poset::powerset(size()?),
        "intervals" => Poset::intervals(size()?),
        "product" => {
            let p = parse_spec(line, tokens)?;
            let q = parse_spec(line, tokens)?;
            Poset::product(&p, &q)
        }
        other => return Err(parse_err(line, format!("unknown poset kind `{other}`"))),
    };
    built.map_err(|source| PolicyError::Poset { line, source })
}

impl PolicyParser {
    /// Returns `Ok(false)` when the line is not a policy directive.
    pub fn try_line(&mut self, line: usize, raw: &str) -> Result<bool, PolicyError> {
        let tokens = tokenize(raw);
        let Some((&head, rest)) = tokens.split_first() else {
            return Ok(true);
        };
        let arity = |n: usize| {
            if rest.len() == n {
                Ok(())
            } else {
                Err(parse_err(line, format!("`{head}` takes {n} argument(s)")))
            }
        };
        match head {
            "poset" => {
                if self.poset.is_some() || !self.nodes.is_empty() {
                    return Err(parse_err(line, "poset declared twice"));
                }
                let mut it = rest.iter().copied();
                let p = parse_spec(line, &mut it)?;
                if it.next().is_some() {
                    return Err(parse_err(line, "trailing tokens after poset spec"));
                }
                self.poset = Some((line, p));
            }
            "node" => {
                arity(1)?;
                if self.poset.is_some() {
                    return Err(parse_err(line, "`node` cannot follow a `poset` builder"));
                }
                let label = Label::parse(rest[0]).map_err(|e| PolicyError::Poset { line, source: e.into() })?;
                self.nodes.push((line, label));
            }
            "edge" => {
                arity(2)?;
                self.edges.push((line, rest[0].to_string(), rest[1].to_string()));
            }
            "user" => {
                arity(2)?;
                self.users.push((line, rest[0].to_string(), rest[1].to_string()));
            }
            "service" => {
                arity(2)?;
                self.services.push((line, rest[0].to_string(), rest[1].to_string()));
            }
            "option" => match rest {
                ["root_reserved"] => self.options.root_reserved = true,
                ["derived_only"] => self.options.derived_only = true,
                ["window", w] => {
                    self.options.window = w.parse().map_err(|_| parse_err(line, format!("bad window `{w}`")))?
                }
                _ => return Err(parse_err(line, format!("unknown option `{}`", rest.join(" ")))),
            },
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn line(&mut self, line: usize, raw: &str) -> Result<(), PolicyError> {
        if self.try_line(line, raw)? {
            Ok(())
        } else {
            Err(parse_err(line, format!("unknown directive `{}`", tokenize(raw)[0])))
        }
    }

    pub fn finish(self) -> Result<AuthenticationPolicy, PolicyError> {
        let poset = match self.poset {
            Some((line, _)) if !self.edges.is_empty() => {
                return Err(parse_err(line, "`edge` lines require an explicit node list"));
            }
            Some((_, p)) => p,
            None if self.nodes.is_empty() => return Err(PolicyError::NoPoset),
            None => {
                let first = self.nodes[0].0;
                let labels: Vec<Label> = self.nodes.iter().map(|(_, l)| l.clone()).collect();
                let position = |line: usize, text: &str| -> Result<usize, PolicyError> {
                    let label = Label::parse(text).map_err(|e| PolicyError::Poset { line, source: e.into() })?;
                    labels
                        .iter()
                        .position(|l| *l == label)
                        .ok_or(PolicyError::UnknownLabel { line, label: label.id() })
                };
                let mut edges = Vec::new();
                for (line, p, c) in &self.edges {
                    edges.push((position(*line, p)?, position(*line, c)?));
                }
                Poset::new(labels, edges).map_err(|source| PolicyError::Poset { line: first, source })?
            }
        };
        let poset = Arc::new(poset);
        let resolve = |line: usize, text: &str| -> Result<LabelId, PolicyError> {
            poset.resolve(text).map_err(|e| match e {
                PosetError::UnknownLabel(label) => PolicyError::UnknownLabel { line, label },
                source => PolicyError::Poset { line, source },
            })
        };
        let mut policy = AuthenticationPolicy::new(Arc::clone(&poset));
        for (line, user, label) in &self.users {
            if policy.users.insert(user.clone(), resolve(*line, label)?).is_some() {
                return Err(parse_err(*line, format!("user `{user}` assigned twice")));
            }
        }
        for (line, service, label) in &self.services {
            if policy.services.insert(service.clone(), resolve(*line, label)?).is_some() {
                return Err(parse_err(*line, format!("service `{service}` assigned twice")));
            }
        }
        policy.options = self.options;
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_policy() {
        let p = AuthenticationPolicy::parse(
            "poset intervals 4\nuser alice [1,4]\nuser bob [2, 3]\nservice db [2,2]\noption window 3\n",
        )
        .unwrap();
        assert_eq!(p.poset.len(), 10);
        assert_eq!(p.poset.id_str(p.user_label("bob").unwrap()), "[2,3]");
        assert_eq!(p.poset.id_str(p.service_label("db").unwrap()), "[2,2]");
        assert_eq!(p.options.window, 3);
        assert!(p.user_label("nobody").is_err());
    }

    #[test]
    fn unknown_label_is_named() {
        let err = AuthenticationPolicy::parse("poset chain 3\nuser alice 7\n").unwrap_err();
        match err {
            PolicyError::UnknownLabel { line, label } => assert_eq!((line, label.as_str()), (2, "7")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn product_spec() {
        let p = AuthenticationPolicy::parse("poset product intervals 4 chain 3\n").unwrap();
        assert_eq!(p.poset.len(), 30);
        let nested = AuthenticationPolicy::parse("poset product product chain 2 chain 2 powerset 1").unwrap();
        assert_eq!(nested.poset.len(), 8);
    }

    #[test]
    fn explicit_nodes() {
        let text = "node top\nnode mid\nnode low\nedge top mid\nedge mid low\nuser u mid";
        let p = AuthenticationPolicy::parse(text).unwrap();
        assert_eq!(p.poset.len(), 3);
        let (top, low) = (p.poset.resolve("top").unwrap(), p.poset.resolve("low").unwrap());
        assert!(p.poset.leq(low, top));

        let redundant = "node a\nnode b\nnode c\nedge a b\nedge b c\nedge a c";
        assert!(matches!(AuthenticationPolicy::parse(redundant), Err(PolicyError::Poset { .. })));
        let dangling = "node a\nedge a z";
        assert!(matches!(AuthenticationPolicy::parse(dangling), Err(PolicyError::UnknownLabel { line: 2, .. })));
    }

    #[test]
    fn parse_errors_carry_lines() {
        for (text, want) in [
            ("poset chain 3\nbogus 1", 2),
            ("poset chain x", 1),
            ("poset chain 3\nposet chain 2", 2),
            ("poset chain 3\nuser a", 2),
            ("poset chain 3\noption nope", 2),
        ] {
            match AuthenticationPolicy::parse(text) {
                Err(PolicyError::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(AuthenticationPolicy::parse("# empty\n"), Err(PolicyError::NoPoset)));
    }
}
