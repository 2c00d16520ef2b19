//! Iterative key-encrypting key assignment.
//!
//! Every label gets an independent key. For each cover edge `(x, y)` the
//! child key `k_y` is published encrypted under `k_x`, bound to a context
//! naming both endpoints. Holding `k_x` therefore unlocks every key below `x`
//! by walking down the Hasse diagram.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{Ciphertext, KeyOrigin, Suite, SymmetricKey};
use crate::poset::{LabelId, Poset};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KasError {
    #[error("label #{0} is not part of this poset")]
    UnknownLabel(usize),
    #[error("no edge token for ({0}, {1})")]
    UnknownEdge(String, String),
    #[error("label {0} is maximal and reserved for the trusted center")]
    RootReserved(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeriveError {
    #[error("{target} is not below {have}")]
    NotDominated { have: String, target: String },
    #[error("edge token ({parent}, {child}) has not been published")]
    MissingEdgeToken { parent: String, child: String },
    #[error("edge token ({parent}, {child}) did not open")]
    DecryptionFailure { parent: String, child: String },
    #[error("label #{0} is not part of this poset")]
    UnknownLabel(usize),
}

/// Context bound into the token for edge `(parent, child)`.
pub fn edge_context(poset: &Poset, parent: LabelId, child: LabelId) -> Vec<u8> {
    format!("kas-auth/edge/{}>{}", poset.id_str(parent), poset.id_str(child)).into_bytes()
}

/// Trusted-center side of a key assignment instance.
#[derive(Clone, Debug)]
pub struct KasTrustedCenter {
    poset: Arc<Poset>,
    node_keys: Vec<SymmetricKey>,
    root_reserved: bool,
    issued: Vec<(String, LabelId)>,
}

/// Public derivation material: one token per published cover edge.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KasPublicInfo {
    edge_tokens: BTreeMap<(LabelId, LabelId), Ciphertext>,
}

/// What a user receives at enrollment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserCredential {
    pub user: String,
    pub label: LabelId,
    pub key: SymmetricKey,
}

/// A successful derivation and the cover path it walked.
#[derive(Clone, Debug)]
pub struct Derivation {
    pub key: SymmetricKey,
    pub path: Vec<LabelId>,
}

impl Derivation {
    pub fn decryptions(&self) -> usize {
        self.path.len() - 1
    }
}

/// Generates one key per label and one edge token per cover edge.
pub fn kas_setup(poset: Arc<Poset>, suite: Suite, rng: &mut dyn RngCore) -> (KasTrustedCenter, KasPublicInfo) {
    let mut node_keys: Vec<SymmetricKey> = Vec::with_capacity(poset.len());
    while node_keys.len() < poset.len() {
        let key = SymmetricKey::generate(rng, KeyOrigin::KasNode);
        if !node_keys.contains(&key) {
            node_keys.push(key);
        }
    }
    let edge_tokens = poset
        .cover_edges()
        .iter()
        .map(|&(p, c)| {
            let ct = suite.ae_encrypt(
                &node_keys[p.index()],
                node_keys[c.index()].as_bytes(),
                &edge_context(&poset, p, c),
                rng,
            );
            ((p, c), ct)
        })
        .collect();
    let tc = KasTrustedCenter { poset, node_keys, root_reserved: false, issued: Vec::new() };
    (tc, KasPublicInfo { edge_tokens })
}

impl KasTrustedCenter {
    pub fn poset(&self) -> &Arc<Poset> {
        &self.poset
    }

    /// Bars issuing credentials at maximal labels.
    pub fn set_root_reserved(&mut self, reserved: bool) {
        self.root_reserved = reserved;
    }

    pub fn node_key(&self, label: LabelId) -> Result<&SymmetricKey, KasError> {
        self.node_keys.get(label.index()).ok_or(KasError::UnknownLabel(label.index()))
    }

    pub fn issue_credential(&mut self, user: &str, label: LabelId) -> Result<UserCredential, KasError> {
        let key = self.node_key(label)?.clone();
        if self.root_reserved && self.poset.parents(label).is_empty() {
            return Err(KasError::RootReserved(self.poset.id_str(label).to_string()));
        }
        log::debug!("issued {} to {user}", self.poset.id_str(label));
        self.issued.push((user.to_string(), label));
        Ok(UserCredential { user: user.to_string(), label, key })
    }

    /// Issuance log, in order.
    pub fn issued(&self) -> &[(String, LabelId)] {
        &self.issued
    }
}

impl KasPublicInfo {
    pub fn token(&self, parent: LabelId, child: LabelId) -> Option<&Ciphertext> {
        self.edge_tokens.get(&(parent, child))
    }

    pub fn contains(&self, parent: LabelId, child: LabelId) -> bool {
        self.edge_tokens.contains_key(&(parent, child))
    }

    pub fn len(&self) -> usize {
        self.edge_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_tokens.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (LabelId, LabelId)> + '_ {
        self.edge_tokens.keys().copied()
    }

    /// A copy without the given edges. The original is untouched.
    pub fn withhold_edges(&self, poset: &Poset, edges: &[(LabelId, LabelId)]) -> Result<KasPublicInfo, KasError> {
        let mut restricted = self.clone();
        for &(p, c) in edges {
            if restricted.edge_tokens.remove(&(p, c)).is_none() && !self.contains(p, c) {
                return Err(unknown_edge(poset, p, c));
            }
        }
        Ok(restricted)
    }

    /// Adds `tokens` taken from `full`.
    pub fn release_from(&mut self, full: &KasPublicInfo, poset: &Poset, edges: &[(LabelId, LabelId)]) -> Result<(), KasError> {
        for &(p, c) in edges {
            let ct = full.token(p, c).ok_or_else(|| unknown_edge(poset, p, c))?;
            self.edge_tokens.insert((p, c), ct.clone());
        }
        Ok(())
    }

    /// Sorted `edge <parent> <child> <hex body>` lines.
    pub fn export(&self, poset: &Poset) -> String {
        let mut rows: Vec<(&str, &str, &Ciphertext)> = self
            .edge_tokens
            .iter()
            .map(|(&(p, c), ct)| (poset.id_str(p), poset.id_str(c), ct))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out = String::new();
        for (p, c, ct) in rows {
            let _ = writeln!(out, "edge {p} {c} {}", hex::encode(&ct.body));
        }
        out
    }
}

fn unknown_edge(poset: &Poset, p: LabelId, c: LabelId) -> KasError {
    let name = |x: LabelId| {
        if x.index() < poset.len() {
            poset.id_str(x).to_string()
        } else {
            format!("#{}", x.index())
        }
    };
    KasError::UnknownEdge(name(p), name(c))
}

/// Derives the key of `target` from the key of `have_label`, decrypting edge
/// tokens along the shortest derivation path that uses only published edges.
pub fn derive_key(
    suite: Suite,
    public: &KasPublicInfo,
    poset: &Poset,
    have_label: LabelId,
    have_key: &SymmetricKey,
    target: LabelId,
) -> Result<Derivation, DeriveError> {
    for x in [have_label, target] {
        if x.index() >= poset.len() {
            return Err(DeriveError::UnknownLabel(x.index()));
        }
    }
    if !poset.leq(target, have_label) {
        return Err(DeriveError::NotDominated {
            have: poset.id_str(have_label).to_string(),
            target: poset.id_str(target).to_string(),
        });
    }
    let Some(path) = poset.derivation_path_over(have_label, target, |p, c| public.contains(p, c)) else {
        let canonical = poset
            .derivation_path(have_label, target)
            .expect("target is dominated");
        let (p, c) = canonical
            .windows(2)
            .map(|w| (w[0], w[1]))
            .find(|&(p, c)| !public.contains(p, c))
            .expect("some edge on the canonical path is missing");
        return Err(DeriveError::MissingEdgeToken {
            parent: poset.id_str(p).to_string(),
            child: poset.id_str(c).to_string(),
        });
    };
    let mut key = have_key.clone();
    for step in path.windows(2) {
        let (p, c) = (step[0], step[1]);
        let failure = || DeriveError::DecryptionFailure {
            parent: poset.id_str(p).to_string(),
            child: poset.id_str(c).to_string(),
        };
        let token = public.token(p, c).expect("path uses published edges");
        let bytes = suite
            .ae_decrypt(&key, token, &edge_context(poset, p, c))
            .map_err(|_| failure())?;
        key = SymmetricKey::from_slice(&bytes, KeyOrigin::KasNode).map_err(|_| failure())?;
    }
    Ok(Derivation { key, path })
}

impl UserCredential {
    /// Convenience wrapper around [`derive_key`] from this credential.
    pub fn derive(&self, suite: Suite, public: &KasPublicInfo, poset: &Poset, target: LabelId) -> Result<Derivation, DeriveError> {
        derive_key(suite, public, poset, self.label, &self.key, target)
    }
}
