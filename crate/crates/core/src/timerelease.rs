//! Time-release authentication over a mirrored interval poset.
//!
//! The key hierarchy is the policy poset stacked on top of the order dual of
//! `T_n`. Point labels `t'` of the lower half are maximal there, so the key
//! of `t'` unlocks every window `[t0,t1]'` containing `t`. Temporal edges
//! `(x, t')` join the halves; their tokens are withheld until the time server
//! broadcasts tick `t`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{Ciphertext, Nonce, Suite, SymmetricKey};
use crate::kas::{kas_setup, DeriveError, KasError, KasPublicInfo, KasTrustedCenter, UserCredential};
use crate::poset::{Label, LabelId, Poset, PosetError};
use crate::protocols::common::{expect_header, require};
use crate::protocols::message::{context, decode_plaintext, encode_plaintext, Field, ProtocolId, ProtocolMessage, Role};
use crate::protocols::session::{Endpoint, Env, RejectReason, SessionState, Verdict};

#[derive(Debug, Error)]
pub enum TimeReleaseError {
    #[error("temporal edge ({upper}, {tick}) has a dangling endpoint")]
    DanglingEndpoint { upper: usize, tick: u32 },
    #[error("tick {0} was already broadcast")]
    DuplicateTick(u64),
    #[error(transparent)]
    Poset(#[from] PosetError),
    #[error(transparent)]
    Kas(#[from] KasError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MintError {
    #[error("window [{0},{1}] is not within 1..=n with t0 <= t1")]
    InvalidWindow(u32, u32),
    #[error("token `{0}` already exists")]
    DuplicateToken(String),
    #[error("verifier cannot obtain the key for challenge label {0}")]
    VerifierUnderCleared(String),
    #[error("challenge label #{0} is not a policy label")]
    UnknownLabel(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RedeemError {
    #[error("window {0} is not reachable from the credential")]
    OutOfReach(String),
    #[error("no time instant key for window {0} has been released")]
    NotYetReleased(String),
    #[error("credential does not dominate embedded label {0}")]
    LabelNotDominated(String),
    #[error("token body did not open")]
    BadToken,
}

/// How the verifier obtained the window key at mint time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeySource {
    Derived(Vec<LabelId>),
    Provisioned,
}

/// Time instant key ciphertexts released at one tick.
#[derive(Clone, Debug)]
pub struct Tikc {
    pub time: u64,
    pub tokens: Vec<((LabelId, LabelId), Ciphertext)>,
}

/// A verifier token as posted on the bulletin board.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: String,
    pub issuer: String,
    pub protocol: ProtocolId,
    pub window: (u32, u32),
    pub body: Ciphertext,
}

impl Token {
    pub fn summary(&self) -> String {
        format!("token={} window=[{},{}]' sealed[{}]", self.id, self.window.0, self.window.1, self.body.body.len())
    }
}

/// Verifier-side record of a minted token.
#[derive(Clone, Debug)]
pub struct TokenEntry {
    pub protocol: ProtocolId,
    pub nonce: Nonce,
    pub end: u64,
    /// Label whose key the response must open under: the window, or `v`.
    pub key_label: LabelId,
    pub response_key: SymmetricKey,
    pub seen: BTreeSet<Nonce>,
    pub source: KeySource,
}

/// A redemption message and the derivation that produced its key.
#[derive(Clone, Debug)]
pub struct Redemption {
    pub message: ProtocolMessage,
    pub window_path: Vec<LabelId>,
}

#[derive(Clone, Debug)]
pub struct TimeReleaseSystem {
    poset: Arc<Poset>,
    upper_len: usize,
    n: u32,
    temporal: Vec<(LabelId, LabelId)>,
    dropped: Vec<(LabelId, u32)>,
    orphans: Vec<u32>,
    tc: KasTrustedCenter,
    full: KasPublicInfo,
    released: KasPublicInfo,
    broadcast: BTreeSet<u64>,
    board: BTreeMap<String, Token>,
    suite: Suite,
}

fn token_context(protocol: ProtocolId, id: &str) -> Vec<u8> {
    let mut ctx = context(protocol, 1, Role::Verifier, Role::Board);
    ctx.extend_from_slice(format!("/{id}").as_bytes());
    ctx
}

fn redemption_context(protocol: ProtocolId, id: &str) -> Vec<u8> {
    let mut ctx = context(protocol, 3, Role::Claimant, Role::Verifier);
    ctx.extend_from_slice(format!("/{id}").as_bytes());
    ctx
}

/// Builds the combined hierarchy. Upper labels keep their ids, so a
/// credential issued here is valid against the policy poset too.
/// Temporal edges implied by others are dropped and reported.
pub fn build_time_release(
    upper: &Poset,
    n: u32,
    temporal_edges: &[(LabelId, u32)],
    suite: Suite,
    rng: &mut dyn RngCore,
) -> Result<TimeReleaseSystem, TimeReleaseError> {
    let lower = Poset::mirror(&Poset::intervals(n)?)?;
    let upper_len = upper.len();
    let mut labels: Vec<Label> = upper.ids().map(|x| upper.label(x).clone()).collect();
    labels.extend(lower.ids().map(|x| lower.label(x).clone()));
    let mut edges: Vec<(usize, usize)> = upper.cover_edges().iter().map(|&(p, c)| (p.index(), c.index())).collect();
    edges.extend(lower.cover_edges().iter().map(|&(p, c)| (upper_len + p.index(), upper_len + c.index())));

    let point = |t: u32| Label::mirrored(Label::Interval(t as i64, t as i64)).ok().and_then(|l| lower.find_label(&l));
    let mut wanted = Vec::new();
    for &(x, t) in temporal_edges {
        let dangling = TimeReleaseError::DanglingEndpoint { upper: x.index(), tick: t };
        if x.index() >= upper_len || t == 0 || t > n {
            return Err(dangling);
        }
        let tp = point(t).ok_or(dangling)?;
        edges.push((x.index(), upper_len + tp.index()));
        wanted.push((x, t, LabelId::from_index(upper_len + tp.index())));
    }
    let poset = Arc::new(Poset::from_relation(labels, edges)?);

    let mut temporal = Vec::new();
    let mut dropped = Vec::new();
    for (x, t, tp) in wanted {
        if poset.covers(x, tp) {
            if !temporal.contains(&(x, tp)) {
                temporal.push((x, tp));
            }
        } else {
            log::warn!("temporal edge ({}, {}) is implied by other edges; dropped", poset.id_str(x), poset.id_str(tp));
            dropped.push((x, t));
        }
    }
    temporal.sort();
    let orphans: Vec<u32> = (1..=n)
        .filter(|&t| {
            let tp = LabelId::from_index(upper_len + point(t).expect("point exists").index());
            !temporal.iter().any(|&(_, c)| c == tp)
        })
        .collect();
    if !orphans.is_empty() {
        log::warn!("time points without temporal edges: {orphans:?}");
    }

    let (tc, full) = kas_setup(Arc::clone(&poset), suite, rng);
    let released = full.withhold_edges(&poset, &temporal)?;
    Ok(TimeReleaseSystem {
        poset,
        upper_len,
        n,
        temporal,
        dropped,
        orphans,
        tc,
        full,
        released,
        broadcast: BTreeSet::new(),
        board: BTreeMap::new(),
        suite,
    })
}

impl TimeReleaseSystem {
    pub fn poset(&self) -> &Arc<Poset> {
        &self.poset
    }

    pub fn upper_len(&self) -> usize {
        self.upper_len
    }

    pub fn horizon(&self) -> u32 {
        self.n
    }

    pub fn is_upper(&self, x: LabelId) -> bool {
        x.index() < self.upper_len
    }

    /// Surviving temporal edges as `(upper label, point label)`.
    pub fn temporal_edges(&self) -> &[(LabelId, LabelId)] {
        &self.temporal
    }

    pub fn dropped_edges(&self) -> &[(LabelId, u32)] {
        &self.dropped
    }

    pub fn orphans(&self) -> &[u32] {
        &self.orphans
    }

    pub fn trusted_center(&self) -> &KasTrustedCenter {
        &self.tc
    }

    pub fn trusted_center_mut(&mut self) -> &mut KasTrustedCenter {
        &mut self.tc
    }

    pub fn full_public(&self) -> &KasPublicInfo {
        &self.full
    }

    pub fn released(&self) -> &KasPublicInfo {
        &self.released
    }

    pub fn broadcasts(&self) -> &BTreeSet<u64> {
        &self.broadcast
    }

    pub fn board(&self) -> &BTreeMap<String, Token> {
        &self.board
    }

    pub fn token(&self, id: &str) -> Option<&Token> {
        self.board.get(id)
    }

    pub fn point(&self, t: u32) -> Option<LabelId> {
        self.poset.find_label(&Label::mirrored(Label::Interval(t as i64, t as i64)).ok()?)
    }

    pub fn window(&self, t0: u32, t1: u32) -> Option<LabelId> {
        if t0 == 0 || t0 > t1 || t1 > self.n {
            return None;
        }
        self.poset.find_label(&Label::mirrored(Label::Interval(t0 as i64, t1 as i64)).ok()?)
    }

    /// Tick of a lower point label.
    fn tick_of(&self, point: LabelId) -> Option<u32> {
        match self.poset.label(point) {
            Label::Mirrored(inner) => match **inner {
                Label::Interval(a, b) if a == b => Some(a as u32),
                _ => None,
            },
            _ => None,
        }
    }

    /// Releases the temporal edge tokens into tick `t`'s point.
    pub fn tts_broadcast(&mut self, t: u64) -> Result<Tikc, TimeReleaseError> {
        if !self.broadcast.insert(t) {
            return Err(TimeReleaseError::DuplicateTick(t));
        }
        let edges: Vec<(LabelId, LabelId)> = self
            .temporal
            .iter()
            .copied()
            .filter(|&(_, c)| self.tick_of(c).map(u64::from) == Some(t))
            .collect();
        self.released.release_from(&self.full, &self.poset, &edges)?;
        let tokens = edges
            .iter()
            .map(|&e| (e, self.full.token(e.0, e.1).expect("temporal edge has a token").clone()))
            .collect();
        Ok(Tikc { time: t, tokens })
    }

    /// The temporal edge a derivation path crossed, with its tick.
    pub fn temporal_edge_on_path(&self, path: &[LabelId]) -> Option<(LabelId, u32)> {
        path.windows(2)
            .find(|w| self.temporal.contains(&(w[0], w[1])))
            .and_then(|w| Some((w[0], self.tick_of(w[1])?)))
    }

    /// Posts a token encrypted under the window key. The verifier derives
    /// the window key when it can and is provisioned by the trusted center
    /// otherwise; the returned entry says which.
    #[allow(clippy::too_many_arguments)]
    pub fn mint_token(
        &mut self,
        id: &str,
        issuer: &str,
        credential: Option<&UserCredential>,
        window: (u32, u32),
        nonce: Nonce,
        challenge: Option<LabelId>,
        rng: &mut dyn RngCore,
    ) -> Result<(Token, TokenEntry), MintError> {
        let (t0, t1) = window;
        let wl = self.window(t0, t1).ok_or(MintError::InvalidWindow(t0, t1))?;
        if self.board.contains_key(id) {
            return Err(MintError::DuplicateToken(id.to_string()));
        }
        let derived = credential.and_then(|c| c.derive(self.suite, &self.released, &self.poset, wl).ok());
        let (window_key, source) = match derived {
            Some(d) => (d.key, KeySource::Derived(d.path)),
            None => (self.tc.node_key(wl).expect("window label exists").clone(), KeySource::Provisioned),
        };
        log::info!("verifier {issuer} obtained window [{t0},{t1}]' key: {source:?}");
        let mut plain = vec![Field::Nonce(nonce)];
        let (protocol, key_label, response_key) = match challenge {
            None => (ProtocolId::P14, wl, window_key.clone()),
            Some(v) => {
                if !self.is_upper(v) {
                    return Err(MintError::UnknownLabel(v.index()));
                }
                let under = || MintError::VerifierUnderCleared(self.poset.id_str(v).to_string());
                let kv = credential
                    .ok_or_else(under)?
                    .derive(self.suite, &self.released, &self.poset, v)
                    .map_err(|_| under())?;
                plain.push(Field::Label(self.poset.id_str(v).to_string()));
                (ProtocolId::P15, v, kv.key)
            }
        };
        let body = self.suite.ae_encrypt(&window_key, &encode_plaintext(&plain), &token_context(protocol, id), rng);
        let token = Token { id: id.to_string(), issuer: issuer.to_string(), protocol, window, body };
        self.board.insert(id.to_string(), token.clone());
        let entry = TokenEntry {
            protocol,
            nonce,
            end: u64::from(t1),
            key_label,
            response_key,
            seen: BTreeSet::new(),
            source,
        };
        Ok((token, entry))
    }
}

/// Claimant side: derive the window key from public information, open the
/// token and answer it.
pub fn redeem_token(
    suite: Suite,
    credential: &UserCredential,
    poset: &Poset,
    released: &KasPublicInfo,
    token: &Token,
    claimant_nonce: Nonce,
    rng: &mut dyn RngCore,
) -> Result<Redemption, RedeemError> {
    let window_label = Label::mirrored(Label::Interval(token.window.0 as i64, token.window.1 as i64))
        .ok()
        .and_then(|l| poset.find_label(&l))
        .ok_or(RedeemError::BadToken)?;
    let name = poset.id_str(window_label).to_string();
    let d = credential.derive(suite, released, poset, window_label).map_err(|e| match e {
        DeriveError::MissingEdgeToken { .. } => RedeemError::NotYetReleased(name.clone()),
        _ => RedeemError::OutOfReach(name.clone()),
    })?;
    let plain = suite
        .ae_decrypt(&d.key, &token.body, &token_context(token.protocol, &token.id))
        .map_err(|_| RedeemError::BadToken)?;
    let fields = decode_plaintext(&plain).map_err(|_| RedeemError::BadToken)?;
    let (nb, key) = match (token.protocol, fields.as_slice()) {
        (ProtocolId::P14, [Field::Nonce(nb)]) => (*nb, d.key.clone()),
        (ProtocolId::P15, [Field::Nonce(nb), Field::Label(v)]) => {
            let v = poset.find(v).ok_or(RedeemError::BadToken)?;
            let kv = credential
                .derive(suite, released, poset, v)
                .map_err(|_| RedeemError::LabelNotDominated(poset.id_str(v).to_string()))?;
            (*nb, kv.key)
        }
        _ => return Err(RedeemError::BadToken),
    };
    let reply = encode_plaintext(&[Field::Identity(token.issuer.clone()), Field::Nonce(nb), Field::Nonce(claimant_nonce)]);
    let sealed = suite.ae_encrypt(&key, &reply, &redemption_context(token.protocol, &token.id), rng);
    let message = ProtocolMessage::new(
        token.protocol,
        3,
        Role::Claimant,
        Role::Verifier,
        vec![Field::TokenRef(token.id.clone()), Field::Sealed(sealed)],
    );
    Ok(Redemption { message, window_path: d.path })
}

/// Verifier side. Returns the label the claimant proved knowledge at.
pub fn verify_redemption(
    suite: Suite,
    verifier_id: &str,
    ledger: &mut BTreeMap<String, TokenEntry>,
    message: &ProtocolMessage,
    current_tick: u64,
) -> Result<LabelId, RejectReason> {
    let [Field::TokenRef(id), Field::Sealed(ct)] = message.fields.as_slice() else {
        return Err(RejectReason::Malformed);
    };
    let entry = ledger.get_mut(id).ok_or(RejectReason::UnknownToken)?;
    require(current_tick <= entry.end, RejectReason::Expired)?;
    let plain = suite
        .ae_decrypt(&entry.response_key, ct, &redemption_context(entry.protocol, id))
        .map_err(|_| RejectReason::BadCiphertext)?;
    let fields = decode_plaintext(&plain).map_err(|_| RejectReason::Malformed)?;
    let [Field::Identity(b), Field::Nonce(nb), Field::Nonce(na)] = fields.as_slice() else {
        return Err(RejectReason::Malformed);
    };
    require(b == verifier_id && *nb == entry.nonce, RejectReason::BadResponse)?;
    require(entry.seen.insert(*na), RejectReason::ReplayedClaimantNonce)?;
    Ok(entry.key_label)
}

/// Claimant endpoint answering one posted token.
#[derive(Clone)]
pub struct RedeemingClaimant {
    state: SessionState,
    token: Token,
    credential: Option<UserCredential>,
}

impl RedeemingClaimant {
    pub fn new(token: Token, credential: Option<UserCredential>) -> Self {
        let state = SessionState::new(token.protocol, Role::Claimant, "", &token.issuer);
        RedeemingClaimant { state, token, credential }
    }
}

impl Endpoint for RedeemingClaimant {
    fn clone_box(&self) -> Box<dyn Endpoint> {
        Box::new(self.clone())
    }

    fn state(&self) -> &SessionState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut SessionState {
        &mut self.state
    }

    fn step(&mut self, inbound: Option<&ProtocolMessage>, env: &mut Env<'_>) -> Vec<ProtocolMessage> {
        if self.state.verdict.is_final() || inbound.is_some() || self.state.phase != 0 {
            return Vec::new();
        }
        let Some(cred) = &self.credential else {
            return self.state.reject(RejectReason::CannotDerive);
        };
        let na = crate::protocols::common::nonce(env, &mut self.state);
        match redeem_token(env.suite, cred, env.kas_poset, env.public, &self.token, na, env.rng) {
            Ok(r) => {
                self.state.derivation = Some(r.window_path);
                self.state.verdict = Verdict::Completed;
                self.state.phase = 4;
                vec![r.message]
            }
            Err(RedeemError::BadToken) => self.state.reject(RejectReason::BadCiphertext),
            Err(_) => self.state.reject(RejectReason::CannotDerive),
        }
    }
}

/// Verifier endpoint checking one redemption against its token ledger.
#[derive(Clone)]
pub struct RedemptionVerifier {
    state: SessionState,
}

impl RedemptionVerifier {
    pub fn new(protocol: ProtocolId, verifier_id: &str) -> Self {
        let mut state = SessionState::new(protocol, Role::Verifier, verifier_id, "");
        state.phase = 3;
        state.authenticates = Some(Role::Claimant);
        RedemptionVerifier { state }
    }
}

impl Endpoint for RedemptionVerifier {
    fn clone_box(&self) -> Box<dyn Endpoint> {
        Box::new(self.clone())
    }

    fn state(&self) -> &SessionState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut SessionState {
        &mut self.state
    }

    fn step(&mut self, inbound: Option<&ProtocolMessage>, env: &mut Env<'_>) -> Vec<ProtocolMessage> {
        let Some(msg) = inbound else {
            return Vec::new();
        };
        if self.state.verdict.is_final() {
            return Vec::new();
        }
        let checked = expect_header(&self.state, msg, Role::Claimant).and_then(|()| {
            verify_redemption(env.suite, &self.state.self_id, &mut env.ledger.tokens, msg, env.tick)
        });
        match checked {
            Ok(label) => {
                self.state.verdict = Verdict::Accept;
                self.state.clearance = Some(label);
                self.state.phase = 4;
            }
            Err(reason) => {
                self.state.reject(reason);
            }
        }
        Vec::new()
    }
}
