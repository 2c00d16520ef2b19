//! Per-party session state, verdicts, and the execution environment that
//! step functions run in.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::crypto::{Nonce, NonceLedger, Suite, SymmetricKey};
use crate::kas::{KasPublicInfo, UserCredential};
use crate::policy::AuthenticationPolicy;
use crate::poset::{LabelId, Poset};
use crate::timerelease::TokenEntry;

use super::message::{ProtocolId, ProtocolMessage, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    VerifierUnderCleared,
    PolicyUnsatisfied,
    BadResponse,
    BadCiphertext,
    NonceMismatch,
    StaleTimestamp,
    FutureTimestamp,
    ReplayedTimestamp,
    SequenceReplay,
    CannotDerive,
    NoCommonDescendant,
    BelowServiceMinimum,
    LabelMismatch,
    DigestMismatch,
    TtpUnavailable,
    SessionKeyNotLeaf,
    Malformed,
    OutOfOrder,
    NoResponse,
    Expired,
    ReplayedClaimantNonce,
    UnknownToken,
    UnknownIdentity,
}

impl RejectReason {
    pub const ALL: [RejectReason; 23] = [
        RejectReason::VerifierUnderCleared,
        RejectReason::PolicyUnsatisfied,
        RejectReason::BadResponse,
        RejectReason::BadCiphertext,
        RejectReason::NonceMismatch,
        RejectReason::StaleTimestamp,
        RejectReason::FutureTimestamp,
        RejectReason::ReplayedTimestamp,
        RejectReason::SequenceReplay,
        RejectReason::CannotDerive,
        RejectReason::NoCommonDescendant,
        RejectReason::BelowServiceMinimum,
        RejectReason::LabelMismatch,
        RejectReason::DigestMismatch,
        RejectReason::TtpUnavailable,
        RejectReason::SessionKeyNotLeaf,
        RejectReason::Malformed,
        RejectReason::OutOfOrder,
        RejectReason::NoResponse,
        RejectReason::Expired,
        RejectReason::ReplayedClaimantNonce,
        RejectReason::UnknownToken,
        RejectReason::UnknownIdentity,
    ];

    pub fn name(self) -> &'static str {
        use RejectReason::*;
        match self {
            VerifierUnderCleared => "verifier-under-cleared",
            PolicyUnsatisfied => "policy-unsatisfied",
            BadResponse => "bad-response",
            BadCiphertext => "bad-ciphertext",
            NonceMismatch => "nonce-mismatch",
            StaleTimestamp => "stale-timestamp",
            FutureTimestamp => "future-timestamp",
            ReplayedTimestamp => "replayed-timestamp",
            SequenceReplay => "sequence-replay",
            CannotDerive => "cannot-derive",
            NoCommonDescendant => "no-common-descendant",
            BelowServiceMinimum => "below-service-minimum",
            LabelMismatch => "label-mismatch",
            DigestMismatch => "digest-mismatch",
            TtpUnavailable => "ttp-unavailable",
            SessionKeyNotLeaf => "session-key-not-leaf",
            Malformed => "malformed",
            OutOfOrder => "out-of-order",
            NoResponse => "no-response",
            Expired => "expired",
            ReplayedClaimantNonce => "replayed-claimant-nonce",
            UnknownToken => "unknown-token",
            UnknownIdentity => "unknown-identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Pending,
    /// The party authenticated its peer.
    Accept,
    /// The party played its part but authenticates nobody.
    Completed,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_final(self) -> bool {
        self != Verdict::Pending
    }

    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pending => f.write_str("pending"),
            Verdict::Accept => f.write_str("accept"),
            Verdict::Completed => f.write_str("completed"),
            Verdict::Reject(r) => write!(f, "reject:{r}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Freshness {
    #[default]
    Timestamp,
    Sequence,
}

/// Where the AKEP-style verifier takes its session key from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SessionKeySource {
    #[default]
    Random,
    /// A node key of the hierarchy; must be a minimal label.
    KasLabel(LabelId),
}

/// Parameters of one session. Each role reads only what it would know:
/// the claimant reads `v` in claimant-selects-label protocols, the verifier
/// reads `v` in verifier-selects-label ones and `w` in the mutual ones.
#[derive(Clone, Debug)]
pub struct SessionSpec {
    pub protocol: ProtocolId,
    /// Identity the claimant presents or that the transport reports.
    pub claimant_id: String,
    pub verifier_id: String,
    pub v: Option<LabelId>,
    pub w: Option<LabelId>,
    pub service: Option<String>,
    pub freshness: Freshness,
    pub session_key: SessionKeySource,
    /// Identity the claimant presents instead of its own.
    pub claim: Option<String>,
}

impl SessionSpec {
    pub fn new(protocol: ProtocolId, claimant_id: &str, verifier_id: &str) -> Self {
        SessionSpec {
            protocol,
            claimant_id: claimant_id.to_string(),
            verifier_id: verifier_id.to_string(),
            v: None,
            w: None,
            service: None,
            freshness: Freshness::default(),
            session_key: SessionKeySource::default(),
            claim: None,
        }
    }

    /// Identity the verifier and the TTP see for the claimant.
    pub fn presented_id(&self) -> &str {
        self.claim.as_deref().unwrap_or(&self.claimant_id)
    }

    pub fn with_claim(mut self, identity: &str) -> Self {
        self.claim = Some(identity.to_string());
        self
    }

    pub fn with_v(mut self, v: LabelId) -> Self {
        self.v = Some(v);
        self
    }

    pub fn with_w(mut self, w: LabelId) -> Self {
        self.w = Some(w);
        self
    }

    pub fn with_service(mut self, service: &str) -> Self {
        self.service = Some(service.to_string());
        self
    }

    pub fn with_freshness(mut self, freshness: Freshness) -> Self {
        self.freshness = freshness;
        self
    }

    pub fn with_session_key(mut self, source: SessionKeySource) -> Self {
        self.session_key = source;
        self
    }
}

/// Long-term secrets a party brings to a session.
#[derive(Clone, Debug, Default)]
pub struct PartyKeys {
    pub credential: Option<UserCredential>,
    /// Pairwise key for the baselines.
    pub shared: Option<SymmetricKey>,
    /// Key shared with the trusted third party.
    pub ttp: Option<SymmetricKey>,
}

/// State a party keeps across sessions.
#[derive(Clone, Debug, Default)]
pub struct PartyLedger {
    pub nonces: NonceLedger,
    /// Accepted timestamped ciphertexts, by digest, with their timestamp.
    pub seen_timestamped: BTreeMap<[u8; 32], u64>,
    pub seq_sent: BTreeMap<String, u64>,
    pub seq_seen: BTreeMap<String, u64>,
    /// Time-release tokens this party minted, by token id.
    pub tokens: BTreeMap<String, TokenEntry>,
}

impl PartyLedger {
    pub fn next_sequence(&mut self, peer: &str) -> u64 {
        let next = self.seq_sent.get(peer).map_or(1, |s| s + 1);
        self.seq_sent.insert(peer.to_string(), next);
        next
    }

    pub(crate) fn timestamp_digest(body: &[u8]) -> [u8; 32] {
        Sha256::digest(body).into()
    }

    /// Drops cache entries that can no longer pass the window check.
    pub(crate) fn prune_timestamps(&mut self, clock: u64, window: u64) {
        self.seen_timestamped.retain(|_, &mut t| t + window >= clock);
    }
}

/// Everything a step function may touch besides its own state.
pub struct Env<'a> {
    pub suite: Suite,
    pub rng: &'a mut dyn RngCore,
    /// This party's local clock.
    pub clock: u64,
    /// Global simulator tick, used only by the time-release verifier.
    pub tick: u64,
    pub policy: &'a AuthenticationPolicy,
    /// Poset the key hierarchy is built over (may extend the policy poset).
    pub kas_poset: &'a Poset,
    pub public: &'a KasPublicInfo,
    pub ledger: &'a mut PartyLedger,
}

/// Protocol-run variables of one party.
#[derive(Clone, Debug)]
pub struct SessionState {
    pub protocol: ProtocolId,
    pub role: Role,
    /// Index of the next inbound message this party will consume.
    pub phase: u8,
    pub self_id: String,
    pub peer_id: String,
    pub challenge: Option<LabelId>,
    pub response_label: Option<LabelId>,
    pub nonces_issued: Vec<Nonce>,
    pub nonces_seen: Vec<Nonce>,
    /// Label the peer was authenticated at, once accepted.
    pub clearance: Option<LabelId>,
    pub session_key: Option<SymmetricKey>,
    /// Cover path the party walked to obtain its proving key.
    pub derivation: Option<Vec<LabelId>>,
    pub verdict: Verdict,
    /// The role this party is trying to authenticate, if any.
    pub authenticates: Option<Role>,
}

impl SessionState {
    pub fn new(protocol: ProtocolId, role: Role, self_id: &str, peer_id: &str) -> Self {
        SessionState {
            protocol,
            role,
            phase: 0,
            self_id: self_id.to_string(),
            peer_id: peer_id.to_string(),
            challenge: None,
            response_label: None,
            nonces_issued: Vec::new(),
            nonces_seen: Vec::new(),
            clearance: None,
            session_key: None,
            derivation: None,
            verdict: Verdict::Pending,
            authenticates: None,
        }
    }

    pub(crate) fn reject(&mut self, reason: RejectReason) -> Vec<ProtocolMessage> {
        if !self.verdict.is_final() {
            self.verdict = Verdict::Reject(reason);
        }
        Vec::new()
    }
}

/// One role's step function.
pub trait Endpoint {
    fn state(&self) -> &SessionState;
    fn state_mut(&mut self) -> &mut SessionState;

    /// `None` starts the session; otherwise consumes one inbound message.
    fn step(&mut self, inbound: Option<&ProtocolMessage>, env: &mut Env<'_>) -> Vec<ProtocolMessage>;

    fn clone_box(&self) -> Box<dyn Endpoint>;

    fn role(&self) -> Role {
        self.state().role
    }

    /// Inbound bytes that did not decode.
    fn on_malformed(&mut self) {
        self.state_mut().reject(RejectReason::Malformed);
    }

    /// Called when no more messages will arrive.
    fn finish(&mut self) {
        let state = self.state_mut();
        if state.verdict == Verdict::Pending {
            state.verdict = Verdict::Reject(RejectReason::NoResponse);
        }
    }
}
