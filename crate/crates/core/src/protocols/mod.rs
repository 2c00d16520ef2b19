//! Authentication protocol state machines and the network that runs them.

pub(crate) mod common;
pub mod claimant;
pub mod driver;
pub mod message;
pub mod session;
pub mod sessions;
pub mod ttp;
pub mod verifier;

pub use claimant::Claimant;
pub use driver::{Envelope, Keyring, LogEvent, MessageRecord, Network, NetworkError, SessionOutcome, Transcript, TTP_ID};
pub use message::{context, Field, ProtocolId, ProtocolMessage, Role, WireError};
pub use session::{
    Endpoint, Env, Freshness, PartyKeys, PartyLedger, RejectReason, SessionKeySource, SessionSpec, SessionState, Verdict,
};
pub use sessions::Run;
pub use ttp::TrustedThirdParty;
pub use verifier::Verifier;
