//! One function per protocol family. Each runs a single honest session on
//! the given network and returns that session's transcript.

use crate::poset::LabelId;

use super::driver::{Network, NetworkError, Transcript};
use super::message::ProtocolId;
use super::session::{Freshness, SessionKeySource, SessionSpec};

/// Parties and session id shared by every session function.
#[derive(Clone, Debug)]
pub struct Run<'a> {
    pub session: &'a str,
    pub claimant: &'a str,
    pub verifier: &'a str,
}

impl<'a> Run<'a> {
    pub fn new(session: &'a str, claimant: &'a str, verifier: &'a str) -> Self {
        Run { session, claimant, verifier }
    }

    fn spec(&self, protocol: ProtocolId) -> SessionSpec {
        SessionSpec::new(protocol, self.claimant, self.verifier)
    }
}

/// Protocols 1 to 5 over the pairwise key. `variant` 3 may take its
/// session key from the hierarchy.
pub fn baseline_session(
    net: &mut Network,
    run: &Run<'_>,
    variant: u8,
    session_key: SessionKeySource,
) -> Result<Transcript, NetworkError> {
    let protocol = ProtocolId::from_number(variant).filter(|p| p.is_baseline()).expect("baseline variant is 1..=5");
    net.run(run.session, run.spec(protocol).with_session_key(session_key))
}

/// Protocol 6: the claimant names the label.
pub fn csl_unilateral_session(net: &mut Network, run: &Run<'_>, v: LabelId) -> Result<Transcript, NetworkError> {
    net.run(run.session, run.spec(ProtocolId::P6).with_v(v))
}

/// Protocol 7: the verifier picks the label from the service.
pub fn vsl_unilateral_session(
    net: &mut Network,
    run: &Run<'_>,
    service: Option<&str>,
    v: Option<LabelId>,
) -> Result<Transcript, NetworkError> {
    let mut spec = run.spec(ProtocolId::P7);
    if let Some(s) = service {
        spec = spec.with_service(s);
    }
    if let Some(v) = v {
        spec = spec.with_v(v);
    }
    net.run(run.session, spec)
}

/// Protocol 8: `v` authenticates the claimant, `w` the verifier.
pub fn mutual_session(net: &mut Network, run: &Run<'_>, v: LabelId, w: LabelId) -> Result<Transcript, NetworkError> {
    net.run(run.session, run.spec(ProtocolId::P8).with_v(v).with_w(w))
}

/// Protocol 9, or 10 when a session key is wanted.
pub fn protected_nonce_session(
    net: &mut Network,
    run: &Run<'_>,
    v: LabelId,
    with_session_key: bool,
) -> Result<Transcript, NetworkError> {
    let protocol = if with_session_key { ProtocolId::P10 } else { ProtocolId::P9 };
    net.run(run.session, run.spec(protocol).with_v(v))
}

/// Protocol 11: the verifier may counter with its own label.
pub fn negotiation_session(
    net: &mut Network,
    run: &Run<'_>,
    v: LabelId,
    service: Option<&str>,
) -> Result<Transcript, NetworkError> {
    let mut spec = run.spec(ProtocolId::P11).with_v(v);
    if let Some(s) = service {
        spec = spec.with_service(s);
    }
    net.run(run.session, spec)
}

/// Protocol 12, or 13 when `w` is given for the reverse pass.
pub fn timestamp_session(
    net: &mut Network,
    run: &Run<'_>,
    v: LabelId,
    w: Option<LabelId>,
    freshness: Freshness,
) -> Result<Transcript, NetworkError> {
    let spec = match w {
        Some(w) => run.spec(ProtocolId::P13).with_v(v).with_w(w),
        None => run.spec(ProtocolId::P12).with_v(v),
    };
    net.run(run.session, spec.with_freshness(freshness))
}

/// Protocol 16: the TTP binds the claimed identity with a keyed digest.
pub fn ttp_identity_session(net: &mut Network, run: &Run<'_>, v: LabelId) -> Result<Transcript, NetworkError> {
    net.run(run.session, run.spec(ProtocolId::P16).with_v(v))
}

/// Protocol 17: the TTP hands the verifier the session key.
pub fn ttp_ake_session(net: &mut Network, run: &Run<'_>, v: LabelId) -> Result<Transcript, NetworkError> {
    net.run(run.session, run.spec(ProtocolId::P17).with_v(v))
}

/// Protocols 14 and 15: mint a token for `window`, broadcast every tick up
/// to `redeem_at`, then redeem. The session id doubles as the token id.
pub fn time_release_session(
    net: &mut Network,
    run: &Run<'_>,
    window: (u32, u32),
    challenge: Option<LabelId>,
    redeem_at: u64,
) -> Result<Transcript, NetworkError> {
    let token_id = format!("{}-token", run.session);
    net.mint(&token_id, run.verifier, window, challenge)?;
    let sys = net.time_release().ok_or(NetworkError::NoTimeRelease)?;
    let pending: Vec<u64> = (1..=redeem_at).filter(|t| !sys.broadcasts().contains(t)).collect();
    for t in pending {
        net.broadcast(t)?;
    }
    if net.tick() < redeem_at {
        net.advance(redeem_at - net.tick());
    }
    net.redeem(run.session, run.claimant, &token_id)
}
