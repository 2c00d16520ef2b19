//! Helpers shared by the role step functions.

use crate::crypto::{fresh_nonce, Ciphertext, Nonce, SymmetricKey};
use crate::poset::LabelId;

use super::message::{context, decode_plaintext, encode_plaintext, Field, ProtocolId, ProtocolMessage, Role};
use super::session::{Env, Freshness, PartyKeys, PartyLedger, RejectReason, SessionState};

pub(crate) type StepResult = Result<Vec<ProtocolMessage>, RejectReason>;

pub(crate) fn seal(
    env: &mut Env<'_>,
    key: &SymmetricKey,
    protocol: ProtocolId,
    index: u8,
    from: Role,
    to: Role,
    fields: &[Field],
) -> Field {
    let ct = env.suite.ae_encrypt(key, &encode_plaintext(fields), &context(protocol, index, from, to), env.rng);
    Field::Sealed(ct)
}

pub(crate) fn open(
    env: &Env<'_>,
    key: &SymmetricKey,
    ct: &Ciphertext,
    protocol: ProtocolId,
    index: u8,
    from: Role,
    to: Role,
) -> Result<Vec<Field>, RejectReason> {
    let plain = env
        .suite
        .ae_decrypt(key, ct, &context(protocol, index, from, to))
        .map_err(|_| RejectReason::BadCiphertext)?;
    decode_plaintext(&plain).map_err(|_| RejectReason::Malformed)
}

/// Rejects messages whose header does not match the next expected position.
pub(crate) fn expect_header(state: &SessionState, msg: &ProtocolMessage, from: Role) -> Result<(), RejectReason> {
    if msg.protocol != state.protocol || msg.index != state.phase || msg.from != from || msg.to != state.role {
        return Err(RejectReason::OutOfOrder);
    }
    Ok(())
}

pub(crate) fn nonce(env: &mut Env<'_>, state: &mut SessionState) -> Nonce {
    let n = fresh_nonce(env.rng, &mut env.ledger.nonces);
    state.nonces_issued.push(n);
    n
}

pub(crate) fn resolve(env: &Env<'_>, text: &str) -> Result<LabelId, RejectReason> {
    env.policy.poset.resolve(text).map_err(|_| RejectReason::Malformed)
}

pub(crate) fn label_field(env: &Env<'_>, id: LabelId) -> Field {
    Field::Label(env.policy.poset.id_str(id).to_string())
}

/// Obtains the key for `target` from the party's credential and records the path.
pub(crate) fn derive(
    state: &mut SessionState,
    keys: &PartyKeys,
    env: &Env<'_>,
    target: LabelId,
) -> Result<SymmetricKey, RejectReason> {
    let cred = keys.credential.as_ref().ok_or(RejectReason::CannotDerive)?;
    let d = cred
        .derive(env.suite, env.public, env.kas_poset, target)
        .map_err(|_| RejectReason::CannotDerive)?;
    state.derivation = Some(d.path);
    Ok(d.key)
}

pub(crate) fn own_label(keys: &PartyKeys) -> Option<LabelId> {
    keys.credential.as_ref().map(|c| c.label)
}

pub(crate) fn shared(keys: &PartyKeys) -> Result<SymmetricKey, RejectReason> {
    keys.shared.clone().ok_or(RejectReason::BadCiphertext)
}

pub(crate) fn freshness_field(mode: Freshness, env: &mut Env<'_>, peer: &str) -> Field {
    match mode {
        Freshness::Timestamp => Field::Timestamp(env.clock),
        Freshness::Sequence => Field::Sequence(env.ledger.next_sequence(peer)),
    }
}

/// Window, replay-cache and counter checks. Records the value on success.
pub(crate) fn check_freshness(
    mode: Freshness,
    env: &mut Env<'_>,
    peer: &str,
    field: &Field,
    sealed_body: &[u8],
) -> Result<(), RejectReason> {
    let window = env.policy.options.window;
    match (mode, field) {
        (Freshness::Timestamp, &Field::Timestamp(t)) => {
            if t.saturating_add(window) < env.clock {
                return Err(RejectReason::StaleTimestamp);
            }
            if t > env.clock.saturating_add(window) {
                return Err(RejectReason::FutureTimestamp);
            }
            env.ledger.prune_timestamps(env.clock, window);
            let digest = PartyLedger::timestamp_digest(sealed_body);
            if env.ledger.seen_timestamped.contains_key(&digest) {
                return Err(RejectReason::ReplayedTimestamp);
            }
            env.ledger.seen_timestamped.insert(digest, t);
            Ok(())
        }
        (Freshness::Sequence, &Field::Sequence(n)) => {
            let last = env.ledger.seq_seen.get(peer).copied().unwrap_or(0);
            if n <= last {
                return Err(RejectReason::SequenceReplay);
            }
            env.ledger.seq_seen.insert(peer.to_string(), n);
            Ok(())
        }
        _ => Err(RejectReason::Malformed),
    }
}

pub(crate) fn require(cond: bool, reason: RejectReason) -> Result<(), RejectReason> {
    if cond {
        Ok(())
    } else {
        Err(reason)
    }
}

pub(crate) fn session_context(m1: &[u8], m2: &[u8]) -> Vec<u8> {
    let mut ctx = b"kas-auth/p10/session".to_vec();
    ctx.extend_from_slice(m1);
    ctx.extend_from_slice(m2);
    ctx
}
