//! Trusted third party for Protocols 16 and 17. Modeled as fully honest.

use std::collections::BTreeMap;

use crate::crypto::{fresh_nonce, keyed_digest, SymmetricKey};

use super::common::{expect_header, seal, StepResult};
use super::message::{Field, ProtocolId, ProtocolMessage, Role};
use super::session::{Endpoint, Env, RejectReason, SessionSpec, SessionState, Verdict};

#[derive(Clone)]
pub struct TrustedThirdParty {
    state: SessionState,
    /// Long-term key shared with each registered identity.
    directory: BTreeMap<String, SymmetricKey>,
}

impl TrustedThirdParty {
    pub fn new(spec: &SessionSpec, directory: BTreeMap<String, SymmetricKey>) -> Self {
        let mut state = SessionState::new(spec.protocol, Role::Ttp, "ttp", &spec.verifier_id);
        state.phase = 2;
        TrustedThirdParty { state, directory }
    }

    fn receive(&mut self, msg: &ProtocolMessage, env: &mut Env<'_>) -> StepResult {
        let [Field::Identity(claimed)] = msg.fields.as_slice() else {
            return Err(RejectReason::Malformed);
        };
        let ka = self.directory.get(claimed).ok_or(RejectReason::UnknownIdentity)?;
        let kb = self.directory.get(&self.state.peer_id).ok_or(RejectReason::UnknownIdentity)?;
        let nb = fresh_nonce(env.rng, &mut env.ledger.nonces);
        self.state.nonces_issued.push(nb);
        let digest = keyed_digest(ka, &nb.0).to_vec();
        let second = match self.state.protocol {
            ProtocolId::P16 => Field::Digest(digest),
            _ => Field::Key(digest),
        };
        let proto = self.state.protocol;
        let sealed = seal(env, kb, proto, 3, Role::Ttp, Role::Verifier, &[Field::Nonce(nb), second]);
        self.state.verdict = Verdict::Completed;
        self.state.phase = 4;
        Ok(vec![ProtocolMessage::new(proto, 3, Role::Ttp, Role::Verifier, vec![sealed])])
    }
}

impl Endpoint for TrustedThirdParty {
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
        if self.state.verdict.is_final() {
            return Vec::new();
        }
        let Some(msg) = inbound else {
            return Vec::new();
        };
        expect_header(&self.state, msg, Role::Verifier)
            .and_then(|()| self.receive(msg, env))
            .unwrap_or_else(|reason| self.state.reject(reason))
    }

    /// The TTP decides nothing, so an unused TTP stays pending.
    fn finish(&mut self) {}
}
