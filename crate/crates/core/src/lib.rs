//! Entity authentication over hierarchical key assignment: label posets,
//! iterative key-encrypting derivation, the challenge-response protocols
//! built on it, and time-bound tokens.

pub mod crypto;
pub mod kas;
pub mod policy;
pub mod poset;
pub mod protocols;
pub mod timerelease;
