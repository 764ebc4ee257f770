//! Hashing and the simulated signature scheme.
//!
//! Signatures are modelled as a ledger of emitted `(signer, tag, digest)`
//! triples. An [`Authenticator`] verifies only if the ledger saw its signer
//! actually sign that exact tag and payload, which gives the unforgeability
//! the protocol relies on while keeping runs deterministic. The [`Authority`]
//! trait is the seam where a real scheme would plug in.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::encoding::{put_u64, put_u8, Decode, DecodeError, Encode, Reader};
use crate::types::ActorId;

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl Encode for Digest {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

impl Decode for Digest {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut out = [0u8; 32];
        out.copy_from_slice(r.take(32)?);
        Ok(Digest(out))
    }
}

pub fn digest(bytes: &[u8]) -> Digest {
    let out = Sha256::digest(bytes);
    let mut d = [0u8; 32];
    d.copy_from_slice(&out);
    Digest(d)
}

/// Message-kind discriminator bound into every signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Agree,
    AckAgree,
    Write,
    AckWrite,
    Decide,
    Timeout,
    Freeze,
    FreezeAck,
    Suspect,
}

impl Tag {
    const ALL: [Tag; 9] = [
        Tag::Agree,
        Tag::AckAgree,
        Tag::Write,
        Tag::AckWrite,
        Tag::Decide,
        Tag::Timeout,
        Tag::Freeze,
        Tag::FreezeAck,
        Tag::Suspect,
    ];

    fn code(self) -> u8 {
        Tag::ALL.iter().position(|t| *t == self).unwrap() as u8
    }
}

impl Encode for Tag {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u8(out, self.code());
    }
}

impl Decode for Tag {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let v = r.u8()?;
        Tag::ALL
            .get(v as usize)
            .copied()
            .ok_or(DecodeError::BadTag { what: "Tag", value: v })
    }
}

/// The signed content of every protocol message: `(height, round, subject)`
/// under a tag. What `subject` means depends on the tag (block digest for
/// votes, zero for TIMEOUT/FREEZE, content digest for FREEZE-ACK).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub tag: Tag,
    pub height: u64,
    pub round: u64,
    pub subject: Digest,
}

impl Statement {
    pub fn new(tag: Tag, height: u64, round: u64, subject: Digest) -> Self {
        Self {
            tag,
            height,
            round,
            subject,
        }
    }

    /// Bytes handed to `sign`/`verify`; the tag travels separately.
    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48);
        put_u64(&mut out, self.height);
        put_u64(&mut out, self.round);
        self.subject.encode_to(&mut out);
        out
    }
}

impl Encode for Statement {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.tag.encode_to(out);
        put_u64(out, self.height);
        put_u64(out, self.round);
        self.subject.encode_to(out);
    }
}

impl Decode for Statement {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Statement {
            tag: Tag::decode_from(r)?,
            height: r.u64()?,
            round: r.u64()?,
            subject: Digest::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Authenticator {
    pub signer: ActorId,
    pub tag: Tag,
    pub digest: Digest,
}

impl Encode for Authenticator {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.signer.encode_to(out);
        self.tag.encode_to(out);
        self.digest.encode_to(out);
    }
}

impl Decode for Authenticator {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Authenticator {
            signer: ActorId::decode_from(r)?,
            tag: Tag::decode_from(r)?,
            digest: Digest::decode_from(r)?,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
}

pub trait Authority {
    fn sign(&self, actor: ActorId, tag: Tag, payload: &[u8]) -> Result<Authenticator, CryptoError>;
    fn verify(&self, auth: &Authenticator, tag: Tag, payload: &[u8]) -> bool;

    fn sign_statement(&self, actor: ActorId, stmt: &Statement) -> Result<Authenticator, CryptoError> {
        self.sign(actor, stmt.tag, &stmt.payload())
    }

    fn verify_statement(&self, auth: &Authenticator, stmt: &Statement) -> bool {
        self.verify(auth, stmt.tag, &stmt.payload())
    }
}

/// Recorded-emission signature scheme owned by one simulation run.
#[derive(Debug, Default)]
pub struct SignatureLedger {
    actors: BTreeSet<ActorId>,
    emitted: RefCell<HashSet<(ActorId, Tag, Digest)>>,
}

impl SignatureLedger {
    pub fn new(actors: impl IntoIterator<Item = ActorId>) -> Self {
        Self {
            actors: actors.into_iter().collect(),
            emitted: RefCell::default(),
        }
    }

    pub fn register(&mut self, actor: ActorId) {
        self.actors.insert(actor);
    }

    pub fn signatures_emitted(&self) -> usize {
        self.emitted.borrow().len()
    }

    /// Whether `actor` ever signed `stmt`.
    pub fn was_signed(&self, actor: ActorId, stmt: &Statement) -> bool {
        self.emitted
            .borrow()
            .contains(&(actor, stmt.tag, digest(&stmt.payload())))
    }
}

impl Authority for SignatureLedger {
    fn sign(&self, actor: ActorId, tag: Tag, payload: &[u8]) -> Result<Authenticator, CryptoError> {
        if !self.actors.contains(&actor) {
            return Err(CryptoError::UnknownActor(actor));
        }
        let d = digest(payload);
        self.emitted.borrow_mut().insert((actor, tag, d));
        Ok(Authenticator {
            signer: actor,
            tag,
            digest: d,
        })
    }

    fn verify(&self, auth: &Authenticator, tag: Tag, payload: &[u8]) -> bool {
        auth.tag == tag
            && auth.digest == digest(payload)
            && self.emitted.borrow().contains(&(auth.signer, tag, auth.digest))
    }
}

/// A statement together with its authenticator, e.g. one half of an
/// equivocation proof.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedStatement {
    pub stmt: Statement,
    pub auth: Authenticator,
}

impl SignedStatement {
    pub fn verify(&self, authority: &dyn Authority) -> bool {
        authority.verify_statement(&self.auth, &self.stmt)
    }
}

impl Encode for SignedStatement {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.stmt.encode_to(out);
        self.auth.encode_to(out);
    }
}

impl Decode for SignedStatement {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SignedStatement {
            stmt: Statement::decode_from(r)?,
            auth: Authenticator::decode_from(r)?,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CertError {
    #[error("{got} distinct signers, {need} required")]
    TooFew { got: usize, need: usize },
    #[error("signer {0} appears more than once")]
    DuplicateSigner(ActorId),
    #[error("signer {0} is not an active producer")]
    NotMember(ActorId),
    #[error("authenticator from {0} does not verify")]
    BadSignature(ActorId),
}

/// Checks that `auths` holds at least `threshold` pairwise-distinct members,
/// each with a valid signature over `stmt`.
pub fn check_quorum(
    authority: &dyn Authority,
    auths: &[Authenticator],
    stmt: &Statement,
    threshold: usize,
    is_member: &dyn Fn(ActorId) -> bool,
) -> Result<(), CertError> {
    let payload = stmt.payload();
    let mut seen = BTreeSet::new();
    for a in auths {
        if !seen.insert(a.signer) {
            return Err(CertError::DuplicateSigner(a.signer));
        }
        if !is_member(a.signer) {
            return Err(CertError::NotMember(a.signer));
        }
        if !authority.verify(a, stmt.tag, &payload) {
            return Err(CertError::BadSignature(a.signer));
        }
    }
    if seen.len() < threshold {
        return Err(CertError::TooFew {
            got: seen.len(),
            need: threshold,
        });
    }
    Ok(())
}

/// Write-phase acknowledgements vouching for a decided block.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuorumCert {
    pub round: u64,
    pub digest: Digest,
    pub auths: Vec<Authenticator>,
}

impl QuorumCert {
    pub fn statement(&self, height: u64) -> Statement {
        Statement::new(Tag::AckWrite, height, self.round, self.digest)
    }

    pub fn validate(
        &self,
        authority: &dyn Authority,
        height: u64,
        threshold: usize,
        is_member: &dyn Fn(ActorId) -> bool,
    ) -> Result<(), CertError> {
        check_quorum(authority, &self.auths, &self.statement(height), threshold, is_member)
    }
}

impl Encode for QuorumCert {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.round);
        self.digest.encode_to(out);
        self.auths.encode_to(out);
    }
}

impl Decode for QuorumCert {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(QuorumCert {
            round: r.u64()?,
            digest: Digest::decode_from(r)?,
            auths: Vec::decode_from(r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn ledger() -> SignatureLedger {
        SignatureLedger::new((0..4).map(ActorId))
    }

    #[test]
    fn empty_input_digest_is_sha256_of_empty_string() {
        assert_eq!(
            digest(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn digest_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let len = rng.gen_range(0..64);
            let x: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(digest(&x), digest(&x));
        }
    }

    #[test]
    fn no_collisions_over_sampled_pairs() {
        // 10^5 distinct inputs: any repeated digest among them is a collision
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut seen: HashMap<Digest, Vec<u8>> = HashMap::new();
        let mut distinct = 0;
        while distinct < 100_000 {
            let len = rng.gen_range(1..40);
            let x: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            match seen.get(&digest(&x)) {
                Some(prev) => assert_eq!(prev, &x, "collision"),
                None => {
                    seen.insert(digest(&x), x);
                    distinct += 1;
                }
            }
        }
    }

    #[test]
    fn sign_verify_round_trip() {
        let l = ledger();
        let a = l.sign(ActorId(1), Tag::Agree, b"p").unwrap();
        assert!(l.verify(&a, Tag::Agree, b"p"));
    }

    #[test]
    fn tag_mismatch_is_forgery() {
        let l = ledger();
        let a = l.sign(ActorId(1), Tag::Agree, b"p").unwrap();
        assert!(!l.verify(&a, Tag::Write, b"p"));
        assert!(!l.verify(&a, Tag::Agree, b"q"));
    }

    #[test]
    fn handcrafted_authenticator_fails() {
        let l = ledger();
        let forged = Authenticator {
            signer: ActorId(2),
            tag: Tag::Agree,
            digest: digest(b"p"),
        };
        assert!(!l.verify(&forged, Tag::Agree, b"p"));
        // a real signature by someone else does not transfer to a new signer
        let real = l.sign(ActorId(1), Tag::Agree, b"p").unwrap();
        let stolen = Authenticator {
            signer: ActorId(3),
            ..real
        };
        assert!(!l.verify(&stolen, Tag::Agree, b"p"));
    }

    #[test]
    fn unknown_actor_cannot_sign() {
        let l = ledger();
        assert_eq!(
            l.sign(ActorId(9), Tag::Agree, b"p"),
            Err(CryptoError::UnknownActor(ActorId(9)))
        );
    }

    #[test]
    fn quorum_check_rejects_duplicates_shortfall_and_forgery() {
        let l = ledger();
        let stmt = Statement::new(Tag::AckWrite, 1, 0, digest(b"b"));
        let sig = |i| l.sign_statement(ActorId(i), &stmt).unwrap();
        let all = |_: ActorId| true;
        assert!(check_quorum(&l, &[sig(0), sig(1), sig(2)], &stmt, 3, &all).is_ok());
        assert_eq!(
            check_quorum(&l, &[sig(0), sig(1), sig(1)], &stmt, 3, &all),
            Err(CertError::DuplicateSigner(ActorId(1)))
        );
        assert_eq!(
            check_quorum(&l, &[sig(0), sig(1)], &stmt, 3, &all),
            Err(CertError::TooFew { got: 2, need: 3 })
        );
        let forged = Authenticator {
            signer: ActorId(3),
            tag: Tag::AckWrite,
            digest: digest(&stmt.payload()),
        };
        assert_eq!(
            check_quorum(&l, &[sig(0), sig(1), forged], &stmt, 3, &all),
            Err(CertError::BadSignature(ActorId(3)))
        );
        let members = |a: ActorId| a.0 < 2;
        assert_eq!(
            check_quorum(&l, &[sig(0), sig(1), sig(2)], &stmt, 3, &members),
            Err(CertError::NotMember(ActorId(2)))
        );
    }
}
