//! Value types shared by every module: identities, transactions and blocks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{digest, Digest, QuorumCert, SignedStatement};
use crate::encoding::{put_bytes, put_i64, put_u32, put_u64, put_u8, Decode, DecodeError, Encode, Reader};

/// Coin amounts. Signed so that deltas and reversals stay in one type.
pub type Coins = i64;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub u32);

impl fmt::Debug for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl Encode for ActorId {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u32(out, self.0);
    }
}

impl Decode for ActorId {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ActorId(r.u32()?))
    }
}

/// Simulated hardware identity (stands in for a TPM key or SGX quote).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceToken(#[serde(with = "hex_bytes")] pub Vec<u8>);

impl DeviceToken {
    pub fn for_actor(actor: ActorId) -> Self {
        DeviceToken(format!("device-{}", actor.0).into_bytes())
    }
}

impl Encode for DeviceToken {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_bytes(out, &self.0);
    }
}

impl Decode for DeviceToken {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(DeviceToken(r.bytes()?))
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Transfer,
    Join,
    Leave,
    Punishment,
    Evidence,
}

impl TxKind {
    /// Membership and accountability transactions are free with respect to
    /// the block size limit.
    pub fn is_size_exempt(self) -> bool {
        !matches!(self, TxKind::Transfer)
    }
}

/// One SUSPECT signature carried inside a punishment transaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SuspectVote {
    /// Height of the block in which the accused omitted the transaction.
    pub height: u64,
    pub auth: crate::crypto::Authenticator,
}

impl Encode for SuspectVote {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.height);
        self.auth.encode_to(out);
    }
}

impl Decode for SuspectVote {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SuspectVote {
            height: r.u64()?,
            auth: crate::crypto::Authenticator::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TxBody {
    Transfer {
        from: ActorId,
        to: ActorId,
        amount: Coins,
        nonce: u64,
    },
    Join {
        joiner: ActorId,
        device_token: DeviceToken,
        deposit: Coins,
    },
    Leave {
        leaver: ActorId,
    },
    /// Strips the reward of the accused's block at `height` for omitting `txid`.
    Punishment {
        accused: ActorId,
        txid: Digest,
        height: u64,
        suspects: Vec<SuspectVote>,
    },
    /// Two conflicting AGREE signatures by the same leader for one round.
    Evidence {
        first: SignedStatement,
        second: SignedStatement,
    },
}

impl TxBody {
    pub fn kind(&self) -> TxKind {
        match self {
            TxBody::Transfer { .. } => TxKind::Transfer,
            TxBody::Join { .. } => TxKind::Join,
            TxBody::Leave { .. } => TxKind::Leave,
            TxBody::Punishment { .. } => TxKind::Punishment,
            TxBody::Evidence { .. } => TxKind::Evidence,
        }
    }
}

impl Encode for TxBody {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            TxBody::Transfer {
                from,
                to,
                amount,
                nonce,
            } => {
                put_u8(out, 0);
                from.encode_to(out);
                to.encode_to(out);
                put_i64(out, *amount);
                put_u64(out, *nonce);
            }
            TxBody::Join {
                joiner,
                device_token,
                deposit,
            } => {
                put_u8(out, 1);
                joiner.encode_to(out);
                device_token.encode_to(out);
                put_i64(out, *deposit);
            }
            TxBody::Leave { leaver } => {
                put_u8(out, 2);
                leaver.encode_to(out);
            }
            TxBody::Punishment {
                accused,
                txid,
                height,
                suspects,
            } => {
                put_u8(out, 3);
                accused.encode_to(out);
                txid.encode_to(out);
                put_u64(out, *height);
                suspects.encode_to(out);
            }
            TxBody::Evidence { first, second } => {
                put_u8(out, 4);
                first.encode_to(out);
                second.encode_to(out);
            }
        }
    }
}

impl Decode for TxBody {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            0 => TxBody::Transfer {
                from: ActorId::decode_from(r)?,
                to: ActorId::decode_from(r)?,
                amount: r.i64()?,
                nonce: r.u64()?,
            },
            1 => TxBody::Join {
                joiner: ActorId::decode_from(r)?,
                device_token: DeviceToken::decode_from(r)?,
                deposit: r.i64()?,
            },
            2 => TxBody::Leave {
                leaver: ActorId::decode_from(r)?,
            },
            3 => TxBody::Punishment {
                accused: ActorId::decode_from(r)?,
                txid: Digest::decode_from(r)?,
                height: r.u64()?,
                suspects: Vec::decode_from(r)?,
            },
            4 => TxBody::Evidence {
                first: SignedStatement::decode_from(r)?,
                second: SignedStatement::decode_from(r)?,
            },
            value => return Err(DecodeError::BadTag { what: "TxBody", value }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: Digest,
    pub size_bytes: u32,
    pub body: TxBody,
}

impl Transaction {
    pub fn new(body: TxBody, size_bytes: u32) -> Self {
        Transaction {
            id: digest(&body.encode()),
            size_bytes,
            body,
        }
    }

    /// Exempt transaction; its nominal size is its encoded length.
    pub fn exempt(body: TxBody) -> Self {
        let size = body.encode().len() as u32;
        Transaction::new(body, size)
    }

    pub fn kind(&self) -> TxKind {
        self.body.kind()
    }

    pub fn id_is_consistent(&self) -> bool {
        self.id == digest(&self.body.encode())
    }
}

impl Encode for Transaction {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.id.encode_to(out);
        put_u32(out, self.size_bytes);
        self.body.encode_to(out);
    }
}

impl Decode for Transaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            id: Digest::decode_from(r)?,
            size_bytes: r.u32()?,
            body: TxBody::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    /// Round of the AGREE that first proposed this block. A block carried
    /// through a FREEZE keeps its original round.
    pub round: u64,
    pub proposer: ActorId,
    pub parent_hash: Digest,
    pub txs: Vec<Transaction>,
    pub cert: QuorumCert,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            height: 0,
            round: 0,
            proposer: ActorId(0),
            parent_hash: Digest::ZERO,
            txs: Vec::new(),
            cert: QuorumCert::default(),
        }
    }

    /// Digest of everything except the certificate, which signs it.
    pub fn digest(&self) -> Digest {
        let mut out = Vec::new();
        self.encode_header_to(&mut out);
        digest(&out)
    }

    fn encode_header_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.height);
        put_u64(out, self.round);
        self.proposer.encode_to(out);
        self.parent_hash.encode_to(out);
        self.txs.encode_to(out);
    }

    pub fn transfer_bytes(&self) -> u64 {
        self.txs
            .iter()
            .filter(|t| !t.kind().is_size_exempt())
            .map(|t| t.size_bytes as u64)
            .sum()
    }

    pub fn contains_tx(&self, id: &Digest) -> bool {
        self.txs.iter().any(|t| &t.id == id)
    }
}

impl Encode for Block {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.encode_header_to(out);
        self.cert.encode_to(out);
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Block {
            height: r.u64()?,
            round: r.u64()?,
            proposer: ActorId::decode_from(r)?,
            parent_hash: Digest::decode_from(r)?,
            txs: Vec::decode_from(r)?,
            cert: QuorumCert::decode_from(r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Authenticator, Statement, Tag};
    use proptest::prelude::*;

    fn arb_digest() -> impl Strategy<Value = Digest> {
        any::<[u8; 32]>().prop_map(Digest)
    }

    fn arb_auth() -> impl Strategy<Value = Authenticator> {
        (any::<u32>(), 0u8..9, arb_digest()).prop_map(|(s, t, d)| Authenticator {
            signer: ActorId(s),
            tag: Tag::decode(&[t]).unwrap(),
            digest: d,
        })
    }

    fn arb_signed() -> impl Strategy<Value = SignedStatement> {
        (any::<u64>(), any::<u64>(), arb_digest(), arb_auth()).prop_map(|(h, r, d, auth)| {
            SignedStatement {
                stmt: Statement::new(Tag::Agree, h, r, d),
                auth,
            }
        })
    }

    fn arb_body() -> impl Strategy<Value = TxBody> {
        prop_oneof![
            (any::<u32>(), any::<u32>(), any::<i64>(), any::<u64>()).prop_map(|(f, t, a, n)| {
                TxBody::Transfer {
                    from: ActorId(f),
                    to: ActorId(t),
                    amount: a,
                    nonce: n,
                }
            }),
            (any::<u32>(), proptest::collection::vec(any::<u8>(), 0..16), any::<i64>()).prop_map(
                |(j, tok, d)| TxBody::Join {
                    joiner: ActorId(j),
                    device_token: DeviceToken(tok),
                    deposit: d,
                }
            ),
            any::<u32>().prop_map(|l| TxBody::Leave { leaver: ActorId(l) }),
            (
                any::<u32>(),
                arb_digest(),
                any::<u64>(),
                proptest::collection::vec((any::<u64>(), arb_auth()), 0..4)
            )
                .prop_map(|(a, txid, h, s)| TxBody::Punishment {
                    accused: ActorId(a),
                    txid,
                    height: h,
                    suspects: s
                        .into_iter()
                        .map(|(height, auth)| SuspectVote { height, auth })
                        .collect(),
                }),
            (arb_signed(), arb_signed()).prop_map(|(first, second)| TxBody::Evidence { first, second }),
        ]
    }

    fn arb_block() -> impl Strategy<Value = Block> {
        (
            any::<u64>(),
            any::<u64>(),
            any::<u32>(),
            arb_digest(),
            proptest::collection::vec((arb_body(), any::<u32>()), 0..5),
            any::<u64>(),
            arb_digest(),
            proptest::collection::vec(arb_auth(), 0..5),
        )
            .prop_map(|(height, round, p, parent_hash, txs, cr, cd, auths)| Block {
                height,
                round,
                proposer: ActorId(p),
                parent_hash,
                txs: txs.into_iter().map(|(b, s)| Transaction::new(b, s)).collect(),
                cert: QuorumCert {
                    round: cr,
                    digest: cd,
                    auths,
                },
            })
    }

    proptest! {
        #[test]
        fn block_encoding_round_trips(b in arb_block()) {
            prop_assert_eq!(Block::decode(&b.encode()).unwrap(), b);
        }

        #[test]
        fn transaction_id_is_digest_of_body(body in arb_body(), size in any::<u32>()) {
            let tx = Transaction::new(body, size);
            prop_assert!(tx.id_is_consistent());
            prop_assert_eq!(Transaction::decode(&tx.encode()).unwrap(), tx);
        }
    }

    #[test]
    fn block_digest_ignores_certificate() {
        let mut b = Block::genesis();
        let d = b.digest();
        b.cert.round = 5;
        assert_eq!(b.digest(), d);
        b.round = 1;
        assert_ne!(b.digest(), d);
    }

    #[test]
    fn only_transfers_count_toward_size() {
        let mut b = Block::genesis();
        b.txs.push(Transaction::new(
            TxBody::Transfer {
                from: ActorId(0),
                to: ActorId(1),
                amount: 1,
                nonce: 0,
            },
            300,
        ));
        b.txs.push(Transaction::exempt(TxBody::Leave { leaver: ActorId(2) }));
        assert_eq!(b.transfer_bytes(), 300);
    }
}
