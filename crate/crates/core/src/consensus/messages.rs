//! Protocol messages. Each carries the certificates its receiver needs to
//! check it without trusting the sender.

use serde::{Deserialize, Serialize};

use crate::crypto::{digest, Authenticator, Digest, SignedStatement, Statement, Tag};
use crate::encoding::{put_u64, Encode};
use crate::types::{ActorId, Block, Transaction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agree {
    pub height: u64,
    pub round: u64,
    pub block: Block,
    pub freeze: Option<FreezeCert>,
    pub auth: Authenticator,
}

impl Agree {
    pub fn statement(&self) -> Statement {
        Statement::new(Tag::Agree, self.height, self.round, self.block.digest())
    }

    pub fn signed(&self) -> SignedStatement {
        SignedStatement {
            stmt: self.statement(),
            auth: self.auth.clone(),
        }
    }
}

/// ACK-AGREE or ACK-WRITE, distinguished by the authenticator's tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub height: u64,
    pub round: u64,
    pub digest: Digest,
    pub auth: Authenticator,
}

impl Vote {
    pub fn statement(&self) -> Statement {
        Statement::new(self.auth.tag, self.height, self.round, self.digest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Write {
    pub height: u64,
    pub round: u64,
    pub block: Block,
    /// ACK-AGREEs for `block` in this round.
    pub acks: Vec<Authenticator>,
    pub auth: Authenticator,
}

impl Write {
    pub fn statement(&self) -> Statement {
        Statement::new(Tag::Write, self.height, self.round, self.block.digest())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decide {
    pub height: u64,
    pub round: u64,
    pub digest: Digest,
    /// ACK-WRITEs for `digest` in this round.
    pub write_acks: Vec<Authenticator>,
    pub auth: Authenticator,
}

impl Decide {
    pub fn statement(&self) -> Statement {
        Statement::new(Tag::Decide, self.height, self.round, self.digest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeout {
    pub height: u64,
    pub round: u64,
    pub auth: Authenticator,
    /// The AGREE this sender saw in the round, if any. Lets the next leader
    /// spot a leader that signed two proposals.
    pub observed: Option<SignedStatement>,
}

impl Timeout {
    pub fn statement_for(height: u64, round: u64) -> Statement {
        Statement::new(Tag::Timeout, height, round, Digest::ZERO)
    }

    pub fn statement(&self) -> Statement {
        Self::statement_for(self.height, self.round)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Freeze {
    pub height: u64,
    /// The round being started; every round below it is frozen.
    pub round: u64,
    /// The round that timed out. Usually `round - 1`; larger gaps skip
    /// leaders that failed to start their own round change.
    pub frozen: u64,
    /// TIMEOUT authenticators for `frozen`.
    pub timeouts: Vec<Authenticator>,
    pub auth: Authenticator,
}

impl Freeze {
    pub fn statement(&self) -> Statement {
        Statement::new(Tag::Freeze, self.height, self.round, Digest::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FreezeAckContent {
    Empty,
    /// The sender's stored WRITE, with the ACK-AGREE certificate behind it.
    CarriesWrite {
        round: u64,
        block: Block,
        acks: Vec<Authenticator>,
    },
}

impl FreezeAckContent {
    pub fn subject(&self) -> Digest {
        match self {
            FreezeAckContent::Empty => Digest::ZERO,
            FreezeAckContent::CarriesWrite { round, block, .. } => {
                let mut out = Vec::with_capacity(40);
                put_u64(&mut out, *round);
                block.digest().encode_to(&mut out);
                digest(&out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeAck {
    pub height: u64,
    pub round: u64,
    pub content: FreezeAckContent,
    pub auth: Authenticator,
}

impl FreezeAck {
    pub fn statement(&self) -> Statement {
        Statement::new(Tag::FreezeAck, self.height, self.round, self.content.subject())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeCert {
    pub round_frozen: u64,
    pub timeouts: Vec<Authenticator>,
    pub freeze_acks: Vec<FreezeAck>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suspect {
    pub accused: ActorId,
    pub txid: Digest,
    pub height: u64,
    pub auth: Authenticator,
}

impl Suspect {
    pub fn statement_for(accused: ActorId, txid: &Digest, height: u64) -> Statement {
        let mut out = Vec::with_capacity(36);
        accused.encode_to(&mut out);
        txid.encode_to(&mut out);
        Statement::new(Tag::Suspect, height, 0, digest(&out))
    }

    pub fn statement(&self) -> Statement {
        Self::statement_for(self.accused, &self.txid, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProtocolMessage {
    Agree(Agree),
    AckAgree(Vote),
    Write(Write),
    AckWrite(Vote),
    Decide(Decide),
    Timeout(Timeout),
    Freeze(Freeze),
    FreezeAck(FreezeAck),
    Suspect(Suspect),
    /// A transaction submitted by a client or forwarded by a producer.
    Tx(Transaction),
    /// A join request handed to a relay, which forwards it to producers.
    JoinRequest(Transaction),
    BlockRequest { height: u64, digest: Digest },
    BlockResponse(Block),
}

impl ProtocolMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolMessage::Agree(_) => "agree",
            ProtocolMessage::AckAgree(_) => "ack_agree",
            ProtocolMessage::Write(_) => "write",
            ProtocolMessage::AckWrite(_) => "ack_write",
            ProtocolMessage::Decide(_) => "decide",
            ProtocolMessage::Timeout(_) => "timeout",
            ProtocolMessage::Freeze(_) => "freeze",
            ProtocolMessage::FreezeAck(_) => "freeze_ack",
            ProtocolMessage::Suspect(_) => "suspect",
            ProtocolMessage::Tx(_) => "tx",
            ProtocolMessage::JoinRequest(_) => "join_request",
            ProtocolMessage::BlockRequest { .. } => "block_request",
            ProtocolMessage::BlockResponse(_) => "block_response",
        }
    }

    /// Consensus height the message belongs to, if any.
    pub fn height(&self) -> Option<u64> {
        match self {
            ProtocolMessage::Agree(m) => Some(m.height),
            ProtocolMessage::AckAgree(m) | ProtocolMessage::AckWrite(m) => Some(m.height),
            ProtocolMessage::Write(m) => Some(m.height),
            ProtocolMessage::Decide(m) => Some(m.height),
            ProtocolMessage::Timeout(m) => Some(m.height),
            ProtocolMessage::Freeze(m) => Some(m.height),
            ProtocolMessage::FreezeAck(m) => Some(m.height),
            _ => None,
        }
    }

    pub fn round(&self) -> Option<u64> {
        match self {
            ProtocolMessage::Agree(m) => Some(m.round),
            ProtocolMessage::AckAgree(m) | ProtocolMessage::AckWrite(m) => Some(m.round),
            ProtocolMessage::Write(m) => Some(m.round),
            ProtocolMessage::Decide(m) => Some(m.round),
            ProtocolMessage::Timeout(m) => Some(m.round),
            ProtocolMessage::Freeze(m) => Some(m.round),
            ProtocolMessage::FreezeAck(m) => Some(m.round),
            _ => None,
        }
    }
}
