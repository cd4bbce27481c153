//! Contents of control packets exchanged by the protocol actors.

use std::collections::BTreeSet;

use num_rational::BigRational;

use crate::mechanism::{Commitment, Money, Opening};
use crate::model::{Address, Label, LabeledPacket, Packet, PacketKind};
use crate::spoofcheck::Stamp;

pub type SessionId = u64;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Discover { probe: u64 },
    GatewayResponse { probe: u64, range: BTreeSet<Address> },
    EchoReply { probe: u64 },
    TimeExceeded { probe: u64 },
    Ping { attack: Box<Packet>, delta: BigRational },
    Check { stamp: Stamp },
    /// A stamped attack packet returned by the server to the gateway.
    StampEcho { packet: Box<Packet> },
    Verified,
    Init {
        session: SessionId,
        commit_vs: Commitment,
        gamma_s: u64,
        attack: Box<Packet>,
        commit_eps: Commitment,
    },
    Terms {
        session: SessionId,
        gamma_g: u64,
        v_g: Money,
        fee: Money,
        iota: u64,
    },
    InitialReward {
        session: SessionId,
        rho_1: Money,
        open_vs: Opening,
    },
    RoundStart {
        session: SessionId,
        round: u32,
        commit_quote: Commitment,
        train: Vec<LabeledPacket>,
        prev_labels: Option<Vec<Label>>,
    },
    GatewayQuote {
        session: SessionId,
        round: u32,
        quote: Money,
    },
    RoundTest {
        session: SessionId,
        round: u32,
        open_quote: Opening,
        test: Vec<Packet>,
    },
    Predictions {
        session: SessionId,
        round: u32,
        labels: Vec<Label>,
    },
    PaymentInit {
        session: SessionId,
        round: u32,
        open_eps: Opening,
        final_labels: Vec<Label>,
        reward: Money,
    },
    PaymentAccept { session: SessionId },
    Abort { session: SessionId, reason: String },
}

impl Message {
    pub fn kind(&self) -> PacketKind {
        match self {
            Message::Discover { .. } => PacketKind::Discover,
            Message::GatewayResponse { .. } => PacketKind::GatewayResponse,
            Message::EchoReply { .. } => PacketKind::EchoReply,
            Message::TimeExceeded { .. } => PacketKind::TimeExceeded,
            Message::Ping { .. } => PacketKind::Ping,
            Message::Check { .. } => PacketKind::Check,
            Message::Verified => PacketKind::Verified,
            Message::Init { .. } => PacketKind::Init,
            _ => PacketKind::Protocol,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Discover { .. } => "DISCOVER",
            Message::GatewayResponse { .. } => "GATEWAY-RESPONSE",
            Message::EchoReply { .. } => "ECHO-REPLY",
            Message::TimeExceeded { .. } => "TIME-EXCEEDED",
            Message::Ping { .. } => "PING",
            Message::Check { .. } => "CHECK",
            Message::StampEcho { .. } => "STAMP-ECHO",
            Message::Verified => "VERIFIED",
            Message::Init { .. } => "INIT",
            Message::Terms { .. } => "TERMS",
            Message::InitialReward { .. } => "INITIAL-REWARD",
            Message::RoundStart { .. } => "ROUND-START",
            Message::GatewayQuote { .. } => "GATEWAY-QUOTE",
            Message::RoundTest { .. } => "ROUND-TEST",
            Message::Predictions { .. } => "PREDICTIONS",
            Message::PaymentInit { .. } => "PAYMENT-INIT",
            Message::PaymentAccept { .. } => "PAYMENT-ACCEPT",
            Message::Abort { .. } => "ABORT",
        }
    }

    pub fn session(&self) -> Option<SessionId> {
        match self {
            Message::Init { session, .. }
            | Message::Terms { session, .. }
            | Message::InitialReward { session, .. }
            | Message::RoundStart { session, .. }
            | Message::GatewayQuote { session, .. }
            | Message::RoundTest { session, .. }
            | Message::Predictions { session, .. }
            | Message::PaymentInit { session, .. }
            | Message::PaymentAccept { session }
            | Message::Abort { session, .. } => Some(*session),
            _ => None,
        }
    }

    pub fn probe(&self) -> Option<u64> {
        match self {
            Message::Discover { probe }
            | Message::GatewayResponse { probe, .. }
            | Message::EchoReply { probe }
            | Message::TimeExceeded { probe } => Some(*probe),
            _ => None,
        }
    }

    /// Wraps the message in a control packet of the matching kind.
    pub fn into_packet(self, src: Address, dst: Address) -> Packet {
        Packet::control(src, dst, self.kind(), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_and_sessions() {
        let m = Message::PaymentAccept { session: 4 };
        assert_eq!(m.kind(), PacketKind::Protocol);
        assert_eq!(m.session(), Some(4));
        assert_eq!(Message::Verified.session(), None);
        assert_eq!(Message::Discover { probe: 2 }.probe(), Some(2));
        let p = Message::Verified.into_packet(Address(1), Address(2));
        assert_eq!(p.kind, PacketKind::Verified);
        assert_eq!(p.src, Address(1));
    }
}
