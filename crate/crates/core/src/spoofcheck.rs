//! Stamp-based check that an attack truly originates behind a gateway.

use std::fmt;

use num_integer::Integer;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::message::Message;
use crate::model::{Address, Packet, PacketKind, PatternOracle, Step};
use crate::netsim::{fingerprint, Ctx, StampRule};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stamp(pub [u8; 16]);

impl Stamp {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Stamp(b)
    }
}

impl fmt::Debug for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Stamp({})", hex::encode(self.0))
    }
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoofCheckConfig {
    /// Stamp window multiplier on Δ.
    pub k: u64,
    /// How long either side waits for a reply.
    pub timeout: Step,
    /// Lets the gateway answer VERIFIED from its forwarding cache.
    pub trivial_checks: bool,
}

/// `⌈k·Δ⌉` steps.
pub fn stamp_window(k: u64, delta: &BigRational) -> Step {
    let scaled = delta * BigRational::from_integer(k.into());
    let (q, r) = scaled.numer().div_rem(scaled.denom());
    let q = q.to_u64().unwrap_or(u64::MAX);
    if r == 0.into() { q } else { q + 1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofOutcome {
    /// VERIFIED arrived directly after PING.
    Verified,
    /// A stamped attack packet was echoed and VERIFIED came back.
    StampVerified,
    /// No attack packet arrived in the stamp window.
    AttackStopped,
    /// Attack packets arrived in the window, none stamped.
    Unstamped,
    /// Echoed a stamped packet but VERIFIED never came.
    EchoUnanswered,
    /// No reply to PING.
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoofCheckResult {
    pub gateway: Address,
    pub spoofed: bool,
    pub outcome: SpoofOutcome,
    pub started: Step,
    pub finished: Step,
}

impl SpoofCheckResult {
    /// τ: steps spent on the check.
    pub fn duration(&self) -> Step {
        self.finished - self.started
    }
}

fn from_gateway(g: Address) -> impl Fn(&Packet) -> bool {
    move |p| {
        p.src == g
            && matches!(
                p.message,
                Some(Message::Verified) | Some(Message::Check { .. })
            )
    }
}

/// Server side. Returns `spoofed = true` when `g` could not show that the
/// attack passes through it.
pub async fn server_spoof_check(
    ctx: &Ctx,
    g: Address,
    sample: &Packet,
    delta: &BigRational,
    oracle: &PatternOracle,
    cfg: &SpoofCheckConfig,
) -> SpoofCheckResult {
    let started = ctx.now();
    let finish = |spoofed, outcome| {
        let r = SpoofCheckResult { gateway: g, spoofed, outcome, started, finished: ctx.now() };
        ctx.record("spoof_check", serde_json::json!({"gateway": g, "spoofed": spoofed, "outcome": outcome}));
        r
    };
    let ping = Message::Ping { attack: Box::new(sample.clone()), delta: delta.clone() };
    if ctx.send_msg(g, ping).is_err() {
        return finish(true, SpoofOutcome::Timeout);
    }
    let Some((reply, _)) = ctx.recv(from_gateway(g), cfg.timeout).await else {
        return finish(true, SpoofOutcome::Timeout);
    };
    let stamp = match reply.message {
        Some(Message::Verified) => return finish(false, SpoofOutcome::Verified),
        Some(Message::Check { stamp }) => stamp,
        _ => unreachable!("filtered by predicate"),
    };
    let check_at = ctx.now();
    let window_end = check_at + stamp_window(cfg.k, delta);
    let me = ctx.me();
    let stamped_since = |w: &crate::netsim::World| -> Option<Packet> {
        w.node(me)?
            .traffic()
            .iter()
            .filter(|(p, at)| *at >= check_at && oracle.is_attack(p))
            .find(|(p, _)| p.stamp == Some(stamp))
            .map(|(p, _)| p.clone())
    };
    let seen = ctx.wait_for(|w| stamped_since(w).is_some(), window_end).await;
    if seen {
        let echoed = ctx.with_world(stamped_since).expect("stamped packet present");
        let _ = ctx.send_msg(g, Message::StampEcho { packet: Box::new(echoed) });
        let verified = ctx
            .recv(|p| p.src == g && p.message == Some(Message::Verified), cfg.timeout)
            .await;
        return match verified {
            Some(_) => finish(false, SpoofOutcome::StampVerified),
            None => finish(true, SpoofOutcome::EchoUnanswered),
        };
    }
    let any_attack = ctx
        .traffic_between(check_at, window_end + 1)
        .iter()
        .any(|(p, _)| oracle.is_attack(p));
    if any_attack {
        finish(true, SpoofOutcome::Unstamped)
    } else {
        finish(false, SpoofOutcome::AttackStopped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewaySpoofOutcome {
    Trivial,
    StampEchoed,
    InvalidStamp,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewaySpoofResult {
    pub server: Address,
    /// True when the attack does not come from this gateway's network.
    pub spoofed: bool,
    pub outcome: GatewaySpoofOutcome,
    pub stamp: Option<Stamp>,
}

/// Gateway side, run on receipt of PING from `server` carrying `attack`.
pub async fn gateway_spoof_check(
    ctx: &Ctx,
    server: Address,
    attack: &Packet,
    delta: &BigRational,
    cfg: &SpoofCheckConfig,
    rng: &mut impl RngCore,
) -> GatewaySpoofResult {
    let me = ctx.me();
    let finish = |spoofed, outcome, stamp: Option<Stamp>| {
        ctx.record(
            "gateway_spoof_check",
            serde_json::json!({"server": server, "spoofed": spoofed, "outcome": outcome}),
        );
        GatewaySpoofResult { server, spoofed, outcome, stamp }
    };
    let local = cfg.trivial_checks
        && ctx.with_world(|w| {
            let node = w.node(me).expect("gateway node exists");
            node.manages(attack.src) && node.forwarded_at(fingerprint(attack)).is_some()
        });
    if local {
        let _ = ctx.send_msg(server, Message::Verified);
        return finish(false, GatewaySpoofOutcome::Trivial, None);
    }
    let stamp = Stamp::random(rng);
    let until = ctx.now() + stamp_window(cfg.k, delta);
    ctx.with_world_mut(|w| {
        w.note_stamp(stamp);
        w.set_stamping(me, Some(StampRule { stamp, toward: server, until }));
    });
    let _ = ctx.send_msg(server, Message::Check { stamp });
    let echo = ctx
        .recv_until(
            |p| p.src == server && p.kind == PacketKind::Protocol && matches!(p.message, Some(Message::StampEcho { .. })),
            until + cfg.timeout,
        )
        .await;
    ctx.with_world_mut(|w| w.set_stamping(me, None));
    match echo {
        Some((p, _)) => {
            let Some(Message::StampEcho { packet }) = p.message else { unreachable!() };
            if packet.stamp == Some(stamp) {
                let _ = ctx.send_msg(server, Message::Verified);
                finish(false, GatewaySpoofOutcome::StampEchoed, Some(stamp))
            } else {
                finish(true, GatewaySpoofOutcome::InvalidStamp, Some(stamp))
            }
        }
        None => finish(true, GatewaySpoofOutcome::Silence, Some(stamp)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rounds_up() {
        assert_eq!(stamp_window(5, &BigRational::from_integer(10.into())), 50);
        assert_eq!(stamp_window(5, &BigRational::new(7.into(), 3.into())), 12);
        assert_eq!(stamp_window(5, &BigRational::new(2.into(), 5.into())), 2);
    }

    #[test]
    fn stamp_formats_as_hex() {
        assert_eq!(Stamp([0xab; 16]).to_string(), "ab".repeat(16));
    }
}
