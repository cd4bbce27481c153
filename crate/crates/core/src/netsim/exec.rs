//! Single-threaded cooperative executor. Actors are `async` blocks polled
//! in spawn order once per step (repeatedly while they make progress);
//! nothing ever wakes a task, the clock does.

use std::cell::RefCell;
use std::future::{poll_fn, Future};
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use super::{NetError, World};
use crate::message::Message;
use crate::model::{Address, Packet, Step};

const MAX_PASSES: usize = 64;

struct Task {
    name: String,
    essential: bool,
    fut: Option<Pin<Box<dyn Future<Output = ()>>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// All essential tasks finished and no session holds remain.
    Completed { at: Step },
    /// The horizon was reached first.
    Horizon { at: Step },
}

pub struct Sim {
    world: Rc<RefCell<World>>,
    tasks: Vec<Task>,
}

impl Sim {
    pub fn new(world: World) -> Self {
        Sim {
            world: Rc::new(RefCell::new(world)),
            tasks: Vec::new(),
        }
    }

    pub fn world(&self) -> Rc<RefCell<World>> {
        Rc::clone(&self.world)
    }

    pub fn ctx(&self, me: Address, actor: impl Into<String>) -> Ctx {
        Ctx {
            world: Rc::clone(&self.world),
            me,
            actor: Rc::from(actor.into()),
        }
    }

    /// Essential tasks keep the run alive; daemons run only while it lasts.
    pub fn spawn(&mut self, name: impl Into<String>, essential: bool, fut: impl Future<Output = ()> + 'static) {
        self.tasks.push(Task {
            name: name.into(),
            essential,
            fut: Some(Box::pin(fut)),
        });
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.name.as_str()).collect()
    }

    fn poll_pass(&mut self) -> bool {
        let mut cx = Context::from_waker(Waker::noop());
        let mut finished = false;
        for task in &mut self.tasks {
            if let Some(fut) = task.fut.as_mut() {
                if fut.as_mut().poll(&mut cx).is_ready() {
                    task.fut = None;
                    finished = true;
                }
            }
        }
        finished
    }

    fn poll_until_quiet(&mut self) {
        for _ in 0..MAX_PASSES {
            let before = self.world.borrow().progress();
            let finished = self.poll_pass();
            if !finished && self.world.borrow().progress() == before {
                break;
            }
        }
    }

    fn done(&self) -> bool {
        self.tasks.iter().all(|t| !t.essential || t.fut.is_none()) && self.world.borrow().holds() == 0
    }

    /// Runs until every essential task completes or `horizon` is reached.
    pub fn run(&mut self, horizon: Step) -> RunStatus {
        self.poll_until_quiet();
        loop {
            let now = self.world.borrow().now();
            if self.done() {
                return RunStatus::Completed { at: now };
            }
            if now >= horizon {
                return RunStatus::Horizon { at: now };
            }
            self.world.borrow_mut().step();
            self.poll_until_quiet();
        }
    }

    /// Runs unconditionally until the clock reads `until`.
    pub fn run_until(&mut self, until: Step) {
        self.poll_until_quiet();
        while self.world.borrow().now() < until {
            self.world.borrow_mut().step();
            self.poll_until_quiet();
        }
    }
}

/// Keeps the run alive while an actor is mid-session.
pub struct HoldGuard {
    world: Rc<RefCell<World>>,
}

impl Drop for HoldGuard {
    fn drop(&mut self) {
        self.world.borrow_mut().add_hold(-1);
    }
}

/// An actor's handle on the world, bound to its own address.
#[derive(Clone)]
pub struct Ctx {
    world: Rc<RefCell<World>>,
    me: Address,
    actor: Rc<str>,
}

impl Ctx {
    pub fn me(&self) -> Address {
        self.me
    }

    pub fn actor(&self) -> &str {
        &self.actor
    }

    pub fn now(&self) -> Step {
        self.world.borrow().now()
    }

    pub fn with_world<R>(&self, f: impl FnOnce(&World) -> R) -> R {
        f(&self.world.borrow())
    }

    pub fn with_world_mut<R>(&self, f: impl FnOnce(&mut World) -> R) -> R {
        f(&mut self.world.borrow_mut())
    }

    /// Marks shared state as changed so other actors are re-polled this step.
    pub fn touch(&self) {
        self.world.borrow_mut().touch();
    }

    pub fn hold(&self) -> HoldGuard {
        self.world.borrow_mut().add_hold(1);
        HoldGuard { world: Rc::clone(&self.world) }
    }

    pub fn send(&self, packet: Packet) -> Result<u64, NetError> {
        self.world.borrow_mut().send(self.me, packet)
    }

    pub fn send_msg(&self, dst: Address, msg: Message) -> Result<u64, NetError> {
        self.send(msg.into_packet(self.me, dst))
    }

    pub fn record(&self, event: &str, detail: serde_json::Value) {
        self.world.borrow_mut().record(&self.actor, event, detail);
    }

    pub async fn sleep_until(&self, at: Step) {
        poll_fn(|_| if self.now() >= at { Poll::Ready(()) } else { Poll::Pending }).await
    }

    pub async fn sleep(&self, steps: Step) {
        let at = self.now() + steps;
        self.sleep_until(at).await
    }

    /// Waits for the first mailbox packet matching `pred`. Gives up once
    /// the clock passes `deadline` with nothing matching.
    pub async fn recv_until(
        &self,
        mut pred: impl FnMut(&Packet) -> bool,
        deadline: Step,
    ) -> Option<(Packet, Step)> {
        poll_fn(|_| {
            let mut w = self.world.borrow_mut();
            if let Some(hit) = w.take_matching(self.me, &mut pred) {
                return Poll::Ready(Some(hit));
            }
            if w.now() >= deadline {
                Poll::Ready(None)
            } else {
                Poll::Pending
            }
        })
        .await
    }

    pub async fn recv(&self, pred: impl FnMut(&Packet) -> bool, timeout: Step) -> Option<(Packet, Step)> {
        let deadline = self.now() + timeout;
        self.recv_until(pred, deadline).await
    }

    /// Waits until `cond` holds or the deadline passes; returns whether it held.
    pub async fn wait_for(&self, mut cond: impl FnMut(&World) -> bool, deadline: Step) -> bool {
        poll_fn(|_| {
            let w = self.world.borrow();
            if cond(&w) {
                Poll::Ready(true)
            } else if w.now() >= deadline {
                Poll::Ready(false)
            } else {
                Poll::Pending
            }
        })
        .await
    }

    /// DATA packets delivered to this actor's node with arrival in `[from, to)`.
    pub fn traffic_between(&self, from: Step, to: Step) -> Vec<(Packet, Step)> {
        self.with_world(|w| {
            w.node(self.me)
                .map(|n| {
                    n.traffic()
                        .iter()
                        .filter(|(_, at)| *at >= from && *at < to)
                        .cloned()
                        .collect()
                })
                .unwrap_or_default()
        })
    }

    /// Number of DATA packets delivered to this node so far.
    pub fn traffic_len(&self) -> usize {
        self.with_world(|w| w.node(self.me).map_or(0, |n| n.traffic().len()))
    }

    /// DATA packets from index `from` onwards.
    pub fn traffic_from(&self, from: usize) -> Vec<(Packet, Step)> {
        self.with_world(|w| w.node(self.me).map(|n| n.traffic()[from.min(n.traffic().len())..].to_vec()).unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureConfig;
    use crate::netsim::{Link, NodeKind, NodeSpec, Topology};

    fn two_nodes() -> World {
        World::new(&Topology {
            nodes: vec![
                NodeSpec { address: Address(0), kind: NodeKind::Server, ..Default::default() },
                NodeSpec { address: Address(1), kind: NodeKind::Client, ..Default::default() },
            ],
            links: vec![Link { a: Address(0), b: Address(1), latency: 2 }],
        })
        .unwrap()
    }

    #[test]
    fn request_reply_round_trip() {
        let mut sim = Sim::new(two_nodes());
        let a = sim.ctx(Address(0), "a");
        let b = sim.ctx(Address(1), "b");
        let got = Rc::new(RefCell::new(None));
        let got2 = Rc::clone(&got);
        sim.spawn("a", true, async move {
            a.send_msg(Address(1), Message::Verified).unwrap();
            let r = a.recv(|p| p.message == Some(Message::Verified), 10).await;
            *got2.borrow_mut() = r.map(|(_, at)| at);
        });
        sim.spawn("b", false, async move {
            if b.recv(|_| true, 100).await.is_some() {
                b.send_msg(Address(0), Message::Verified).unwrap();
            }
        });
        assert_eq!(sim.run(100), RunStatus::Completed { at: 4 });
        assert_eq!(*got.borrow(), Some(4));
    }

    #[test]
    fn recv_times_out_at_deadline() {
        let mut sim = Sim::new(two_nodes());
        let a = sim.ctx(Address(0), "a");
        let out = Rc::new(RefCell::new(None));
        let o = Rc::clone(&out);
        sim.spawn("a", true, async move {
            let r = a.recv(|_| true, 5).await;
            *o.borrow_mut() = Some((r.is_none(), a.now()));
        });
        sim.run(100);
        assert_eq!(*out.borrow(), Some((true, 5)));
    }

    #[test]
    fn horizon_stops_stuck_runs() {
        let mut sim = Sim::new(two_nodes());
        let a = sim.ctx(Address(0), "a");
        sim.spawn("a", true, async move { a.sleep(1_000).await });
        assert_eq!(sim.run(10), RunStatus::Horizon { at: 10 });
    }

    #[test]
    fn holds_extend_run() {
        let mut sim = Sim::new(two_nodes());
        let b = sim.ctx(Address(1), "b");
        sim.spawn("b", false, async move {
            let _h = b.hold();
            b.sleep(7).await;
        });
        assert_eq!(sim.run(100), RunStatus::Completed { at: 7 });
    }

    #[test]
    fn traffic_window_filters_by_arrival() {
        let mut sim = Sim::new(two_nodes());
        let b = sim.ctx(Address(1), "b");
        let a = sim.ctx(Address(0), "a");
        sim.spawn("b", true, async move {
            for _ in 0..3 {
                b.send(Packet::data(Address(1), Address(0), b"x".to_vec(), &FeatureConfig::default())).unwrap();
                b.sleep(3).await;
            }
        });
        sim.run_until(20);
        let t = a.traffic_between(0, 6);
        assert_eq!(t.iter().map(|(_, at)| *at).collect::<Vec<_>>(), vec![2, 5]);
    }
}
