//! All-to-all exchange between agents.
//!
//! Everything any vehicle learns about the others flows through an
//! [`ExchangeHub`] round: every agent contributes one payload under a shared
//! [`RoundTag`] and receives the full set, indexed by agent id. Rounds are
//! lockstep — one tag in flight at a time — which keeps the planner's phases
//! bulk-synchronous and its results independent of scheduling.
//!
//! Two entry points share the same accounting:
//!
//! * [`ExchangeHub::exchange_round`] — the whole round at once, used by the
//!   in-process driver (sequential or data-parallel phases).
//! * [`ExchangeHub::broadcast_gather`] — blocking rendezvous for one agent on
//!   its own thread, the shape a message-passing transport would take. It
//!   times out rather than hanging when a peer dies, reports duplicate or
//!   mismatched contributions, and is exercised with real threads in the
//!   tests.

use crate::model::Trajectory;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

pub type AgentId = usize;

/// Which planner phase a round belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Phase {
    /// Current trajectories, once per outer iteration.
    Trajectories,
    /// Dual copies `y`, once per inner sweep.
    Duals,
    /// Candidate rollouts for the shared line search, once per outer.
    Candidates,
}

/// Identifies one exchange round. Tags only need to be distinct between
/// consecutive rounds; the (outer, inner, phase) triple makes collisions a
/// programming error rather than a runtime hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoundTag {
    pub outer: u32,
    pub inner: u32,
    pub phase: Phase,
}

impl std::fmt::Display for RoundTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}[outer {}, inner {}]", self.phase, self.outer, self.inner)
    }
}

/// What agents send each other.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Trajectory(Trajectory),
    Duals(Vec<f64>),
    Candidates(Vec<Trajectory>),
}

impl Payload {
    /// Number of scalars, for traffic accounting.
    pub fn scalars(&self) -> usize {
        fn traj(t: &Trajectory) -> usize {
            t.states.len() * 4 + t.inputs.len() * 2
        }
        match self {
            Payload::Trajectory(t) => traj(t),
            Payload::Duals(d) => d.len(),
            Payload::Candidates(c) => c.iter().map(traj).sum(),
        }
    }

    pub fn as_duals(&self) -> &[f64] {
        match self {
            Payload::Duals(d) => d,
            other => panic!("expected dual payload, got {other:?}"),
        }
    }

    pub fn as_trajectory(&self) -> &Trajectory {
        match self {
            Payload::Trajectory(t) => t,
            other => panic!("expected trajectory payload, got {other:?}"),
        }
    }

    pub fn as_candidates(&self) -> &[Trajectory] {
        match self {
            Payload::Candidates(c) => c,
            other => panic!("expected candidate payload, got {other:?}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("round {tag}: agents {missing:?} did not arrive within {waited:?}")]
    Timeout { tag: String, missing: Vec<AgentId>, waited: Duration },
    #[error("round {tag}: agent {agent} contributed twice")]
    Duplicate { tag: String, agent: AgentId },
    #[error("agent {agent} opened round {got} while round {in_flight} is incomplete")]
    MixedTags { in_flight: String, got: String, agent: AgentId },
    #[error("round {tag}: got {got} payloads for {want} agents")]
    WrongCount { tag: String, got: usize, want: usize },
}

/// Traffic and waiting totals for one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseStats {
    pub rounds: usize,
    /// Delivered messages: every payload reaches the N-1 other agents.
    pub messages: usize,
    /// Scalars delivered (payload size times N-1 receivers, summed).
    pub scalars: usize,
    /// Total wall time agents spent blocked at the rendezvous, in seconds.
    /// Zero for whole-round exchanges, which never block.
    pub barrier_wait: f64,
}

/// Per-phase totals since the hub was created.
pub type ExchangeStats = BTreeMap<Phase, PhaseStats>;

struct Round {
    tag: Option<RoundTag>,
    slots: Vec<Option<Payload>>,
    arrived: usize,
    complete: bool,
    drained: usize,
}

/// Rendezvous point for N agents. See the module docs.
pub struct ExchangeHub {
    n_agents: usize,
    timeout: Duration,
    round: Mutex<Round>,
    changed: Condvar,
    stats: Mutex<ExchangeStats>,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

impl ExchangeHub {
    pub fn new(n_agents: usize) -> Self {
        Self::with_timeout(n_agents, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(n_agents: usize, timeout: Duration) -> Self {
        assert!(n_agents > 0);
        ExchangeHub {
            n_agents,
            timeout,
            round: Mutex::new(Round {
                tag: None,
                slots: vec![None; n_agents],
                arrived: 0,
                complete: false,
                drained: 0,
            }),
            changed: Condvar::new(),
            stats: Mutex::new(ExchangeStats::new()),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn stats(&self) -> ExchangeStats {
        self.stats.lock().unwrap().clone()
    }

    fn account(&self, phase: Phase, payloads: &[Payload], waited: f64) {
        let mut stats = self.stats.lock().unwrap();
        let entry = stats.entry(phase).or_default();
        entry.rounds += 1;
        entry.messages += self.n_agents * (self.n_agents - 1);
        entry.scalars +=
            payloads.iter().map(Payload::scalars).sum::<usize>() * (self.n_agents - 1);
        entry.barrier_wait += waited;
    }

    /// Runs a whole round in one call: `payloads[i]` is agent i's
    /// contribution, and the returned vector is what every agent receives.
    pub fn exchange_round(
        &self,
        tag: RoundTag,
        payloads: Vec<Payload>,
    ) -> Result<Vec<Payload>, NetError> {
        if payloads.len() != self.n_agents {
            return Err(NetError::WrongCount {
                tag: tag.to_string(),
                got: payloads.len(),
                want: self.n_agents,
            });
        }
        self.account(tag.phase, &payloads, 0.0);
        Ok(payloads)
    }

    /// Contributes agent `from`'s payload to round `tag` and blocks until all
    /// agents have contributed, then returns every payload indexed by agent.
    /// The result does not depend on arrival order.
    pub fn broadcast_gather(
        &self,
        from: AgentId,
        tag: RoundTag,
        payload: Payload,
    ) -> Result<Vec<Payload>, NetError> {
        assert!(from < self.n_agents, "agent id {from} out of range");
        let start = Instant::now();
        let mut round = self.round.lock().unwrap();

        // A completed round lingers until every participant has copied its
        // result out; a newcomer for the next round waits for that drain.
        loop {
            match round.tag {
                Some(t) if t != tag && !round.complete => {
                    return Err(NetError::MixedTags {
                        in_flight: t.to_string(),
                        got: tag.to_string(),
                        agent: from,
                    });
                }
                Some(t) if t != tag && round.complete => {
                    let (guard, timed_out) = self
                        .changed
                        .wait_timeout_while(round, self.timeout, |r| r.complete)
                        .unwrap();
                    round = guard;
                    if timed_out.timed_out() {
                        return Err(NetError::Timeout {
                            tag: tag.to_string(),
                            missing: vec![],
                            waited: start.elapsed(),
                        });
                    }
                }
                _ => break,
            }
        }

        if round.tag.is_none() {
            round.tag = Some(tag);
        }
        if round.slots[from].is_some() {
            return Err(NetError::Duplicate { tag: tag.to_string(), agent: from });
        }
        round.slots[from] = Some(payload);
        round.arrived += 1;

        if round.arrived == self.n_agents {
            round.complete = true;
            self.changed.notify_all();
        } else {
            let deadline = self.timeout;
            let (guard, timed_out) = self
                .changed
                .wait_timeout_while(round, deadline, |r| !r.complete)
                .unwrap();
            round = guard;
            if timed_out.timed_out() && !round.complete {
                let missing: Vec<AgentId> =
                    (0..self.n_agents).filter(|&a| round.slots[a].is_none()).collect();
                // Withdraw so a later retry does not see a stale contribution.
                round.slots[from] = None;
                round.arrived -= 1;
                if round.arrived == 0 {
                    round.tag = None;
                }
                return Err(NetError::Timeout {
                    tag: tag.to_string(),
                    missing,
                    waited: start.elapsed(),
                });
            }
        }

        let result: Vec<Payload> =
            round.slots.iter().map(|s| s.clone().expect("complete round")).collect();
        round.drained += 1;
        let last = round.drained == self.n_agents;
        if last {
            round.tag = None;
            round.slots.iter_mut().for_each(|s| *s = None);
            round.arrived = 0;
            round.complete = false;
            round.drained = 0;
            self.changed.notify_all();
        }
        drop(round);
        if last {
            // Account once per round, charging the last agent's wait; the
            // other waits are added below before returning.
            self.account(tag.phase, &result, start.elapsed().as_secs_f64());
        } else {
            let mut stats = self.stats.lock().unwrap();
            stats.entry(tag.phase).or_default().barrier_wait += start.elapsed().as_secs_f64();
        }
        Ok(result)
    }
}
