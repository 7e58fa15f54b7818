//! The policy interface and the non-learning baselines.

mod matching;

pub use matching::{min_cost_matching, MatchingPolicy};

use crate::model::ProcessModel;
use crate::sim::{Assignment, ExecutionState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Assign(Assignment),
    Postpone,
}

/// What a policy sees at a decision point.
pub struct DecisionContext<'a> {
    pub state: &'a ExecutionState,
    pub model: &'a ProcessModel,
    possible: OnceCell<Vec<Assignment>>,
}

impl<'a> DecisionContext<'a> {
    pub fn new(state: &'a ExecutionState, model: &'a ProcessModel) -> Self {
        DecisionContext { state, model, possible: OnceCell::new() }
    }

    /// The possible assignments D in (resource, activity, instance age) order.
    pub fn possible(&self) -> &[Assignment] {
        self.possible.get_or_init(|| self.state.possible_assignments(self.model))
    }

    pub fn activity_of(&self, a: Assignment) -> usize {
        self.state.instance(a.instance).activity
    }

    /// Expected processing time of an assignment.
    pub fn mean(&self, a: Assignment) -> f64 {
        self.model.mean(a.resource, self.activity_of(a))
    }
}

pub trait Policy: Send {
    fn name(&self) -> String;

    /// Picks a member of `ctx.possible()` or postpones. Only called when
    /// at least one assignment is possible.
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut ChaCha8Rng) -> Decision;

    /// Called once at the start of every episode.
    fn reset(&mut self, _seed: u64) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut ChaCha8Rng) -> Decision {
        (**self).decide(ctx, rng)
    }
    fn reset(&mut self, seed: u64) {
        (**self).reset(seed)
    }
}

/// Shortest processing time: the possible assignment with the lowest mean.
/// Ties go to the earliest pair in D order.
#[derive(Debug, Clone, Copy, Default)]
pub struct SptPolicy;

impl Policy for SptPolicy {
    fn name(&self) -> String {
        "spt".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> Decision {
        let mut best: Option<(f64, Assignment)> = None;
        for &a in ctx.possible() {
            let m = ctx.mean(a);
            if best.is_none_or(|(b, _)| m < b) {
                best = Some((m, a));
            }
        }
        best.map_or(Decision::Postpone, |(_, a)| Decision::Assign(a))
    }
}

/// Serves the instance of the longest-waiting case that some idle resource
/// can take, on its fastest idle eligible resource.
#[derive(Debug, Clone, Copy, Default)]
pub struct FifoPolicy;

impl Policy for FifoPolicy {
    fn name(&self) -> String {
        "fifo".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> Decision {
        let state = ctx.state;
        let mut best: Option<((f64, usize, usize), Assignment)> = None;
        for &a in ctx.possible() {
            let inst = state.instance(a.instance);
            let key = (state.case(inst.case).arrival, inst.activity, inst.id);
            let better = match best {
                None => true,
                Some((bk, b)) => {
                    let ord = key.0.total_cmp(&bk.0).then(key.1.cmp(&bk.1)).then(key.2.cmp(&bk.2));
                    ord.is_lt() || (ord.is_eq() && ctx.mean(a) < ctx.mean(b))
                }
            };
            if better {
                best = Some((key, a));
            }
        }
        best.map_or(Decision::Postpone, |(_, a)| Decision::Assign(a))
    }
}

/// Uniform choice over D from the policy's own stream.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        let mut p = RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) };
        p.reset(seed);
        p
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> Decision {
        let d = ctx.possible();
        if d.is_empty() {
            return Decision::Postpone;
        }
        Decision::Assign(d[self.rng.random_range(0..d.len())])
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(5);
    }
}

/// A policy named on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    Spt,
    Fifo,
    Random,
    Matching,
    Svfa(String),
    Drl(String),
}

#[derive(Debug, thiserror::Error)]
#[error("unknown policy `{0}` (expected spt, fifo, random, matching, svfa:<weights> or drl:<checkpoint>)")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicySpec {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spt" => return Ok(PolicySpec::Spt),
            "fifo" => return Ok(PolicySpec::Fifo),
            "random" => return Ok(PolicySpec::Random),
            "matching" => return Ok(PolicySpec::Matching),
            _ => {}
        }
        match s.split_once(':') {
            Some(("svfa", path)) if !path.is_empty() => Ok(PolicySpec::Svfa(path.to_string())),
            Some(("drl", path)) if !path.is_empty() => Ok(PolicySpec::Drl(path.to_string())),
            _ => Err(UnknownPolicy(s.to_string())),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Spt => f.write_str("spt"),
            PolicySpec::Fifo => f.write_str("fifo"),
            PolicySpec::Random => f.write_str("random"),
            PolicySpec::Matching => f.write_str("matching"),
            PolicySpec::Svfa(p) => write!(f, "svfa:{p}"),
            PolicySpec::Drl(p) => write!(f, "drl:{p}"),
        }
    }
}

impl PolicySpec {
    /// Builds a baseline; learned policies need their artifact loaded and
    /// return `None` here.
    pub fn baseline(&self, seed: u64) -> Option<Box<dyn Policy>> {
        match self {
            PolicySpec::Spt => Some(Box::new(SptPolicy)),
            PolicySpec::Fifo => Some(Box::new(FifoPolicy)),
            PolicySpec::Random => Some(Box::new(RandomPolicy::new(seed))),
            PolicySpec::Matching => Some(Box::new(MatchingPolicy::default())),
            PolicySpec::Svfa(_) | PolicySpec::Drl(_) => None,
        }
    }
}
