//! Live interim-analysis sessions rebuilt from an event log.

use chrono::{DateTime, Utc};
use predstop_core::study::{permutation_study_with, PermutationSummary, PriorChoice};
use predstop_core::trial::{assemble_trajectory, FirstStop, LookValues, Observed};
use predstop_core::{
    Decision, Error as CoreError, LookRecord, ModelSpec, RandomStream, StopMode, TrajectoryRecord, TrialPlan, TrialRunner,
};
use serde::{Deserialize, Serialize};

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        at: DateTime<Utc>,
        id: String,
        seed: u64,
        plan: TrialPlan,
    },
    Observations {
        at: DateTime<Utc>,
        /// Index of the first value within the session.
        start: usize,
        values: Vec<f64>,
    },
    Analysis {
        at: DateTime<Utc>,
        record: LookRecord,
    },
    WhatIf {
        at: DateTime<Utc>,
        request: WhatIfRequest,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub value: f64,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Open,
    Stopped { decision: Decision, n_o: usize },
    Completed { decision: Decision },
}

/// Overrides evaluated against the current observations without touching
/// the session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    #[serde(default)]
    pub prior: Option<PriorChoice>,
    #[serde(default)]
    pub theta_t: Option<f64>,
    #[serde(default)]
    pub theta_l: Option<f64>,
    #[serde(default)]
    pub theta_u: Option<f64>,
    #[serde(default)]
    pub mode: Option<StopMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    /// Bad input; `index` points into the submitted batch.
    Validation { message: String, index: Option<usize> },
    Conflict(String),
    Internal(String),
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionError::Validation { message, index: Some(i) } => write!(f, "value {i}: {message}"),
            SessionError::Validation { message, .. } | SessionError::Conflict(message) | SessionError::Internal(message) => {
                f.write_str(message)
            }
        }
    }
}

impl From<CoreError> for SessionError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidObservation { index, reason } => SessionError::Validation {
                message: reason,
                index: Some(index),
            },
            CoreError::InvalidPlan(_)
            | CoreError::InvalidParameter(_)
            | CoreError::Domain(_)
            | CoreError::ImproperPosterior { .. }
            | CoreError::InsufficientSimulations { .. } => SessionError::Validation {
                message: e.to_string(),
                index: None,
            },
            other => SessionError::Internal(other.to_string()),
        }
    }
}

/// Seed used when a session is created without one.
pub fn derived_seed(id: &str, server_seed: Option<u64>) -> u64 {
    predstop_core::fingerprint(&(server_seed, id))
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub seed: u64,
    pub plan: TrialPlan,
    pub created_at: DateTime<Utc>,
    pub observations: Vec<Observation>,
    pub analyses: Vec<LookRecord>,
    runner: Option<TrialRunner>,
}

impl Session {
    pub fn create(id: String, seed: u64, plan: TrialPlan, at: DateTime<Utc>) -> Result<(Self, Event), SessionError> {
        if !valid_id(&id) {
            return Err(SessionError::Validation {
                message: "session ids use 1-64 characters from [A-Za-z0-9_-]".into(),
                index: None,
            });
        }
        let plan = plan.validated()?;
        let event = Event::Created {
            at,
            id: id.clone(),
            seed,
            plan: plan.clone(),
        };
        Ok((Self::from_parts(id, seed, plan, at), event))
    }

    fn from_parts(id: String, seed: u64, plan: TrialPlan, at: DateTime<Utc>) -> Self {
        Self {
            id,
            seed,
            plan,
            created_at: at,
            observations: Vec::new(),
            analyses: Vec::new(),
            runner: None,
        }
    }

    /// Rebuild from log events; the first must be `Created`.
    pub fn replay(events: &[Event]) -> Result<Self, SessionError> {
        let mut it = events.iter();
        let mut s = match it.next() {
            Some(Event::Created { at, id, seed, plan }) => Self::from_parts(id.clone(), *seed, plan.clone(), *at),
            _ => return Err(SessionError::Internal("log does not start with a created event".into())),
        };
        for e in it {
            s.apply(e)?;
        }
        Ok(s)
    }

    fn apply(&mut self, e: &Event) -> Result<(), SessionError> {
        match e {
            Event::Created { .. } => return Err(SessionError::Internal("duplicate created event".into())),
            Event::Observations { at, start, values } => {
                if *start != self.observations.len() || start + values.len() > self.plan.n {
                    return Err(SessionError::Internal(format!("observation event at {start} does not follow the log")));
                }
                self.observations.extend(values.iter().map(|&value| Observation { value, at: *at }));
            }
            Event::Analysis { record, .. } => {
                let expected = self.plan.all_looks().get(self.analyses.len()).copied();
                if expected != Some(record.n_o) || record.n_o > self.observations.len() {
                    return Err(SessionError::Internal(format!("analysis at n_o = {} does not follow the log", record.n_o)));
                }
                self.analyses.push(*record);
            }
            Event::WhatIf { .. } => {}
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        format!("{:016x}", self.plan.fingerprint())
    }

    pub fn stream(&self) -> RandomStream {
        RandomStream::new(self.seed)
    }

    pub fn runner(&mut self) -> Result<&TrialRunner, SessionError> {
        if self.runner.is_none() {
            self.runner = Some(TrialRunner::new(self.plan.clone(), &self.stream())?);
        }
        Ok(self.runner.as_ref().expect("runner just built"))
    }

    pub fn runner_ready(&self) -> bool {
        self.runner.is_some()
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.value).collect()
    }

    pub fn status(&self) -> Status {
        let t = self.trajectory();
        match (t.first_stop, t.terminal) {
            (Some(FirstStop { decision, n_o, .. }), _) => Status::Stopped { decision, n_o },
            (None, Some(decision)) => Status::Completed { decision },
            _ => Status::Open,
        }
    }

    /// Next scheduled look not yet analysed.
    pub fn next_look(&self) -> Option<usize> {
        self.plan.all_looks().get(self.analyses.len()).copied()
    }

    /// Decision to act on now; withheld once the session has stopped.
    pub fn recommendation(&self) -> Option<Decision> {
        match self.status() {
            Status::Open => self.analyses.last().map(|r| r.decision),
            Status::Completed { decision } => Some(decision),
            Status::Stopped { .. } => None,
        }
    }

    pub fn trajectory(&self) -> TrajectoryRecord {
        let values: Vec<LookValues> = self
            .analyses
            .iter()
            .map(|r| LookValues {
                n_o: r.n_o,
                pp: r.pp,
                pp_std_error: r.pp_std_error,
                cp: r.cp,
                statistic: r.statistic,
                critical: r.critical,
            })
            .collect();
        let p = &self.plan;
        assemble_trajectory(&values, p.n, p.theta_l, p.theta_u, p.mode, p.engine)
    }

    /// Append raw JSON values. Returns the events to persist, including an
    /// analysis for every look the new data reach.
    pub fn append(&mut self, raw: &[serde_json::Value], at: DateTime<Utc>) -> Result<Vec<Event>, SessionError> {
        let start = self.observations.len();
        if start + raw.len() > self.plan.n {
            return Err(SessionError::Conflict(format!(
                "plan allows {} observations; session has {start}, request adds {}",
                self.plan.n,
                raw.len()
            )));
        }
        let mut values = Vec::with_capacity(raw.len());
        for (i, v) in raw.iter().enumerate() {
            let x = v.as_f64().ok_or_else(|| SessionError::Validation {
                message: format!("not a number: {v}"),
                index: Some(i),
            })?;
            self.plan.model.check_observation(i, x)?;
            values.push(x);
        }
        let mut events = vec![Event::Observations { at, start, values }];
        self.apply(&events[0])?;
        events.extend(self.catch_up(at)?);
        Ok(events)
    }

    /// Analyse any reached looks that have no analysis yet.
    pub fn catch_up(&mut self, at: DateTime<Utc>) -> Result<Vec<Event>, SessionError> {
        let mut events = Vec::new();
        while let Some(look) = self.next_look().filter(|&k| k <= self.observations.len()) {
            let data = self.values();
            let stream = self.stream();
            let record = self.runner()?.evaluate_interim(&data[..look], look, &stream)?;
            let e = Event::Analysis { at, record };
            self.apply(&e)?;
            events.push(e);
        }
        Ok(events)
    }

    /// Engine values at the current observation count, off schedule. Not
    /// logged; repeated calls return the same numbers.
    pub fn current_values(&mut self) -> Result<Option<LookValues>, SessionError> {
        if self.observations.is_empty() {
            return Ok(None);
        }
        let mut observed = Observed::empty(&self.plan.model);
        self.observations.iter().for_each(|o| observed.push(o.value));
        let stream = self.stream();
        Ok(Some(self.runner()?.look_values(&observed, &stream)?))
    }

    pub fn whatif_plan(&self, req: &WhatIfRequest) -> Result<TrialPlan, SessionError> {
        let mut plan = self.plan.clone();
        if let Some(mode) = req.mode {
            plan = plan.with_mode(mode);
        }
        if let Some(prior) = req.prior {
            plan.model = match (prior, plan.model) {
                (PriorChoice::Nig(h), ModelSpec::Normal { limits, .. }) => ModelSpec::Normal { prior: h, limits },
                (PriorChoice::Beta(h), ModelSpec::Binomial { .. }) => ModelSpec::Binomial { prior: h },
                _ => {
                    return Err(SessionError::Validation {
                        message: "prior family does not match the session's model".into(),
                        index: None,
                    })
                }
            };
        }
        plan.theta_t = req.theta_t.unwrap_or(plan.theta_t);
        plan.theta_l = req.theta_l.unwrap_or(plan.theta_l);
        plan.theta_u = req.theta_u.unwrap_or(plan.theta_u);
        Ok(plan.validated()?)
    }

    /// Trajectory of the current data under the overridden plan, on the
    /// session's streams.
    pub fn whatif(&mut self, req: &WhatIfRequest) -> Result<(TrialPlan, TrajectoryRecord), SessionError> {
        let plan = self.whatif_plan(req)?;
        let spending = self.runner()?.spending().cloned();
        let runner = TrialRunner::with_spending(plan.clone(), spending)?;
        let t = runner.run_partial(&self.values(), &self.stream())?;
        Ok((plan, t))
    }

    pub fn permutations(&mut self, n_perms: usize, seed: Option<u64>) -> Result<PermutationJob, SessionError> {
        if n_perms == 0 {
            return Err(SessionError::Validation {
                message: "n_perms must be at least 1".into(),
                index: None,
            });
        }
        Ok(PermutationJob {
            runner: self.runner()?.clone(),
            data: self.values(),
            n_perms,
            stream: RandomStream::new(seed.unwrap_or(self.seed)),
        })
    }
}

/// Inputs of a background permutation study, detached from the session.
pub struct PermutationJob {
    runner: TrialRunner,
    data: Vec<f64>,
    n_perms: usize,
    stream: RandomStream,
}

impl PermutationJob {
    pub fn run(self) -> Result<PermutationSummary, SessionError> {
        Ok(permutation_study_with(&self.runner, &self.data, self.n_perms, &self.stream)?)
    }
}
