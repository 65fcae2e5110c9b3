//! The per-search engine shared by offline episodes and the live service:
//! it turns a chosen action into a request, applies the user's feedback,
//! re-ranks, and keeps the histories the agent observes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, compute_proxies, Action, AgentError, Proxies, SearchState, StateShape, Transition};
use crate::catalog::{Catalog, ItemId};
use crate::config::SearchConfig;
use crate::interactions::{
    build_pivot_trees, question_to_constraint, InteractionError, InteractionRequest, PivotTree, RoundRobinState,
};
use crate::relevance::{percentile_rank, FeedbackConstraint, LikelihoodParams, Polarity, RelevanceError, RelevanceState};
use crate::simuser::SimulatedUser;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("search already finished")]
    Finished,
    #[error("no request is pending; fetch a request first")]
    NoPending,
    #[error("feedback kind `{got}` does not match pending request `{expected}`")]
    KindMismatch { expected: &'static str, got: &'static str },
    #[error("reference item {0} is not on the displayed page")]
    RefNotDisplayed(ItemId),
    #[error("malformed feedback: {0}")]
    Malformed(String),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Immutable per-catalog machinery shared by all sessions.
#[derive(Debug)]
pub struct SearchContext {
    catalog: Arc<Catalog>,
    trees: Vec<PivotTree>,
    params: LikelihoodParams,
    cfg: SearchConfig,
}

impl SearchContext {
    pub fn new(catalog: Arc<Catalog>, cfg: SearchConfig) -> Arc<Self> {
        let params = LikelihoodParams::from_catalog(
            &catalog,
            cfg.sigma_more_factor,
            cfg.sigma_eq_factor,
            cfg.tau_sketch_factor,
            cfg.floor,
        );
        let trees = build_pivot_trees(&catalog);
        Arc::new(Self { catalog, trees, params, cfg })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn trees(&self) -> &[PivotTree] {
        &self.trees
    }

    pub fn params(&self) -> &LikelihoodParams {
        &self.params
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    pub fn state_shape(&self) -> StateShape {
        StateShape { history: self.cfg.history, top_k: self.cfg.top_k, d: self.catalog.d() }
    }
}

/// User feedback for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feedback {
    FreeForm { attr: usize, ref_id: ItemId, polarity: Polarity },
    Answer { response: Polarity },
    /// Either an explicit embedding or an exemplar item standing in for it.
    Sketch {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exemplar_id: Option<ItemId>,
    },
}

impl Feedback {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Feedback::FreeForm { .. } => "free_form",
            Feedback::Answer { .. } => "answer",
            Feedback::Sketch { .. } => "sketch",
        }
    }
}

fn request_name(r: &InteractionRequest) -> &'static str {
    match r {
        InteractionRequest::FreeForm => "free_form",
        InteractionRequest::Question { .. } => "question",
        InteractionRequest::SketchRequest => "sketch_request",
    }
}

/// One completed iteration of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Action the policy chose.
    pub chosen: Action,
    /// Action actually carried out (a question falls back to free-form
    /// feedback once every attribute is exhausted).
    pub action: Action,
    pub request: InteractionRequest,
    pub feedback: Feedback,
    pub constraint: FeedbackConstraint,
    pub top_page: Vec<ItemId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentile_rank: Option<f64>,
}

#[derive(Debug, Clone)]
struct Pending {
    chosen: Action,
    action: Action,
    request: InteractionRequest,
}

#[derive(Debug, Clone)]
pub struct SearchSession {
    ctx: Arc<SearchContext>,
    relevance: RelevanceState,
    ordering: Vec<ItemId>,
    rr: RoundRobinState,
    pages: Vec<Vec<ItemId>>,
    actions: Vec<Action>,
    target: Option<ItemId>,
    proxies: Option<Proxies>,
    sketches: usize,
    pending: Option<Pending>,
    records: Vec<StepRecord>,
    found: bool,
}

impl SearchSession {
    /// Fresh search with a uniform ranking. With a known target the
    /// proxies are its feature-space neighbours; otherwise they follow the
    /// current top-ranked item.
    pub fn new(ctx: Arc<SearchContext>, target: Option<ItemId>) -> Result<Self, SessionError> {
        let n = ctx.catalog.len();
        let proxies = match target {
            Some(t) => {
                ctx.catalog.item(t).map_err(|_| RelevanceError::UnknownItem(t))?;
                Some(compute_proxies(&ctx.catalog, t, ctx.cfg.top_k)?)
            }
            None => None,
        };
        let ordering: Vec<ItemId> = (0..n).collect();
        let page = ordering[..ctx.cfg.page_size.min(n)].to_vec();
        let found = target.is_some_and(|t| page.contains(&t));
        let rr = RoundRobinState::new(&ctx.trees);
        Ok(Self {
            relevance: RelevanceState::new(n),
            ordering,
            rr,
            pages: vec![page],
            actions: Vec::new(),
            target,
            proxies,
            sketches: 0,
            pending: None,
            records: Vec::new(),
            found,
            ctx,
        })
    }

    pub fn context(&self) -> &Arc<SearchContext> {
        &self.ctx
    }

    pub fn catalog(&self) -> &Catalog {
        &self.ctx.catalog
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.actions.len()
    }

    pub fn target(&self) -> Option<ItemId> {
        self.target
    }

    pub fn found(&self) -> bool {
        self.found
    }

    pub fn is_finished(&self) -> bool {
        self.found || self.actions.len() >= self.ctx.cfg.max_iterations
    }

    pub fn ordering(&self) -> &[ItemId] {
        &self.ordering
    }

    pub fn top_page(&self) -> &[ItemId] {
        self.pages.last().expect("iteration-0 page exists")
    }

    /// Displayed pages, starting with the iteration-0 ranking.
    pub fn pages(&self) -> &[Vec<ItemId>] {
        &self.pages
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn relevance(&self) -> &RelevanceState {
        &self.relevance
    }

    pub fn round_robin(&self) -> &RoundRobinState {
        &self.rr
    }

    pub fn pending_request(&self) -> Option<&InteractionRequest> {
        self.pending.as_ref().map(|p| &p.request)
    }

    /// (chosen, carried out) actions of the pending request.
    pub fn pending_actions(&self) -> Option<(Action, Action)> {
        self.pending.as_ref().map(|p| (p.chosen, p.action))
    }

    pub fn percentile_rank(&self) -> Option<f64> {
        self.target.map(|t| percentile_rank(&self.ordering, t).expect("target is ranked"))
    }

    fn current_proxies(&self) -> Result<Proxies, SessionError> {
        match &self.proxies {
            Some(p) => Ok(p.clone()),
            None => Ok(compute_proxies(&self.ctx.catalog, self.ordering[0], self.ctx.cfg.top_k)?),
        }
    }

    pub fn encode_state(&self) -> Result<SearchState, SessionError> {
        let proxies = self.current_proxies()?;
        Ok(SearchState::encode(&self.ctx.catalog, self.ctx.state_shape(), &self.pages, &proxies, &self.actions))
    }

    /// Turns the policy's choice into a request and holds it until feedback
    /// arrives.
    pub fn plan(&mut self, chosen: Action) -> Result<InteractionRequest, SessionError> {
        if self.is_finished() {
            return Err(SessionError::Finished);
        }
        let (action, request) = match chosen {
            Action::FreeForm => (Action::FreeForm, InteractionRequest::FreeForm),
            Action::Sketch => (Action::Sketch, InteractionRequest::SketchRequest),
            Action::Question => match self.rr.next_question(&self.ctx.trees) {
                Some((attr, pivot_id)) => (Action::Question, InteractionRequest::Question { attr, pivot_id }),
                None => (Action::FreeForm, InteractionRequest::FreeForm),
            },
        };
        self.pending = Some(Pending { chosen, action, request: request.clone() });
        Ok(request)
    }

    fn constraint_for(&self, request: &InteractionRequest, feedback: &Feedback) -> Result<FeedbackConstraint, SessionError> {
        let catalog = &self.ctx.catalog;
        let mismatch = || SessionError::KindMismatch { expected: request_name(request), got: feedback.kind_name() };
        let constraint = match (request, feedback) {
            (InteractionRequest::FreeForm, Feedback::FreeForm { attr, ref_id, polarity }) => {
                if !self.top_page().contains(ref_id) {
                    return Err(SessionError::RefNotDisplayed(*ref_id));
                }
                FeedbackConstraint::AttributeCompare { attr: *attr, ref_id: *ref_id, polarity: *polarity }
            }
            (InteractionRequest::Question { attr, pivot_id }, Feedback::Answer { response }) => {
                question_to_constraint(*attr, *pivot_id, *response)
            }
            (InteractionRequest::SketchRequest, Feedback::Sketch { embedding, exemplar_id }) => {
                let embedding = match (embedding, exemplar_id) {
                    (Some(e), None) => e.clone(),
                    (None, Some(id)) => {
                        catalog.item(*id).map_err(|_| RelevanceError::UnknownItem(*id))?.features.clone()
                    }
                    _ => {
                        return Err(SessionError::Malformed(
                            "sketch feedback needs exactly one of `embedding` or `exemplar_id`".into(),
                        ))
                    }
                };
                FeedbackConstraint::Sketch { embedding }
            }
            _ => return Err(mismatch()),
        };
        constraint.validate(catalog)?;
        Ok(constraint)
    }

    /// Applies feedback to the pending request: updates relevance, re-ranks
    /// and advances the histories.
    pub fn apply(&mut self, feedback: Feedback) -> Result<&StepRecord, SessionError> {
        if self.is_finished() {
            return Err(SessionError::Finished);
        }
        let pending = self.pending.clone().ok_or(SessionError::NoPending)?;
        let constraint = self.constraint_for(&pending.request, &feedback)?;
        if let (InteractionRequest::Question { attr, .. }, Feedback::Answer { response }) = (&pending.request, &feedback) {
            self.rr.descend(&self.ctx.trees, *attr, *response)?;
        }
        self.relevance.update(constraint.clone(), &self.ctx.catalog, &self.ctx.params)?;
        self.pending = None;

        let k = self.ctx.cfg.top_k;
        let prev_top: Vec<ItemId> = self.top_page().iter().take(k).copied().collect();
        self.ordering = self.relevance.rank();
        let page = self.ordering[..self.ctx.cfg.page_size.min(self.ordering.len())].to_vec();
        let sketch_repeat = pending.action == Action::Sketch && self.sketches > 0;
        if pending.action == Action::Sketch {
            self.sketches += 1;
        }
        let reward = self.proxies.as_ref().map(|p| {
            let new_top = &page[..k.min(page.len())];
            agent::reward(&prev_top, new_top, &p.pos, &p.neg, &self.ctx.catalog, sketch_repeat)
        });
        if let Some(t) = self.target {
            self.found = page.contains(&t);
        }
        self.pages.push(page.clone());
        self.actions.push(pending.action);
        let percentile_rank = self.percentile_rank();
        self.records.push(StepRecord {
            iteration: self.actions.len(),
            chosen: pending.chosen,
            action: pending.action,
            request: pending.request,
            feedback,
            constraint,
            top_page: page,
            reward,
            percentile_rank,
        });
        Ok(self.records.last().expect("just pushed"))
    }
}

/// Anything that can answer the engine's requests.
pub trait FeedbackSource {
    fn respond(&mut self, request: &InteractionRequest, top_page: &[ItemId], catalog: &Catalog) -> Feedback;
}

impl FeedbackSource for SimulatedUser {
    fn respond(&mut self, request: &InteractionRequest, top_page: &[ItemId], catalog: &Catalog) -> Feedback {
        match request {
            InteractionRequest::FreeForm => {
                let (attr, ref_id, polarity) = self.choose_freeform(top_page, catalog);
                Feedback::FreeForm { attr, ref_id, polarity }
            }
            InteractionRequest::Question { attr, pivot_id } => {
                Feedback::Answer { response: self.answer_question(*attr, *pivot_id, catalog) }
            }
            InteractionRequest::SketchRequest => {
                Feedback::Sketch { embedding: Some(self.produce_sketch(catalog)), exemplar_id: None }
            }
        }
    }
}

/// Decides actions during an episode and optionally learns from them.
pub trait Controller {
    fn choose(&mut self, state: &SearchState, session: &SearchSession) -> Result<Action, SessionError>;

    /// Called after every step when [`Controller::wants_transitions`] is true.
    fn observe(&mut self, _transition: Transition) -> Result<(), SessionError> {
        Ok(())
    }

    fn wants_transitions(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub state: SearchState,
    pub record: StepRecord,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Target percentile rank before any feedback (None without a target).
    pub initial_percentile_rank: Option<f64>,
    pub success: bool,
}

impl Trajectory {
    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().map(|s| &s.record)
    }
}

/// Runs a search to completion: encode state, choose an action, obtain
/// feedback, update the ranking, until the target is displayed or the
/// iteration cap is reached.
pub fn run_episode<C: Controller + ?Sized, U: FeedbackSource + ?Sized>(
    controller: &mut C,
    mut session: SearchSession,
    user: &mut U,
) -> Result<Trajectory, SessionError> {
    let initial_percentile_rank = session.percentile_rank();
    let mut steps = Vec::new();
    let mut state = session.encode_state()?;
    while !session.is_finished() {
        let chosen = controller.choose(&state, &session)?;
        let request = session.plan(chosen)?;
        let feedback = user.respond(&request, session.top_page(), session.catalog());
        let record = session.apply(feedback)?.clone();
        let next_state = session.encode_state()?;
        if controller.wants_transitions() {
            controller.observe(Transition {
                state: state.clone(),
                next_state: next_state.clone(),
                action: chosen,
                reward: f64::from(record.reward.unwrap_or(0)),
                terminal: session.is_finished(),
            })?;
        }
        steps.push(TrajectoryStep { state, record });
        state = next_state;
    }
    Ok(Trajectory { steps, initial_percentile_rank, success: session.found() })
}
