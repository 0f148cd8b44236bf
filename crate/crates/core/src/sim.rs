//! Fixed-step simulation of one trial: robot, tissue, force, workflow and
//! recording.
//!
//! Client messages are applied between ticks, in arrival order, and any
//! events they cause are stamped with the current time. Events produced by a
//! tick are stamped with the time at the end of that tick, which is also the
//! time of the sample the tick records.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::eye_sim::{
    closing_speed, infuse, is_intraluminal, step_tissue, ForceSynth, InfusionResult, Scenario, ScenarioError,
    TissueEvent, TissueState, Tremor,
};
use crate::geometry::RigidTransform;
use crate::oct::{auto_plane_at_tip, classify_tip_placement, render_bscan, BScan, ScanPlane, TipPlacement};
use crate::protocol::{ClientMessage, ErrorCode, PlaneRequest, StateFrame};
use crate::robot::{
    commanded_velocity, deviation_from_pose, fk_unchecked, jacobian_unchecked, resolve_command, Key, KeyAction, KeySet,
    RcmRegistration, RobotError,
};
use crate::robot::{JointRates, JointState};
use crate::telemetry::{LogHeader, Outcome, Sample, TrialLog};
use crate::workflow::{advance, gate_keys, EventKind, FlushOrder, Step, WorkflowEvent, WorkflowState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initial pose: {0}")]
    InitialPose(#[from] RobotError),
}

/// A message that was refused; the simulation state is unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub code: ErrorCode,
    pub message: String,
    /// Events emitted before the refusal (RCM registration on a first message).
    pub events: Vec<WorkflowEvent>,
}

impl Rejection {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Rejection {
            code,
            message: message.into(),
            events: Vec::new(),
        }
    }
}

/// Result of an accepted message.
#[derive(Debug, Clone, Default)]
pub struct Applied {
    pub events: Vec<WorkflowEvent>,
    pub bscan: Option<BScan>,
}

#[derive(Debug, Clone, Default)]
pub struct TickOutput {
    pub events: Vec<WorkflowEvent>,
    /// A state frame is due at the frame rate.
    pub frame_due: bool,
}

#[derive(Debug, Clone)]
struct PendingInfusion {
    end_tick: u64,
    tissue_after: TissueState,
}

/// Independent random streams derived from the trial seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_FORCE: u64 = 1;
const STREAM_TREMOR: u64 = 2;
const STREAM_ACTUATION: u64 = 3;
const STREAM_SPECKLE: u64 = 4;

pub struct Simulation {
    scenario: Scenario,
    cfg: SimConfig,
    seed: u64,
    dt: f64,
    tick: u64,
    q: JointState,
    keys: KeySet,
    /// Remaining pulse time, s.
    pulse: Option<f64>,
    tissue: TissueState,
    force: ForceSynth,
    tremor: Option<Tremor>,
    actuation: ChaCha8Rng,
    workflow: WorkflowState,
    rcm: RcmRegistration,
    plane: ScanPlane,
    /// A B-scan was taken during the current verification step.
    classified: bool,
    infusion: Option<PendingInfusion>,
    infusion_result: Option<InfusionResult>,
    log: TrialLog,
    last: Sample,
}

impl Simulation {
    pub fn new(scenario: Scenario, cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        scenario.validate()?;
        cfg.validate()?;
        let rcm_point = scenario.rcm_point();
        let tip = scenario.initial_tip();
        let q = cfg.robot.joints_for_tip(&tip, &(tip - rcm_point))?;
        let rcm = RcmRegistration {
            point: rcm_point,
            rot_stop_threshold_deg: cfg.rcm.rot_stop_threshold_deg,
            max_correction_rate: cfg.rcm.max_correction_rate,
        };
        let plane = target_plane(&scenario);
        let tremor = scenario
            .tremor_enabled
            .then(|| Tremor::new(scenario.tremor_amplitude_um, derive_seed(seed, STREAM_TREMOR)));
        let mut sim = Simulation {
            tissue: TissueState::new(&scenario),
            force: ForceSynth::new(cfg.force.clone(), derive_seed(seed, STREAM_FORCE)),
            actuation: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ACTUATION)),
            workflow: WorkflowState::new(&cfg.workflow),
            log: TrialLog::new(LogHeader::new(&scenario, &cfg, seed)),
            dt: cfg.dt_s(),
            tick: 0,
            q,
            keys: KeySet::empty(),
            pulse: None,
            tremor,
            rcm,
            plane,
            classified: false,
            infusion: None,
            infusion_result: None,
            last: Sample {
                t: 0.0,
                joints: [0.0; 5],
                tip: [0.0; 3],
                vel: [0.0; 3],
                force: [0.0; 3],
                rcm_deviation_um: 0.0,
                step: Step::Preparation,
            },
            scenario,
            cfg,
            seed,
        };
        let tip = sim.effective_tip(0.0);
        let report = crate::eye_sim::tip_tissue_query(&tip, &sim.scenario, &sim.tissue);
        let f = sim.force.sample(0.0, &sim.tissue, &report, &[]);
        sim.last = sim.make_sample(0.0, tip, Vector3::zeros(), f.force);
        sim.log.record_sample(sim.last).expect("first sample");
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn step(&self) -> Step {
        self.workflow.step
    }

    pub fn workflow(&self) -> &WorkflowState {
        &self.workflow
    }

    pub fn joints(&self) -> JointState {
        self.q
    }

    pub fn keys(&self) -> KeySet {
        self.keys
    }

    pub fn tissue(&self) -> &TissueState {
        &self.tissue
    }

    pub fn rcm(&self) -> &RcmRegistration {
        &self.rcm
    }

    pub fn current_plane(&self) -> &ScanPlane {
        &self.plane
    }

    pub fn last_sample(&self) -> &Sample {
        &self.last
    }

    pub fn infusion_result(&self) -> Option<&InfusionResult> {
        self.infusion_result.as_ref()
    }

    pub fn log(&self) -> &TrialLog {
        &self.log
    }

    pub fn into_log(self) -> TrialLog {
        self.log
    }

    pub fn finished(&self) -> bool {
        self.workflow.step.is_terminal()
    }

    /// Nothing is moving or pending: no keys held, no pulse, no infusion.
    pub fn quiescent(&self) -> bool {
        self.keys.is_empty() && self.pulse.is_none() && self.infusion.is_none()
    }

    /// Ground-truth placement of the tip.
    pub fn placement(&self) -> TipPlacement {
        classify_tip_placement(&self.scenario, &self.tissue, &self.tip(), &self.cfg.tissue)
    }

    pub fn tip(&self) -> Vector3<f64> {
        Vector3::from(self.last.tip)
    }

    /// Tip pose including any tremor offset.
    pub fn tip_pose(&self) -> RigidTransform {
        let pose = fk_unchecked(&self.q, &self.cfg.robot);
        RigidTransform::new(pose.rotation, self.tip())
    }

    pub fn state_frame(&self) -> StateFrame {
        let s = &self.last;
        StateFrame {
            t: s.t,
            joints: s.joints,
            tip: s.tip,
            tip_velocity: s.vel,
            force: s.force,
            rcm_deviation_um: s.rcm_deviation_um,
            step: s.step,
            attempt: self.workflow.attempt,
        }
    }

    /// Renders a B-scan of the current scene without touching the trial.
    pub fn render(&self, plane: &ScanPlane) -> BScan {
        render_bscan(
            &self.scenario,
            &self.tissue,
            Some(&self.tip_pose()),
            plane,
            &self.cfg.oct,
            derive_seed(self.seed, STREAM_SPECKLE),
            self.tick,
            self.time(),
        )
    }

    fn effective_tip(&self, t: f64) -> Vector3<f64> {
        let tip = fk_unchecked(&self.q, &self.cfg.robot).translation;
        match &self.tremor {
            Some(tr) => tip + tr.offset(t),
            None => tip,
        }
    }

    fn make_sample(&self, t: f64, tip: Vector3<f64>, vel: Vector3<f64>, force: Vector3<f64>) -> Sample {
        let pose = fk_unchecked(&self.q, &self.cfg.robot);
        Sample {
            t,
            joints: self.q.to_array(),
            tip: tip.into(),
            vel: vel.into(),
            force: force.into(),
            rcm_deviation_um: deviation_from_pose(&pose.rotation, &pose.translation, &self.rcm.point) * 1e3,
            step: self.workflow.step,
        }
    }

    fn emit(&mut self, event: WorkflowEvent, out: &mut Vec<WorkflowEvent>) {
        if event.kind.is_workflow() {
            let next = advance(&self.workflow, &event).expect("engine only emits legal events");
            let left_step = next.step != self.workflow.step;
            self.workflow = next;
            if left_step {
                self.keys = self.keys.intersection(gate_keys(self.workflow.step));
                self.classified = false;
            }
        }
        self.log.record_event(event).expect("events are time-ordered");
        out.push(event);
        if self.workflow.step.is_terminal() {
            self.pulse = None;
            self.infusion = None;
        }
    }

    fn intraluminal(&self) -> bool {
        is_intraluminal(&self.tip(), &self.scenario, &self.tissue, &self.cfg.tissue)
    }

    /// Applies one client message before the next tick.
    pub fn apply(&mut self, msg: &ClientMessage) -> Result<Applied, Rejection> {
        if self.finished() {
            if let ClientMessage::RequestBscan { plane } = msg {
                let plane = self.resolve_plane(plane.as_ref())?;
                return Ok(Applied {
                    events: Vec::new(),
                    bscan: Some(self.render(&plane)),
                });
            }
            return Err(Rejection::new(ErrorCode::TrialEnded, "the trial has ended"));
        }
        let t = self.time();
        let mut applied = Applied::default();
        let mut changed = false;
        if self.workflow.step == Step::Preparation {
            // The operator's first action registers the RCM at the sclerotomy.
            self.emit(WorkflowEvent::new(EventKind::RcmRegistered, t), &mut applied.events);
            changed = true;
        }
        let result = self.apply_inner(msg, t, &mut applied);
        changed |= *result.as_ref().unwrap_or(&false);
        if changed {
            self.log
                .record_input(self.tick, msg.clone())
                .expect("inputs are tick-ordered");
        }
        if self.finished() {
            self.finish();
        }
        // A refused first message still registers the RCM.
        result.map(|_| applied.clone()).map_err(|mut r| {
            r.events = applied.events;
            r
        })
    }

    /// Returns whether the state changed.
    fn apply_inner(&mut self, msg: &ClientMessage, t: f64, applied: &mut Applied) -> Result<bool, Rejection> {
        let step = self.workflow.step;
        let reject = |what: &str| {
            Rejection::new(
                ErrorCode::RejectedTransition,
                format!("{what} is not accepted in {step:?}"),
            )
        };
        match msg {
            ClientMessage::Key {
                key,
                action: KeyAction::Down,
            } => {
                if self.keys.contains(*key) {
                    return Ok(false);
                }
                if !gate_keys(step).contains(*key) {
                    return Err(Rejection::new(
                        ErrorCode::KeyGated,
                        format!("{key} is not permitted in {step:?}"),
                    ));
                }
                let next = self.keys.with(*key);
                commanded_velocity(next, &Vector3::z(), &self.cfg.controller)
                    .map_err(|e| Rejection::new(ErrorCode::KeyConflict, e.to_string()))?;
                self.keys = next;
                if *key == Key::P && step == Step::Puncture && self.pulse.is_none() {
                    self.pulse = Some(self.cfg.controller.puncture_pulse_ms * 1e-3);
                }
                Ok(true)
            }
            ClientMessage::Key {
                key,
                action: KeyAction::Up,
            } => {
                let held = self.keys.contains(*key);
                self.keys = self.keys.without(*key);
                Ok(held)
            }
            ClientMessage::RequestBscan { plane } => {
                let plane = self.resolve_plane(plane.as_ref())?;
                self.plane = plane;
                if step == Step::VerifyRetract {
                    self.classified = true;
                    if self.cfg.workflow.flush_order == FlushOrder::BeforeClassification
                        && !self.workflow.flush_confirmed
                        && self.intraluminal()
                    {
                        self.emit(WorkflowEvent::new(EventKind::FlushConfirmed, t), &mut applied.events);
                    }
                }
                applied.bscan = Some(self.render(&plane));
                Ok(true)
            }
            ClientMessage::ConfirmContact => {
                if step != Step::Navigation {
                    return Err(reject("confirm_contact"));
                }
                self.emit(WorkflowEvent::new(EventKind::ContactVerified, t), &mut applied.events);
                Ok(true)
            }
            ClientMessage::DeclareVerification { passed } => {
                if step != Step::VerifyRetract {
                    return Err(reject("declare_verification"));
                }
                let after = self.cfg.workflow.flush_order == FlushOrder::AfterClassification;
                if after && !self.classified {
                    return Err(Rejection::new(
                        ErrorCode::RejectedTransition,
                        "request a B-scan before declaring verification",
                    ));
                }
                let verdict = if self.cfg.session.assist {
                    self.placement() == TipPlacement::Intraluminal
                } else {
                    *passed
                };
                let flushed = if !verdict {
                    false
                } else if after {
                    // The test flush only enters the vessel from inside the lumen.
                    let ok = self.intraluminal();
                    if ok {
                        self.emit(WorkflowEvent::new(EventKind::FlushConfirmed, t), &mut applied.events);
                    }
                    ok
                } else {
                    self.workflow.flush_confirmed
                };
                let kind = if flushed {
                    EventKind::VerificationPassed
                } else {
                    EventKind::VerificationFailed
                };
                self.emit(WorkflowEvent::new(kind, t), &mut applied.events);
                Ok(true)
            }
            ClientMessage::BeginInfusion => {
                if step != Step::Infusion || self.infusion.is_some() {
                    return Err(reject("begin_infusion"));
                }
                let inf = &self.cfg.infusion;
                let (result, tissue_after) = infuse(
                    inf.pressure_mmhg,
                    inf.duration_s,
                    &self.tip(),
                    &self.scenario,
                    &self.tissue,
                    &self.cfg.tissue,
                    inf,
                )
                .map_err(|e| Rejection::new(ErrorCode::RejectedTransition, e.to_string()))?;
                if let Some(cause) = result.failure_cause {
                    self.emit(
                        WorkflowEvent::failed(EventKind::InfusionFailed, t, cause),
                        &mut applied.events,
                    );
                    self.infusion_result = Some(result);
                } else {
                    let ticks = (inf.duration_s / self.dt).round() as u64;
                    self.infusion = Some(PendingInfusion {
                        end_tick: self.tick + ticks.max(1),
                        tissue_after,
                    });
                    self.infusion_result = Some(result);
                }
                Ok(true)
            }
        }
    }

    fn resolve_plane(&self, req: Option<&PlaneRequest>) -> Result<ScanPlane, Rejection> {
        match req {
            None => Ok(self.plane),
            Some(PlaneRequest::Manual(p)) => Ok(*p),
            Some(PlaneRequest::Auto(_)) => {
                if !self.cfg.session.auto_plane {
                    return Err(Rejection::new(
                        ErrorCode::BadMessage,
                        "automatic scan planes are disabled",
                    ));
                }
                auto_plane_at_tip(&self.tip(), &self.scenario)
                    .map_err(|e| Rejection::new(ErrorCode::BadMessage, e.to_string()))
            }
        }
    }

    /// Integrates the joints over `h` seconds with key set `keys`; returns the
    /// tip displacement.
    ///
    /// The wrist angles are stepped with their rates and the prismatic joints
    /// are then solved so the tip moves by exactly the resolved linear
    /// velocity times `h`. Rotation happens about the tip, so the correction
    /// never drags it.
    fn integrate(&mut self, keys: KeySet, h: f64) -> Vector3<f64> {
        let model = &self.cfg.robot;
        let pose = fk_unchecked(&self.q, model);
        let lever = (pose.translation - self.rcm.point).norm();
        let rcm = (lever >= self.cfg.session.min_lever_mm).then_some(&self.rcm);
        let Ok(cmd) = resolve_command(keys, &self.q, rcm, model, &self.cfg.controller) else {
            return Vector3::zeros();
        };
        if cmd.rates == JointRates::zeros() {
            return Vector3::zeros();
        }
        let j = jacobian_unchecked(&self.q, model);
        let v = j.fixed_view::<3, 5>(0, 0) * cmd.rates;
        let target = pose.translation + v * h;
        let mut next = model
            .place_tip(
                self.q.theta1 + cmd.rates[3] * h,
                self.q.theta2 + cmd.rates[4] * h,
                &target,
            )
            .to_vector();
        if self.cfg.actuation_noise && model.actuation_noise_mm > 0.0 {
            let noise = Normal::new(0.0, model.actuation_noise_mm).expect("finite sigma");
            for i in 0..3 {
                next[i] += noise.sample(&mut self.actuation);
            }
        }
        self.q = model.limits.clamp(&JointState::from_vector(&next));
        fk_unchecked(&self.q, model).translation - pose.translation
    }

    /// Advances the trial by one fixed step.
    pub fn tick(&mut self) -> TickOutput {
        let mut out = TickOutput::default();
        if self.finished() {
            return out;
        }
        let dt = self.dt;
        let t0 = self.time();
        let t1 = (self.tick + 1) as f64 * dt;
        let free = self.keys.without(Key::P);
        let mut displacement = Vector3::zeros();
        let mut pulse_done = false;
        match self.pulse {
            Some(rem) if rem > dt + 1e-12 => {
                displacement += self.integrate(KeySet::of(&[Key::P]), dt);
                self.pulse = Some(rem - dt);
            }
            Some(rem) => {
                // The pulse ends inside this tick.
                displacement += self.integrate(KeySet::of(&[Key::P]), rem);
                if dt - rem > 1e-12 {
                    displacement += self.integrate(free, dt - rem);
                }
                self.pulse = None;
                pulse_done = true;
            }
            None => displacement += self.integrate(free, dt),
        }
        let mut vel = displacement / dt;
        if let Some(tr) = &self.tremor {
            vel += tr.velocity(t1);
        }
        let tip = self.effective_tip(t1);
        let approach = closing_speed(&tip, &vel, &self.scenario);
        let step = step_tissue(&self.tissue, &tip, dt, approach, &self.scenario, &self.cfg.tissue);
        self.tissue = step.tissue;
        let force = self.force.sample(t1, &self.tissue, &step.report, &step.events);
        self.tick += 1;
        self.last = self.make_sample(t1, tip, vel, force.force);
        for e in &step.events {
            let kind = match e {
                TissueEvent::PunctureOccurred => EventKind::PunctureOccurred,
                TissueEvent::WallSlip => EventKind::WallSlip,
            };
            self.emit(WorkflowEvent::new(kind, t1), &mut out.events);
        }
        if pulse_done && self.workflow.step == Step::Puncture {
            self.emit(WorkflowEvent::new(EventKind::PuncturePulseDone, t1), &mut out.events);
        }
        if let Some(p) = &self.infusion {
            if self.tick >= p.end_tick {
                self.tissue = p.tissue_after.clone();
                self.infusion = None;
                self.emit(WorkflowEvent::new(EventKind::InfusionComplete, t1), &mut out.events);
            }
        }
        if self.workflow.step == Step::Retraction {
            let shaft = fk_unchecked(&self.q, &self.cfg.robot).rotation.shaft_axis();
            if (tip - self.rcm.point).dot(&shaft) <= self.cfg.session.exit_margin_mm {
                self.emit(WorkflowEvent::new(EventKind::NeedleExited, t1), &mut out.events);
            }
        }
        // The step may have changed after the sample was built.
        self.last.step = self.workflow.step;
        self.log.record_sample(self.last).expect("sample times increase");
        if self.finished() {
            self.finish();
        }
        let rate = self.cfg.session.frame_rate_hz;
        out.frame_due = (t1 * rate).floor() > (t0 * rate).floor();
        out
    }

    fn finish(&mut self) {
        let w = &self.workflow;
        self.log.close(Outcome {
            success: w.step == Step::Done,
            failure_cause: w.failure_cause,
            final_step: w.step,
            end_time: self.time(),
        });
    }

    /// Closes the log without a terminal step (service shutdown).
    pub fn abort(&mut self) {
        if !self.log.is_closed() {
            self.finish();
        }
    }
}

/// Default manual plane: through the target on the vessel, normal to it.
pub fn target_plane(scenario: &Scenario) -> ScanPlane {
    let (wall, n) = scenario.target_wall_point();
    let axis = wall - n * scenario.vessel.outer_radius_mm();
    auto_plane_at_tip(&axis, scenario).expect("vessel axis lies inside the eye")
}
