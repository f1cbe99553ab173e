//! In-process closed-loop trials: remote and local ticks run in lockstep with
//! a scripted operator in place of a person.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::local::{local_tick, SessionState};
use super::remote::{remote_tick, RemoteConfig, RemoteState, SLEW_DEG_PER_S};
use super::ticker::LOOP_HZ;
use super::wire::{encode_msg, Command, WireMessage};
use crate::error::{Error, Result};
use crate::render::{PatternBank, RenderedFeedback};
use crate::sim::{mix_seed, ContactParams};
use crate::tactile::{
    wrap_line_angle, FeedbackMode, PatternMask, TiltClass, ELECTRODE_COLS, ELECTRODE_ROWS, MAX_GRIPPER_POS,
};
use crate::tiltnet::Model;

pub const MAX_EPISODE_TICKS: u32 = 600;
/// Holder tilts used for trials.
pub const TRIAL_TILTS: [i32; 7] = [-90, -60, -30, 0, 30, 60, 90];

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub tick: u32,
    pub feedback: &'a RenderedFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentCommand {
    pub target_deg: i16,
    pub gripper_pos: u8,
    pub grasp: bool,
}

pub trait Agent {
    fn name(&self) -> &'static str;
    /// Prepares for a new trial; the TCP starts at 0 degrees.
    fn reset(&mut self, seed: u64);
    /// Called once per tick with the latest feedback. A returned command
    /// reaches the remote side on the next tick.
    fn act(&mut self, obs: &Observation<'_>) -> Option<AgentCommand>;
}

/// Ticks to wait after commanding a rotation of `delta` degrees before the
/// feedback reflects the final orientation.
fn settle_ticks(delta: f64) -> u32 {
    let step = SLEW_DEG_PER_S / f64::from(LOOP_HZ);
    (delta.abs() / step).ceil() as u32 + 2
}

/// Aim bookkeeping shared by the scripted agents.
#[derive(Debug, Clone, Default)]
struct Aim {
    target: i16,
    wait: u32,
    corrections: u32,
}

impl Aim {
    fn rotate_by(&mut self, deg: i32) -> i16 {
        let next = wrap_line_angle(f64::from(self.target) + f64::from(deg)).round() as i16;
        self.wait = settle_ticks(f64::from(next - self.target));
        self.corrections += 1;
        self.target = next;
        next
    }
}

/// Reads the classifier's prediction directly and trusts it.
#[derive(Debug, Clone, Default)]
pub struct OracleAgent {
    aim: Aim,
    pub gripper_pos: u8,
    pub max_corrections: u32,
}

impl OracleAgent {
    pub fn new() -> Self {
        Self {
            aim: Aim::default(),
            gripper_pos: 20,
            max_corrections: 4,
        }
    }
}

impl Agent for OracleAgent {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn reset(&mut self, _seed: u64) {
        self.aim = Aim::default();
        self.aim.wait = 2;
    }

    fn act(&mut self, obs: &Observation<'_>) -> Option<AgentCommand> {
        let cmd = |target, grasp| AgentCommand {
            target_deg: target,
            gripper_pos: self.gripper_pos,
            grasp,
        };
        if obs.tick == 0 {
            return Some(cmd(0, false));
        }
        if self.aim.wait > 0 {
            self.aim.wait -= 1;
            return None;
        }
        match obs.feedback.predicted {
            Some(c) if c.degrees() != 0 && self.aim.corrections < self.max_corrections => {
                let t = self.aim.rotate_by(c.degrees());
                Some(cmd(t, false))
            }
            _ => Some(cmd(self.aim.target, true)),
        }
    }
}

/// Grasps straight away without looking.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlindAgent;

impl Agent for BlindAgent {
    fn name(&self) -> &'static str {
        "blind"
    }

    fn reset(&mut self, _seed: u64) {}

    fn act(&mut self, _obs: &Observation<'_>) -> Option<AgentCommand> {
        Some(AgentCommand {
            target_deg: 0,
            gripper_pos: 20,
            grasp: true,
        })
    }
}

/// Operator model that only has the electrode stimulation to go by. A
/// stimulated electrode is felt when its intensity plus Gaussian noise
/// clears a detection threshold, and a felt sensation is sometimes placed on
/// a neighbouring cell. Unstimulated electrodes are never felt. The felt
/// cells on both fingers are matched against the line patterns of every
/// tilt class and the best match (Jaccard overlap) is taken as the estimate.
/// With nothing felt it squeezes harder, and once fully closed it grasps
/// where it is.
#[derive(Debug, Clone)]
pub struct NoisyAgent {
    pub perception_sigma: f64,
    pub detection_threshold: f64,
    /// Chance that a felt electrode is attributed to a 4-neighbour.
    pub mislocalize: f64,
    pub max_corrections: u32,
    pub start_gripper_pos: u8,
    pub gripper_step: u8,
    aim: Aim,
    gripper_pos: u8,
    rng: ChaCha8Rng,
}

impl Default for NoisyAgent {
    fn default() -> Self {
        Self {
            perception_sigma: 24.0,
            detection_threshold: 32.0,
            mislocalize: 0.1,
            max_corrections: 2,
            start_gripper_pos: 15,
            gripper_step: 5,
            aim: Aim::default(),
            gripper_pos: 15,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

fn jaccard(a: &PatternMask, b: &PatternMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.cells.iter().flatten().zip(b.cells.iter().flatten()) {
        inter += usize::from(*x && *y);
        union += usize::from(*x || *y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

impl NoisyAgent {
    fn feel(&mut self, intensities: &[[u8; ELECTRODE_COLS]; ELECTRODE_ROWS]) -> PatternMask {
        let noise = Normal::new(0.0, self.perception_sigma).expect("sigma is finite");
        let mut cells = [[false; ELECTRODE_COLS]; ELECTRODE_ROWS];
        for (i, row) in intensities.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v == 0 || f64::from(v) + noise.sample(&mut self.rng) < self.detection_threshold {
                    continue;
                }
                let (mut r, mut c) = (i as i32, j as i32);
                if self.rng.random_bool(self.mislocalize.clamp(0.0, 1.0)) {
                    let (dr, dc) = [(-1, 0), (1, 0), (0, -1), (0, 1)][self.rng.random_range(0..4)];
                    r = (r + dr).clamp(0, ELECTRODE_ROWS as i32 - 1);
                    c = (c + dc).clamp(0, ELECTRODE_COLS as i32 - 1);
                }
                cells[r as usize][c as usize] = true;
            }
        }
        PatternMask { cells }
    }

    /// Best-matching class for what was felt; `None` when nothing was felt.
    pub fn estimate(&mut self, fb: &RenderedFeedback) -> Option<TiltClass> {
        let thumb = self.feel(&fb.left.intensities);
        let index = self.feel(&fb.right.intensities);
        if thumb.count() == 0 && index.count() == 0 {
            return None;
        }
        let bank = PatternBank::shared();
        let scores: Vec<f64> = TiltClass::all()
            .map(|c| jaccard(&index, bank.index_finger(c)) + jaccard(&thumb, bank.thumb(c)))
            .collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= best - 1e-12).collect();
        let pick = tied[self.rng.random_range(0..tied.len())];
        Some(TiltClass::from_index(pick).expect("index in range"))
    }
}

impl Agent for NoisyAgent {
    fn name(&self) -> &'static str {
        "noisy"
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.aim = Aim::default();
        self.gripper_pos = self.start_gripper_pos.min(MAX_GRIPPER_POS);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Option<AgentCommand> {
        if obs.tick == 0 {
            self.aim.wait = 2;
            return Some(AgentCommand {
                target_deg: 0,
                gripper_pos: self.gripper_pos,
                grasp: false,
            });
        }
        if self.aim.wait > 0 {
            self.aim.wait -= 1;
            return None;
        }
        let cmd = |s: &Self, grasp| AgentCommand {
            target_deg: s.aim.target,
            gripper_pos: s.gripper_pos,
            grasp,
        };
        match self.estimate(obs.feedback) {
            None if self.gripper_pos < MAX_GRIPPER_POS => {
                self.gripper_pos = (self.gripper_pos + self.gripper_step).min(MAX_GRIPPER_POS);
                self.aim.wait = 2;
                Some(cmd(self, false))
            }
            Some(c) if c.degrees() != 0 && self.aim.corrections < self.max_corrections => {
                self.aim.rotate_by(c.degrees());
                Some(cmd(self, false))
            }
            _ => Some(cmd(self, true)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Oracle,
    Blind,
    Noisy,
}

impl AgentKind {
    pub fn build(self) -> Box<dyn Agent> {
        match self {
            AgentKind::Oracle => Box::new(OracleAgent::new()),
            AgentKind::Blind => Box::new(BlindAgent),
            AgentKind::Noisy => Box::new(NoisyAgent::default()),
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(AgentKind::Oracle),
            "blind" => Ok(AgentKind::Blind),
            "noisy" => Ok(AgentKind::Noisy),
            _ => Err(Error::Config(format!("unknown agent {s:?} (oracle|blind|noisy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeEnv<'a> {
    pub mode: FeedbackMode,
    pub model: Option<&'a Model>,
    pub contact: ContactParams,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub holder_tilt_deg: f64,
    pub success: bool,
    pub grasped: bool,
    pub ticks_used: u32,
    pub relative_deg: f64,
}

pub fn run_episode(agent: &mut dyn Agent, holder_tilt_deg: f64, env: &EpisodeEnv<'_>) -> Result<EpisodeResult> {
    let mut remote = RemoteState::new(RemoteConfig {
        holder_tilt_deg,
        contact: env.contact,
        seed: env.seed,
        ..RemoteConfig::default()
    })?;
    let mut session = SessionState::new(env.mode);
    let period_us = 1_000_000 / u64::from(LOOP_HZ);
    let mut pending: Option<Command> = None;
    let mut cmd_seq = 0u32;
    for tick in 0..MAX_EPISODE_TICKS {
        let t_us = u64::from(tick) * period_us;
        let rt = remote_tick(&mut remote, pending.take().as_ref(), t_us)?;
        if let Some(g) = rt.grasp {
            return Ok(EpisodeResult {
                holder_tilt_deg,
                success: g.success,
                grasped: true,
                ticks_used: g.ticks_used,
                relative_deg: g.relative_deg,
            });
        }
        let frame = encode_msg(&WireMessage::SensorPair(rt.pair));
        let out = local_tick(&mut session, &frame, env.model, t_us)?;
        let obs = Observation {
            tick,
            feedback: &out.feedback,
        };
        if let Some(a) = agent.act(&obs) {
            pending = Some(Command {
                seq: cmd_seq,
                t_us,
                target_tilt_deg: a.target_deg,
                gripper_pos: a.gripper_pos.min(MAX_GRIPPER_POS),
                mode: env.mode,
                grasp: a.grasp,
            });
            cmd_seq += 1;
        }
    }
    Ok(EpisodeResult {
        holder_tilt_deg,
        success: false,
        grasped: false,
        ticks_used: MAX_EPISODE_TICKS,
        relative_deg: remote.relative_deg(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: FeedbackMode,
    pub agent: AgentKind,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_ticks: f64,
    /// (holder tilt, trials, successes)
    pub per_tilt: Vec<(i32, usize, usize)>,
}

/// Holder tilt for each trial, uniform over [`TRIAL_TILTS`].
pub fn trial_tilts(trials: usize, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7117));
    (0..trials)
        .map(|_| TRIAL_TILTS[rng.random_range(0..TRIAL_TILTS.len())])
        .collect()
}

/// Runs `trials` episodes. Tilts and per-trial seeds depend only on `seed`
/// and the trial index, so every mode sees the same trials.
pub fn run_trials(
    kind: AgentKind,
    mode: FeedbackMode,
    model: Option<&Model>,
    contact: &ContactParams,
    trials: usize,
    seed: u64,
) -> Result<ModeSummary> {
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let mut agent = kind.build();
    let mut per: Vec<(i32, usize, usize)> = TRIAL_TILTS.iter().map(|&t| (t, 0, 0)).collect();
    let (mut succ, mut ticks) = (0usize, 0u64);
    for (i, tilt) in trial_tilts(trials, seed).into_iter().enumerate() {
        agent.reset(mix_seed(seed ^ 0xA6E7, i as u64));
        let env = EpisodeEnv {
            mode,
            model,
            contact: *contact,
            seed: mix_seed(seed, i as u64),
        };
        let r = run_episode(agent.as_mut(), f64::from(tilt), &env)?;
        log::debug!("trial {i}: tilt {tilt} -> {r:?}");
        let slot = per.iter_mut().find(|p| p.0 == tilt).expect("tilt from table");
        slot.1 += 1;
        slot.2 += usize::from(r.success);
        succ += usize::from(r.success);
        ticks += u64::from(r.ticks_used);
    }
    Ok(ModeSummary {
        mode,
        agent: kind,
        trials,
        successes: succ,
        success_rate: succ as f64 / trials as f64,
        mean_ticks: ticks as f64 / trials as f64,
        per_tilt: per,
    })
}

/// Same trials under each feedback mode.
pub fn compare_modes(
    kind: AgentKind,
    model: Option<&Model>,
    contact: &ContactParams,
    trials: usize,
    seed: u64,
) -> Result<Vec<ModeSummary>> {
    FeedbackMode::ALL
        .into_iter()
        .map(|m| run_trials(kind, m, model, contact, trials, seed))
        .collect()
}
