//! The two-node loop: binary wire protocol, per-node tick functions, the JSON
//! mirror for the browser console, and an in-process harness for trials.

pub mod bench;
pub mod episode;
pub mod json;
pub mod local;
pub mod mailbox;
#[cfg(feature = "net")]
pub mod node;
pub mod remote;
pub mod ticker;
pub mod wire;

pub use bench::{run_bench, BenchReport};
pub use episode::{compare_modes, run_episode, run_trials, Agent, AgentKind, EpisodeEnv, EpisodeResult, ModeSummary};
pub use json::{from_json_line, to_json_line};
pub use local::{local_tick, SessionState};
pub use mailbox::Mailbox;
pub use remote::{remote_tick, RemoteConfig, RemoteState};
pub use ticker::{LatencyWindow, Ticker, LOOP_HZ};
pub use wire::{decode_msg, encode_msg, FrameDecoder, ProtocolError, WireMessage};
