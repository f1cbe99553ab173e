//! Networked nodes: the remote simulator and the local renderer talk binary
//! frames over TCP; the local node also serves the JSON mirror over a
//! WebSocket for the browser console.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicU8, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tungstenite::Message;

use super::episode::TRIAL_TILTS;
use super::json::{from_json_line, to_json_line};
use super::local::{local_tick, SessionState, StageReport};
use super::mailbox::Mailbox;
use super::remote::{remote_tick, RemoteConfig, RemoteState};
use super::ticker::{Ticker, LOOP_HZ};
use super::wire::{
    decode_msg, encode_msg, Command, FrameDecoder, Heartbeat, SeqTracker, WireMessage, TAG_COMMAND, TAG_GRASP_RESULT,
    TAG_HEARTBEAT, TAG_SENSOR_PAIR,
};
use crate::error::Result;
use crate::tactile::FeedbackMode;
use crate::tiltnet::Model;

const MIRROR_QUEUE: usize = 64;

#[derive(Debug, Clone)]
pub struct RemoteNodeOptions {
    pub remote: RemoteConfig,
    /// Draw a new holder tilt after every grasp.
    pub shuffle_tilts: bool,
    pub max_ticks: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RemoteNodeStats {
    pub ticks: u64,
    pub commands: u64,
    pub commands_superseded: u64,
    pub grasps: u64,
    pub successes: u64,
    pub overruns: u64,
    pub protocol_errors: u64,
}

fn now_us(epoch: Instant) -> u64 {
    epoch.elapsed().as_micros() as u64
}

/// Reads frames until EOF or a stream error, handing each raw frame to `f`.
fn pump_frames(mut stream: TcpStream, errors: &AtomicU64, mut f: impl FnMut(u8, Vec<u8>)) {
    let mut dec = FrameDecoder::new();
    let mut buf = [0u8; 4096];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => {
                log::debug!("read ended: {e}");
                return;
            }
        };
        dec.push(&buf[..n]);
        while let Some(r) = dec.next_raw() {
            match r {
                Ok((tag, raw)) => f(tag, raw),
                Err(e) => {
                    errors.fetch_add(1, Ordering::Relaxed);
                    log::error!("{e}; dropping connection");
                    return;
                }
            }
        }
    }
}

/// Accepts one local node on `listener` and runs the simulated gripper at
/// the loop rate until the peer disconnects, `stop` is set or `max_ticks`
/// have elapsed.
pub fn serve_remote(listener: TcpListener, opts: RemoteNodeOptions, stop: Arc<AtomicBool>) -> Result<RemoteNodeStats> {
    let mut state = RemoteState::new(opts.remote.clone())?;
    log::info!("remote: waiting for local node on {}", listener.local_addr()?);
    let (mut stream, peer) = listener.accept()?;
    stream.set_nodelay(true)?;
    log::info!("remote: connected to {peer}");

    let commands: Arc<Mailbox<Command>> = Arc::new(Mailbox::new());
    let closed = Arc::new(AtomicBool::new(false));
    let errors = Arc::new(AtomicU64::new(0));
    let received = Arc::new(AtomicU64::new(0));
    let reader = {
        let (commands, closed, errors, received) = (commands.clone(), closed.clone(), errors.clone(), received.clone());
        let rs = stream.try_clone()?;
        thread::spawn(move || {
            let mut seq = SeqTracker::default();
            pump_frames(rs, &errors, |tag, raw| match (tag, decode_msg(&raw)) {
                (_, Err(e)) => {
                    errors.fetch_add(1, Ordering::Relaxed);
                    log::warn!("remote: {e}");
                }
                (TAG_COMMAND, Ok(WireMessage::Command(c))) => {
                    if let Err(e) = seq.check(c.seq) {
                        errors.fetch_add(1, Ordering::Relaxed);
                        log::warn!("remote: command dropped: {e}");
                        return;
                    }
                    received.fetch_add(1, Ordering::Relaxed);
                    commands.put_unless(c, |old| old.grasp);
                }
                (TAG_HEARTBEAT, _) => {}
                (_, Ok(m)) => log::warn!("remote: ignoring {} message", m.type_name()),
            });
            closed.store(true, Ordering::Relaxed);
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.remote.seed);
    let mut stats = RemoteNodeStats::default();
    let mut ticker = Ticker::new(opts.remote.tick_hz);
    let epoch = Instant::now();
    while !stop.load(Ordering::Relaxed) && !closed.load(Ordering::Relaxed) {
        if opts.max_ticks.is_some_and(|m| stats.ticks >= m) {
            break;
        }
        ticker.wait();
        let cmd = commands.take();
        let rt = remote_tick(&mut state, cmd.as_ref(), now_us(epoch))?;
        let mut out = encode_msg(&WireMessage::SensorPair(rt.pair));
        if let Some(g) = rt.grasp_message() {
            stats.grasps += 1;
            stats.successes += u64::from(g.success);
            log::info!(
                "remote: grasp {} at {:.1} deg after {} ticks",
                if g.success { "succeeded" } else { "failed" },
                f64::from(g.relative_centideg) / 100.0,
                g.ticks_used
            );
            out.extend(encode_msg(&WireMessage::GraspResult(g)));
            let next = if opts.shuffle_tilts {
                f64::from(TRIAL_TILTS[rng.random_range(0..TRIAL_TILTS.len())])
            } else {
                state.config().holder_tilt_deg
            };
            state.reset_episode(next);
        }
        if let Err(e) = stream.write_all(&out) {
            log::info!("remote: peer gone ({e})");
            break;
        }
        stats.ticks += 1;
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
    let _ = reader.join();
    stats.commands = received.load(Ordering::Relaxed);
    stats.commands_superseded = commands.superseded();
    stats.overruns = ticker.overruns();
    stats.protocol_errors = errors.load(Ordering::Relaxed);
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct LocalNodeOptions {
    pub mode: FeedbackMode,
    pub max_ticks: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalNodeStats {
    pub ticks: u64,
    pub frames: u64,
    pub frames_superseded: u64,
    pub faults: u64,
    pub overruns: u64,
    pub protocol_errors: u64,
    pub grasps: u64,
    pub successes: u64,
    pub mirror_dropped: u64,
    pub stages: StageReport,
}

/// Connects to a remote node, retrying for up to `patience`.
pub fn connect_with_retry(addr: &str, patience: Duration) -> Result<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() < patience => {
                log::debug!("connect {addr}: {e}; retrying");
                thread::sleep(Duration::from_millis(100));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

struct CommandLink {
    stream: Mutex<TcpStream>,
    seq: AtomicU32,
    epoch: Instant,
    mode: AtomicU8,
}

impl CommandLink {
    /// Re-stamps a console command with this node's sequence and clock and
    /// forwards it to the remote node.
    fn forward(&self, c: Command) {
        let c = Command {
            seq: self.seq.fetch_add(1, Ordering::Relaxed),
            t_us: now_us(self.epoch),
            ..c
        };
        self.mode.store(c.mode.code(), Ordering::Relaxed);
        let frame = encode_msg(&WireMessage::Command(c));
        if let Err(e) = self.stream.lock().unwrap_or_else(|e| e.into_inner()).write_all(&frame) {
            log::warn!("local: command not sent: {e}");
        }
    }
}

fn mirror_push(tx: &SyncSender<String>, dropped: &AtomicU64, line: String) {
    if let Err(TrySendError::Full(_)) = tx.try_send(line) {
        dropped.fetch_add(1, Ordering::Relaxed);
    }
}

/// Serves console clients one at a time: pushes queued JSON lines and feeds
/// incoming Command lines to `on_command`.
fn run_mirror(listener: TcpListener, rx: Receiver<String>, link: Arc<CommandLink>, stop: Arc<AtomicBool>) {
    if listener.set_nonblocking(true).is_err() {
        return;
    }
    while !stop.load(Ordering::Relaxed) {
        let stream = match listener.accept() {
            Ok((s, _)) => s,
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                while rx.try_recv().is_ok() {}
                thread::sleep(Duration::from_millis(20));
                continue;
            }
            Err(e) => {
                log::warn!("mirror: accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nonblocking(false);
        let mut ws = match tungstenite::accept(stream) {
            Ok(ws) => ws,
            Err(e) => {
                log::warn!("mirror: handshake failed: {e}");
                continue;
            }
        };
        let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)));
        log::info!("mirror: console connected");
        while rx.try_recv().is_ok() {}
        'client: while !stop.load(Ordering::Relaxed) {
            while let Ok(line) = rx.try_recv() {
                if ws.send(Message::text(line)).is_err() {
                    break 'client;
                }
            }
            match ws.read() {
                Ok(Message::Text(t)) => match from_json_line(t.as_str()) {
                    Ok(WireMessage::Command(c)) => link.forward(c),
                    Ok(m) => log::warn!("mirror: ignoring {} from console", m.type_name()),
                    Err(e) => log::warn!("mirror: bad console line: {e}"),
                },
                Ok(Message::Close(_)) => break,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) => {
                    log::info!("mirror: console gone ({e})");
                    break;
                }
            }
        }
    }
}

/// Runs the local renderer against a connected remote node. With a mirror
/// listener, every SensorPair, Electrode and GraspResult is also published
/// as a JSON line and console commands are forwarded to the remote node.
pub fn serve_local(
    stream: TcpStream,
    mirror: Option<TcpListener>,
    opts: LocalNodeOptions,
    model: Option<Model>,
    stop: Arc<AtomicBool>,
) -> Result<LocalNodeStats> {
    stream.set_nodelay(true)?;
    let epoch = Instant::now();
    let link = Arc::new(CommandLink {
        stream: Mutex::new(stream.try_clone()?),
        seq: AtomicU32::new(0),
        epoch,
        mode: AtomicU8::new(opts.mode.code()),
    });
    let frames: Arc<Mailbox<Vec<u8>>> = Arc::new(Mailbox::new());
    let closed = Arc::new(AtomicBool::new(false));
    let errors = Arc::new(AtomicU64::new(0));
    let grasps = Arc::new((AtomicU64::new(0), AtomicU64::new(0)));
    let dropped = Arc::new(AtomicU64::new(0));
    let (tx, rx) = mpsc::sync_channel::<String>(MIRROR_QUEUE);
    let mirror_on = mirror.is_some();

    let mirror_thread = mirror.map(|l| {
        let (link, stop) = (link.clone(), stop.clone());
        thread::spawn(move || run_mirror(l, rx, link, stop))
    });

    let reader = {
        let (frames, closed, errors, grasps, tx, dropped) =
            (frames.clone(), closed.clone(), errors.clone(), grasps.clone(), tx.clone(), dropped.clone());
        let rs = stream.try_clone()?;
        thread::spawn(move || {
            pump_frames(rs, &errors, |tag, raw| match tag {
                TAG_SENSOR_PAIR => frames.put(raw),
                TAG_GRASP_RESULT => {
                    if let Ok(m @ WireMessage::GraspResult(g)) = decode_msg(&raw) {
                        grasps.0.fetch_add(1, Ordering::Relaxed);
                        grasps.1.fetch_add(u64::from(g.success), Ordering::Relaxed);
                        if mirror_on {
                            mirror_push(&tx, &dropped, to_json_line(&m));
                        }
                    }
                }
                TAG_HEARTBEAT => {}
                other => log::warn!("local: ignoring message tag {other}"),
            });
            closed.store(true, Ordering::Relaxed);
        })
    };

    let mut session = SessionState::new(opts.mode);
    let mut ticker = Ticker::new(LOOP_HZ);
    let mut ticks = 0u64;
    while !stop.load(Ordering::Relaxed) && !closed.load(Ordering::Relaxed) {
        if opts.max_ticks.is_some_and(|m| ticks >= m) {
            break;
        }
        ticker.wait();
        ticks += 1;
        session.mode = FeedbackMode::from_code(link.mode.load(Ordering::Relaxed)).unwrap_or(opts.mode);
        let Some(raw) = frames.take() else {
            if mirror_on && ticks.is_multiple_of(u64::from(LOOP_HZ)) {
                let hb = WireMessage::Heartbeat(Heartbeat {
                    seq: ticks as u32,
                    t_us: now_us(epoch),
                });
                mirror_push(&tx, &dropped, to_json_line(&hb));
            }
            continue;
        };
        match local_tick(&mut session, &raw, model.as_ref(), now_us(epoch)) {
            Ok(out) => {
                if mirror_on {
                    if let Ok(pair) = decode_msg(&raw) {
                        mirror_push(&tx, &dropped, to_json_line(&pair));
                    }
                    mirror_push(&tx, &dropped, to_json_line(&WireMessage::Electrode(out.electrode)));
                }
            }
            Err(e) => {
                errors.fetch_add(1, Ordering::Relaxed);
                log::warn!("local: frame dropped: {e}");
            }
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
    let _ = reader.join();
    drop(tx);
    if let Some(h) = mirror_thread {
        stop.store(true, Ordering::Relaxed);
        let _ = h.join();
    }
    Ok(LocalNodeStats {
        ticks,
        frames: session.frames,
        frames_superseded: frames.superseded(),
        faults: session.faults,
        overruns: ticker.overruns(),
        protocol_errors: errors.load(Ordering::Relaxed),
        grasps: grasps.0.load(Ordering::Relaxed),
        successes: grasps.1.load(Ordering::Relaxed),
        mirror_dropped: dropped.load(Ordering::Relaxed),
        stages: session.stats.report(),
    })
}

/// Sends one command to a remote node over an existing connection.
pub fn send_command(stream: &mut TcpStream, c: &Command) -> Result<()> {
    stream.write_all(&encode_msg(&WireMessage::Command(*c)))?;
    Ok(())
}
