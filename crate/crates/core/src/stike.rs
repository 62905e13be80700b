//! STIKE one-way QSDC session.
//!
//! The sender one-time-pads each frame with preshared key, interleaves
//! random check bits at PRF-chosen positions and sends the frame over the
//! modeled link. The receiver estimates QBER on the disclosed check bits.
//! Frames at or below the threshold are decrypted and feed key distillation;
//! a frame above it aborts the session for good.
//!
//! Key accounting invariant: `initial + distilled == available + consumed`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::link::{self, ChannelParams, LinkError};

/// Bit error rate an intercept-resend attacker induces on the states they
/// touch (wrong basis half the time, then a coin flip).
pub const INTERCEPT_RESEND_ERROR: f64 = 0.25;

pub const DEFAULT_THRESHOLD: f64 = 0.12;

#[derive(Debug, Error)]
pub enum StikeError {
    #[error("key pool exhausted: need {needed} bits, {available} available")]
    KeyExhausted {
        needed: usize,
        available: usize,
        /// Session parked before the frame that could not be encrypted.
        session: Option<Box<Session>>,
    },
    #[error("protocol state error: {0}")]
    ProtocolState(String),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// A contiguous slice of key material, removed from the pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySegment {
    pub offset: usize,
    pub bits: Vec<bool>,
}

/// Append-only store of shared secret bits with a consumption cursor.
#[derive(Debug, Clone)]
pub struct KeyPool {
    material: Vec<bool>,
    cursor: usize,
    initial: u64,
    distilled: u64,
    segments: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLedger {
    pub initial: u64,
    pub consumed: u64,
    pub distilled: u64,
    pub available: u64,
}

impl KeyPool {
    pub fn new(preshared: Vec<bool>) -> Self {
        Self {
            initial: preshared.len() as u64,
            material: preshared,
            cursor: 0,
            distilled: 0,
            segments: Vec::new(),
        }
    }

    pub fn random(bits: usize, rng: &mut impl Rng) -> Self {
        Self::new((0..bits).map(|_| rng.random()).collect())
    }

    pub fn available(&self) -> usize {
        self.material.len() - self.cursor
    }

    pub fn ledger(&self) -> PoolLedger {
        PoolLedger {
            initial: self.initial,
            consumed: self.cursor as u64,
            distilled: self.distilled,
            available: self.available() as u64,
        }
    }

    /// `initial + distilled == available + consumed`
    pub fn is_balanced(&self) -> bool {
        let l = self.ledger();
        l.initial + l.distilled == l.available + l.consumed
    }

    /// True when every consumed segment starts where the previous one ended.
    pub fn segments_disjoint(&self) -> bool {
        let mut end = 0;
        for &(offset, len) in &self.segments {
            if offset < end || len == 0 {
                return false;
            }
            end = offset + len;
        }
        end <= self.cursor
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    /// Removes `len` bits from the front of the pool.
    pub fn take(&mut self, len: usize) -> Result<KeySegment, StikeError> {
        if len > self.available() {
            return Err(StikeError::KeyExhausted {
                needed: len,
                available: self.available(),
                session: None,
            });
        }
        let offset = self.cursor;
        let bits = self.material[offset..offset + len].to_vec();
        self.cursor += len;
        if len > 0 {
            self.segments.push((offset, len));
        }
        Ok(KeySegment { offset, bits })
    }

    /// Adds freshly distilled key.
    pub fn credit_distilled(&mut self, bits: impl IntoIterator<Item = bool>) {
        let before = self.material.len();
        self.material.extend(bits);
        self.distilled += (self.material.len() - before) as u64;
    }

    /// Adds out-of-band preshared key (counted as initial material).
    pub fn replenish(&mut self, bits: impl IntoIterator<Item = bool>) {
        let before = self.material.len();
        self.material.extend(bits);
        self.initial += (self.material.len() - before) as u64;
    }
}

fn xor(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

/// One-time-pad encryption; consumes exactly `payload.len()` key bits.
pub fn otp_encrypt(
    payload: &[bool],
    pool: &mut KeyPool,
) -> Result<(Vec<bool>, KeySegment), StikeError> {
    let key = pool.take(payload.len())?;
    Ok((xor(payload, &key.bits), key))
}

pub fn otp_decrypt(ciphertext: &[bool], key: &KeySegment) -> Vec<bool> {
    xor(ciphertext, &key.bits)
}

/// Payload bits with check bits interleaved at `check_positions`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub sequence_no: u64,
    pub payload: Vec<bool>,
    pub check_bits: Vec<bool>,
    /// Sorted, unique positions in the interleaved layout.
    pub check_positions: Vec<usize>,
    pub encrypted: bool,
}

impl Frame {
    pub fn new(
        sequence_no: u64,
        payload: Vec<bool>,
        check_bits: Vec<bool>,
        check_positions: Vec<usize>,
        encrypted: bool,
    ) -> Result<Self, StikeError> {
        let total = payload.len() + check_bits.len();
        if check_positions.len() != check_bits.len() {
            return Err(StikeError::ProtocolState(
                "check position count differs from check bit count".into(),
            ));
        }
        if check_positions.windows(2).any(|w| w[0] >= w[1])
            || check_positions.last().is_some_and(|&p| p >= total)
        {
            return Err(StikeError::ProtocolState(
                "check positions must be strictly increasing and inside the frame".into(),
            ));
        }
        Ok(Self {
            sequence_no,
            payload,
            check_bits,
            check_positions,
            encrypted,
        })
    }

    pub fn len(&self) -> usize {
        self.payload.len() + self.check_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bits in transmission order.
    pub fn layout(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.len());
        let mut payload = self.payload.iter();
        let mut checks = self.check_positions.iter().zip(&self.check_bits).peekable();
        for pos in 0..self.len() {
            match checks.peek() {
                Some((&p, &b)) if p == pos => {
                    out.push(b);
                    checks.next();
                }
                _ => out.push(*payload.next().expect("payload shorter than layout")),
            }
        }
        out
    }

    /// Inverse of [`Frame::layout`] for the same check positions.
    fn with_layout(&self, bits: &[bool]) -> Frame {
        let mut payload = Vec::with_capacity(self.payload.len());
        let mut check_bits = Vec::with_capacity(self.check_bits.len());
        let mut next_check = self.check_positions.iter().peekable();
        for (pos, &b) in bits.iter().enumerate() {
            if next_check.peek() == Some(&&pos) {
                check_bits.push(b);
                next_check.next();
            } else {
                payload.push(b);
            }
        }
        Frame {
            sequence_no: self.sequence_no,
            payload,
            check_bits,
            check_positions: self.check_positions.clone(),
            encrypted: self.encrypted,
        }
    }
}

/// Intercept-resend attacker acting on a fraction of the states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveModel {
    pub intercept_fraction: f64,
}

impl EveModel {
    pub const NONE: EveModel = EveModel {
        intercept_fraction: 0.0,
    };

    pub fn full() -> Self {
        Self {
            intercept_fraction: 1.0,
        }
    }
}

/// Expected bit error rate when a fraction `f` of states is intercepted on a
/// link with native error rate `q_link`.
pub fn effective_qber(q_link: f64, f: f64) -> f64 {
    let intercepted =
        q_link * (1.0 - INTERCEPT_RESEND_ERROR) + (1.0 - q_link) * INTERCEPT_RESEND_ERROR;
    q_link * (1.0 - f) + f * intercepted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Authenticated,
    Transmitting,
    Aborted,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub qber_estimates: Vec<f64>,
    pub threshold: f64,
}

impl SessionState {
    pub fn new(threshold: f64) -> Self {
        Self {
            phase: Phase::Idle,
            qber_estimates: Vec::new(),
            threshold,
        }
    }

    fn transition(&mut self, from: Phase, to: Phase) -> Result<(), StikeError> {
        if self.phase != from {
            return Err(StikeError::ProtocolState(format!(
                "cannot move to {to:?} from {:?}",
                self.phase
            )));
        }
        self.phase = to;
        Ok(())
    }

    /// Pre-authentication gate; the channel's authentication itself is not
    /// modeled, only its outcome.
    pub fn authenticate(&mut self, authenticated: bool) -> Result<(), StikeError> {
        if !authenticated {
            return Err(StikeError::ProtocolState(
                "channel is not pre-authenticated".into(),
            ));
        }
        self.transition(Phase::Idle, Phase::Authenticated)
    }

    pub fn begin(&mut self) -> Result<(), StikeError> {
        self.transition(Phase::Authenticated, Phase::Transmitting)
    }

    pub fn complete(&mut self) -> Result<(), StikeError> {
        self.transition(Phase::Transmitting, Phase::Completed)
    }
}

/// Sends `frame` through the link. Every bit flips independently with the
/// link QBER, raised to the intercept-resend rate on states Eve touched.
/// Returns the received frame and the QBER measured on its check bits.
pub fn transmit_frame(
    state: &SessionState,
    frame: &Frame,
    link: &ChannelParams,
    eve: EveModel,
    seed: u64,
) -> Result<(Frame, f64), StikeError> {
    if state.phase != Phase::Transmitting {
        return Err(StikeError::ProtocolState(format!(
            "cannot transmit in phase {:?}",
            state.phase
        )));
    }
    let q_link = link::qber_model(link)?;
    let q_intercepted = effective_qber(q_link, 1.0);
    let f = eve.intercept_fraction;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = frame.layout();
    for bit in bits.iter_mut() {
        let q = if f > 0.0 && rng.random_bool(f) {
            q_intercepted
        } else {
            q_link
        };
        if rng.random_bool(q) {
            *bit = !*bit;
        }
    }
    let received = frame.with_layout(&bits);
    let qber_hat = if frame.check_bits.is_empty() {
        0.0
    } else {
        let errors = frame
            .check_bits
            .iter()
            .zip(&received.check_bits)
            .filter(|(a, b)| a != b)
            .count();
        errors as f64 / frame.check_bits.len() as f64
    };
    Ok((received, qber_hat))
}

/// Records `qber_hat` and aborts when it exceeds the threshold.
pub fn qber_gate(mut state: SessionState, qber_hat: f64) -> SessionState {
    if state.phase != Phase::Transmitting {
        return state;
    }
    state.qber_estimates.push(qber_hat);
    if qber_hat > state.threshold {
        state.phase = Phase::Aborted;
    }
    state
}

/// `floor(payload_bits * max(0, 1 - 2 h(qber)))`
pub fn distillation_yield(payload_bits: usize, qber_hat: f64) -> u64 {
    let h = link::binary_entropy(qber_hat.clamp(0.0, 1.0)).unwrap_or(1.0);
    let factor = (1.0 - 2.0 * h).max(0.0);
    (payload_bits as f64 * factor).floor() as u64
}

/// Key gained from an accepted frame at the latest QBER estimate. Nothing is
/// distilled outside the transmitting phase.
pub fn distill_key(state: &SessionState, frame: &Frame) -> u64 {
    match (state.phase, state.qber_estimates.last()) {
        (Phase::Transmitting, Some(&q)) => distillation_yield(frame.payload.len(), q),
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub threshold: f64,
    pub eve_fraction: f64,
    /// Fraction of each frame's bits disclosed for QBER estimation.
    pub check_fraction: f64,
    pub min_check_bits: usize,
    pub frame_payload_bits: usize,
    pub initial_key_bits: usize,
    /// Outcome of channel pre-authentication.
    pub authenticated: bool,
    /// Bit error rate left after FEC on accepted frames.
    pub residual_ber: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            eve_fraction: 0.0,
            check_fraction: 1.0 / 16.0,
            min_check_bits: 4096,
            frame_payload_bits: 61_440,
            initial_key_bits: 1 << 20,
            authenticated: true,
            residual_ber: 0.0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), StikeError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(StikeError::Config(format!(
                    "{name} = {p} is not a probability"
                )))
            }
        };
        prob("threshold", self.threshold)?;
        prob("eve_fraction", self.eve_fraction)?;
        prob("residual_ber", self.residual_ber)?;
        if !(self.check_fraction > 0.0 && self.check_fraction < 1.0) {
            return Err(StikeError::Config(
                "check_fraction must be in (0, 1)".into(),
            ));
        }
        if self.frame_payload_bits == 0 {
            return Err(StikeError::Config(
                "frame_payload_bits must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Check bits accompanying a payload chunk of `payload_len` bits.
    pub fn check_bits_for(&self, payload_len: usize) -> usize {
        let proportional = (payload_len as f64 * self.check_fraction / (1.0 - self.check_fraction))
            .ceil() as usize;
        proportional.max(self.min_check_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub seq: u64,
    pub qber_hat: f64,
    pub accepted: bool,
    pub distilled_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub phase: Phase,
    pub frames: Vec<FrameRecord>,
    pub pool: PoolLedger,
    /// SHA-256 of the decrypted payload, present once the session completes.
    pub payload_sha256: Option<String>,
    #[serde(skip)]
    pub payload: Option<Vec<bool>>,
}

/// Packs bits LSB-first into bytes.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i))
        })
        .collect()
}

pub fn bits_sha256(bits: &[bool]) -> String {
    let digest = Sha256::digest(pack_bits(bits));
    hex::encode(digest)
}

// RNG stream tags, combined with the frame sequence number
const STREAM_KEY: u64 = 0;
const STREAM_CHECK: u64 = 1;
const STREAM_CHANNEL: u64 = 2;
const STREAM_DISTILL: u64 = 3;
const STREAM_RESIDUAL: u64 = 4;

fn stream_rng(seed: u64, tag: u64, seq: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | seq);
    rng
}

/// What a single [`Session::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Frame(FrameRecord),
    Completed,
    Aborted,
    /// Not enough key for the next frame; the session is unchanged.
    Paused {
        needed: usize,
        available: usize,
    },
}

/// A resumable STIKE session over one payload.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    link: ChannelParams,
    seed: u64,
    state: SessionState,
    pool: KeyPool,
    payload: Vec<bool>,
    delivered: Vec<bool>,
    next_offset: usize,
    next_seq: u64,
    frames: Vec<FrameRecord>,
}

impl Session {
    pub fn new(
        payload: Vec<bool>,
        config: SessionConfig,
        link: ChannelParams,
        seed: u64,
    ) -> Result<Self, StikeError> {
        config.validate()?;
        link.validate()?;
        let mut state = SessionState::new(config.threshold);
        state.authenticate(config.authenticated)?;
        state.begin()?;
        let pool = KeyPool::random(
            config.initial_key_bits,
            &mut stream_rng(seed, STREAM_KEY, 0),
        );
        Ok(Self {
            config,
            link,
            seed,
            state,
            pool,
            delivered: Vec::with_capacity(payload.len()),
            payload,
            next_offset: 0,
            next_seq: 0,
            frames: Vec::new(),
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn pool(&self) -> &KeyPool {
        &self.pool
    }

    pub fn replenish_key(&mut self, bits: usize) {
        let mut rng = stream_rng(self.seed, STREAM_KEY, self.next_seq + 1);
        self.pool.replenish((0..bits).map(|_| rng.random::<bool>()));
    }

    /// Processes the next frame.
    pub fn step(&mut self) -> Result<Step, StikeError> {
        match self.state.phase {
            Phase::Completed => return Ok(Step::Completed),
            Phase::Aborted => return Ok(Step::Aborted),
            _ => {}
        }
        if self.next_offset >= self.payload.len() {
            self.state.complete()?;
            return Ok(Step::Completed);
        }
        let end = (self.next_offset + self.config.frame_payload_bits).min(self.payload.len());
        let chunk = &self.payload[self.next_offset..end];
        if chunk.len() > self.pool.available() {
            return Ok(Step::Paused {
                needed: chunk.len(),
                available: self.pool.available(),
            });
        }
        let seq = self.next_seq;
        let (ciphertext, key) = otp_encrypt(chunk, &mut self.pool)?;

        let n_check = self.config.check_bits_for(chunk.len());
        let mut rng = stream_rng(self.seed, STREAM_CHECK, seq);
        let check_bits: Vec<bool> = (0..n_check).map(|_| rng.random()).collect();
        let mut positions = sample(&mut rng, chunk.len() + n_check, n_check).into_vec();
        positions.sort_unstable();
        let frame = Frame::new(seq, ciphertext, check_bits, positions, true)?;

        let eve = EveModel {
            intercept_fraction: self.config.eve_fraction,
        };
        let channel_seed = stream_rng(self.seed, STREAM_CHANNEL, seq).random();
        let (_received, qber_hat) =
            transmit_frame(&self.state, &frame, &self.link, eve, channel_seed)?;
        let state = std::mem::replace(&mut self.state, SessionState::new(0.0));
        self.state = qber_gate(state, qber_hat);
        self.next_seq += 1;

        if self.state.phase == Phase::Aborted {
            let record = FrameRecord {
                seq,
                qber_hat,
                accepted: false,
                distilled_bits: 0,
            };
            self.frames.push(record);
            return Ok(Step::Aborted);
        }

        // payload errors are corrected by FEC up to the configured residual
        let mut corrected = frame.payload.clone();
        if self.config.residual_ber > 0.0 {
            let mut rng = stream_rng(self.seed, STREAM_RESIDUAL, seq);
            for bit in corrected.iter_mut() {
                if rng.random_bool(self.config.residual_ber) {
                    *bit = !*bit;
                }
            }
        }
        self.delivered.extend(otp_decrypt(&corrected, &key));

        let gained = distill_key(&self.state, &frame);
        let mut rng = stream_rng(self.seed, STREAM_DISTILL, seq);
        self.pool
            .credit_distilled((0..gained).map(|_| rng.random::<bool>()));

        self.next_offset = end;
        let record = FrameRecord {
            seq,
            qber_hat,
            accepted: true,
            distilled_bits: gained,
        };
        self.frames.push(record.clone());
        Ok(Step::Frame(record))
    }

    /// Runs until the session completes, aborts or runs out of key.
    pub fn run(&mut self) -> Result<Step, StikeError> {
        loop {
            match self.step()? {
                Step::Frame(_) => continue,
                other => return Ok(other),
            }
        }
    }

    pub fn report(&self) -> SessionReport {
        let done = self.state.phase == Phase::Completed;
        SessionReport {
            phase: self.state.phase,
            frames: self.frames.clone(),
            pool: self.pool.ledger(),
            payload_sha256: done.then(|| bits_sha256(&self.delivered)),
            payload: done.then(|| self.delivered.clone()),
        }
    }
}

/// Authenticates, then encrypts, transmits, checks and distills frame by
/// frame until the payload is delivered or eavesdropping aborts the session.
///
/// Running out of key is not an abort: the parked session comes back inside
/// [`StikeError::KeyExhausted`] and can be resumed after
/// [`Session::replenish_key`].
pub fn run_session(
    payload: Vec<bool>,
    config: &SessionConfig,
    link: &ChannelParams,
    seed: u64,
) -> Result<SessionReport, StikeError> {
    let mut session = Session::new(payload, config.clone(), link.clone(), seed)?;
    match session.run()? {
        Step::Paused { needed, available } => Err(StikeError::KeyExhausted {
            needed,
            available,
            session: Some(Box::new(session)),
        }),
        _ => Ok(session.report()),
    }
}
